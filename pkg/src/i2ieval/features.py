"""Activation handling: NPY interchange, a toy extractor, and DISTS.

Feature extraction by a real pretrained network lives outside this package;
everything here speaks through files. Pooled activations travel as a single
NPY v1.0 array of shape (n, d). Multi-layer activations travel as a
directory: a manifest.json naming the layers plus one NPY per layer of
shape (n, channels, height, width) with per-channel DISTS weights.
"""

from __future__ import annotations

import ast
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imagecore import Image

NPY_MAGIC = b"\x93NUMPY"

DISTS_C1 = 1e-6
DISTS_C2 = 1e-6
MULTILAYER_FORMAT = "multilayer-activations-v1"


class ActivationFileError(Exception):
    """Raised for malformed or unsupported activation files."""


@dataclass(frozen=True)
class ActivationSet:
    """n feature vectors of width d, tagged with the extractor that made them."""

    rows: np.ndarray
    extractor_id: str = "unknown"

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2:
            raise ValueError(f"rows must be 2-D (n, d), got shape {rows.shape}")
        if rows.shape[0] < 1 or rows.shape[1] < 1:
            raise ValueError(f"rows must be non-empty, got shape {rows.shape}")
        if not np.isfinite(rows).all():
            raise ValueError("activation rows must be finite")
        rows = rows.copy()
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]


def _parse_npy_header(blob: bytes, path) -> tuple[dict, int]:
    if len(blob) < 10:
        raise ActivationFileError(f"{path}: file too short for an NPY header")
    if blob[:6] != NPY_MAGIC:
        raise ActivationFileError(f"{path}: bad magic, not an NPY file")
    major, minor = blob[6], blob[7]
    if (major, minor) != (1, 0):
        raise ActivationFileError(f"{path}: unsupported NPY version {major}.{minor}")
    (header_len,) = struct.unpack("<H", blob[8:10])
    if len(blob) < 10 + header_len:
        raise ActivationFileError(f"{path}: header truncated")
    try:
        header = ast.literal_eval(blob[10 : 10 + header_len].decode("latin1"))
    except (ValueError, SyntaxError) as exc:
        raise ActivationFileError(f"{path}: unparseable header: {exc}") from exc
    if not isinstance(header, dict) or not {"descr", "fortran_order", "shape"} <= set(header):
        raise ActivationFileError(f"{path}: header missing required keys")
    return header, 10 + header_len


def read_npy(path) -> np.ndarray:
    """Read an NPY v1.0 file of little-endian float32/float64 data.

    Fortran-ordered payloads are reordered to row-major. The result is
    always float64 and C-contiguous.
    """
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise ActivationFileError(f"{path}: {exc}") from exc
    header, offset = _parse_npy_header(blob, path)

    descr = header["descr"]
    if descr not in ("<f4", "<f8"):
        raise ActivationFileError(
            f"{path}: unsupported dtype {descr!r}, need little-endian float32/float64"
        )
    shape = header["shape"]
    if not (
        isinstance(shape, tuple)
        and all(isinstance(s, int) and s >= 0 for s in shape)
    ):
        raise ActivationFileError(f"{path}: bad shape {shape!r}")

    itemsize = 4 if descr == "<f4" else 8
    expected = itemsize * int(np.prod(shape, dtype=np.int64)) if shape else itemsize
    payload = blob[offset:]
    if len(payload) != expected:
        raise ActivationFileError(
            f"{path}: payload has {len(payload)} bytes, expected {expected}"
        )
    flat = np.frombuffer(payload, dtype=np.dtype(descr))
    order = "F" if header["fortran_order"] else "C"
    arr = flat.reshape(shape, order=order)
    return np.ascontiguousarray(arr, dtype=np.float64)


def write_npy(arr: np.ndarray, path, precision: str = "<f8") -> None:
    """Write a C-ordered NPY v1.0 file, atomically."""
    if precision not in ("<f4", "<f8"):
        raise ValueError(f"precision must be '<f4' or '<f8', got {precision!r}")
    arr = np.ascontiguousarray(arr, dtype=np.dtype(precision))
    header = f"{{'descr': '{precision}', 'fortran_order': False, 'shape': {arr.shape}, }}"
    # pad so the payload starts on a 64-byte boundary, as numpy does
    unpadded = len(NPY_MAGIC) + 2 + 2 + len(header) + 1
    pad = (64 - unpadded % 64) % 64
    header = header + " " * pad + "\n"
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(NPY_MAGIC)
        fh.write(bytes([1, 0]))
        fh.write(struct.pack("<H", len(header)))
        fh.write(header.encode("latin1"))
        fh.write(arr.tobytes(order="C"))
    os.replace(tmp, path)


def load_activations(path, extractor_id: str | None = None) -> ActivationSet:
    """Load pooled activations from an NPY file of shape (n, d)."""
    arr = read_npy(path)
    if arr.ndim != 2:
        raise ActivationFileError(
            f"{path}: pooled activations must be 2-D (n, d), got shape {arr.shape}"
        )
    if not np.isfinite(arr).all():
        raise ActivationFileError(f"{path}: activations contain non-finite values")
    return ActivationSet(arr, extractor_id or Path(path).stem)


def save_activations(acts: ActivationSet, path, precision: str = "<f8") -> None:
    write_npy(acts.rows, path, precision)


TOY_POOL = 16


def toy_extract(images: list[Image], seed: int, d: int = 64) -> ActivationSet:
    """Deterministic stand-in feature extractor.

    Each image is reduced to a 16x16 grid of block means, flattened, pushed
    through a fixed seed-derived random projection, and rectified. The
    rectifier leaves a visible fraction of exact zeros in the output, like
    real pooled network activations.
    """
    if not images:
        raise ValueError("toy_extract needs at least one image")
    if d < 1:
        raise ValueError("d must be >= 1")
    shapes = {img.pixels.shape for img in images}
    if len(shapes) > 1:
        raise ValueError(f"images must share one size, got {sorted(shapes)}")
    if min(shapes.pop()) < TOY_POOL:
        raise ValueError(f"images must be at least {TOY_POOL}x{TOY_POOL}")

    projection = np.random.default_rng(seed).standard_normal((d, TOY_POOL * TOY_POOL))
    rows = np.empty((len(images), d), dtype=np.float64)
    for i, img in enumerate(images):
        blocks = [
            np.array([cell.mean() for cell in np.array_split(band, TOY_POOL, axis=1)])
            for band in np.array_split(img.pixels, TOY_POOL, axis=0)
        ]
        pooled = np.asarray(blocks).reshape(-1)
        rows[i] = np.maximum(projection @ pooled, 0.0)
    return ActivationSet(rows, extractor_id=f"toy-s{seed}-d{d}")


@dataclass(frozen=True)
class ActivationLayer:
    """One convolutional layer's maps for n images plus its DISTS weights."""

    name: str
    maps: np.ndarray  # (n, channels, height, width)
    alpha: np.ndarray  # per-channel texture weights
    beta: np.ndarray  # per-channel structure weights

    def __post_init__(self):
        maps = np.asarray(self.maps, dtype=np.float64)
        if maps.ndim != 4:
            raise ValueError(f"layer maps must be 4-D, got shape {maps.shape}")
        alpha = np.asarray(self.alpha, dtype=np.float64)
        beta = np.asarray(self.beta, dtype=np.float64)
        if alpha.shape != (maps.shape[1],) or beta.shape != (maps.shape[1],):
            raise ValueError("alpha and beta must hold one weight per channel")
        if (alpha < 0).any() or (beta < 0).any():
            raise ValueError("weights must be non-negative")
        if not np.isfinite(maps).all():
            raise ValueError("layer maps must be finite")
        maps = maps.copy()
        maps.setflags(write=False)
        alpha = alpha.copy()
        alpha.setflags(write=False)
        beta = beta.copy()
        beta.setflags(write=False)
        object.__setattr__(self, "maps", maps)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    @property
    def n(self) -> int:
        return self.maps.shape[0]

    @property
    def channels(self) -> int:
        return self.maps.shape[1]


@dataclass(frozen=True)
class MultiLayerActivations:
    layers: tuple[ActivationLayer, ...]
    ids: tuple[str, ...]
    extractor_id: str = "unknown"

    def __post_init__(self):
        layers = tuple(self.layers)
        ids = tuple(self.ids)
        if not layers:
            raise ValueError("at least one layer is required")
        counts = {layer.n for layer in layers}
        if len(counts) > 1:
            raise ValueError(f"layers disagree on image count: {sorted(counts)}")
        if len(ids) != counts.pop():
            raise ValueError("ids must name every image")
        total = sum(float(l.alpha.sum() + l.beta.sum()) for l in layers)
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"DISTS weights must sum to 1, got {total}")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "ids", ids)

    @property
    def n(self) -> int:
        return self.layers[0].n

    def select(self, index: int) -> "MultiLayerActivations":
        """Single-image view, for pairwise scoring."""
        picked = tuple(
            ActivationLayer(l.name, l.maps[index : index + 1], l.alpha, l.beta)
            for l in self.layers
        )
        return MultiLayerActivations(picked, (self.ids[index],), self.extractor_id)


def save_multilayer(mla: MultiLayerActivations, out_dir, precision: str = "<f8") -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for layer in mla.layers:
        fname = f"{layer.name}.npy"
        write_npy(layer.maps, out_dir / fname, precision)
        entries.append(
            {
                "name": layer.name,
                "file": fname,
                "channels": layer.channels,
                "height": int(layer.maps.shape[2]),
                "width": int(layer.maps.shape[3]),
                "alpha": [float(a) for a in layer.alpha],
                "beta": [float(b) for b in layer.beta],
            }
        )
    manifest = {
        "format": MULTILAYER_FORMAT,
        "extractor_id": mla.extractor_id,
        "ids": list(mla.ids),
        "layers": entries,
    }
    tmp = out_dir / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, out_dir / "manifest.json")


def load_multilayer(in_dir) -> MultiLayerActivations:
    in_dir = Path(in_dir)
    manifest_path = in_dir / "manifest.json"
    try:
        manifest = json.loads(manifest_path.read_text())
    except OSError as exc:
        raise ActivationFileError(f"{manifest_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ActivationFileError(f"{manifest_path}: invalid JSON: {exc}") from exc
    if manifest.get("format") != MULTILAYER_FORMAT:
        raise ActivationFileError(
            f"{manifest_path}: expected format {MULTILAYER_FORMAT!r}, "
            f"got {manifest.get('format')!r}"
        )
    layers = []
    for entry in manifest["layers"]:
        maps = read_npy(in_dir / entry["file"])
        if maps.ndim != 4:
            raise ActivationFileError(
                f"{entry['file']}: layer maps must be 4-D, got shape {maps.shape}"
            )
        declared = (entry["channels"], entry["height"], entry["width"])
        if maps.shape[1:] != declared:
            raise ActivationFileError(
                f"{entry['file']}: shape {maps.shape[1:]} does not match "
                f"manifest {declared}"
            )
        try:
            layers.append(
                ActivationLayer(entry["name"], maps, entry["alpha"], entry["beta"])
            )
        except ValueError as exc:
            raise ActivationFileError(f"{entry['file']}: {exc}") from exc
    try:
        return MultiLayerActivations(
            tuple(layers), tuple(manifest["ids"]), manifest.get("extractor_id", "unknown")
        )
    except ValueError as exc:
        raise ActivationFileError(f"{manifest_path}: {exc}") from exc


def _layer_weights_match(x: ActivationLayer, y: ActivationLayer) -> bool:
    return (
        x.name == y.name
        and x.maps.shape[1:] == y.maps.shape[1:]
        and np.array_equal(x.alpha, y.alpha)
        and np.array_equal(x.beta, y.beta)
    )


def dists(x: MultiLayerActivations, y: MultiLayerActivations) -> float:
    """Weighted texture/structure distance between two single-image stacks.

    Per channel, texture compares spatial means and structure compares the
    spatial covariance against both variances; the weighted similarity sum
    is subtracted from 1 and clamped into [0, 1].
    """
    if x.n != 1 or y.n != 1:
        raise ValueError("dists compares exactly one image per side; use select()")
    if len(x.layers) != len(y.layers):
        raise ValueError("layer count mismatch")
    total = 0.0
    for lx, ly in zip(x.layers, y.layers):
        if not _layer_weights_match(lx, ly):
            raise ValueError(f"layer {lx.name!r} does not match {ly.name!r}")
        mx = lx.maps[0].reshape(lx.channels, -1)
        my = ly.maps[0].reshape(ly.channels, -1)
        mu_x = mx.mean(axis=1)
        mu_y = my.mean(axis=1)
        var_x = (mx * mx).mean(axis=1) - mu_x * mu_x
        var_y = (my * my).mean(axis=1) - mu_y * mu_y
        cov_xy = (mx * my).mean(axis=1) - mu_x * mu_y
        texture = (2.0 * mu_x * mu_y + DISTS_C1) / (mu_x**2 + mu_y**2 + DISTS_C1)
        structure = (2.0 * cov_xy + DISTS_C2) / (var_x + var_y + DISTS_C2)
        total += float(lx.alpha @ texture + lx.beta @ structure)
    return float(min(max(1.0 - total, 0.0), 1.0))


def dists_batch(x: MultiLayerActivations, y: MultiLayerActivations) -> list[float]:
    """dists for each aligned image pair of two equally sized stacks."""
    if x.n != y.n:
        raise ValueError(f"image counts differ: {x.n} vs {y.n}")
    return [dists(x.select(i), y.select(i)) for i in range(x.n)]
