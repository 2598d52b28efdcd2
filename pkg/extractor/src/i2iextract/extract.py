"""Activation exporters.

Both exporters read a directory of grayscale PNGs, run a fixed-weight
network over them in a deterministic single-threaded mode, and write the
activation interchange files: a pooled (n, d) NPY with a JSON sidecar,
or a manifest plus one 4-D NPY per requested layer. Feature widths are
discovered from the instantiated network at run time, never assumed.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
import torch
import torch.nn.functional as F

from . import backbones
from .backbones import VGG_LAYER_INDICES, WeightsError
from .npyio import write_npy

POOLED_FORMAT = "pooled-activations-v1"
MULTILAYER_FORMAT = "multilayer-activations-v1"

MODELS = ("inception-pool", "vgg-multilayer")


class ExtractError(Exception):
    """Bad inputs: unreadable images, unknown layers, missing weights."""


@dataclass(frozen=True)
class ExtractSpec:
    model: str
    layers: tuple[str, ...] = ()
    seed: int = 0
    weights: str | None = None
    input_size: int | None = None
    batch_size: int = 4
    precision: str = "<f4"

    def __post_init__(self):
        if self.model not in MODELS:
            raise ExtractError(f"model must be one of {list(MODELS)}, got {self.model!r}")
        if self.model == "vgg-multilayer":
            if not self.layers:
                raise ExtractError("vgg-multilayer needs a non-empty layer list")
            unknown = [l for l in self.layers if l not in VGG_LAYER_INDICES]
            if unknown:
                raise ExtractError(
                    f"unknown layers {unknown}; choose from {sorted(VGG_LAYER_INDICES)}"
                )
        if self.input_size is not None and self.input_size < 32:
            raise ExtractError("input_size must be at least 32")
        if self.batch_size < 1:
            raise ExtractError("batch_size must be positive")
        if self.precision not in ("<f4", "<f8"):
            raise ExtractError(f"precision must be '<f4' or '<f8', got {self.precision!r}")

    @property
    def effective_input_size(self) -> int:
        if self.input_size is not None:
            return self.input_size
        return (
            backbones.INCEPTION_INPUT
            if self.model == "inception-pool"
            else backbones.VGG_INPUT
        )


def _read_grayscale(path: Path) -> np.ndarray:
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ExtractError(f"{path}: cannot read image")
    if raw.ndim != 2:
        raise ExtractError(f"{path}: expected a single-channel image, got shape {raw.shape}")
    if raw.dtype == np.uint8:
        return raw.astype(np.float32) / 255.0
    if raw.dtype == np.uint16:
        return raw.astype(np.float32) / 65535.0
    raise ExtractError(f"{path}: unsupported pixel type {raw.dtype}")


def _input_files(images_dir) -> list[Path]:
    images_dir = Path(images_dir)
    if not images_dir.is_dir():
        raise ExtractError(f"not a directory: {images_dir}")
    files = sorted(p for p in images_dir.iterdir() if p.suffix.lower() == ".png")
    if not files:
        raise ExtractError(f"no input images in {images_dir}")
    return files


def _to_network_input(arr: np.ndarray, size: int) -> torch.Tensor:
    """Grayscale [0,1] array -> normalised 3-channel tensor (1, 3, size, size)."""
    x = torch.from_numpy(arr)[None, None]
    x = F.interpolate(x, size=(size, size), mode="bilinear", align_corners=False)
    x = x.repeat(1, 3, 1, 1)
    mean = torch.tensor(backbones.IMAGENET_MEAN).view(1, 3, 1, 1)
    std = torch.tensor(backbones.IMAGENET_STD).view(1, 3, 1, 1)
    return (x - mean) / std


def _run_batched(model, files, spec, capture) -> None:
    size = spec.effective_input_size
    n_threads = torch.get_num_threads()
    torch.set_num_threads(1)  # fixed reduction order keeps reruns bitwise equal
    try:
        with torch.no_grad():
            for start in range(0, len(files), spec.batch_size):
                chunk = files[start:start + spec.batch_size]
                batch = torch.cat(
                    [_to_network_input(_read_grayscale(p), size) for p in chunk]
                )
                model(batch)
                capture()
    finally:
        torch.set_num_threads(n_threads)


def _common_manifest(spec, extractor_id, provenance, ids) -> dict:
    return {
        "extractor_id": extractor_id,
        "model": spec.model,
        "ids": ids,
        "input_size": spec.effective_input_size,
        "channels": "grayscale replicated to 3",
        "resize": {"mode": "bilinear", "align_corners": False},
        "normalize": {
            "mean": list(backbones.IMAGENET_MEAN),
            "std": list(backbones.IMAGENET_STD),
        },
        "weights": provenance,
        "precision": spec.precision,
    }


def _write_json(doc: dict, path: Path) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


def export_inception_pool(images_dir, out_path, spec: ExtractSpec) -> dict:
    if spec.model != "inception-pool":
        raise ExtractError(f"spec is for {spec.model!r}, expected 'inception-pool'")
    out_path = Path(out_path)
    if out_path.suffix != ".npy":
        raise ExtractError(f"output path must end in .npy, got {out_path.name}")
    files = _input_files(images_dir)
    try:
        model, provenance, extractor_id = backbones.build_inception(spec.weights, spec.seed)
    except WeightsError as exc:
        raise ExtractError(str(exc)) from exc

    pooled: list[np.ndarray] = []
    grabbed: list[torch.Tensor] = []
    hook = model.avgpool.register_forward_hook(
        lambda mod, inp, out: grabbed.append(out.detach())
    )

    def capture():
        feats = grabbed.pop()
        pooled.append(feats.flatten(1).numpy().astype(np.float32))

    try:
        _run_batched(model, files, spec, capture)
    finally:
        hook.remove()

    rows = np.concatenate(pooled, axis=0)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_npy(rows, out_path, spec.precision)
    manifest = _common_manifest(spec, extractor_id, provenance, [p.stem for p in files])
    manifest.update(
        format=POOLED_FORMAT,
        file=out_path.name,
        n=int(rows.shape[0]),
        d=int(rows.shape[1]),
    )
    _write_json(manifest, out_path.with_suffix(".json"))
    return manifest


def export_vgg_multilayer(images_dir, out_dir, spec: ExtractSpec) -> dict:
    if spec.model != "vgg-multilayer":
        raise ExtractError(f"spec is for {spec.model!r}, expected 'vgg-multilayer'")
    files = _input_files(images_dir)
    try:
        features, provenance, extractor_id = backbones.build_vgg_features(
            spec.weights, spec.seed
        )
    except WeightsError as exc:
        raise ExtractError(str(exc)) from exc

    taps: dict[str, torch.Tensor] = {}
    hooks = []
    for name in spec.layers:
        idx = VGG_LAYER_INDICES[name]
        hooks.append(
            features[idx].register_forward_hook(
                lambda mod, inp, out, name=name: taps.__setitem__(name, out.detach())
            )
        )

    collected: dict[str, list[np.ndarray]] = {name: [] for name in spec.layers}

    def capture():
        for name in spec.layers:
            collected[name].append(taps.pop(name).numpy().astype(np.float32))

    try:
        _run_batched(features, files, spec, capture)
    finally:
        for h in hooks:
            h.remove()

    maps = {name: np.concatenate(chunks, axis=0) for name, chunks in collected.items()}
    total_channels = sum(m.shape[1] for m in maps.values())
    weight = 1.0 / (2.0 * total_channels)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for name in spec.layers:
        m = maps[name]
        fname = f"{name}.npy"
        write_npy(m, out_dir / fname, spec.precision)
        entries.append(
            {
                "name": name,
                "file": fname,
                "channels": int(m.shape[1]),
                "height": int(m.shape[2]),
                "width": int(m.shape[3]),
                "alpha": [weight] * int(m.shape[1]),
                "beta": [weight] * int(m.shape[1]),
            }
        )
    manifest = _common_manifest(spec, extractor_id, provenance, [p.stem for p in files])
    manifest.update(format=MULTILAYER_FORMAT, layers=entries)
    _write_json(manifest, out_dir / "manifest.json")
    return manifest
