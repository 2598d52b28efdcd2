"""Grayscale image type, PNG I/O, and unit-range normalisation.

Images are held as double-precision rasters in [0, 1]; quantisation to
8/16-bit integers happens only when writing to disk. Acquisition metadata
(photometric interpretation, laterality) arrives through an optional JSON
sidecar next to the PNG, never through the pixel payload itself.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import cv2
import numpy as np


class ImageError(Exception):
    """Base class for image I/O and validation failures."""


class UnreadableImageError(ImageError):
    """File missing, not a decodable PNG, or otherwise unreadable."""


class MultiChannelImageError(ImageError):
    """Raster has more than one channel; only single-channel grayscale is supported."""


class SidecarError(ImageError):
    """Metadata sidecar exists but is not valid JSON or holds unknown values."""


class Photometric(Enum):
    MONOCHROME1 = "MONOCHROME1"
    MONOCHROME2 = "MONOCHROME2"
    UNKNOWN = "UNKNOWN"


class Laterality(Enum):
    LEFT = "L"
    RIGHT = "R"
    UNKNOWN = "UNKNOWN"


@dataclass(frozen=True)
class ImageMeta:
    photometric: Photometric = Photometric.UNKNOWN
    laterality: Laterality = Laterality.UNKNOWN
    source_id: str = ""


@dataclass(frozen=True)
class Image:
    """Immutable 2-D grayscale raster with intensities in [0, 1].

    ``pixels`` is a read-only float64 array of shape (height, width),
    row-major. All operations in this package return new instances.
    """

    pixels: np.ndarray
    meta: ImageMeta = field(default_factory=ImageMeta)

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.float64)
        if arr.ndim != 2:
            raise ImageError(f"expected a 2-D raster, got shape {arr.shape}")
        if arr.size == 0:
            raise ImageError("empty image")
        if not np.isfinite(arr).all():
            raise ImageError("image contains non-finite intensities")
        lo, hi = float(arr.min()), float(arr.max())
        if lo < 0.0 or hi > 1.0:
            raise ImageError(f"intensities outside [0, 1]: min={lo}, max={hi}")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def with_pixels(self, pixels: np.ndarray, meta: ImageMeta | None = None) -> "Image":
        return Image(pixels, self.meta if meta is None else meta)


def _parse_sidecar(path) -> ImageMeta:
    try:
        raw = Path(path).read_text()
    except OSError as exc:
        raise SidecarError(f"cannot read sidecar {path}: {exc}") from exc
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise SidecarError(f"sidecar {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SidecarError(f"sidecar {path} must hold a JSON object")

    photometric = Photometric.UNKNOWN
    if "photometric" in doc:
        try:
            photometric = Photometric(doc["photometric"])
        except (ValueError, TypeError):
            raise SidecarError(
                f"sidecar {path}: photometric must be MONOCHROME1 or MONOCHROME2, "
                f"got {doc['photometric']!r}"
            ) from None
        if photometric is Photometric.UNKNOWN:
            raise SidecarError(f"sidecar {path}: photometric may not be UNKNOWN")

    laterality = Laterality.UNKNOWN
    if "laterality" in doc:
        try:
            laterality = Laterality(doc["laterality"])
        except (ValueError, TypeError):
            raise SidecarError(
                f"sidecar {path}: laterality must be 'L' or 'R', got {doc['laterality']!r}"
            ) from None
        if laterality is Laterality.UNKNOWN:
            raise SidecarError(f"sidecar {path}: laterality may not be UNKNOWN")

    return ImageMeta(photometric=photometric, laterality=laterality)


def read_image(path, sidecar=None) -> Image:
    """Read a single-channel 8- or 16-bit PNG, scaling intensities into [0, 1].

    The bit-depth maximum (255 or 65535) maps to 1.0. Metadata comes from the
    optional JSON sidecar ({"photometric": ..., "laterality": ...}); absent
    keys stay UNKNOWN. The image's source_id is the file stem.
    """
    path = Path(path)
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise UnreadableImageError(f"cannot read image file: {path}")
    if raw.ndim != 2:
        raise MultiChannelImageError(
            f"{path}: expected single-channel grayscale, got shape {raw.shape}"
        )
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise UnreadableImageError(f"{path}: unsupported pixel type {raw.dtype}")

    meta = _parse_sidecar(sidecar) if sidecar is not None else ImageMeta()
    meta = ImageMeta(meta.photometric, meta.laterality, source_id=path.stem)
    return Image(raw.astype(np.float64) / scale, meta)


def write_image(img: Image, path, bit_depth: int = 16) -> None:
    """Quantise to the requested bit depth and write a grayscale PNG.

    Round-tripping through read_image reproduces each intensity within
    one quantisation step, 1 / (2**bit_depth - 1).
    """
    if bit_depth == 8:
        maxval, dtype = 255, np.uint8
    elif bit_depth == 16:
        maxval, dtype = 65535, np.uint16
    else:
        raise ValueError(f"bit_depth must be 8 or 16, got {bit_depth}")
    quant = np.rint(img.pixels * maxval).astype(dtype)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # cv2.imwrite returns False instead of raising on unwritable paths
    tmp = path.with_name(path.name + ".tmp.png")
    ok = cv2.imwrite(str(tmp), quant)
    if not ok:
        raise UnreadableImageError(f"cannot write image file: {path}")
    os.replace(tmp, path)


def write_sidecar(meta: ImageMeta, path) -> None:
    """Write the JSON sidecar for an image's metadata (known fields only)."""
    doc = {}
    if meta.photometric is not Photometric.UNKNOWN:
        doc["photometric"] = meta.photometric.value
    if meta.laterality is not Laterality.UNKNOWN:
        doc["laterality"] = meta.laterality.value
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def normalize_unit(img: Image) -> Image:
    """Affinely rescale intensities so min maps to 0 and max to 1.

    Constant images map to all zeros rather than dividing by zero, so a
    degenerate input cannot poison a batch run. Idempotent: a second
    application is an exact identity.
    """
    arr = img.pixels
    lo = float(arr.min())
    hi = float(arr.max())
    if hi == lo:
        return img.with_pixels(np.zeros_like(arr))
    return img.with_pixels((arr - lo) / (hi - lo))
