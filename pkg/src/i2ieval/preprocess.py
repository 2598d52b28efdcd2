"""Mammogram-to-patch preprocessing pipeline.

Fixed stage order: Otsu segmentation -> photometric inversion -> laterality
flip -> per-image unit normalisation -> zero-padding to a square canvas ->
sliding-window patch extraction with a non-zero coverage filter -> per-patch
histogram equalisation (ending in unit renormalisation).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imagecore import Image, ImageError, ImageMeta, Laterality, Photometric, write_image

HIST_BINS = 256
PAD_ANCHOR = "top-left"


@dataclass(frozen=True)
class PipelineConfig:
    patch_size: int = 256
    step: int = 246
    nonzero_frac: float = 0.99
    canvas: int = 2224

    def __post_init__(self):
        if not (0 < self.step <= self.patch_size <= self.canvas):
            raise ValueError(
                f"need 0 < step <= patch_size <= canvas, got "
                f"step={self.step}, patch_size={self.patch_size}, canvas={self.canvas}"
            )
        if not (0.0 < self.nonzero_frac <= 1.0):
            raise ValueError(f"nonzero_frac must be in (0, 1], got {self.nonzero_frac}")


@dataclass(frozen=True)
class Patch:
    """A patch_size x patch_size crop with its origin in the padded source."""

    data: np.ndarray
    origin: tuple[int, int]  # (row, col)
    source_id: str = ""

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64).copy()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)


def _histogram256(values: np.ndarray) -> np.ndarray:
    counts, _ = np.histogram(values, bins=HIST_BINS, range=(0.0, 1.0))
    return counts


def otsu_threshold(img: Image) -> tuple[float, np.ndarray]:
    """Otsu's threshold over a 256-bin histogram of [0, 1].

    Returns (threshold, mask) where mask marks pixels strictly above the
    threshold. The threshold is the center of the selected histogram bin,
    chosen to maximise between-class variance; ties resolve to the floor of
    the mean of the maximising bin indices. A constant image has no valid
    split: its own value is returned and the mask is empty.
    """
    values = img.pixels
    counts = _histogram256(values).astype(np.float64)
    total = counts.sum()
    centers = (np.arange(HIST_BINS) + 0.5) / HIST_BINS

    # class 0 = bins <= t, class 1 = bins > t; t ranges over 0..254
    w0 = np.cumsum(counts)[:-1]
    w1 = total - w0
    mass0 = np.cumsum(counts * centers)[:-1]
    mass1 = (counts * centers).sum() - mass0

    valid = (w0 > 0) & (w1 > 0)
    if not valid.any():
        value = float(values.flat[0])
        return value, np.zeros_like(values, dtype=bool)

    mu0 = np.where(valid, mass0 / np.where(w0 > 0, w0, 1.0), 0.0)
    mu1 = np.where(valid, mass1 / np.where(w1 > 0, w1, 1.0), 0.0)
    variance = np.where(valid, w0 * w1 * (mu0 - mu1) ** 2, -np.inf)

    best = variance.max()
    ties = np.nonzero(variance == best)[0]
    t = int(np.floor(ties.mean()))
    threshold = float(centers[t])
    return threshold, values > threshold


def apply_mask(img: Image, mask: np.ndarray) -> Image:
    """Zero all pixels outside the mask (background suppression)."""
    return img.with_pixels(np.where(mask, img.pixels, 0.0))


def invert_monochrome1(img: Image) -> Image:
    """Complement intensities of MONOCHROME1 images; others pass through.

    The result is re-tagged MONOCHROME2 so a second application is a no-op.
    """
    if img.meta.photometric is not Photometric.MONOCHROME1:
        return img
    meta = ImageMeta(Photometric.MONOCHROME2, img.meta.laterality, img.meta.source_id)
    return img.with_pixels(1.0 - img.pixels, meta)


def flip_right_laterality(img: Image) -> Image:
    """Mirror right-laterality images horizontally, re-tagging them left."""
    if img.meta.laterality is not Laterality.RIGHT:
        return img
    meta = ImageMeta(img.meta.photometric, Laterality.LEFT, img.meta.source_id)
    return img.with_pixels(img.pixels[:, ::-1], meta)


def pad_to_canvas(img: Image, cfg: PipelineConfig) -> Image:
    """Zero-pad to canvas x canvas with the original content at top-left."""
    if img.height > cfg.canvas or img.width > cfg.canvas:
        raise ImageError(
            f"image {img.height}x{img.width} exceeds canvas {cfg.canvas}x{cfg.canvas}"
        )
    out = np.zeros((cfg.canvas, cfg.canvas), dtype=np.float64)
    out[: img.height, : img.width] = img.pixels
    return img.with_pixels(out)


def extract_patches(img: Image, cfg: PipelineConfig) -> list[Patch]:
    """Slide a patch_size window on the step lattice and keep covered patches.

    A candidate survives iff at least nonzero_frac of its pixels are strictly
    positive. Origins are (row, col) in the padded image.
    """
    if img.height != cfg.canvas or img.width != cfg.canvas:
        raise ImageError(
            f"expected a {cfg.canvas}x{cfg.canvas} padded image, "
            f"got {img.height}x{img.width}"
        )
    need = cfg.nonzero_frac * cfg.patch_size * cfg.patch_size
    patches = []
    for row in range(0, cfg.canvas - cfg.patch_size + 1, cfg.step):
        for col in range(0, cfg.canvas - cfg.patch_size + 1, cfg.step):
            window = img.pixels[row : row + cfg.patch_size, col : col + cfg.patch_size]
            if np.count_nonzero(window > 0.0) >= need:
                patches.append(Patch(window, (row, col), img.meta.source_id))
    return patches


def hist_equalize(p: Patch) -> Patch:
    """Equalise a patch against its own 256-bin histogram, then rescale to [0, 1].

    Constant patches are returned unchanged; non-constant outputs span
    exactly [0, 1].
    """
    values = p.data
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return p
    counts = _histogram256(values)
    cdf = np.cumsum(counts).astype(np.float64) / values.size
    bins = np.minimum((values * HIST_BINS).astype(np.intp), HIST_BINS - 1)
    mapped = cdf[bins]
    mlo, mhi = float(mapped.min()), float(mapped.max())
    if mhi == mlo:
        # value spread hides inside a single bin; equalisation is blind to it,
        # so fall back to a plain affine rescale to keep the [0, 1] span
        mapped, mlo, mhi = values, lo, hi
    return Patch((mapped - mlo) / (mhi - mlo), p.origin, p.source_id)


def preprocess_image(img: Image, cfg: PipelineConfig) -> list[Patch]:
    """Run the full pipeline for one image and return its equalised patches."""
    from .imagecore import normalize_unit

    _, mask = otsu_threshold(img)
    img = apply_mask(img, mask)
    img = invert_monochrome1(img)
    img = flip_right_laterality(img)
    img = normalize_unit(img)
    img = pad_to_canvas(img, cfg)
    return [hist_equalize(p) for p in extract_patches(img, cfg)]


def patch_filename(source_id: str, origin: tuple[int, int]) -> str:
    return f"{source_id}_r{origin[0]}_c{origin[1]}.png"


def write_patchset(
    patches_by_image: dict[str, list[Patch]],
    out_dir,
    cfg: PipelineConfig,
    bit_depth: int = 16,
) -> dict:
    """Write patches as PNGs plus a manifest describing origins and config.

    Returns the manifest document. Files are named
    <source_id>_r<row>_c<col>.png inside out_dir.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images = []
    for source_id in sorted(patches_by_image):
        entries = []
        for p in patches_by_image[source_id]:
            name = patch_filename(source_id, p.origin)
            write_image(Image(p.data), out_dir / name, bit_depth=bit_depth)
            entries.append({"row": p.origin[0], "col": p.origin[1], "file": name})
        images.append({"source_id": source_id, "patches": entries})
    manifest = {
        "config": {
            "patch_size": cfg.patch_size,
            "step": cfg.step,
            "nonzero_frac": cfg.nonzero_frac,
            "canvas": cfg.canvas,
            "pad_anchor": PAD_ANCHOR,
            "hist_bins": HIST_BINS,
            "bit_depth": bit_depth,
        },
        "images": images,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )
    return manifest
