"""Cross-metric analysis: rank correlation, reports, distortions, and
integer-shift registration.

MetricReport is the tabular interchange between evaluation runs and the
correlation/scatter tooling; it serializes to JSON and CSV with infinite
PSNR written as the string "inf". Registration is deliberately integer-only
so it never resamples: a shifted-and-registered image is bitwise equal to
the original on the overlap, which keeps blur out of the metric comparison.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.stats import rankdata

from .imagecore import Image, ImageError

DEFAULT_MAX_SHIFT = 10
REPORT_FORMAT = "metric-report-v1"


@dataclass(frozen=True)
class Shift:
    dx: int
    dy: int

    def __post_init__(self):
        if not (isinstance(self.dx, int) and isinstance(self.dy, int)):
            raise ValueError("shift components must be integers")


@dataclass(frozen=True)
class ReportRow:
    pair_id: str
    values: dict

    def __post_init__(self):
        for name, v in self.values.items():
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ValueError(f"{self.pair_id}: metric {name!r} is not numeric")
            if math.isnan(v):
                raise ValueError(f"{self.pair_id}: metric {name!r} is NaN")
            if math.isinf(v) and "psnr" not in name:
                raise ValueError(f"{self.pair_id}: only psnr may be infinite")
        object.__setattr__(self, "values", dict(self.values))


@dataclass(frozen=True)
class MetricReport:
    rows: tuple
    params: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        rows = tuple(sorted(self.rows, key=lambda r: r.pair_id))
        if not rows:
            raise ValueError("report has no rows")
        ids = [r.pair_id for r in rows]
        if len(set(ids)) != len(ids):
            raise ValueError("pair_id values must be unique")
        names = set(rows[0].values)
        for r in rows:
            if set(r.values) != names:
                raise ValueError(f"{r.pair_id}: metric names differ between rows")
        object.__setattr__(self, "rows", rows)

    @property
    def metric_names(self) -> tuple[str, ...]:
        return tuple(sorted(self.rows[0].values))

    def column(self, name: str) -> np.ndarray:
        if name not in self.rows[0].values:
            raise KeyError(f"unknown metric {name!r}")
        return np.array([r.values[name] for r in self.rows], dtype=np.float64)


def _encode_value(v: float):
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def _decode_value(v) -> float:
    if v == "inf":
        return float("inf")
    if v == "-inf":
        return float("-inf")
    return float(v)


def report_to_json(r: MetricReport) -> str:
    doc = {
        "format": REPORT_FORMAT,
        "params": r.params,
        "provenance": r.provenance,
        "rows": [
            {"pair_id": row.pair_id,
             "metrics": {k: _encode_value(v) for k, v in sorted(row.values.items())}}
            for row in r.rows
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def load_report_json(path) -> MetricReport:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ValueError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON: {exc}") from exc
    if doc.get("format") != REPORT_FORMAT:
        raise ValueError(f"{path}: expected format {REPORT_FORMAT!r}")
    rows = tuple(
        ReportRow(entry["pair_id"], {k: _decode_value(v) for k, v in entry["metrics"].items()})
        for entry in doc["rows"]
    )
    return MetricReport(rows, doc.get("params", {}), doc.get("provenance", {}))


def _csv_cell(v: float) -> str:
    encoded = _encode_value(v)
    return encoded if isinstance(encoded, str) else repr(encoded)


def report_to_csv(r: MetricReport) -> str:
    names = r.metric_names
    lines = ["pair_id," + ",".join(names)]
    for row in r.rows:
        lines.append(row.pair_id + "," + ",".join(_csv_cell(row.values[n]) for n in names))
    return "\n".join(lines) + "\n"


def write_text_atomic(text: str, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def spearman(xs, ys) -> float:
    """Rank correlation: average ranks for ties, then Pearson on the ranks."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1 or x.size != y.size:
        raise ValueError(f"need two equal-length vectors, got {x.shape} and {y.shape}")
    if x.size < 3:
        raise ValueError("need at least 3 observations")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValueError("inputs must be finite")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise ValueError("correlation undefined for constant input")
    rx = rankdata(x, method="average")
    ry = rankdata(y, method="average")
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    return float((rx @ ry) / np.sqrt((rx @ rx) * (ry @ ry)))


@dataclass(frozen=True)
class CorrelationMatrix:
    names: tuple[str, ...]
    matrix: np.ndarray
    dropped: dict  # "m1,m2" -> rows excluded for non-finite values

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=np.float64)
        if matrix.shape != (len(self.names), len(self.names)):
            raise ValueError("matrix shape does not match names")
        matrix = matrix.copy()
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "names", tuple(self.names))


def correlation_matrix(r: MetricReport) -> CorrelationMatrix:
    """Pairwise Spearman over report rows.

    Rows with a non-finite value are excluded per metric pair (counted in
    .dropped); the diagonal is exactly 1 without any computation.
    """
    names = r.metric_names
    if len(names) < 2:
        raise ValueError("need at least 2 metrics")
    if len(r.rows) < 3:
        raise ValueError("need at least 3 rows")
    columns = {n: r.column(n) for n in names}
    k = len(names)
    matrix = np.eye(k)
    dropped = {}
    for i in range(k):
        for j in range(i + 1, k):
            xi, xj = columns[names[i]], columns[names[j]]
            keep = np.isfinite(xi) & np.isfinite(xj)
            excluded = int(np.size(keep) - keep.sum())
            if excluded:
                dropped[f"{names[i]},{names[j]}"] = excluded
            if keep.sum() < 3:
                raise ValueError(
                    f"fewer than 3 finite rows left for {names[i]} vs {names[j]}"
                )
            rho = spearman(xi[keep], xj[keep])
            matrix[i, j] = rho
            matrix[j, i] = rho
    return CorrelationMatrix(names, matrix, dropped)


def matrix_to_csv(c: CorrelationMatrix) -> str:
    lines = [f"# dropped_nonfinite {pair}: {n}" for pair, n in sorted(c.dropped.items())]
    lines.append("metric," + ",".join(c.names))
    for i, name in enumerate(c.names):
        lines.append(name + "," + ",".join(repr(float(v)) for v in c.matrix[i]))
    return "\n".join(lines) + "\n"


def matrix_to_json(c: CorrelationMatrix) -> str:
    doc = {
        "format": "correlation-matrix-v1",
        "names": list(c.names),
        "matrix": [[float(v) for v in row] for row in c.matrix],
        "dropped_nonfinite": dict(sorted(c.dropped.items())),
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def scatter_export(r: MetricReport, m1: str, m2: str, path) -> None:
    """CSV of (pair_id, m1, m2) for external plotting."""
    for name in (m1, m2):
        if name not in r.metric_names:
            raise KeyError(f"unknown metric {name!r}")
    lines = []
    c1, c2 = r.column(m1), r.column(m2)
    if not (np.isfinite(c1).all() and np.isfinite(c2).all()):
        lines.append("# contains non-finite values")
    lines.append(f"pair_id,{m1},{m2}")
    for row in r.rows:
        lines.append(
            f"{row.pair_id},{_csv_cell(row.values[m1])},{_csv_cell(row.values[m2])}"
        )
    write_text_atomic("\n".join(lines) + "\n", path)


class DistortKind(Enum):
    SHIFT = "shift"
    BLUR = "blur"
    CONTRAST = "contrast"


def _translate(values: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(values)
    h, w = values.shape
    if abs(dy) >= h or abs(dx) >= w:
        return out
    out[max(dy, 0) : h + min(dy, 0), max(dx, 0) : w + min(dx, 0)] = values[
        max(-dy, 0) : h + min(-dy, 0), max(-dx, 0) : w + min(-dx, 0)
    ]
    return out


def distort(img: Image, kind: DistortKind, *, dx: int = 0, dy: int = 0,
            sigma: float = 1.0, gamma: float = 1.0) -> Image:
    """Apply one synthetic distortion: integer shift, blur, or gamma."""
    kind = DistortKind(kind)
    values = img.pixels
    if kind is DistortKind.SHIFT:
        if abs(dx) >= img.width or abs(dy) >= img.height:
            raise ValueError(f"shift ({dx}, {dy}) moves everything out of frame")
        return img.with_pixels(_translate(values, dy, dx))
    if kind is DistortKind.BLUR:
        if sigma <= 0:
            raise ValueError("blur sigma must be positive")
        return img.with_pixels(np.clip(gaussian_filter(values, sigma, mode="reflect"), 0.0, 1.0))
    if gamma <= 0:
        raise ValueError("contrast gamma must be positive")
    curved = values**gamma
    lo, hi = curved.min(), curved.max()
    if hi == lo:
        return img.with_pixels(np.zeros_like(curved))
    return img.with_pixels((curved - lo) / (hi - lo))


def register_translation(
    moving: Image, fixed: Image, max_shift: int = DEFAULT_MAX_SHIFT
) -> tuple[Shift, Image]:
    """Find the integer shift aligning moving to fixed by phase correlation.

    The cross-power spectrum is normalised and inverted; the peak is sought
    only among shifts with |dx|, |dy| <= max_shift. Ties break toward the
    smallest Euclidean shift, then lexicographically on (dx, dy). The
    registered image is moving translated by the winning shift with zero
    fill, so no interpolation or blur is introduced.
    """
    a, b = moving.pixels, fixed.pixels
    if a.shape != b.shape:
        raise ImageError(f"shape mismatch: {a.shape} vs {b.shape}")
    if max_shift < 1:
        raise ValueError("max_shift must be >= 1")
    h, w = a.shape
    if 2 * max_shift + 1 > min(h, w):
        raise ValueError(f"max_shift {max_shift} too large for a {h}x{w} image")
    if np.all(a == a.flat[0]) or np.all(b == b.flat[0]):
        raise ImageError("constant image cannot be registered")

    # a raised-cosine window removes the frame-edge discontinuity of the
    # non-circular shift, so after whitening the spectrum carries only true
    # displacement phase instead of border artifacts
    window = np.hanning(h)[:, None] * np.hanning(w)[None, :]
    fa = np.fft.fft2((a - a.mean()) * window)
    fb = np.fft.fft2((b - b.mean()) * window)
    spectrum = fb * np.conj(fa)
    magnitude = np.abs(spectrum)
    floor = magnitude.max() * 1e-15
    normalised = np.where(magnitude > floor, spectrum / np.maximum(magnitude, floor), 0.0)
    surface = np.fft.ifft2(normalised).real

    best = None
    for dy in range(-max_shift, max_shift + 1):
        for dx in range(-max_shift, max_shift + 1):
            score = surface[dy % h, dx % w]
            key = (-score, dx * dx + dy * dy, dx, dy)
            if best is None or key < best:
                best = key
                winner = Shift(dx=dx, dy=dy)
    registered = moving.with_pixels(_translate(a, winner.dy, winner.dx))
    return winner, registered


def crop_border(img: Image, margin: int) -> Image:
    """Drop margin pixels from every side."""
    if margin < 0:
        raise ValueError("margin must be >= 0")
    if margin == 0:
        return img
    if img.height <= 2 * margin or img.width <= 2 * margin:
        raise ImageError(
            f"image {img.height}x{img.width} too small for margin {margin}"
        )
    return img.with_pixels(img.pixels[margin:-margin, margin:-margin])
