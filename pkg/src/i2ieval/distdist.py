"""Distribution-level distances between activation sets.

fid measures the Frechet distance between Gaussians fitted to two sets;
kid_unbiased is the unbiased polynomial-kernel MMD^2 estimator and can be
negative; kid_subsampled repeats it over random subsets and reports the
spread. Single precision is supported for the speed/accuracy comparison
but double is the default.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .features import ActivationSet


class Precision(Enum):
    SINGLE = "f32"
    DOUBLE = "f64"

    @property
    def dtype(self):
        return np.float32 if self is Precision.SINGLE else np.float64


@dataclass(frozen=True)
class GaussianStats:
    """Sample mean and covariance of one activation set."""

    mean: np.ndarray
    cov: np.ndarray
    n: int

    def __post_init__(self):
        mean = np.asarray(self.mean)
        cov = np.asarray(self.cov)
        if mean.ndim != 1:
            raise ValueError(f"mean must be a vector, got shape {mean.shape}")
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"cov shape {cov.shape} does not match d={mean.size}")
        if not np.allclose(cov, cov.T, atol=1e-9, rtol=0):
            raise ValueError("covariance must be symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def d(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class KidConfig:
    subsets: int = 50
    subset_size: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.subsets < 1:
            raise ValueError("subsets must be >= 1")
        if self.subset_size < 2:
            raise ValueError("subset_size must be >= 2")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass(frozen=True)
class KidEstimate:
    mean: float
    std: float
    per_subset: tuple[float, ...]

    @property
    def degenerate(self) -> bool:
        """True when a single subset made the spread meaningless."""
        return len(self.per_subset) < 2


def gaussian_stats(a: ActivationSet) -> GaussianStats:
    if a.n < 2:
        raise ValueError(f"need at least 2 rows to fit a Gaussian, got {a.n}")
    mean = a.rows.mean(axis=0)
    centered = a.rows - mean
    cov = centered.T @ centered / (a.n - 1)
    cov = (cov + cov.T) / 2.0
    return GaussianStats(mean, cov, a.n)


def sqrtm_psd(m: np.ndarray) -> np.ndarray:
    """Matrix square root of a symmetric PSD matrix by eigendecomposition.

    Small negative eigenvalues from roundoff are clamped to zero.
    """
    m = np.asarray(m)
    scale = np.abs(m).max() if m.size else 0.0
    tol = float(np.sqrt(np.finfo(m.dtype).eps)) if m.dtype.kind == "f" else 1e-8
    if not np.allclose(m, m.T, atol=tol * (1.0 + scale), rtol=0):
        raise ValueError("matrix is not symmetric")
    w, v = np.linalg.eigh(m)
    w = np.maximum(w, 0.0)
    root = (v * np.sqrt(w)) @ v.T
    return ((root + root.T) / 2.0).astype(m.dtype, copy=False)


def fid(a: GaussianStats, b: GaussianStats, precision: Precision = Precision.DOUBLE) -> float:
    """Frechet distance between two Gaussians.

    The cross term uses the symmetric product sqrt(Sa) @ Sb @ sqrt(Sa),
    whose trace equals tr((Sa Sb)^(1/2)) but which stays symmetric PSD so a
    plain eigendecomposition suffices. Tiny negative totals from roundoff
    clamp to zero.
    """
    if a.d != b.d:
        raise ValueError(f"dimension mismatch: {a.d} vs {b.d}")
    dt = precision.dtype
    mu_a = a.mean.astype(dt)
    mu_b = b.mean.astype(dt)
    cov_a = a.cov.astype(dt)
    cov_b = b.cov.astype(dt)

    diff = mu_a - mu_b
    root_a = sqrtm_psd(cov_a)
    inner = root_a @ cov_b @ root_a
    cross = sqrtm_psd((inner + inner.T) / 2.0)
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(cross))
    if -1e-8 <= value < 0.0:
        value = 0.0
    return value


def fid_from_sets(
    x: ActivationSet, y: ActivationSet, precision: Precision = Precision.DOUBLE
) -> float:
    return fid(gaussian_stats(x), gaussian_stats(y), precision)


def precision_study(x: ActivationSet, y: ActivationSet) -> dict:
    """fid in both precisions with wall time for each, plus the gap."""
    sx, sy = gaussian_stats(x), gaussian_stats(y)
    t0 = time.perf_counter()
    single = fid(sx, sy, Precision.SINGLE)
    t1 = time.perf_counter()
    double = fid(sx, sy, Precision.DOUBLE)
    t2 = time.perf_counter()
    return {
        "fid_f32": single,
        "fid_f64": double,
        "abs_difference": abs(single - double),
        "seconds_f32": t1 - t0,
        "seconds_f64": t2 - t1,
    }


def poly_kernel(alpha: np.ndarray, omega: np.ndarray) -> float:
    """Cubic polynomial kernel ((a.w)/d + 1)^3."""
    alpha = np.asarray(alpha, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.float64)
    if alpha.shape != omega.shape or alpha.ndim != 1 or alpha.size < 1:
        raise ValueError(f"need equal-length vectors, got {alpha.shape} and {omega.shape}")
    return float((alpha @ omega / alpha.size + 1.0) ** 3)


def _kernel_matrix(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return (x @ y.T / x.shape[1] + 1.0) ** 3


def kid_unbiased(x: ActivationSet, y: ActivationSet) -> float:
    """Unbiased polynomial-kernel MMD^2 between two activation sets.

    Diagonal terms are excluded from the within-set sums, so the estimator
    is unbiased and may legitimately go negative.
    """
    if x.n < 2 or y.n < 2:
        raise ValueError(f"need at least 2 rows per set, got {x.n} and {y.n}")
    if x.d != y.d:
        raise ValueError(f"dimension mismatch: {x.d} vs {y.d}")
    m, n = x.n, y.n
    kxx = _kernel_matrix(x.rows, x.rows)
    kyy = _kernel_matrix(y.rows, y.rows)
    kxy = _kernel_matrix(x.rows, y.rows)
    term_x = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
    term_y = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    term_xy = 2.0 * kxy.sum() / (m * n)
    return float(term_x + term_y - term_xy)


def kid_subsampled(x: ActivationSet, y: ActivationSet, cfg: KidConfig = KidConfig()) -> KidEstimate:
    """kid_unbiased over repeated random subsets of both sets.

    Each round draws subset_size rows without replacement from each set,
    independently per round, so rows recur across rounds. Round r uses its
    own generator seeded from (cfg.seed, r); results do not depend on
    scheduling or worker count.
    """
    if x.n < cfg.subset_size or y.n < cfg.subset_size:
        raise ValueError(
            f"subset_size {cfg.subset_size} exceeds a set size ({x.n}, {y.n})"
        )
    values = []
    for r in range(cfg.subsets):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, r]))
        ix = rng.choice(x.n, size=cfg.subset_size, replace=False)
        iy = rng.choice(y.n, size=cfg.subset_size, replace=False)
        sub_x = ActivationSet(x.rows[ix], x.extractor_id)
        sub_y = ActivationSet(y.rows[iy], y.extractor_id)
        values.append(kid_unbiased(sub_x, sub_y))
    mean = float(np.mean(values))
    std = 0.0 if len(values) < 2 else float(np.std(values))
    return KidEstimate(mean, std, tuple(values))


@dataclass(frozen=True)
class BaselineDelta:
    baseline: float
    adapted: float
    improved: bool


def baseline_delta(
    source_acts: ActivationSet,
    adapted_acts: ActivationSet,
    target_acts: ActivationSet,
    metric: str = "fid",
    precision: Precision = Precision.DOUBLE,
    kid_cfg: KidConfig = KidConfig(),
) -> BaselineDelta:
    """Score source->target and adapted->target with one metric.

    improved is True when adaptation moved the set strictly closer to the
    target distribution.
    """
    if metric == "fid":
        baseline = fid_from_sets(source_acts, target_acts, precision)
        adapted = fid_from_sets(adapted_acts, target_acts, precision)
    elif metric == "kid":
        baseline = kid_subsampled(source_acts, target_acts, kid_cfg).mean
        adapted = kid_subsampled(adapted_acts, target_acts, kid_cfg).mean
    else:
        raise ValueError(f"metric must be 'fid' or 'kid', got {metric!r}")
    return BaselineDelta(baseline, adapted, adapted < baseline)
