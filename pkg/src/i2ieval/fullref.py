"""Full-reference image similarity metrics.

All functions accept two images of identical shape, either as Image objects
or as bare 2-D float arrays in [0, 1], and return a python float. mse/psnr
operate pixelwise; ssim uses a Gaussian-weighted sliding window; cw_ssim
compares complex wavelet coefficients and tolerates small translations;
fsim weights gradient and phase-congruency similarity by phase congruency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .imagecore import Image, ImageError
from .loggabor import loggabor_bank, subband_responses

# complex wavelet bank geometry: coarse scales and a moderately narrow
# radial band keep the coefficient envelope wide enough that a few pixels
# of translation barely move the windowed cross-correlation magnitude
CW_MIN_WAVELENGTH = 32.0
CW_MULT = 2.0
CW_SIGMA_ON_F = 0.65
CW_D_THETA_ON_SIGMA = 1.2
CW_PAD_MIN = 64

# phase congruency bank used by fsim
PC_MIN_WAVELENGTH = 6.0
PC_MULT = 2.0
PC_SIGMA_ON_F = 0.55
PC_D_THETA_ON_SIGMA = 1.2
PC_EPSILON = 1e-4

SCHARR_X = np.array([[3.0, 0.0, -3.0], [10.0, 0.0, -10.0], [3.0, 0.0, -3.0]]) / 16.0
SCHARR_Y = SCHARR_X.T


@dataclass(frozen=True)
class SsimParams:
    window: int = 11
    gaussian_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError("window must be odd and >= 3")
        if self.gaussian_sigma <= 0:
            raise ValueError("gaussian_sigma must be positive")
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("k1 and k2 must be positive")
        if self.data_range <= 0:
            raise ValueError("data_range must be positive")


@dataclass(frozen=True)
class CwSsimParams:
    scales: int = 2
    orientations: int = 4
    window: int = 7
    stabilizer: float = 1e-4

    def __post_init__(self):
        if self.scales < 1 or self.orientations < 1:
            raise ValueError("scales and orientations must be >= 1")
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError("window must be odd and >= 3")
        if self.stabilizer <= 0:
            raise ValueError("stabilizer must be positive")


@dataclass(frozen=True)
class FsimParams:
    pc_scales: int = 4
    pc_orientations: int = 4
    t1: float = 0.85
    t2: float = 160.0

    def __post_init__(self):
        if self.pc_scales < 1 or self.pc_orientations < 1:
            raise ValueError("pc_scales and pc_orientations must be >= 1")
        if self.t1 <= 0 or self.t2 <= 0:
            raise ValueError("t1 and t2 must be positive")


def _raster(img) -> np.ndarray:
    arr = img.pixels if isinstance(img, Image) else np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise ImageError(f"expected a 2-D raster, got shape {arr.shape}")
    return arr


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    x, y = _raster(a), _raster(b)
    if x.shape != y.shape:
        raise ImageError(f"shape mismatch: {x.shape} vs {y.shape}")
    return x, y


def mse(a, b) -> float:
    x, y = _pair(a, b)
    return float(np.mean((x - y) ** 2))


def psnr(a, b, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; inf for identical inputs."""
    err = mse(a, b)
    if err == 0.0:
        return float("inf")
    return float(10.0 * math.log10(data_range**2 / err))


def _gaussian_kernel(window: int, sigma: float) -> np.ndarray:
    half = window // 2
    t = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-(t**2) / (2.0 * sigma**2))
    return k / k.sum()


def _windowed(arr: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable weighted local sum, cropped to fully-valid windows."""
    half = len(kernel) // 2
    out = correlate1d(arr, kernel, axis=0, mode="constant")
    out = correlate1d(out, kernel, axis=1, mode="constant")
    return out[half:-half, half:-half]


def ssim(a, b, params: SsimParams = SsimParams()) -> float:
    x, y = _pair(a, b)
    if min(x.shape) < params.window:
        raise ImageError(f"image smaller than the {params.window}x{params.window} window")
    c1 = (params.k1 * params.data_range) ** 2
    c2 = (params.k2 * params.data_range) ** 2
    kernel = _gaussian_kernel(params.window, params.gaussian_sigma)

    mu_x = _windowed(x, kernel)
    mu_y = _windowed(y, kernel)
    sigma_x = _windowed(x * x, kernel) - mu_x * mu_x
    sigma_y = _windowed(y * y, kernel) - mu_y * mu_y
    sigma_xy = _windowed(x * y, kernel) - mu_x * mu_y

    num = (2.0 * mu_x * mu_y + c1) * (2.0 * sigma_xy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sigma_x + sigma_y + c2)
    return float(np.mean(num / den))


def _next_pow2(n: int) -> int:
    return 1 << max(n - 1, 0).bit_length()


def _box_valid(arr: np.ndarray, window: int) -> np.ndarray:
    ones = np.ones(window, dtype=np.float64)
    half = window // 2
    out = correlate1d(arr, ones, axis=0, mode="constant")
    out = correlate1d(out, ones, axis=1, mode="constant")
    return out[half:-half, half:-half]


def cw_ssim(a, b, params: CwSsimParams = CwSsimParams()) -> float:
    """Complex-wavelet structural similarity.

    Compares log-Gabor subband coefficients inside sliding windows. Taking
    the magnitude of the windowed cross term discards any common phase
    ramp, which is what makes the index nearly blind to translations of a
    few pixels while plain ssim collapses.
    """
    x, y = _pair(a, b)
    rows, cols = x.shape
    size = max(_next_pow2(rows), _next_pow2(cols), CW_PAD_MIN)
    if rows != size or cols != size:
        xp = np.zeros((size, size), dtype=np.float64)
        yp = np.zeros((size, size), dtype=np.float64)
        xp[:rows, :cols] = x
        yp[:rows, :cols] = y
        x, y = xp, yp

    bank = loggabor_bank(
        (size, size),
        params.scales,
        params.orientations,
        CW_MIN_WAVELENGTH,
        CW_MULT,
        CW_SIGMA_ON_F,
        CW_D_THETA_ON_SIGMA,
    )
    coeff_x = subband_responses(x, bank)
    coeff_y = subband_responses(y, bank)

    k = params.stabilizer
    w = params.window
    scores = []
    for cx, cy in zip(coeff_x, coeff_y):
        cross = cx * np.conj(cy)
        cross_re = _box_valid(cross.real, w)
        cross_im = _box_valid(cross.imag, w)
        energy_x = _box_valid((cx * np.conj(cx)).real, w)
        energy_y = _box_valid((cy * np.conj(cy)).real, w)
        index = (2.0 * np.hypot(cross_re, cross_im) + k) / (energy_x + energy_y + k)
        scores.append(index.mean())
    return float(np.mean(scores))


def _phase_congruency(arr: np.ndarray, params: FsimParams) -> np.ndarray:
    """Local-energy phase congruency over all scales and orientations."""
    bank = loggabor_bank(
        arr.shape,
        params.pc_scales,
        params.pc_orientations,
        PC_MIN_WAVELENGTH,
        PC_MULT,
        PC_SIGMA_ON_F,
        PC_D_THETA_ON_SIGMA,
    )
    responses = subband_responses(arr, bank)
    total = np.zeros(arr.shape, dtype=np.complex128)
    amplitude = np.zeros(arr.shape, dtype=np.float64)
    for e in responses:
        total += e
        amplitude += np.abs(e)
    return np.abs(total) / (amplitude + PC_EPSILON)


def _scharr_magnitude(arr: np.ndarray) -> np.ndarray:
    from scipy.ndimage import correlate

    gx = correlate(arr, SCHARR_X, mode="reflect")
    gy = correlate(arr, SCHARR_Y, mode="reflect")
    return np.hypot(gx, gy)


def fsim(a, b, params: FsimParams = FsimParams()) -> float:
    """Feature similarity from phase congruency and gradient magnitude.

    Both inputs are rescaled to [0, 255] so the t1/t2 constants act on
    their customary scale. Values slightly above 1 are possible on exotic
    inputs and are reported as-is.
    """
    x, y = _pair(a, b)
    x = x * 255.0
    y = y * 255.0

    pc_x = _phase_congruency(x, params)
    pc_y = _phase_congruency(y, params)
    g_x = _scharr_magnitude(x)
    g_y = _scharr_magnitude(y)

    s_pc = (2.0 * pc_x * pc_y + params.t1) / (pc_x**2 + pc_y**2 + params.t1)
    s_g = (2.0 * g_x * g_y + params.t2) / (g_x**2 + g_y**2 + params.t2)
    pc_max = np.maximum(pc_x, pc_y)

    weight = pc_max.sum()
    if weight == 0.0:
        return float(np.mean(s_pc * s_g))
    return float((s_pc * s_g * pc_max).sum() / weight)
