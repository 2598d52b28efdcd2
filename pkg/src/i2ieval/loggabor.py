"""Frequency-domain log-Gabor filter bank.

Filters are defined on the FFT grid (DC at [0, 0]) and are one-sided in
orientation, so filtering a real image yields complex subband responses
whose real/imaginary parts are the even/odd symmetric components. Shared by
the complex-wavelet similarity index and the phase-congruency feature map.
"""

from __future__ import annotations

import math

import numpy as np


def _filter_grid(rows: int, cols: int) -> tuple[np.ndarray, np.ndarray]:
    """Normalised frequency radius and angle with DC at index [0, 0]."""
    if cols % 2:
        fx = (np.arange(cols) - (cols - 1) / 2) / (cols - 1)
    else:
        fx = (np.arange(cols) - cols / 2) / cols
    if rows % 2:
        fy = (np.arange(rows) - (rows - 1) / 2) / (rows - 1)
    else:
        fy = (np.arange(rows) - rows / 2) / rows
    x, y = np.meshgrid(fx, fy)
    radius = np.fft.ifftshift(np.sqrt(x * x + y * y))
    theta = np.fft.ifftshift(np.arctan2(-y, x))
    return radius, theta


def lowpass_filter(rows: int, cols: int, cutoff: float = 0.45, order: int = 15) -> np.ndarray:
    """Butterworth lowpass that tapers the corners of the FFT grid."""
    radius, _ = _filter_grid(rows, cols)
    return 1.0 / (1.0 + (radius / cutoff) ** (2 * order))


def loggabor_bank(
    shape: tuple[int, int],
    scales: int,
    orientations: int,
    min_wavelength: float,
    mult: float = 2.0,
    sigma_on_f: float = 0.55,
    d_theta_on_sigma: float = 1.2,
) -> list[np.ndarray]:
    """Build scales x orientations log-Gabor filters, scale-major order.

    sigma_on_f sets the radial bandwidth (0.55 is roughly two octaves);
    d_theta_on_sigma sets the angular spread relative to the orientation
    spacing. Every filter has zero DC response.
    """
    rows, cols = shape
    radius, theta = _filter_grid(rows, cols)
    radius[0, 0] = 1.0  # keep log() finite; DC is zeroed explicitly below

    lp = 1.0 / (1.0 + (radius / 0.45) ** 30)
    log_sigma2 = 2.0 * math.log(sigma_on_f) ** 2
    radials = []
    for s in range(scales):
        f0 = 1.0 / (min_wavelength * mult**s)
        g = np.exp(-(np.log(radius / f0) ** 2) / log_sigma2) * lp
        g[0, 0] = 0.0
        radials.append(g)

    sin_t, cos_t = np.sin(theta), np.cos(theta)
    sigma_theta = math.pi / orientations / d_theta_on_sigma
    spreads = []
    for o in range(orientations):
        angle = o * math.pi / orientations
        ds = sin_t * math.cos(angle) - cos_t * math.sin(angle)
        dc = cos_t * math.cos(angle) + sin_t * math.sin(angle)
        dtheta = np.abs(np.arctan2(ds, dc))
        spreads.append(np.exp(-(dtheta**2) / (2.0 * sigma_theta**2)))

    return [r * s for r in radials for s in spreads]


def subband_responses(arr: np.ndarray, bank: list[np.ndarray]) -> list[np.ndarray]:
    """Complex per-subband responses of a real 2-D array."""
    spectrum = np.fft.fft2(arr)
    return [np.fft.ifft2(spectrum * g) for g in bank]
