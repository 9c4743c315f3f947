"""Frequency response of the nearest and bilinear interpolators.

Frequencies are given as ``f / f_s`` (cycles per pixel with a unit sampling
rate).
"""

import numpy as np

from .resampling import ResampleMethod, resample

BORDER = 4


def _checked_method(method):
    method = ResampleMethod(method)
    if method is ResampleMethod.BICUBIC:
        raise NotImplementedError("no closed-form response for bicubic")
    return method


def kernel_response(method, f_over_fs):
    """Magnitude of the continuous reconstruction kernel's Fourier transform.

    Nearest is a box with response ``|sinc|``; bilinear is a triangle with
    response ``sinc**2``. ``np.sinc`` is the normalized ``sin(pi x)/(pi x)``.
    """
    method = _checked_method(method)
    f = np.asarray(f_over_fs, dtype=np.float64)
    if np.any(f < 0):
        raise ValueError("frequency must be non-negative")
    s = np.sinc(f)
    if method is ResampleMethod.NEAREST:
        return np.abs(s)
    return s * s


def shift_transfer(method, shift, f_over_fs):
    """Complex gain a fixed fractional-shift resampler applies at ``f_over_fs``.

    Bilinear mixes the two neighbours, ``(1 - d) + d exp(-i 2 pi f)``; nearest
    is a pure delay by ``round(d)`` (half rounds up).
    """
    method = _checked_method(method)
    if not 0.0 <= shift < 1.0:
        raise ValueError(f"shift must lie in [0, 1), got {shift}")
    phasor = np.exp(-2j * np.pi * np.asarray(f_over_fs, dtype=np.float64))
    if method is ResampleMethod.BILINEAR:
        return (1.0 - shift) + shift * phasor
    return phasor ** np.floor(shift + 0.5)


def fit_amplitude(signal, freq, n=None):
    """Least-squares amplitude of the ``freq`` sinusoid in ``signal``."""
    signal = np.asarray(signal, dtype=np.float64)
    if n is None:
        n = np.arange(signal.size, dtype=np.float64)
    basis = np.stack([np.sin(2 * np.pi * freq * n), np.cos(2 * np.pi * freq * n)], axis=1)
    if np.linalg.matrix_rank(basis) < 2:
        raise ValueError(f"degenerate amplitude fit at frequency {freq}")
    coef, *_ = np.linalg.lstsq(basis, signal, rcond=None)
    return float(np.hypot(coef[0], coef[1]))


def measure_attenuation(signal_freq, shift, method, length=256):
    """Resample ``sin(2 pi f n)`` at ``n + shift`` and return the amplitude ratio.

    The 4 samples at each end are excluded from the fit so the clamped border
    does not bias it.
    """
    if not 0.0 < signal_freq < 0.5:
        raise ValueError("signal_freq must lie in (0, 0.5) cycles/pixel")
    if length < 64:
        raise ValueError("length must be at least 64")
    n = np.arange(length, dtype=np.float64)
    x = np.sin(2 * np.pi * signal_freq * n)
    grid = x.reshape(1, length, 1)
    shifted = resample(grid, n + shift, np.zeros(length), method)[:, 0]
    inner = slice(BORDER, length - BORDER)
    return fit_amplitude(shifted[inner], signal_freq, n[inner])
