"""Lead-level signal conditioning: drift removal, smoothing, rate capping, cropping."""
from __future__ import annotations

import warnings

import numpy as np
from scipy import signal as sps

from .errors import ContractViolation, ParameterError

DEFAULT_HIGHPASS_CUTOFF_HZ = 0.5
DEFAULT_HIGHPASS_ORDER = 5
DEFAULT_SMOOTH_WIDTH_S = 0.02
RATE_CAP_HZ = 500
WAVEFORM_CROP_SAMPLES = 2000


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def highpass_butterworth(
    x: np.ndarray,
    fs: float,
    cutoff: float = DEFAULT_HIGHPASS_CUTOFF_HZ,
    order: int = DEFAULT_HIGHPASS_ORDER,
) -> np.ndarray:
    """Zero-phase Butterworth highpass (forward-backward over second-order sections).

    Signals of length <= 3*order are returned unchanged with a warning: the
    pad-reflect scheme needs a few filter lengths of context.
    """
    x = np.asarray(x, dtype=float)
    if order < 1:
        raise ParameterError("filter order must be >= 1")
    if cutoff <= 0 or cutoff >= fs / 2:
        raise ParameterError(f"cutoff must lie in (0, fs/2); got {cutoff} at fs={fs}")
    if x.size <= 3 * order:
        warnings.warn("signal too short for highpass; returned unchanged", RuntimeWarning)
        return x.copy()
    sos = sps.butter(order, cutoff, btype="highpass", fs=fs, output="sos")
    padlen = min(3 * (2 * sos.shape[0] + 1), x.size - 1)
    return sps.sosfiltfilt(sos, x, padlen=padlen)


def moving_average(x: np.ndarray, fs: float, width_s: float = DEFAULT_SMOOTH_WIDTH_S) -> np.ndarray:
    """Centered moving average; kernel width rounded to samples and forced odd.

    Edge windows shrink to the available samples, so output length equals
    input length and constants pass through exactly.
    """
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ContractViolation("moving_average needs a non-empty signal")
    if width_s <= 0:
        raise ParameterError("window width must be positive")
    k = _round_half_up(width_s * fs)
    if k % 2 == 0:
        k += 1
    if k <= 1:
        return x.copy()
    half = k // 2
    csum = np.concatenate(([0.0], np.cumsum(x)))
    idx = np.arange(x.size)
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half, x.size - 1)
    return (csum[hi + 1] - csum[lo]) / (hi - lo + 1)


def cap_rate_500(x: np.ndarray, fs: int, target: int = RATE_CAP_HZ) -> tuple[np.ndarray, int]:
    """Resample to at most ``target`` Hz: lowpass at 0.45*target, then linear interpolation."""
    x = np.asarray(x, dtype=float)
    if fs <= 0:
        raise ContractViolation("sampling rate must be positive")
    if fs <= target:
        return x, fs
    filtered = x
    if x.size > 15:
        sos = sps.butter(5, 0.45 * target, btype="lowpass", fs=fs, output="sos")
        padlen = min(3 * (2 * sos.shape[0] + 1), x.size - 1)
        filtered = sps.sosfiltfilt(sos, x, padlen=padlen)
    n_new = _round_half_up(x.size * target / fs)
    t_old = np.arange(x.size) / fs
    t_new = np.arange(n_new) / target
    return np.interp(t_new, t_old, filtered), target


def crop_middle(x: np.ndarray, target_n: int = WAVEFORM_CROP_SAMPLES) -> np.ndarray:
    """Keep the middle ``target_n`` samples; shorter signals pass through."""
    x = np.asarray(x, dtype=float)
    if target_n <= 0:
        raise ParameterError("crop length must be positive")
    if x.size <= target_n:
        return x
    start = (x.size - target_n) // 2
    return x[start:start + target_n]


def clean_lead(
    x: np.ndarray,
    fs: float,
    cutoff: float = DEFAULT_HIGHPASS_CUTOFF_HZ,
    order: int = DEFAULT_HIGHPASS_ORDER,
    smooth_width_s: float = DEFAULT_SMOOTH_WIDTH_S,
) -> np.ndarray:
    """Highpass then smooth: the standard per-lead cleaning used everywhere downstream."""
    return moving_average(highpass_butterworth(x, fs, cutoff, order), fs, smooth_width_s)
