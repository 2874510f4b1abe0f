"""Beat detection and annotation on a cleaned lead.

R-peaks come from a differentiate/square/integrate detector with an adaptive
threshold (0.5 x running median of the last 8 accepted integrated peak
heights) and a 200 ms refractory, refined to the local extremum of the
mean-removed signal. Everything downstream (quality, template, PQRST) is
driven by those peaks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, InsufficientBeats
from .preprocess import moving_average

REFRACTORY_S = 0.2
INTEGRATION_WIDTH_S = 0.150
REFINE_HALFWIDTH_S = 0.050
QRS_HALFWIDTH_S = 0.1
QRS_GRID_POINTS = 50

# Beat window seconds around the R-peak; the short pair applies above 80 bpm.
WINDOW_NORMAL_S = (0.35, 0.5)
WINDOW_FAST_S = (0.25, 0.4)
FAST_HR_BPM = 80.0

ABSENT = -1  # sentinel for per-beat indices that could not be located


@dataclass
class Template:
    """Highest-quality beat window of one lead."""

    window: np.ndarray
    r_offset_in_window: int
    fs: int
    quality_at_r: float


@dataclass
class BeatMap:
    """Per-lead beat annotations; absent per-beat indices hold ``ABSENT``."""

    r_peaks: np.ndarray
    p_peaks: np.ndarray
    q_peaks: np.ndarray
    s_peaks: np.ndarray
    t_peaks: np.ndarray
    p_onsets: np.ndarray
    p_offsets: np.ndarray
    r_onsets: np.ndarray
    r_offsets: np.ndarray
    t_onsets: np.ndarray
    t_offsets: np.ndarray
    quality: np.ndarray
    mean_hr: float


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _local_maxima(y: np.ndarray) -> np.ndarray:
    """Indices of strict-left / non-strict-right local maxima (plateau keeps its left edge)."""
    if y.size < 3:
        return np.empty(0, dtype=int)
    idx = np.nonzero((y[1:-1] > y[:-2]) & (y[1:-1] >= y[2:]))[0] + 1
    return idx[y[idx] > 0]


def detect_r_peaks(x: np.ndarray, fs: float) -> np.ndarray:
    """Locate R-peaks on a cleaned lead; at least one second of signal required."""
    x = np.asarray(x, dtype=float)
    if x.size < fs:
        raise InsufficientBeats("need at least one second of signal")
    centered = x - x.mean()
    energy = np.diff(centered) ** 2
    integ = moving_average(np.append(energy, energy[-1]), fs, INTEGRATION_WIDTH_S)

    candidates = _local_maxima(integ)
    if candidates.size == 0:
        raise InsufficientBeats("no energy peaks found")
    # Noise-floor maxima cannot pass any plausible adaptive threshold; dropping
    # them early keeps the acceptance walk short.
    candidates = candidates[integ[candidates] > 0.01 * integ[candidates].max()]

    refractory = _round_half_up(REFRACTORY_S * fs)
    heights = [float(integ[candidates].max())]  # seed: the biggest peak is a true beat
    accepted: list[int] = []
    for c in candidates:
        recent = sorted(heights[-8:])
        mid = len(recent) // 2
        median = recent[mid] if len(recent) % 2 else 0.5 * (recent[mid - 1] + recent[mid])
        if integ[c] < 0.5 * median:
            continue
        if accepted and c - accepted[-1] < refractory:
            if integ[c] > integ[accepted[-1]]:
                accepted[-1] = int(c)
                heights[-1] = float(integ[c])
            continue
        accepted.append(int(c))
        heights.append(float(integ[c]))

    # Refine each accepted peak to the local |x - mean| maximum; iterating until
    # stable keeps the result a true window-local extremum.
    mag = np.abs(centered)
    half = _round_half_up(REFINE_HALFWIDTH_S * fs)
    refined = []
    for c in accepted:
        pos = c
        for _ in range(8):
            lo, hi = max(0, pos - half), min(x.size, pos + half + 1)
            best = lo + int(np.argmax(mag[lo:hi]))
            if best == pos or mag[best] <= mag[pos]:
                break
            pos = best
        refined.append(pos)

    refined = sorted(set(refined))
    peaks: list[int] = []
    for pos in refined:
        if peaks and pos - peaks[-1] < refractory:
            if mag[pos] > mag[peaks[-1]]:
                peaks[-1] = pos
        else:
            peaks.append(pos)
    if len(peaks) < 2:
        raise InsufficientBeats(f"found {len(peaks)} beats, need at least 2")
    return np.asarray(peaks, dtype=int)


def mean_heart_rate(r_peaks: np.ndarray, fs: float) -> float:
    r_peaks = np.asarray(r_peaks)
    if r_peaks.size < 2:
        raise InsufficientBeats("mean heart rate needs at least two beats")
    rr_s = np.diff(r_peaks) / fs
    return 60.0 / rr_s.mean()


def beat_window_bounds(mean_hr: float, fs: float) -> tuple[int, int]:
    """(pre, post) window sample counts; switches to the short window strictly above 80 bpm."""
    if mean_hr <= 0:
        raise ContractViolation("heart rate must be positive")
    pre_s, post_s = WINDOW_FAST_S if mean_hr > FAST_HR_BPM else WINDOW_NORMAL_S
    return _round_half_up(pre_s * fs), _round_half_up(post_s * fs)


def quality_curve(x: np.ndarray, r_peaks: np.ndarray, fs: float) -> np.ndarray:
    """Per-sample beat quality in [0, 1], 1 = closest to the average QRS shape.

    Each QRS segment (R +/- 0.1 s, edge-clipped) is resampled to a fixed
    50-point grid; Euclidean distance to the mean segment is min-max inverted
    and interpolated linearly between R-peaks (constant beyond the first/last).
    """
    x = np.asarray(x, dtype=float)
    r_peaks = np.asarray(r_peaks)
    if r_peaks.size < 2:
        raise InsufficientBeats("quality needs at least two beats")
    half = _round_half_up(QRS_HALFWIDTH_S * fs)
    grid = np.empty((r_peaks.size, QRS_GRID_POINTS))
    for k, r in enumerate(r_peaks):
        lo, hi = max(0, r - half), min(x.size, r + half + 1)
        seg = x[lo:hi]
        pos = np.linspace(0.0, seg.size - 1.0, QRS_GRID_POINTS)
        grid[k] = np.interp(pos, np.arange(seg.size), seg)
    dist = np.linalg.norm(grid - grid.mean(axis=0), axis=1)
    spread = dist.max() - dist.min()
    if spread == 0.0:
        q = np.ones(r_peaks.size)
    else:
        q = 1.0 - (dist - dist.min()) / spread
    return np.interp(np.arange(x.size), r_peaks, q)


def select_template(
    x: np.ndarray,
    r_peaks: np.ndarray,
    quality: np.ndarray,
    bounds: tuple[int, int],
    fs: int = 0,
) -> Template:
    """Beat window with the highest quality at its R sample; earliest beat wins ties."""
    x = np.asarray(x, dtype=float)
    pre, post = bounds
    fits = [int(r) for r in r_peaks if r - pre >= 0 and r + post <= x.size]
    if not fits:
        raise InsufficientBeats("no beat window fits inside the signal")
    best = max(fits, key=lambda r: (quality[r], -r))
    return Template(
        window=x[best - pre:best + post].copy(),
        r_offset_in_window=pre,
        fs=fs,
        quality_at_r=float(quality[best]),
    )


def _half_height_edge(x, peak, lo, hi, direction):
    """First sample from ``peak`` toward ``direction`` below half peak prominence."""
    region = x[lo:hi + 1]
    if region.size == 0:
        return ABSENT
    thr = 0.5 * (x[peak] + region.min())
    pos = peak + direction
    while lo <= pos <= hi:
        if x[pos] < thr:
            return int(pos)
        pos += direction
    return ABSENT


def delineate_pqrst(x: np.ndarray, r_peaks: np.ndarray, fs: float) -> dict:
    """Locate P/Q/S/T peaks and P/R/T onset-offset pairs around each R-peak.

    Search windows (clipped at record ends and adjacent R-peaks):
    Q = argmin on [R-0.1s, R); S = argmin on (R, R+0.1s];
    T = argmax on [R+0.1s, R+0.4s]; P = argmax on [R-0.3s, R-0.1s).
    Onsets/offsets walk outward from P/R/T peaks up to 0.1 s to the first
    sample below half the peak-to-window-minimum height.
    """
    x = np.asarray(x, dtype=float)
    r_peaks = np.asarray(r_peaks, dtype=int)
    n = x.size
    nb = r_peaks.size
    w10 = _round_half_up(0.1 * fs)
    w30 = _round_half_up(0.3 * fs)
    w40 = _round_half_up(0.4 * fs)

    out = {name: np.full(nb, ABSENT, dtype=int) for name in (
        "p_peaks", "q_peaks", "s_peaks", "t_peaks",
        "p_onsets", "p_offsets", "r_onsets", "r_offsets", "t_onsets", "t_offsets",
    )}

    for k, r in enumerate(r_peaks):
        prev_r = r_peaks[k - 1] if k > 0 else -1
        next_r = r_peaks[k + 1] if k + 1 < nb else n

        q_lo = max(0, r - w10, prev_r + 1)
        if q_lo < r:
            out["q_peaks"][k] = q_lo + int(np.argmin(x[q_lo:r]))
        s_hi = min(n - 1, r + w10, next_r - 1)
        if s_hi > r:
            out["s_peaks"][k] = r + 1 + int(np.argmin(x[r + 1:s_hi + 1]))
        t_lo, t_hi = r + w10, min(n - 1, r + w40, next_r - 1)
        if t_lo <= t_hi:
            out["t_peaks"][k] = t_lo + int(np.argmax(x[t_lo:t_hi + 1]))
        p_lo, p_hi = max(0, r - w30, prev_r + 1), r - w10  # exclusive upper bound
        if p_lo < p_hi:
            out["p_peaks"][k] = p_lo + int(np.argmax(x[p_lo:p_hi]))

        for wave, peak in (("p", out["p_peaks"][k]), ("r", r), ("t", out["t_peaks"][k])):
            if peak == ABSENT:
                continue
            on_lo = max(0, peak - w10, prev_r + 1)
            off_hi = min(n - 1, peak + w10, next_r - 1)
            out[f"{wave}_onsets"][k] = _half_height_edge(x, peak, on_lo, peak - 1, -1) \
                if peak > on_lo else ABSENT
            out[f"{wave}_offsets"][k] = _half_height_edge(x, peak, peak + 1, off_hi, +1) \
                if peak < off_hi else ABSENT

    return out


def delineate_lead(x: np.ndarray, fs: float) -> BeatMap:
    """Full per-lead delineation: peaks, waves, quality curve, mean heart rate."""
    r_peaks = detect_r_peaks(x, fs)
    waves = delineate_pqrst(x, r_peaks, fs)
    return BeatMap(
        r_peaks=r_peaks,
        quality=quality_curve(x, r_peaks, fs),
        mean_hr=mean_heart_rate(r_peaks, fs),
        **waves,
    )
