"""Heart-rate-variability features from R-peak intervals.

All dispersion statistics use the population convention (divide by n), same
as the waveform feature catalog. Geometric indices use the standard 1/128 s
(7.8125 ms) histogram bin width.
"""
from __future__ import annotations

import numpy as np

from .errors import ContractViolation, InsufficientBeats

HIST_BIN_MS = 7.8125

HRV_NAMES = (
    "meanNN", "medianNN", "SDNN", "MADNN", "IQRNN", "CVNN",
    "SDSD", "RMSSD", "pNN50", "pNN20", "HTI", "TINN",
)


def rr_intervals(r_peaks: np.ndarray, fs: float) -> np.ndarray:
    """Successive R-peak distances in milliseconds."""
    r_peaks = np.asarray(r_peaks)
    if r_peaks.size < 2:
        raise InsufficientBeats("need at least two R-peaks")
    if np.any(np.diff(r_peaks) <= 0):
        raise ContractViolation("R-peaks must be strictly increasing")
    return np.diff(r_peaks) * 1000.0 / fs


def _rr_histogram(rr: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Counts over 7.8125 ms bins aligned to zero; returns (counts, left edges)."""
    k = np.floor(rr / HIST_BIN_MS).astype(int)
    k_min, k_max = k.min(), k.max()
    counts = np.bincount(k - k_min, minlength=k_max - k_min + 1)
    edges = (np.arange(k_min, k_max + 1)) * HIST_BIN_MS
    return counts.astype(float), edges


def _triangle_fit_width(counts: np.ndarray, centers: np.ndarray, width: float) -> float:
    """Base width of the least-squares triangle through the histogram mode.

    Candidate feet range over bin centers one bin beyond each end; the
    triangle peaks at the mode center with the mode count as height. Ties
    prefer the narrowest base, then the leftmost foot.
    """
    mode = int(np.argmax(counts))
    y = counts[mode]
    p = centers[mode]
    left = np.concatenate(([centers[0] - width], centers[:mode]))
    right = np.concatenate((centers[mode + 1:], [centers[-1] + width]))
    best = (np.inf, np.inf, np.inf)  # (error, base, n_foot)
    for nf in left:
        for mf in right:
            t = np.zeros_like(counts)
            rising = (centers >= nf) & (centers <= p)
            t[rising] = y * (centers[rising] - nf) / (p - nf)
            falling = (centers > p) & (centers <= mf)
            t[falling] = y * (mf - centers[falling]) / (mf - p)
            err = float(np.sum((counts - t) ** 2))
            cand = (err, mf - nf, nf)
            if cand < best:
                best = cand
    return float(best[1])


def hrv_features(rr: np.ndarray) -> dict:
    """The named HRV feature map; successive-difference stats need >= 3 intervals."""
    rr = np.asarray(rr, dtype=float)
    if rr.size < 2:
        raise ContractViolation("need at least two RR intervals")
    if np.any(rr <= 0):
        raise ContractViolation("RR intervals must be positive")

    out = {
        "meanNN": float(rr.mean()),
        "medianNN": float(np.median(rr)),
        "SDNN": float(rr.std()),
        "MADNN": float(np.median(np.abs(rr - np.median(rr)))),
        "IQRNN": float(np.quantile(rr, 0.75) - np.quantile(rr, 0.25)),
    }
    out["CVNN"] = out["SDNN"] / out["meanNN"]

    if rr.size < 3:
        out.update(SDSD=0.0, RMSSD=0.0, pNN50=0.0, pNN20=0.0)
    else:
        d = np.diff(rr)
        out["SDSD"] = float(d.std())
        out["RMSSD"] = float(np.sqrt(np.mean(d ** 2)))
        out["pNN50"] = float(np.mean(np.abs(d) > 50.0))
        out["pNN20"] = float(np.mean(np.abs(d) > 20.0))

    counts, edges = _rr_histogram(rr)
    out["HTI"] = float(rr.size / counts.max())
    if np.count_nonzero(counts) < 2:
        out["TINN"] = 0.0
    else:
        centers = edges + HIST_BIN_MS / 2.0
        out["TINN"] = _triangle_fit_width(counts, centers, HIST_BIN_MS)
    return out


def hrv_vector(rr: np.ndarray) -> np.ndarray:
    feats = hrv_features(rr)
    return np.array([feats[name] for name in HRV_NAMES])
