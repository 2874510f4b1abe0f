"""Named feature families over a 1-D signal, driven by a fixed catalog manifest.

The same catalog is evaluated on the cropped full waveform and on the heartbeat
template. Degenerate inputs (constant, too short) emit 0 for the affected
features and bump a flag counter; no NaN or infinity ever leaves this module.
Variance-style statistics use the population convention (divide by n)
throughout.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numba
import numpy as np

from .errors import ContractViolation

ENTROPY_M = 2
ENTROPY_R_FRAC = 0.2
AR_ORDER = 4
FFT_COEFFS = 16
CWT_WIDTHS = (2, 5, 10, 20)
CWT_POSITIONS = (0.0, 0.25, 0.5, 0.75)  # fractions of the signal length
CHANGE_QUANTILE_CORRIDORS = ((0.0, 0.2), (0.2, 0.8), (0.8, 1.0))
TREND_CHUNK = 50
PEAK_SUPPORTS = (1, 3, 5)

DESCRIPTIVE_NAMES = (
    "mean", "median", "variance", "std", "skewness", "kurtosis",
    "min", "max", "abs_energy", "count_above_mean", "count_below_mean",
)


def descriptive_stats(x: np.ndarray) -> tuple[dict, int]:
    """Location/shape statistics; single-sample inputs zero the moment features."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ContractViolation("descriptive_stats needs a non-empty signal")
    out = {
        "mean": float(x.mean()),
        "median": float(np.median(x)),
        "min": float(x.min()),
        "max": float(x.max()),
        "abs_energy": float(np.dot(x, x)),
        "count_above_mean": float(np.sum(x > x.mean())),
        "count_below_mean": float(np.sum(x < x.mean())),
    }
    flags = 0
    if x.size < 2:
        out.update(variance=0.0, std=0.0, skewness=0.0, kurtosis=0.0)
        return out, 1
    if np.ptp(x) == 0.0:  # constant signal: 0/0 moments defined as 0
        out.update(variance=0.0, std=0.0, skewness=0.0, kurtosis=0.0)
        return out, 1
    centered = x - x.mean()
    m2 = float(np.mean(centered ** 2))
    out["variance"] = m2
    out["std"] = float(np.sqrt(m2))
    out["skewness"] = float(np.mean(centered ** 3) / m2 ** 1.5)
    out["kurtosis"] = float(np.mean(centered ** 4) / m2 ** 2)
    return out, flags


@numba.njit(cache=True)
def _sampen_counts(x, m, r):
    """Pairs (i<j) of m- and (m+1)-length windows within Chebyshev distance r."""
    n = x.size
    nt = n - m  # templates such that the (m+1)-window also exists
    b = 0
    a = 0
    for i in range(nt - 1):
        for j in range(i + 1, nt):
            d = 0.0
            for k in range(m):
                diff = abs(x[i + k] - x[j + k])
                if diff > d:
                    d = diff
            if d <= r:
                b += 1
                if max(d, abs(x[i + m] - x[j + m])) <= r:
                    a += 1
    return b, a


@numba.njit(cache=True)
def _apen_phis(x, m, r):
    """(Phi(m), Phi(m+1)) with self-matches included, one symmetric pass."""
    n = x.size
    nt_m = n - m + 1
    nt_m1 = n - m
    counts_m = np.ones(nt_m, np.int64)   # self-match
    counts_m1 = np.ones(nt_m1, np.int64)
    for i in range(nt_m - 1):
        for j in range(i + 1, nt_m):
            d = 0.0
            for k in range(m):
                diff = abs(x[i + k] - x[j + k])
                if diff > d:
                    d = diff
            if d <= r:
                counts_m[i] += 1
                counts_m[j] += 1
                if i < nt_m1 and j < nt_m1 and max(d, abs(x[i + m] - x[j + m])) <= r:
                    counts_m1[i] += 1
                    counts_m1[j] += 1
    phi_m = 0.0
    for i in range(nt_m):
        phi_m += np.log(counts_m[i] / nt_m)
    phi_m1 = 0.0
    for i in range(nt_m1):
        phi_m1 += np.log(counts_m1[i] / nt_m1)
    return phi_m / nt_m, phi_m1 / nt_m1


def sample_entropy(x: np.ndarray, m: int = ENTROPY_M, r: float | None = None) -> tuple[float, int]:
    """-ln(A/B) over Chebyshev window matches, self-matches excluded.

    Zero matches saturate at ln(len(x)); constant signals are defined as 0.
    """
    x = np.asarray(x, dtype=float)
    if x.size < m + 2:
        return 0.0, 1
    if np.ptp(x) == 0.0:
        return 0.0, 1
    if r is None:
        r = ENTROPY_R_FRAC * float(x.std())
    b, a = _sampen_counts(x, m, float(r))
    if a == 0 or b == 0:
        return float(np.log(x.size)), 1
    return float(-np.log(a / b)), 0


def approximate_entropy(x: np.ndarray, m: int = ENTROPY_M, r: float | None = None) -> tuple[float, int]:
    """Phi(m) - Phi(m+1) with self-matches included; same degenerate rules."""
    x = np.asarray(x, dtype=float)
    if x.size < m + 2:
        return 0.0, 1
    if np.ptp(x) == 0.0:
        return 0.0, 1
    if r is None:
        r = ENTROPY_R_FRAC * float(x.std())
    phi_m, phi_m1 = _apen_phis(x, m, float(r))
    return float(phi_m - phi_m1), 0


def ar_coefficients(x: np.ndarray, order: int = AR_ORDER) -> tuple[np.ndarray, int]:
    """Yule-Walker prediction coefficients via Levinson-Durbin on the biased autocovariance."""
    x = np.asarray(x, dtype=float)
    if x.size <= 2 * order or np.ptp(x) == 0.0:
        return np.zeros(order), 1
    centered = x - x.mean()
    n = x.size
    c = np.array([np.dot(centered[: n - k], centered[k:]) / n for k in range(order + 1)])
    if c[0] == 0.0:
        return np.zeros(order), 1
    # Levinson-Durbin recursion on the autocovariance sequence.
    a = np.zeros(order + 1)
    err = c[0]
    for k in range(1, order + 1):
        acc = c[k] - np.dot(a[1:k], c[1:k][::-1])
        if err == 0.0:
            return np.zeros(order), 1
        ref = acc / err
        new = a.copy()
        new[k] = ref
        new[1:k] = a[1:k] - ref * a[1:k][::-1]
        a = new
        err *= 1.0 - ref * ref
    return a[1:], 0


def fft_features(x: np.ndarray, n_coeffs: int = FFT_COEFFS) -> dict:
    """First ``n_coeffs`` raw DFT coefficients as real/imag/abs/angle quadruples."""
    x = np.asarray(x, dtype=float)
    spectrum = np.fft.fft(x)
    out = {}
    for k in range(n_coeffs):
        if k < x.size:
            val = spectrum[k]
            out[f"fft_real_{k}"] = float(val.real)
            out[f"fft_imag_{k}"] = float(val.imag)
            out[f"fft_abs_{k}"] = float(np.abs(val))
            out[f"fft_angle_{k}"] = float(np.angle(val))
        else:
            for part in ("real", "imag", "abs", "angle"):
                out[f"fft_{part}_{k}"] = 0.0
    return out


def ricker_wavelet(width: float, length: int) -> np.ndarray:
    """Mexican-hat kernel psi_w(t) on integer offsets centered at 0."""
    t = np.arange(length) - (length - 1) / 2.0
    norm = 2.0 / (np.sqrt(3.0 * width) * np.pi ** 0.25)
    return norm * (1.0 - (t / width) ** 2) * np.exp(-(t ** 2) / (2.0 * width ** 2))


def cwt_features(
    x: np.ndarray,
    widths: tuple = CWT_WIDTHS,
    positions: tuple = CWT_POSITIONS,
) -> dict:
    """Ricker-wavelet convolution (zero-padded, 'same') sampled at fixed positions."""
    x = np.asarray(x, dtype=float)
    out = {}
    for w in widths:
        length = 2 * int(np.ceil(5.0 * w)) + 1
        # slice the full convolution so the output stays aligned to x even
        # when the kernel is longer than the signal
        full = np.convolve(x, ricker_wavelet(w, length), mode="full")
        start = (length - 1) // 2
        conv = full[start:start + x.size]
        for p in positions:
            idx = min(int(p * x.size), x.size - 1)
            out[f"cwt_w{w}_p{int(p * 100)}"] = float(conv[idx])
    return out


def change_quantiles(x: np.ndarray, ql: float, qh: float, agg: str) -> float:
    """Aggregate of |successive differences| whose endpoints both lie in the quantile corridor."""
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return 0.0
    lo, hi = np.quantile(x, [ql, qh])
    inside = (x >= lo) & (x <= hi)
    sel = inside[:-1] & inside[1:]
    if not sel.any():
        return 0.0
    d = np.abs(np.diff(x)[sel])
    return float(d.mean()) if agg == "mean" else float(d.var())


def _ols_line(y: np.ndarray) -> tuple[float, float, float]:
    """Least-squares slope/intercept/slope-stderr of y against 0..len-1."""
    n = y.size
    t = np.arange(n, dtype=float)
    t_mean = t.mean()
    sxx = float(np.sum((t - t_mean) ** 2))
    slope = float(np.sum((t - t_mean) * (y - y.mean())) / sxx)
    intercept = float(y.mean() - slope * t_mean)
    if n <= 2:
        return slope, intercept, 0.0
    resid = y - (intercept + slope * t)
    stderr = float(np.sqrt(np.sum(resid ** 2) / (n - 2) / sxx))
    return slope, intercept, stderr


def linear_trend_agg(x: np.ndarray, chunk: int = TREND_CHUNK) -> tuple[dict, int]:
    """OLS trends over per-chunk maxima and per-chunk means (partial last chunk kept)."""
    x = np.asarray(x, dtype=float)
    n_chunks = int(np.ceil(x.size / chunk))
    names = [f"trend_{agg}_{stat}" for agg in ("max", "mean") for stat in ("slope", "intercept", "stderr")]
    if n_chunks < 2:
        return {name: 0.0 for name in names}, 1
    maxima = np.array([x[i * chunk:(i + 1) * chunk].max() for i in range(n_chunks)])
    means = np.array([x[i * chunk:(i + 1) * chunk].mean() for i in range(n_chunks)])
    out = {}
    for agg, series in (("max", maxima), ("mean", means)):
        slope, intercept, stderr = _ols_line(series)
        out[f"trend_{agg}_slope"] = slope
        out[f"trend_{agg}_intercept"] = intercept
        out[f"trend_{agg}_stderr"] = stderr
    return out, 0


def peak_count(x: np.ndarray, support: int) -> int:
    """Samples strictly greater than all neighbours within +/- support."""
    x = np.asarray(x, dtype=float)
    if x.size < 2 * support + 1:
        return 0
    core = x[support:-support]
    ok = np.ones(core.size, dtype=bool)
    for k in range(1, support + 1):
        ok &= (core > x[support - k:-support - k]) & (core > x[support + k:x.size - support + k])
    return int(ok.sum())


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    family: str
    params: tuple  # ((key, value), ...) so entries stay hashable


@dataclass(frozen=True)
class CatalogManifest:
    entries: tuple

    def __post_init__(self):
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise ContractViolation("catalog feature names must be unique")

    @property
    def per_lead_count(self) -> int:
        return len(self.entries)

    @property
    def names(self) -> tuple:
        return tuple(e.name for e in self.entries)


def build_default_catalog() -> CatalogManifest:
    entries = []
    for name in DESCRIPTIVE_NAMES:
        entries.append(CatalogEntry(name, "descriptive", ()))
    entries.append(CatalogEntry("sample_entropy_m2", "sample_entropy",
                                (("m", ENTROPY_M), ("r_frac", ENTROPY_R_FRAC))))
    entries.append(CatalogEntry("approx_entropy_m2", "approximate_entropy",
                                (("m", ENTROPY_M), ("r_frac", ENTROPY_R_FRAC))))
    for k in range(1, AR_ORDER + 1):
        entries.append(CatalogEntry(f"ar_coef_{k}", "ar", (("order", AR_ORDER), ("k", k))))
    for k in range(FFT_COEFFS):
        for part in ("real", "imag", "abs", "angle"):
            entries.append(CatalogEntry(f"fft_{part}_{k}", "fft", (("k", k), ("part", part))))
    for w in CWT_WIDTHS:
        for p in CWT_POSITIONS:
            entries.append(CatalogEntry(f"cwt_w{w}_p{int(p * 100)}", "cwt",
                                        (("width", w), ("position", p))))
    for lo, hi in CHANGE_QUANTILE_CORRIDORS:
        for agg in ("mean", "var"):
            entries.append(CatalogEntry(f"cq_{lo}_{hi}_{agg}", "change_quantiles",
                                        (("ql", lo), ("qh", hi), ("agg", agg))))
    for agg in ("max", "mean"):
        for stat in ("slope", "intercept", "stderr"):
            entries.append(CatalogEntry(f"trend_{agg}_{stat}", "linear_trend",
                                        (("agg", agg), ("stat", stat), ("chunk", TREND_CHUNK))))
    for s in PEAK_SUPPORTS:
        entries.append(CatalogEntry(f"peak_count_s{s}", "peak_count", (("support", s),)))
    return CatalogManifest(tuple(entries))


DEFAULT_CATALOG = build_default_catalog()


def extract_lead_features(x: np.ndarray, manifest: CatalogManifest = DEFAULT_CATALOG) -> tuple[np.ndarray, int]:
    """Evaluate every catalog entry on one signal; returns (values, degenerate-flag count)."""
    with np.errstate(over="ignore", invalid="ignore"):  # guard below zeroes non-finites
        return _extract_lead_features(x, manifest)


def _extract_lead_features(x, manifest):
    x = np.asarray(x, dtype=float)
    values: dict[str, float] = {}
    flags = 0

    stats, f = descriptive_stats(x)
    flags += f
    values.update(stats)
    se, f = sample_entropy(x)
    flags += f
    values["sample_entropy_m2"] = se
    ae, f = approximate_entropy(x)
    flags += f
    values["approx_entropy_m2"] = ae
    ar, f = ar_coefficients(x)
    flags += f
    for k in range(AR_ORDER):
        values[f"ar_coef_{k + 1}"] = float(ar[k])
    values.update(fft_features(x))
    values.update(cwt_features(x))
    for lo, hi in CHANGE_QUANTILE_CORRIDORS:
        for agg in ("mean", "var"):
            values[f"cq_{lo}_{hi}_{agg}"] = change_quantiles(x, lo, hi, agg)
    trend, f = linear_trend_agg(x)
    flags += f
    values.update(trend)
    for s in PEAK_SUPPORTS:
        values[f"peak_count_s{s}"] = float(peak_count(x, s))

    out = np.empty(manifest.per_lead_count)
    for i, entry in enumerate(manifest.entries):
        v = values[entry.name]
        if not np.isfinite(v):  # last-resort guard; families already avoid this
            v = 0.0
            flags += 1
        out[i] = v
    return out, flags


def manifest_text(manifest: CatalogManifest) -> str:
    lines = ["name,family,params"]
    for e in manifest.entries:
        params = ";".join(f"{k}={v}" for k, v in e.params)
        lines.append(f"{e.name},{e.family},{params}")
    return "\n".join(lines) + "\n"


def manifest_hash(names) -> str:
    """Stable identity of a feature-column layout (order-sensitive)."""
    joined = "\n".join(names)
    return hashlib.sha256(joined.encode()).hexdigest()[:16]
