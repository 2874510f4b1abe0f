"""Synthetic 12-lead ECG generator with exact ground-truth annotations.

Each beat is a sum of five Gaussian bumps (P, Q, R, S, T) placed relative to
the beat center, so every component position is known analytically. Realism
is deliberately limited to what the downstream detectors need: rate, rhythm
irregularity, baseline drift, white noise and per-lead amplitude diversity.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation
from .io import LEAD_NAMES, SEX_FEMALE, SEX_MALE, EcgRecord

# (offset s relative to beat center, amplitude mV, width s)
DEFAULT_COMPONENTS = {
    "P": (-0.180, 0.15, 0.025),
    "Q": (-0.035, -0.10, 0.008),
    "R": (0.000, 1.00, 0.010),
    "S": (0.035, -0.15, 0.008),
    "T": (0.280, 0.30, 0.060),
}

# Positive scalings only: polarity correction is a documented non-goal of the
# delineator, so inverted leads are out of scope for the generator too.
DEFAULT_LEAD_SCALES = (1.0, 1.1, 0.8, 0.7, 0.6, 0.9, 0.75, 1.05, 1.2, 1.15, 1.0, 0.85)


@dataclass
class SynthSpec:
    hr_bpm: float = 60.0
    hr_jitter_frac: float = 0.0
    fs: int = 500
    duration_s: float = 10.0
    noise_std_mv: float = 0.0
    drift_amp_mv: float = 0.0
    drift_freq_hz: float = 0.25
    components: dict = field(default_factory=lambda: dict(DEFAULT_COMPONENTS))
    lead_scales: tuple = DEFAULT_LEAD_SCALES
    seed: int = 0

    def validate(self) -> None:
        if self.fs < 100:
            raise ContractViolation("synthetic fs must be >= 100 Hz")
        if self.duration_s < 2.0:
            raise ContractViolation("duration must be >= 2 s")
        if self.hr_bpm <= 0:
            raise ContractViolation("heart rate must be positive")
        if any(w <= 0 for _, _, w in self.components.values()):
            raise ContractViolation("component widths must be positive")
        if len(self.lead_scales) != 12:
            raise ContractViolation("need 12 lead scales")


@dataclass
class GroundTruth:
    """Sample-index annotations the generator knows by construction."""

    r_samples: np.ndarray
    component_samples: dict  # wave name -> per-beat sample indices
    beat_centers_s: np.ndarray


def generate_record(spec: SynthSpec, record_id: str = "SYN0001") -> tuple[EcgRecord, GroundTruth]:
    """Build one 12-lead record plus its ground truth."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    rr_mean = 60.0 / spec.hr_bpm

    centers = []
    c = 0.5 * rr_mean
    while c < spec.duration_s:
        centers.append(c)
        rr = rr_mean * (1.0 + spec.hr_jitter_frac * rng.uniform(-1.0, 1.0))
        c += rr
    centers = np.asarray(centers)

    n = int(np.floor(spec.duration_s * spec.fs + 0.5))
    t = np.arange(n) / spec.fs
    base = np.zeros(n)
    for c in centers:
        for off, amp, width in spec.components.values():
            mid = c + off
            lo = max(0, int((mid - 5 * width) * spec.fs))
            hi = min(n, int((mid + 5 * width) * spec.fs) + 1)
            if lo < hi:
                base[lo:hi] += amp * np.exp(-((t[lo:hi] - mid) ** 2) / (2.0 * width ** 2))
    if spec.drift_amp_mv:
        base = base + spec.drift_amp_mv * np.sin(2.0 * np.pi * spec.drift_freq_hz * t)

    leads = np.empty((12, n))
    for li, scale in enumerate(spec.lead_scales):
        noise = rng.normal(0.0, spec.noise_std_mv, n) if spec.noise_std_mv > 0 else 0.0
        leads[li] = scale * base + noise

    def to_samples(offset: float) -> np.ndarray:
        return np.clip(np.floor((centers + offset) * spec.fs + 0.5).astype(int), 0, n - 1)

    truth = GroundTruth(
        r_samples=to_samples(spec.components["R"][0]),
        component_samples={w: to_samples(off) for w, (off, _, _) in spec.components.items()},
        beat_centers_s=centers,
    )
    age = int(rng.integers(20, 90))
    sex = SEX_MALE if rng.integers(0, 2) == 0 else SEX_FEMALE
    record = EcgRecord(id=record_id, leads=leads, fs=spec.fs, age=age, sex=sex)
    return record, truth


@dataclass(frozen=True)
class ClassSpec:
    """Label definition over the generator parameters.

    A record matches the class when its drawn heart rate and rhythm jitter
    both fall inside the stated ranges, so one record can carry several labels.
    """

    hr_range: tuple
    jitter_range: tuple = (0.0, 0.08)

    def matches(self, hr: float, jitter: float) -> bool:
        return (self.hr_range[0] <= hr <= self.hr_range[1]
                and self.jitter_range[0] <= jitter <= self.jitter_range[1])


def generate_dataset(
    n: int,
    class_specs: dict,
    seed: int,
    base_spec: SynthSpec | None = None,
) -> list[EcgRecord]:
    """Draw ``n`` labeled records, cycling uniformly at random over the class specs."""
    if not class_specs:
        raise ContractViolation("need at least one class spec")
    rng = np.random.default_rng(seed)
    names = sorted(class_specs)
    base = base_spec or SynthSpec()
    records = []
    for i in range(n):
        cname = names[int(rng.integers(0, len(names)))]
        cs = class_specs[cname]
        hr = float(rng.uniform(*cs.hr_range))
        jitter = float(rng.uniform(*cs.jitter_range))
        spec = SynthSpec(
            hr_bpm=hr,
            hr_jitter_frac=jitter,
            fs=base.fs,
            duration_s=base.duration_s,
            noise_std_mv=base.noise_std_mv,
            drift_amp_mv=base.drift_amp_mv,
            drift_freq_hz=base.drift_freq_hz,
            components=dict(base.components),
            lead_scales=base.lead_scales,
            seed=int(rng.integers(0, 2 ** 31 - 1)),
        )
        record, _ = generate_record(spec, record_id=f"S{i:05d}")
        record.labels = frozenset(
            name for name in names if class_specs[name].matches(hr, jitter)
        )
        records.append(record)
    return records
