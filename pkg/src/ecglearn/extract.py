"""Per-record feature extraction: cleaning, delineation, then the three families.

Each lead contributes a template vector, a waveform vector and an HRV vector.
Leads where too few beats can be found contribute zero vectors for the
beat-dependent categories and bump the record's flag count; waveform features
are always computable.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import assemble
from .delineate import (
    beat_window_bounds, detect_r_peaks, mean_heart_rate, quality_curve, select_template,
)
from .errors import ContractViolation, InsufficientBeats
from .features import CatalogManifest, DEFAULT_CATALOG, extract_lead_features
from .hrv import HRV_NAMES, hrv_vector, rr_intervals
from .io import EcgRecord
from .preprocess import (
    DEFAULT_HIGHPASS_CUTOFF_HZ, DEFAULT_HIGHPASS_ORDER, DEFAULT_SMOOTH_WIDTH_S,
    RATE_CAP_HZ, WAVEFORM_CROP_SAMPLES, cap_rate_500, clean_lead, crop_middle,
)


@dataclass(frozen=True)
class PrepConfig:
    highpass_cutoff: float = DEFAULT_HIGHPASS_CUTOFF_HZ
    highpass_order: int = DEFAULT_HIGHPASS_ORDER
    smooth_width_s: float = DEFAULT_SMOOTH_WIDTH_S
    rate_cap: int = RATE_CAP_HZ
    crop_samples: int = WAVEFORM_CROP_SAMPLES


@dataclass
class RecordFeatures:
    record_id: str
    waveform: np.ndarray  # (12, n_catalog)
    template: np.ndarray  # (12, n_catalog)
    hrv: np.ndarray       # (12, n_hrv)
    age: int | None
    sex: str
    flags: int            # degenerate computations + beat-less lead fills


def extract_record_features(
    record: EcgRecord,
    catalog: CatalogManifest = DEFAULT_CATALOG,
    prep: PrepConfig = PrepConfig(),
) -> RecordFeatures:
    n_cat = catalog.per_lead_count
    waveform = np.zeros((12, n_cat))
    template = np.zeros((12, n_cat))
    hrv = np.zeros((12, len(HRV_NAMES)))
    flags = 0

    for li in range(12):
        cleaned = clean_lead(
            record.leads[li], record.fs,
            prep.highpass_cutoff, prep.highpass_order, prep.smooth_width_s,
        )
        capped, _ = cap_rate_500(cleaned, record.fs, prep.rate_cap)
        waveform[li], f = extract_lead_features(crop_middle(capped, prep.crop_samples), catalog)
        flags += f
        try:
            r_peaks = detect_r_peaks(cleaned, record.fs)
            hr = mean_heart_rate(r_peaks, record.fs)
            bounds = beat_window_bounds(hr, record.fs)
            quality = quality_curve(cleaned, r_peaks, record.fs)
            tpl = select_template(cleaned, r_peaks, quality, bounds, record.fs)
            template[li], f = extract_lead_features(tpl.window, catalog)
            flags += f
            rr = rr_intervals(r_peaks, record.fs)
            if rr.size >= 2:
                hrv[li] = hrv_vector(rr)
            else:
                flags += 1
        except InsufficientBeats:
            flags += 1  # beat-dependent categories stay zero for this lead
    return RecordFeatures(
        record_id=record.id, waveform=waveform, template=template, hrv=hrv,
        age=record.age, sex=record.sex, flags=flags,
    )


def _extract_one(args) -> RecordFeatures:
    record, catalog, prep = args
    return extract_record_features(record, catalog, prep)


def extract_many(
    records: list,
    catalog: CatalogManifest = DEFAULT_CATALOG,
    prep: PrepConfig = PrepConfig(),
    n_jobs: int = 1,
) -> list:
    """Extract every record, optionally fanning out over worker processes."""
    if n_jobs <= 1 or len(records) < 4:
        return [extract_record_features(r, catalog, prep) for r in records]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        chunk = max(1, len(records) // (4 * n_jobs))
        return list(pool.map(_extract_one, [(r, catalog, prep) for r in records],
                             chunksize=chunk))


def build_feature_matrix(
    feature_list: list,
    age_fill: float,
    catalog: CatalogManifest = DEFAULT_CATALOG,
) -> assemble.FeatureMatrix:
    columns = assemble.column_names(catalog)
    rows = np.empty((len(feature_list), len(columns)))
    for i, rf in enumerate(feature_list):
        rows[i] = assemble.assemble_record(rf.waveform, rf.template, rf.hrv,
                                           rf.age, rf.sex, age_fill)
    return assemble.FeatureMatrix(
        ids=[rf.record_id for rf in feature_list],
        columns=columns,
        values=rows,
        flags=[rf.flags for rf in feature_list],
    )


class EcgFeatureExtractor(BaseEstimator, TransformerMixin):
    """Records-in, feature-matrix-out transformer.

    ``fit`` learns the age-imputation median from the training records;
    ``transform`` produces the numeric matrix in canonical column order.
    """

    def __init__(self, catalog: CatalogManifest | None = None,
                 prep: PrepConfig | None = None, n_jobs: int = 1):
        self.catalog = catalog
        self.prep = prep
        self.n_jobs = n_jobs

    def _catalog(self) -> CatalogManifest:
        return self.catalog if self.catalog is not None else DEFAULT_CATALOG

    def fit(self, records, y=None):
        if not records:
            raise ContractViolation("need at least one record")
        self.age_median_ = assemble.age_median([r.age for r in records])
        self.feature_names_ = assemble.column_names(self._catalog())
        return self

    def transform(self, records) -> np.ndarray:
        if not hasattr(self, "age_median_"):
            raise ContractViolation("extractor is not fitted")
        feats = extract_many(records, self._catalog(),
                             self.prep or PrepConfig(), self.n_jobs)
        return build_feature_matrix(feats, self.age_median_, self._catalog()).values

    def get_feature_names_out(self, input_features=None):
        return np.asarray(self.feature_names_)
