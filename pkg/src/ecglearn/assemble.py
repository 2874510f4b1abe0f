"""Record-level feature vector assembly and the feature-matrix file format.

Column layout is lead-major (I..V6); within a lead the category order is
template, waveform, hrv; the two metadata columns come last. Sex is encoded
male=1, female=0, unknown=0.5. Unknown age is imputed with the training-set
median, which is stored with the trained models for reuse at inference time.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, FormatError
from .features import CatalogManifest, DEFAULT_CATALOG, manifest_hash
from .hrv import HRV_NAMES
from .io import LEAD_NAMES, SEX_FEMALE, SEX_MALE

CATEGORY_ORDER = ("template", "waveform", "hrv")
META_COLUMNS = ("meta_age", "meta_sex")
AGE_FALLBACK = 60.0  # used only when a training set contains no known age at all

SEX_ENCODING = {SEX_MALE: 1.0, SEX_FEMALE: 0.0}


def column_names(catalog: CatalogManifest = DEFAULT_CATALOG, hrv_names=HRV_NAMES) -> list:
    """All feature-matrix column names in canonical order."""
    per_category = {"template": catalog.names, "waveform": catalog.names, "hrv": tuple(hrv_names)}
    names = []
    for lead in LEAD_NAMES:
        for cat in CATEGORY_ORDER:
            names.extend(f"{lead}_{cat}_{feat}" for feat in per_category[cat])
    names.extend(META_COLUMNS)
    return names


def row_length(n_waveform: int, n_template: int, n_hrv: int) -> int:
    return 12 * (n_waveform + n_template + n_hrv) + 2


def encode_sex(sex: str) -> float:
    return SEX_ENCODING.get(sex, 0.5)


def assemble_record(
    waveform: np.ndarray,
    template: np.ndarray,
    hrv: np.ndarray,
    age: float | None,
    sex: str,
    age_fill: float,
) -> np.ndarray:
    """Concatenate the 36 per-lead vectors plus encoded metadata into one row."""
    waveform = np.asarray(waveform, dtype=float)
    template = np.asarray(template, dtype=float)
    hrv = np.asarray(hrv, dtype=float)
    for block in (waveform, template, hrv):
        if block.ndim != 2 or block.shape[0] != 12:
            raise ContractViolation("per-category blocks must be 12 x n_features")
    parts = []
    for li in range(12):
        parts.extend((template[li], waveform[li], hrv[li]))
    parts.append(np.array([age_fill if age is None else float(age), encode_sex(sex)]))
    row = np.concatenate(parts)
    if not np.isfinite(row).all():
        raise ContractViolation("assembled rows must be finite")
    return row


@dataclass
class FeatureMatrix:
    ids: list
    columns: list
    values: np.ndarray  # (n_records, n_columns)
    flags: list = field(default_factory=list)  # per-record degenerate-fill counts

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.ids), len(self.columns)):
            raise ContractViolation("feature matrix shape does not match ids/columns")
        if not self.flags:
            self.flags = [0] * len(self.ids)

    @property
    def hash(self) -> str:
        return manifest_hash(self.columns)

    def restrict(self, feature_idx: np.ndarray) -> "FeatureMatrix":
        idx = np.asarray(feature_idx)
        return FeatureMatrix(
            ids=list(self.ids),
            columns=[self.columns[i] for i in idx],
            values=self.values[:, idx],
            flags=list(self.flags),
        )


def age_median(ages: list) -> float:
    """Median of the known ages; fixed fallback when none are known."""
    known = [a for a in ages if a is not None]
    return float(np.median(known)) if known else AGE_FALLBACK


def save_feature_matrix(path, matrix: FeatureMatrix, provenance: list | None = None) -> None:
    with open(path, "w") as fh:
        for line in provenance or []:
            fh.write(f"# {line}\n")
        fh.write(f"# manifest_hash={matrix.hash}\n")
        fh.write("record_id," + ",".join(matrix.columns) + "\n")
        for rid, row in zip(matrix.ids, matrix.values):
            fh.write(rid + "," + ",".join(f"{v:.10g}" for v in row) + "\n")


def load_feature_matrix(path) -> FeatureMatrix:
    ids, rows = [], []
    header = None
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split(",")
                if header[0] != "record_id":
                    raise FormatError(f"{path}: first column must be record_id")
                continue
            cells = line.split(",")
            if len(cells) != len(header):
                raise FormatError(f"{path}: ragged row for record {cells[0]!r}")
            ids.append(cells[0])
            try:
                rows.append([float(c) for c in cells[1:]])
            except ValueError as exc:
                raise FormatError(f"{path}: non-numeric feature cell in {cells[0]!r}") from exc
    if header is None:
        raise FormatError(f"{path}: empty feature matrix")
    return FeatureMatrix(ids=ids, columns=header[1:], values=np.asarray(rows, dtype=float))
