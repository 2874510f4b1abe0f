"""The fixed 27-diagnosis label table and the clinical-similarity weight matrix.

The table order is canonical for the whole package: weight-matrix rows and
columns, prediction vectors, and report columns all follow it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, FormatError

# (SNOMED CT code, abbreviation), ordered alphabetically by abbreviation.
_SCORED_CODES = (
    ("164889003", "AF"),
    ("164890007", "AFL"),
    ("426627000", "Brady"),
    ("713427006", "CRBBB"),
    ("270492004", "IAVB"),
    ("713426002", "IRBBB"),
    ("39732003", "LAD"),
    ("445118002", "LAnFB"),
    ("164909002", "LBBB"),
    ("164947007", "LPR"),
    ("251146004", "LQRSV"),
    ("111975006", "LQT"),
    ("698252002", "NSIVCB"),
    ("284470004", "PAC"),
    ("10370003", "PR"),
    ("427172004", "PVC"),
    ("164917005", "QAb"),
    ("47665007", "RAD"),
    ("59118001", "RBBB"),
    ("427393009", "SA"),
    ("426177001", "SB"),
    ("426783006", "SNR"),
    ("427084000", "STach"),
    ("63593006", "SVPB"),
    ("164934002", "TAb"),
    ("59931005", "TInv"),
    ("17338001", "VPB"),
)

NORMAL_ABBREV = "SNR"


@dataclass(frozen=True)
class LabelTable:
    """Ordered diagnosis codes with their abbreviations."""

    codes: tuple = field(default_factory=lambda: tuple(c for c, _ in _SCORED_CODES))
    abbrevs: tuple = field(default_factory=lambda: tuple(a for _, a in _SCORED_CODES))

    def __post_init__(self):
        if len(self.codes) != len(self.abbrevs):
            raise ContractViolation("codes and abbreviations must align")
        if len(set(self.abbrevs)) != len(self.abbrevs):
            raise ContractViolation("abbreviations must be unique")

    def __len__(self):
        return len(self.codes)

    def index_of_code(self, code: str) -> int:
        return self.codes.index(code)

    def index_of_abbrev(self, abbrev: str) -> int:
        return self.abbrevs.index(abbrev)

    def abbrev_for_code(self, code: str) -> str:
        return self.abbrevs[self.codes.index(code)]

    def code_for_abbrev(self, abbrev: str) -> str:
        return self.codes[self.abbrevs.index(abbrev)]

    @property
    def normal_index(self) -> int:
        return self.abbrevs.index(NORMAL_ABBREV)


def default_label_table() -> LabelTable:
    """The 27 scored diagnoses."""
    return LabelTable()


def validate_weight_matrix(w: np.ndarray, table: LabelTable) -> np.ndarray:
    """Check similarity-weight invariants: square, diagonal 1, symmetric, [0,1]."""
    w = np.asarray(w, dtype=float)
    n = len(table)
    if w.shape != (n, n):
        raise ContractViolation(f"weight matrix must be {n}x{n}, got {w.shape}")
    if not np.allclose(np.diag(w), 1.0):
        raise ContractViolation("weight matrix diagonal must be 1")
    if not np.allclose(w, w.T):
        raise ContractViolation("weight matrix must be symmetric")
    if w.min() < 0.0 or w.max() > 1.0:
        raise ContractViolation("weights must lie in [0, 1]")
    return w


def identity_weights(table: LabelTable) -> np.ndarray:
    return np.eye(len(table))


def write_weight_matrix(path, w: np.ndarray, table: LabelTable) -> None:
    """CSV with an abbreviation header row and a leading abbreviation column."""
    w = validate_weight_matrix(w, table)
    lines = ["," + ",".join(table.abbrevs)]
    for i, ab in enumerate(table.abbrevs):
        lines.append(ab + "," + ",".join(f"{v:.6f}" for v in w[i]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_weight_matrix(path, table: LabelTable) -> np.ndarray:
    """Parse the CSV layout written by :func:`write_weight_matrix`.

    Rows/columns may appear in any order; they are mapped back to table order
    by abbreviation.
    """
    with open(path) as fh:
        rows = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    if not rows:
        raise FormatError(f"empty weight matrix file: {path}")
    header = rows[0].split(",")
    col_names = [c for c in header[1:]]
    if sorted(col_names) != sorted(table.abbrevs):
        raise FormatError("weight matrix columns do not match the label table")
    n = len(table)
    w = np.zeros((n, n))
    seen = set()
    for row in rows[1:]:
        parts = row.split(",")
        name = parts[0]
        if name not in table.abbrevs:
            raise FormatError(f"unknown row label {name!r}")
        if len(parts) != n + 1:
            raise FormatError(f"row {name!r} has {len(parts) - 1} values, expected {n}")
        i = table.index_of_abbrev(name)
        seen.add(name)
        for cname, cell in zip(col_names, parts[1:]):
            try:
                w[i, table.index_of_abbrev(cname)] = float(cell)
            except ValueError as exc:
                raise FormatError(f"non-numeric weight in row {name!r}") from exc
    if len(seen) != n:
        raise FormatError("weight matrix is missing rows")
    return validate_weight_matrix(w, table)
