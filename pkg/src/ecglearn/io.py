"""Record parsing and challenge-format prediction output.

Disk layout per record: a text header ``<id>.hea`` plus a companion signal
file ``<id>.csv`` (one row per sample, 12 comma-separated lead columns in
millivolts, standard lead order I, II, III, aVR, aVL, aVF, V1..V6).
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, FormatError, ParseError, UnsupportedRecord
from .labels import LabelTable, default_label_table

LEAD_NAMES = ("I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6")

SEX_MALE = "male"
SEX_FEMALE = "female"
SEX_UNKNOWN = "unknown"

SIGNAL_DECIMALS = 6  # fixed decimal text precision for signal files


@dataclass
class EcgRecord:
    """One 12-lead recording with its metadata and scored diagnosis labels."""

    id: str
    leads: np.ndarray  # (12, n_samples) millivolts
    fs: int
    age: int | None = None
    sex: str = SEX_UNKNOWN
    labels: frozenset = field(default_factory=frozenset)  # abbreviations

    def __post_init__(self):
        self.leads = np.asarray(self.leads, dtype=float)
        if self.leads.ndim != 2 or self.leads.shape[0] != 12:
            raise ContractViolation("leads must be a 12 x n_samples matrix")
        if self.leads.shape[1] < 1:
            raise ContractViolation("leads must contain at least one sample")
        if self.fs <= 0:
            raise ContractViolation("sampling rate must be positive")

    @property
    def n_samples(self) -> int:
        return self.leads.shape[1]

    @property
    def lead_names(self) -> tuple:
        return LEAD_NAMES


@dataclass
class ParsedHeader:
    id: str
    fs: int
    n_samples: int
    n_leads: int
    age: int | None
    sex: str
    labels: frozenset  # abbreviations
    dropped_codes: int  # unscored / out-of-range metadata entries


def _parse_age(text: str) -> tuple[int | None, int]:
    text = text.strip()
    if not text or text.lower() in ("nan", "unknown", "none", "na"):
        return None, 0
    try:
        age = int(round(float(text)))
    except ValueError:
        return None, 1
    if age < 0 or age > 120:
        return None, 1
    return age, 0


def _parse_sex(text: str) -> str:
    t = text.strip().lower()
    if t in ("male", "m"):
        return SEX_MALE
    if t in ("female", "f"):
        return SEX_FEMALE
    return SEX_UNKNOWN


def parse_header(text: str, table: LabelTable | None = None) -> ParsedHeader:
    """Parse a PhysioNet-style text header.

    Line 1 is ``<id> <n_leads> <fs> <n_samples>``; comment lines carry
    ``#Age:``, ``#Sex:`` and ``#Dx:`` (comma-separated SNOMED codes).
    Codes outside the 27 scored diagnoses are dropped and counted, not errors.
    """
    if table is None:
        table = default_label_table()
    if not text or not text.strip():
        raise ParseError("empty header")
    lines = text.strip().splitlines()
    first = lines[0].split()
    if len(first) < 4:
        raise ParseError(f"malformed first header line: {lines[0]!r}")
    rec_id = first[0]
    try:
        n_leads = int(first[1])
        fs = int(first[2])
        n_samples = int(first[3])
    except ValueError as exc:
        raise ParseError(f"non-numeric field in first header line: {lines[0]!r}") from exc
    if fs <= 0 or n_samples <= 0:
        raise ParseError("sampling rate and sample count must be positive")
    if n_leads != 12:
        raise UnsupportedRecord(f"expected 12 leads, header declares {n_leads}")

    age: int | None = None
    sex = SEX_UNKNOWN
    labels: set[str] = set()
    dropped = 0
    for line in lines[1:]:
        stripped = line.strip()
        if stripped.startswith("#Age:"):
            age, bad = _parse_age(stripped[len("#Age:"):])
            dropped += bad
        elif stripped.startswith("#Sex:"):
            sex = _parse_sex(stripped[len("#Sex:"):])
        elif stripped.startswith("#Dx:"):
            for code in stripped[len("#Dx:"):].split(","):
                code = code.strip()
                if not code:
                    continue
                if code in table.codes:
                    labels.add(table.abbrev_for_code(code))
                else:
                    dropped += 1
    return ParsedHeader(rec_id, fs, n_samples, n_leads, age, sex, frozenset(labels), dropped)


def write_header(record: EcgRecord, table: LabelTable | None = None) -> str:
    if table is None:
        table = default_label_table()
    age_text = "NaN" if record.age is None else str(record.age)
    sex_text = {SEX_MALE: "Male", SEX_FEMALE: "Female"}.get(record.sex, "Unknown")
    codes = ",".join(table.code_for_abbrev(a) for a in sorted(record.labels))
    lines = [
        f"{record.id} 12 {record.fs} {record.n_samples}",
        f"#Age: {age_text}",
        f"#Sex: {sex_text}",
        f"#Dx: {codes}",
    ]
    return "\n".join(lines) + "\n"


def read_signal(path, expected_samples: int | None = None) -> np.ndarray:
    """Read the companion CSV into a (12, n) matrix of millivolts."""
    rows = []
    with open(path) as fh:
        for ln_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            cells = line.split(",")
            if len(cells) != 12:
                raise FormatError(f"{path}: line {ln_no} has {len(cells)} columns, expected 12")
            try:
                rows.append([float(c) for c in cells])
            except ValueError as exc:
                raise FormatError(f"{path}: non-numeric cell on line {ln_no}") from exc
    if not rows:
        raise FormatError(f"{path}: no samples")
    sig = np.asarray(rows, dtype=float).T  # samples x leads -> leads x samples
    if expected_samples is not None and sig.shape[1] != expected_samples:
        raise FormatError(
            f"{path}: {sig.shape[1]} samples but header declares {expected_samples}"
        )
    return sig


def write_signal(path, leads: np.ndarray) -> None:
    leads = np.asarray(leads, dtype=float)
    with open(path, "w") as fh:
        for row in leads.T:
            fh.write(",".join(f"{v:.{SIGNAL_DECIMALS}f}" for v in row) + "\n")


def read_record(base_path, table: LabelTable | None = None) -> EcgRecord:
    """Load ``<base>.hea`` + ``<base>.csv`` into an :class:`EcgRecord`."""
    base = str(base_path)
    with open(base + ".hea") as fh:
        header = parse_header(fh.read(), table)
    leads = read_signal(base + ".csv", expected_samples=header.n_samples)
    return EcgRecord(
        id=header.id, leads=leads, fs=header.fs,
        age=header.age, sex=header.sex, labels=header.labels,
    )


def write_record(record: EcgRecord, directory, table: LabelTable | None = None) -> str:
    """Write ``<id>.hea`` + ``<id>.csv`` under ``directory``; returns the base path."""
    base = os.path.join(str(directory), record.id)
    with open(base + ".hea", "w") as fh:
        fh.write(write_header(record, table))
    write_signal(base + ".csv", record.leads)
    return base


def write_predictions(
    record_id: str,
    table: LabelTable,
    binary: np.ndarray,
    scores: np.ndarray,
) -> str:
    """Challenge output text: ``#<id>`` then codes, 0/1 row, probability row."""
    binary = np.asarray(binary)
    scores = np.asarray(scores, dtype=float)
    n = len(table)
    if binary.shape != (n,) or scores.shape != (n,):
        raise ContractViolation(f"binary and scores must both have length {n}")
    if scores.min() < 0.0 or scores.max() > 1.0:
        raise ContractViolation("scores must lie in [0, 1]")
    lines = [
        f"#{record_id}",
        ",".join(table.codes),
        ",".join(str(int(b)) for b in binary),
        ",".join(f"{s:.6f}" for s in scores),
    ]
    return "\n".join(lines) + "\n"


def read_predictions(text: str, table: LabelTable) -> tuple[str, np.ndarray, np.ndarray]:
    """Inverse of :func:`write_predictions`.

    Leading ``# ``-prefixed lines (hash-space) are provenance comments and are
    skipped; a bare ``#<id>`` line carries the record id.
    """
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    rec_id = ""
    while lines and lines[0].startswith("#"):
        if not lines[0].startswith("# "):
            rec_id = lines[0][1:].strip()
        lines = lines[1:]
    if len(lines) != 3:
        raise FormatError("prediction text must contain code, binary and score rows")
    codes = lines[0].split(",")
    if list(codes) != list(table.codes):
        raise FormatError("prediction columns do not match the label table")
    try:
        binary = np.array([int(v) for v in lines[1].split(",")])
        scores = np.array([float(v) for v in lines[2].split(",")])
    except ValueError as exc:
        raise FormatError("non-numeric prediction cell") from exc
    if binary.size != len(table) or scores.size != len(table):
        raise FormatError("prediction rows have the wrong length")
    return rec_id, binary, scores
