"""Patient-year record encoding and the input CSV schema.

A coded record is a fixed-width 81-bit row.  Field order and widths are part
of the on-disk share format, so they must never change silently:

    token:64  year:2  age_band:3  sex:2  race:3  ethnicity:2
    denominator:1  numerator:1  excluded:1  multi_site:1  is_dummy:1

Rows serialize most-significant-bit first and are zero padded to 11 bytes.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .errors import CsvError, SchemaError

RECORD_FIELDS: tuple[tuple[str, int], ...] = (
    ("token", 64),
    ("year", 2),
    ("age_band", 3),
    ("sex", 2),
    ("race", 3),
    ("ethnicity", 2),
    ("denominator", 1),
    ("numerator", 1),
    ("excluded", 1),
    ("multi_site", 1),
    ("is_dummy", 1),
)
RECORD_BITS = sum(w for _, w in RECORD_FIELDS)  # 81
RECORD_BYTES = (RECORD_BITS + 7) // 8  # 11

# All-ones token is reserved for padding rows so they sort after real rows.
PAD_TOKEN = 2**64 - 1

AGE_BANDS: tuple[tuple[int, int], ...] = (
    (18, 28), (29, 39), (40, 50), (51, 61), (62, 72), (73, 83), (84, 100),
)
AGE_BAND_LABELS = tuple(f"{lo}-{hi}" for lo, hi in AGE_BANDS)

SEX_LABELS = ("Female", "Male", "Unknown")
RACE_LABELS = (
    "American Indian",
    "Asian",
    "Black",
    "Native Hawaiian or Pacific Islander",
    "White",
    "Unknown",
)
ETHNICITY_LABELS = ("Hispanic", "Non-Hispanic", "Unknown")

SEX_UNKNOWN = 2
RACE_UNKNOWN = 5
ETHNICITY_UNKNOWN = 2

# Strata domain per study year: 7 age bands x 3 sexes x 6 races x 3 ethnicities.
STRATA_PER_YEAR = len(AGE_BANDS) * len(SEX_LABELS) * len(RACE_LABELS) * len(ETHNICITY_LABELS)

CSV_COLUMNS = (
    "participant_token", "site_id", "study_year", "age", "sex", "race",
    "ethnicity", "htn_dx", "sbp", "dbp", "ambulatory", "deceased",
    "pregnant", "renal", "transplant", "inpatient", "multi_site",
)


@dataclass(frozen=True)
class CodedRecord:
    """One patient-year row in cleartext, already regularized."""

    token: int
    year: int
    age_band: int
    sex: int
    race: int
    ethnicity: int
    denominator: int
    numerator: int
    excluded: int
    multi_site: int
    is_dummy: int = 0

    def __post_init__(self):
        for name, width in RECORD_FIELDS:
            v = getattr(self, name)
            if not 0 <= v < (1 << width):
                raise SchemaError(f"field {name}={v} does not fit in {width} bits")
        if self.numerator and not self.denominator:
            raise SchemaError("numerator flag requires denominator flag")

    def field_values(self) -> tuple[int, ...]:
        return tuple(getattr(self, name) for name, _ in RECORD_FIELDS)


def pack_record(rec: CodedRecord) -> bytes:
    """Serialize to 11 bytes, fields MSB-first, zero padded."""
    acc = 0
    for name, width in RECORD_FIELDS:
        acc = (acc << width) | getattr(rec, name)
    acc <<= RECORD_BYTES * 8 - RECORD_BITS
    return acc.to_bytes(RECORD_BYTES, "big")


def unpack_record(buf: bytes) -> CodedRecord:
    if len(buf) != RECORD_BYTES:
        raise SchemaError(f"record row must be {RECORD_BYTES} bytes, got {len(buf)}")
    acc = int.from_bytes(buf, "big") >> (RECORD_BYTES * 8 - RECORD_BITS)
    values = {}
    for name, width in reversed(RECORD_FIELDS):
        values[name] = acc & ((1 << width) - 1)
        acc >>= width
    return CodedRecord(**values)


def age_to_band(age: int) -> int | None:
    """Band index for an age, or None when outside the studied 18-100 range."""
    for idx, (lo, hi) in enumerate(AGE_BANDS):
        if lo <= age <= hi:
            return idx
    return None


def _parse_bool(row: Mapping[str, str], column: str, rownum: int) -> int:
    raw = row[column].strip()
    if raw == "0":
        return 0
    if raw == "1":
        return 1
    raise CsvError(f"expected 0 or 1, got {raw!r}", row=rownum, column=column)


def _parse_int(row: Mapping[str, str], column: str, rownum: int) -> int:
    raw = row[column].strip()
    try:
        return int(raw, 10)
    except ValueError:
        raise CsvError(f"expected an integer, got {raw!r}", row=rownum, column=column) from None


def encode_record(row: Mapping[str, str], years: Sequence[int], rownum: int = 0) -> CodedRecord | None:
    """Regularize one raw CSV row.

    Returns None for rows that do not qualify for the study (non-ambulatory,
    age outside 18-100, study year outside the configured window).  Malformed
    numeric or boolean fields raise CsvError; unrecognized demographic strings
    fall back to the Unknown code.
    """
    token = _parse_int(row, "participant_token", rownum)
    if not 0 <= token < PAD_TOKEN:
        raise CsvError(f"token {token} out of range", row=rownum, column="participant_token")

    study_year = _parse_int(row, "study_year", rownum)
    if study_year not in years:
        return None

    if _parse_bool(row, "ambulatory", rownum) == 0:
        return None

    age = _parse_int(row, "age", rownum)
    band = age_to_band(age)
    if band is None:
        return None

    sbp = _parse_int(row, "sbp", rownum)
    dbp = _parse_int(row, "dbp", rownum)
    if sbp < 0 or dbp < 0:
        raise CsvError("blood pressure values must be non-negative", row=rownum, column="sbp")

    htn = _parse_bool(row, "htn_dx", rownum)
    excluded = (
        _parse_bool(row, "deceased", rownum)
        | _parse_bool(row, "pregnant", rownum)
        | _parse_bool(row, "renal", rownum)
        | _parse_bool(row, "transplant", rownum)
        | _parse_bool(row, "inpatient", rownum)
    )

    sex = SEX_LABELS.index(row["sex"]) if row["sex"] in SEX_LABELS else SEX_UNKNOWN
    race = RACE_LABELS.index(row["race"]) if row["race"] in RACE_LABELS else RACE_UNKNOWN
    eth = (
        ETHNICITY_LABELS.index(row["ethnicity"])
        if row["ethnicity"] in ETHNICITY_LABELS
        else ETHNICITY_UNKNOWN
    )

    # Uncontrolled blood pressure reads disjunctively with strict comparisons.
    uncontrolled = 1 if (sbp > 140 or dbp > 90) else 0
    return CodedRecord(
        token=token,
        year=list(years).index(study_year),
        age_band=band,
        sex=sex,
        race=race,
        ethnicity=eth,
        denominator=htn,
        numerator=htn & uncontrolled,
        excluded=excluded,
        multi_site=_parse_bool(row, "multi_site", rownum),
    )


def read_site_csv(source, years: Sequence[int]) -> list[CodedRecord]:
    """Parse one site's CSV into coded records, dropping ineligible rows.

    `source` is a path or a file-like object.  The header row is mandatory
    and must match the schema exactly.  Duplicate (token, year) rows within
    one site violate the input contract and are rejected.
    """
    if hasattr(source, "read"):
        return _read_rows(source, years)
    with open(source, newline="", encoding="utf-8") as fh:
        return _read_rows(fh, years)


def _read_rows(fh, years: Sequence[int]) -> list[CodedRecord]:
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise CsvError("missing header row") from None
    if tuple(header) != CSV_COLUMNS:
        raise CsvError(f"bad header: expected {','.join(CSV_COLUMNS)}")

    out: list[CodedRecord] = []
    seen: set[tuple[int, int]] = set()
    for rownum, values in enumerate(reader, start=2):
        if len(values) != len(CSV_COLUMNS):
            raise CsvError(f"expected {len(CSV_COLUMNS)} columns, got {len(values)}", row=rownum)
        rec = encode_record(dict(zip(CSV_COLUMNS, values)), years, rownum)
        if rec is None:
            continue
        key = (rec.token, rec.year)
        if key in seen:
            raise CsvError(f"duplicate (token, year) pair {key}", row=rownum)
        seen.add(key)
        out.append(rec)
    return out


def write_site_csv(rows: Iterable[Mapping[str, str]], fh: io.TextIOBase) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([row[c] for c in CSV_COLUMNS])
