"""Revealed study output tables and their CSV rendering.

The results CSV has one row per (dimension, year, category) covering every
category of every dimension, Unknown included.  Suppressed counts render as
the literal "*"; parsing restores the suppressed flag with a zero count.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

from .errors import ValidationError
from .records import AGE_BAND_LABELS, ETHNICITY_LABELS, RACE_LABELS, SEX_LABELS
from .relational import DIMENSIONS

CATEGORY_LABELS = {
    "age": AGE_BAND_LABELS,
    "sex": SEX_LABELS,
    "race": RACE_LABELS,
    "ethnicity": ETHNICITY_LABELS,
}

RESULT_COLUMNS = ("dimension", "category", "year", "numerator", "denominator",
                  "numerator_multisite", "denominator_multisite")


@dataclass(frozen=True)
class OutputRow:
    dimension: str
    category: str
    year: int
    counts: tuple[int, int, int, int]          # num, den, num_ms, den_ms
    suppressed: tuple[bool, bool, bool, bool]

    def __post_init__(self):
        for c, s in zip(self.counts, self.suppressed):
            if s and c != 0:
                raise ValidationError("suppressed counters must carry 0")


@dataclass(frozen=True)
class StudyOutput:
    rows: tuple[OutputRow, ...]

    def cell(self, dimension: str, category: str, year: int) -> OutputRow:
        for row in self.rows:
            if (row.dimension, row.category, row.year) == (dimension, category, year):
                return row
        raise KeyError((dimension, category, year))

    def render_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for row in self.rows:
            cells = ["*" if s else str(c) for c, s in zip(row.counts, row.suppressed)]
            w.writerow([row.dimension, row.category, str(row.year), *cells])
        return buf.getvalue()

    @classmethod
    def parse_csv(cls, text: str) -> "StudyOutput":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or tuple(header) != RESULT_COLUMNS:
            raise ValidationError("bad results CSV header")
        rows = []
        for values in reader:
            if len(values) != len(RESULT_COLUMNS):
                raise ValidationError(f"bad results row: {values!r}")
            dim, cat, year = values[0], values[1], int(values[2])
            counts = []
            flags = []
            for cell in values[3:]:
                if cell == "*":
                    counts.append(0)
                    flags.append(True)
                else:
                    counts.append(int(cell))
                    flags.append(False)
            rows.append(OutputRow(dim, cat, year, tuple(counts), tuple(flags)))
        return cls(tuple(rows))


def output_lanes(years: tuple[int, ...]) -> list[tuple[str, int, int]]:
    """Canonical (dimension, year_index, category) order of the output tables."""
    lanes = []
    for dim in DIMENSIONS:
        for yi in range(len(years)):
            for cat in range(len(CATEGORY_LABELS[dim])):
                lanes.append((dim, yi, cat))
    return lanes


def build_output(years: tuple[int, ...], counts: list[tuple[int, int, int, int]],
                 suppressed: list[tuple[bool, bool, bool, bool]]) -> StudyOutput:
    lanes = output_lanes(years)
    if len(counts) != len(lanes):
        raise ValidationError("count rows do not match the output lane layout")
    rows = []
    for (dim, yi, cat), c, s in zip(lanes, counts, suppressed):
        rows.append(OutputRow(dim, CATEGORY_LABELS[dim][cat], years[yi], tuple(c), tuple(s)))
    return StudyOutput(tuple(rows))
