"""Single-process plaintext reference for the whole study pipeline.

Computes encode -> exclusion -> cross-site dedup -> cube -> rollup ->
suppression over raw CSVs with ordinary dictionaries.  The secure pipeline
must reproduce this output bit for bit.
"""

from __future__ import annotations

from collections import defaultdict

from .config import StudyConfig
from .records import CodedRecord, read_site_csv
from .relational import COUNTER_NAMES, DIMENSION_FIELD, strata_index
from .results import CATEGORY_LABELS, StudyOutput, build_output, output_lanes


def dedup_oracle(records: list[CodedRecord]) -> list[CodedRecord]:
    """Cross-site dedup: one survivor per (token, year), flags ORed.

    Survivors inherit demographics from the first record seen; records are
    conflict-free in every supported dataset, so the choice is immaterial.
    Any record excluded anywhere kills the whole (token, year) group.
    """
    groups: dict[tuple[int, int], list[CodedRecord]] = defaultdict(list)
    for rec in records:
        if not rec.is_dummy:
            groups[(rec.token, rec.year)].append(rec)
    out = []
    for (token, year), members in groups.items():
        if any(m.excluded for m in members):
            continue
        first = members[0]
        out.append(CodedRecord(
            token=token, year=year,
            age_band=first.age_band, sex=first.sex, race=first.race,
            ethnicity=first.ethnicity,
            denominator=max(m.denominator for m in members),
            numerator=max(m.numerator for m in members),
            excluded=0,
            multi_site=max(m.multi_site for m in members),
        ))
    return out


def cube_oracle(records: list[CodedRecord]) -> dict[int, list[int]]:
    """Per-strata (num, den, num_ms, den_ms) counts of deduplicated records."""
    cells: dict[int, list[int]] = defaultdict(lambda: [0, 0, 0, 0])
    for rec in records:
        idx = strata_index(rec.year, rec.age_band, rec.sex, rec.race, rec.ethnicity)
        cell = cells[idx]
        cell[0] += rec.numerator
        cell[1] += rec.denominator
        cell[2] += rec.numerator & rec.multi_site
        cell[3] += rec.denominator & rec.multi_site
    return dict(cells)


def rollup_oracle(cells: dict[int, list[int]], years: int) -> dict[tuple[str, int, int], list[int]]:
    """(dimension, year_index, category) -> four counter totals."""
    from .records import STRATA_PER_YEAR

    out: dict[tuple[str, int, int], list[int]] = defaultdict(lambda: [0, 0, 0, 0])
    for idx, counts in cells.items():
        year, rest = divmod(idx, STRATA_PER_YEAR)
        age, rest = divmod(rest, 54)
        sex, rest = divmod(rest, 18)
        race, eth = divmod(rest, 3)
        coords = {"age": age, "sex": sex, "race": race, "ethnicity": eth}
        for dim, cat in coords.items():
            cell = out[(dim, year, cat)]
            for i in range(4):
                cell[i] += counts[i]
    return dict(out)


def suppress_oracle(count: int, threshold: int) -> tuple[int, bool]:
    if 0 < count < threshold:
        return 0, True
    return count, False


def oracle_from_records(records: list[CodedRecord], config: StudyConfig) -> StudyOutput:
    survivors = dedup_oracle(records)
    rolled = rollup_oracle(cube_oracle(survivors), config.n_years)
    counts = []
    flags = []
    for dim, yi, cat in output_lanes(config.years):
        cell = rolled.get((dim, yi, cat), [0, 0, 0, 0])
        vals, supp = zip(*(suppress_oracle(c, config.suppression_threshold) for c in cell))
        counts.append(tuple(vals))
        flags.append(tuple(supp))
    return build_output(config.years, counts, flags)


def aggregate_only_oracle(site_records: list[list[CodedRecord]], config: StudyConfig) -> StudyOutput:
    """Reference for the no-linkage strategy: per-site local cubes summed."""
    totals: dict[int, list[int]] = defaultdict(lambda: [0, 0, 0, 0])
    for records in site_records:
        local = [r for r in records if not r.excluded and not r.is_dummy]
        for idx, counts in cube_oracle(local).items():
            cell = totals[idx]
            for i in range(4):
                cell[i] += counts[i]
    rolled = rollup_oracle(dict(totals), config.n_years)
    counts = []
    flags = []
    for dim, yi, cat in output_lanes(config.years):
        cell = rolled.get((dim, yi, cat), [0, 0, 0, 0])
        vals, supp = zip(*(suppress_oracle(c, config.suppression_threshold) for c in cell))
        counts.append(tuple(vals))
        flags.append(tuple(supp))
    return build_output(config.years, counts, flags)


def oracle_run(csv_sources: list, config: StudyConfig) -> StudyOutput:
    """Full plaintext study over per-site CSV paths or file-like objects."""
    pooled: list[CodedRecord] = []
    for src in csv_sources:
        pooled.extend(read_site_csv(src, config.years))
    return oracle_from_records(pooled, config)
