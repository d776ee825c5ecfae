"""Oblivious relational operators for the study pipeline.

Exclusion folding, cross-site deduplication, the strata data cube, cube
densification over the full Cartesian strata domain, cube addition, marginal
rollups, and threshold suppression.  Counter cells are 32-bit words; the
canonical dense cube orders cells by

    index = ((((year*7 + age)*3 + sex)*6 + race)*3 + ethnicity
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

from .bitops import block_mask, ones, rows_to_columns
from .engine import Engine, fold_or_lanes, vec_add_many, vec_lt
from .errors import DomainViolation, SchemaError, ValidationError
from .oblivious import DUMMY, ShareTable, bitonic_sort, scan_group_counts, segmented_scan
from .records import (AGE_BANDS, ETHNICITY_LABELS, RACE_LABELS, RECORD_FIELDS,
                      SEX_LABELS, STRATA_PER_YEAR, CodedRecord)
from .sharing import ShareFile, share_generic_rows

STRATA_FIELDS = ("year", "age_band", "sex", "race", "ethnicity")
COUNTER_NAMES = ("num", "den", "num_ms", "den_ms")
COUNTER_WIDTH = 32

CUBE_ROW_FIELDS = tuple((name, COUNTER_WIDTH) for name in COUNTER_NAMES)
CUBE_ROW_BITS = COUNTER_WIDTH * len(COUNTER_NAMES)
CUBE_TABLE_ID = 0xFFFFFFFF

# Mixed-radix layout of the per-year strata lattice.
_RADIX = {"age_band": len(AGE_BANDS), "sex": len(SEX_LABELS),
          "race": len(RACE_LABELS), "ethnicity": len(ETHNICITY_LABELS)}
_STRIDE = {"ethnicity": 1, "race": 3, "sex": 18, "age_band": 54, "year": STRATA_PER_YEAR}

DIMENSIONS = ("age", "sex", "race", "ethnicity")
DIMENSION_FIELD = {"age": "age_band", "sex": "sex", "race": "race", "ethnicity": "ethnicity"}


def domain_size(years: int) -> int:
    return years * STRATA_PER_YEAR


def strata_index(year: int, age: int, sex: int, race: int, eth: int) -> int:
    return ((((year * 7 + age) * 3 + sex) * 6 + race) * 3 + eth)


@lru_cache(maxsize=None)
def _digit_mask(field: str, digit: int, n_lanes: int) -> int:
    """Lanes whose canonical index has the given digit in `field`'s position."""
    stride = _STRIDE[field]
    radix = _RADIX[field]
    return block_mask(stride, stride * radix, n_lanes) << (digit * stride) & ones(n_lanes)


@lru_cache(maxsize=None)
def _canonical_field_cols(field: str, width: int, n_lanes: int) -> tuple[int, ...]:
    """Bit columns of the canonical value of a strata field over all lanes."""
    if field == "year":
        per_year = _STRIDE["year"]
        cols = [0] * width
        for y in range(n_lanes // per_year):
            for b in range(width):
                if (y >> b) & 1:
                    cols[b] |= block_mask(per_year, per_year, per_year) << (y * per_year)
        return tuple(cols)
    cols = [0] * width
    for digit in range(_RADIX[field]):
        for b in range(width):
            if (digit >> b) & 1:
                cols[b] |= _digit_mask(field, digit, n_lanes)
    return tuple(cols)


@dataclass
class DenseCubeShare:
    """One party's share of a dense cube: 4 counters over the full domain."""

    years: int
    counters: dict[str, list[int]]

    @property
    def n_cells(self) -> int:
        return domain_size(self.years)


# ---- record-level operators -------------------------------------------------

def apply_exclusion(eng: Engine, table: ShareTable) -> ShareTable:
    """Fold the excluded bit into is_dummy; all other fields untouched."""
    n = table.n
    out = table.copy()
    d = out.cols[DUMMY][0]
    e = out.cols["excluded"][0]
    out.cols[DUMMY][0] = d ^ e ^ eng.and_bits(d, e, n)
    return out


def dedup_patients(eng: Engine, table: ShareTable) -> ShareTable:
    """Collapse each (token, year) run to one survivor after an oblivious sort.

    The survivor's eligibility flags are ORs over the run; its demographics
    come from the run's first record after sorting; survivors whose folded
    excluded bit is set are dummied, implementing cross-site exclusion.
    """
    srt = bitonic_sort(eng, table, ["token", "year"])
    n = srt.n
    res = segmented_scan(
        eng, srt, ["token", "year"],
        or_fields=("numerator", "denominator", "excluded", "multi_site", DUMMY),
        first_fields=("age_band", "sex", "race", "ethnicity"),
    )
    live = eng.and_bits(res.boundary, eng.not_bits(res.ors[DUMMY], n), n)
    live = eng.and_bits(live, eng.not_bits(res.ors["excluded"], n), n)

    cols = {
        "token": list(srt.cols["token"]),
        "year": list(srt.cols["year"]),
        "age_band": res.firsts["age_band"],
        "sex": res.firsts["sex"],
        "race": res.firsts["race"],
        "ethnicity": res.firsts["ethnicity"],
        "denominator": [res.ors["denominator"]],
        "numerator": [res.ors["numerator"]],
        "excluded": [res.ors["excluded"]],
        "multi_site": [res.ors["multi_site"]],
        DUMMY: [eng.not_bits(live, n)],
    }
    out = ShareTable(tuple(RECORD_FIELDS), n, cols)
    # sort padding carries a strictly maximal (token, year) key, so the padded
    # tail is certainly dummy and can be dropped publicly
    return out.truncate(table.n)


def counter_width(n_rows: int) -> int:
    """Counter bits needed for per-batch sums bounded by the row count.

    Batch-local cells use the narrow width to keep sorting cheap; cubes are
    widened to the 32-bit counter format before any cross-batch addition.
    """
    return max(8, n_rows.bit_length())


def data_cube(eng: Engine, table: ShareTable) -> ShareTable:
    """Jointly partition rows over all strata at once and count the study flags.

    Output cells carry (num, den, num_ms, den_ms) sums; only run boundaries
    are non-dummy.  Nothing is revealed.
    """
    n = table.n
    nm, dm = eng.and_pairs([
        (table.cols["numerator"][0], table.cols["multi_site"][0], n),
        (table.cols["denominator"][0], table.cols["multi_site"][0], n),
    ])
    # linkage and exclusion fields are dead after dedup; keep the sort slim
    slim_schema = tuple(
        [(f, table.width(f)) for f in STRATA_FIELDS]
        + [("numerator", 1), ("denominator", 1),
           ("num_ms_flag", 1), ("den_ms_flag", 1), (DUMMY, 1)]
    )
    slim = ShareTable(slim_schema, n, {
        **{f: list(table.cols[f]) for f in STRATA_FIELDS},
        "numerator": list(table.cols["numerator"]),
        "denominator": list(table.cols["denominator"]),
        "num_ms_flag": [nm], "den_ms_flag": [dm],
        DUMMY: list(table.cols[DUMMY]),
    })
    key = [DUMMY, *STRATA_FIELDS]
    srt = bitonic_sort(eng, slim, key)
    cells = scan_group_counts(
        eng, srt, key,
        flag_fields=("numerator", "denominator", "num_ms_flag", "den_ms_flag"),
        out_names=COUNTER_NAMES, sum_width=counter_width(n),
    )
    # padding added by the sort is all-dummy and sorts to the tail (is_dummy
    # leads the key), so the padded lanes can be dropped publicly
    return cells.truncate(n)


def _check_domain(eng: Engine, cells: ShareTable, years: int) -> None:
    """Oblivious out-of-domain detection; reveals one abort bit only."""
    n = cells.n
    a = cells.cols["age_band"]
    s = cells.cols["sex"]
    r = cells.cols["race"]
    e = cells.cols["ethnicity"]
    y = cells.cols["year"]
    lvl1 = eng.and_pairs([
        (a[2], a[1], n), (s[1], s[0], n), (r[2], r[1], n), (e[1], e[0], n),
    ])
    age_hi, sex_bad, race_bad, eth_bad = lvl1
    age_bad = eng.and_bits(age_hi, a[0], n)
    if years == 3:
        year_bad = eng.and_bits(y[1], y[0], n)
    elif years == 2:
        year_bad = y[1]
    else:
        year_bad = eng.or_bits(y[1], y[0], n)
    bad = eng.or_bits(age_bad, sex_bad, n)
    bad = eng.or_bits(bad, race_bad, n)
    bad = eng.or_bits(bad, eth_bad, n)
    bad = eng.or_bits(bad, year_bad, n)
    bad = eng.and_bits(bad, eng.not_bits(cells.cols[DUMMY][0], n), n)
    flag = eng.open_bits(fold_or_lanes(eng, bad, n), 1)
    if flag:
        raise DomainViolation()


def densify_cube(eng: Engine, cells: ShareTable, years: int) -> DenseCubeShare:
    """Fold sparse cube cells onto the full canonical domain.

    Concatenates one zero canonical cell per domain point, sorts with
    canonical cells after real cells of equal key, folds counts into the
    canonical cell by a segmented scan, dummies the rest, re-sorts, and emits
    the first |domain| rows in canonical order.
    """
    _check_domain(eng, cells, years)
    d_cells = domain_size(years)
    cw = cells.width(COUNTER_NAMES[0])

    canon_schema = tuple(
        [(f, cells.width(f)) for f in STRATA_FIELDS]
        + [(name, cw) for name in COUNTER_NAMES]
        + [("is_canonical", 1), (DUMMY, 1)]
    )
    canon_cols: dict[str, list[int]] = {}
    for f in STRATA_FIELDS:
        w = cells.width(f)
        vals = _canonical_field_cols(f, w, d_cells)
        canon_cols[f] = [eng.const_bits(v, d_cells) for v in vals]
    for name in COUNTER_NAMES:
        canon_cols[name] = [0] * cw
    canon_cols["is_canonical"] = [eng.const_bits(ones(d_cells), d_cells)]
    canon_cols[DUMMY] = [0]
    canonical = ShareTable(canon_schema, d_cells, canon_cols)

    real = ShareTable(
        canon_schema, cells.n,
        {**{f: list(cells.cols[f]) for f in STRATA_FIELDS},
         **{name: list(cells.cols[name]) for name in COUNTER_NAMES},
         "is_canonical": [0], DUMMY: list(cells.cols[DUMMY])},
    )

    combo = real.concat(canonical)
    key = [DUMMY, *STRATA_FIELDS]
    s1 = bitonic_sort(eng, combo, key + ["is_canonical"])
    n = s1.n
    res = segmented_scan(eng, s1, key, sum_fields=COUNTER_NAMES, sum_width=cw)
    live = eng.and_bits(res.boundary, eng.not_bits(s1.cols[DUMMY][0], n), n)
    live = eng.and_bits(live, s1.cols["is_canonical"][0], n)

    # is_canonical is now equivalent to liveness; no need to carry it further
    folded_schema = tuple(
        [(f, cells.width(f)) for f in STRATA_FIELDS]
        + [(name, cw) for name in COUNTER_NAMES] + [(DUMMY, 1)]
    )
    folded = ShareTable(
        folded_schema, n,
        {**{f: list(s1.cols[f]) for f in STRATA_FIELDS},
         **{name: res.sums[name] for name in COUNTER_NAMES},
         DUMMY: [eng.not_bits(live, n)]},
    )
    s2 = bitonic_sort(eng, folded, key)
    counters = {
        name: [c & ones(d_cells) for c in s2.cols[name]]
        + [0] * (COUNTER_WIDTH - cw)
        for name in COUNTER_NAMES
    }
    return DenseCubeShare(years, counters)


def zero_cube(years: int) -> DenseCubeShare:
    return DenseCubeShare(years, {name: [0] * COUNTER_WIDTH for name in COUNTER_NAMES})


def add_cubes(eng: Engine, x: DenseCubeShare, y: DenseCubeShare) -> DenseCubeShare:
    """Pointwise 32-bit addition of all four counters; no sorting involved."""
    if x.years != y.years:
        raise ValidationError(f"cube domains differ: {x.years} vs {y.years} years")
    n = x.n_cells
    terms = [(x.counters[name], y.counters[name]) for name in COUNTER_NAMES]
    added = vec_add_many(eng, terms, n)
    return DenseCubeShare(x.years, dict(zip(COUNTER_NAMES, added)))


def rollup(eng: Engine, cube: DenseCubeShare, dimension: str) -> dict[tuple[int, int], list[int]]:
    """Marginal totals for one demographic dimension.

    Returns (year_index, category) -> four 32-bit counter share words in
    COUNTER_NAMES order.  Index sets are public; cost is additions only.
    """
    if dimension not in DIMENSIONS:
        raise ValidationError(f"unknown dimension {dimension!r}")
    keep = DIMENSION_FIELD[dimension]
    n = cube.n_cells
    acc = {name: list(cube.counters[name]) for name in COUNTER_NAMES}
    for field in ("ethnicity", "race", "sex", "age_band"):
        if field == keep:
            continue
        stride = _STRIDE[field]
        for digit in range(1, _RADIX[field]):
            mask = _digit_mask(field, digit, n)
            shift = digit * stride
            terms = [
                (acc[name], [(c & mask) >> shift for c in acc[name]])
                for name in COUNTER_NAMES
            ]
            added = vec_add_many(eng, terms, n)
            acc = dict(zip(COUNTER_NAMES, added))

    out: dict[tuple[int, int], list[int]] = {}
    stride = _STRIDE[keep]
    for year in range(cube.years):
        for cat in range(_RADIX[keep]):
            lane = year * STRATA_PER_YEAR + cat * stride
            words = []
            for name in COUNTER_NAMES:
                words.append(sum(((acc[name][b] >> lane) & 1) << b
                                 for b in range(COUNTER_WIDTH)))
            out[(year, cat)] = words
    return out


def suppress_counters(eng: Engine, word_shares: list[int], threshold: int,
                      width: int = COUNTER_WIDTH) -> tuple[list[int], list[int]]:
    """Threshold suppression inside the secure computation.

    For each counter c: suppressed = (c > 0) AND (c < threshold); the output
    value share reconstructs to 0 when suppressed, c otherwise.  Nothing is
    opened here; share release happens downstream.
    """
    lanes = len(word_shares)
    if lanes == 0:
        return [], []
    from .bitops import columns_to_words, words_to_columns

    cols = words_to_columns(word_shares, width)
    merged = list(cols)  # OR-tree across bit positions: c > 0
    while len(merged) > 1:
        res = eng.and_pairs([(merged[i], merged[i + 1], lanes)
                             for i in range(0, len(merged) - 1, 2)])
        nxt = [merged[i] ^ merged[i + 1] ^ r
               for i, r in zip(range(0, len(merged) - 1, 2), res)]
        if len(merged) % 2:
            nxt.append(merged[-1])
        merged = nxt
    gt0 = merged[0]

    limit = [eng.const_bits(ones(lanes) if (threshold >> b) & 1 else 0, lanes)
             for b in range(width)]
    below = vec_lt(eng, cols, limit, lanes)
    suppressed = eng.and_bits(gt0, below, lanes)
    keep = eng.not_bits(suppressed, lanes)
    masked = eng.and_pairs([(keep, c, lanes) for c in cols])
    values = columns_to_words(masked, lanes)
    flags = [(suppressed >> i) & 1 for i in range(lanes)]
    return values, flags


# ---- partner-local plaintext cube building ----------------------------------

def local_cube_counts(records: list[CodedRecord], years: int) -> dict[int, list[int]]:
    """Plaintext per-strata counts over one site's qualifying rows."""
    counts: dict[int, list[int]] = {}
    for rec in records:
        if rec.excluded or rec.is_dummy:
            continue
        idx = strata_index(rec.year, rec.age_band, rec.sex, rec.race, rec.ethnicity)
        if not 0 <= idx < domain_size(years):
            raise ValidationError(f"record strata outside the {years}-year domain")
        cell = counts.setdefault(idx, [0, 0, 0, 0])
        cell[0] += rec.numerator
        cell[1] += rec.denominator
        cell[2] += rec.numerator & rec.multi_site
        cell[3] += rec.denominator & rec.multi_site
    return counts


def pad_single_site_cube(records: list[CodedRecord], years: int, rng=None,
                         table_id: int = CUBE_TABLE_ID) -> tuple[ShareFile, ShareFile]:
    """Expand a local cube to the full canonical domain and secret share it.

    The shared object has exactly domain_size(years) cells no matter how many
    strata the site's data populates.
    """
    counts = local_cube_counts(records, years)
    rows = [counts.get(idx, [0, 0, 0, 0]) for idx in range(domain_size(years))]
    return share_generic_rows(rows, CUBE_ROW_FIELDS, rng, table_id)


def cube_share_from_file(f: ShareFile, years: int) -> DenseCubeShare:
    if f.row_width_bits != CUBE_ROW_BITS:
        raise SchemaError(f"not a cube table (row width {f.row_width_bits})")
    if f.row_count != domain_size(years):
        raise ValidationError(
            f"cube has {f.row_count} cells, expected {domain_size(years)}")
    cols = rows_to_columns(f.payload, f.row_count, CUBE_ROW_FIELDS)
    return DenseCubeShare(years, {name: cols[name] for name in COUNTER_NAMES})
