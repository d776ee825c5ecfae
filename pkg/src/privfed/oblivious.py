"""Oblivious tables, the bitonic sorting network, and segmented scans.

A table is held column-wise: every field maps to a list of bit columns
(index = significance), each column an int with bit i = row i.  All operators
here have schedules that depend only on the public shape (row count, schema,
key spec), never on share values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .bitops import block_mask, compress_many, expand_many, ones
from .engine import Engine, vec_add_many, vec_eq, vec_lt
from .errors import SchemaError

DUMMY = "is_dummy"


@dataclass
class ShareTable:
    """One party's share of an oblivious table."""

    schema: tuple[tuple[str, int], ...]
    n: int
    cols: dict[str, list[int]]

    def __post_init__(self):
        names = [f for f, _ in self.schema]
        if DUMMY not in names:
            raise SchemaError("tables must carry an is_dummy field")
        for f, w in self.schema:
            if f not in self.cols or len(self.cols[f]) != w:
                raise SchemaError(f"column {f} missing or has wrong width")

    def width(self, name: str) -> int:
        for f, w in self.schema:
            if f == name:
                return w
        raise SchemaError(f"no field {name!r} in schema")

    def copy(self) -> "ShareTable":
        return ShareTable(self.schema, self.n, {f: list(c) for f, c in self.cols.items()})

    def concat(self, other: "ShareTable") -> "ShareTable":
        if self.schema != other.schema:
            raise SchemaError("cannot concatenate tables with different schemas")
        cols = {
            f: [a | (b << self.n) for a, b in zip(self.cols[f], other.cols[f])]
            for f, _ in self.schema
        }
        return ShareTable(self.schema, self.n + other.n, cols)

    def with_fields(self, extra: dict[str, tuple[int, list[int]]]) -> "ShareTable":
        """New table with added fields: name -> (width, cols)."""
        schema = list(self.schema)
        cols = {f: list(c) for f, c in self.cols.items()}
        for name, (w, c) in extra.items():
            schema.append((name, w))
            cols[name] = c
        return ShareTable(tuple(schema), self.n, cols)

    def truncate(self, n_new: int) -> "ShareTable":
        """Drop trailing lanes.

        Only valid when the caller can prove from public facts that the
        dropped lanes are dummy, e.g. the tail padding added by a sort whose
        padding rows carry a strictly maximal key.
        """
        if n_new > self.n:
            raise SchemaError(f"cannot truncate {self.n} lanes to {n_new}")
        mask = ones(n_new)
        cols = {f: [c & mask for c in cs] for f, cs in self.cols.items()}
        return ShareTable(self.schema, n_new, cols)


def empty_table(schema, n: int = 0) -> ShareTable:
    return ShareTable(tuple(schema), n, {f: [0] * w for f, w in schema})


def _flat_key(table: ShareTable, key: list[str], transform=None) -> list[int]:
    """Composite key columns, LSB-first; earlier key fields more significant."""
    flat: list[int] = []
    for f in reversed(key):
        cols = table.cols[f]
        if transform is not None:
            flat.extend(transform(c) for c in cols)
        else:
            flat.extend(cols)
    return flat


def bitonic_sort(eng: Engine, table: ShareTable, key: list[str],
                 ascending: list[bool] | None = None) -> ShareTable:
    """Sort by the composite key with a data-independent comparator schedule.

    The input is padded to the next power of two with dummy rows whose key is
    maximal (per the requested direction), so padding always lands after real
    rows.  Stability is not guaranteed.  Returns the padded table.
    """
    for f in key:
        table.width(f)
    flags = list(ascending) if ascending is not None else [True] * len(key)
    if len(flags) != len(key):
        raise SchemaError("ascending flags must match the key field list")

    n0 = table.n
    eng.stats.sort_input_rows.append(n0)
    if n0 <= 1:
        return table.copy()
    n = 1 << (n0 - 1).bit_length()
    cols = {f: list(c) for f, c in table.cols.items()}

    if n > n0 and eng.party == 1:
        # padding rows: maximal transformed key, is_dummy set, all else zero
        pad = ones(n) ^ ones(n0)
        for f, asc in zip(key, flags):
            if asc:
                cols[f] = [c | pad for c in cols[f]]
        if DUMMY not in key:
            cols[DUMMY] = [cols[DUMMY][0] | pad]

    if eng.tape is not None:
        eng.tape.record("sort", n0, n, tuple(key))

    swap_fields = [(f, b) for f, w in table.schema for b in range(w)]
    m = n >> 1
    k = 2
    while k <= n:
        dirm = block_mask(k >> 1, k, m)
        notd = dirm ^ ones(m)
        j = k >> 1
        while j >= 1:
            # transformed key (descending fields compare complemented)
            tk: list[int] = []
            for f, asc in zip(reversed(key), reversed(flags)):
                fc = cols[f]
                tk.extend(fc if asc else [eng.not_bits(c, n) for c in fc])
            lo = compress_many(tk, j, n)
            hi = compress_many((c >> j for c in tk), j, n)
            u = [(h & dirm) | (l & notd) for l, h in zip(lo, hi)]
            v = [(l & dirm) | (h & notd) for l, h in zip(lo, hi)]
            swap = vec_lt(eng, u, v, m)
            eng.stats.compare_exchanges += m

            diffs = compress_many((cols[f][b] ^ (cols[f][b] >> j)
                                   for f, b in swap_fields), j, n)
            flips = eng.and_pairs([(swap, d, m) for d in diffs])
            for (f, b), fe in zip(swap_fields, expand_many(flips, j, n)):
                cols[f][b] ^= fe | (fe << j)
            j >>= 1
        k <<= 1
    return ShareTable(table.schema, n, cols)


@dataclass
class ScanResult:
    boundary: int
    sums: dict[str, list[int]] = field(default_factory=dict)
    ors: dict[str, int] = field(default_factory=dict)
    firsts: dict[str, list[int]] = field(default_factory=dict)


def segmented_scan(eng: Engine, table: ShareTable, key: list[str],
                   sum_fields: tuple[str, ...] = (), or_fields: tuple[str, ...] = (),
                   first_fields: tuple[str, ...] = (), sum_width: int = 32,
                   zero_dummy_sums: bool = True) -> ScanResult:
    """Fold values over maximal runs of equal keys in one log-depth pass.

    For every lane: sums accumulate over the run up to and including the lane
    (so the run's last lane carries the run total), ors fold with OR, firsts
    copy the run's first value forward.  `boundary` is set on the last lane
    of each run.
    """
    n = table.n
    lane_mask = ones(n)
    key_cols = _flat_key(table, key)
    prev = [(c << 1) & lane_mask for c in key_cols]
    p0 = vec_eq(eng, key_cols, prev, n) & (lane_mask ^ 1)

    sums: dict[str, list[int]] = {}
    if sum_fields:
        contribs = []
        for f in sum_fields:
            contribs.extend(table.cols[f])
        if zero_dummy_sums:
            nd = eng.not_bits(table.cols[DUMMY][0], n)
            contribs = eng.and_pairs([(nd, c, n) for c in contribs])
        off = 0
        for f in sum_fields:
            w = table.width(f)
            lifted = contribs[off:off + w] + [0] * (sum_width - w)
            sums[f] = lifted
            off += w

    ors = {f: table.cols[f][0] for f in or_fields}
    firsts = {f: list(table.cols[f]) for f in first_fields}

    p = p0
    d = 1
    while d < n:
        sh = lambda c: (c << d) & lane_mask
        pairs = [(p, sh(p), n)]
        for f in sum_fields:
            pairs.extend((p, sh(c), n) for c in sums[f])
        for f in or_fields:
            pairs.append((p, sh(ors[f]), n))
        for f in first_fields:
            pairs.extend((p, c ^ sh(c), n) for c in firsts[f])
        res = eng.and_pairs(pairs)

        i = 0
        p_next = res[i]; i += 1
        add_terms = []
        for f in sum_fields:
            gated = res[i:i + sum_width]; i += sum_width
            add_terms.append((sums[f], gated))
        if add_terms:
            added = vec_add_many(eng, add_terms, n)
            for f, cols in zip(sum_fields, added):
                sums[f] = cols
        gs = {}
        for f in or_fields:
            gs[f] = res[i]; i += 1
        if or_fields:
            tgl = eng.and_pairs([(ors[f], gs[f], n) for f in or_fields])
            for f, t in zip(or_fields, tgl):
                ors[f] = ors[f] ^ gs[f] ^ t
        for f in first_fields:
            w = len(firsts[f])
            hs = res[i:i + w]; i += w
            firsts[f] = [c ^ h for c, h in zip(firsts[f], hs)]
        p = p_next
        d <<= 1

    boundary = eng.not_bits(p0 >> 1, n)
    return ScanResult(boundary=boundary, sums=sums, ors=ors, firsts=firsts)


def scan_group_counts(eng: Engine, table: ShareTable, key: list[str],
                      flag_fields: tuple[str, ...], out_names: tuple[str, ...],
                      passthrough: tuple[str, ...] = (), sum_width: int = 32) -> ShareTable:
    """Group-by-and-count over a table sorted by `key`.

    Output has the input cardinality; the last lane of each run of equal keys
    is the only non-dummy lane and carries per-flag sums over the run (dummy
    rows contribute zero).  All other lanes come out dummy.
    """
    res = segmented_scan(eng, table, key, sum_fields=flag_fields, sum_width=sum_width)
    n = table.n
    live = eng.and_bits(res.boundary, eng.not_bits(table.cols[DUMMY][0], n), n)
    out_dummy = eng.not_bits(live, n)

    schema: list[tuple[str, int]] = []
    cols: dict[str, list[int]] = {}
    for f in key:
        if f == DUMMY:
            continue
        schema.append((f, table.width(f)))
        cols[f] = list(table.cols[f])
    for f, name in zip(flag_fields, out_names):
        schema.append((name, sum_width))
        cols[name] = res.sums[f]
    for f in passthrough:
        schema.append((f, table.width(f)))
        cols[f] = list(table.cols[f])
    schema.append((DUMMY, 1))
    cols[DUMMY] = [out_dummy]
    return ShareTable(tuple(schema), n, cols)
