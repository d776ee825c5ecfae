"""Shared test utilities: table sharing, reconstruction, duo shortcuts."""

from __future__ import annotations

import random

from privfed.bitops import words_to_columns
from privfed.local import run_duo
from privfed.oblivious import ShareTable
from privfed.records import RECORD_FIELDS, CodedRecord

_RNG = random.Random(0xBEEF)


def share_columns(vals, width: int, rng=None):
    rng = rng or _RNG
    n = len(vals)
    cols = words_to_columns(list(vals), width)
    s1 = [rng.getrandbits(n) for _ in range(width)]
    s2 = [a ^ b for a, b in zip(cols, s1)]
    return s1, s2


def make_table_pair(rows: list[dict], schema, rng=None):
    rng = rng or _RNG
    n = len(rows)
    cols1, cols2 = {}, {}
    for f, w in schema:
        cols1[f], cols2[f] = share_columns([r[f] for r in rows], w, rng)
    return ShareTable(tuple(schema), n, cols1), ShareTable(tuple(schema), n, cols2)


def share_records(recs: list[CodedRecord], rng=None):
    rows = [{f: getattr(r, f) for f, _ in RECORD_FIELDS} for r in recs]
    return make_table_pair(rows, RECORD_FIELDS, rng)


def read_table(t1: ShareTable, t2: ShareTable) -> list[dict]:
    out = []
    for i in range(t1.n):
        row = {}
        for f, w in t1.schema:
            cols = [a ^ b for a, b in zip(t1.cols[f], t2.cols[f])]
            row[f] = sum(((cols[b] >> i) & 1) << b for b in range(w))
        out.append(row)
    return out


def live_rows(t1: ShareTable, t2: ShareTable) -> list[dict]:
    return [r for r in read_table(t1, t2) if not r["is_dummy"]]


def duo(fn_for_table, t1, t2, **kw):
    """Run the same closure builder against both share tables."""
    return run_duo(fn_for_table(t1), fn_for_table(t2), **kw)


def reconstruct_bits(res, idx1=1, idx2=2):
    return res.results[idx1] ^ res.results[idx2]


def rec(token, year=0, age=2, sex=0, race=4, eth=1, den=0, num=0, exc=0, ms=0, dummy=0):
    return CodedRecord(token, year, age, sex, race, eth, den, num, exc, ms, dummy)
