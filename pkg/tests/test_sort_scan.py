import random

import pytest

from privfed.oblivious import bitonic_sort, scan_group_counts
from privfed.errors import SchemaError
from helpers import duo, make_table_pair, read_table, live_rows

RNG = random.Random(77)

SCHEMA = (("key", 8), ("val", 6), ("is_dummy", 1))


def _sort_party(t, key=("key",), ascending=None):
    return lambda eng: bitonic_sort(eng, t, list(key), ascending)


def test_sort_forces_order():
    rows = [{"key": k, "val": i, "is_dummy": 0} for i, k in enumerate([3, 1, 2, 0])]
    t1, t2 = make_table_pair(rows, SCHEMA)
    res = duo(_sort_party, t1, t2)
    out = live_rows(res.results[1], res.results[2])
    assert [r["key"] for r in out] == [0, 1, 2, 3]


def test_sort_n8_does_24_compare_exchanges():
    rows = [{"key": RNG.randrange(256), "val": 0, "is_dummy": 0} for _ in range(8)]
    t1, t2 = make_table_pair(rows, SCHEMA)
    res = duo(_sort_party, t1, t2)
    assert res.engines[1].stats.compare_exchanges == 24  # 8*3*4/4


def test_sort_oracle_100_random_tables():
    def party(tables):
        def fn(eng):
            return [bitonic_sort(eng, t, ["key"]) for t in tables]
        return fn

    pairs = []
    for _ in range(100):
        rows = [{"key": RNG.randrange(200), "val": RNG.randrange(64), "is_dummy": 0}
                for _ in range(64)]
        pairs.append((rows, *make_table_pair(rows, SCHEMA)))

    res = duo(party, [p[1] for p in pairs], [p[2] for p in pairs])
    for (rows, _, _), o1, o2 in zip(pairs, res.results[1], res.results[2]):
        out = live_rows(o1, o2)
        keys = [r["key"] for r in out]
        assert keys == sorted(keys)
        assert sorted((r["key"], r["val"]) for r in out) == \
            sorted((r["key"], r["val"]) for r in rows)


def test_sort_padding_dummies_land_last():
    rows = [{"key": RNG.randrange(9), "val": 0, "is_dummy": 0} for _ in range(13)]
    t1, t2 = make_table_pair(rows, SCHEMA)
    res = duo(_sort_party, t1, t2)
    out = read_table(res.results[1], res.results[2])
    assert len(out) == 16
    assert [r["is_dummy"] for r in out] == [0] * 13 + [1] * 3


def test_sort_descending_and_multifield():
    rows = [{"key": RNG.randrange(4), "val": RNG.randrange(64), "is_dummy": 0}
            for _ in range(20)]
    t1, t2 = make_table_pair(rows, SCHEMA)
    res = duo(lambda t: _sort_party(t, ("key", "val"), [False, True]), t1, t2)
    out = live_rows(res.results[1], res.results[2])
    assert [( -r["key"], r["val"]) for r in out] == \
        sorted((-r["key"], r["val"]) for r in rows)


def test_sort_missing_key_field():
    rows = [{"key": 0, "val": 0, "is_dummy": 0}]
    t1, t2 = make_table_pair(rows, SCHEMA)
    with pytest.raises(SchemaError):
        duo(lambda t: (lambda eng: bitonic_sort(eng, t, ["nope"])), t1, t2)


def test_sort_schedule_depends_on_size_only():
    mk = lambda: [{"key": RNG.randrange(200), "val": RNG.randrange(64), "is_dummy": 0}
                  for _ in range(32)]
    shapes = []
    for _ in range(2):
        t1, t2 = make_table_pair(mk(), SCHEMA)
        res = duo(_sort_party, t1, t2, record=True, tape=True)
        shapes.append((res.recorders[1].shape(),
                       res.engines[1].tape.digest(),
                       res.engines[1].triples.consumed))
    assert shapes[0] == shapes[1]


SCAN_SCHEMA = (("key", 5), ("f1", 1), ("f2", 1), ("is_dummy", 1))


def _scan_party(t):
    def fn(eng):
        return scan_group_counts(eng, t, ["is_dummy", "key"], ("f1", "f2"),
                                 ("sum1", "sum2"))
    return fn


def test_scan_hand_example():
    # sorted keys [A, A, B] with one counted flag [1, 0, 1]
    rows = [{"key": 1, "f1": 1, "f2": 0, "is_dummy": 0},
            {"key": 1, "f1": 0, "f2": 0, "is_dummy": 0},
            {"key": 2, "f1": 1, "f2": 1, "is_dummy": 0}]
    t1, t2 = make_table_pair(rows, SCAN_SCHEMA)
    res = duo(_scan_party, t1, t2)
    out = read_table(res.results[1], res.results[2])
    assert [r["is_dummy"] for r in out] == [1, 0, 0]
    assert (out[1]["key"], out[1]["sum1"], out[1]["sum2"]) == (1, 1, 0)
    assert (out[2]["key"], out[2]["sum1"], out[2]["sum2"]) == (2, 1, 1)


def test_scan_all_dummy():
    rows = [{"key": 3, "f1": 1, "f2": 1, "is_dummy": 1} for _ in range(8)]
    t1, t2 = make_table_pair(rows, SCAN_SCHEMA)
    res = duo(_scan_party, t1, t2)
    assert all(r["is_dummy"] for r in read_table(res.results[1], res.results[2]))


def test_scan_random_tables_match_group_by():
    def party(t):
        def fn(eng):
            s = bitonic_sort(eng, t, ["is_dummy", "key"])
            return scan_group_counts(eng, s, ["is_dummy", "key"], ("f1", "f2"),
                                     ("sum1", "sum2"))
        return fn

    for _ in range(4):
        rows = [{"key": RNG.randrange(12), "f1": RNG.randrange(2),
                 "f2": RNG.randrange(2), "is_dummy": int(RNG.random() < 0.25)}
                for _ in range(128)]
        t1, t2 = make_table_pair(rows, SCAN_SCHEMA)
        res = duo(party, t1, t2)
        got = {}
        for r in read_table(res.results[1], res.results[2]):
            if not r["is_dummy"]:
                assert r["key"] not in got
                got[r["key"]] = (r["sum1"], r["sum2"])
        want = {}
        for r in rows:
            if not r["is_dummy"]:
                a, b = want.get(r["key"], (0, 0))
                want[r["key"]] = (a + r["f1"], b + r["f2"])
        assert got == want
