"""Bit-column manipulation helpers.

The oblivious engine stores a table column as one Python int whose bit i is
row i's bit (a "column").  Sorting-network stages need the rows at positions
with (i & j) == 0 ("lo" lanes) packed densely so gate batches and protocol
messages carry exactly one bit per active lane.  Because those positions form
a periodic pattern (j set bits, j clear bits), packing and unpacking run in
O(log(n/j)) big-int operations via gap-doubling, with all masks precomputed
per (n, j).
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def ones(n: int) -> int:
    return (1 << n) - 1


def replicate(pattern: int, period: int, count: int) -> int:
    """Concatenate `count` copies of a `period`-bit pattern."""
    if count <= 0:
        return 0
    return pattern * (((1 << (period * count)) - 1) // ((1 << period) - 1))


@lru_cache(maxsize=None)
def block_mask(run: int, period: int, total: int) -> int:
    """Mask with `run` set bits at the start of each `period` window."""
    count, rem = divmod(total, period)
    m = replicate(ones(run), period, count)
    if rem:
        m |= ones(min(run, rem)) << (count * period)
    return m


@lru_cache(maxsize=None)
def _compress_plan(j: int, n: int) -> tuple[tuple[int, int, int], ...]:
    """Steps (even_mask, odd_mask, shift) turning lo-lane bits into a dense n/2-bit value."""
    steps = []
    run, period = j, 2 * j
    while period < n:
        even = block_mask(run, 2 * period, n)
        odd = even << period
        steps.append((even, odd, period - run))
        run *= 2
        period *= 2
    return tuple(steps)


def compress_lo(x: int, j: int, n: int) -> int:
    """Pack the bits at positions with (i & j) == 0 into the low n/2 bits."""
    x &= block_mask(j, 2 * j, n)
    for even, odd, shift in _compress_plan(j, n):
        x = (x & even) | ((x & odd) >> shift)
    return x


def expand_lo(y: int, j: int, n: int) -> int:
    """Inverse of compress_lo: scatter a dense n/2-bit value back to lo positions."""
    for even, odd, shift in reversed(_compress_plan(j, n)):
        y = (y & even) | ((y << shift) & odd)
    return y


def compress_many(cols, j: int, n: int) -> list[int]:
    """compress_lo over several columns with the plan looked up once."""
    plan = _compress_plan(j, n)
    mask = block_mask(j, 2 * j, n)
    out = []
    for c in cols:
        c &= mask
        for even, odd, shift in plan:
            c = (c & even) | ((c & odd) >> shift)
        out.append(c)
    return out


def expand_many(cols, j: int, n: int) -> list[int]:
    plan = tuple(reversed(_compress_plan(j, n)))
    out = []
    for c in cols:
        for even, odd, shift in plan:
            c = (c & even) | ((c << shift) & odd)
        out.append(c)
    return out


def pack_slices(pairs) -> tuple[int, int]:
    """Concatenate (value, width) slices into one int, low slice first.

    Byte-aligned widths (the hot case: lane counts are multiples of 8) go
    through a bytes join; anything else falls back to balanced-tree merging.
    """
    items = [(v & ones(w), w) for v, w in pairs]
    if not items:
        return 0, 0
    total = sum(w for _, w in items)
    if all(w & 7 == 0 for _, w in items):
        buf = b"".join(v.to_bytes(w >> 3, "little") for v, w in items)
        return int.from_bytes(buf, "little"), total
    while len(items) > 1:
        nxt = []
        for i in range(0, len(items) - 1, 2):
            v1, w1 = items[i]
            v2, w2 = items[i + 1]
            nxt.append((v1 | (v2 << w1), w1 + w2))
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
    return items[0][0], total


def unpack_slices(value: int, widths) -> list[int]:
    """Inverse of pack_slices for a known width list."""
    widths = list(widths)
    if not widths:
        return []
    total = sum(widths)
    if all(w & 7 == 0 for w in widths):
        buf = value.to_bytes(total >> 3, "little")
        out = []
        off = 0
        for w in widths:
            nb = w >> 3
            out.append(int.from_bytes(buf[off:off + nb], "little"))
            off += nb
        return out
    out = []
    for w in widths:
        out.append(value & ones(w))
        value >>= w
    return out


def pack_open_pair(d: int, e: int, m: int) -> bytes:
    """Encode two m-bit openings as ceil(2m/8) bytes (d low, e high)."""
    return ((e << m) | d).to_bytes((2 * m + 7) // 8, "little")


def unpack_open_pair(buf: bytes, m: int) -> tuple[int, int]:
    v = int.from_bytes(buf, "little")
    return v & ones(m), v >> m


def bits_to_int(bits: np.ndarray) -> int:
    """Column int from a 0/1 array where index i becomes bit i."""
    packed = np.packbits(bits.astype(np.uint8), bitorder="little")
    return int.from_bytes(packed.tobytes(), "little")


def int_to_bits(x: int, n: int) -> np.ndarray:
    nbytes = (n + 7) // 8
    raw = np.frombuffer(x.to_bytes(nbytes, "little"), dtype=np.uint8)
    return np.unpackbits(raw, bitorder="little")[:n]


def rows_to_columns(payload: bytes, n_rows: int, fields) -> dict[str, list[int]]:
    """Transpose packed rows (fields MSB-first, byte aligned) into bit columns.

    Returns per field a list of column ints indexed by bit significance
    (index 0 = least significant bit of the field).
    """
    total_bits = sum(w for _, w in fields)
    row_bytes = (total_bits + 7) // 8
    if n_rows == 0:
        return {name: [0] * width for name, width in fields}
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(n_rows, row_bytes)
    bits = np.unpackbits(arr, axis=1)  # bit j of the row = column j (MSB-first)
    out: dict[str, list[int]] = {}
    pos = 0
    for name, width in fields:
        cols = [bits_to_int(bits[:, pos + width - 1 - b]) for b in range(width)]
        out[name] = cols
        pos += width
    return out


def columns_to_rows(cols: dict[str, list[int]], n_rows: int, fields) -> bytes:
    """Inverse of rows_to_columns."""
    total_bits = sum(w for _, w in fields)
    row_bytes = (total_bits + 7) // 8
    bits = np.zeros((n_rows, row_bytes * 8), dtype=np.uint8)
    pos = 0
    for name, width in fields:
        for b in range(width):
            bits[:, pos + width - 1 - b] = int_to_bits(cols[name][b], n_rows)
        pos += width
    return np.packbits(bits, axis=1).tobytes()


def words_to_columns(words: list[int], width: int) -> list[int]:
    """Transpose a list of lane words into `width` bit columns."""
    cols = [0] * width
    for lane, w in enumerate(words):
        for b in range(width):
            if (w >> b) & 1:
                cols[b] |= 1 << lane
    return cols


def columns_to_words(cols: list[int], n_lanes: int) -> list[int]:
    words = [0] * n_lanes
    for b, col in enumerate(cols):
        while col:
            low = col & -col
            lane = low.bit_length() - 1
            if lane >= n_lanes:
                break
            words[lane] |= 1 << b
            col ^= low
    return words
