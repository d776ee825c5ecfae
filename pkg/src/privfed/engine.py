"""Two-party boolean circuit evaluation over XOR-shared bit columns.

Each party runs the same deterministic schedule.  XOR and NOT are share-local;
every AND batch consumes one dealer triple bit per gate and costs exactly one
masked-openings message in each direction.  The schedule (batch sizes, order,
message lengths) is a function of public shape only, never of share values.
"""

from __future__ import annotations

import hashlib
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

from .bitops import ones, pack_open_pair, pack_slices, unpack_open_pair, unpack_slices
from .errors import ProtocolAbort, ValidationError, ABORT_PROTOCOL
from .sharing import TripleBlock


class TripleSource:
    """Streams triple bits for one party from dealer blocks."""

    def __init__(self, next_block):
        self._next_block = next_block
        self._a = self._b = self._c = 0
        self._len = 0
        self.consumed = 0

    def take(self, m: int) -> tuple[int, int, int]:
        while self._len < m:
            blk: TripleBlock = self._next_block()
            if blk is None:
                raise ProtocolAbort(ABORT_PROTOCOL, "triple supply exhausted")
            self._a |= blk.a << self._len
            self._b |= blk.b << self._len
            self._c |= blk.c << self._len
            self._len += blk.nbits
        mask = ones(m)
        out = (self._a & mask, self._b & mask, self._c & mask)
        self._a >>= m
        self._b >>= m
        self._c >>= m
        self._len -= m
        self.consumed += m
        return out


class GateTape:
    """Public record of the oblivious operation schedule."""

    def __init__(self):
        self.entries: list[tuple] = []

    def record(self, *entry) -> None:
        self.entries.append(entry)

    def digest(self) -> str:
        h = hashlib.sha256()
        for e in self.entries:
            h.update(repr(e).encode())
        return h.hexdigest()


@dataclass
class StepStats:
    seconds: float = 0.0
    and_gates: int = 0
    rounds: int = 0
    bytes_sent: int = 0


@dataclass
class EngineStats:
    and_gates: int = 0
    rounds: int = 0
    compare_exchanges: int = 0
    sort_input_rows: list = field(default_factory=list)
    steps: dict = field(default_factory=dict)


class Engine:
    """One party's evaluator: gates, opens, and gate-schedule accounting."""

    def __init__(self, party: int, channel, triples: TripleSource,
                 tape: GateTape | None = None):
        if party not in (1, 2):
            raise ValidationError("party must be 1 or 2")
        self.party = party
        self.ch = channel
        self.triples = triples
        self.tape = tape
        self.stats = EngineStats()

    # ---- local operations -------------------------------------------------

    def not_bits(self, x: int, m: int) -> int:
        """NOT: party 1 flips its share, party 2 keeps it."""
        return (x ^ ones(m)) if self.party == 1 else x

    def const_bits(self, value: int, m: int) -> int:
        """Share of a public constant: party 1 holds it, party 2 holds zero."""
        return (value & ones(m)) if self.party == 1 else 0

    # ---- interactive operations -------------------------------------------

    def and_pairs(self, pairs) -> list[int]:
        """Evaluate a batch of column ANDs in a single message round.

        `pairs` is a sequence of (x, y, m) with x, y restricted to m bits.
        """
        pairs = list(pairs)
        X, total = pack_slices([(x, m) for x, _, m in pairs])
        Y, _ = pack_slices([(y, m) for _, y, m in pairs])
        a, b, c = self.triples.take(total)
        d = X ^ a
        e = Y ^ b
        peer = self.ch.mpc_exchange(pack_open_pair(d, e, total))
        d2, e2 = unpack_open_pair(peer, total)
        D = d ^ d2
        E = e ^ e2
        Z = c ^ (D & b) ^ (E & a)
        if self.party == 1:
            Z ^= D & E
        self.stats.and_gates += total
        self.stats.rounds += 1
        if self.tape is not None:
            self.tape.record("and", len(pairs), total)
        return unpack_slices(Z, [m for _, _, m in pairs])

    def and_bits(self, x: int, y: int, m: int) -> int:
        return self.and_pairs([(x, y, m)])[0]

    def or_bits(self, x: int, y: int, m: int) -> int:
        return x ^ y ^ self.and_bits(x, y, m)

    def open_bits(self, x: int, m: int) -> int:
        """Reveal an m-bit column to both parties."""
        mask = ones(m)
        peer = self.ch.mpc_exchange(pack_open_pair(x & mask, 0, m))
        d2, _ = unpack_open_pair(peer, m)
        self.stats.rounds += 1
        if self.tape is not None:
            self.tape.record("open", m)
        return (x & mask) ^ d2

    # ---- instrumentation ---------------------------------------------------

    @contextmanager
    def step(self, name: str):
        st = self.stats.steps.setdefault(name, StepStats())
        gates0, rounds0 = self.stats.and_gates, self.stats.rounds
        sent0 = self.ch.bytes_sent
        t0 = time.perf_counter()
        try:
            yield st
        finally:
            st.seconds += time.perf_counter() - t0
            st.and_gates += self.stats.and_gates - gates0
            st.rounds += self.stats.rounds - rounds0
            st.bytes_sent += self.ch.bytes_sent - sent0


# ---- word-vector circuits over columns -------------------------------------
# A "word vector" is a list of columns, index = bit significance, each column
# carrying one bit of the word for every lane.

def vec_xor(a: list[int], b: list[int]) -> list[int]:
    return [x ^ y for x, y in zip(a, b)]


def vec_not(eng: Engine, a: list[int], m: int) -> list[int]:
    return [eng.not_bits(c, m) for c in a]


def vec_and_bit(eng: Engine, bit: int, cols: list[int], m: int) -> list[int]:
    """AND one shared bit column against every column (mask replication)."""
    return eng.and_pairs([(bit, c, m) for c in cols])


def vec_mux(eng: Engine, cond: int, t: list[int], f: list[int], m: int) -> list[int]:
    """Per-lane select: cond ? t : f.  Costs one AND per word bit."""
    if len(t) != len(f):
        raise ValidationError("mux operand widths differ")
    delta = vec_and_bit(eng, cond, vec_xor(t, f), m)
    return vec_xor(f, delta)


def vec_add_many(eng: Engine, terms, m: int) -> list[list[int]]:
    """Ripple-carry add several equal-width pairs, batching per bit position.

    `terms` is a list of (a_cols, b_cols); all sums wrap modulo 2^k.
    """
    k = len(terms[0][0])
    outs = [[] for _ in terms]
    carries = [0] * len(terms)
    for i in range(k):
        for t, (a, b) in enumerate(terms):
            outs[t].append(a[i] ^ b[i] ^ carries[t])
        if i == k - 1:
            break
        if i == 0:
            gen = eng.and_pairs([(a[0], b[0], m) for a, b in terms])
            carries = gen
        else:
            pairs = []
            for t, (a, b) in enumerate(terms):
                pairs.append((a[i], b[i], m))
                pairs.append((a[i] ^ b[i], carries[t], m))
            res = eng.and_pairs(pairs)
            carries = [res[2 * t] ^ res[2 * t + 1] for t in range(len(terms))]
    return outs


def vec_add(eng: Engine, a: list[int], b: list[int], m: int) -> list[int]:
    if len(a) != len(b):
        raise ValidationError("add operand widths differ")
    return vec_add_many(eng, [(a, b)], m)[0]


def _combine_lt(eng: Engine, lt: list[int], eq: list[int], m: int) -> tuple[list[int], list[int]]:
    """One tree level combining (lt, eq) pairs; index = significance."""
    nlt, neq = [], []
    pairs = []
    for i in range(0, len(lt) - 1, 2):
        lo, hi = i, i + 1
        pairs.append((eq[hi], lt[lo], m))
        pairs.append((eq[hi], eq[lo], m))
    res = eng.and_pairs(pairs)
    for idx, i in enumerate(range(0, len(lt) - 1, 2)):
        nlt.append(lt[i + 1] ^ res[2 * idx])
        neq.append(res[2 * idx + 1])
    if len(lt) % 2:
        nlt.append(lt[-1])
        neq.append(eq[-1])
    return nlt, neq


def vec_lt(eng: Engine, a: list[int], b: list[int], m: int) -> int:
    """Unsigned a < b per lane, log-depth."""
    if len(a) != len(b):
        raise ValidationError("compare operand widths differ")
    k = len(a)
    na = vec_not(eng, a, m)
    lt = eng.and_pairs([(na[i], b[i], m) for i in range(k)])
    eq = [eng.not_bits(a[i] ^ b[i], m) for i in range(k)]
    while len(lt) > 1:
        lt, eq = _combine_lt(eng, lt, eq, m)
    return lt[0]


def vec_eq(eng: Engine, a: list[int], b: list[int], m: int) -> int:
    """a == b per lane: AND-tree over XNOR bits."""
    if len(a) != len(b):
        raise ValidationError("compare operand widths differ")
    eq = [eng.not_bits(a[i] ^ b[i], m) for i in range(len(a))]
    while len(eq) > 1:
        nxt = []
        res = eng.and_pairs([(eq[i], eq[i + 1], m) for i in range(0, len(eq) - 1, 2)])
        nxt.extend(res)
        if len(eq) % 2:
            nxt.append(eq[-1])
        eq = nxt
    return eq[0]


def fold_or_lanes(eng: Engine, col: int, n: int) -> int:
    """OR-reduce all lanes of a column into lane 0."""
    while n > 1:
        h = (n + 1) // 2
        lo = col & ones(h)
        hi = col >> h
        col = lo ^ hi ^ eng.and_bits(lo, hi, h)
        n = h
    return col & 1
