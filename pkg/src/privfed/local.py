"""In-process two-party harness: queue channels plus an embedded dealer.

Used by the protocol runners, the benchmark, and the test suite.  The wire
framing is identical to the TCP deployment so captured transcripts have the
same shape.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

from .engine import Engine, GateTape, TripleSource
from .sharing import TRIPLE_BLOCK_BITS, deal_triple_block
from .wire import MSG_TRIPLE_BLOCK, Recorder, queue_pair


class LocalDealer:
    """Generates correlated triple blocks on demand for both parties.

    Blocks are created lazily when the first party asks for them and retired
    once both have consumed them, so the two consumers may run ahead of each
    other by any number of blocks without unbounded memory growth.
    """

    def __init__(self, rng=None, block_bits: int = TRIPLE_BLOCK_BITS,
                 recorders: dict[int, Recorder] | None = None):
        self._rng = rng  # None selects the fast CSPRNG path
        self._block_bits = block_bits
        self._lock = threading.Lock()
        self._cache: dict[int, list] = {}
        self._cursor = {1: 0, 2: 0}
        self.blocks_dealt = 0
        self._recorders = recorders or {}

    def next_block_for(self, party: int):
        with self._lock:
            idx = self._cursor[party]
            self._cursor[party] += 1
            if idx not in self._cache:
                b1, b2 = deal_triple_block(idx, self._block_bits, self._rng)
                self._cache[idx] = [b1, b2]
                self.blocks_dealt += 1
            blk = self._cache[idx][party - 1]
            if min(self._cursor.values()) > idx:
                del self._cache[idx]
        rec = self._recorders.get(party)
        if rec is not None:
            rec.note("recv", MSG_TRIPLE_BLOCK, 1 + 4 + 3 * (self._block_bits // 8))
        return blk

    def source(self, party: int) -> TripleSource:
        return TripleSource(lambda: self.next_block_for(party))


@dataclass
class DuoResult:
    results: dict = field(default_factory=dict)
    engines: dict = field(default_factory=dict)
    recorders: dict = field(default_factory=dict)
    dealer_recorders: dict = field(default_factory=dict)
    dealer: LocalDealer | None = None


def run_duo(fn1, fn2, rng=None, record=False, keep_payloads=False,
            tape: bool = False, timeout: float = 600.0) -> DuoResult:
    """Run two party closures fn(engine) -> result on a loopback channel pair."""
    rec1 = Recorder("pair:1", keep_payloads) if record else None
    rec2 = Recorder("pair:2", keep_payloads) if record else None
    drec = {1: Recorder("dealer:1"), 2: Recorder("dealer:2")} if record else {}
    ch1, ch2 = queue_pair(rec1, rec2, timeout)
    dealer = LocalDealer(rng, recorders=drec)
    out = DuoResult(dealer=dealer)
    if record:
        out.recorders = {1: rec1, 2: rec2}
        out.dealer_recorders = drec
    errors: dict[int, BaseException] = {}

    def runner(party, fn, ch):
        eng = Engine(party, ch, dealer.source(party), GateTape() if tape else None)
        out.engines[party] = eng
        try:
            out.results[party] = fn(eng)
        except BaseException as exc:  # propagate to the caller thread
            errors[party] = exc
            ch.close()

    t1 = threading.Thread(target=runner, args=(1, fn1, ch1), daemon=True)
    t2 = threading.Thread(target=runner, args=(2, fn2, ch2), daemon=True)
    t1.start(); t2.start()
    t1.join(timeout); t2.join(timeout)
    if t1.is_alive() or t2.is_alive():
        raise TimeoutError("two-party run did not finish in time")
    for party in (1, 2):
        if party in errors:
            raise errors[party]
    return out
