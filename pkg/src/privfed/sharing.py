"""Two-party XOR secret sharing and the trusted triple dealer.

Reconstruction is always the XOR of exactly two shares.  The default random
source is the process CSPRNG; deterministic `random.Random` instances are
accepted for reproducible tests only.
"""

from __future__ import annotations

import secrets
import struct
from dataclasses import dataclass

from .errors import PairingError, SchemaError, ShareMismatchError, ValidationError, WidthError
from .records import RECORD_BITS, RECORD_FIELDS, CodedRecord, unpack_record

_SYSRAND = secrets.SystemRandom()

MAX_WIDTH = 64
RECORD_ROW_BYTES = (RECORD_BITS + 7) // 8
RECORD_ROW_PAD = RECORD_ROW_BYTES * 8 - RECORD_BITS

SHARE_MAGIC = b"VDFS"
SHARE_VERSION = 1
# magic, version, share_index, table_id, row_count, row_width_bits (little endian)
_HEADER = struct.Struct("<4sHBIQH")

TRIPLE_BLOCK_BITS = 1 << 16


@dataclass(frozen=True)
class WordShare:
    """One party's share of a k-bit unsigned word."""

    value: int
    width: int

    def __post_init__(self):
        if not 1 <= self.width <= MAX_WIDTH:
            raise WidthError(f"width {self.width} outside 1..{MAX_WIDTH}")
        if not 0 <= self.value < (1 << self.width):
            raise WidthError(f"share value {self.value} does not fit in {self.width} bits")


@dataclass(frozen=True)
class AndTriple:
    """One party's share of a correlated (a, b, c = a AND b) bit triple."""

    a: int
    b: int
    c: int


def split(word: int, width: int, rng=None) -> tuple[WordShare, WordShare]:
    """Split a k-bit word into two uniform XOR shares."""
    if not 1 <= width <= MAX_WIDTH:
        raise WidthError(f"width {width} outside 1..{MAX_WIDTH}")
    if not 0 <= word < (1 << width):
        raise WidthError(f"word {word} does not fit in {width} bits")
    rng = rng or _SYSRAND
    r = rng.getrandbits(width)
    return WordShare(r, width), WordShare(word ^ r, width)


def reconstruct(s1: WordShare, s2: WordShare) -> int:
    if s1.width != s2.width:
        raise ShareMismatchError(f"share widths differ: {s1.width} vs {s2.width}")
    return s1.value ^ s2.value


@dataclass(frozen=True)
class ShareFile:
    """One party's share of a table at rest: public header plus packed rows."""

    share_index: int
    table_id: int
    row_count: int
    row_width_bits: int
    payload: bytes

    def __post_init__(self):
        if self.share_index not in (1, 2):
            raise ValidationError(f"share_index must be 1 or 2, got {self.share_index}")
        expected = self.row_count * ((self.row_width_bits + 7) // 8)
        if len(self.payload) != expected:
            raise ValidationError(
                f"payload is {len(self.payload)} bytes, expected {expected} "
                f"for {self.row_count} rows of {self.row_width_bits} bits"
            )

    @property
    def row_bytes(self) -> int:
        return (self.row_width_bits + 7) // 8

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(
            SHARE_MAGIC, SHARE_VERSION, self.share_index,
            self.table_id, self.row_count, self.row_width_bits,
        )
        return header + self.payload

    @classmethod
    def from_bytes(cls, buf: bytes, offset: int = 0) -> tuple["ShareFile", int]:
        """Parse one table record; returns (record, offset past it)."""
        if len(buf) - offset < _HEADER.size:
            raise ValidationError("truncated share file header")
        magic, version, idx, table_id, rows, width = _HEADER.unpack_from(buf, offset)
        if magic != SHARE_MAGIC:
            raise ValidationError(f"bad magic {magic!r}")
        if version != SHARE_VERSION:
            raise ValidationError(f"unsupported share file version {version}")
        body_start = offset + _HEADER.size
        body_len = rows * ((width + 7) // 8)
        if len(buf) - body_start < body_len:
            raise ValidationError("truncated share file payload")
        rec = cls(idx, table_id, rows, width, bytes(buf[body_start:body_start + body_len]))
        return rec, body_start + body_len


def check_pairing(f1: ShareFile, f2: ShareFile) -> None:
    if {f1.share_index, f2.share_index} != {1, 2}:
        raise PairingError(f"need share indices 1 and 2, got {f1.share_index} and {f2.share_index}")
    for attr in ("table_id", "row_count", "row_width_bits"):
        a, b = getattr(f1, attr), getattr(f2, attr)
        if a != b:
            raise PairingError(f"{attr} mismatch: {a} vs {b}")


def _split_row_fields(values, fields, rng) -> tuple[int, int]:
    """Split one row per field, returning the two packed row integers (MSB first)."""
    acc1 = acc2 = 0
    for (name, width), v in zip(fields, values):
        s1, s2 = split(v, width, rng)
        acc1 = (acc1 << width) | s1.value
        acc2 = (acc2 << width) | s2.value
    return acc1, acc2


def share_table(records: list[CodedRecord], rng=None, table_id: int = 0) -> tuple[ShareFile, ShareFile]:
    """Split a record table into a pair of share files with mirrored metadata."""
    rng = rng or _SYSRAND
    rows1 = bytearray()
    rows2 = bytearray()
    for rec in records:
        r1, r2 = _split_row_fields(rec.field_values(), RECORD_FIELDS, rng)
        rows1 += (r1 << RECORD_ROW_PAD).to_bytes(RECORD_ROW_BYTES, "big")
        rows2 += (r2 << RECORD_ROW_PAD).to_bytes(RECORD_ROW_BYTES, "big")
    return (
        ShareFile(1, table_id, len(records), RECORD_BITS, bytes(rows1)),
        ShareFile(2, table_id, len(records), RECORD_BITS, bytes(rows2)),
    )


def reconstruct_table(f1: ShareFile, f2: ShareFile) -> list[CodedRecord]:
    check_pairing(f1, f2)
    if f1.row_width_bits != RECORD_BITS:
        raise SchemaError(f"not a record table (row width {f1.row_width_bits})")
    nbytes = f1.row_bytes
    out = []
    for i in range(f1.row_count):
        a = f1.payload[i * nbytes:(i + 1) * nbytes]
        b = f2.payload[i * nbytes:(i + 1) * nbytes]
        out.append(unpack_record(bytes(x ^ y for x, y in zip(a, b))))
    return out


def share_generic_rows(rows: list[list[int]], fields, rng=None, table_id: int = 0,
                       share_index_base: tuple[int, int] = (1, 2)) -> tuple[ShareFile, ShareFile]:
    """Split rows of arbitrary field layout (used for dense cube uploads)."""
    rng = rng or _SYSRAND
    bits = sum(w for _, w in fields)
    nbytes = (bits + 7) // 8
    pad = nbytes * 8 - bits
    rows1 = bytearray()
    rows2 = bytearray()
    for values in rows:
        r1, r2 = _split_row_fields(values, fields, rng)
        rows1 += (r1 << pad).to_bytes(nbytes, "big")
        rows2 += (r2 << pad).to_bytes(nbytes, "big")
    i1, i2 = share_index_base
    return (
        ShareFile(i1, table_id, len(rows), bits, bytes(rows1)),
        ShareFile(i2, table_id, len(rows), bits, bytes(rows2)),
    )


@dataclass(frozen=True)
class TripleBlock:
    """One party's half of a block of correlated AND triples, as bit masks."""

    index: int
    nbits: int
    a: int
    b: int
    c: int


def deal_triple_block(index: int, nbits: int = TRIPLE_BLOCK_BITS, rng=None) -> tuple[TripleBlock, TripleBlock]:
    """Generate one correlated block: reconstructed c equals a AND b bitwise."""
    if rng is None:
        # single kernel read for the five masks
        nbytes = (nbits + 7) // 8
        raw = int.from_bytes(secrets.token_bytes(5 * nbytes), "little")
        mask = (1 << nbits) - 1
        a1 = raw & mask
        a2 = (raw >> nbits) & mask
        b1 = (raw >> (2 * nbits)) & mask
        b2 = (raw >> (3 * nbits)) & mask
        c1 = (raw >> (4 * nbits)) & mask
    else:
        a1 = rng.getrandbits(nbits)
        a2 = rng.getrandbits(nbits)
        b1 = rng.getrandbits(nbits)
        b2 = rng.getrandbits(nbits)
        c1 = rng.getrandbits(nbits)
    c2 = ((a1 ^ a2) & (b1 ^ b2)) ^ c1
    return TripleBlock(index, nbits, a1, b1, c1), TripleBlock(index, nbits, a2, b2, c2)


def deal_triples(count: int, rng=None) -> tuple[list[AndTriple], list[AndTriple]]:
    """Deal `count` bit triples as per-party lists."""
    if count < 1:
        raise ValidationError(f"triple count must be >= 1, got {count}")
    blk1, blk2 = deal_triple_block(0, count, rng)
    out1 = []
    out2 = []
    for i in range(count):
        out1.append(AndTriple((blk1.a >> i) & 1, (blk1.b >> i) & 1, (blk1.c >> i) & 1))
        out2.append(AndTriple((blk2.a >> i) & 1, (blk2.b >> i) & 1, (blk2.c >> i) & 1))
    return out1, out2
