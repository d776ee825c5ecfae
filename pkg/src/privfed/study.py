"""The hypertension-control study pipeline over two compute parties.

Ties together record encoding, deterministic token batching, the oblivious
relational operators, and the three evaluation strategies: full (every row
through secure dedup), multisite (secure computation over multi-site rows
plus locally aggregated single-site cubes), and aggregate-only (local cubes
summed, no linkage).
"""

from __future__ import annotations

import hashlib
import secrets
import struct
from dataclasses import dataclass, field

from .config import StudyConfig, batch_capacity
from .engine import Engine
from .errors import ConfigError, PairingError, ValidationError
from .local import DuoResult, run_duo
from .oblivious import ShareTable
from .bitops import rows_to_columns
from .records import PAD_TOKEN, RECORD_BITS, RECORD_FIELDS, CodedRecord, read_site_csv
from .relational import (COUNTER_NAMES, CUBE_TABLE_ID, DIMENSIONS, DenseCubeShare,
                         add_cubes, apply_exclusion, cube_share_from_file, data_cube,
                         dedup_patients, densify_cube, pad_single_site_cube, rollup,
                         suppress_counters)
from .results import StudyOutput, build_output, output_lanes
from .sharing import ShareFile, share_table

_PAD_RECORD = CodedRecord(
    token=PAD_TOKEN, year=3, age_band=7, sex=3, race=7, ethnicity=3,
    denominator=0, numerator=0, excluded=0, multi_site=0, is_dummy=1,
)


def assign_batch(token: int, batch_count: int) -> int:
    """Deterministic co-batching: low 64 bits of SHA-256(token, big-endian) mod B."""
    if batch_count < 1:
        raise ValidationError("batch_count must be >= 1")
    digest = hashlib.sha256(token.to_bytes(8, "big")).digest()
    return (int.from_bytes(digest, "big") & ((1 << 64) - 1)) % batch_count


@dataclass
class PartnerUpload:
    """Everything one data partner contributes, already secret shared."""

    record_tables: list[tuple[ShareFile, ShareFile]] = field(default_factory=list)
    cube: tuple[ShareFile, ShareFile] | None = None
    real_rows: int = 0          # rows entering the secure path, pre-padding
    local_rows: int = 0         # rows aggregated locally instead

    def files_for(self, party: int) -> list[ShareFile]:
        out = [pair[party - 1] for pair in self.record_tables]
        if self.cube is not None:
            out.append(self.cube[party - 1])
        return out


def prepare_upload(records: list[CodedRecord], config: StudyConfig, rng=None) -> PartnerUpload:
    """Split one site's rows into padded per-batch share tables and/or a cube.

    Each batch is padded to a public capacity derived from the row total, so
    upload shapes leak nothing beyond totals.  A batch that outgrows the
    capacity (astronomically unlikely for honest tokens) fails locally.
    """
    mode = config.mode
    if mode == "full":
        secure_rows, local_rows = records, None
    elif mode == "multisite":
        secure_rows = [r for r in records if r.multi_site]
        local_rows = [r for r in records if not r.multi_site]
    elif mode == "aggregate_only":
        secure_rows, local_rows = None, records
    else:
        raise ConfigError(f"unknown mode {mode!r}")

    up = PartnerUpload()
    if secure_rows is not None:
        b_count = config.batch_count
        cap = batch_capacity(len(secure_rows), b_count)
        buckets: list[list[CodedRecord]] = [[] for _ in range(b_count)]
        for rec in secure_rows:
            buckets[assign_batch(rec.token, b_count)].append(rec)
        for b, bucket in enumerate(buckets):
            if len(bucket) > cap:
                raise ValidationError(
                    f"batch {b} holds {len(bucket)} rows, over the capacity {cap}; "
                    "lower batch_count for this input")
            padded = bucket + [_PAD_RECORD] * (cap - len(bucket))
            up.record_tables.append(share_table(padded, rng, table_id=b))
        up.real_rows = len(secure_rows)
    if local_rows is not None:
        up.cube = pad_single_site_cube(local_rows, config.n_years, rng)
        up.local_rows = len(local_rows)
    return up


def table_from_sharefile(sf: ShareFile) -> ShareTable:
    if sf.row_width_bits != RECORD_BITS:
        raise ValidationError(f"not a record table (row width {sf.row_width_bits})")
    cols = rows_to_columns(sf.payload, sf.row_count, RECORD_FIELDS)
    return ShareTable(RECORD_FIELDS, sf.row_count, cols)


@dataclass
class PartyInputs:
    batches: list[ShareTable] = field(default_factory=list)
    cubes: list[DenseCubeShare] = field(default_factory=list)


def build_party_inputs(config: StudyConfig, share_files: dict[str, dict[int, ShareFile]],
                       party: int) -> PartyInputs:
    """Assemble one compute party's working set from validated uploads.

    Batch b's table is the roster-ordered concatenation of every partner's
    batch-b share table, so both parties build identically shaped inputs.
    """
    partners = config.partners or tuple(sorted(share_files))
    inputs = PartyInputs()
    needs_batches = config.mode in ("full", "multisite")
    needs_cubes = config.mode in ("multisite", "aggregate_only")

    for pid in partners:
        tabs = share_files.get(pid, {})
        for sf in tabs.values():
            if sf.share_index != party:
                raise ValidationError(
                    f"share index {sf.share_index} sent to compute party {party}")
        if needs_batches:
            for b in range(config.batch_count):
                if b not in tabs:
                    raise ValidationError(f"partner {pid} missing batch table {b}")
        if needs_cubes and CUBE_TABLE_ID not in tabs:
            raise ValidationError(f"partner {pid} missing cube table")

    if needs_batches:
        for b in range(config.batch_count):
            tbl = None
            for pid in partners:
                st = table_from_sharefile(share_files[pid][b])
                tbl = st if tbl is None else tbl.concat(st)
            inputs.batches.append(tbl)
    if needs_cubes:
        for pid in partners:
            inputs.cubes.append(
                cube_share_from_file(share_files[pid][CUBE_TABLE_ID], config.n_years))
    return inputs


def study_party(eng: Engine, config: StudyConfig, inputs: PartyInputs):
    """One compute party's pipeline; returns per-lane output share rows."""
    years = config.n_years
    total: DenseCubeShare | None = None

    for tbl in inputs.batches:
        with eng.step("exclusion"):
            t = apply_exclusion(eng, tbl)
        with eng.step("dedup"):
            t = dedup_patients(eng, t)
        with eng.step("cube"):
            cells = data_cube(eng, t)
        with eng.step("densify"):
            dense = densify_cube(eng, cells, years)
        with eng.step("cube_add"):
            total = dense if total is None else add_cubes(eng, total, dense)

    with eng.step("cube_add"):
        for cube in inputs.cubes:
            total = cube if total is None else add_cubes(eng, total, cube)

    if total is None:
        raise ValidationError("nothing to aggregate: no batches and no cubes")

    with eng.step("rollup_reveal"):
        tables = {dim: rollup(eng, total, dim) for dim in DIMENSIONS}
        lanes = output_lanes(config.years)
        words = []
        for dim, yi, cat in lanes:
            words.extend(tables[dim][(yi, cat)])
        values, flags = suppress_counters(eng, words, config.suppression_threshold)

    rows = []
    for i in range(len(lanes)):
        vals = tuple(values[4 * i:4 * i + 4])
        fbits = 0
        for k in range(4):
            fbits |= flags[4 * i + k] << k
        rows.append((vals, fbits))
    return rows


# ---- output share serialization ---------------------------------------------

_OUT_HEADER = struct.Struct(">16s32sBI")
_OUT_WORDS = struct.Struct(">IIII")


def serialize_output_share(session_id: bytes, config_hash: bytes, share_index: int,
                           rows) -> bytes:
    buf = bytearray(_OUT_HEADER.pack(session_id, config_hash, share_index, len(rows)))
    for words, flagbits in rows:
        buf += _OUT_WORDS.pack(*words)
        buf.append(flagbits)
    return bytes(buf)


def parse_output_share(payload: bytes):
    if len(payload) < _OUT_HEADER.size:
        raise ValidationError("truncated output share")
    session_id, config_hash, share_index, count = _OUT_HEADER.unpack_from(payload)
    rows = []
    off = _OUT_HEADER.size
    for _ in range(count):
        words = _OUT_WORDS.unpack_from(payload, off)
        flagbits = payload[off + _OUT_WORDS.size]
        rows.append((words, flagbits))
        off += _OUT_WORDS.size + 1
    if off != len(payload):
        raise ValidationError("output share has trailing bytes")
    return session_id, config_hash, share_index, rows


def open_output(payload1: bytes, payload2: bytes, years: tuple[int, ...]) -> StudyOutput:
    """Analyst-side reconstruction of the revealed tables from both shares."""
    s1, h1, i1, rows1 = parse_output_share(payload1)
    s2, h2, i2, rows2 = parse_output_share(payload2)
    if s1 != s2:
        raise PairingError("output shares come from different sessions")
    if h1 != h2:
        raise PairingError("output shares disagree on the study configuration")
    if {i1, i2} != {1, 2} or len(rows1) != len(rows2):
        raise PairingError("output share pair is inconsistent")
    counts = []
    flags = []
    for (w1, f1), (w2, f2) in zip(rows1, rows2):
        counts.append(tuple(a ^ b for a, b in zip(w1, w2)))
        fb = f1 ^ f2
        flags.append(tuple(bool((fb >> k) & 1) for k in range(4)))
    return build_output(years, counts, flags)


# ---- in-process runners -------------------------------------------------------

@dataclass
class RunResult:
    output: StudyOutput
    duo: DuoResult
    session_id: bytes

    def stats(self, party: int = 1):
        return self.duo.engines[party].stats

    def triples(self, party: int = 1) -> int:
        return self.duo.engines[party].triples.consumed

    def tape_digest(self, party: int = 1) -> str:
        return self.duo.engines[party].tape.digest()

    def transcript_shape(self) -> tuple:
        shapes = []
        for key in sorted(self.duo.recorders):
            shapes.append((f"pair:{key}", self.duo.recorders[key].shape()))
        for key in sorted(self.duo.dealer_recorders):
            shapes.append((f"dealer:{key}", self.duo.dealer_recorders[key].shape()))
        return tuple(shapes)


def run_protocol(config: StudyConfig, uploads: dict[str, PartnerUpload],
                 record: bool = False, keep_payloads: bool = False,
                 rng=None) -> RunResult:
    """Evaluate the configured strategy over uploaded shares, in process."""
    files: dict[int, dict[str, dict[int, ShareFile]]] = {1: {}, 2: {}}
    for pid, up in uploads.items():
        for party in (1, 2):
            files[party][pid] = {sf.table_id: sf for sf in up.files_for(party)}
    inputs = {p: build_party_inputs(config, files[p], p) for p in (1, 2)}

    session_id = secrets.token_bytes(16)
    chash = config.config_hash()

    def party_fn(p):
        def fn(eng):
            rows = study_party(eng, config, inputs[p])
            return serialize_output_share(session_id, chash, p, rows)
        return fn

    duo = run_duo(party_fn(1), party_fn(2), rng=rng, record=record,
                  keep_payloads=keep_payloads, tape=True)
    output = open_output(duo.results[1], duo.results[2], config.years)
    return RunResult(output=output, duo=duo, session_id=session_id)


def _prepare_all(config: StudyConfig, site_records: dict[str, list[CodedRecord]],
                 rng=None) -> dict[str, PartnerUpload]:
    if config.partners and set(config.partners) != set(site_records):
        raise ConfigError("partner roster does not match the provided sites")
    return {pid: prepare_upload(recs, config, rng) for pid, recs in site_records.items()}


def run_full_protocol(config: StudyConfig, uploads: dict[str, PartnerUpload],
                      **kw) -> RunResult:
    if config.mode != "full":
        config = config.with_mode("full")
    return run_protocol(config, uploads, **kw)


def run_multisite_optimized(config: StudyConfig, uploads: dict[str, PartnerUpload],
                            **kw) -> RunResult:
    if config.mode != "multisite":
        config = config.with_mode("multisite")
    return run_protocol(config, uploads, **kw)


def run_aggregate_only(config: StudyConfig, uploads: dict[str, PartnerUpload],
                       **kw) -> RunResult:
    if config.mode != "aggregate_only":
        config = config.with_mode("aggregate_only")
    return run_protocol(config, uploads, **kw)


def run_study_from_records(config: StudyConfig, site_records: dict[str, list[CodedRecord]],
                           rng=None, **kw) -> RunResult:
    """Convenience entry: encode -> share -> run, all in process."""
    cfg = config
    if not cfg.partners:
        from dataclasses import replace

        cfg = replace(cfg, partners=tuple(sorted(site_records)))
    uploads = _prepare_all(cfg, site_records, rng)
    return run_protocol(cfg, uploads, **kw)


def run_study_from_csvs(config: StudyConfig, csv_paths: dict[str, object],
                        rng=None, **kw) -> RunResult:
    site_records = {pid: read_site_csv(src, config.years)
                    for pid, src in csv_paths.items()}
    return run_study_from_records(config, site_records, rng=rng, **kw)
