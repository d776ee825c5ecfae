"""Benchmark harness: in-process duo runs with per-step timing.

Reports wall time, AND-gate counts, rounds, transcript bytes, comparator
counts, and triple consumption per pipeline step, as CSV rows for plotting.
"""

from __future__ import annotations

import csv
import io
import time

from .config import StudyConfig
from .records import read_site_csv
from .study import RunResult, run_protocol, _prepare_all
from .synth import GenParams, generate_synthetic

BENCH_COLUMNS = ("mode", "years", "patients_per_site", "input_rows", "step",
                 "seconds", "and_gates", "rounds", "bytes_sent",
                 "compare_exchanges", "triples_total")

STEP_ORDER = ("ingest_share", "exclusion", "dedup", "cube", "densify",
              "cube_add", "rollup_reveal", "total")


def bench(modes, year_counts, sizes, seed: int = 0, overlap: float = 0.05,
          base_years: tuple[int, ...] = (2018, 2019, 2020),
          batch_count: int = 25) -> list[dict]:
    rows: list[dict] = []
    for mode in modes:
        for yc in year_counts:
            years = tuple(base_years[:yc])
            for patients in sizes:
                params = GenParams(sites=3, patients_per_site=patients,
                                   overlap_fraction=overlap, years=years, seed=seed)
                csvs = generate_synthetic(params)
                config = StudyConfig(years=years, batch_count=batch_count, mode=mode,
                                     seed=seed, partners=tuple(sorted(csvs)))
                site_records = {pid: read_site_csv(io.StringIO(text), years)
                                for pid, text in csvs.items()}
                input_rows = sum(len(r) for r in site_records.values())

                t0 = time.perf_counter()
                uploads = _prepare_all(config, site_records)
                ingest_seconds = time.perf_counter() - t0

                t1 = time.perf_counter()
                res = run_protocol(config, uploads, record=True)
                total_seconds = time.perf_counter() - t1

                rows.extend(_report_rows(res, mode, yc, patients, input_rows,
                                         ingest_seconds, total_seconds))
    return rows


def _report_rows(res: RunResult, mode: str, years: int, patients: int,
                 input_rows: int, ingest_seconds: float, total_seconds: float) -> list[dict]:
    stats = res.stats(1)
    eng = res.duo.engines[1]
    base = {"mode": mode, "years": years, "patients_per_site": patients,
            "input_rows": input_rows}
    out = [dict(base, step="ingest_share", seconds=round(ingest_seconds, 6),
                and_gates=0, rounds=0, bytes_sent=0, compare_exchanges=0,
                triples_total=0)]
    for name, st in stats.steps.items():
        out.append(dict(base, step=name, seconds=round(st.seconds, 6),
                        and_gates=st.and_gates, rounds=st.rounds,
                        bytes_sent=st.bytes_sent, compare_exchanges=0,
                        triples_total=0))
    out.append(dict(base, step="total", seconds=round(ingest_seconds + total_seconds, 6),
                    and_gates=stats.and_gates, rounds=stats.rounds,
                    bytes_sent=eng.ch.bytes_sent,
                    compare_exchanges=stats.compare_exchanges,
                    triples_total=eng.triples.consumed))
    order = {name: i for i, name in enumerate(STEP_ORDER)}
    out.sort(key=lambda r: order.get(r["step"], 99))
    return out


def render_bench_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=BENCH_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow(row)
    return buf.getvalue()
