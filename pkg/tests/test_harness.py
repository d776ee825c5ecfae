import io
import subprocess
import sys
from collections import Counter
from pathlib import Path

import pytest

from privfed.config import StudyConfig
from privfed.errors import ValidationError
from privfed.oracle import oracle_run
from privfed.records import read_site_csv
from privfed.results import StudyOutput
from privfed.synth import GenParams, generate_synthetic

YEARS = (2019, 2020)


def test_generator_deterministic():
    params = GenParams(sites=3, patients_per_site=40, overlap_fraction=0.1,
                       years=YEARS, seed=4)
    assert generate_synthetic(params) == generate_synthetic(params)
    other = GenParams(sites=3, patients_per_site=40, overlap_fraction=0.1,
                      years=YEARS, seed=5)
    assert generate_synthetic(params) != generate_synthetic(other)


def _tokens_per_site(csvs):
    out = {}
    for site, text in csvs.items():
        toks = set()
        for line in text.splitlines()[1:]:
            toks.add(int(line.split(",")[0]))
        out[site] = toks
    return out


def test_generator_overlap_targets():
    params = GenParams(sites=3, patients_per_site=1000, overlap_fraction=0.101,
                       years=(2019,), seed=8)
    toks = _tokens_per_site(generate_synthetic(params))
    for site in toks:
        others = set().union(*(toks[o] for o in toks if o != site))
        shared = len(toks[site] & others)
        assert abs(shared - 101) <= 1
        assert len(toks[site]) == 1000


def test_generator_zero_overlap_disjoint():
    params = GenParams(sites=3, patients_per_site=50, overlap_fraction=0.0,
                       years=(2019,), seed=9)
    toks = _tokens_per_site(generate_synthetic(params))
    assert not (toks["site1"] & toks["site2"])
    assert not (toks["site1"] & toks["site3"])
    assert not (toks["site2"] & toks["site3"])


def test_generator_multisite_labels_match_intersections():
    params = GenParams(sites=3, patients_per_site=60, overlap_fraction=0.2,
                       years=YEARS, seed=10)
    csvs = generate_synthetic(params)
    per_year_sites = {}
    rows = []
    for site, text in csvs.items():
        for line in text.splitlines()[1:]:
            cells = line.split(",")
            token, year, ms = int(cells[0]), cells[2], cells[16]
            per_year_sites.setdefault((token, year), set()).add(site)
            rows.append((token, year, ms))
    for token, year, ms in rows:
        want = "1" if len(per_year_sites[(token, year)]) > 1 else "0"
        assert ms == want


def test_generator_demographics_conflict_free():
    params = GenParams(sites=3, patients_per_site=80, overlap_fraction=0.3,
                       years=YEARS, seed=11)
    csvs = generate_synthetic(params)
    demo = {}
    for text in csvs.values():
        for line in text.splitlines()[1:]:
            cells = line.split(",")
            key = cells[0]
            val = (cells[3], cells[4], cells[5], cells[6])
            assert demo.setdefault(key, val) == val


def test_generator_rejects_bad_params():
    with pytest.raises(ValidationError):
        GenParams(overlap_fraction=1.5)
    with pytest.raises(ValidationError):
        GenParams(sites=1, overlap_fraction=0.5)


def test_oracle_empty_inputs_all_zero():
    config = StudyConfig(years=YEARS, partners=("site1",))
    header = ",".join(
        ("participant_token", "site_id", "study_year", "age", "sex", "race",
         "ethnicity", "htn_dx", "sbp", "dbp", "ambulatory", "deceased",
         "pregnant", "renal", "transplant", "inpatient", "multi_site")) + "\n"
    out = oracle_run([io.StringIO(header)], config)
    for row in out.rows:
        assert row.counts == (0, 0, 0, 0)
        assert row.suppressed == (False, False, False, False)


def test_oracle_single_patient_suppressed():
    config = StudyConfig(years=(2019,), partners=("site1",))
    header = ("participant_token,site_id,study_year,age,sex,race,ethnicity,"
              "htn_dx,sbp,dbp,ambulatory,deceased,pregnant,renal,transplant,"
              "inpatient,multi_site\n")
    row = "77,site1,2019,45,Female,White,Non-Hispanic,1,150,85,1,0,0,0,0,0,0\n"
    out = oracle_run([io.StringIO(header + row)], config)
    cell = out.cell("age", "40-50", 2019)
    assert cell.suppressed[0] and cell.suppressed[1]  # 1 < 11 on both counters
    assert cell.counts[0] == cell.counts[1] == 0
    sex_cell = out.cell("sex", "Female", 2019)
    assert sex_cell.suppressed[1]


def test_oracle_deterministic():
    params = GenParams(sites=2, patients_per_site=40, overlap_fraction=0.1,
                       years=YEARS, seed=12)
    config = StudyConfig(years=YEARS, partners=("site1", "site2"))
    csvs = generate_synthetic(params)
    a = oracle_run([io.StringIO(t) for t in csvs.values()], config).render_csv()
    b = oracle_run([io.StringIO(t) for t in csvs.values()], config).render_csv()
    assert a == b


def test_results_csv_round_trip():
    params = GenParams(sites=2, patients_per_site=100, overlap_fraction=0.05,
                       years=YEARS, seed=13)
    config = StudyConfig(years=YEARS, partners=("site1", "site2"))
    csvs = generate_synthetic(params)
    out = oracle_run([io.StringIO(t) for t in csvs.values()], config)
    text = out.render_csv()
    assert StudyOutput.parse_csv(text) == out
    assert StudyOutput.parse_csv(text).render_csv() == text
    # suppressed cells are rendered as the * marker
    assert "*" in text


def test_results_rows_cover_all_categories():
    config = StudyConfig(years=YEARS, partners=("site1",))
    header = ("participant_token,site_id,study_year,age,sex,race,ethnicity,"
              "htn_dx,sbp,dbp,ambulatory,deceased,pregnant,renal,transplant,"
              "inpatient,multi_site\n")
    out = oracle_run([io.StringIO(header)], config)
    per_dim = Counter(r.dimension for r in out.rows)
    assert per_dim == {"age": 7 * 2, "sex": 3 * 2, "race": 6 * 2, "ethnicity": 3 * 2}
    assert any(r.category == "Unknown" for r in out.rows)


def test_workload_grows_with_study_years_and_oracle_scales():
    # input rows grow with configured years; the plaintext path handles
    # six-figure row counts in one process
    rows_by_years = []
    for yc in (1, 2, 3):
        years = (2018, 2019, 2020)[:yc]
        params = GenParams(sites=3, patients_per_site=11_200,
                           overlap_fraction=0.03, years=years, seed=20)
        records = [read_site_csv(io.StringIO(t), years)
                   for t in generate_synthetic(params).values()]
        rows_by_years.append(sum(len(r) for r in records))
        if yc == 3:
            config = StudyConfig(years=years,
                                 partners=("site1", "site2", "site3"))
            out = oracle_run(
                [io.StringIO(t) for t in generate_synthetic(params).values()],
                config)
            assert any(r.counts[1] for r in out.rows)
    assert rows_by_years[0] < rows_by_years[1] < rows_by_years[2]
    assert rows_by_years[2] > 100_000


def _cli(*args, **kw):
    return subprocess.run([sys.executable, "-m", "privfed", *args],
                          capture_output=True, text=True, **kw)


def test_cli_gen_share_oracle_open(tmp_path):
    cfg = tmp_path / "study.cfg"
    cfg.write_text("years=2019\nbatch_count=2\nmode=full\nseed=3\n"
                   "partners=site1,site2\n")
    r = _cli("gen", "--sites", "2", "--patients", "30", "--overlap", "0.1",
             "--years", "2019", "--seed", "3", "--out-dir", str(tmp_path / "data"))
    assert r.returncode == 0, r.stderr

    r = _cli("share", "--input", str(tmp_path / "data/site1.csv"),
             "--out-prefix", str(tmp_path / "s1"), "--config", str(cfg))
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "s1.1.share").exists() and (tmp_path / "s1.2.share").exists()

    r = _cli("oracle", "--inputs", str(tmp_path / "data"), "--config", str(cfg),
             "--out", str(tmp_path / "oracle.csv"))
    assert r.returncode == 0, r.stderr
    out = StudyOutput.parse_csv((tmp_path / "oracle.csv").read_text())
    assert out.rows

    # open with a single share file cannot reconstruct
    r = _cli("open", "--share-a", str(tmp_path / "s1.1.share"),
             "--config", str(cfg))
    assert r.returncode == 1


def test_cli_bench_smoke(tmp_path):
    r = _cli("bench", "--mode", "aggregate_only", "--years", "1", "--sizes", "30",
             "--seed", "1", "--out", str(tmp_path / "bench.csv"))
    assert r.returncode == 0, r.stderr
    text = (tmp_path / "bench.csv").read_text()
    assert text.splitlines()[0].startswith("mode,years,")
    assert "total" in text


def test_cli_rejects_bad_config(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("years=2019\nmode=nonsense\n")
    r = _cli("oracle", "--inputs", str(tmp_path), "--config", str(cfg))
    assert r.returncode == 1
    assert "mode" in r.stderr
