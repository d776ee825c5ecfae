"""Deterministic synthetic multi-site cohort generator.

Generation is a pure function of the seed.  Overlapping patients share tokens
across site pairs with identical demographics everywhere (conflict-free), so
cross-strategy comparisons are exact.  Per-site clinical values (blood
pressure, exclusion flags) are drawn independently per site and year, which
exercises cross-site flag folding.
"""

from __future__ import annotations

import io
import random
from dataclasses import dataclass
from pathlib import Path

from .errors import ValidationError
from .records import CSV_COLUMNS, ETHNICITY_LABELS, RACE_LABELS, SEX_LABELS, write_site_csv


@dataclass(frozen=True)
class GenParams:
    sites: int = 3
    patients_per_site: int = 1000
    overlap_fraction: float = 0.05
    years: tuple[int, ...] = (2018, 2019, 2020)
    htn_prevalence: float = 0.30
    uncontrolled_fraction: float = 0.35
    exclusion_rate: float = 0.04
    seed: int = 0

    def __post_init__(self):
        if self.sites < 1:
            raise ValidationError("need at least one site")
        if self.patients_per_site < 0:
            raise ValidationError("patients_per_site must be >= 0")
        for name in ("overlap_fraction", "htn_prevalence", "uncontrolled_fraction",
                     "exclusion_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} must be within [0, 1]")
        if self.overlap_fraction > 0 and self.sites < 2:
            raise ValidationError("overlap requires at least two sites")


@dataclass(frozen=True)
class _Patient:
    token: int
    age: int
    sex: str
    race: str
    ethnicity: str
    sites: tuple[int, ...]


def _draw_demographics(rng: random.Random) -> tuple[int, str, str, str]:
    age = rng.randint(18, 100)
    sex = "Unknown" if rng.random() < 0.02 else rng.choice(SEX_LABELS[:2])
    race = "Unknown" if rng.random() < 0.05 else rng.choice(RACE_LABELS[:5])
    eth = "Unknown" if rng.random() < 0.05 else rng.choice(ETHNICITY_LABELS[:2])
    return age, sex, race, eth


def _make_patients(params: GenParams, rng: random.Random) -> list[_Patient]:
    shared_quota = round(params.overlap_fraction * params.patients_per_site)
    tokens: set[int] = set()

    def new_token() -> int:
        while True:
            t = rng.getrandbits(63) + 1
            if t not in tokens:
                tokens.add(t)
                return t

    patients: list[_Patient] = []
    remaining = [shared_quota] * params.sites
    site_pairs = [(i, j) for i in range(params.sites) for j in range(i + 1, params.sites)]
    pair_idx = 0
    # shared patients live at exactly two sites; cycle pairs until quotas fill
    while site_pairs and any(r > 0 for r in remaining):
        for _ in range(len(site_pairs)):
            i, j = site_pairs[pair_idx % len(site_pairs)]
            pair_idx += 1
            if remaining[i] > 0 and remaining[j] > 0:
                break
        else:
            # quotas can be off by one when no pair has room on both sides
            i = remaining.index(max(remaining))
            j = min((k for k in range(params.sites) if k != i),
                    key=lambda k: (-remaining[k], k))
            if remaining[i] <= 0:
                break
        age, sex, race, eth = _draw_demographics(rng)
        patients.append(_Patient(new_token(), age, sex, race, eth, (i, j)))
        remaining[i] -= 1
        remaining[j] -= 1

    placed = [sum(1 for p in patients if s in p.sites) for s in range(params.sites)]
    for site in range(params.sites):
        for _ in range(params.patients_per_site - placed[site]):
            age, sex, race, eth = _draw_demographics(rng)
            patients.append(_Patient(new_token(), age, sex, race, eth, (site,)))
    return patients


def generate_synthetic(params: GenParams) -> dict[str, str]:
    """Produce one CSV text per site, keyed site1..siteN."""
    rng = random.Random(params.seed)
    patients = _make_patients(params, rng)

    rows_by_site: dict[int, list[dict]] = {s: [] for s in range(params.sites)}
    for patient in patients:
        multi = 1 if len(patient.sites) > 1 else 0
        for site in patient.sites:
            for year in params.years:
                htn = 1 if rng.random() < params.htn_prevalence else 0
                if htn and rng.random() < params.uncontrolled_fraction:
                    mode = rng.randrange(3)
                    sbp = rng.randint(141, 200) if mode != 1 else rng.randint(90, 140)
                    dbp = rng.randint(91, 120) if mode != 0 else rng.randint(60, 90)
                else:
                    sbp = rng.randint(90, 140)
                    dbp = rng.randint(60, 90)
                flags = {k: 0 for k in ("deceased", "pregnant", "renal", "transplant", "inpatient")}
                if rng.random() < params.exclusion_rate:
                    flags[rng.choice(list(flags))] = 1
                rows_by_site[site].append({
                    "participant_token": str(patient.token),
                    "site_id": f"site{site + 1}",
                    "study_year": str(year),
                    "age": str(patient.age),
                    "sex": patient.sex,
                    "race": patient.race,
                    "ethnicity": patient.ethnicity,
                    "htn_dx": str(htn),
                    "sbp": str(sbp),
                    "dbp": str(dbp),
                    "ambulatory": "1",
                    "multi_site": str(multi),
                    **{k: str(v) for k, v in flags.items()},
                })

    out: dict[str, str] = {}
    for site in range(params.sites):
        buf = io.StringIO()
        write_site_csv(rows_by_site[site], buf)
        out[f"site{site + 1}"] = buf.getvalue()
    return out


def write_synthetic(params: GenParams, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, text in generate_synthetic(params).items():
        path = out_dir / f"{name}.csv"
        path.write_text(text, encoding="utf-8")
        paths.append(path)
    return paths
