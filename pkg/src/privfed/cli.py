"""Command-line surface binding all roles into runnable processes.

Exit codes: 0 success, 1 validation failure, 2 protocol abort.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import StudyConfig
from .errors import ProtocolAbort, ValidationError
from .oracle import oracle_run
from .records import read_site_csv
from .results import StudyOutput
from .sharing import ShareFile
from .study import open_output, prepare_upload
from .synth import GenParams, write_synthetic


def write_share_container(path, files: list[ShareFile]) -> None:
    with open(path, "wb") as fh:
        for sf in files:
            fh.write(sf.to_bytes())


def read_share_container(path) -> list[ShareFile]:
    buf = Path(path).read_bytes()
    out = []
    off = 0
    while off < len(buf):
        sf, off = ShareFile.from_bytes(buf, off)
        out.append(sf)
    return out


def _cmd_gen(args) -> int:
    params = GenParams(
        sites=args.sites, patients_per_site=args.patients,
        overlap_fraction=args.overlap,
        years=tuple(int(y) for y in args.years.split(",")),
        htn_prevalence=args.htn_prevalence,
        uncontrolled_fraction=args.uncontrolled_fraction,
        exclusion_rate=args.exclusion_rate, seed=args.seed,
    )
    paths = write_synthetic(params, args.out_dir)
    for p in paths:
        print(p)
    return 0


def _cmd_share(args) -> int:
    config = StudyConfig.load(args.config)
    records = read_site_csv(args.input, config.years)
    upload = prepare_upload(records, config)
    write_share_container(f"{args.out_prefix}.1.share", upload.files_for(1))
    write_share_container(f"{args.out_prefix}.2.share", upload.files_for(2))
    print(f"{args.out_prefix}.1.share")
    print(f"{args.out_prefix}.2.share")
    return 0


def _cmd_dealer(args) -> int:
    from .federation import run_dealer

    config = StudyConfig.load(args.config)
    run_dealer(config, listen=args.listen, timeout=args.timeout)
    return 0


def _cmd_compute(args) -> int:
    from .federation import run_compute

    config = StudyConfig.load(args.config)
    run_compute(config, args.role, input_csv=args.input, partner_id=args.partner_id or "",
                output_share_path=args.output_share, timeout=args.timeout)
    return 0


def _cmd_partner(args) -> int:
    from .federation import run_partner

    config = StudyConfig.load(args.config)
    files1 = read_share_container(f"{args.input}.1.share")
    files2 = read_share_container(f"{args.input}.2.share")
    run_partner(config, args.partner_id, files1, files2,
                alice=args.alice, bob=args.bob, timeout=args.timeout)
    return 0


def _cmd_open(args) -> int:
    config = StudyConfig.load(args.config)
    if args.listen:
        from .federation import run_analyst

        output = run_analyst(config, listen=args.listen, timeout=args.timeout)
    else:
        if not (args.share_a and args.share_b):
            raise ValidationError("open needs --share-a and --share-b, or --listen")
        output = open_output(Path(args.share_a).read_bytes(),
                             Path(args.share_b).read_bytes(), config.years)
    text = output.render_csv()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_oracle(args) -> int:
    config = StudyConfig.load(args.config)
    paths = sorted(Path(args.inputs).glob("*.csv"))
    if not paths:
        raise ValidationError(f"no CSV files under {args.inputs}")
    output = oracle_run([str(p) for p in paths], config)
    text = output.render_csv()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_bench(args) -> int:
    from .bench import bench, render_bench_csv

    rows = bench(
        modes=args.mode.split(","),
        year_counts=[int(y) for y in args.years.split(",")],
        sizes=[int(s) for s in args.sizes.split(",")],
        seed=args.seed, overlap=args.overlap, batch_count=args.batch_count,
    )
    text = render_bench_csv(rows)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="privfed",
        description="Private two-party federation for multi-site hypertension reporting",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate deterministic synthetic site CSVs")
    p.add_argument("--sites", type=int, default=3)
    p.add_argument("--patients", type=int, default=1000)
    p.add_argument("--overlap", type=float, default=0.05)
    p.add_argument("--years", default="2018,2019,2020")
    p.add_argument("--htn-prevalence", type=float, default=0.30)
    p.add_argument("--uncontrolled-fraction", type=float, default=0.35)
    p.add_argument("--exclusion-rate", type=float, default=0.04)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=_cmd_gen)

    p = sub.add_parser("share", help="encode a site CSV and split it into share files")
    p.add_argument("--input", required=True)
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--config", required=True)
    p.set_defaults(fn=_cmd_share)

    p = sub.add_parser("dealer", help="serve correlated AND triples to the compute pair")
    p.add_argument("--config", required=True)
    p.add_argument("--listen", help="host:port override for the dealer endpoint")
    p.add_argument("--timeout", type=float, default=600.0)
    p.set_defaults(fn=_cmd_dealer)

    p = sub.add_parser("compute", help="run one compute party")
    p.add_argument("--role", choices=("alice", "bob"), required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--input", help="CSV to self-ingest as a data partner")
    p.add_argument("--partner-id", help="roster id for the self-ingested data")
    p.add_argument("--output-share", help="also write this party's output share here")
    p.add_argument("--timeout", type=float, default=600.0)
    p.set_defaults(fn=_cmd_compute)

    p = sub.add_parser("partner", help="upload pre-split share files to both compute parties")
    p.add_argument("--input", required=True, help="share file prefix (expects .1.share/.2.share)")
    p.add_argument("--config", required=True)
    p.add_argument("--partner-id", required=True)
    p.add_argument("--alice", help="host:port override")
    p.add_argument("--bob", help="host:port override")
    p.add_argument("--timeout", type=float, default=600.0)
    p.set_defaults(fn=_cmd_partner)

    p = sub.add_parser("open", help="reconstruct result tables from both output shares")
    p.add_argument("--share-a")
    p.add_argument("--share-b")
    p.add_argument("--listen", help="host:port to receive OUTPUT_SHARE frames instead")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--timeout", type=float, default=600.0)
    p.set_defaults(fn=_cmd_open)

    p = sub.add_parser("oracle", help="plaintext reference run over a directory of site CSVs")
    p.add_argument("--inputs", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_oracle)

    p = sub.add_parser("bench", help="benchmark the secure pipeline in process")
    p.add_argument("--mode", default="full")
    p.add_argument("--years", default="1,2,3")
    p.add_argument("--sizes", default="100,300")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--overlap", type=float, default=0.05)
    p.add_argument("--batch-count", type=int, default=25)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ProtocolAbort as exc:
        print(f"protocol abort: {exc}", file=sys.stderr)
        return 2
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
