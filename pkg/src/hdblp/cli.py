"""Command-line entry point: ``hdblp {simulate,estimate,study,summarize}``.

Exit codes: 0 success, 1 usage or configuration error, 2 I/O failure.
"""

import argparse
import csv
import dataclasses
import io
import json
import sys
from pathlib import Path

from .dgp import generate_dataset, read_csv, write_csv
from .estimators import EstimationSession, EstimatorKind, run_estimator
from .orthogonal import jsonable
from .study import (FORMATTERS, ConfigError, emit_outputs, load_config, read_records,
                    resolve_threads, run_study, summarize)

EXIT_OK, EXIT_USAGE, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common(p, reps=False, threads=False, formats=True):
    p.add_argument("--config", metavar="PATH", help="TOML file overriding the built-in defaults")
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--estimators", metavar="LIST", help="comma-separated estimator names")
    p.add_argument("--lambda-mode", choices=["cv", "theoretical"], help="how penalties are chosen")
    if formats:
        p.add_argument("--format", action="append", choices=["csv", "md", "json"],
                       help="output format; may be repeated")
    if reps:
        p.add_argument("--reps", type=int, help="number of replications")
    if threads:
        p.add_argument("--threads", type=int, help="worker processes (default: HDBLP_THREADS or 1)")


def build_parser():
    parser = _Parser(prog="hdblp", description="Random-coefficient demand with many characteristics: "
                     "simulation, estimation and Monte Carlo studies.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="draw one dataset and write it as CSV plus a truth sidecar")
    _common(p, formats=False)

    p = sub.add_parser("estimate", help="run estimators on one dataset")
    _common(p)
    p.add_argument("--data", metavar="CSV", help="dataset written by 'simulate' (default: draw one from --seed)")

    p = sub.add_parser("study", help="run the full Monte Carlo study")
    _common(p, reps=True, threads=True)
    p.add_argument("--quiet", action="store_true", help="no per-replication progress lines")

    p = sub.add_parser("summarize", help="summary tables from saved per-replication records")
    p.add_argument("records", nargs="+", metavar="JSONL", help="files written by 'study'")
    p.add_argument("--config", metavar="PATH", help="TOML file (only [study] formats/out are used)")
    p.add_argument("--out", metavar="DIR", help="write summary files here instead of stdout")
    p.add_argument("--format", action="append", choices=["csv", "md", "json"])
    p.add_argument("--estimators", metavar="LIST")
    p.add_argument("--seed", type=int, help=argparse.SUPPRESS)
    return parser


def _overrides(args):
    o = {}
    if getattr(args, "seed", None) is not None:
        o["study.seed"] = args.seed
    if getattr(args, "reps", None) is not None:
        o["study.reps"] = args.reps
    if getattr(args, "threads", None) is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be positive")
        o["study.threads"] = args.threads
    if getattr(args, "out", None):
        o["study.out"] = args.out
    if getattr(args, "estimators", None):
        names = [n for n in args.estimators.split(",") if n.strip()]
        o["study.estimators"] = [EstimatorKind.parse(n).value for n in names]
    if getattr(args, "lambda_mode", None):
        o["tuning.mode"] = args.lambda_mode
    if getattr(args, "format", None):
        o["study.formats"] = list(dict.fromkeys(args.format))
    return o


def _cmd_simulate(args, cfg):
    dgp = dataclasses.replace(cfg.dgp, seed=cfg.seed)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = write_csv(generate_dataset(dgp), out / f"dataset_seed{cfg.seed}.csv")
    print(path)
    return EXIT_OK


def _reports_table(reports, fmt):
    if fmt == "json":
        return json.dumps([jsonable(r.to_dict()) for r in reports], indent=2)
    cols = ["estimator", "sigma", "alpha", "se_sigma", "se_alpha", "t_sigma", "t_alpha", "error"]
    rows = [[r.estimator, r.sigma, r.alpha, *r.se, *r.tstats, r.error or ""] for r in reports]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(cols)
        w.writerows([[v if isinstance(v, str) else repr(v) for v in row] for row in rows])
        return buf.getvalue()
    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    for row in rows:
        lines.append("| " + " | ".join(v if isinstance(v, str) else f"{v:.4f}" for v in row) + " |")
    return "\n".join(lines) + "\n"


def _cmd_estimate(args, cfg):
    if args.data:
        dataset = read_csv(args.data)
    else:
        dataset = generate_dataset(dataclasses.replace(cfg.dgp, seed=cfg.seed))
    kinds = [EstimatorKind.parse(k) for k in cfg.estimators]
    if dataset.truth is None:
        missing = [k.value for k in kinds if k.needs_truth]
        if missing:
            raise ConfigError(f"{', '.join(missing)} need a truth sidecar next to {args.data}")
    session = EstimationSession(dataset, cfg.estimation)
    reports = [run_estimator(k, dataset, session=session) for k in kinds]
    formats = args.format or ["md"]
    for fmt in formats:
        text = _reports_table(reports, fmt)
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            path = out / f"estimates_seed{cfg.seed}.{fmt}"
            path.write_text(text, newline="")
            print(path)
        else:
            sys.stdout.write(text)
    return EXIT_OK


def _cmd_study(args, cfg):
    threads = resolve_threads(cfg.threads)

    def progress(rec, seconds):
        if not args.quiet:
            fails = [r["estimator"] for r in rec["reports"] if r.get("error")]
            note = f" failed: {', '.join(fails)}" if fails else ""
            print(f"rep {rec['rep'] + 1}/{cfg.reps} {seconds:.1f}s{note}", file=sys.stderr, flush=True)

    result = run_study(cfg, threads=threads, progress=progress)
    paths = emit_outputs(result)
    sys.stdout.write(FORMATTERS["md"](result.summary()))
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return EXIT_OK


def _cmd_summarize(args, cfg):
    records = []
    for path in args.records:
        records.extend(read_records(path))
    estimators = cfg.estimators if args.estimators else None
    rows = summarize(records, estimators)
    formats = args.format or ["md"]
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        stem = Path(args.records[0]).stem.replace("reps_", "summary_", 1)
        for fmt in formats:
            path = out / f"{stem}.{fmt}"
            path.write_text(FORMATTERS[fmt](rows), newline="")
            print(path)
    else:
        for fmt in formats:
            sys.stdout.write(FORMATTERS[fmt](rows))
            if not FORMATTERS[fmt](rows).endswith("\n"):
                sys.stdout.write("\n")
    return EXIT_OK


COMMANDS = {"simulate": _cmd_simulate, "estimate": _cmd_estimate, "study": _cmd_study,
            "summarize": _cmd_summarize}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = load_config(args.config, _overrides(args))
    except UsageError as exc:
        print(f"hdblp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ValueError) as exc:
        print(f"hdblp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"hdblp: error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        return COMMANDS[args.command](args, cfg)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"hdblp: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ValueError) as exc:
        print(f"hdblp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
