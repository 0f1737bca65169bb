"""Monte Carlo study: configuration, replications, summaries and output files."""

import csv
import dataclasses
import io
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .dgp import DgpConfig, generate_dataset
from .estimators import ALL_ESTIMATORS, EstimatorConfig, EstimatorKind, run_all
from .nuisance import TuningConfig
from .orthogonal import Box, EstimateReport, jsonable

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SUMMARY_HEADER = ["estimator", "param", "bias", "sd", "rmse", "rej_rate", "n_fail"]
PARAMS = ("sigma", "alpha")


class ConfigError(ValueError):
    """Invalid or unknown configuration value."""


@dataclass
class StudyConfig:
    reps: int = 200
    seed: int = 20240601
    threads: int = 0
    estimators: tuple = tuple(k.value for k in ALL_ESTIMATORS)
    out: str = "results"
    formats: tuple = ("csv", "md")
    dgp: DgpConfig = field(default_factory=DgpConfig)
    estimation: EstimatorConfig = field(default_factory=EstimatorConfig)

    def __post_init__(self):
        if self.reps < 1:
            raise ConfigError("reps must be at least 1")
        self.estimators = tuple(EstimatorKind.parse(e).value for e in self.estimators)
        if not self.estimators:
            raise ConfigError("no estimators selected")
        bad = set(self.formats) - {"csv", "md", "json"}
        if bad:
            raise ConfigError(f"unknown output formats {sorted(bad)}")

    def to_dict(self):
        est = self.estimation
        est_d = {k: v for k, v in dataclasses.asdict(est).items() if k not in ("box", "tuning", "lambdas")}
        est_d["sigma_bounds"] = list(est.box.sigma)
        est_d["alpha_bounds"] = list(est.box.alpha)
        dgp = dataclasses.asdict(self.dgp)
        dgp.pop("seed")
        return {
            "study": {"reps": self.reps, "seed": self.seed, "threads": self.threads,
                      "estimators": list(self.estimators), "out": self.out,
                      "formats": list(self.formats)},
            "dgp": dgp,
            "estimation": est_d,
            "tuning": dataclasses.asdict(est.tuning),
            "lambdas": dict(est.lambdas),
        }

    @classmethod
    def from_dict(cls, d):
        d = {k: dict(v) for k, v in d.items()}
        unknown = set(d) - {"study", "dgp", "estimation", "tuning", "lambdas"}
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}")
        try:
            tuning = TuningConfig(**d.get("tuning", {}))
            est = dict(d.get("estimation", {}))
            box = Box(tuple(est.pop("sigma_bounds", (0.0, 3.0))), tuple(est.pop("alpha_bounds", (-10.0, 10.0))))
            estimation = EstimatorConfig(box=box, tuning=tuning, lambdas=d.get("lambdas", {}), **est)
            dgp = DgpConfig(**d.get("dgp", {}))
            study = dict(d.get("study", {}))
            for k in ("estimators", "formats"):
                if k in study:
                    study[k] = tuple(study[k])
            return cls(dgp=dgp, estimation=estimation, **study)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def default_config_text():
    return resources.files("hdblp").joinpath("default_config.toml").read_text()


def load_config(path=None, overrides=None):
    """Default config, updated by a TOML file, updated by ``overrides``.

    ``overrides`` maps ``"section.key"`` to a value.
    """
    d = tomllib.loads(default_config_text())
    if path is not None:
        try:
            user = tomllib.loads(Path(path).read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for section, values in user.items():
            if not isinstance(values, dict):
                raise ConfigError(f"{path}: top-level key {section!r} must be a table")
            d.setdefault(section, {}).update(values)
    for key, value in (overrides or {}).items():
        section, name = key.split(".", 1)
        d.setdefault(section, {})[name] = value
    return StudyConfig.from_dict(d)


def resolve_threads(threads):
    """Positive ``threads`` wins; otherwise ``HDBLP_THREADS``; otherwise 1."""
    if threads and threads > 0:
        return int(threads)
    env = os.environ.get("HDBLP_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise ConfigError(f"HDBLP_THREADS must be an integer, got {env!r}") from exc
        if n < 1:
            raise ConfigError("HDBLP_THREADS must be positive")
        return n
    return 1


def replication_seed(base_seed, r):
    """Data seed of replication ``r``: 128 bits drawn from ``SeedSequence([base_seed, r])``."""
    state = np.random.SeedSequence([base_seed, r]).generate_state(4, dtype=np.uint32)
    return int.from_bytes(state.tobytes(), "little")


def run_replication(cfg, r):
    """Simulate replication ``r`` and run every configured estimator on it.

    Returns ``(record, seconds)``.  The record holds no timings so that it is
    a pure function of ``(cfg, r)``.
    """
    seed = replication_seed(cfg.seed, r)
    start = time.perf_counter()
    dataset = generate_dataset(dataclasses.replace(cfg.dgp, seed=seed))
    reports = run_all(dataset, cfg.estimators, cfg.estimation)
    dicts = []
    for rep in reports:
        d = rep.to_dict()
        d.pop("elapsed")
        dicts.append(jsonable(d))
    record = {"rep": r, "seed": seed, "theta0": [cfg.dgp.sigma0, cfg.dgp.alpha0], "reports": dicts}
    return record, time.perf_counter() - start


def _replication_task(args):
    cfg, r = args
    return run_replication(cfg, r)


@dataclass
class StudyResult:
    config: StudyConfig
    records: list
    elapsed: float = 0.0
    # wall-clock seconds per replication, indexed like ``records``
    timings: list = field(default_factory=list)

    def summary(self):
        return summarize(self.records, self.config.estimators)


def run_study(cfg, threads=None, progress=None):
    """All replications of ``cfg``; ``threads`` workers (processes) when above one.

    Each replication depends only on ``(cfg, r)``, so the records are the same
    whatever the worker count or completion order.
    """
    n = resolve_threads(cfg.threads if threads is None else threads)
    start = time.perf_counter()
    tasks = [(cfg, r) for r in range(cfg.reps)]
    done = []

    def collect(item):
        done.append(item)
        if progress:
            progress(*item)

    if n == 1:
        for task in tasks:
            collect(_replication_task(task))
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            for item in pool.map(_replication_task, tasks, chunksize=1):
                collect(item)
    done.sort(key=lambda item: item[0]["rep"])
    return StudyResult(config=cfg, records=[rec for rec, _ in done],
                       elapsed=time.perf_counter() - start, timings=[sec for _, sec in done])


def _valid(rep, k):
    est = rep.get(k)
    t = rep["tstats"][PARAMS.index(k)]
    return rep.get("error") is None and rep.get("converged") and est is not None and t is not None \
        and np.isfinite(est) and np.isfinite(t)


def summarize(records, estimators=None, critical_value=1.96):
    """Bias, population sd, rmse and rejection rate per estimator and parameter.

    A report with an error or a non-finite estimate or t-statistic counts in
    ``n_fail`` and is left out of that estimator's moments.
    """
    if not records:
        raise ValueError("no replications to summarize")
    if estimators is None:
        seen = list(dict.fromkeys(r["estimator"] for rec in records for r in rec["reports"]))
        known = [k.value for k in ALL_ESTIMATORS]
        estimators = [n for n in known if n in seen] + [n for n in seen if n not in known]
    rows = []
    for name in estimators:
        for i, param in enumerate(PARAMS):
            est, tstat, n_fail = [], [], 0
            for rec in records:
                for rep in rec["reports"]:
                    if rep["estimator"] != name:
                        continue
                    if _valid(rep, param):
                        est.append(rep[param] - rec["theta0"][i])
                        tstat.append(rep["tstats"][i])
                    else:
                        n_fail += 1
            err = np.array(est, dtype=float)
            if err.size:
                row = {"bias": float(err.mean()), "sd": float(err.std()),
                       "rmse": float(np.sqrt(np.mean(err ** 2))),
                       "rej_rate": float(np.mean(np.abs(tstat) > critical_value))}
            else:
                row = dict.fromkeys(("bias", "sd", "rmse", "rej_rate"), float("nan"))
            rows.append({"estimator": name, "param": param, **row, "n_fail": n_fail})
    return rows


def summary_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(SUMMARY_HEADER)
    for row in rows:
        w.writerow([row[k] if k in ("estimator", "param", "n_fail") else repr(row[k]) for k in SUMMARY_HEADER])
    return buf.getvalue()


def summary_markdown(rows):
    """One table per parameter with estimators as rows."""
    out = []
    for param in PARAMS:
        out.append(f"### {param}\n")
        out.append("| estimator | bias | sd | rmse | rej. rate | n_fail |")
        out.append("|---|---:|---:|---:|---:|---:|")
        for row in rows:
            if row["param"] == param:
                out.append(f"| {row['estimator']} | {row['bias']:.3f} | {row['sd']:.3f} | "
                           f"{row['rmse']:.3f} | {row['rej_rate']:.3f} | {row['n_fail']} |")
        out.append("")
    return "\n".join(out)


def summary_json(rows):
    return json.dumps(jsonable(rows), indent=2)


FORMATTERS = {"csv": summary_csv, "md": summary_markdown, "json": summary_json}
EXTENSIONS = {"csv": "csv", "md": "md", "json": "json"}


def write_records(records, path):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return path


def read_records(path):
    """Records from a JSON-lines file written by :func:`write_records`."""
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def emit_outputs(result, formats=None, out_dir=None, stamp=None):
    """Write summaries, per-replication records and the resolved config.

    File names carry the base seed and a UTC timestamp.  Returns the paths.
    """
    cfg = result.config
    formats = tuple(formats or cfg.formats)
    out = Path(out_dir or cfg.out)
    stamp = stamp or time.strftime("%Y%m%dT%H%M%SZ", time.gmtime())
    tag = f"seed{cfg.seed}_{stamp}"
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = {"records": write_records(result.records, out / f"reps_{tag}.jsonl")}
        config_path = out / f"config_{tag}.json"
        meta = {"config": cfg.to_dict(), "elapsed": result.elapsed, "timings": result.timings}
        config_path.write_text(json.dumps(meta, indent=2))
        paths["config"] = config_path
        rows = result.summary()
        for fmt in formats:
            p = out / f"summary_{tag}.{EXTENSIONS[fmt]}"
            p.write_text(FORMATTERS[fmt](rows), newline="")
            paths[fmt] = p
    except OSError as exc:
        raise OSError(f"could not write study outputs under {out}: {exc}") from exc
    return paths


def reports_from_record(rec):
    return [EstimateReport.from_dict(r) for r in rec["reports"]]
