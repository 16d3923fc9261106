"""Benchmark sweeps driven by a flat ``key = value`` config file.

Recognized keys (all optional)::

    problems    = all | comma-separated names     (default: none)
    algorithms  = comma-separated subset of bfgs, bundle, gs   (default: none)
    n           = 50
    seeds       = 0            comma-separated base seeds
    trials      = 1            consecutive seeds run per base seed
    alpha, eta, theta, r       framework parameters
    delta1, tau                radius policy
    max_iter, wall_clock       per-run limits
    sample_count               new gradient samples per iteration (gs; default 2n)
    workers     = 0            process pool size (0: one per CPU)
    csv, json                  output paths

A config without problems or algorithms yields an empty table.
Lines starting with ``#`` are comments.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import statistics
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from .harness import ALGORITHMS, ConfigError, Exit, FrameworkParams, Limits, RunRecord, run
from .problems import NAMES
from .strategies import RadiusPolicy, SamplingConfig

CSV_COLUMNS = ["Name", "Exit", "delta_end", "f_end", "#iter", "#func", "#grad", "#subs",
               "Algorithm", "Seed"]

_FLOAT_KEYS = {"alpha", "eta", "theta", "r", "delta1", "tau", "wall_clock"}
_INT_KEYS = {"n", "trials", "max_iter", "sample_count", "workers"}
_LIST_KEYS = {"problems", "algorithms", "seeds"}
_PATH_KEYS = {"csv", "json"}


@dataclass
class BenchConfig:
    problems: list[str] = field(default_factory=list)
    algorithms: list[str] = field(default_factory=list)
    n: int = 50
    seeds: list[int] = field(default_factory=lambda: [0])
    trials: int = 1
    alpha: float = 1e-15
    eta: float = 1e-12
    theta: float = 20.0
    r: float = 1e-15
    delta1: float = 0.1
    tau: float = 0.5
    max_iter: int = 10_000
    wall_clock: float = 600.0
    sample_count: int | None = None
    workers: int = 0
    csv: str | None = None
    json: str | None = None

    def validate(self) -> None:
        for name in self.problems:
            if name not in NAMES:
                raise ConfigError(f"unknown problem {name!r}")
        for alg in self.algorithms:
            if alg not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm {alg!r}")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if self.n < 2:
            raise ConfigError("n must be at least 2")
        if self.sample_count is not None and self.sample_count < 1:
            raise ConfigError("sample_count must be at least 1")
        self.framework()
        self.policy()
        self.limits()

    def framework(self) -> FrameworkParams:
        return FrameworkParams(alpha=self.alpha, eta=self.eta, theta=self.theta, r=self.r)

    def policy(self) -> RadiusPolicy:
        try:
            return RadiusPolicy(delta=self.delta1, tau=self.tau)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def limits(self) -> Limits:
        return Limits(max_iter=self.max_iter, wall_clock=self.wall_clock)


def parse_config(text: str) -> BenchConfig:
    cfg = BenchConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            if key in _FLOAT_KEYS:
                setattr(cfg, key, float(value))
            elif key in _INT_KEYS:
                setattr(cfg, key, int(value))
            elif key in _LIST_KEYS:
                items = [v.strip() for v in value.split(",") if v.strip()]
                if key == "problems" and items == ["all"]:
                    items = list(NAMES)
                if key == "seeds":
                    items = [int(v) for v in items]
                setattr(cfg, key, items)
            elif key in _PATH_KEYS:
                setattr(cfg, key, value or None)
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {value!r}") from exc
    cfg.validate()
    return cfg


def load_config(path: str) -> BenchConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    return parse_config(text)


def cells(cfg: BenchConfig) -> list[tuple[str, str, int]]:
    seeds = [s + t for s in cfg.seeds for t in range(cfg.trials)]
    return [(name, alg, seed) for alg in cfg.algorithms for name in cfg.problems for seed in seeds]


def _run_cell(args) -> RunRecord:
    cfg, (name, alg, seed) = args
    try:
        return run(name, alg, params=cfg.framework(), policy=cfg.policy(), limits=cfg.limits(),
                   seed=seed, n=cfg.n,
                   sampling=SamplingConfig(sample_count=cfg.sample_count, rng_seed=seed))
    except Exception as exc:  # a broken cell must not abort the sweep
        return RunRecord(name=name, algorithm=alg, exit=Exit.FAILURE, delta_end=math.nan,
                         f_end=math.nan, iters=0, func_evals=0, grad_evals=0,
                         subproblem_solves=0, seed=seed,
                         message=f"{type(exc).__name__}: {exc}")


def benchmark(cfg: BenchConfig, workers: int | None = None) -> list[RunRecord]:
    """Run every cell; results keep the order of :func:`cells`."""
    todo = cells(cfg)
    if not todo:
        return []
    workers = workers if workers is not None else (cfg.workers or os.cpu_count() or 1)
    args = [(cfg, c) for c in todo]
    if workers <= 1 or len(todo) == 1:
        return [_run_cell(a) for a in args]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_cell, args))


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:+.6e}"
    return str(v)


def to_csv(records: list[RunRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for rec in records:
        row = rec.row()
        writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS[:8]] + [rec.algorithm, rec.seed])
    return buf.getvalue()


def summarize(records: list[RunRecord]) -> list[dict]:
    """Medians per (problem, algorithm) over seeds, with exit counts."""
    groups: dict[tuple[str, str], list[RunRecord]] = {}
    for rec in records:
        groups.setdefault((rec.name, rec.algorithm), []).append(rec)
    out = []
    for (name, alg), recs in groups.items():
        out.append({
            "Name": name,
            "Algorithm": alg,
            "runs": len(recs),
            "exits": dict(Counter(r.exit.value for r in recs)),
            "f_end": statistics.median(r.f_end for r in recs),
            "delta_end": statistics.median(r.delta_end for r in recs),
            "#iter": statistics.median(r.iters for r in recs),
            "#func": statistics.median(r.func_evals for r in recs),
            "#grad": statistics.median(r.grad_evals for r in recs),
            "#subs": statistics.median(r.subproblem_solves for r in recs),
        })
    return out


def to_json(records: list[RunRecord], cfg: BenchConfig | None = None) -> str:
    doc = {
        "runs": [r.to_json(with_trace=False) for r in records],
        "summary": summarize(records),
    }
    if cfg is not None:
        doc["config"] = {k: v for k, v in vars(cfg).items() if k not in ("csv", "json")}
    return json.dumps(finite_json(doc), indent=2, allow_nan=False)


def finite_json(v):
    """Copy of ``v`` with non-finite floats spelled as strings; strict JSON has no inf/nan."""
    if isinstance(v, float):
        return v if math.isfinite(v) else str(v)
    if isinstance(v, dict):
        return {k: finite_json(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [finite_json(x) for x in v]
    return v
