"""Experiment specs, orchestration and on-disk artifacts."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .algorithms import (
    ConfigError,
    RunConfig,
    run_dpsvrg,
    run_dspg,
    run_inexact_prox_svrg,
    run_reference,
)
from .data import load_dataset, synth_dataset
from .metrics import CsvSink, fit_contraction
from .objective import LOSSES, CompositeObjective, Dataset, analysis_constants, smoothness_L
from .proximal import Regularizer
from .topology import FAMILIES, make_schedule

__all__ = [
    "ALGORITHMS",
    "OUTPUT_ROOT_ENV",
    "SCHEMA_VERSION",
    "DataSpec",
    "ScheduleSpec",
    "ExperimentSpec",
    "parse_kv",
    "parse_run_config",
    "parse_experiment",
    "load_experiment",
    "build_dataset",
    "run_experiment",
]

ALGORITHMS = ("reference", "dpsvrg", "dspg", "inexact")
OUTPUT_ROOT_ENV = "DPSVRG_OUTPUT_ROOT"
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class DataSpec:
    """Either a file ``path`` or synthetic parameters."""

    path: str | None = None
    format: str | None = None
    positive_class: float | None = None
    n: int = 512
    d: int = 20
    sparsity: int = 5
    noise: float = 0.1
    seed: int = 0
    scale: bool = False


@dataclass(frozen=True)
class ScheduleSpec:
    b: int = 1
    eta: float | None = None
    family: str = "ring-split"
    seed: int = 0
    graph: str = "ring"


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    run: RunConfig
    data: DataSpec = field(default_factory=DataSpec)
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    loss: str = "logistic"
    algorithms: tuple[str, ...] = ("reference", "dpsvrg", "dspg")
    lam_values: tuple[float, ...] = ()
    b_values: tuple[int, ...] = ()
    output: str = "results"
    workers: int = 1
    record_every: int = 1
    reference_tol: float = 1e-10

    def validate(self) -> None:
        self.run.validate()
        if not self.algorithms:
            raise ConfigError("algorithms", "at least one algorithm is required")
        for a in self.algorithms:
            if a not in ALGORITHMS:
                raise ConfigError("algorithms", f"unknown algorithm {a!r}; expected {ALGORITHMS}")
        if self.loss not in LOSSES:
            raise ConfigError("loss", f"must be one of {LOSSES}")
        if self.schedule.family not in FAMILIES:
            raise ConfigError("schedule.family", f"must be one of {FAMILIES}")
        if self.workers < 1:
            raise ConfigError("workers", "must be >= 1")
        if self.record_every < 1:
            raise ConfigError("record_every", "must be >= 1")
        if any(v < 0 for v in self.lam_values):
            raise ConfigError("sweep.lam", "values must be >= 0")
        if any(v < 1 for v in self.b_values):
            raise ConfigError("sweep.b", "values must be >= 1")

    def sweep_points(self) -> list[tuple[float, int]]:
        lams = self.lam_values or (self.run.lam,)
        bs = self.b_values or (self.schedule.b,)
        return [(lam, b) for lam in lams for b in bs]


# -- parsing ----------------------------------------------------------------


def parse_kv(text: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment; duplicate keys are errors."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected key = value, got {raw.strip()!r}")
        key, val = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}", "empty key")
        if key in out:
            raise ConfigError(key, f"duplicate key on line {lineno}")
        out[key] = val
    return out


def _bool(key: str, v: str) -> bool:
    low = v.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(key, f"expected a boolean, got {v!r}")


def _convert(key: str, typ, v: str):
    try:
        if typ is bool:
            return _bool(key, v)
        if typ is int:
            return int(v)
        if typ is float:
            return float(v)
        return v
    except ValueError:
        raise ConfigError(key, f"cannot parse {v!r} as {typ.__name__}") from None


_RUN_TYPES = {
    "alpha": float, "lam": float, "beta": float, "n0": int, "S": int, "m": int,
    "batch": int, "consensus": str, "seed": int, "record_errors": bool,
    "dspg_step": str, "dspg_iters": int,
}


def _run_config(kv: dict[str, str], prefix: str = "") -> RunConfig:
    vals = {}
    for name in RunConfig.field_names():
        key = prefix + name
        if key not in kv:
            raise ConfigError(key, "missing (every run field must be given)")
        vals[name] = _convert(key, _RUN_TYPES[name], kv[key])
    cfg = RunConfig(**vals)
    cfg.validate()
    return cfg


def parse_run_config(text: str) -> RunConfig:
    """A RunConfig from a flat file holding exactly its fields."""
    kv = parse_kv(text)
    known = set(RunConfig.field_names())
    for key in kv:
        if key not in known:
            raise ConfigError(key, "unknown key")
    return _run_config(kv)


def _floats(key: str, v: str) -> tuple[float, ...]:
    return tuple(_convert(key, float, p.strip()) for p in v.split(",") if p.strip())


def _ints(key: str, v: str) -> tuple[int, ...]:
    return tuple(_convert(key, int, p.strip()) for p in v.split(",") if p.strip())


_TOP = {"name", "loss", "algorithms", "output", "workers", "record_every", "reference.tol",
        "sweep.lam", "sweep.b"}
_DATA_TYPES = {f.name: f.type for f in fields(DataSpec)}
_SCHED_TYPES = {f.name: f.type for f in fields(ScheduleSpec)}


def _typed(key: str, annot: str, v: str):
    if "bool" in annot:
        return _bool(key, v)
    if "int" in annot:
        return _convert(key, int, v)
    if "float" in annot:
        return _convert(key, float, v)
    return v


def parse_experiment(text: str) -> ExperimentSpec:
    """An ExperimentSpec from flat keys: top-level, ``run.*``, ``data.*``, ``schedule.*``."""
    kv = parse_kv(text)
    data_kw, sched_kw = {}, {}
    for key, v in kv.items():
        if key.startswith("run."):
            if key[4:] not in _RUN_TYPES:
                raise ConfigError(key, "unknown key")
        elif key.startswith("data."):
            sub = key[5:]
            if sub not in _DATA_TYPES:
                raise ConfigError(key, "unknown key")
            data_kw[sub] = _typed(key, str(_DATA_TYPES[sub]), v)
        elif key.startswith("schedule."):
            sub = key[9:]
            if sub not in _SCHED_TYPES:
                raise ConfigError(key, "unknown key")
            sched_kw[sub] = _typed(key, str(_SCHED_TYPES[sub]), v)
        elif key not in _TOP:
            raise ConfigError(key, "unknown key")
    if "name" not in kv:
        raise ConfigError("name", "missing")
    spec = ExperimentSpec(
        name=kv["name"],
        run=_run_config(kv, "run."),
        data=DataSpec(**data_kw),
        schedule=ScheduleSpec(**sched_kw),
        loss=kv.get("loss", "logistic"),
        algorithms=tuple(a.strip() for a in kv.get("algorithms", "reference,dpsvrg,dspg").split(",") if a.strip()),
        lam_values=_floats("sweep.lam", kv.get("sweep.lam", "")),
        b_values=_ints("sweep.b", kv.get("sweep.b", "")),
        output=kv.get("output", "results"),
        workers=_convert("workers", int, kv.get("workers", "1")),
        record_every=_convert("record_every", int, kv.get("record_every", "1")),
        reference_tol=_convert("reference.tol", float, kv.get("reference.tol", "1e-10")),
    )
    spec.validate()
    return spec


def load_experiment(path: str | Path) -> ExperimentSpec:
    return parse_experiment(Path(path).read_text())


# -- orchestration -------------------------------------------------------------


def build_dataset(spec: DataSpec, m: int) -> Dataset:
    if spec.path is not None:
        kw = {} if spec.positive_class is None else {"positive_class": spec.positive_class}
        return load_dataset(spec.path, m, fmt=spec.format, **kw)
    data, _ = synth_dataset(spec.n, spec.d, spec.sparsity, spec.noise, spec.seed, m, scale=spec.scale)
    return data


def output_dir(spec: ExperimentSpec, override: str | Path | None = None) -> Path:
    """``override``, else ``spec.output`` (relative paths resolve under $DPSVRG_OUTPUT_ROOT if set)."""
    if override is not None:
        return Path(override)
    out = Path(spec.output)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not out.is_absolute():
        out = Path(root) / out
    return out / spec.name


def _tag(lam: float, b: int) -> str:
    return f"lam{lam:g}_b{b}"


def _final_gap(path: Path, algo: str) -> float | None:
    last = None
    with open(path) as fp:
        next(fp)
        for line in fp:
            if line.startswith(algo + ","):
                last = line
    return float(last.split(",")[5]) if last else None


def run_experiment(
    spec: ExperimentSpec,
    out: str | Path | None = None,
    *,
    workers: int | None = None,
    reference_only: bool = False,
) -> Path:
    """Run every (algorithm, sweep point) and write CSVs plus ``summary.json``; returns the summary path."""
    spec.validate()
    workers = workers or spec.workers
    outdir = output_dir(spec, out)
    outdir.mkdir(parents=True, exist_ok=True)
    cfg0 = spec.run
    data = build_dataset(spec.data, cfg0.m)
    base = CompositeObjective(spec.loss, data, Regularizer("l1", cfg0.lam))
    L = smoothness_L(base)
    algos = ("reference",) if reference_only else spec.algorithms

    points = []
    ref_cache: dict[float, tuple[np.ndarray, float]] = {}
    for lam, b in spec.sweep_points():
        cfg = replace(cfg0, lam=lam)
        obj = base.with_lambda(lam)
        point: dict = {"lam": lam, "b": b, "L": L}
        # the reference runs first: every other algorithm reports gaps against it
        # reference first: every other algorithm reports gaps against it
        if lam not in ref_cache:
            ref_cache[lam] = run_reference(obj, spec.reference_tol)
        x_star, f_star = ref_cache[lam]
        point["f_star"] = f_star
        point["x_star_nnz"] = int(np.count_nonzero(x_star))
        ac = analysis_constants(L, cfg.alpha, beta=cfg.beta, n0=cfg.n0) if L > 0 else None
        if ac is not None:
            point.update(rho=ac.rho, theta=ac.theta, alpha_max=ac.alpha_max)

        schedule = None
        if cfg.m > 1 and any(a in algos for a in ("dpsvrg", "dspg")):
            sc = spec.schedule
            fam_b = b if sc.family != "static" else 1
            schedule = make_schedule(cfg.m, fam_b, sc.eta, sc.family, sc.seed, graph=sc.graph)
            point.update(Gamma=schedule.Gamma, gamma=schedule.gamma, b0=schedule.b0, eta=schedule.eta)

        runs = {}
        tag = _tag(lam, b)
        trace = None
        if "dpsvrg" in algos:
            path = outdir / f"dpsvrg_{tag}.csv"
            with CsvSink(path) as sink:
                res = run_dpsvrg(obj, schedule, cfg, sink, f_star=f_star, workers=workers,
                                 record_every=spec.record_every)
            trace = res.trace
            gaps = res.snapshot_gaps
            runs["dpsvrg"] = {
                "csv": path.name,
                "final_gap": gaps[-1],
                "snapshot_gaps": gaps,
                "rho_hat": fit_contraction(gaps),
                "comm_rounds": res.comm_rounds,
                "epoch_passes": res.epoch_passes,
            }
        if "dspg" in algos:
            path = outdir / f"dspg_{tag}.csv"
            with CsvSink(path) as sink:
                res = run_dspg(obj, schedule, cfg, sink, f_star=f_star, workers=workers,
                               record_every=spec.record_every)
            runs["dspg"] = {
                "csv": path.name,
                "final_gap": _final_gap(path, "dspg"),
                "iterations": res.iterations,
                "comm_rounds": res.comm_rounds,
                "epoch_passes": res.epoch_passes,
            }
        if "inexact" in algos:
            path = outdir / f"inexact_{tag}.csv"
            with CsvSink(path) as sink:
                res = run_inexact_prox_svrg(obj, cfg, trace, sink, f_star=f_star)
            runs["inexact"] = {
                "csv": path.name,
                "mode": "replay" if trace is not None else "exact",
                "final_gap": _final_gap(path, "inexact"),
            }
        point["runs"] = runs
        points.append(point)

    summary = {
        "schema": SCHEMA_VERSION,
        "name": spec.name,
        "algorithms": list(algos),
        "n": data.n,
        "d": data.d,
        "m": cfg0.m,
        "points": points,
    }
    spath = outdir / "summary.json"
    spath.write_text(json.dumps(summary, indent=2, allow_nan=True) + "\n")
    return spath
