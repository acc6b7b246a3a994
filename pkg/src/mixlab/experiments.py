"""Seeded experiment sweeps, persistence, scaling fits and reports.

A sweep is the product of its grid axes (``gamma``, ``t_minorize``,
``epsilon``) times its seeds.  Each trial writes one JSON line to
``records.jsonl``; wall-clock times go to ``timings.jsonl`` so the records
themselves are byte-identical across repeated runs.  Trials already present
for the same configuration hash are skipped on re-runs.
"""
from __future__ import annotations

import csv
import hashlib
import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .algorithms import Constants, ScheduleError, canonical_setting, make_schedule, run_combined
from .hard import make_hard_instance
from .io import load_mdp
from .mdp import TabularMdp, policy_kernel, solve_exact
from .mixing import minorization_time
from .sampler import GenerativeModel
from .stats import loglog_slope

AXES = ("gamma", "t_minorize", "epsilon")
REPORT_COLUMNS = ("instance", "seed", "gamma", "t_minorize", "epsilon", "setting", "samples",
                  "error", "success", "wall_ms")
RECORDS_FILE = "records.jsonl"
TIMINGS_FILE = "timings.jsonl"


class ConfigError(ValueError):
    """The experiment configuration is invalid."""


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    instance: dict
    setting: str
    epsilon: float
    delta: float
    seeds: tuple
    grid: dict = field(default_factory=dict)
    constants: Constants = field(default_factory=Constants)
    t_minorize: str | float = "computed"
    warm_start: str = "general"
    output: str | None = None
    name: str = "sweep"

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        for axis, values in self.grid.items():
            if axis not in AXES:
                raise ConfigError(f"unknown grid axis {axis!r}; expected one of {AXES}")
            if not values:
                raise ConfigError(f"grid axis {axis!r} is empty")
            if list(values) != sorted(values) or len(set(values)) != len(values):
                raise ConfigError(f"grid axis {axis!r} must be strictly ascending")
        try:
            canonical_setting(self.setting)
        except ScheduleError as exc:
            raise ConfigError(str(exc)) from exc
        if canonical_setting(self.setting) == "custom":
            raise ConfigError("sweeps use the analytic schedules; 'custom' is not supported")
        if not self.epsilon > 0 or not 0 < self.delta < 1:
            raise ConfigError("need epsilon > 0 and delta in (0, 1)")
        kind = self.instance.get("kind")
        if kind not in ("hard", "file"):
            raise ConfigError("instance.kind must be 'hard' or 'file'")
        if kind == "hard" and not ("p" in self.instance or "t_minorize" in self.instance
                                   or "t_minorize" in self.grid):
            raise ConfigError("hard instance needs p or t_minorize")
        if kind == "file" and "path" not in self.instance:
            raise ConfigError("file instance needs a path")
        if not (self.t_minorize in ("computed", "nominal") or isinstance(self.t_minorize, (int, float))):
            raise ConfigError("t_minorize must be 'computed', 'nominal' or a number")

    def identity(self) -> dict:
        """Fields that determine trial results (seeds, grid and output excluded)."""
        return {
            "instance": self.instance, "setting": canonical_setting(self.setting),
            "epsilon": self.epsilon, "delta": self.delta, "constants": asdict(self.constants),
            "t_minorize": self.t_minorize, "warm_start": self.warm_start,
        }

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.identity(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def grid_points(self) -> list[dict]:
        axes = [a for a in AXES if a in self.grid]
        if not axes:
            return [{}]
        return [dict(zip(axes, vals)) for vals in itertools.product(*(self.grid[a] for a in axes))]


def _seeds(raw) -> tuple:
    if isinstance(raw, dict):
        return tuple(range(int(raw.get("start", 0)), int(raw.get("start", 0)) + int(raw["count"])))
    if isinstance(raw, int):
        return tuple(range(raw))
    return tuple(int(s) for s in raw)


def config_from_dict(doc: dict, base_dir: str | Path | None = None) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a mapping")
    try:
        instance = dict(doc["instance"])
        if instance.get("kind") == "file" and base_dir is not None:
            path = Path(instance["path"])
            if not path.is_absolute():
                instance["path"] = str(Path(base_dir) / path)
        consts = doc.get("constants") or {}
        grid = {k: [float(x) for x in v] for k, v in (doc.get("grid") or {}).items()}
        t_min = doc.get("t_minorize", "computed")
        return ExperimentConfig(
            instance=instance,
            setting=str(doc["setting"]),
            epsilon=float(doc["epsilon"]),
            delta=float(doc["delta"]),
            seeds=_seeds(doc["seeds"]),
            grid=grid,
            constants=Constants(**{k: float(v) for k, v in consts.items()}),
            t_minorize=t_min if isinstance(t_min, str) else float(t_min),
            warm_start=str(doc.get("warm_start", "general")),
            output=doc.get("output"),
            name=str(doc.get("name", "sweep")),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc!r}") from exc


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(doc, base_dir=path.parent)


# ---------------------------------------------------------------------------
# trials


@dataclass(frozen=True)
class ExperimentRecord:
    config_hash: str
    instance: str
    point: dict
    seed: int
    setting: str
    gamma: float
    t_minorize: float
    epsilon: float
    delta: float
    samples_used: int
    sample_bound: int
    final_error: float | None
    success: bool
    per_epoch_errors: tuple
    status: str = "ok"
    message: str = ""

    @property
    def key(self) -> tuple:
        return (self.config_hash, _point_key(self.point), self.seed)

    def to_json(self) -> str:
        d = asdict(self)
        d["per_epoch_errors"] = list(self.per_epoch_errors)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "ExperimentRecord":
        d = json.loads(line)
        d["per_epoch_errors"] = tuple(d["per_epoch_errors"])
        return cls(**d)


def _point_key(point: dict) -> str:
    return json.dumps(point, sort_keys=True)


def _point_order(cfg: ExperimentConfig):
    return {_point_key(p): i for i, p in enumerate(cfg.grid_points())}


def build_instance(cfg: ExperimentConfig, point: dict) -> tuple[str, TabularMdp, float | None]:
    """Instance for a grid point and its nominal minorization time (if any)."""
    inst = cfg.instance
    if inst["kind"] == "hard":
        t = point.get("t_minorize", inst.get("t_minorize"))
        p = 1.0 / float(t) if t is not None else float(inst["p"])
        gamma = float(point.get("gamma", inst.get("gamma", 0.9)))
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            h = make_hard_instance(p, gamma)
        return h.mdp.name, h.mdp, 1.0 / p
    mdp, _ = load_mdp(inst["path"])
    if "gamma" in point:
        mdp = TabularMdp(mdp.reward, mdp.kernel, point["gamma"], name=mdp.name)
    return mdp.name, mdp, point.get("t_minorize")


def schedule_t_minorize(cfg: ExperimentConfig, mdp: TabularMdp, nominal: float | None,
                        pi_star: np.ndarray) -> float:
    if isinstance(cfg.t_minorize, (int, float)):
        return float(cfg.t_minorize)
    if cfg.t_minorize == "nominal":
        if nominal is None:
            raise ConfigError("no nominal minorization time for this instance")
        return float(nominal)
    if nominal is not None and cfg.instance["kind"] == "file":
        return float(nominal)
    setting = canonical_setting(cfg.setting)
    if setting == "uniform":
        n_pol = mdp.n_actions**mdp.n_states
        if n_pol > 4096:
            raise ConfigError("too many policies to compute a uniform minorization time")
        return max(minorization_time(policy_kernel(mdp, np.array(pi)))[0]
                   for pi in itertools.product(range(mdp.n_actions), repeat=mdp.n_states))
    return minorization_time(policy_kernel(mdp, pi_star))[0]


def run_trial(cfg: ExperimentConfig, point: dict, seed: int) -> tuple[ExperimentRecord, float]:
    t0 = time.perf_counter()
    setting = canonical_setting(cfg.setting)
    epsilon = float(point.get("epsilon", cfg.epsilon))
    try:
        name, mdp, nominal = build_instance(cfg, point)
        _, q_star, pi_star = solve_exact(mdp)
        t = schedule_t_minorize(cfg, mdp, nominal, pi_star)
        sched = make_schedule(setting, (mdp.n_states, mdp.n_actions), mdp.gamma, epsilon, cfg.delta,
                              t, cfg.constants, warm_start=cfg.warm_start)
        gm = GenerativeModel(mdp, seed)
        res = run_combined(gm, sched, q_star)
        err = float(res.final_error)
        rec = ExperimentRecord(cfg.config_hash, name, point, int(seed), setting, mdp.gamma, t, epsilon,
                               cfg.delta, int(res.samples_used),
                               mdp.n_pairs * sched.total_operators, err, err <= epsilon,
                               tuple(float(e) for e in res.per_epoch_errors))
    except Exception as exc:  # a failed trial is recorded, the sweep goes on
        rec = ExperimentRecord(cfg.config_hash, str(cfg.instance.get("kind")), point, int(seed), setting,
                               float(point.get("gamma", cfg.instance.get("gamma", float("nan")))),
                               float("nan"), epsilon, cfg.delta, 0, 0, None, False, (),
                               status="error", message=f"{type(exc).__name__}: {exc}")
    return rec, time.perf_counter() - t0


def _trial_job(args):
    cfg, point, seed = args
    return run_trial(cfg, point, seed)


def read_records(path: str | Path) -> list[ExperimentRecord]:
    path = Path(path)
    if path.is_dir():
        path = path / RECORDS_FILE
    if not path.exists():
        return []
    with open(path, encoding="utf-8") as fh:
        return [ExperimentRecord.from_json(line) for line in fh if line.strip()]


def read_timings(path: str | Path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / TIMINGS_FILE
    out = {}
    if path.exists():
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    d = json.loads(line)
                    out[(d["config_hash"], d["point"], d["seed"])] = d["wall_ms"]
    return out


def _canonical(records, order) -> list:
    return sorted(records, key=lambda r: (order.get(_point_key(r.point), len(order)), r.seed))


def run_sweep(cfg: ExperimentConfig, output: str | Path | None = None, workers: int = 1,
              resume: bool = True) -> list[ExperimentRecord]:
    """Run every (grid point, seed) trial; persist when an output directory is given."""
    out_dir = Path(output or cfg.output) if (output or cfg.output) else None
    order = _point_order(cfg)
    done: dict = {}
    if out_dir is not None and resume:
        for r in read_records(out_dir):
            if r.config_hash == cfg.config_hash:
                done[r.key] = r
    jobs = [(cfg, p, s) for p in cfg.grid_points() for s in cfg.seeds
            if (cfg.config_hash, _point_key(p), s) not in done]

    sink = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        sink = open(out_dir / TIMINGS_FILE, "a", encoding="utf-8")
    def consume(results) -> None:
        for rec, wall in results:
            done[rec.key] = rec
            if sink is not None:
                ms = round(wall * 1000.0, 3)
                sink.write(json.dumps({"config_hash": rec.config_hash, "point": _point_key(rec.point),
                                       "seed": rec.seed, "wall_ms": ms}) + "\n")
                sink.flush()

    try:
        if workers <= 1:
            consume(map(_trial_job, jobs))
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                consume(pool.map(_trial_job, jobs))
    finally:
        if sink is not None:
            sink.close()

    wanted = {(cfg.config_hash, _point_key(p), s) for p in cfg.grid_points() for s in cfg.seeds}
    records = _canonical([r for k, r in done.items() if k in wanted], order)
    if out_dir is not None:
        write_records(out_dir / RECORDS_FILE, records)
    return records


def write_records(path: str | Path, records) -> None:
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")
    tmp.replace(path)


# ---------------------------------------------------------------------------
# analysis


def _axis_value(r: ExperimentRecord, axis: str) -> float:
    if axis == "gamma":
        return 1.0 / (1.0 - r.gamma)
    if axis == "epsilon":
        return 1.0 / r.epsilon
    if axis == "t_minorize":
        return r.t_minorize
    raise ValueError(f"unknown axis {axis!r}; expected one of {AXES}")


def scaling_points(records, axis: str) -> tuple[np.ndarray, np.ndarray]:
    """Distinct axis values and mean samples of successful trials at each."""
    groups: dict[float, list[int]] = {}
    for r in records:
        if r.status == "ok" and r.success:
            groups.setdefault(_axis_value(r, axis), []).append(r.samples_used)
    xs = np.array(sorted(groups))
    ys = np.array([np.mean(groups[x]) for x in xs])
    return xs, ys


def fit_scaling(records, axis: str) -> tuple[float, float]:
    """Log-log slope of samples against ``1/(1-gamma)``, ``1/epsilon`` or ``t``."""
    if axis not in AXES:
        raise ValueError(f"unknown axis {axis!r}; expected one of {AXES}")
    xs, ys = scaling_points(records, axis)
    if xs.size < 3:
        raise ValueError(f"need at least 3 distinct {axis} values with successful trials, got {xs.size}")
    return loglog_slope(xs, ys)


def report_rows(records, timings: dict | None = None) -> list[dict]:
    timings = timings or {}
    rows = []
    for r in records:
        wall = timings.get((r.config_hash, _point_key(r.point), r.seed))
        rows.append({
            "instance": r.instance, "seed": r.seed, "gamma": r.gamma, "t_minorize": r.t_minorize,
            "epsilon": r.epsilon, "setting": r.setting, "samples": r.samples_used,
            "error": "" if r.final_error is None else r.final_error,
            "success": int(bool(r.success)), "wall_ms": "" if wall is None else wall,
        })
    return rows


def emit_report(records, out_dir: str | Path, timings: dict | None = None) -> dict:
    """Write ``report.csv`` and ``report.json``; returns the JSON document."""
    records = list(records)
    if not records:
        raise ValueError("no records to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = report_rows(records, timings)
    with open(out_dir / "report.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(REPORT_COLUMNS), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)

    doc = {
        "schema": {"columns": list(REPORT_COLUMNS), "version": 1},
        "n_records": len(records),
        "success_rate": float(np.mean([r.success for r in records])),
        "rows": rows,
        "series": {
            "error_vs_samples": [
                {"seed": r.seed, "point": r.point, "samples": r.samples_used, "error": r.final_error,
                 "per_epoch_errors": list(r.per_epoch_errors)} for r in records],
        },
    }
    if len(records) > 1:
        scaling = {}
        for axis in AXES:
            xs, ys = scaling_points(records, axis)
            if xs.size >= 3:
                slope, se = loglog_slope(xs, ys)
                scaling[axis] = {"x": xs.tolist(), "samples": ys.tolist(), "slope": slope, "stderr": se}
        doc["scaling"] = scaling
        doc["series"]["samples_vs_axis"] = {a: {"x": v["x"], "samples": v["samples"]}
                                            for a, v in scaling.items()}
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True, default=_json_default)
        fh.write("\n")
    return doc


def _json_default(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    raise TypeError(f"not serialisable: {type(x)}")


def success_summary(records) -> dict:
    from .stats import clopper_pearson

    ok = [r for r in records if r.status == "ok"]
    k = sum(r.success for r in ok)
    n = len(ok)
    lo, _ = clopper_pearson(k, n) if n else (math.nan, math.nan)
    return {"successes": k, "trials": n, "rate": k / n if n else math.nan, "lower95": lo}
