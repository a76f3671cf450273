"""Replicated experiments: seeded replications, success rates, histograms and result files.

One replication is: draw the outsourced subset, build the empirical loss, run the
init strategy, run gradient descent from every candidate, keep the lowest
convergent value. Replication ``i`` draws every random number from a stream
derived from ``(master_seed, i)`` alone, so records do not depend on worker
count or on other replications.
"""
from __future__ import annotations

import copy
import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__
from . import problems as P
from ._accel import backend_name
from .errors import ExperimentUnstable, GibbsInitError
from .initpoint import STRATEGIES, InitPlan, SamplerSpec, run_strategy
from .objective import Dataset, Domain, Objective, subsample
from .optimize import GDConfig, gd_run_batch

PROBLEMS = ("st", "gmm", "gmnl", "double_well")
SUCCESS_MODES = ("value_gap", "threshold", "point_distance", "relative_best")
SWEEP_AXES = ("beta", "n", "L")
MAX_FAILURE_FRACTION = 0.10

# Defaults per problem. The GMM instance is the one the acceptance runs use:
# narrow kernels so the deepest mode sits below -32, one heavier component.
PROBLEM_DEFAULTS = {
    "st": {"d": 5},
    "gmm": {"d": 5, "M": 10, "sigma": 0.1, "spread": 0.5, "box_half_width": 1.0,
            "top_weight": 0.2, "instance_seed": 2024, "data_size": 10_000,
            "data_seed": 7, "grad_batch": 1000},
    "gmnl": {"p": 10, "q": 5, "J": 5, "N": 1000, "R": 100, "seed": 0,
             "box_half_width": 2.0},
    "double_well": {"alpha": 1.0, "height": 1.0, "half_width": 2.0},
}

SUCCESS_DEFAULTS = {
    "st": {"mode": "value_gap", "threshold": 0.5},
    "gmm": {"mode": "threshold", "threshold": -32.0},
    "gmnl": {"mode": "relative_best", "threshold": 0.01},
    "double_well": {"mode": "point_distance", "threshold": 0.25},
}

RECORD_FIELDS = ("replication_id", "seed", "n_starts", "init_point", "final_point",
                 "convergent_value", "success", "error", "wall_time")
TIMING_FIELDS = ("wall_time", "timing")


# --------------------------------------------------------------------------
# Problems


@dataclass
class Problem:
    """Everything a replication needs from a problem instance."""
    name: str
    domain: Domain
    F: Objective
    data: Optional[Dataset]
    loss: Callable[[Optional[Dataset]], Objective]
    exploit: Callable[[int], Objective]
    theta_star: Optional[np.ndarray] = None
    f_star: Optional[float] = None
    outsourcing: bool = False


def _gmm_spec(prm):
    d, M = int(prm["d"]), int(prm["M"])
    top = float(prm["top_weight"])
    w = np.array([top] + [(1.0 - top) / (M - 1)] * (M - 1)) if M > 1 else np.ones(1)
    return P.make_gmm_spec(d, M, float(prm["sigma"]), int(prm["instance_seed"]),
                           spread=float(prm["spread"]),
                           box_half_width=float(prm["box_half_width"]), weights=w)


def _build_problem(name: str, prm: dict) -> Problem:
    if name == "st":
        F = P.st_objective(P.STSpec(int(prm["d"])))
        return Problem(name, F.domain, F, None, lambda _d: F, lambda _s: F,
                       np.full(F.dim, P.ST_ARGMIN), P.ST_MIN_VALUE)
    if name == "double_well":
        F = P.double_well_1d(float(prm["alpha"]), float(prm["height"]),
                             float(prm["half_width"]))
        return Problem(name, F.domain, F, None, lambda _d: F, lambda _s: F,
                       np.array([F.deep_min]), float(F.f(F.deep_min)))
    if name == "gmm":
        spec = _gmm_spec(prm)
        F = P.gmm_population_objective(spec)
        data = P.gmm_sample(spec, int(prm["data_size"]), int(prm["data_seed"]))
        batch = prm.get("grad_batch")

        def exploit(seed):
            if not batch:
                return F
            return P.gmm_batched_gradient_objective(spec, int(batch), seed)

        top = int(np.argmin(F.values(spec.means)))
        return Problem(name, spec.domain, F, data,
                       lambda out: P.gmm_empirical_objective(spec, out if out is not None else data),
                       exploit, spec.means[top], float(F.value(spec.means[top])), True)
    if name == "gmnl":
        spec, data = P.gmnl_generate(int(prm["p"]), int(prm["q"]), int(prm["J"]),
                                     int(prm["N"]), int(prm["R"]), int(prm["seed"]),
                                     box_half_width=float(prm["box_half_width"]))
        F = P.gmnl_sim_nll(spec, data)
        return Problem(name, spec.domain, F, data,
                       lambda out: F if out is None else P.gmnl_sim_nll(spec, out),
                       lambda _s: F, spec.theta_star, None, True)
    raise GibbsInitError("bad-config", f"unknown problem {name!r}")


_PROBLEM_CACHE: dict = {}


def build_problem(name: str, params: Optional[dict] = None) -> Problem:
    """Build (or fetch from the per-process cache) a problem instance."""
    if name not in PROBLEMS:
        raise GibbsInitError("bad-config", f"unknown problem {name!r}; choose from {PROBLEMS}")
    prm = dict(PROBLEM_DEFAULTS[name])
    unknown = set(params or {}) - set(prm)
    if unknown:
        raise GibbsInitError("bad-config", f"unknown {name} parameters {sorted(unknown)}")
    prm.update(params or {})
    key = (name, json.dumps(prm, sort_keys=True))
    if key not in _PROBLEM_CACHE:
        _PROBLEM_CACHE[key] = _build_problem(name, prm)
    return _PROBLEM_CACHE[key]


# --------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class SuccessRule:
    mode: str
    threshold: float

    def __post_init__(self):
        if self.mode not in SUCCESS_MODES:
            raise GibbsInitError("bad-config", f"unknown success mode {self.mode!r}")
        if self.mode != "threshold" and not self.threshold > 0:
            raise GibbsInitError("bad-config", "success tolerance must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str
    plan: InitPlan
    optimizer: GDConfig
    replications: int
    success: SuccessRule
    master_seed: int = 0
    output_dir: Optional[str] = None
    problem_params: dict = field(default_factory=dict)
    random_starts: int = 1
    workers: int = 1
    histogram_bins: int = 30
    normalize_by: Optional[float] = None

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise GibbsInitError("bad-config", f"unknown problem {self.problem!r}")
        if self.replications < 1:
            raise GibbsInitError("bad-config", "replications must be >= 1")
        if self.random_starts < 1 or self.workers < 1 or self.histogram_bins < 1:
            raise GibbsInitError("bad-config", "random_starts, workers and bins must be >= 1")
        if self.success.mode == "value_gap" and self.problem == "gmnl":
            raise GibbsInitError("bad-config", "gmnl has no known optimum; use relative_best")
        if self.plan.n_outsourced is not None and self.problem in ("st", "double_well"):
            raise GibbsInitError("bad-config", f"{self.problem} has no data to outsource")

    # YAML / dict round trip -----------------------------------------------------
    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        try:
            raw = copy.deepcopy(raw)
            prob = raw.pop("problem")
            if isinstance(prob, str):
                prob = {"name": prob}
            name = prob["name"]
            init = dict(raw.pop("init", {}))
            sampler = SamplerSpec(**init.pop("sampler", {}))
            inner = init.pop("inner", None)
            random_starts = int(init.pop("random_starts", 1))
            plan = InitPlan(sampler=sampler, inner=None if inner is None else GDConfig(**inner),
                            **init)
            success = dict(SUCCESS_DEFAULTS.get(name, {}))
            success.update(raw.pop("success", {}) or {})
            hist = raw.pop("histogram", {}) or {}
            cfg = cls(problem=name, plan=plan, optimizer=GDConfig(**raw.pop("optimizer", {})),
                      replications=int(raw.pop("replications", 1)),
                      success=SuccessRule(success["mode"], float(success["threshold"])),
                      master_seed=int(raw.pop("master_seed", 0)),
                      output_dir=raw.pop("output_dir", None),
                      problem_params=dict(prob.get("params", {}) or {}),
                      random_starts=random_starts, workers=int(raw.pop("workers", 1)),
                      histogram_bins=int(hist.get("bins", 30)),
                      normalize_by=hist.get("normalize_by"))
        except GibbsInitError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise GibbsInitError("bad-config", f"{type(exc).__name__}: {exc}") from None
        if raw:
            raise GibbsInitError("bad-config", f"unknown keys {sorted(raw)}")
        build_problem(cfg.problem, cfg.problem_params)  # validates params
        return cfg

    def to_dict(self) -> dict:
        s = self.plan.sampler
        init = {"strategy": self.plan.strategy, "beta": self.plan.beta, "L": self.plan.L,
                "n_outsourced": self.plan.n_outsourced, "random_starts": self.random_starts,
                "sampler": {"method": s.method, "h": s.h, "scale": s.scale, "burnin": s.burnin,
                            "thinning": s.thinning, "proposal_count": s.proposal_count,
                            "init": s.init, "chains": s.chains},
                "inner": None if self.plan.inner is None else
                {"step": self.plan.inner.step, "iterations": self.plan.inner.iterations}}
        return {"problem": {"name": self.problem, "params": dict(self.problem_params)},
                "init": init,
                "optimizer": {"step": self.optimizer.step,
                              "iterations": self.optimizer.iterations},
                "replications": self.replications,
                "success": {"mode": self.success.mode, "threshold": self.success.threshold},
                "master_seed": self.master_seed, "output_dir": self.output_dir,
                "workers": self.workers,
                "histogram": {"bins": self.histogram_bins, "normalize_by": self.normalize_by}}

    def replace(self, **changes) -> "ExperimentConfig":
        raw = self.to_dict()
        for key, val in changes.items():
            node = raw
            *path, last = key.split(".")
            for part in path:
                node = node[part]
            node[last] = val
        return ExperimentConfig.from_dict(raw)


def load_config(path) -> ExperimentConfig:
    import yaml
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise GibbsInitError("bad-config", f"unparseable config: {exc}") from None
    if not isinstance(raw, dict):
        raise GibbsInitError("bad-config", "config must be a mapping")
    return ExperimentConfig.from_dict(raw)


# --------------------------------------------------------------------------
# Results


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    def to_dict(self) -> dict:
        return {"edges": self.edges.tolist(), "counts": self.counts.tolist()}


def emit_histogram(values, bins: int, normalize_by: Optional[float] = None) -> Histogram:
    """Equal-width bins over [min, max], optionally after dividing by ``normalize_by``."""
    if bins < 1:
        raise GibbsInitError("bad-histogram", "bins must be >= 1")
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise GibbsInitError("no-data", "no values to bin")
    if normalize_by is not None:
        v = v / float(normalize_by)
    lo, hi = float(v.min()), float(v.max())
    if lo == hi:
        edges = np.linspace(lo - 0.5, hi + 0.5, bins + 1)
        counts = np.zeros(bins, dtype=np.int64)
        counts[min(bins // 2, bins - 1)] = v.size
        return Histogram(edges, counts)
    # manual binning: np.histogram refuses ranges narrower than the float spacing
    idx = np.minimum(((v - lo) / (hi - lo) * bins).astype(np.int64), bins - 1)
    return Histogram(np.linspace(lo, hi, bins + 1), np.bincount(idx, minlength=bins))


@dataclass
class Record:
    replication_id: int
    seed: int
    n_starts: int = 0
    init_point: Optional[np.ndarray] = None
    final_point: Optional[np.ndarray] = None
    convergent_value: float = math.nan
    success: bool = False
    error: str = ""
    wall_time: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.error

    def row(self) -> list:
        pt = lambda a: "" if a is None else " ".join(repr(float(x)) for x in a)  # noqa: E731
        return [self.replication_id, self.seed, self.n_starts, pt(self.init_point),
                pt(self.final_point), repr(float(self.convergent_value)),
                "true" if self.success else "false", self.error, f"{self.wall_time:.6f}"]


@dataclass
class RunResult:
    config: ExperimentConfig
    records: list
    success_rate: float
    n_success: int
    n_valid: int
    n_failed: int
    mean_value: float
    median_value: float
    histogram: Optional[Histogram]
    reference_best: Optional[float] = None
    backend: str = field(default_factory=backend_name)

    @property
    def values(self) -> np.ndarray:
        return np.array([r.convergent_value for r in self.records if r.ok])

    @property
    def successes(self) -> np.ndarray:
        return np.array([r.success for r in self.records if r.ok], dtype=bool)

    @property
    def standard_error(self) -> float:
        p = self.success_rate
        return math.sqrt(p * (1 - p) / max(self.n_valid, 1))

    def summary(self) -> dict:
        return {"artifact_version": __version__, "backend": self.backend,
                "config": self.config.to_dict(),
                "aggregate": {"replications": self.config.replications,
                              "n_valid": self.n_valid, "n_failed": self.n_failed,
                              "n_success": self.n_success, "success_rate": self.success_rate,
                              "mean_value": self.mean_value, "median_value": self.median_value,
                              "reference_best": self.reference_best,
                              "histogram": None if self.histogram is None
                              else self.histogram.to_dict()},
                "timing": {"total_wall_time": round(sum(r.wall_time for r in self.records), 6)}}

    def write(self, directory) -> Path:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "records.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RECORD_FIELDS)
            for r in self.records:
                w.writerow(r.row())
        (out / "summary.json").write_text(json.dumps(self.summary(), indent=2) + "\n")
        with open(out / "histogram.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("bin_left", "bin_right", "count"))
            if self.histogram is not None:
                e, c = self.histogram.edges, self.histogram.counts
                for i in range(c.size):
                    w.writerow((repr(float(e[i])), repr(float(e[i + 1])), int(c[i])))
        return out


def read_records(path) -> list:
    """Parse a records.csv back into dicts (numbers converted, points as arrays)."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append({
                "replication_id": int(row["replication_id"]), "seed": int(row["seed"]),
                "n_starts": int(row["n_starts"]),
                "init_point": np.array(row["init_point"].split(), dtype=float),
                "final_point": np.array(row["final_point"].split(), dtype=float),
                "convergent_value": float(row["convergent_value"]),
                "success": row["success"] == "true", "error": row["error"],
                "wall_time": float(row["wall_time"])})
    return rows


# --------------------------------------------------------------------------
# Running


def replication_seeds(master_seed: int, replication_id: int) -> dict:
    """Independent integer seeds for each random step of one replication."""
    s = np.random.SeedSequence([int(master_seed), int(replication_id)]).generate_state(4)
    return {"subsample": int(s[0]), "init": int(s[1]), "exploit": int(s[2]),
            "random": int(s[3])}


def _is_success(rule: SuccessRule, prob: Problem, value, finals, reference=None) -> bool:
    if not np.isfinite(value):
        return False
    if rule.mode == "value_gap":
        return bool(value <= prob.f_star + rule.threshold)
    if rule.mode == "threshold":
        return bool(value < rule.threshold)
    if rule.mode == "point_distance":
        dist = np.linalg.norm(finals - prob.theta_star, axis=1)
        return bool(np.any(dist <= rule.threshold))
    return bool(value - reference <= rule.threshold * abs(reference))


def run_replication(cfg: ExperimentConfig, replication_id: int) -> Record:
    """One seeded replication. Library errors are captured into the record."""
    seeds = replication_seeds(cfg.master_seed, replication_id)
    rec = Record(replication_id, seeds["init"])
    t0 = time.perf_counter()
    try:
        prob = build_problem(cfg.problem, cfg.problem_params)
        plan = InitPlan(cfg.plan.strategy, cfg.plan.beta, cfg.plan.L, cfg.plan.n_outsourced,
                        cfg.plan.sampler, cfg.plan.inner, seeds["init"])
        out = None
        if prob.outsourcing and plan.n_outsourced is not None:
            out = subsample(prob.data, plan.n_outsourced, seeds["subsample"])
        if plan.strategy == "random":
            plan = InitPlan("random", seed=seeds["random"])
        cands = run_strategy(out, plan, prob.loss, prob.domain, cfg.random_starts)
        exploit = prob.exploit(seeds["exploit"])
        with np.errstate(over="ignore", invalid="ignore"):
            finals, vals, diverged = gd_run_batch(exploit, cands.points, cfg.optimizer)
        vals = np.where(diverged | ~np.isfinite(vals), np.inf, vals)
        if not np.any(np.isfinite(vals)):
            raise GibbsInitError("all-candidates-diverged", "no finite convergent value")
        best = int(np.argmin(vals))
        rec.n_starts = int(cands.points.shape[0])
        rec.init_point = cands.points[best]
        rec.final_point = finals[best]
        rec.convergent_value = float(vals[best])
        if cfg.success.mode != "relative_best":
            rec.success = _is_success(cfg.success, prob, rec.convergent_value, finals)
    except (GibbsInitError, ArithmeticError, np.linalg.LinAlgError) as exc:
        rec.error = getattr(exc, "code", type(exc).__name__)
    rec.wall_time = time.perf_counter() - t0
    return rec


def _run_chunk(args):
    cfg, ids = args
    return [run_replication(cfg, i) for i in ids]


def _collect(cfg: ExperimentConfig) -> list:
    ids = list(range(cfg.replications))
    if cfg.workers == 1:
        return [run_replication(cfg, i) for i in ids]
    chunks = [ids[k::cfg.workers] for k in range(cfg.workers)]
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        recs = [r for part in pool.map(_run_chunk, [(cfg, c) for c in chunks]) for r in part]
    return sorted(recs, key=lambda r: r.replication_id)


def aggregate(cfg: ExperimentConfig, records: list,
              reference_best: Optional[float] = None) -> RunResult:
    """Deterministic reduction ordered by replication id.

    For ``relative_best`` the success flags are (re)computed here against
    ``reference_best``, defaulting to the best value in this batch.
    """
    records = sorted(records, key=lambda r: r.replication_id)
    good = [r for r in records if r.ok]
    n_failed = len(records) - len(good)
    if n_failed > MAX_FAILURE_FRACTION * len(records):
        raise ExperimentUnstable(f"{n_failed} of {len(records)} replications failed")
    if cfg.success.mode == "relative_best" and good:
        if reference_best is None:
            reference_best = min(r.convergent_value for r in good)
        prob = build_problem(cfg.problem, cfg.problem_params)
        for r in good:
            r.success = _is_success(cfg.success, prob, r.convergent_value, None, reference_best)
    vals = np.array([r.convergent_value for r in good])
    n_success = sum(r.success for r in good)
    hist = emit_histogram(vals, cfg.histogram_bins, cfg.normalize_by) if good else None
    return RunResult(cfg, records, n_success / len(good) if good else math.nan, n_success,
                     len(good), n_failed,
                     float(vals.mean()) if good else math.nan,
                     float(np.median(vals)) if good else math.nan, hist, reference_best)


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> RunResult:
    """Run all replications, aggregate, and write result files if ``output_dir`` is set."""
    records = _collect(cfg)
    try:
        result = aggregate(cfg, records)
    except ExperimentUnstable:
        if write and cfg.output_dir:
            _write_records_only(cfg, records)
        raise
    if write and cfg.output_dir:
        result.write(cfg.output_dir)
    return result


def _write_records_only(cfg, records):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "records.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        for r in sorted(records, key=lambda r: r.replication_id):
            w.writerow(r.row())


def rebase_relative_best(results: list) -> list:
    """Re-score ``relative_best`` runs against the best value across all of them."""
    vals = [r.values for r in results if r.n_valid]
    if not vals:
        return results
    best = float(min(v.min() for v in vals))
    out = []
    for r in results:
        new = aggregate(r.config, r.records, best) if r.config.success.mode == "relative_best" \
            else r
        if r.config.output_dir:
            new.write(r.config.output_dir)
        out.append(new)
    return out


def compare_strategies(cfg: ExperimentConfig, strategies=STRATEGIES) -> dict:
    """Run the same experiment under several strategies (shared seeds and data)."""
    results = {}
    for s in strategies:
        sub = cfg.replace(**{"init.strategy": s})
        if cfg.output_dir:
            sub = sub.replace(output_dir=str(Path(cfg.output_dir) / s))
        results[s] = run_experiment(sub)
    if cfg.success.mode == "relative_best":
        results = dict(zip(results, rebase_relative_best(list(results.values()))))
    return results


def sweep(cfg: ExperimentConfig, axis: str, values) -> list:
    """One run per value of ``axis``; all runs share the master seed derivation."""
    if axis not in SWEEP_AXES:
        raise GibbsInitError("bad-axis", f"axis must be one of {SWEEP_AXES}")
    if cfg.plan.strategy == "random":
        raise GibbsInitError("bad-axis", "random start has no beta, n or L")
    if axis == "n" and cfg.problem in ("st", "double_well"):
        raise GibbsInitError("bad-axis", f"{cfg.problem} has no outsourcing")
    key = {"beta": "init.beta", "n": "init.n_outsourced", "L": "init.L"}[axis]
    cast = float if axis == "beta" else int
    results = []
    for v in values:
        changes = {key: cast(v)}
        if cfg.output_dir:
            changes["output_dir"] = str(Path(cfg.output_dir) / f"{axis}={v}")
        results.append(run_experiment(cfg.replace(**changes)))
    if cfg.output_dir:
        Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
        with open(Path(cfg.output_dir) / "sweep.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow((axis, "success_rate", "n_valid", "median_value"))
            for v, r in zip(values, results):
                w.writerow((v, repr(r.success_rate), r.n_valid, repr(r.median_value)))
    return results
