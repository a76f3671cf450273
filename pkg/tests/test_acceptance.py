"""Acceptance criteria 1-9, each at its stated tolerance.

Every criterion records one PASS/FAIL line (printed in the pytest terminal
summary, or directly when this file is run as a script). Reference values
come from oracles computed here, independently of the package code paths
under test. These runs are long (tens of minutes on one core).
"""
import hashlib
import json
import math
import os
import shutil
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate, stats

from gibbsinit import harness as H
from gibbsinit import problems as P
from gibbsinit import theory
from gibbsinit.initpoint import InitPlan, run_strategy
from gibbsinit.objective import fd_gradient_check, subsample
from gibbsinit.optimize import GDConfig, gd_run_batch
from gibbsinit.samplers import rejection_sample_separable

pytestmark = pytest.mark.slow

ROOT = Path(__file__).resolve().parents[1]
RESULTS: dict = {}
_CACHE: dict = {}


def report(crit, passed, detail):
    RESULTS[crit] = (bool(passed), detail)
    return passed


def _combined_se(a, b):
    return math.hypot(a.standard_error, b.standard_error)


# ---------------------------------------------------------------------------
# 1. ST reproduction

def st_basin_fraction(step=0.05, iterations=50, d=5, grid=200_001):
    """Oracle: share of a 1-D start grid that projected GD sends to the deep basin."""
    t = np.linspace(-5.0, 5.0, grid)
    for _ in range(iterations):
        t = np.clip(t - step * (4 * t ** 3 - 32 * t + 5) / (2.0 * d), -5.0, 5.0)
    deep = np.sort(np.roots([4.0, 0.0, -32.0, 5.0]).real)[0]
    return float(np.mean(np.abs(t - deep) < 0.05))


def test_c1_st_reproduction():
    base = H.load_config(ROOT / "configs" / "st_annealing.yaml").replace(output_dir=None)
    rand_cfg = H.load_config(ROOT / "configs" / "st_random.yaml").replace(output_dir=None)
    oracle = st_basin_fraction() ** 5
    t0 = time.perf_counter()
    rand = H.run_experiment(rand_cfg, write=False)
    runs = {b: H.run_experiment(base.replace(**{"init.beta": float(b)}), write=False)
            for b in (1, 4, 10)}
    elapsed = time.perf_counter() - t0
    ok_rand = abs(rand.success_rate - oracle) <= 0.02
    pairs = [(1, 4), (4, 10)]
    ok_inc = all(runs[b].success_rate - runs[a].success_rate > _combined_se(runs[a], runs[b])
                 for a, b in pairs)
    ok_gap = runs[10].success_rate - rand.success_rate >= 0.20
    ok_time = elapsed <= 120.0
    rates = ", ".join(f"beta={b}: {r.success_rate:.3f}+-{r.standard_error:.3f}"
                      for b, r in runs.items())
    detail = (f"random {rand.success_rate:.4f} vs oracle {oracle:.4f} [{ok_rand}]; {rates}; "
              f"strict increase [{ok_inc}]; gap>=0.20 [{ok_gap}]; {elapsed:.1f}s [{ok_time}]")
    assert report(1, ok_rand and ok_inc and ok_gap and ok_time, detail), detail


# ---------------------------------------------------------------------------
# 2. exact sampler validity

def test_c2_st_rejection_ks():
    d, beta, L = 5, 10.0, 10_000
    box = P.STSpec(d).domain
    pts = rejection_sample_separable([P.st_coord] * d, beta, box, L, seed=2024,
                                     coordinate_scale=1.0 / (2 * d)).points
    t = np.linspace(-5.0, 5.0, 400_001)
    dens = np.exp(-beta * (t ** 4 - 16 * t ** 2 + 5 * t) / (2 * d) - 40.0)
    cdf = integrate.cumulative_trapezoid(dens, t, initial=0.0)
    cdf /= cdf[-1]
    ks = [stats.kstest(pts[:, i], lambda x: np.interp(x, t, cdf)).statistic for i in range(d)]
    detail = "KS per coordinate " + " ".join(f"{k:.4f}" for k in ks) + " (< 0.02)"
    assert report(2, max(ks) < 0.02, detail), detail


# ---------------------------------------------------------------------------
# 3 and 4. GMM ordinal reproduction and n-sweep

def _gmm_cfg():
    return H.load_config(ROOT / "configs" / "gmm_default.yaml").replace(output_dir=None)


def _gmm_run(strategy, n=50):
    key = (strategy, n)
    if key not in _CACHE:
        t0 = time.perf_counter()
        cfg = _gmm_cfg().replace(**{"init.strategy": strategy, "init.n_outsourced": n})
        _CACHE[key] = (H.run_experiment(cfg, write=False), time.perf_counter() - t0)
    return _CACHE[key]


def test_c3_gmm_ordinal():
    runs = {s: _gmm_run(s) for s in ("random", "sips", "oips_sao", "oips_annealing")}
    r = {s: v[0] for s, v in runs.items()}
    elapsed = sum(v[1] for v in runs.values())
    ok1 = r["sips"].success_rate >= r["oips_sao"].success_rate - 2 * r["oips_sao"].standard_error
    ok2 = (r["oips_sao"].success_rate
           >= r["oips_annealing"].success_rate - 2 * r["oips_annealing"].standard_error)
    ok3 = all(r[s].success_rate - r["random"].success_rate >= 0.15
              for s in ("sips", "oips_sao", "oips_annealing"))
    ok_time = elapsed <= 900.0
    rates = ", ".join(f"{s} {x.success_rate:.3f}+-{x.standard_error:.3f}" for s, x in r.items())
    detail = (f"{rates}; SIPS>=SAO-2se [{ok1}]; SAO>=ann-2se [{ok2}]; +15pp over random "
              f"[{ok3}]; {elapsed:.0f}s [{ok_time}]")
    assert report(3, ok1 and ok2 and ok3 and ok_time, detail), detail


def test_c4_gmm_n_sweep():
    s = {n: _gmm_run("sips", n)[0].success_rate for n in (10, 50, 100)}
    ok_flat = s[100] - s[50] <= 0.05
    ok_rise = s[50] - s[10] >= 0.05
    detail = (f"SIPS success n=10 {s[10]:.3f}, n=50 {s[50]:.3f}, n=100 {s[100]:.3f}; "
              f"n100-n50<=0.05 [{ok_flat}]; n50-n10>=0.05 [{ok_rise}]")
    assert report(4, ok_flat and ok_rise, detail), detail


# ---------------------------------------------------------------------------
# 5 and 6. double well: miss bound and concentration rate

def _dw_outside_mass(dw, beta, r):
    """Oracle: quadrature of exp(-beta f) outside [1-r, 1+r], normalized."""
    f = lambda t: np.exp(-beta * (dw.f(t) - dw.f(1.0)))  # noqa: E731
    lo, hi = -2.0, 2.0
    inner = integrate.quad(f, 1.0 - r, min(1.0 + r, hi), limit=200)[0]
    total = (integrate.quad(f, lo, 1.0 - r, points=[-1.0], limit=200)[0] + inner
             + (integrate.quad(f, 1.0 + r, hi, limit=200)[0] if 1.0 + r < hi else 0.0))
    return 1.0 - inner / total


def test_c5_miss_bound():
    dw = P.double_well_1d(1.0)
    r = dw.convexity_radius
    batches = 10_000
    cells, ok = [], True
    for bi, beta in enumerate((5.0, 10.0, 20.0)):
        pi_out = _dw_outside_mass(dw, beta, r)
        for li, L in enumerate((1, 5, 20)):
            pts = rejection_sample_separable([dw.f], beta, dw.domain, L * batches,
                                             seed=1000 + 10 * bi + li).points[:, 0]
            miss = np.all(np.abs(pts.reshape(batches, L) - dw.deep_min) > r, axis=1).mean()
            bound = theory.miss_probability_bound(pi_out, 0.0, L)
            se = math.sqrt(bound * (1 - bound) / batches)
            cell = miss <= bound + 3 * se
            if L == 1:
                cell = cell and abs(miss - pi_out) <= 3 * se
            ok &= bool(cell)
            cells.append(f"b{beta:g}/L{L}: {miss:.2e}<={bound:.2e}+3se{'' if cell else ' X'}")
    detail = f"r={r:.4f}; " + "; ".join(cells)
    assert report(5, ok, detail), detail


def test_c6_concentration_rate():
    dw = P.double_well_1d(1.0)
    r = dw.convexity_radius
    betas = [2.0, 5.0, 10.0, 20.0, 40.0]
    masses = [theory.concentration_mass(theory.GibbsTarget(dw, b), [dw.deep_min], r).mass_outside
              for b in betas]
    oracle = [_dw_outside_mass(dw, b, r) for b in betas]
    agree = np.allclose(masses, oracle, rtol=1e-3)
    logm = np.log(masses)
    dec = bool(np.all(np.diff(logm) < 0))
    slope = float(np.polyfit(betas[-3:], logm[-3:], 1)[0])
    ok = agree and dec and -1.0 <= slope <= -0.5
    detail = (f"log-mass {np.round(logm, 3).tolist()}; decreasing [{dec}]; terminal slope "
              f"{slope:.3f} in [-1,-0.5]; matches quadrature oracle [{agree}]")
    assert report(6, ok, detail), detail


# ---------------------------------------------------------------------------
# 7. approximation scaling

def test_c7_approximation_scaling():
    spec = P.GMMSpec(np.array([[-3.0], [3.0]]), np.array([0.6, 0.4]), 1.0, 6.0)
    F = P.gmm_population_objective(spec)
    ns = [10, 100, 1000, 10_000]
    logn, loggap, med = [], [], []
    for n in ns:
        disp = []
        for s in range(20):
            data = P.gmm_sample(spec, n, np.random.SeedSequence([7, n, s]))
            rep = theory.measure_delta_approx(F, P.gmm_empirical_objective(spec, data),
                                              grid_resolution=2001, with_stationary=True)
            logn.append(math.log(n))
            loggap.append(math.log(rep.sup_value_gap))
            disp.append(math.inf if rep.stationary_mismatch else rep.max_stationary_displacement)
        med.append(float(np.median(disp)))
    slope = float(np.polyfit(logn, loggap, 1)[0])
    ok_slope = abs(slope + 0.5) <= 0.15
    ok_disp = bool(np.all(np.diff(med) < 0))
    detail = (f"slope {slope:.3f} (-0.5+-0.15) [{ok_slope}]; median displacement "
              f"{[f'{m:.3g}' for m in med]} shrinking [{ok_disp}]")
    assert report(7, ok_slope and ok_disp, detail), detail


# ---------------------------------------------------------------------------
# 8. GMNL

def _bootstrap_se_median_diff(a, b, rng, reps=2000):
    ia = rng.integers(0, a.size, (reps, a.size))
    ib = rng.integers(0, b.size, (reps, b.size))
    return float(np.std(np.median(a[ia], axis=1) - np.median(b[ib], axis=1), ddof=1))


def gmnl_projected_seconds(cfg):
    """Per-strategy runtime projection for the full GMNL configuration.

    Measured pieces: one real replication of random and OIPS-annealing, plus
    the per-start cost of full-data GD (SIPS exploitation) and of the
    inner GD on the outsourced loss (OIPS-SAO). Sampling cost is shared by the
    three Gibbs strategies and is taken from the annealing replication.
    """
    prob = H.build_problem(cfg.problem, cfg.problem_params)
    seeds = H.replication_seeds(cfg.master_seed, 0)
    out = subsample(prob.data, cfg.plan.n_outsourced, seeds["subsample"])
    cost = {}
    for s in ("random", "oips_annealing"):
        t0 = time.perf_counter()
        rec = H.run_replication(cfg.replace(**{"init.strategy": s}), 0)
        cost[s] = time.perf_counter() - t0
        assert rec.ok, rec.error
    t0 = time.perf_counter()
    plan = InitPlan("oips_annealing", cfg.plan.beta, cfg.plan.L, cfg.plan.n_outsourced,
                    cfg.plan.sampler, cfg.plan.inner, seeds["init"])
    run_strategy(out, plan, prob.loss, prob.domain)
    sample_t = time.perf_counter() - t0
    probe = np.random.default_rng(0).uniform(-1, 1, (10, prob.domain.dim))
    t0 = time.perf_counter()
    gd_run_batch(prob.F, probe, cfg.optimizer)
    per_full = (time.perf_counter() - t0) / probe.shape[0]
    t0 = time.perf_counter()
    gd_run_batch(prob.loss(out), probe, cfg.plan.inner)
    per_inner = (time.perf_counter() - t0) / probe.shape[0]
    L = cfg.plan.L
    cost["sips"] = sample_t + L * per_full
    cost["oips_sao"] = sample_t + L * per_inner + per_full
    return {s: c * cfg.replications for s, c in cost.items()}


def test_c8_gmnl():
    cfg = H.load_config(ROOT / "configs" / "gmnl.yaml").replace(output_dir=None)
    prob = H.build_problem(cfg.problem, cfg.problem_params)
    rng = np.random.default_rng(3)
    fd_ok = True
    for _ in range(3):
        theta = rng.uniform(-1.0, 1.0, prob.domain.dim)
        g = prob.F.grad(theta)
        err = fd_gradient_check(prob.F, theta, 1e-5)
        fd_ok &= err <= 1e-3 * max(np.max(np.abs(g)), 1e-12)
    proj = gmnl_projected_seconds(cfg)
    total = sum(proj.values())
    parts = ", ".join(f"{s} {v / 60:.0f}min" for s, v in proj.items())
    if total <= 1800.0 or os.environ.get("GIBBSINIT_ACCEPT_FULL") == "1":
        t0 = time.perf_counter()
        res = H.compare_strategies(cfg, ["random", "oips_annealing", "oips_sao", "sips"])
        elapsed = time.perf_counter() - t0
        base = res["random"].values
        ordinal = True
        notes = []
        for s in ("oips_annealing", "oips_sao", "sips"):
            v = res[s].values
            se = _bootstrap_se_median_diff(base, v, rng)
            margin = np.median(base) - np.median(v)
            ordinal &= margin > 2 * se
            notes.append(f"{s} margin {margin:.4g} vs 2se {2 * se:.3g}")
        ok = fd_ok and ordinal and elapsed <= 1800.0
        detail = f"FD [{fd_ok}]; {'; '.join(notes)}; {elapsed / 60:.1f}min"
    else:
        ok = False
        detail = (f"FD check at 1e-3 rel [{fd_ok}]; projected runtime {total / 3600:.1f}h "
                  f"({parts}) exceeds 30min, ordinal comparison not run "
                  f"(set GIBBSINIT_ACCEPT_FULL=1 to force)")
    assert report(8, ok, detail), detail


# ---------------------------------------------------------------------------
# 9. determinism

def _digest(directory, scope="all"):
    """Hash of the result files with the timing fields removed.

    ``scope="results"`` also drops the config echo, for comparing a serial
    run against a multi-worker run (their configs differ in ``workers``).
    """
    recs = (directory / "records.csv").read_text().splitlines()
    keep = [i for i, h in enumerate(recs[0].split(",")) if h not in H.TIMING_FIELDS]
    rows = "\n".join(",".join(line.split(",")[i] for i in keep) for line in recs)
    summ = json.loads((directory / "summary.json").read_text())
    for key in H.TIMING_FIELDS:
        summ.pop(key, None)
    if scope == "results":
        summ.pop("config")
    blob = rows + json.dumps(summ, sort_keys=True) + (directory / "histogram.csv").read_text()
    return hashlib.sha256(blob.encode()).hexdigest()


DETERMINISM_RUNS = [
    ("st_random.yaml", {}),
    ("st_annealing.yaml", {}),
    ("double_well.yaml", {"strategy": "oips_sao", "inner": {"step": 0.05, "iterations": 20}}),
    ("gmm_default.yaml", {"strategy": "oips_annealing", "L": 50}),
    ("gmm_default.yaml", {"strategy": "sips", "L": 50}),
    ("gmnl.yaml", {"strategy": "oips_annealing", "L": 20}),
]


def test_c9_determinism(tmp_path):
    import yaml

    same, lines = True, []
    for k, (name, over) in enumerate(DETERMINISM_RUNS):
        raw = yaml.safe_load((ROOT / "configs" / name).read_text())
        if "strategy" in over:
            raw["init"]["strategy"] = over["strategy"]
        for key in ("L", "inner"):
            if key in over:
                raw["init"][key] = over[key]
        raw["replications"] = 12
        path = tmp_path / f"cfg{k}.yaml"
        path.write_text(yaml.safe_dump(raw))
        out = tmp_path / f"out{k}"
        digests = []
        for workers in (1, 1, 2):
            shutil.rmtree(out, ignore_errors=True)
            proc = subprocess.run([sys.executable, "-m", "gibbsinit.cli", "run", str(path),
                                   "--output-dir", str(out), "--workers", str(workers)],
                                  capture_output=True, text=True)
            assert proc.returncode == 0, proc.stderr
            digests.append((_digest(out), _digest(out, "results")))
        eq = digests[0][0] == digests[1][0] and digests[0][1] == digests[2][1]
        same &= eq
        lines.append(f"{name}:{raw['init'].get('strategy')} {'same' if eq else 'DIFFERENT'}")
    detail = "; ".join(lines) + " (two serial runs plus one 2-worker run each)"
    assert report(9, same, detail), detail


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-p", "no:cacheprovider"]))
