"""Samplers for the Gibbs measure  pi_beta(theta) ~ exp(-beta F(theta)) 1{theta in domain}."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.optimize import minimize_scalar

from . import kernels
from .errors import GibbsInitError
from .objective import Domain, Objective

DEFAULT_BURNIN = 1000
DEFAULT_THINNING = 10
MIN_ACCEPTANCE = 1e-6


@dataclass(frozen=True)
class GibbsTarget:
    objective: Objective
    beta: float

    def __post_init__(self):
        if self.beta < 0:
            raise GibbsInitError("bad-beta", "beta must be >= 0")

    @property
    def domain(self) -> Domain:
        return self.objective.domain


@dataclass
class ChainState:
    position: np.ndarray
    steps_taken: int = 0
    accepted: int = 0
    nonfinite: int = 0


@dataclass
class SampleBatch:
    points: np.ndarray
    provenance: str
    beta: float
    burnin: int = 0
    thinning: int = 1
    seed: Optional[int] = None
    acceptance_rate: Optional[float] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def L(self) -> int:
        return int(self.points.shape[0])

    def metadata(self) -> dict:
        return {"method": self.provenance, "beta": self.beta, "L": self.L,
                "burnin": self.burnin, "thinning": self.thinning, "seed": self.seed,
                "acceptance_rate": self.acceptance_rate}

    def to_csv(self, path, extra_columns: Optional[dict] = None) -> None:
        """CSV with coord_0..coord_{d-1} plus a ``.json`` sidecar of the metadata."""
        path = Path(path)
        write_points_csv(path, self.points, extra_columns)
        path.with_suffix(".json").write_text(json.dumps(self.metadata(), indent=2))


def write_points_csv(path, points, extra_columns: Optional[dict] = None) -> None:
    extra_columns = extra_columns or {}
    d = points.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"coord_{i}" for i in range(d)] + list(extra_columns))
        for k, row in enumerate(points):
            w.writerow([repr(float(v)) for v in row]
                       + [_fmt(col[k]) for col in extra_columns.values()])


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if v is None:
        return ""
    return repr(float(v))


def read_points_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    ncoord = sum(h.startswith("coord_") for h in header)
    pts = np.array([[float(v) for v in r[:ncoord]] for r in body]).reshape(len(body), ncoord)
    extra = {h: [r[ncoord + i] for r in body] for i, h in enumerate(header[ncoord:])}
    return pts, extra


def default_ula_step(beta: float) -> float:
    if beta <= 0:
        return 1e-2
    return float(np.clip(1e-2 / beta, 1e-6, 1e-2))


def ula_step(state: ChainState, target: GibbsTarget, h: float,
             rng: np.random.Generator) -> ChainState:
    if h < 0:
        raise GibbsInitError("bad-step", "h must be >= 0")
    x = state.position
    z = rng.standard_normal(x.shape[0])
    if h == 0:
        return replace(state, position=x.copy(), steps_taken=state.steps_taken + 1)
    g = target.objective.grad(x) if target.beta != 0 else np.zeros_like(x)
    if not np.all(np.isfinite(g)):
        raise GibbsInitError("diverged-gradient", f"at step {state.steps_taken}")
    nxt = target.domain.project(x - h * target.beta * g + np.sqrt(2.0 * h) * z)
    return replace(state, position=nxt, steps_taken=state.steps_taken + 1)


def rwm_step(state: ChainState, target: GibbsTarget, scale: float,
             rng: np.random.Generator, current_value: Optional[float] = None):
    """One random-walk Metropolis step; returns (state, value at the new position).

    Out-of-domain proposals have zero target density and are rejected.
    """
    if not scale > 0:
        raise GibbsInitError("bad-scale", "proposal scale must be positive")
    x = state.position
    obj = target.objective
    fx = obj.value(x) if current_value is None else current_value
    prop = x + scale * rng.standard_normal(x.shape[0])
    u = rng.random()
    nxt = replace(state, steps_taken=state.steps_taken + 1)
    if not target.domain.contains(prop, tol=0.0):
        return nxt, fx
    fp = obj.value(prop)
    if not np.isfinite(fp):
        nxt.nonfinite += 1
        return nxt, fx
    log_ratio = -target.beta * (fp - fx)
    if log_ratio >= 0 or u < np.exp(log_ratio):
        nxt.position = prop
        nxt.accepted += 1
        return nxt, fp
    return nxt, fx


def run_chain(method: str, target: GibbsTarget, L: int, burnin: int = DEFAULT_BURNIN,
              thinning: int = DEFAULT_THINNING, init=None, params: Optional[dict] = None,
              seed: int = 0) -> SampleBatch:
    """Discard ``burnin`` steps, then keep every ``thinning``-th position until L points."""
    if L < 1 or burnin < 0 or thinning < 1:
        raise GibbsInitError("bad-chain-config", "need L >= 1, burnin >= 0, thinning >= 1")
    params = dict(params or {})
    dom = target.domain
    rng = np.random.default_rng(seed)
    x0 = dom.sample_uniform(rng, 1)[0] if init is None else np.asarray(init, dtype=float)
    if not dom.contains(x0):
        raise GibbsInitError("bad-init", "chain start lies outside the domain")
    total = burnin + L * thinning

    if method == "ula":
        h = params.get("h") or default_ula_step(target.beta)
        kf = target.objective.kernel_form
        if kf is not None and target.beta > 0:
            noise = rng.standard_normal((total, dom.dim))
            pts, bad = kernels.ula_kernel_chain(x0, kf.centers, kf.weights, kf.sigma,
                                                target.beta, h, noise, burnin, thinning, L,
                                                dom.kernel_arrays())
            if bad >= 0:
                raise GibbsInitError("diverged-gradient", f"at step {bad}")
            return SampleBatch(pts, "ula", target.beta, burnin, thinning, seed,
                               diagnostics={"h": h, "fused": True, "start": x0})
        step = lambda s: ula_step(s, target, h, rng)  # noqa: E731
        diag = {"h": h, "fused": False}
    elif method == "rwm":
        scale = params.get("scale", 0.5)
        fx = [target.objective.value(x0)]

        def step(s):
            s, fx[0] = rwm_step(s, target, scale, rng, fx[0])
            return s

        diag = {"scale": scale}
    else:
        raise GibbsInitError("bad-sampler", f"unknown chain method {method!r}")

    state = ChainState(x0.copy())
    out = np.empty((L, dom.dim))
    rec = 0
    for i in range(total):
        try:
            state = step(state)
        except GibbsInitError as exc:
            raise GibbsInitError(exc.code, f"at step {i}") from exc
        if i >= burnin and (i - burnin + 1) % thinning == 0:
            out[rec] = state.position
            rec += 1
    acc = state.accepted / state.steps_taken if method == "rwm" else None
    diag["nonfinite_proposals"] = state.nonfinite
    diag["start"] = x0
    return SampleBatch(out, method, target.beta, burnin, thinning, seed, acc, diag)


def run_chains(method: str, target: GibbsTarget, L: int, chains: int,
               burnin: int = DEFAULT_BURNIN, thinning: int = DEFAULT_THINNING, inits=None,
               params: Optional[dict] = None, seed: int = 0) -> SampleBatch:
    """Independent chains, each with its own child seed; L split as evenly as possible.

    ``chains == 1`` is exactly :func:`run_chain`.
    """
    if chains < 1 or chains > L:
        raise GibbsInitError("bad-chain-config", "need 1 <= chains <= L")
    if chains == 1:
        init = None if inits is None else inits[0]
        return run_chain(method, target, L, burnin, thinning, init, params, seed)
    counts = np.full(chains, L // chains)
    counts[: L % chains] += 1
    children = np.random.SeedSequence(seed).spawn(chains)
    parts = []
    accs = []
    for c in range(chains):
        child = int(children[c].generate_state(1)[0])
        init = None if inits is None else inits[c]
        b = run_chain(method, target, int(counts[c]), burnin, thinning, init, params, child)
        parts.append(b.points)
        accs.append(b.acceptance_rate)
    acc = float(np.mean(accs)) if method == "rwm" else None
    return SampleBatch(np.vstack(parts), method, target.beta, burnin, thinning, seed, acc,
                       diagnostics={"chains": chains})


# --------------------------------------------------------------------------
# Exact and importance samplers


def _coordinate_minimum(f: Callable, lo: float, hi: float, grid: int = 10001):
    """(argmin, min) of a 1-D function: grid search refined by a bounded scalar search."""
    t = np.linspace(lo, hi, grid)
    ft = f(t)
    k = int(np.argmin(ft))
    a, b = t[max(k - 1, 0)], t[min(k + 1, grid - 1)]
    arg, best = float(t[k]), float(ft[k])
    if b > a:
        res = minimize_scalar(f, bounds=(a, b), method="bounded",
                              options={"xatol": 1e-12})
        if float(res.fun) < best:
            arg, best = float(res.x), float(res.fun)
    return arg, best


def rejection_sample_separable(per_coord_f: Sequence[Callable], beta: float, box: Domain,
                               L: int, seed: int, coordinate_scale: float = 1.0,
                               batch: int = 4096) -> SampleBatch:
    """Exact i.i.d. draws from exp(-beta * scale * sum_i f_i(theta_i)) on a box.

    Each coordinate is drawn independently by rejection from a uniform proposal
    under the envelope exp(-beta * scale * (f_i(t) - min f_i)).
    """
    if box.kind != "box":
        raise GibbsInitError("bad-domain", "rejection sampler needs a box")
    if len(per_coord_f) != box.dim:
        raise GibbsInitError("dim-mismatch", "one function per coordinate required")
    if beta < 0 or L < 1:
        raise GibbsInitError("bad-sampler", "need beta >= 0 and L >= 1")
    rng = np.random.default_rng(seed)
    bs = beta * coordinate_scale
    out = np.empty((L, box.dim))
    rates = []
    for i, f in enumerate(per_coord_f):
        lo, hi = float(box.lo[i]), float(box.hi[i])
        tmin, fmin = _coordinate_minimum(f, lo, hi)
        # expected acceptance = mean envelope height; quad is told where the peak sits
        mass = quad(lambda t: np.exp(-bs * (f(t) - fmin)), lo, hi, points=[tmin],
                    limit=500)[0]
        rate = mass / (hi - lo)
        if rate < MIN_ACCEPTANCE:
            raise GibbsInitError("envelope-too-loose",
                                 f"coordinate {i} acceptance {rate:.2e}; use snis_resample")
        got = 0
        proposed = 0
        while got < L:
            t = lo + (hi - lo) * rng.random(batch)
            u = rng.random(batch)
            keep = t[np.log(u) < -bs * (f(t) - fmin)]
            take = min(L - got, keep.size)
            out[got:got + take, i] = keep[:take]
            got += take
            proposed += batch
        rates.append(got / proposed)
    return SampleBatch(out, "rejection", beta, 0, 1, seed,
                       diagnostics={"acceptance_by_coordinate": rates})


def snis_resample(target: GibbsTarget, proposal_count: int, L: int, seed: int) -> SampleBatch:
    """Self-normalized importance resampling from uniform proposals (approximate)."""
    if proposal_count < L or L < 1:
        raise GibbsInitError("bad-sampler", "need proposal_count >= L >= 1")
    rng = np.random.default_rng(seed)
    props = target.domain.sample_uniform(rng, proposal_count)
    vals = target.objective.values(props)
    logw = -target.beta * (vals - np.min(vals)) if target.beta > 0 else np.zeros(proposal_count)
    w = np.exp(logw)
    total = w.sum()
    if not np.isfinite(total) or total <= 0:
        raise GibbsInitError("weight-underflow", "non-finite objective values among proposals")
    cdf = np.cumsum(w / total)
    idx = np.minimum(np.searchsorted(cdf, rng.random(L), side="right"), proposal_count - 1)
    ess = float(total ** 2 / np.sum(w * w))
    return SampleBatch(props[idx], "snis", target.beta, 0, 1, seed,
                       diagnostics={"ess": ess, "indices": idx})


def uniform_batch(domain: Domain, L: int, seed: int) -> SampleBatch:
    rng = np.random.default_rng(seed)
    return SampleBatch(domain.sample_uniform(rng, L), "uniform", 0.0, 0, 1, seed)
