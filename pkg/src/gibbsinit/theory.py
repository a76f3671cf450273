"""Bound calculators and their measurable, desk-scale counterparts."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass
from itertools import product
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq, linear_sum_assignment

from .errors import GibbsInitError
from .objective import Objective
from .optimize import HESSIAN_STEP
from .samplers import GibbsTarget

_trapz = getattr(np, "trapezoid", None) or np.trapz


def required_sample_size(delta: float, rho: float, d: int, C: float = 1.0) -> int:
    """ceil(C d log(1/rho) / delta^2). ``C`` stands in for the unknown absolute constant."""
    if not (delta > 0 and 0 < rho < 1 and d >= 1 and C > 0):
        raise GibbsInitError("bad-theory-params",
                             f"delta={delta}, rho={rho}, d={d}, C={C}")
    return math.ceil(C * d * math.log(1.0 / rho) / delta ** 2)


def miss_probability_bound(pi_Bc: float, delta_beta: float, L: int) -> float:
    """(pi(B^c) + delta_beta)^L: chance that none of L draws lands in B."""
    base = pi_Bc + delta_beta
    if base > 1.0:
        warnings.warn("pi(B^c) + delta_beta exceeds 1; clamping", RuntimeWarning, stacklevel=2)
        base = 1.0
    return float(base ** L)


def random_start_failure_bound(p_ball: float, m: int) -> float:
    if not 0.0 <= p_ball <= 1.0:
        raise GibbsInitError("bad-theory-params", "p_ball must be a probability")
    return float((1.0 - p_ball) ** m)


def eps_global_set(stationary: Sequence, epsilon: float) -> list:
    """Indices whose value is within ``epsilon`` of the lowest value in the list."""
    if len(stationary) == 0:
        raise GibbsInitError("bad-theory-params", "empty stationary list")
    vals = np.array([float(v) for _, v in stationary])
    return [int(i) for i in np.flatnonzero(vals <= vals.min() + epsilon)]


# --------------------------------------------------------------------------
# Grids and stationary points


def _grid(domain, resolution: int):
    axes = [np.linspace(domain.lo[i], domain.hi[i], resolution) for i in range(domain.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return axes, np.stack([m.ravel() for m in mesh], axis=1)


def batch_hessians(obj: Objective, X, h: float = HESSIAN_STEP) -> np.ndarray:
    m, d = X.shape
    H = np.empty((m, d, d))
    eye = np.eye(d) * h
    for i, j in product(range(d), range(d)):
        if j < i:
            H[:, i, j] = H[:, j, i]
            continue
        ei, ej = eye[i], eye[j]
        H[:, i, j] = (obj.values(X + ei + ej) - obj.values(X + ei - ej)
                      - obj.values(X - ei + ej) + obj.values(X - ei - ej)) / (4 * h * h)
    return H


def find_stationary_points(obj: Objective, resolution: int = 2000,
                           edge: float = 1e-6) -> np.ndarray:
    """Interior stationary points for d <= 2.

    1-D: sign changes of the derivative on a grid, refined by Brent's method.
    2-D: grid-local minima of |grad|^2 refined by Newton steps.
    """
    dom = obj.domain
    if dom.kind != "box" or dom.dim > 2:
        raise GibbsInitError("bad-theory-params", "stationary search needs a box with d <= 2")
    if dom.dim == 1:
        t = np.linspace(dom.lo[0], dom.hi[0], resolution)
        g = obj.grads(t[:, None])[:, 0]
        roots = []
        for k in np.flatnonzero(np.sign(g[:-1]) * np.sign(g[1:]) <= 0):
            a, b = t[k], t[k + 1]
            if g[k] == 0:
                r = a
            elif g[k + 1] == 0:
                continue
            else:
                r = brentq(lambda s: obj.grad(np.array([s]))[0], a, b, xtol=1e-13)
            if min(r - dom.lo[0], dom.hi[0] - r) > edge and \
                    (not roots or abs(r - roots[-1]) > 1e-9):
                roots.append(r)
        return np.array(roots).reshape(-1, 1)

    res = min(resolution, 200)
    axes, G = _grid(dom, res)
    g2 = np.sum(obj.grads(G) ** 2, axis=1).reshape(res, res)
    found = []
    for i in range(1, res - 1):
        for j in range(1, res - 1):
            if g2[i, j] > g2[i - 1:i + 2, j - 1:j + 2].min():
                continue
            x = np.array([axes[0][i], axes[1][j]])
            for _ in range(50):
                H = batch_hessians(obj, x[None, :])[0]
                try:
                    dx = np.linalg.solve(H, obj.grad(x))
                except np.linalg.LinAlgError:
                    break
                x = x - dx
                if np.linalg.norm(dx) < 1e-12:
                    break
            if np.linalg.norm(obj.grad(x)) > 1e-8 or dom.boundary_distance(x) <= edge:
                continue
            if all(np.linalg.norm(x - f) > 1e-6 for f in found):
                found.append(x)
    return np.array(found).reshape(-1, 2)


@dataclass
class ApproxReport:
    sup_value_gap: float
    sup_grad_gap: float
    sup_hessian_gap: float
    max_stationary_displacement: Optional[float]
    stationary_mismatch: bool
    n_stationary: Optional[tuple]
    grid_spec: str

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def measure_delta_approx(F: Objective, Fn: Objective, grid_resolution: int = 200,
                         with_stationary: bool = False) -> ApproxReport:
    """Sup-norm gaps in value, gradient and Hessian (operator norm) on a grid."""
    dom = F.domain
    if dom.kind != "box":
        raise GibbsInitError("bad-theory-params", "grid measurement needs a box domain")
    if dom.dim > 3:
        raise GibbsInitError("bad-theory-params", "full grids only for d <= 3")
    if with_stationary and dom.dim > 2:
        raise GibbsInitError("bad-theory-params", "stationary pairing only for d <= 2")
    _, G = _grid(dom, grid_resolution)
    vgap = float(np.max(np.abs(F.values(G) - Fn.values(G))))
    ggap = float(np.max(np.linalg.norm(F.grads(G) - Fn.grads(G), axis=1)))
    dH = batch_hessians(F, G) - batch_hessians(Fn, G)
    hgap = float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (dH + dH.transpose(0, 2, 1))))))
    disp, mismatch, counts = None, False, None
    if with_stationary:
        a = find_stationary_points(F, max(grid_resolution, 2000))
        b = find_stationary_points(Fn, max(grid_resolution, 2000))
        counts = (len(a), len(b))
        if len(a) != len(b):
            mismatch = True
        elif len(a) == 0:
            disp = 0.0
        else:
            cost = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
            rows, cols = linear_sum_assignment(cost)
            disp = float(cost[rows, cols].max())
    spec = f"{grid_resolution}^{dom.dim} grid on [{dom.lo.tolist()}, {dom.hi.tolist()}]"
    return ApproxReport(vgap, ggap, hgap, disp, mismatch, counts, spec)


# --------------------------------------------------------------------------
# Gibbs mass outside a ball


@dataclass
class ConcentrationReport:
    beta: float
    mass_outside: float
    mass_inside: float
    center: list
    r: float
    grid_resolution: int

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def _log_trapz_1d(obj, beta, a, b, res, shift):
    if b <= a:
        return 0.0
    t = np.linspace(a, b, res)
    return float(_trapz(np.exp(-beta * obj.values(t[:, None]) - shift), t))


def concentration_mass(target: GibbsTarget, center, r: float,
                       grid_resolution: int = 10_000) -> ConcentrationReport:
    """pi_beta(B_r(center)^c) by trapezoidal quadrature (d <= 2).

    Weights are shifted by their maximum on the grid before exponentiating. In
    1-D the integration range is split at the ball boundary so the indicator
    does not cost accuracy; the normalizer is integrated separately.
    """
    obj, beta = target.objective, target.beta
    dom = obj.domain
    center = np.atleast_1d(np.asarray(center, dtype=float))
    if dom.kind != "box" or dom.dim > 2:
        raise GibbsInitError("bad-theory-params", "quadrature needs a box with d <= 2")
    corners = np.array(list(product(*zip(dom.lo, dom.hi))))
    if np.max(np.linalg.norm(corners - center, axis=1)) <= r:
        raise GibbsInitError("region-exceeds-domain", "ball covers the whole domain")
    if dom.dim == 1:
        lo, hi = float(dom.lo[0]), float(dom.hi[0])
        t = np.linspace(lo, hi, grid_resolution)
        shift = float(np.max(-beta * obj.values(t[:, None])))
        c = float(center[0])
        a, b = max(lo, c - r), min(hi, c + r)
        total = _log_trapz_1d(obj, beta, lo, hi, grid_resolution, shift)
        inside = _log_trapz_1d(obj, beta, a, b, grid_resolution, shift)
        outside = (_log_trapz_1d(obj, beta, lo, a, grid_resolution, shift)
                   + _log_trapz_1d(obj, beta, b, hi, grid_resolution, shift))
    else:
        axes, G = _grid(dom, grid_resolution)
        logw = -beta * obj.values(G)
        w = np.exp(logw - logw.max()).reshape(grid_resolution, grid_resolution)
        ins = (np.linalg.norm(G - center, axis=1) <= r).reshape(w.shape)

        def integ(z):
            return float(_trapz(_trapz(z, axes[1], axis=1), axes[0]))

        total, inside, outside = integ(w), integ(w * ins), integ(w * ~ins)
    return ConcentrationReport(float(beta), outside / total, inside / total,
                               center.tolist(), float(r), int(grid_resolution))


def gibbs_cdf_1d(obj: Objective, beta: float, resolution: int = 100_001):
    """(grid, CDF) of exp(-beta F) on a 1-D box, by cumulative trapezoid."""
    dom = obj.domain
    t = np.linspace(dom.lo[0], dom.hi[0], resolution)
    logw = -beta * obj.values(t[:, None])
    w = np.exp(logw - logw.max())
    c = np.concatenate([[0.0], np.cumsum(0.5 * (w[1:] + w[:-1]) * np.diff(t))])
    return t, c / c[-1]


# --------------------------------------------------------------------------
# Battery used by the ``theory-check`` command


def log_mass_slope(betas, masses) -> float:
    """Least-squares slope of log mass against beta over the last three points."""
    b = np.asarray(betas, dtype=float)[-3:]
    m = np.log(np.asarray(masses, dtype=float)[-3:])
    return float(np.polyfit(b, m, 1)[0])


def theory_battery(quick: bool = False, seed: int = 0) -> dict:
    """Small numerical checks tying the bounds to measurable quantities.

    Each entry carries a ``passed`` flag and the numbers behind it.
    """
    from . import problems as P
    from .samplers import rejection_sample_separable

    out = {}
    n = required_sample_size(0.1, 0.05, 5)
    out["sample_size"] = {"delta": 0.1, "rho": 0.05, "d": 5, "n": n,
                          "passed": n == math.ceil(5 * math.log(20) / 0.01)}

    dw = P.double_well_1d(1.0)
    r = dw.convexity_radius
    betas = [2.0, 5.0, 10.0, 20.0, 40.0]
    masses = [concentration_mass(GibbsTarget(dw, b), [dw.deep_min], r).mass_outside
              for b in betas]
    slope = log_mass_slope(betas, masses)
    out["concentration"] = {"betas": betas, "mass_outside": masses, "radius": r,
                            "terminal_slope": slope,
                            "passed": bool(np.all(np.diff(np.log(masses)) < 0)
                                           and -1.0 <= slope <= -0.5)}

    beta, L, batches = 10.0, 5, 400 if quick else 4000
    pi_out = concentration_mass(GibbsTarget(dw, beta), [dw.deep_min], r).mass_outside
    pts = rejection_sample_separable([dw.f], beta, dw.domain, L * batches, seed).points[:, 0]
    miss = np.all(np.abs(pts.reshape(batches, L) - dw.deep_min) > r, axis=1)
    bound = miss_probability_bound(pi_out, 0.0, L)
    se = math.sqrt(max(bound * (1 - bound), 1e-12) / batches)
    out["miss_bound"] = {"beta": beta, "L": L, "batches": batches,
                         "empirical": float(miss.mean()), "bound": bound,
                         "passed": bool(miss.mean() <= bound + 3 * se)}

    spec = P.GMMSpec(np.array([[-3.0], [3.0]]), np.array([0.6, 0.4]), 1.0, 6.0)
    F = P.gmm_population_objective(spec)
    ns = [10, 100, 1000] if quick else [10, 100, 1000, 10_000]
    gaps = []
    for k, m in enumerate(ns):
        data = P.gmm_sample(spec, m, np.random.SeedSequence([seed, k]))
        gaps.append(measure_delta_approx(F, P.gmm_empirical_objective(spec, data),
                                         grid_resolution=2001).sup_value_gap)
    rate = float(np.polyfit(np.log(ns), np.log(gaps), 1)[0])
    out["approximation"] = {"n": ns, "sup_value_gap": gaps, "log_log_slope": rate,
                            "passed": bool(abs(rate + 0.5) <= 0.25)}
    return out
