"""Projected gradient descent (the exploitation map) and stationary-point tools."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import GibbsInitError
from .objective import Objective

HESSIAN_STEP = 1e-4
BOUNDARY_TOL = 1e-6


@dataclass(frozen=True)
class GDConfig:
    step: float = 0.05
    iterations: int = 50
    record_trajectory: bool = False

    def __post_init__(self):
        if self.step < 0 or self.iterations < 1:
            raise GibbsInitError("bad-gd-config", "need step >= 0 and iterations >= 1")


@dataclass
class Trajectory:
    start: np.ndarray
    final: np.ndarray
    final_value: float
    diverged: bool = False
    values: Optional[list] = None

    def to_json(self) -> str:
        out = {"start": self.start.tolist(), "final": self.final.tolist(),
               "final_value": self.final_value, "diverged": self.diverged}
        if self.values is not None:
            out["values"] = list(self.values)
        return json.dumps(out)


def gd_run(obj: Objective, theta0, cfg: GDConfig) -> Trajectory:
    theta = np.array(theta0, dtype=float)
    start = theta.copy()
    dom = obj.domain
    values = [obj.value(theta)] if cfg.record_trajectory else None
    diverged = False
    for _ in range(cfg.iterations):
        g = obj.grad(theta)
        nxt = dom.project(theta - cfg.step * g)
        if not np.all(np.isfinite(nxt)):
            diverged = True
            break
        theta = nxt
        if values is not None:
            values.append(obj.value(theta))
    return Trajectory(start, theta, obj.value(theta), diverged, values)


def gd_run_batch(obj: Objective, starts, cfg: GDConfig):
    """Run GD from every row of ``starts``; returns (finals, final_values, diverged).

    Rows that hit a non-finite iterate are frozen at their last finite point.
    """
    X = np.array(starts, dtype=float, ndmin=2)
    dom = obj.domain
    diverged = np.zeros(X.shape[0], dtype=bool)
    for _ in range(cfg.iterations):
        live = ~diverged
        if not live.any():
            break
        nxt = dom.project(X[live] - cfg.step * obj.grads(X[live]))
        ok = np.all(np.isfinite(nxt), axis=1)
        idx = np.flatnonzero(live)
        X[idx[ok]] = nxt[ok]
        diverged[idx[~ok]] = True
    return X, obj.values(X), diverged


def fd_hessian(obj: Objective, theta, h: float = HESSIAN_STEP) -> np.ndarray:
    """Symmetrized four-point finite-difference Hessian from values only."""
    theta = np.asarray(theta, dtype=float)
    d = theta.size
    eye = np.eye(d) * h
    pts = []
    for i in range(d):
        for j in range(d):
            pts += [theta + eye[i] + eye[j], theta + eye[i] - eye[j],
                    theta - eye[i] + eye[j], theta - eye[i] - eye[j]]
    v = obj.values(np.array(pts)).reshape(d, d, 4)
    H = (v[..., 0] - v[..., 1] - v[..., 2] + v[..., 3]) / (4.0 * h * h)
    return 0.5 * (H + H.T)


def classify_stationary(obj: Objective, theta, grad_tol: float = 1e-6,
                        eig_tol: float = 0.0) -> str:
    theta = np.asarray(theta, dtype=float)
    if np.linalg.norm(obj.grad(theta)) > grad_tol:
        return "nonstationary"
    if obj.domain.boundary_distance(theta) <= BOUNDARY_TOL:
        return "boundary"
    lam = np.linalg.eigvalsh(fd_hessian(obj, theta))
    return "local_min" if lam.min() > eig_tol else "saddle_or_max"


def estimate_lipschitz(obj: Objective, rng: np.random.Generator, samples: int = 1000) -> float:
    """Largest FD-Hessian operator norm over uniform points, kept away from the boundary."""
    dom = obj.domain
    pts = dom.sample_uniform(rng, samples)
    pts = dom.center + (pts - dom.center) * (1.0 - 2e-3)
    return max(float(np.abs(np.linalg.eigvalsh(fd_hessian(obj, p))).max()) for p in pts)


def success_test(traj: Trajectory, theta_star, f_star: float, mode: str, tol: float) -> bool:
    if not tol > 0:
        raise GibbsInitError("bad-tolerance", "tol must be positive")
    if mode == "value_gap":
        return bool(traj.final_value <= f_star + tol)
    if mode == "point_distance":
        return bool(np.linalg.norm(traj.final - np.asarray(theta_star)) <= tol)
    raise GibbsInitError("bad-success-mode", mode)
