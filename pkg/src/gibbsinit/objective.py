"""Objectives, bounded domains, datasets and empirical losses."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .errors import GibbsInitError

UNCONSTRAINED_HALF_WIDTH = 1e6


@dataclass(frozen=True)
class Domain:
    """A ball ``|theta - center| <= radius`` or a box ``lo <= theta <= hi``."""

    kind: str
    center: np.ndarray
    radius: float = 0.0
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None

    @classmethod
    def ball(cls, center, radius: float = 1.0) -> "Domain":
        center = np.atleast_1d(np.asarray(center, dtype=float))
        if not radius > 0:
            raise GibbsInitError("bad-domain", "ball radius must be positive")
        return cls("ball", center, float(radius))

    @classmethod
    def unit_ball(cls, dim: int) -> "Domain":
        return cls.ball(np.zeros(dim), 1.0)

    @classmethod
    def box(cls, lo, hi, dim: Optional[int] = None) -> "Domain":
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if dim is not None:
            lo = np.broadcast_to(lo, (dim,)).copy()
            hi = np.broadcast_to(hi, (dim,)).copy()
        if lo.shape != hi.shape or not np.all(lo < hi):
            raise GibbsInitError("bad-domain", "box needs lo < hi coordinatewise")
        return cls("box", (lo + hi) / 2.0, 0.0, lo, hi)

    @classmethod
    def unconstrained(cls, dim: int) -> "Domain":
        return cls.box(-UNCONSTRAINED_HALF_WIDTH, UNCONSTRAINED_HALF_WIDTH, dim)

    @property
    def dim(self) -> int:
        return int(self.center.shape[0])

    def _check(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape[-1:] != (self.dim,):
            raise GibbsInitError("dim-mismatch", f"expected width {self.dim}, got {theta.shape}")
        return theta

    def contains(self, theta, tol: float = 1e-12) -> bool:
        theta = self._check(theta)
        if self.kind == "box":
            return bool(np.all(theta >= self.lo - tol) and np.all(theta <= self.hi + tol))
        return bool(np.linalg.norm(theta - self.center, axis=-1).max() <= self.radius * (1 + tol))

    def project(self, theta) -> np.ndarray:
        theta = self._check(theta)
        if self.kind == "box":
            return np.clip(theta, self.lo, self.hi)
        off = theta - self.center
        nrm = np.linalg.norm(off, axis=-1, keepdims=True)
        scale = np.where(nrm > self.radius, self.radius / np.maximum(nrm, 1e-300), 1.0)
        return self.center + off * scale

    def boundary_distance(self, theta) -> float:
        """Signed distance to the boundary; negative outside."""
        theta = self._check(theta)
        if self.kind == "box":
            return float(np.min(np.minimum(theta - self.lo, self.hi - theta)))
        return float(self.radius - np.linalg.norm(theta - self.center))

    def sample_uniform(self, rng: np.random.Generator, m: int) -> np.ndarray:
        if self.kind == "box":
            return self.lo + (self.hi - self.lo) * rng.random((m, self.dim))
        z = rng.standard_normal((m, self.dim))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        u = rng.random(m) ** (1.0 / self.dim)
        return self.center + self.radius * z * u[:, None]

    def volume(self) -> float:
        if self.kind == "box":
            return float(np.prod(self.hi - self.lo))
        from math import gamma, pi

        d = self.dim
        return pi ** (d / 2) / gamma(d / 2 + 1) * self.radius ** d

    def kernel_arrays(self):
        """Flat representation consumed by the compiled kernels."""
        if self.kind == "box":
            return kernels.BOX, self.lo, self.hi, self.center, 0.0
        z = np.zeros(self.dim)
        return kernels.BALL, z, z, self.center, self.radius


def project(domain: Domain, theta) -> np.ndarray:
    return domain.project(theta)


@dataclass(frozen=True)
class KernelForm:
    """Marks an objective of the form ``sum_j weights_j exp(-|theta - c_j|^2 / (2 sigma^2))``.

    Samplers use it to dispatch to the fused chain kernel.
    """

    centers: np.ndarray
    weights: np.ndarray
    sigma: float


class Objective:
    """Scalar field on a domain with value and gradient oracles.

    ``grad_fn`` may be omitted, in which case central differences with step
    ``1e-6 * (1 + |theta_i|)`` are used. ``batch_value_fn``/``batch_grad_fn``
    map an (m, d) array to (m,) / (m, d) and are used by the batched paths.
    """

    def __init__(self, domain: Domain, value_fn: Callable, grad_fn: Optional[Callable] = None,
                 *, batch_value_fn: Optional[Callable] = None,
                 batch_grad_fn: Optional[Callable] = None, deterministic: bool = True,
                 name: str = "", kernel_form: Optional[KernelForm] = None,
                 coordinate_functions: Optional[Sequence[Callable]] = None,
                 coordinate_scale: float = 1.0):
        self.domain = domain
        self._value = value_fn
        self._grad = grad_fn
        self._batch_value = batch_value_fn
        self._batch_grad = batch_grad_fn
        self.deterministic = deterministic
        self.name = name
        self.kernel_form = kernel_form
        # separable objectives: value = coordinate_scale * sum_i f_i(theta_i)
        self.coordinate_functions = (list(coordinate_functions)
                                     if coordinate_functions is not None else None)
        self.coordinate_scale = coordinate_scale

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def separable(self) -> bool:
        return self.coordinate_functions is not None

    @property
    def has_analytic_grad(self) -> bool:
        return self._grad is not None or self._batch_grad is not None

    def value(self, theta) -> float:
        theta = self.domain._check(theta)
        return float(self._value(theta))

    def __call__(self, theta) -> float:
        return self.value(theta)

    def grad(self, theta) -> np.ndarray:
        theta = self.domain._check(theta)
        if self._grad is not None:
            return np.asarray(self._grad(theta), dtype=float)
        if self._batch_grad is not None:
            return np.asarray(self._batch_grad(theta[None, :]), dtype=float)[0]
        return central_difference(self._value, theta)

    def values(self, X) -> np.ndarray:
        X = np.atleast_2d(self.domain._check(X))
        if self._batch_value is not None:
            return np.asarray(self._batch_value(X), dtype=float)
        return np.array([float(self._value(x)) for x in X])

    def grads(self, X) -> np.ndarray:
        X = np.atleast_2d(self.domain._check(X))
        if self._batch_grad is not None:
            return np.asarray(self._batch_grad(X), dtype=float)
        return np.array([self.grad(x) for x in X]).reshape(X.shape)


def central_difference(f: Callable, theta: np.ndarray, h=None) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    steps = 1e-6 * (1.0 + np.abs(theta)) if h is None else np.full(theta.shape, float(h))
    g = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = steps[i]
        g[i] = (f(theta + e) - f(theta - e)) / (2.0 * steps[i])
    return g


def fd_gradient_check(obj: Objective, theta, h: float) -> float:
    """Max-abs discrepancy between the gradient oracle and central differences.

    ``theta`` must sit farther than ``h`` from the boundary so that both stencil
    points stay inside the domain.
    """
    if not h > 0:
        raise GibbsInitError("bad-step", "h must be positive")
    theta = obj.domain._check(theta)
    if obj.domain.boundary_distance(theta) <= h:
        raise GibbsInitError("boundary-point", "theta is not strictly interior")
    fd = central_difference(obj._value, theta, h)
    return float(np.max(np.abs(fd - obj.grad(theta))))


# --------------------------------------------------------------------------
# Datasets


@dataclass(frozen=True)
class Dataset:
    points: np.ndarray = field()

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, copy=True)
        if pts.ndim == 1:
            pts = pts[:, None]
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n_total(self) -> int:
        return int(self.points.shape[0])

    @property
    def width(self) -> int:
        return int(self.points.shape[1])

    def __len__(self) -> int:
        return self.n_total

    def __iter__(self):
        return iter(self.points)

    @classmethod
    def concat(cls, *parts: "Dataset") -> "Dataset":
        return cls(np.vstack([p.points for p in parts]))

    # CSV: one row per point; header row optional.
    @classmethod
    def from_csv(cls, path, header: bool = False) -> "Dataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if header:
            rows = rows[1:]
        rows = [r for r in rows if r]
        return cls(np.array([[float(v) for v in r] for r in rows], dtype=float))

    def to_csv(self, path, header: bool = False) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if header:
                w.writerow([f"x{i}" for i in range(self.width)])
            for row in self.points:
                w.writerow([repr(float(v)) for v in row])

    # Binary: b"SSDS", u32 n, u32 dim, n*dim float64, all little-endian.
    @classmethod
    def from_ssds(cls, path) -> "Dataset":
        raw = Path(path).read_bytes()
        if raw[:4] != b"SSDS":
            raise GibbsInitError("bad-format", "missing SSDS magic")
        if len(raw) < 12:
            raise GibbsInitError("bad-format", "truncated SSDS header")
        n, dim = struct.unpack("<II", raw[4:12])
        if len(raw) != 12 + 8 * n * dim:
            raise GibbsInitError("bad-format", "SSDS payload size does not match header")
        body = np.frombuffer(raw, dtype="<f8", count=n * dim, offset=12)
        return cls(body.reshape(n, dim))

    def to_ssds(self, path) -> None:
        header = b"SSDS" + struct.pack("<II", self.n_total, self.width)
        Path(path).write_bytes(header + self.points.astype("<f8").tobytes())


def subsample(data: Dataset, n: int, seed: int) -> Dataset:
    """Draw ``n`` points uniformly without replacement (the outsourced subset)."""
    if not 1 <= n <= data.n_total:
        raise GibbsInitError("bad-subsample-size", f"n={n} not in [1, {data.n_total}]")
    rng = np.random.default_rng(seed)
    idx = rng.choice(data.n_total, size=n, replace=False)
    return Dataset(data.points[idx])


def empirical_loss(data: Dataset, pointwise: Callable, pointwise_grad: Optional[Callable],
                   domain: Domain, name: str = "empirical") -> Objective:
    """Mean of ``pointwise(theta, x)`` over the points of ``data``."""
    if data.n_total == 0:
        raise GibbsInitError("empty-dataset")
    pts = data.points

    def value(theta):
        return np.mean([pointwise(theta, x) for x in pts])

    grad = None
    if pointwise_grad is not None:
        def grad(theta):
            return np.mean([np.asarray(pointwise_grad(theta, x), dtype=float) for x in pts],
                           axis=0)

    return Objective(domain, value, grad, deterministic=True, name=name)
