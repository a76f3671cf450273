"""Initial-point strategies: uniform random start, SIPS, and the two OIPS selections."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from . import samplers
from .errors import GibbsInitError
from .objective import Dataset, Domain, Objective
from .optimize import GDConfig, gd_run_batch
from .samplers import GibbsTarget, SampleBatch

STRATEGIES = ("random", "sips", "oips_annealing", "oips_sao")
SAMPLERS = ("ula", "rwm", "rejection", "snis", "uniform")

LossSpec = Union[Objective, Callable[[Optional[Dataset]], Objective]]


@dataclass(frozen=True)
class SamplerSpec:
    method: str = "ula"
    h: Optional[float] = None            # ULA step; None -> 1e-2 / beta clamped
    scale: float = 0.5                   # RWM proposal std
    burnin: int = samplers.DEFAULT_BURNIN
    thinning: int = samplers.DEFAULT_THINNING
    proposal_count: int = 100_000        # SNIS
    init: str = "uniform"                # chain start: "uniform" or "best_data"
    chains: int = 1                      # independent chains sharing the L draws

    def __post_init__(self):
        if self.method not in SAMPLERS:
            raise GibbsInitError("bad-sampler", self.method)
        if self.init not in ("uniform", "best_data"):
            raise GibbsInitError("bad-sampler", f"unknown chain init {self.init!r}")


@dataclass(frozen=True)
class InitPlan:
    strategy: str
    beta: float = 1.0
    L: int = 1
    n_outsourced: Optional[int] = None
    sampler: SamplerSpec = field(default_factory=SamplerSpec)
    inner: Optional[GDConfig] = None
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise GibbsInitError("bad-strategy", self.strategy)
        if self.beta < 0 or self.L < 1:
            raise GibbsInitError("bad-plan", "need beta >= 0 and L >= 1")
        if self.strategy == "oips_sao" and self.inner is None:
            raise GibbsInitError("bad-plan", "oips_sao needs an inner optimizer config")


@dataclass
class CandidateSet:
    points: np.ndarray
    scores: Optional[np.ndarray] = None
    selected_index: Optional[int] = None
    batch: Optional[SampleBatch] = None
    warnings: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        extra = {}
        if self.scores is not None:
            extra["score"] = list(self.scores)
        extra["selected"] = [i == self.selected_index for i in range(len(self.points))]
        samplers.write_points_csv(path, self.points, extra)


def random_start(domain: Domain, m: int, seed: int) -> CandidateSet:
    if m < 1:
        raise GibbsInitError("bad-count", "m must be >= 1")
    rng = np.random.default_rng(seed)
    return CandidateSet(domain.sample_uniform(rng, m))


def _build_loss(outsourced: Optional[Dataset], loss_spec: LossSpec) -> Objective:
    return loss_spec if isinstance(loss_spec, Objective) else loss_spec(outsourced)


def _chain_init(obj: Objective, outsourced: Optional[Dataset], plan: InitPlan):
    if plan.sampler.init != "best_data" or outsourced is None:
        return None
    pts = obj.domain.project(outsourced.points[:, :obj.dim])
    return pts[int(np.argmin(obj.values(pts)))]


def draw_samples(obj: Objective, plan: InitPlan, outsourced: Optional[Dataset] = None,
                 seed: Optional[int] = None) -> SampleBatch:
    """Draw L points from exp(-beta * obj) with the plan's sampler."""
    spec = plan.sampler
    seed = plan.seed if seed is None else seed
    target = GibbsTarget(obj, plan.beta)
    if spec.method in ("ula", "rwm"):
        x0 = _chain_init(obj, outsourced, plan)
        return samplers.run_chains(spec.method, target, plan.L, min(spec.chains, plan.L),
                                   spec.burnin, spec.thinning,
                                   inits=None if x0 is None else [x0] * spec.chains,
                                   params={"h": spec.h, "scale": spec.scale}, seed=seed)
    if spec.method == "rejection":
        if not obj.separable:
            raise GibbsInitError("bad-sampler", "rejection sampling needs a separable objective")
        return samplers.rejection_sample_separable(obj.coordinate_functions, plan.beta,
                                                   obj.domain, plan.L, seed,
                                                   obj.coordinate_scale)
    if spec.method == "snis":
        return samplers.snis_resample(target, max(spec.proposal_count, plan.L), plan.L, seed)
    return samplers.uniform_batch(obj.domain, plan.L, seed)


def sips(outsourced: Optional[Dataset], plan: InitPlan, loss_spec: LossSpec) -> CandidateSet:
    """All L Gibbs samples become starting points."""
    obj = _build_loss(outsourced, loss_spec)
    batch = draw_samples(obj, plan, outsourced)
    return CandidateSet(batch.points, batch=batch)


def select_annealing(obj: Objective, batch: SampleBatch) -> CandidateSet:
    scores = obj.values(batch.points)
    i = int(np.argmin(scores))  # first occurrence wins ties
    cs = CandidateSet(batch.points[i:i + 1], scores, i, batch)
    _assert_selection(cs, scores)
    return cs


def select_sao(obj: Objective, batch: SampleBatch, inner: GDConfig) -> CandidateSet:
    refined, scores, diverged = gd_run_batch(obj, batch.points, inner)
    scores = np.where(diverged | ~np.isfinite(scores), np.inf, scores)
    notes = [f"inner optimizer diverged from sample {i}" for i in np.flatnonzero(diverged)]
    for msg in notes:
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    if not np.any(np.isfinite(scores)):
        raise GibbsInitError("all-candidates-diverged")
    i = int(np.argmin(scores))
    cs = CandidateSet(refined[i:i + 1], scores, i, batch, notes)
    _assert_selection(cs, scores)
    return cs


def _assert_selection(cs: CandidateSet, scores) -> None:
    finite = scores[np.isfinite(scores)]
    assert scores[cs.selected_index] <= finite.min()


def oips_annealing(outsourced: Optional[Dataset], plan: InitPlan,
                   loss_spec: LossSpec) -> CandidateSet:
    """Keep the sample with the lowest empirical loss."""
    obj = _build_loss(outsourced, loss_spec)
    return select_annealing(obj, draw_samples(obj, plan, outsourced))


def oips_sao(outsourced: Optional[Dataset], plan: InitPlan, loss_spec: LossSpec) -> CandidateSet:
    """Refine every sample with the inner optimizer on the empirical loss, keep the best."""
    if plan.inner is None:
        raise GibbsInitError("bad-plan", "oips_sao needs an inner optimizer config")
    obj = _build_loss(outsourced, loss_spec)
    return select_sao(obj, draw_samples(obj, plan, outsourced), plan.inner)


def run_strategy(outsourced: Optional[Dataset], plan: InitPlan, loss_spec: LossSpec,
                 domain: Optional[Domain] = None, m: int = 1) -> CandidateSet:
    if plan.strategy == "random":
        dom = domain if domain is not None else _build_loss(outsourced, loss_spec).domain
        return random_start(dom, m, plan.seed)
    return {"sips": sips, "oips_annealing": oips_annealing,
            "oips_sao": oips_sao}[plan.strategy](outsourced, plan, loss_spec)
