"""Outer iterations that drive the plate's basic frequency down or up.

Minimization alternates an eigensolve with the bathtub step that maximizes
``int rho u^2``, which can only lower the Rayleigh quotient. Maximization
takes the opposite bathtub step, keeps it when the eigenvalue rises, and
otherwise falls back to exchanging small pieces between materials, shrinking
the exchanged area until the eigenvalue increases.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import fem
from .eig import DEFAULT_MAX_ITER, DEFAULT_TOL, EigenPair, principal_eigenpair
from .mesh import TriMesh
from .rearrange import (
    DensityField, NoSwapAvailable, RearrangementClass, bathtub_maximize, bathtub_minimize,
    l2_distance, partial_swap, random_layout, stripes,
)

log = logging.getLogger(__name__)

MINIMIZE = "minimize"
MAXIMIZE = "maximize"

BATHTUB, SWAP, STOP = "bathtub", "swap", "stop"

TOL_REACHED = "tol"
FIXED_POINT = "fixed-point"
MAX_ITERS = "max-iter"
SWAP_EXHAUSTED = "swap-exhausted"


@dataclass(frozen=True)
class OptConfig:
    direction: str = MINIMIZE
    bc_kind: str = fem.HINGED
    tol_rho: float | None = None  # default: one elementary swap, see default_tol_rho
    max_outer_iters: int = 500
    swap_fraction: float = 0.05
    swap_shrink: float = 0.5
    swap_min_area: float | None = None  # default: the smallest element area
    eig_tol: float = DEFAULT_TOL
    eig_max_iter: int = DEFAULT_MAX_ITER
    init: str = "stripes"
    seed: int = 0
    bathtub_method: str = "sort"

    def __post_init__(self):
        if self.direction not in (MINIMIZE, MAXIMIZE):
            raise ValueError(f"direction must be {MINIMIZE!r} or {MAXIMIZE!r}")
        if self.bc_kind not in fem.BC_KINDS:
            raise ValueError(f"bc_kind must be one of {fem.BC_KINDS}")
        if self.tol_rho is not None and not self.tol_rho > 0:
            raise ValueError("tol_rho must be positive")
        if not 0 < self.swap_shrink < 1:
            raise ValueError("swap_shrink must lie in (0, 1)")
        if not 0 < self.swap_fraction <= 1:
            raise ValueError("swap_fraction must lie in (0, 1]")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be at least 1")
        if self.init not in ("stripes", "random"):
            raise ValueError("init must be 'stripes' or 'random'")


def default_tol_rho(rclass: RearrangementClass, areas) -> float:
    c = rclass.densities
    return (c[-1] - c[0]) * math.sqrt(2 * float(np.max(areas)))


@dataclass(frozen=True)
class TraceRecord:
    iter: int
    eigenvalue: float
    delta_rho_l2: float
    step_kind: str


@dataclass(eq=False)
class OptRun:
    config: OptConfig
    records: list = field(default_factory=list)
    density: DensityField | None = None
    eigenpair: EigenPair | None = None
    termination: str = ""
    eig_iterations: int = 0
    eig_solves: int = 0
    wall_time: float = 0.0
    error: str | None = None

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.array([r.eigenvalue for r in self.records])

    @property
    def eigenvalue(self) -> float:
        return self.eigenpair.value


class OptimizationError(RuntimeError):
    """A failure inside the loop; ``run`` holds the partial trace."""

    def __init__(self, message, run):
        super().__init__(message)
        self.run = run


class PlateProblem:
    """Mesh, boundary condition and class, with the stiffness factorized once."""

    def __init__(self, mesh: TriMesh, rclass: RearrangementClass, bc_kind=fem.HINGED,
                 operator: fem.DiscreteOperator | None = None):
        self.mesh = mesh
        self.operator = operator if operator is not None else fem.assemble(mesh, bc_kind)
        if self.operator.bc_kind != bc_kind:
            raise ValueError("operator boundary condition does not match bc_kind")
        self.areas = self.operator.areas
        rclass.check_domain(self.areas)
        self.rclass = rclass
        self.bc_kind = bc_kind

    def solve(self, rho, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, u0=None) -> EigenPair:
        M = fem.assemble_mass(self.mesh, rho, self.operator)
        return principal_eigenpair(self.operator, M, tol=tol, max_iter=max_iter, u0=u0)

    def f(self, pair: EigenPair) -> np.ndarray:
        return fem.element_mean_square(self.operator, pair.u)

    def initial_density(self, init="stripes", seed=0) -> DensityField:
        if init == "stripes":
            return stripes(self.mesh.centroids, self.rclass, self.areas)
        return random_layout(self.rclass, self.areas, seed)

    def homogeneous_bounds(self, tol=DEFAULT_TOL):
        """Eigenvalues for the all-heaviest and all-lightest plates."""
        c = self.rclass.densities
        n = self.mesh.n_triangles
        lo = self.solve(np.full(n, c[-1]), tol=tol).value
        hi = self.solve(np.full(n, c[0]), tol=tol).value
        return lo, hi


class _Loop:
    def __init__(self, problem: PlateProblem, rho0, cfg: OptConfig):
        self.p = problem
        self.cfg = cfg
        self.rho = rho0 if rho0 is not None else problem.initial_density(cfg.init, cfg.seed)
        if not isinstance(self.rho, DensityField):
            self.rho = DensityField(self.rho, problem.rclass, problem.areas)
        self.tol_rho = cfg.tol_rho if cfg.tol_rho is not None else default_tol_rho(
            problem.rclass, problem.areas)
        self.run = OptRun(config=cfg)
        self.t0 = time.perf_counter()

    def solve(self, rho, u0):
        try:
            pair = self.p.solve(rho, tol=self.cfg.eig_tol, max_iter=self.cfg.eig_max_iter, u0=u0)
        except Exception as exc:
            self.run.error = str(exc)
            self.finish(None, "error")
            raise OptimizationError(f"eigensolve failed: {exc}", self.run) from exc
        self.run.eig_solves += 1
        self.run.eig_iterations += pair.iterations
        return pair

    def record(self, it, pair, delta, kind):
        self.run.records.append(TraceRecord(it, pair.value, delta, kind))
        log.debug("iter %d lambda=%.10g delta=%.4g %s", it, pair.value, delta, kind)

    def finish(self, pair, reason):
        self.run.density = self.rho
        self.run.eigenpair = pair
        self.run.termination = reason
        self.run.wall_time = time.perf_counter() - self.t0
        return self.run


def minimize_eigenvalue(mesh, rclass, rho0=None, cfg: OptConfig | None = None, *,
                        problem: PlateProblem | None = None) -> OptRun:
    """Lower the principal eigenvalue by repeated bathtub steps on ``u^2``."""
    cfg = cfg or OptConfig(direction=MINIMIZE)
    if cfg.direction != MINIMIZE:
        cfg = replace(cfg, direction=MINIMIZE)
    problem = problem or PlateProblem(mesh, rclass, cfg.bc_kind)
    loop = _Loop(problem, rho0, cfg)
    pair = loop.solve(loop.rho, None)
    for it in range(cfg.max_outer_iters):
        f = problem.f(pair)
        new = bathtub_maximize(f, problem.rclass, problem.areas, method=cfg.bathtub_method)
        # a step only helps if it raises the denominator of the Rayleigh quotient
        if new == loop.rho or new.objective(f) <= loop.rho.objective(f):
            loop.record(it, pair, 0.0, STOP)
            return loop.finish(pair, FIXED_POINT)
        delta = l2_distance(new, loop.rho, problem.areas)
        loop.record(it, pair, delta, BATHTUB)
        loop.rho = new
        pair = loop.solve(new, pair.u)
        if delta < loop.tol_rho:
            loop.record(it + 1, pair, 0.0, STOP)
            return loop.finish(pair, TOL_REACHED)
    loop.record(cfg.max_outer_iters, pair, 0.0, STOP)
    return loop.finish(pair, MAX_ITERS)


def maximize_eigenvalue(mesh, rclass, rho0=None, cfg: OptConfig | None = None, *,
                        problem: PlateProblem | None = None) -> OptRun:
    """Raise the principal eigenvalue with accept/reject bathtub steps and partial swaps.

    The exchanged area starts at ``swap_fraction`` of the domain and shrinks
    by ``swap_shrink`` after each rejected exchange; after an accepted
    exchange the next attempt starts one level larger again.
    """
    cfg = cfg or OptConfig(direction=MAXIMIZE)
    if cfg.direction != MAXIMIZE:
        cfg = replace(cfg, direction=MAXIMIZE)
    problem = problem or PlateProblem(mesh, rclass, cfg.bc_kind)
    loop = _Loop(problem, rho0, cfg)
    areas = problem.areas
    full_swap = cfg.swap_fraction * float(np.sum(areas))
    min_swap = cfg.swap_min_area if cfg.swap_min_area is not None else float(np.min(areas))
    swap = full_swap
    pair = loop.solve(loop.rho, None)
    for it in range(cfg.max_outer_iters):
        f = problem.f(pair)
        candidate = bathtub_minimize(f, problem.rclass, areas, method=cfg.bathtub_method)
        if candidate == loop.rho:
            loop.record(it, pair, 0.0, STOP)
            return loop.finish(pair, FIXED_POINT)
        kind = BATHTUB
        new_pair = loop.solve(candidate, pair.u)
        if not new_pair.value > pair.value:
            kind = SWAP
            while True:
                try:
                    candidate = partial_swap(loop.rho, f, areas, swap)
                except NoSwapAvailable:
                    loop.record(it, pair, 0.0, STOP)
                    return loop.finish(pair, SWAP_EXHAUSTED)
                new_pair = loop.solve(candidate, pair.u)
                if new_pair.value > pair.value:
                    swap = min(full_swap, swap / cfg.swap_shrink)
                    break
                if swap <= min_swap:
                    loop.record(it, pair, 0.0, STOP)
                    return loop.finish(pair, SWAP_EXHAUSTED)
                swap = max(min_swap, swap * cfg.swap_shrink)
        delta = l2_distance(candidate, loop.rho, areas)
        loop.record(it, pair, delta, kind)
        loop.rho, pair = candidate, new_pair
        if delta < loop.tol_rho:
            loop.record(it + 1, pair, 0.0, STOP)
            return loop.finish(pair, TOL_REACHED)
    loop.record(cfg.max_outer_iters, pair, 0.0, STOP)
    return loop.finish(pair, MAX_ITERS)


def optimize(mesh, rclass, rho0=None, cfg: OptConfig | None = None, *, problem=None) -> OptRun:
    cfg = cfg or OptConfig()
    fn = minimize_eigenvalue if cfg.direction == MINIMIZE else maximize_eigenvalue
    return fn(mesh, rclass, rho0, cfg, problem=problem)


def multistart(mesh, rclass, cfg: OptConfig, restarts: int, *, problem=None) -> tuple:
    """Runs from random layouts seeded ``cfg.seed, cfg.seed + 1, ...``; returns (best, runs)."""
    problem = problem or PlateProblem(mesh, rclass, cfg.bc_kind)
    runs = [optimize(mesh, rclass, None, replace(cfg, init="random", seed=cfg.seed + k),
                     problem=problem) for k in range(restarts)]
    pick = min if cfg.direction == MINIMIZE else max
    best = pick(runs, key=lambda r: r.eigenvalue)
    return best, runs


def run_metadata(run: OptRun) -> dict:
    cfg = asdict(run.config)
    return {
        "termination": run.termination,
        "iterations": len(run.records),
        "final_eigenvalue": run.eigenpair.value if run.eigenpair else None,
        "final_residual": run.eigenpair.residual if run.eigenpair else None,
        "near_degenerate": bool(run.eigenpair.near_degenerate) if run.eigenpair else None,
        "achieved_areas": [float(a) for a in run.density.achieved_areas],
        "target_areas": list(run.density.rclass.target_areas),
        "densities": list(run.density.rclass.densities),
        "eig_solves": run.eig_solves,
        "eig_iterations": run.eig_iterations,
        "wall_time": run.wall_time,
        "config": cfg,
        "error": run.error,
    }
