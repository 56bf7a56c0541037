"""Equal-loss beamsplitter angles for the Vaidman-style protocol.

Inner interferometers are kept dark when Bob is open by tying each recombiner
to its splitter (``b_k = pi/2 - a_k``), so ``P(D1 | open)`` vanishes by
construction. The remaining angles are searched with Nelder-Mead on
``residual**2`` (plus ``crosstalk**2`` when zero crosstalk is requested),
restarted from every seed; the best result over seeds wins, ties broken by
seed order.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from .counterfactuality import loss_statistics
from .optics import run_fock
from .protocols import BobAction, build_vaidman, vaidman_slots

CONVERGED = 1e-9
# objective value well inside the convergence box (residual and crosstalk < 1e-12)
STOP_VALUE = 1e-25
UPPER = math.pi / 2


class DomainError(ValueError):
    pass


class Objective(str, Enum):
    EQUAL_LOSS = "equal-loss"
    EQUAL_LOSS_ZERO_CROSSTALK = "equal-loss-zero-crosstalk"


@dataclass(frozen=True)
class TuneProblem:
    inner_count: int = 2
    free_params: tuple[str, ...] | None = None
    fixed_params: Mapping[str, float] = field(default_factory=dict)
    objective: Objective = Objective.EQUAL_LOSS_ZERO_CROSSTALK
    dark_inner: bool = True
    min_success: float = 0.02

    def __post_init__(self):
        if self.inner_count < 2:
            raise DomainError("inner_count must be at least 2")
        slots = set(vaidman_slots(self.inner_count))
        unknown = (set(self.free) | set(self.fixed_params)) - slots
        if unknown:
            raise DomainError(f"unknown slots {sorted(unknown)}")
        if set(self.free) & set(self.fixed_params):
            raise DomainError("free and fixed slots overlap")
        covered = set(self.free) | set(self.fixed_params) | set(self.tied)
        if covered != slots:
            raise DomainError(f"slots not covered: {sorted(slots - covered)}")
        for name, val in self.fixed_params.items():
            _check_bounds(name, val)

    @property
    def tied(self) -> tuple[str, ...]:
        if not self.dark_inner:
            return ()
        return tuple(f"inner{k}.b" for k in range(1, self.inner_count + 1))

    @property
    def free(self) -> tuple[str, ...]:
        if self.free_params is not None:
            return tuple(self.free_params)
        return tuple(s for s in vaidman_slots(self.inner_count) if s not in self.fixed_params and s not in self.tied)

    def assemble(self, values: Sequence[float]) -> dict[str, float]:
        """Full slot assignment from the free values."""
        if len(values) != len(self.free):
            raise DomainError(f"expected {len(self.free)} free values, got {len(values)}")
        params = dict(self.fixed_params)
        for name, v in zip(self.free, values):
            _check_bounds(name, v)
            params[name] = float(v)
        for k in range(1, self.inner_count + 1) if self.dark_inner else ():
            params[f"inner{k}.b"] = UPPER - params[f"inner{k}.a"]
        return params

    def angles(self, params: Mapping[str, float]) -> list[float]:
        return [params[s] for s in vaidman_slots(self.inner_count)]


def _check_bounds(name: str, value: float) -> None:
    if not (0.0 <= value <= UPPER) or math.isnan(value):
        raise DomainError(f"{name} = {value!r} outside [0, pi/2]")


@dataclass(frozen=True)
class Evaluation:
    p_loss_block: float
    p_loss_open: float
    crosstalk: float
    p_d1_open: float
    p_d0_block: float
    p_success_open: float
    p_success_block: float

    @property
    def success(self) -> float:
        return min(self.p_success_open, self.p_success_block)

    @property
    def residual(self) -> float:
        return abs(self.p_loss_block - self.p_loss_open)


def evaluate(problem: TuneProblem, params: Mapping[str, float] | Sequence[float]) -> Evaluation:
    """Build both protocol circuits at ``params`` and read their loss statistics.

    ``params`` is either a full slot mapping or the free values in slot order.
    """
    if not isinstance(params, Mapping):
        params = problem.assemble(params)
    for name, v in params.items():
        _check_bounds(name, v)
    angles = problem.angles(params)
    blocked, mapping = build_vaidman(problem.inner_count, angles, BobAction.BLOCK)
    opened, _ = build_vaidman(problem.inner_count, angles, BobAction.OPEN)
    stats = loss_statistics((blocked, opened), mapping)
    dist_open, dist_block = run_fock(opened), run_fock(blocked)
    d1_open, d0_block = dist_open.get("D1"), dist_block.get("D0")
    return Evaluation(
        stats.p_loss_block,
        stats.p_loss_open,
        max(d1_open, d0_block),
        d1_open,
        d0_block,
        dist_open.get("D0"),
        dist_block.get("D1"),
    )


@dataclass(frozen=True)
class TuneResult:
    params: dict[str, float]
    residual: float
    crosstalk: float
    success: float
    iterations: int
    converged: bool
    seed_index: int
    history: tuple[float, ...] = ()


def default_seeds(problem: TuneProblem, per_dim: int = 3) -> list[tuple[float, ...]]:
    """Interior grid over (0, pi/2) per free slot, capped at 625 points."""
    per_dim = max(1, min(per_dim, 5))
    while per_dim ** len(problem.free) > 625:
        per_dim -= 1
    axis = [UPPER * (i + 1) / (per_dim + 1) for i in range(per_dim)]
    return list(itertools.product(axis, repeat=len(problem.free)))


def _loss(problem: TuneProblem, x) -> float:
    ev = evaluate(problem, list(x))
    val = ev.residual ** 2
    if problem.objective is Objective.EQUAL_LOSS_ZERO_CROSSTALK:
        val += ev.crosstalk ** 2
    # losing every photon equalizes losses trivially; keep both bits receivable
    val += max(0.0, problem.min_success - ev.success) ** 2
    return val


def _accept(problem: TuneProblem, ev: Evaluation) -> bool:
    if ev.residual >= CONVERGED or ev.success < problem.min_success:
        return False
    if problem.objective is Objective.EQUAL_LOSS_ZERO_CROSSTALK and ev.crosstalk >= CONVERGED:
        return False
    return True


def _solve_one(args) -> tuple[list[float], int, tuple[float, ...]]:
    problem, seed, restarts = args
    bounds = [(0.0, UPPER)] * len(seed)
    x = np.asarray(seed, dtype=float)
    nfev = 0
    trail = []
    def stop_when_done(intermediate_result):
        if intermediate_result.fun < STOP_VALUE:
            raise StopIteration

    for _ in range(restarts):
        res = minimize(
            lambda v: _loss(problem, v),
            x,
            method="Nelder-Mead",
            bounds=bounds,
            callback=stop_when_done,
            options={"xatol": 1e-14, "fatol": 1e-30, "maxiter": 4000, "maxfev": 8000, "adaptive": True},
        )
        nfev += int(res.nfev)
        x = res.x
        trail.append(float(res.fun))
        if _accept(problem, evaluate(problem, list(x))):
            break
    return [float(v) for v in x], nfev, tuple(trail)


def solve_equal_loss(
    problem: TuneProblem,
    seeds: Sequence[Sequence[float]] | None = None,
    restarts: int = 3,
    jobs: int = 1,
) -> TuneResult:
    """Multi-seed simplex search; returns the best seed's result, converged or not."""
    if seeds is None:
        seeds = default_seeds(problem)
    seeds = [tuple(float(v) for v in s) for s in seeds]
    if not seeds:
        raise DomainError("at least one seed is required")
    for s in seeds:
        if len(s) != len(problem.free):
            raise DomainError(f"seed {s} has {len(s)} values, problem has {len(problem.free)} free slots")
        for name, v in zip(problem.free, s):
            _check_bounds(name, v)

    work = [(problem, s, restarts) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_solve_one, work))
    else:
        outcomes = [_solve_one(w) for w in work]

    best = None
    best_key = None
    iterations = 0
    trail = []
    for i, (x, nfev, _) in enumerate(outcomes):
        iterations += nfev
        ev = evaluate(problem, x)
        key = (not _accept(problem, ev), _score(problem, ev))
        if best_key is None or key < best_key:
            best, best_key = (i, x, ev), key
        trail.append(best_key[1])
    i, x, ev = best
    params = problem.assemble(x)
    return TuneResult(
        params=params,
        residual=ev.residual,
        crosstalk=ev.crosstalk,
        success=ev.success,
        iterations=iterations,
        converged=_accept(problem, ev),
        seed_index=i,
        history=tuple(trail),
    )


def _score(problem: TuneProblem, ev: Evaluation) -> float:
    if problem.objective is Objective.EQUAL_LOSS_ZERO_CROSSTALK:
        return max(ev.residual, ev.crosstalk)
    return ev.residual
