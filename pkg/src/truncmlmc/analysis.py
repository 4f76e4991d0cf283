"""Empirical convergence rates and the MLMC vs plain Monte Carlo cost curve."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .mlmc import (
    RateConstants, run_mlmc, run_standard_mc, standard_mc_budget, level_samples,
)
from .rng import Role, brownian_window
from .schemes import SchemeKind, TruncationConfig, simulate_from_increments
from .sde import LevelGrid, Payoff, SdeProblem, coarsen


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    points: tuple[tuple[float, float], ...]


def fit_rate(points: Sequence[tuple[float, float]]) -> RateFit:
    """Least squares of ``log(value)`` on ``log(step)``."""
    pts = [(float(s), float(v)) for s, v in points]
    if len(pts) < 3:
        raise ValueError("at least 3 points are needed")
    if any(not (s > 0 and v > 0) for s, v in pts):
        raise ValueError("steps and values must be positive")
    x = np.log([s for s, _ in pts])
    y = np.log([v for _, v in pts])
    xc, yc = x - x.mean(), y - y.mean()
    sxx = float(np.dot(xc, xc))
    if sxx == 0:
        raise ValueError("steps must not all be equal")
    slope = float(np.dot(xc, yc)) / sxx
    intercept = float(y.mean() - slope * x.mean())
    ss_tot = float(np.dot(yc, yc))
    ss_res = float(np.sum((yc - slope * xc) ** 2))
    r2 = 1.0 if ss_tot == 0 else min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    return RateFit(slope, intercept, r2, tuple(zip(x.tolist(), y.tolist())))


# Strong errors ---------------------------------------------------------------

REFERENCE_REFINEMENT_LEVELS = 6  # reference grid is M**6 (64x for M = 2) finer than the finest level
_STRONG_CHUNK = 1024


def strong_errors(problem: SdeProblem, scheme: SchemeKind, config: Optional[TruncationConfig],
                  grid: LevelGrid, levels: Sequence[int], n_paths: int, seed: int) -> dict[int, np.ndarray]:
    """Per-path errors ``|X_l(T) - X(T)|`` for each level, all on one Brownian path per sample.

    ``X(T)`` comes from ``problem.exact_terminal`` when available, otherwise
    from the same scheme run on a grid ``M**6`` times finer than the finest
    requested level.
    """
    levels = sorted(set(int(l) for l in levels))
    if not levels or levels[0] < 0:
        raise ValueError("levels must be nonnegative")
    exact = problem.exact_terminal is not None
    finest = levels[-1] if exact else levels[-1] + REFERENCE_REFINEMENT_LEVELS
    M, m = grid.refinement, problem.noise_dim
    out = {l: [] for l in levels}
    for a in range(0, n_paths, _STRONG_CHUNK):
        idx = np.arange(a, min(a + _STRONG_CHUNK, n_paths), dtype=np.uint64)
        dB = brownian_window(seed, finest, idx, Role.STANDALONE, 0, grid.n_steps(finest), grid.step(finest), m)
        with np.errstate(all="ignore"):
            if exact:
                total = dB[:, 0]
                for k in range(1, dB.shape[1]):
                    total = total + dB[:, k]
                ref = problem.exact_terminal(total)
            else:
                ref, _ = simulate_from_increments(problem, scheme, config, grid.step(finest), dB)
            inc = dB
            for l in range(finest, levels[0] - 1, -1):
                if l in out:
                    x, _ = simulate_from_increments(problem, scheme, config, grid.step(l), inc)
                    out[l].append(np.sqrt(np.sum((x - ref) ** 2, axis=1)))
                if l > levels[0]:
                    inc = coarsen(inc, M)
    return {l: np.concatenate(v) for l, v in out.items()}


def strong_error_curve(problem: SdeProblem, scheme: SchemeKind, config: Optional[TruncationConfig],
                       grid: LevelGrid, levels: Sequence[int], n_paths: int, seed: int,
                       q: float = 2.0) -> list[tuple[float, float]]:
    """``(s_l, (E|X_l(T) - X(T)|^q)^(1/q))`` per level; ``q = 2`` is the RMS error."""
    errs = strong_errors(problem, scheme, config, grid, levels, n_paths, seed)
    return [(grid.step(l), float(np.mean(e**q) ** (1.0 / q))) for l, e in sorted(errs.items())]


def variance_decay_curve(problem: SdeProblem, payoff: Payoff, scheme: SchemeKind,
                         config: Optional[TruncationConfig], grid: LevelGrid, levels: Sequence[int],
                         n_paths: int, seed: int, workers: int = 1) -> list[tuple[float, float]]:
    """Sample variance of ``f(fine) - f(coarse)`` per level (levels >= 1)."""
    curve = []
    for l in levels:
        if l < 1:
            raise ValueError("variance decay needs levels >= 1")
        diff, _ = level_samples(problem, payoff, scheme, config, grid, l, n_paths, seed, workers=workers)
        d = diff[np.isfinite(diff)]
        curve.append((grid.step(l), float(np.var(d, ddof=1)) if d.size > 1 else math.nan))
    return curve


# Cost curve -------------------------------------------------------------------

# Plain MC runs above this many path steps are costed from their budget only.
MC_EXECUTE_LIMIT = 5e7


@dataclass(frozen=True)
class CostCurve:
    epsilons: tuple[float, ...]
    mlmc_costs: tuple[float, ...]
    mc_costs: tuple[float, ...]
    details: tuple[dict, ...] = field(default=())

    @property
    def ratios(self) -> tuple[float, ...]:
        return tuple(mc / ml for mc, ml in zip(self.mc_costs, self.mlmc_costs))


def cost_curve(problem: SdeProblem, payoff: Payoff, scheme: SchemeKind, config: Optional[TruncationConfig],
               consts: RateConstants, grid: LevelGrid, epsilons: Sequence[float], seed: int,
               payoff_variance: float, mc_execute_limit: float = MC_EXECUTE_LIMIT,
               workers: int = 1) -> CostCurve:
    """Total cost of MLMC and of plain MC reaching each accuracy ``eps``.

    Results follow the order of ``epsilons``. MLMC is always executed. Plain MC uses ``standard_mc_budget``; its cost is
    ``n * T / step`` whether or not it runs, and it is only executed below
    ``mc_execute_limit`` path steps.
    """
    eps = [float(e) for e in epsilons]
    if not eps or any(not (0 < e < math.inf) for e in eps):
        raise ValueError("epsilons must be positive and finite")
    ml_costs, mc_costs, details = [], [], []
    for e in eps:
        res = run_mlmc(problem, payoff, scheme, config, consts, grid, e, seed, workers=workers)
        step, n = standard_mc_budget(consts, e, grid, payoff_variance)
        mc_cost = float(n * round(problem.horizon / step))
        info = {"epsilon": e, "mlmc_estimate": res.estimate, "L": res.plan.L, "samples": list(res.plan.samples),
                "mc_step": step, "mc_samples": n, "mc_executed": mc_cost <= mc_execute_limit,
                "mlmc_divergent": res.divergent}
        if info["mc_executed"]:
            est, _, ran = run_standard_mc(problem, payoff, scheme, config, step, n, seed, workers=workers)
            assert ran == mc_cost
            info["mc_estimate"] = est
        ml_costs.append(res.total_cost)
        mc_costs.append(mc_cost)
        details.append(info)
    return CostCurve(tuple(eps), tuple(ml_costs), tuple(mc_costs), tuple(details))
