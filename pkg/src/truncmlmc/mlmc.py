"""A-priori multilevel Monte Carlo planning and execution.

The finest level and the per-level sample counts come from closed-form
rules in the rate constants (weak order ``alpha``, variance order ``beta``
and constants ``c1``, ``c2``, ``c3``); there is no adaptive refinement.
All logarithms are natural.
"""
from __future__ import annotations

import enum
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .rng import GAUSSIAN_METHOD, Role
from .schemes import SchemeKind, TruncationConfig, simulate_level_batch, simulate_pair_batch
from .sde import LevelGrid, Payoff, SdeProblem

# Samples per simulation batch. Fixed so that results never depend on the
# number of workers.
CHUNK = 1 << 14


class PlanningError(ValueError):
    pass


class Regime(str, enum.Enum):
    BETA_BELOW_ONE = "beta_below_one"
    BETA_EQUAL_ONE = "beta_equal_one"
    BETA_ABOVE_ONE = "beta_above_one"


def regime_of(beta: float) -> Regime:
    if not beta > 0:
        raise PlanningError(f"beta must be positive, got {beta}")
    if beta == 1:
        return Regime.BETA_EQUAL_ONE
    return Regime.BETA_ABOVE_ONE if beta > 1 else Regime.BETA_BELOW_ONE


@dataclass(frozen=True)
class RateConstants:
    alpha: float
    beta: float
    c1: float
    c2: float
    c3: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta", "c1", "c2", "c3"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise PlanningError(f"{name} must be positive and finite, got {v}")


def truncated_em_rates(c1: float, c2: float, c3: float = 1.0) -> RateConstants:
    """Weak order 1/4 and variance order 1/2, as proved for truncated EM."""
    return RateConstants(0.25, 0.5, c1, c2, c3)


@dataclass(frozen=True)
class MlmcPlan:
    epsilon: float
    L: int
    samples: tuple[int, ...]
    regime: Regime
    predicted_cost_bound: float
    grid: LevelGrid
    consts: RateConstants


@dataclass(frozen=True)
class LevelEstimate:
    level: int
    n_samples: int
    mean: float
    sample_variance: float
    cost: float
    n_nonfinite: int
    # moments of f(fine) alone, used by pilot runs
    fine_mean: float = math.nan
    fine_variance: float = math.nan


@dataclass(frozen=True)
class MlmcResult:
    estimate: float
    levels: tuple[LevelEstimate, ...]
    total_cost: float
    plan: MlmcPlan
    divergent: bool
    metadata: dict = field(default_factory=dict)


# Planning ------------------------------------------------------------------

def _check_eps(epsilon: float):
    if not epsilon > 0:
        raise PlanningError(f"epsilon must be positive, got {epsilon}")
    if epsilon >= math.exp(-1):
        warnings.warn(f"epsilon = {epsilon:g} is not below 1/e; the bounds assume it is", stacklevel=3)


def _step(grid: LevelGrid, n: int) -> float:
    M, T = grid.refinement, grid.horizon
    return T / M**n if n >= 0 else T * M ** (-n)


def _bias(consts: RateConstants, grid: LevelGrid, n: int) -> float:
    return consts.c1 * _step(grid, n) ** consts.alpha


# Relative slack on the closed side of the bias bracket. Exact ties such as
# c1 s^alpha == eps / sqrt(2) land on either side of the comparison after
# rounding; the slack sends them to the side exact arithmetic would.
_TIE = 1e-12


def level_index(consts: RateConstants, grid: LevelGrid, epsilon: float) -> int:
    """``ceil(log(sqrt(2) c1 T^alpha / eps) / (alpha log M))``, possibly negative.

    The float result is corrected so that the returned integer is the
    smallest ``n`` with ``c1 * s_n**alpha <= eps / sqrt(2)``, which is what the
    ceiling means in exact arithmetic.
    """
    if not epsilon > 0:
        raise PlanningError(f"epsilon must be positive, got {epsilon}")
    M = grid.refinement
    x = math.log(math.sqrt(2.0) * consts.c1 * grid.horizon**consts.alpha / epsilon) / (consts.alpha * math.log(M))
    n = math.ceil(x)
    target = epsilon / math.sqrt(2.0) * (1.0 + _TIE)
    while _bias(consts, grid, n) > target:
        n += 1
    while _bias(consts, grid, n - 1) <= target:
        n -= 1
    return n


def choose_L(consts: RateConstants, grid: LevelGrid, epsilon: float) -> int:
    """Finest level: the ceiling rule, clamped at 0."""
    _check_eps(epsilon)
    L = max(0, level_index(consts, grid, epsilon))
    if L > grid.max_level:
        raise PlanningError(f"epsilon = {epsilon:g} needs L = {L} > max_level = {grid.max_level}")
    return L


def bias_bracket(consts: RateConstants, grid: LevelGrid, L: int, epsilon: float) -> bool:
    """``M^-alpha eps / sqrt(2) < c1 s_L^alpha <= eps / sqrt(2)``."""
    b = _bias(consts, grid, L)
    target = epsilon / math.sqrt(2.0)
    return grid.refinement ** (-consts.alpha) * target < b <= target * (1.0 + _TIE)


def _mpow(M: int, x: float) -> float:
    return math.exp(x * math.log(M))


def _ceil(x: float) -> int:
    # treat values within rounding noise of an integer as that integer
    n = round(x)
    if abs(x - n) <= 1e-12 * max(1.0, abs(x)):
        return max(int(n), 1)
    return max(math.ceil(x), 1)


def variance_budget(consts: RateConstants, grid: LevelGrid, samples) -> float:
    """``sum_l c2 s_l^beta / N_l``."""
    return math.fsum(consts.c2 * grid.step(l) ** consts.beta / n for l, n in enumerate(samples))


def allocate_samples(consts: RateConstants, grid: LevelGrid, L: int, epsilon: float) -> tuple[list[int], Regime]:
    if L < 0:
        raise PlanningError("L must be nonnegative")
    if not epsilon > 0:
        raise PlanningError(f"epsilon must be positive, got {epsilon}")
    regime = regime_of(consts.beta)
    M, T, beta, c2 = grid.refinement, grid.horizon, consts.beta, consts.c2
    lead = 2.0 * c2 / (epsilon * epsilon)
    if regime is Regime.BETA_EQUAL_ONE:
        raw = [lead * (L + 1) * grid.step(l) for l in range(L + 1)]
    elif regime is Regime.BETA_ABOVE_ONE:
        g = (beta - 1) / 2
        k = lead * T**g / (1.0 - _mpow(M, -g))
        raw = [k * grid.step(l) ** ((beta + 1) / 2) for l in range(L + 1)]
    else:
        g = (1 - beta) / 2
        k = lead * grid.step(L) ** (-g) / (1.0 - _mpow(M, -g))
        raw = [k * grid.step(l) ** ((beta + 1) / 2) for l in range(L + 1)]
    samples = [_ceil(x) for x in raw]
    # rounding guard: the budget holds in exact arithmetic; restore it in floats
    half = epsilon * epsilon / 2
    while variance_budget(consts, grid, samples) > half:
        worst = max(range(L + 1), key=lambda l: grid.step(l) ** beta / samples[l])
        samples[worst] += 1
    return samples, regime


def c5_constant(consts: RateConstants, M: int, T: float) -> float:
    a_log_m = consts.alpha * math.log(M)
    return 1.0 / a_log_m + max(0.0, math.log(math.sqrt(2.0) * consts.c1 * T**consts.alpha) / a_log_m) + 2.0


def complexity_bound(consts: RateConstants, M: int, epsilon: float, T: float = 1.0) -> float:
    """Upper bound on total cost for RMS accuracy ``epsilon``, by beta regime."""
    _check_eps(epsilon)
    a, b, c1, c2, c3 = consts.alpha, consts.beta, consts.c1, consts.c2, consts.c3
    regime = regime_of(b)
    tail = M**2 / (M - 1) * (math.sqrt(2.0) * c1) ** (1 / a)
    if regime is Regime.BETA_EQUAL_ONE:
        c5 = c5_constant(consts, M, T)
        coef = c3 * (2 * c5**2 * c2 + tail)
        log_eps = math.log(epsilon)
        threshold = -log_eps / math.log((log_eps / epsilon) ** 2)
        if a <= threshold:
            return coef * epsilon ** (-1 / a)
        return coef * epsilon**-2 * log_eps**2
    if regime is Regime.BETA_ABOVE_ONE:
        coef = c3 * (2 * c2 * T ** (b - 1) * (1 - _mpow(M, -(b - 1) / 2)) ** -2 + tail)
        return coef * (epsilon**-2 if a >= 0.5 else epsilon ** (-1 / a))
    coef = c3 * (2 * c2 * (math.sqrt(2.0) * c1) ** ((1 - b) / a) * M ** (1 - b)
                 * (1 - _mpow(M, -(1 - b) / 2)) ** -2 + tail)
    return coef * (epsilon ** (-2 - (1 - b) / a) if b <= 2 * a else epsilon ** (-1 / a))


def truncated_em_bound(c1: float, c2: float, c3: float, M: int, epsilon: float) -> float:
    """Closed form of the bound for alpha = 1/4, beta = 1/2; scales as eps^-4."""
    return (4 * c1**2 * c2 * c3 * math.sqrt(M) * (1 - M**-0.25) ** -2
            + 4 * M**2 / (M - 1) * c1**4 * c3) * epsilon**-4


def plan(consts: RateConstants, grid: LevelGrid, epsilon: float) -> MlmcPlan:
    L = choose_L(consts, grid, epsilon)
    samples, regime = allocate_samples(consts, grid, L, epsilon)
    bound = complexity_bound(consts, grid.refinement, epsilon, grid.horizon)
    return MlmcPlan(epsilon, L, tuple(samples), regime, bound, grid, consts)


# Estimation ----------------------------------------------------------------

def _moments(values: np.ndarray) -> tuple[float, float]:
    """Shifted two-pass mean and unbiased variance; exact on constant data."""
    if values.size == 0:
        return math.nan, math.nan
    shift = float(values[0])
    with np.errstate(over="ignore", invalid="ignore"):
        mean = shift + float(np.mean(values - shift))
        var = float(np.sum((values - mean) ** 2) / (values.size - 1)) if values.size > 1 else 0.0
    return mean, var


def _nonfinite_marker(values: np.ndarray) -> float:
    inf = values[np.isinf(values)]
    if inf.size == 0:
        return math.nan
    return math.inf if np.sum(np.sign(inf)) >= 0 else -math.inf


def level_cost(grid: LevelGrid, level: int, n_samples: int) -> float:
    steps = grid.n_steps(level) + (grid.n_steps(level - 1) if level > 0 else 0)
    return float(n_samples * steps)


def _chunks(n: int):
    return [(i, min(i + CHUNK, n)) for i in range(0, n, CHUNK)]


def _map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def level_samples(problem: SdeProblem, payoff: Payoff, scheme: SchemeKind, config: Optional[TruncationConfig],
                  grid: LevelGrid, level: int, n_samples: int, seed: int, role: Optional[Role] = None,
                  workers: int = 1):
    """Per-sample payoff differences and fine payoffs, in sample order.

    Returns ``(diff, fine)``; non-finite paths give non-finite entries.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if role is None:
        role = Role.STANDALONE if level == 0 else Role.MLMC_PAIR

    def work(span):
        idx = np.arange(span[0], span[1], dtype=np.uint64)
        with np.errstate(all="ignore"):
            if level == 0:
                x, ok = simulate_level_batch(problem, scheme, config, grid, 0, seed, idx, role)
                f = np.where(ok, payoff(x), np.nan)
                return f, f
            xf, okf, xc, okc = simulate_pair_batch(problem, scheme, config, grid, level, seed, idx, role)
            ff = np.where(okf, payoff(xf), np.nan)
            fc = np.where(okc, payoff(xc), np.nan)
            return ff - fc, ff

    parts = _map(work, _chunks(n_samples), workers)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def run_level(problem: SdeProblem, payoff: Payoff, scheme: SchemeKind, config: Optional[TruncationConfig],
              grid: LevelGrid, level: int, n_samples: int, seed: int, role: Optional[Role] = None,
              workers: int = 1) -> LevelEstimate:
    diff, fine = level_samples(problem, payoff, scheme, config, grid, level, n_samples, seed, role, workers)
    ok = np.isfinite(diff)
    n_bad = int(np.count_nonzero(~ok))
    if n_bad == n_samples:
        mean, var = _nonfinite_marker(diff), math.nan
    else:
        mean, var = _moments(diff[ok])
    fok = np.isfinite(fine)
    fmean, fvar = _moments(fine[fok]) if fok.any() else (math.nan, math.nan)
    return LevelEstimate(level, n_samples, mean, var, level_cost(grid, level, n_samples), n_bad, fmean, fvar)


def run_plan(problem: SdeProblem, payoff: Payoff, scheme: SchemeKind, config: Optional[TruncationConfig],
             mlmc_plan: MlmcPlan, seed: int, workers: int = 1, metadata: Optional[dict] = None) -> MlmcResult:
    levels = tuple(
        run_level(problem, payoff, scheme, config, mlmc_plan.grid, l, n, seed, workers=workers)
        for l, n in enumerate(mlmc_plan.samples)
    )
    estimate = 0.0
    for lv in levels:
        estimate += lv.mean
    # any non-finite sample means the scheme left the region where the estimator is valid
    divergent = any(lv.n_nonfinite > 0 for lv in levels) or not math.isfinite(estimate)
    meta = {"seed": seed, "rng": GAUSSIAN_METHOD, "scheme": SchemeKind(scheme).value}
    meta.update(metadata or {})
    return MlmcResult(estimate, levels, sum(lv.cost for lv in levels), mlmc_plan, divergent, meta)


def run_mlmc(problem: SdeProblem, payoff: Payoff, scheme: SchemeKind, config: Optional[TruncationConfig],
             consts: RateConstants, grid: LevelGrid, epsilon: float, seed: int, workers: int = 1,
             metadata: Optional[dict] = None) -> MlmcResult:
    if not math.isclose(grid.horizon, problem.horizon, rel_tol=1e-12):
        raise PlanningError("grid and problem horizons differ")
    return run_plan(problem, payoff, scheme, config, plan(consts, grid, epsilon), seed, workers, metadata)


def run_standard_mc(problem: SdeProblem, payoff: Payoff, scheme: SchemeKind, config: Optional[TruncationConfig],
                    step: float, n_samples: int, seed: int, workers: int = 1) -> tuple[float, float, float]:
    """Plain Monte Carlo at a single step size: ``(estimate, variance, cost)``.

    ``variance`` is the sample variance of the payoff; non-finite paths are
    dropped from both moments.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    n_steps = round(problem.horizon / step)
    if n_steps < 1 or not math.isclose(n_steps * step, problem.horizon, rel_tol=1e-12):
        raise ValueError(f"step {step:g} does not divide the horizon {problem.horizon:g}")
    grid = _SingleGrid(n_steps, problem.horizon)

    def work(span):
        idx = np.arange(span[0], span[1], dtype=np.uint64)
        with np.errstate(all="ignore"):
            x, ok = simulate_level_batch(problem, scheme, config, grid, 0, seed, idx, Role.MONTE_CARLO)
            return np.where(ok, payoff(x), np.nan)

    f = np.concatenate(_map(work, _chunks(n_samples), workers))
    mean, var = _moments(f[np.isfinite(f)])
    return mean, var, float(n_samples * n_steps)


class _SingleGrid:
    """Grid stand-in whose level 0 has an arbitrary number of steps."""

    def __init__(self, n_steps: int, horizon: float):
        self._n, self.horizon, self.refinement = n_steps, horizon, 2

    def n_steps(self, level):
        return self._n

    def step(self, level):
        return self.horizon / self._n


def standard_mc_budget(consts: RateConstants, epsilon: float, grid: LevelGrid,
                       payoff_variance: float) -> tuple[float, int]:
    """Step and sample count giving squared bias and variance each <= eps^2 / 2.

    The step is the coarsest ``T / M^l`` with ``c1 step^alpha <= eps / sqrt(2)``.
    """
    if not epsilon > 0:
        raise PlanningError(f"epsilon must be positive, got {epsilon}")
    level = max(0, level_index(consts, grid, epsilon))
    n = _ceil(2.0 * payoff_variance / (epsilon * epsilon))
    return grid.step(level), n


def pilot_constants(problem: SdeProblem, payoff: Payoff, scheme: SchemeKind, config: Optional[TruncationConfig],
                    grid: LevelGrid, alpha: float, beta: float, seed: int, n_paths: int = 100,
                    n_levels: int = 4, c3: Optional[float] = None, workers: int = 1) -> tuple[RateConstants, dict]:
    """Estimate ``c1`` and ``c2`` from a short run on levels ``0 .. n_levels-1``.

    Heuristic: ``|Y_l|`` is regressed through the origin on ``s_l^alpha`` for
    ``l >= 1``. If the bias at level ``l`` is ``c1 s_l^alpha`` then
    ``|E Y_l| = c1 s_l^alpha (M^alpha - 1)``, so the slope is divided by
    ``M^alpha - 1`` to recover ``c1``. ``c2`` is the largest
    ``V_l / s_l^beta`` over all pilot levels. ``c3`` defaults to the cost of
    one coupled pair per unit of ``1/s_l``, ``T (1 + 1/M)``.
    """
    if n_levels < 2:
        raise ValueError("a pilot needs at least two levels")
    stats = [run_level(problem, payoff, scheme, config, grid, l, n_paths, seed, role=Role.PILOT, workers=workers)
             for l in range(n_levels)]
    xs = np.array([grid.step(s.level) ** alpha for s in stats[1:]])
    ys = np.array([abs(s.mean) for s in stats[1:]])
    tiny = 1e-12
    good = np.isfinite(ys)
    if not good.any():
        raise PlanningError("pilot run diverged on every level")
    slope = float(np.sum(xs[good] * ys[good]) / np.sum(xs[good] ** 2))
    c1 = slope / (grid.refinement**alpha - 1.0)
    ratios = [s.sample_variance / grid.step(s.level) ** beta for s in stats if math.isfinite(s.sample_variance)]
    c2 = max(ratios) if ratios else math.nan
    if c3 is None:
        c3 = grid.horizon * (1 + 1 / grid.refinement)
    consts = RateConstants(alpha, beta, max(c1, tiny), max(c2, tiny), c3)
    info = {
        "mode": "pilot (heuristic)",
        "n_paths": n_paths,
        "n_levels": n_levels,
        "level_means": [s.mean for s in stats],
        "level_variances": [s.sample_variance for s in stats],
        "payoff_variance": stats[-1].fine_variance,
    }
    return consts, info
