"""Classic and truncated Euler-Maruyama steppers.

The truncated scheme evaluates drift and diffusion at the state pulled back
radially onto the ball of radius ``omega_inv(h(step))``. The iterate itself is
never modified.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _kernels
from .rng import RandomStream, Role, brownian_window
from .sde import LevelGrid, SdeProblem, coarsen, coupled_increments


class SchemeKind(str, enum.Enum):
    CLASSIC_EM = "classic_em"
    TRUNCATED_EM = "truncated_em"


class TruncationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TruncationConfig:
    omega: Callable[[float], float]
    omega_inv: Callable[[float], float]
    h: Callable[[float], float]
    s_star: float = 1.0
    description: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.s_star <= 1:
            raise ValueError(f"s_star must lie in (0, 1], got {self.s_star}")

    def check(self, n_grid: int = 200) -> list[str]:
        """Check the invariants on sampled grids.

        Hard violations raise ``ValueError``; a failure of
        ``h(s_star) >= omega(2)`` is only returned (and warned about), since
        the usual choice ``h(s) = s**-0.25`` with ``s_star <= 1`` never meets it.
        """
        u = np.concatenate([[0.0], np.geomspace(1e-3, 1e3, n_grid)])
        w = np.array([self.omega(v) for v in u])
        if np.any(np.diff(w) <= 0):
            raise ValueError("omega is not strictly increasing on the sample grid")
        back = np.array([self.omega_inv(v) for v in w])
        if not np.allclose(back, u, rtol=1e-12, atol=0.0):
            raise ValueError("omega_inv is not the inverse of omega")
        s = self.s_star * np.geomspace(1e-12, 1.0, n_grid)
        hs = np.array([self.h(v) for v in s])
        if np.any(np.diff(hs) >= 0):
            raise ValueError("h is not strictly decreasing on (0, s_star]")
        if np.any(s**0.25 * hs > 1.0 + 1e-12):
            raise ValueError("s**(1/4) * h(s) <= 1 fails on (0, s_star]")
        notes = []
        if self.h(self.s_star) < self.omega(2.0):
            notes.append(
                f"h(s_star) = {self.h(self.s_star):.6g} < omega(2) = {self.omega(2.0):.6g}"
            )
            warnings.warn(notes[-1], TruncationWarning, stacklevel=2)
        return notes


def power_omega(coef: float = 2.0, power: float = 3.0):
    """``omega(u) = coef * u**power`` with its inverse."""
    if coef <= 0 or power <= 0:
        raise ValueError("coef and power must be positive")
    return (lambda u: coef * u**power), (lambda r: (r / coef) ** (1.0 / power))


def power_h(exponent: float = 0.25, scale: float = 1.0):
    """``h(s) = scale * s**(-exponent)``."""
    if exponent <= 0 or scale <= 0:
        raise ValueError("exponent and scale must be positive")
    return lambda s: scale * s ** (-exponent)


def default_truncation(s_star: float = 1.0) -> TruncationConfig:
    """omega(u) = 2u^3 and h(s) = s^(-1/4), suitable for the Lewis test problem.

    For |x| <= u with u >= 1, |x - x^3| and |x|^{3/2} are both at most 2u^3.
    """
    omega, omega_inv = power_omega(2.0, 3.0)
    return TruncationConfig(
        omega, omega_inv, power_h(0.25), s_star,
        description={"omega": {"name": "power", "coef": 2.0, "power": 3.0},
                     "h": {"name": "power", "exponent": 0.25, "scale": 1.0},
                     "s_star": s_star},
    )


def identity_omega():
    return (lambda u: u), (lambda r: r)


OMEGAS = {"power": power_omega, "identity": identity_omega}
HEIGHTS = {"power": power_h}


def make_truncation(omega: Optional[dict] = None, h: Optional[dict] = None, s_star: float = 1.0) -> TruncationConfig:
    """Build a config from ``{"name": ..., **params}`` descriptions of omega and h.

    Missing descriptions fall back to ``omega(u) = 2u^3`` and ``h(s) = s^(-1/4)``.
    """
    omega = dict(omega or {"name": "power", "coef": 2.0, "power": 3.0})
    h = dict(h or {"name": "power", "exponent": 0.25, "scale": 1.0})
    w, w_inv = OMEGAS[omega["name"]](**{k: v for k, v in omega.items() if k != "name"})
    hh = HEIGHTS[h["name"]](**{k: v for k, v in h.items() if k != "name"})
    return TruncationConfig(w, w_inv, hh, s_star, description={"omega": omega, "h": h, "s_star": s_star})


def truncate_state(x, radius: float) -> np.ndarray:
    """Radial projection ``(|x| ^ radius) x / |x|``; the zero vector maps to itself."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    x = np.asarray(x, dtype=float)
    return _truncate_rows(np.atleast_2d(x), radius).reshape(x.shape)


def _norms(x: np.ndarray) -> np.ndarray:
    if x.shape[1] == 1:
        return np.abs(x[:, 0])
    return np.sqrt(np.sum(x * x, axis=1))


def _truncate_rows(x: np.ndarray, radius: float) -> np.ndarray:
    r = _norms(x)
    over = r > radius
    if not over.any():
        return x
    out = x.copy()
    out[over] = x[over] * (radius / r[over])[:, None]
    return out


def truncation_radius(config: TruncationConfig, step: float) -> float:
    if not step > 0:
        raise ValueError("step must be positive")
    if step > config.s_star:
        warnings.warn(f"step {step:g} exceeds s_star = {config.s_star:g}", TruncationWarning, stacklevel=2)
    height = config.h(step)
    if height < config.omega(0.0):
        raise ValueError(f"h({step:g}) = {height:g} lies below omega(0); omega and h are incompatible")
    return float(config.omega_inv(height))


def _radius_for(scheme: SchemeKind, config: Optional[TruncationConfig], step: float) -> Optional[float]:
    scheme = SchemeKind(scheme)
    if scheme is SchemeKind.CLASSIC_EM:
        return None
    if config is None:
        raise ValueError("truncated_em requires a TruncationConfig")
    return truncation_radius(config, step)


def _advance(problem: SdeProblem, radius: Optional[float], step: float, x: np.ndarray, dB: np.ndarray) -> np.ndarray:
    arg = x if radius is None else _truncate_rows(x, radius)
    sig = problem.diffusion(arg)
    if sig.shape[2] == 1:
        noise = sig[:, :, 0] * dB[:, :1]
    else:
        noise = np.matmul(sig, dB[:, :, None])[:, :, 0]
    return x + problem.drift(arg) * step + noise


def em_step(problem: SdeProblem, scheme: SchemeKind, config: Optional[TruncationConfig],
            step: float, x, dB) -> np.ndarray:
    paths = _Paths(problem, _radius_for(scheme, config, step), step, 1)
    paths.x[0] = np.asarray(x, dtype=float).reshape(problem.state_dim)
    paths.advance(np.asarray(dB, dtype=float).reshape(1, 1, problem.noise_dim))
    return paths.x[0].copy()


@dataclass(frozen=True)
class PathOutcome:
    terminal_state: np.ndarray
    finite: bool
    steps_taken: int
    blowup_step: Optional[int] = None


class _Paths:
    """A batch of paths advanced in lockstep.

    A path that turns non-finite keeps its first non-finite iterate and the
    (1-based) step at which it appeared.
    """

    def __init__(self, problem: SdeProblem, radius: Optional[float], step: float, n: int):
        self.problem = problem
        self.radius = radius
        self.step = step
        self.x = np.broadcast_to(problem.initial_value, (n, problem.state_dim)).copy()
        self.k = 0
        self.blowup = np.full(n, -1, dtype=np.int64)
        self._frozen = None
        if problem.kernel is not None:
            family, params = problem.kernel
            self._family, self._params = family, np.asarray(params, dtype=float)

    def advance(self, dB: np.ndarray):
        """Apply the increments ``dB`` of shape ``(n, k, m)``, one step per ``k``."""
        if self.problem.kernel is not None:
            r = -1.0 if self.radius is None else self.radius
            _kernels.advance_paths(self._family, self._params, self.x, np.ascontiguousarray(dB),
                                   self.step, r, self.blowup, self.k)
            self.k += dB.shape[1]
            return
        for j in range(dB.shape[1]):
            self.x = _advance(self.problem, self.radius, self.step, self.x, dB[:, j])
            self.k += 1
            ok = np.isfinite(self.x)
            if not ok.all():
                self._record(ok.all(axis=1))

    def _record(self, ok):
        new = ~ok & (self.blowup < 0)
        if new.any():
            if self._frozen is None:
                self._frozen = np.zeros_like(self.x)
            self._frozen[new] = self.x[new]
            self.blowup[new] = self.k

    def terminal(self):
        x = self.x.copy()
        bad = self.blowup >= 0
        if self._frozen is not None:
            x[bad] = self._frozen[bad]
        return x, ~bad


def simulate_terminal(problem: SdeProblem, scheme: SchemeKind, config: Optional[TruncationConfig],
                      step: float, increments) -> PathOutcome:
    increments = np.asarray(increments, dtype=float).reshape(-1, problem.noise_dim)
    n = increments.shape[0]
    if not math.isclose(n * step, problem.horizon, rel_tol=1e-12):
        raise ValueError(f"{n} steps of {step:g} do not span the horizon {problem.horizon:g}")
    paths = _Paths(problem, _radius_for(scheme, config, step), step, 1)
    paths.advance(increments[None])
    x, ok = paths.terminal()
    if ok[0]:
        return PathOutcome(x[0], True, n, None)
    k = int(paths.blowup[0])
    return PathOutcome(x[0], False, k, k)


def simulate_coupled_pair(problem: SdeProblem, scheme: SchemeKind, config: Optional[TruncationConfig],
                          grid: LevelGrid, level: int, stream: RandomStream) -> tuple[PathOutcome, PathOutcome]:
    inc = coupled_increments(stream, grid, level, problem.noise_dim)
    fine = simulate_terminal(problem, scheme, config, grid.step(level), inc.fine)
    coarse = simulate_terminal(problem, scheme, config, grid.step(level - 1), inc.coarse)
    return fine, coarse


# Batched simulation --------------------------------------------------------

# Target number of increment entries held in memory per time window.
_WINDOW_ENTRIES = 1 << 18


def _window_steps(n_paths: int, n_steps: int, multiple: int) -> int:
    k = max(1, _WINDOW_ENTRIES // max(n_paths, 1))
    k = max(multiple, (k // multiple) * multiple)
    return min(k, n_steps)


def simulate_level_batch(problem: SdeProblem, scheme: SchemeKind, config: Optional[TruncationConfig],
                         grid: LevelGrid, level: int, seed: int, sample_indices, role: Role):
    """Terminal states of many single-level paths at step ``grid.step(level)``.

    Returns ``(states, finite)`` with shapes ``(n, d)`` and ``(n,)``. Row ``i``
    is the path driven by stream ``(seed, level, sample_indices[i], role)``.
    """
    samples = np.asarray(sample_indices, dtype=np.uint64)
    n_steps, step = grid.n_steps(level), grid.step(level)
    paths = _Paths(problem, _radius_for(scheme, config, step), step, samples.size)
    w = _window_steps(samples.size, n_steps, 1)
    for k0 in range(0, n_steps, w):
        k1 = min(k0 + w, n_steps)
        paths.advance(brownian_window(seed, level, samples, role, k0, k1, step, problem.noise_dim))
    return paths.terminal()


def simulate_pair_batch(problem: SdeProblem, scheme: SchemeKind, config: Optional[TruncationConfig],
                        grid: LevelGrid, level: int, seed: int, sample_indices, role: Role = Role.MLMC_PAIR):
    """Coupled fine/coarse terminal states for many streams at once.

    Returns ``(fine, fine_ok, coarse, coarse_ok)``. Each row matches
    ``simulate_coupled_pair`` for the same stream.
    """
    if level < 1:
        raise ValueError("level 0 has no coarse partner")
    samples = np.asarray(sample_indices, dtype=np.uint64)
    M = grid.refinement
    n_steps, sf, sc = grid.n_steps(level), grid.step(level), grid.step(level - 1)
    fine = _Paths(problem, _radius_for(scheme, config, sf), sf, samples.size)
    coarse = _Paths(problem, _radius_for(scheme, config, sc), sc, samples.size)
    w = _window_steps(samples.size, n_steps, M)
    for k0 in range(0, n_steps, w):
        k1 = min(k0 + w, n_steps)
        dB = brownian_window(seed, level, samples, role, k0, k1, sf, problem.noise_dim)
        if problem.kernel is not None:
            rf = -1.0 if fine.radius is None else fine.radius
            rc = -1.0 if coarse.radius is None else coarse.radius
            _kernels.advance_pairs(fine._family, fine._params, fine.x, coarse.x, dB, M, sf, sc, rf, rc,
                                   fine.blowup, coarse.blowup, k0)
            continue
        dBc = coarsen(dB, M)
        for j in range((k1 - k0) // M):
            fine.advance(dB[:, j * M:(j + 1) * M])
            coarse.advance(dBc[:, j:j + 1])
    xf, okf = fine.terminal()
    xc, okc = coarse.terminal()
    return xf, okf, xc, okc


def simulate_from_increments(problem: SdeProblem, scheme: SchemeKind, config: Optional[TruncationConfig],
                             step: float, increments: np.ndarray):
    """Terminal states for an ``(n_paths, n_steps, m)`` block of given increments."""
    n_steps = increments.shape[1]
    if not math.isclose(n_steps * step, problem.horizon, rel_tol=1e-12):
        raise ValueError(f"{n_steps} steps of {step:g} do not span the horizon {problem.horizon:g}")
    paths = _Paths(problem, _radius_for(scheme, config, step), step, increments.shape[0])
    paths.advance(increments)
    return paths.terminal()
