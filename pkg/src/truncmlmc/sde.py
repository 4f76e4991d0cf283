"""SDE problems, payoffs, level grids and fine/coarse Brownian coupling.

Coefficients are vectorised over paths: ``drift`` maps an ``(n, d)`` array
of states to ``(n, d)`` and ``diffusion`` maps it to ``(n, d, m)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _kernels
from .rng import RandomStream, brownian_increments


@dataclass(frozen=True)
class SdeProblem:
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]
    state_dim: int
    noise_dim: int
    initial_value: np.ndarray
    horizon: float
    name: str = "custom"
    # X(T) as a function of the terminal Brownian value B(T), shape (n, m) -> (n, d)
    exact_terminal: Optional[Callable[[np.ndarray], np.ndarray]] = None
    exact_mean: Optional[Callable[["Payoff"], float]] = None
    params: dict = field(default_factory=dict)
    # (family id, parameters) of a compiled equivalent of drift/diffusion, see _kernels
    kernel: Optional[tuple[int, tuple[float, ...]]] = None

    def __post_init__(self):
        if self.state_dim < 1 or self.noise_dim < 1:
            raise ValueError("state_dim and noise_dim must be >= 1")
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        x0 = np.asarray(self.initial_value, dtype=float).reshape(-1)
        if x0.shape != (self.state_dim,):
            raise ValueError(f"initial_value must have shape ({self.state_dim},)")
        object.__setattr__(self, "initial_value", x0)


@dataclass(frozen=True)
class Payoff:
    eval: Callable[[np.ndarray], np.ndarray]
    growth_constant: float = 1.0
    name: str = "custom"

    def __post_init__(self):
        if not self.growth_constant > 0:
            raise ValueError("growth_constant must be positive")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.eval(np.atleast_2d(x))


@dataclass(frozen=True)
class LevelGrid:
    refinement: int
    horizon: float
    max_level: int = 30

    def __post_init__(self):
        if int(self.refinement) != self.refinement or self.refinement < 2:
            raise ValueError(f"refinement M must be an integer >= 2, got {self.refinement}")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.max_level < 0:
            raise ValueError("max_level must be nonnegative")

    def n_steps(self, level: int) -> int:
        return self.refinement ** level

    def step(self, level: int) -> float:
        """``T / M**level``; exactly ``M`` times the next finer step when M is a power of two."""
        if level < 0:
            raise ValueError("level must be nonnegative")
        return self.horizon / self.refinement**level


@dataclass(frozen=True)
class CoupledIncrements:
    fine: np.ndarray
    coarse: np.ndarray


def coarsen(increments: np.ndarray, factor: int) -> np.ndarray:
    """Sum consecutive groups of ``factor`` increments along the time axis.

    Works on ``(n_steps, m)`` or ``(n_paths, n_steps, m)`` arrays. Each group
    is added strictly left to right so the result never depends on array
    layout.
    """
    axis = increments.ndim - 2
    n = increments.shape[axis]
    if n % factor:
        raise ValueError(f"{n} steps are not divisible by {factor}")
    shape = increments.shape[:axis] + (n // factor, factor) + increments.shape[axis + 1:]
    groups = increments.reshape(shape)
    total = groups[..., 0, :].copy()
    for j in range(1, factor):
        total += groups[..., j, :]
    return total


def coupled_increments(stream: RandomStream, grid: LevelGrid, level: int, noise_dim: int = 1) -> CoupledIncrements:
    if level < 1:
        raise ValueError("level 0 has no coarse partner")
    fine = brownian_increments(stream, grid.n_steps(level), grid.step(level), noise_dim)
    return CoupledIncrements(fine, coarsen(fine, grid.refinement))


# Built-in problems ---------------------------------------------------------

def _column(x):
    return np.asarray(x, dtype=float).reshape(-1, 1)


def lewis(x0: float = 0.5, T: float = 1.0) -> SdeProblem:
    """dx = (x - x^3) dt + |x|^{3/2} dB, a special case of Lewis' volatility model."""

    def drift(x):
        return x - x * x * x

    def diffusion(x):
        a = np.abs(x)
        return (a * np.sqrt(a))[:, :, None]

    return SdeProblem(drift, diffusion, 1, 1, [x0], T, name="lewis35", params={"x0": x0, "T": T},
                      kernel=(_kernels.LEWIS, ()))


def gbm(mu: float = 0.05, sigma: float = 0.2, x0: float = 1.0, T: float = 1.0) -> SdeProblem:
    def drift(x):
        return mu * x

    def diffusion(x):
        return (sigma * x)[:, :, None]

    def exact_terminal(bt):
        return x0 * np.exp((mu - 0.5 * sigma**2) * T + sigma * _column(bt[:, 0]))

    def exact_mean(payoff):
        if payoff.name == "identity":
            return x0 * np.exp(mu * T)
        if payoff.name == "square":
            return x0**2 * np.exp((2 * mu + sigma**2) * T)
        raise NotImplementedError(payoff.name)

    return SdeProblem(
        drift, diffusion, 1, 1, [x0], T, name="gbm",
        exact_terminal=exact_terminal, exact_mean=exact_mean,
        params={"mu": mu, "sigma": sigma, "x0": x0, "T": T},
        kernel=(_kernels.GBM, (mu, sigma)),
    )


def zero(x0: float = 1.0, T: float = 1.0, dim: int = 1) -> SdeProblem:
    x0v = np.full(dim, float(x0))

    def drift(x):
        return np.zeros_like(x)

    def diffusion(x):
        return np.zeros(x.shape + (1,))

    def exact_terminal(bt):
        return np.broadcast_to(x0v, (bt.shape[0], dim)).copy()

    return SdeProblem(
        drift, diffusion, dim, 1, x0v, T, name="zero",
        exact_terminal=exact_terminal, exact_mean=lambda payoff: float(payoff(x0v)[0]),
        params={"x0": x0, "T": T, "dim": dim},
        kernel=(_kernels.ZERO, ()),
    )


PROBLEMS: dict[str, Callable[..., SdeProblem]] = {"lewis35": lewis, "gbm": gbm, "zero": zero}


def identity_payoff(growth_constant: float = 1.0) -> Payoff:
    return Payoff(lambda x: x[:, 0].copy(), growth_constant, "identity")


def square_payoff(growth_constant: float = 1.0) -> Payoff:
    return Payoff(lambda x: np.sum(x * x, axis=1), growth_constant, "square")


def call_payoff(K: float, growth_constant: float = 1.0) -> Payoff:
    return Payoff(lambda x: np.maximum(x[:, 0] - K, 0.0), growth_constant, f"call({K:g})")


PAYOFFS: dict[str, Callable[..., Payoff]] = {
    "identity": identity_payoff,
    "square": square_payoff,
    "call": call_payoff,
}
