"""Intensity, Palm moments of the jump rates, and ergodic spatial averages.

Palm expectations are realized as weight-averaged spatial means over one
sample; error bars come from aggregating independent replicas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .env import Environment

__all__ = [
    "PalmEstimate",
    "aggregate",
    "estimate_intensity",
    "estimate_lambda_k",
    "lambda_k_per_atom",
    "ergodic_average",
]


@dataclass(frozen=True)
class PalmEstimate:
    value: float
    standard_error: float = 0.0
    sample_count: int = 1

    def __post_init__(self) -> None:
        if self.standard_error < 0 or self.sample_count < 1:
            raise ValueError("invalid estimate")

    def to_dict(self) -> dict:
        return {"value": self.value, "std_error": self.standard_error, "samples": self.sample_count}


def aggregate(values: Iterable[float]) -> PalmEstimate:
    """Mean and standard error of the mean over replicas."""
    v = np.asarray(list(values), dtype=float)
    if v.size == 0:
        raise ValueError("no samples")
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return PalmEstimate(float(v.mean()), se, int(v.size))


def _combine(envs, fn) -> PalmEstimate:
    if isinstance(envs, Environment):
        return PalmEstimate(fn(envs))
    return aggregate(fn(e) for e in envs)


def estimate_intensity(env: Environment | Iterable[Environment]) -> PalmEstimate:
    """Mass per unit volume, ``sum_x n_x / L^d``."""
    return _combine(env, lambda e: float(e.weights.sum()) / e.box.volume)


def lambda_k_per_atom(env: Environment, k: int) -> np.ndarray:
    """``lambda_k(x) = sum_y r_{x,y} |z_{xy}|^k`` for every atom ``x``."""
    if k not in (0, 1, 2):
        raise ValueError(f"k must be 0, 1 or 2, got {k}")
    length = np.linalg.norm(env.displacement, axis=1) ** k
    fwd, bwd = env.rates()
    n = env.n_atoms
    return np.bincount(env.edges[:, 0], fwd * length, minlength=n) + np.bincount(
        env.edges[:, 1], bwd * length, minlength=n
    )


def estimate_lambda_k(env: Environment | Iterable[Environment], k: int) -> PalmEstimate:
    """Palm expectation of ``lambda_k`` as the ``n``-weighted atom average."""

    def one(e: Environment) -> float:
        if e.n_atoms == 0:
            raise ValueError("empty environment")
        return float(np.dot(e.weights, lambda_k_per_atom(e, k)) / e.weights.sum())

    return _combine(env, one)


def ergodic_average(
    env: Environment,
    eps: float,
    phi: Callable[[np.ndarray], np.ndarray],
    f: np.ndarray | float,
    side: float | None = None,
) -> float:
    """``sum_x eps^d n_x phi(eps x) f(x)``.

    ``phi`` is evaluated at macroscopic positions.  When ``side`` (or
    ``phi.side``) is known it must equal ``eps * L``.
    """
    side = side if side is not None else getattr(phi, "side", None)
    macro = eps * env.box.L
    if side is not None and not math.isclose(side, macro, rel_tol=1e-12):
        raise ValueError(f"test function lives on a torus of side {side}, environment covers {macro}")
    values = np.asarray(phi(eps * env.positions), dtype=float)
    f = np.broadcast_to(np.asarray(f, dtype=float), values.shape)
    return float(eps**env.dim * np.dot(env.weights, values * f))
