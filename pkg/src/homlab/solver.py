"""Massive Poisson solves, resolvents and semigroups of a :class:`SparseGenerator`.

All inner products are weighted by ``mu``; the operator ``lam - L`` is
self-adjoint and positive in that inner product, so plain conjugate gradient
applies without symmetrizing the matrix.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import poisson

from .generator import SparseGenerator

__all__ = [
    "SolveOptions",
    "SolveStats",
    "SolverError",
    "QuadratureSpec",
    "conjugate_gradient",
    "solve_massive_poisson",
    "resolvent",
    "semigroup_action",
    "resolvent_from_semigroup",
    "poisson_truncation",
]


@dataclass(frozen=True)
class SolveOptions:
    tol: float = 1e-10
    max_iter: int | None = None  # default 20 * N
    tail_tol: float = 1e-12
    preconditioner: str = "none"  # or "jacobi"

    def __post_init__(self) -> None:
        if not 0.0 < self.tol < 1.0:
            raise ValueError(f"tolerance must lie in (0, 1), got {self.tol}")
        if not 0.0 < self.tail_tol < 1.0:
            raise ValueError(f"tail tolerance must lie in (0, 1), got {self.tail_tol}")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.preconditioner not in ("none", "jacobi"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")

    def iteration_cap(self, n: int) -> int:
        return self.max_iter if self.max_iter is not None else max(20 * n, 1)


@dataclass
class SolveStats:
    iterations: int = 0
    residual: float = 0.0
    seconds: float = 0.0
    converged: bool = True
    history: list[float] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {"iterations": self.iterations, "residual": self.residual, "seconds": self.seconds}


class SolverError(RuntimeError):
    def __init__(self, message: str, stats: SolveStats):
        super().__init__(message)
        self.stats = stats


def conjugate_gradient(
    matvec: Callable[[np.ndarray], np.ndarray],
    rhs: np.ndarray,
    weights: np.ndarray,
    *,
    tol: float,
    max_iter: int,
    precond: np.ndarray | None = None,
    project: Callable[[np.ndarray], np.ndarray] | None = None,
    callback: Callable[[np.ndarray], None] | None = None,
) -> tuple[np.ndarray, SolveStats]:
    """Preconditioned CG for an operator self-adjoint in ``<u, v> = sum w u v``.

    ``precond`` holds the inverse diagonal of a Jacobi preconditioner.
    ``project`` is applied to every residual and search direction; it must be
    the orthogonal projector onto an invariant subspace (e.g. mean-zero fields).
    Stops when the weighted residual norm is at most ``tol * ||rhs||``.
    """

    def dot(a, b):
        return float(np.dot(weights, a * b))

    t0 = time.perf_counter()
    x = np.zeros_like(rhs)
    r = project(rhs) if project else rhs.copy()
    bnorm = np.sqrt(dot(rhs, rhs))
    stats = SolveStats()
    if bnorm == 0.0:
        stats.seconds = time.perf_counter() - t0
        return x, stats
    z = r * precond if precond is not None else r
    if project:
        z = project(z)
    p = z.copy()
    rz = dot(r, z)
    res = np.sqrt(dot(r, r)) / bnorm
    stats.history.append(res)
    k = 0
    while res > tol and k < max_iter:
        q = matvec(p)
        pq = dot(p, q)
        if pq <= 0.0:
            break
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        if project:
            r = project(r)
        z = r * precond if precond is not None else r
        rz_new = dot(r, z)
        p = z + (rz_new / rz) * p
        if project:
            p = project(p)
        rz = rz_new
        k += 1
        res = np.sqrt(dot(r, r)) / bnorm
        stats.history.append(res)
        if callback is not None:
            callback(x)
    stats.iterations = k
    stats.residual = res
    stats.converged = res <= tol
    stats.seconds = time.perf_counter() - t0
    return x, stats


def solve_massive_poisson(
    gen: SparseGenerator,
    lam: float,
    f,
    opts: SolveOptions | None = None,
    callback: Callable[[np.ndarray], None] | None = None,
) -> tuple[np.ndarray, SolveStats]:
    """Solve ``lam u - L u = f``.

    The constant component of ``f`` is solved exactly (``L`` kills constants)
    and CG runs on the mean-zero remainder.
    """
    if not lam > 0:
        raise ValueError(f"lam must be positive, got {lam}")
    opts = opts or SolveOptions()
    f = gen._check(f)
    mu = gen.mu
    total = mu.sum()
    mean = float(np.dot(mu, f)) / total
    f0 = f - mean

    def project(v):
        return v - float(np.dot(mu, v)) / total

    def matvec(v):
        return lam * v - gen.apply(v)

    precond = None
    if opts.preconditioner == "jacobi":
        precond = 1.0 / (lam + gen.total_rate / gen.eps**2)
    x, stats = conjugate_gradient(
        matvec,
        f0,
        mu,
        tol=opts.tol * gen.mu_norm(f) / max(np.sqrt(np.dot(mu, f0 * f0)), 1e-300),
        max_iter=opts.iteration_cap(gen.n_atoms),
        precond=precond,
        project=project,
        callback=callback,
    )
    u = x + mean / lam
    fnorm = gen.mu_norm(f)
    r = f - matvec(u)
    stats.residual = float(np.sqrt(np.dot(mu, r * r)) / fnorm) if fnorm > 0 else 0.0
    if not stats.converged:
        raise SolverError(
            f"CG did not reach tolerance {opts.tol} in {stats.iterations} iterations "
            f"(residual {stats.residual:.3e})",
            stats,
        )
    return u, stats


def resolvent(gen: SparseGenerator, lam: float, f, opts: SolveOptions | None = None) -> np.ndarray:
    """``(lam - L)^-1 f``."""
    return solve_massive_poisson(gen, lam, f, opts)[0]


def poisson_truncation(rate: float, tail_tol: float) -> int:
    """Smallest ``n`` with ``P(Poisson(rate) > n) <= tail_tol``."""
    n = int(poisson.isf(tail_tol, rate))
    while poisson.sf(n, rate) > tail_tol:
        n += 1
    while n > 0 and poisson.sf(n - 1, rate) <= tail_tol:
        n -= 1
    return n


def semigroup_action(gen: SparseGenerator, t: float, f, opts: SolveOptions | None = None) -> np.ndarray:
    """``exp(t L) f`` by uniformization.

    With ``Lam = max_x eps^-2 r_x`` the jump operator ``I + L / Lam`` has
    nonnegative entries and ``exp(t L) = sum_n Poisson(Lam t; n) (I + L/Lam)^n``.
    The series is cut where the Poisson tail drops below ``opts.tail_tol``.
    """
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    opts = opts or SolveOptions()
    f = gen._check(f)
    rate = gen.max_rate
    if t == 0 or rate == 0:
        return f.copy()
    a = rate * t
    nmax = poisson_truncation(a, opts.tail_tol)
    w = poisson.pmf(np.arange(nmax + 1), a)
    v = f.copy()
    out = w[0] * v
    for k in range(1, nmax + 1):
        v = v + gen.apply(v) / rate
        out += w[k] * v
    return out


@dataclass(frozen=True)
class QuadratureSpec:
    """Composite Gauss-Legendre rule for ``int_0^T e^{-lam s} P_s f ds``.

    Panels grow geometrically from ``first_panel`` (default ``1 / Lam``) up to
    ``T = horizon / lam``; each panel carries ``points`` nodes.
    """

    points: int = 16
    horizon: float = 40.0
    first_panel: float | None = None

    def panels(self, lam: float, rate: float) -> np.ndarray:
        T = self.horizon / lam
        h0 = self.first_panel or (1.0 / rate if rate > 0 else T)
        h0 = min(h0, T)
        edges = [0.0, h0]
        while edges[-1] < T:
            edges.append(min(2.0 * edges[-1], T))
        return np.array(edges)


def resolvent_from_semigroup(
    gen: SparseGenerator,
    lam: float,
    f,
    quad: QuadratureSpec | None = None,
    opts: SolveOptions | None = None,
) -> np.ndarray:
    """Laplace transform of the semigroup by quadrature; a cross-check of :func:`resolvent`.

    The neglected tail beyond ``T`` is bounded by ``exp(-lam T) ||f|| / lam``.
    """
    if not lam > 0:
        raise ValueError(f"lam must be positive, got {lam}")
    quad = quad or QuadratureSpec()
    f = gen._check(f)
    edges = quad.panels(lam, gen.max_rate)
    x, w = np.polynomial.legendre.leggauss(quad.points)
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        nodes.append(0.5 * (b - a) * x + 0.5 * (a + b))
        weights.append(0.5 * (b - a) * w)
    nodes = np.concatenate(nodes)
    weights = np.concatenate(weights)
    out = np.zeros_like(f)
    state = f.copy()
    s_prev = 0.0
    for s, ws in zip(nodes, weights):
        state = semigroup_action(gen, s - s_prev, state, opts)
        s_prev = s
        out += ws * np.exp(-lam * s) * state
    return out
