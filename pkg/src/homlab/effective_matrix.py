"""Homogenized matrix from periodic corrector problems.

For a direction ``a`` the corrector ``chi`` solves, at every atom ``x``,

    sum_y c_{x,y} (a . z_{xy} + chi(y) - chi(x)) = 0,

and the quadratic form is

    a . D a = (1 / sum_x n_x) sum_{pairs} c_{x,y} (a . z_{xy} + chi(y) - chi(x))^2,

which is the Palm-weighted variational functional restricted to the torus,
with each unordered pair standing for both jump orientations.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .env import Environment
from .generator import SparseGenerator, assemble
from .solver import SolveOptions, SolveStats, SolverError, conjugate_gradient

__all__ = [
    "Corrector",
    "EffectiveMatrix",
    "DisconnectedWarning",
    "solve_corrector",
    "sample_D",
    "estimate_D",
    "variational_upper_bound",
    "eigendecompose",
    "jacobi_eigh",
]

log = logging.getLogger(__name__)


class DisconnectedWarning(UserWarning):
    pass


@dataclass
class Corrector:
    direction: np.ndarray
    chi: np.ndarray
    residual: float
    stats: SolveStats = field(repr=False, default_factory=SolveStats)


@dataclass
class EffectiveMatrix:
    D: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns
    d_star: int
    gamma_tol: float
    stderr: np.ndarray | None = None
    flux_discrepancy: float = 0.0
    upper_bound: np.ndarray | None = None
    samples: list[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def dim(self) -> int:
        return self.D.shape[0]

    @property
    def kernel_basis(self) -> np.ndarray:
        return self.eigenvectors[:, self.d_star :]

    def projector(self) -> np.ndarray:
        """Orthogonal projector onto the span of the nondegenerate eigenvectors."""
        e = self.eigenvectors[:, : self.d_star]
        return e @ e.T

    def to_dict(self) -> dict:
        d = self.dim
        return {
            "D": self.D.reshape(-1).tolist(),
            "stderr": (self.stderr if self.stderr is not None else np.zeros((d, d))).reshape(-1).tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "eigenvectors": self.eigenvectors.T.tolist(),
            "d_star": int(self.d_star),
            "gamma_tol": self.gamma_tol,
            "flux_discrepancy": self.flux_discrepancy,
            "upper_bound": (self.upper_bound.reshape(-1).tolist() if self.upper_bound is not None else None),
        }

    @classmethod
    def from_matrix(cls, D, gamma_tol: float | None = None) -> "EffectiveMatrix":
        D = np.atleast_2d(np.asarray(D, dtype=float))
        vecs, vals, d_star, tol = eigendecompose(D, gamma_tol)
        return cls(D=D, eigenvalues=vals, eigenvectors=vecs, d_star=d_star, gamma_tol=tol)


def _as_generator(obj: Environment | SparseGenerator) -> SparseGenerator:
    return obj if isinstance(obj, SparseGenerator) else assemble(obj, 1.0)


def _component_projector(gen: SparseGenerator):
    ncomp, labels = gen.env.components()
    w = gen.weights
    if ncomp == 1:
        total = w.sum()
        return ncomp, lambda v: v - float(np.dot(w, v)) / total
    if ncomp > 1:
        warnings.warn(
            f"environment graph has {ncomp} connected components; correctors are solved per component",
            DisconnectedWarning,
            stacklevel=3,
        )
    mass = np.bincount(labels, w, minlength=ncomp)

    def project(v):
        means = np.bincount(labels, w * v, minlength=ncomp) / mass
        return v - means[labels]

    return ncomp, project


def _corrector_rhs(gen: SparseGenerator, a: np.ndarray) -> np.ndarray:
    flux = gen.conductance * (gen.displacement @ a)
    n = gen.n_atoms
    return np.bincount(gen.edges[:, 0], flux, minlength=n) - np.bincount(gen.edges[:, 1], flux, minlength=n)


def solve_corrector(
    gen: Environment | SparseGenerator,
    a,
    opts: SolveOptions | None = None,
    _project=None,
) -> Corrector:
    """Corrector for direction ``a`` on the microscopic (``eps = 1``) graph.

    CG runs on ``chi -> (G chi) / n``, self-adjoint for the weights ``n``,
    with the constants of every connected component projected out.
    """
    gen = _as_generator(gen)
    opts = opts or SolveOptions()
    a = np.asarray(a, dtype=float).reshape(gen.dim)
    w = gen.weights
    project = _project or _component_projector(gen)[1]
    rhs = _corrector_rhs(gen, a) / w
    precond = None
    if opts.preconditioner == "jacobi":
        precond = np.where(gen.total_rate > 0, 1.0 / np.maximum(gen.total_rate, 1e-300), 0.0)

    def matvec(v):
        return (gen.laplacian @ v) / w

    chi, stats = conjugate_gradient(
        matvec,
        rhs,
        w,
        tol=opts.tol,
        max_iter=opts.iteration_cap(gen.n_atoms),
        precond=precond,
        project=project,
    )
    chi = project(chi)
    r = rhs - matvec(chi)
    bnorm = math.sqrt(float(np.dot(w, rhs * rhs)))
    residual = math.sqrt(float(np.dot(w, r * r))) / bnorm if bnorm > 0 else 0.0
    stats.residual = residual
    if not stats.converged:
        raise SolverError(
            f"corrector CG did not converge in {stats.iterations} iterations (residual {residual:.3e})", stats
        )
    return Corrector(direction=a, chi=chi, residual=residual, stats=stats)


def _symmetric_form(c: np.ndarray, g: np.ndarray, norm: float) -> np.ndarray:
    d = g.shape[1]
    out = np.empty((d, d))
    for i in range(d):
        for j in range(i, d):
            out[i, j] = out[j, i] = float(np.dot(c, g[:, i] * g[:, j])) / norm
    return out


def variational_upper_bound(env: Environment | SparseGenerator) -> np.ndarray:
    """Zero-corrector value of the quadratic form, polarized to a matrix."""
    gen = _as_generator(env)
    return _symmetric_form(gen.conductance, gen.displacement, float(gen.weights.sum()))


@dataclass
class DSample:
    D: np.ndarray
    flux: np.ndarray
    upper_bound: np.ndarray
    correctors: list[Corrector]

    @property
    def flux_discrepancy(self) -> float:
        scale = max(float(np.abs(self.D).max()), np.finfo(float).tiny)
        return float(np.abs(self.D - self.flux).max()) / scale


def sample_D(env: Environment | SparseGenerator, opts: SolveOptions | None = None) -> DSample:
    """Gradient-form and flux-form estimates of ``D`` on one environment."""
    gen = _as_generator(env)
    d = gen.dim
    _, project = _component_projector(gen)
    correctors = [solve_corrector(gen, np.eye(d)[i], opts, _project=project) for i in range(d)]
    z = gen.displacement
    grad = np.stack([z[:, i] + gen.increments(correctors[i].chi) for i in range(d)], axis=1)
    total = float(gen.weights.sum())
    c = gen.conductance
    D = _symmetric_form(c, grad, total)
    flux = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            flux[i, j] = float(np.dot(c, z[:, i] * grad[:, j])) / total
    return DSample(D=D, flux=flux, upper_bound=_symmetric_form(c, z, total), correctors=correctors)


def estimate_D(
    envs: Environment | Iterable[Environment],
    opts: SolveOptions | None = None,
    gamma_tol: float | None = None,
) -> EffectiveMatrix:
    """Average the per-replica corrector estimates of ``D``."""
    if isinstance(envs, (Environment, SparseGenerator)):
        envs = [envs]
    samples = [sample_D(e, opts) for e in envs]
    if not samples:
        raise ValueError("need at least one replica")
    Ds = np.stack([s.D for s in samples])
    D = Ds.mean(axis=0)
    D = 0.5 * (D + D.T)
    stderr = Ds.std(axis=0, ddof=1) / math.sqrt(len(samples)) if len(samples) > 1 else np.zeros_like(D)
    vecs, vals, d_star, tol = eigendecompose(D, gamma_tol)
    return EffectiveMatrix(
        D=D,
        eigenvalues=vals,
        eigenvectors=vecs,
        d_star=d_star,
        gamma_tol=tol,
        stderr=stderr,
        flux_discrepancy=max(s.flux_discrepancy for s in samples),
        upper_bound=np.mean([s.upper_bound for s in samples], axis=0),
        samples=[s.D for s in samples],
    )


def jacobi_eigh(A, tol: float = 1e-15, max_sweeps: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi rotations for a small symmetric matrix.

    Returns unsorted eigenvalues and the matrix of eigenvectors (columns).
    """
    A = np.array(A, dtype=float)
    n = A.shape[0]
    V = np.eye(n)
    scale = max(np.linalg.norm(A), np.finfo(float).tiny)
    for _ in range(max_sweeps):
        off = math.sqrt(float(np.sum(np.triu(A, 1) ** 2)))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if A[p, q] == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * A[p, q])
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                J = np.eye(n)
                J[p, p] = J[q, q] = c
                J[p, q] = s
                J[q, p] = -s
                A = J.T @ A @ J
                A[p, q] = A[q, p] = 0.0
                V = V @ J
    return np.diag(A).copy(), V


def eigendecompose(D, gamma_tol: float | None = None) -> tuple[np.ndarray, np.ndarray, int, float]:
    """Orthonormal eigenbasis of ``D`` sorted by decreasing eigenvalue.

    Returns ``(vectors, values, d_star, gamma_tol)`` where ``vectors[:, i]``
    belongs to ``values[i]`` and ``d_star`` counts values above ``gamma_tol``
    (default ``1e-8 * max(gamma_1, 1)``).
    """
    D = np.atleast_2d(np.asarray(D, dtype=float))
    if not np.allclose(D, D.T, rtol=0, atol=1e-12 * max(1.0, float(np.abs(D).max()))):
        raise ValueError("matrix is not symmetric")
    vals, vecs = jacobi_eigh(0.5 * (D + D.T))
    order = sorted(range(len(vals)), key=lambda i: (-vals[i], i))
    vals = vals[order]
    vecs = vecs[:, order]
    for k in range(vecs.shape[1]):
        j = int(np.argmax(np.abs(vecs[:, k])))
        if vecs[j, k] < 0:
            vecs[:, k] = -vecs[:, k]
    if gamma_tol is None:
        gamma_tol = 1e-8 * max(float(vals[0]), 1.0)
    d_star = int(np.sum(vals > gamma_tol))
    return vecs, vals, d_star, float(gamma_tol)
