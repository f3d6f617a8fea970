"""Diffusively rescaled reversible generator on one environment.

For ``eps > 0`` the generator acts on functions of the atoms as

    (L u)(x) = eps^-2 sum_y r_{x,y} (u(y) - u(x)),

it is self-adjoint for the weights ``mu_x = eps^d n_x`` and its Dirichlet form
is ``eps^(d-2) sum_{pairs} c_{x,y} (u(y) - u(x))^2``.  Atom fields are plain
numpy vectors indexed like ``env.positions``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .env import Environment

__all__ = ["SparseGenerator", "assemble"]


@dataclass(frozen=True, eq=False)
class SparseGenerator:
    """Assembled generator, measure vector and edge list of one environment."""

    env: Environment
    eps: float
    mu: np.ndarray
    laplacian: sp.csr_matrix
    total_rate: np.ndarray

    @property
    def n_atoms(self) -> int:
        return self.env.n_atoms

    @property
    def dim(self) -> int:
        return self.env.dim

    @property
    def edges(self) -> np.ndarray:
        return self.env.edges

    @property
    def conductance(self) -> np.ndarray:
        return self.env.conductance

    @property
    def displacement(self) -> np.ndarray:
        return self.env.displacement

    @property
    def weights(self) -> np.ndarray:
        return self.env.weights

    @property
    def positions(self) -> np.ndarray:
        """Macroscopic atom positions ``eps * x``."""
        return self.eps * self.env.positions

    @property
    def side(self) -> float:
        return self.eps * self.env.box.L

    @property
    def max_rate(self) -> float:
        """Uniformization constant ``eps^-2 max_x r_x``."""
        return float(self.total_rate.max()) / self.eps**2 if self.n_atoms else 0.0

    def nu_weights(self) -> np.ndarray:
        """``nu^eps`` mass ``eps^d c_{x,y}`` of each stored pair (one orientation)."""
        return self.eps**self.dim * self.conductance

    def _check(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.n_atoms,):
            raise ValueError(f"field of shape {u.shape} does not match {self.n_atoms} atoms")
        return u

    def apply(self, u) -> np.ndarray:
        """``L u``."""
        u = self._check(u)
        return -(self.laplacian @ u) / (self.eps**2 * self.env.weights)

    def stiffness(self, u) -> np.ndarray:
        """``-mu * L u``, the symmetric form of the operator."""
        u = self._check(u)
        return self.eps ** (self.dim - 2) * (self.laplacian @ u)

    def increments(self, u) -> np.ndarray:
        u = self._check(u)
        return u[self.edges[:, 1]] - u[self.edges[:, 0]]

    def mu_inner(self, u, v) -> float:
        return float(np.dot(self.mu, self._check(u) * self._check(v)))

    def mu_norm(self, u) -> float:
        return float(np.sqrt(self.mu_inner(u, u)))

    def mu_mass(self, u=None) -> float:
        if u is None:
            return float(self.mu.sum())
        return float(np.dot(self.mu, self._check(u)))

    def form(self, u, v) -> float:
        """``(1/2) <grad_eps u, grad_eps v>_nu``."""
        return float(
            self.eps ** (self.dim - 2) * np.dot(self.conductance, self.increments(u) * self.increments(v))
        )

    def dirichlet_energy(self, u) -> float:
        du = self.increments(u)
        return float(self.eps ** (self.dim - 2) * np.dot(self.conductance, du * du))

    def nu_norm_sq_of_gradient(self, u) -> float:
        """``<grad_eps u, grad_eps u>_nu``, both jump orientations counted."""
        return 2.0 * self.dirichlet_energy(u)

    def restrict(self, phi: Callable[[np.ndarray], np.ndarray] | float) -> np.ndarray:
        """Sample a macroscopic function at the rescaled atom positions."""
        if callable(phi):
            side = getattr(phi, "side", None)
            if side is not None and not np.isclose(side, self.side, rtol=1e-12):
                raise ValueError(f"function lives on a torus of side {side}, generator covers {self.side}")
            return np.asarray(phi(self.positions), dtype=float).reshape(self.n_atoms)
        return np.full(self.n_atoms, float(phi))

    def edge_dump(self) -> str:
        return self.env.to_text({"eps": format(self.eps, ".17g")})


def assemble(env: Environment, eps: float = 1.0) -> SparseGenerator:
    """Assemble ``L^eps`` for ``env``."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    n = env.n_atoms
    i, j = env.edges[:, 0], env.edges[:, 1]
    c = env.conductance
    deg = np.bincount(i, c, minlength=n) + np.bincount(j, c, minlength=n)
    off = sp.coo_matrix(
        (np.concatenate([-c, -c]), (np.concatenate([i, j]), np.concatenate([j, i]))), shape=(n, n)
    )
    lap = (off + sp.diags(deg)).tocsr()
    lap.sum_duplicates()
    lap.sort_indices()
    mu = eps**env.dim * env.weights
    return SparseGenerator(env=env, eps=float(eps), mu=mu, laplacian=lap, total_rate=deg / env.weights)
