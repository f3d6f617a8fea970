"""Homogenized equation and Brownian semigroup on a periodic grid.

The effective operator has constant coefficients, so it is diagonal in the
discrete Fourier basis: the symbol of ``-div D grad`` at wave vector ``k``
is ``k . D k``.  Directions in the kernel of ``D`` drop out of the quadratic
form and are transported unchanged.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .effective_matrix import EffectiveMatrix

__all__ = [
    "GridField",
    "TestFunctionSpec",
    "grid_points",
    "sample_on_grid",
    "solve_effective",
    "effective_resolvent",
    "brownian_semigroup",
    "grad_star",
    "spectral_gradient",
    "interpolate",
    "grid_inner",
    "grid_energy",
    "grid_flow",
]


@dataclass(frozen=True)
class GridField:
    """Values on the nodes ``h * i`` (``h = side / n``) of a periodic grid."""

    values: np.ndarray
    side: float

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if any(n < 4 for n in v.shape):
            raise ValueError(f"grid resolution must be at least 4 per axis, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def resolution(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def spacing(self) -> np.ndarray:
        return np.array([self.side / n for n in self.values.shape])

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def integral(self) -> float:
        return self.cell_volume * float(self.values.sum())

    def to_text(self) -> str:
        head = [
            "# homlab grid field v1",
            "resolution = " + " ".join(str(n) for n in self.values.shape),
            f"side = {self.side:.17g}",
        ]
        body = [format(float(v), ".17g") for v in self.values.ravel()]
        return "\n".join(head + body) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "GridField":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        shape = tuple(int(t) for t in lines[0].split("=")[1].split())
        side = float(lines[1].split("=")[1])
        values = np.array([float(v) for v in lines[2:]]).reshape(shape)
        return cls(values, side)


def grid_points(side: float, resolution: int | tuple[int, ...], d: int | None = None) -> np.ndarray:
    """Node coordinates, shape ``resolution + (d,)``."""
    if isinstance(resolution, int):
        resolution = (resolution,) * (d or 1)
    axes = [np.arange(n) * (side / n) for n in resolution]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def _as_vec(v, d: int) -> np.ndarray:
    a = np.atleast_1d(np.asarray(v, dtype=float))
    if a.size == 1:
        a = np.full(d, float(a[0]))
    if a.shape != (d,):
        raise ValueError(f"expected a vector of length {d}, got {v!r}")
    return a


@dataclass(frozen=True)
class TestFunctionSpec:
    """Smooth periodic function on the torus ``[0, side)^d``.

    ``kind`` is ``gaussian`` (``center``, ``width``; amplitude 1), ``cosine``
    (integer ``k`` vector and ``phase``: ``cos(2 pi k.x / side - phase)``) or
    ``bump`` (``center``, ``radius``; ``exp(1 - 1 / (1 - (r/R)^2))``).
    """

    __test__ = False  # not a pytest class

    kind: str
    side: float
    d: int
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        p = dict(self.params)
        if self.kind == "gaussian":
            p["center"] = _as_vec(p.get("center", self.side / 2), self.d).tolist()
            p["width"] = float(p["width"])
            if not 0 < p["width"] < self.side / 4:
                raise ValueError("gaussian width must lie in (0, side/4)")
        elif self.kind == "cosine":
            k = np.atleast_1d(np.asarray(p.get("k", 1)))
            if k.size == 1 and self.d > 1:
                k = np.concatenate([k, np.zeros(self.d - 1, dtype=int)])
            if k.shape != (self.d,) or np.any(k != np.round(k)):
                raise ValueError(f"cosine mode needs an integer vector of length {self.d}")
            p["k"] = [int(v) for v in k]
            p["phase"] = float(p.get("phase", 0.0))
        elif self.kind == "bump":
            p["center"] = _as_vec(p.get("center", self.side / 2), self.d).tolist()
            p["radius"] = float(p["radius"])
            if not 0 < p["radius"] < self.side / 4:
                raise ValueError("bump radius must lie in (0, side/4)")
        elif self.kind == "constant":
            p["value"] = float(p.get("value", 1.0))
        else:
            raise ValueError(f"unknown test function kind {self.kind!r}")
        object.__setattr__(self, "params", p)

    @classmethod
    def gaussian(cls, side, d, center, width):
        return cls("gaussian", side, d, {"center": center, "width": width})

    @classmethod
    def cosine(cls, side, d, k, phase=0.0):
        return cls("cosine", side, d, {"k": k, "phase": phase})

    @classmethod
    def bump(cls, side, d, center, radius):
        return cls("bump", side, d, {"center": center, "radius": radius})

    def to_dict(self) -> dict:
        return {"kind": self.kind, "side": self.side, "d": self.d, **self.params}

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.d:
            x = x[..., None] if self.d == 1 else x
        S = self.side
        p = self.params
        if self.kind == "constant":
            return np.full(x.shape[:-1], p["value"])
        if self.kind == "cosine":
            k = np.asarray(p["k"], dtype=float)
            return np.cos(2 * math.pi * (x @ k) / S - p["phase"])
        c = np.asarray(p["center"])
        delta = x - c
        if self.kind == "gaussian":
            sigma = p["width"]
            reach = int(math.ceil((0.5 * S + 9.0 * sigma) / S))
            delta = delta - S * np.floor(delta / S + 0.5)
            out = np.zeros(x.shape[:-1])
            for shift in itertools.product(range(-reach, reach + 1), repeat=self.d):
                y = delta + S * np.asarray(shift, dtype=float)
                out += np.exp(-np.sum(y * y, axis=-1) / (2 * sigma * sigma))
            return out
        delta = delta - S * np.floor(delta / S + 0.5)
        r2 = np.sum(delta * delta, axis=-1) / p["radius"] ** 2
        out = np.zeros(x.shape[:-1])
        inside = r2 < 1.0
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
        return out


def sample_on_grid(f, side: float, resolution: int, d: int) -> GridField:
    if isinstance(f, GridField):
        return f
    return GridField(np.asarray(f(grid_points(side, resolution, d)), dtype=float), side)


def _matrix(D) -> np.ndarray:
    return np.atleast_2d(np.asarray(D.D if isinstance(D, EffectiveMatrix) else D, dtype=float))


def _wavevectors(side: float, shape: tuple[int, ...]) -> list[np.ndarray]:
    kappas = [2 * math.pi * np.fft.fftfreq(n, d=side / n) for n in shape]
    return list(np.meshgrid(*kappas, indexing="ij"))


def _symbol(D: np.ndarray, side: float, shape: tuple[int, ...]) -> np.ndarray:
    kap = _wavevectors(side, shape)
    q = np.zeros(shape)
    for i in range(len(shape)):
        for j in range(len(shape)):
            if D[i, j] != 0.0:
                q += D[i, j] * kap[i] * kap[j]
    return q


def _multiply(f: GridField, multiplier: np.ndarray) -> GridField:
    return GridField(np.fft.ifftn(np.fft.fftn(f.values) * multiplier).real, f.side)


def _prepare(D, f, grid):
    Dm = _matrix(D)
    d = Dm.shape[0]
    if not isinstance(f, GridField):
        side = getattr(f, "side", None)
        if side is None:
            raise ValueError("a callable source needs a 'side' attribute; pass a GridField instead")
        f = sample_on_grid(f, side, grid, d)
    if f.dim != d:
        raise ValueError(f"grid dimension {f.dim} does not match D of size {d}")
    return Dm, f


def solve_effective(D, lam: float, f, grid: int = 256) -> GridField:
    """Solve ``-div(D grad u) + lam u = f`` spectrally on the periodic grid."""
    if not lam > 0:
        raise ValueError(f"lam must be positive, got {lam}")
    Dm, fg = _prepare(D, f, grid)
    return _multiply(fg, 1.0 / (lam + _symbol(Dm, fg.side, fg.resolution)))


effective_resolvent = solve_effective


def brownian_semigroup(D, t: float, f, grid: int = 256) -> GridField:
    """Heat semigroup of Brownian motion with covariance ``2 D`` at time ``t``."""
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    Dm, fg = _prepare(D, f, grid)
    if t == 0:
        return GridField(fg.values.copy(), fg.side)
    return _multiply(fg, np.exp(-t * _symbol(Dm, fg.side, fg.resolution)))


def spectral_gradient(u: GridField) -> np.ndarray:
    """Exact derivative of the trigonometric interpolant; Nyquist modes dropped."""
    shape = u.resolution
    kap = _wavevectors(u.side, shape)
    uh = np.fft.fftn(u.values)
    out = np.empty((u.dim,) + shape)
    for i, n in enumerate(shape):
        k = kap[i].copy()
        if n % 2 == 0:
            idx = [slice(None)] * u.dim
            idx[i] = n // 2
            k[tuple(idx)] = 0.0
        out[i] = np.fft.ifftn(1j * k * uh).real
    return out


def grad_star(basis: EffectiveMatrix | np.ndarray, u: GridField) -> np.ndarray:
    """Gradient projected on the nondegenerate eigendirections of ``D``.

    ``basis`` is an :class:`EffectiveMatrix` or an explicit projector matrix.
    """
    P = basis.projector() if isinstance(basis, EffectiveMatrix) else np.asarray(basis, dtype=float)
    g = spectral_gradient(u)
    return np.tensordot(P, g, axes=(1, 0))


def grid_inner(u: GridField, v) -> float:
    """``int u v dx`` by the periodic trapezoidal rule."""
    vv = v.values if isinstance(v, GridField) else np.asarray(v)
    return u.cell_volume * float(np.sum(u.values * vv))


def grid_flow(D, u: GridField, phi: GridField) -> float:
    """``int D grad_* u . grad_* phi dx``."""
    em = D if isinstance(D, EffectiveMatrix) else EffectiveMatrix.from_matrix(D)
    gu = grad_star(em, u)
    gp = grad_star(em, phi)
    Dgu = np.tensordot(em.D, gu, axes=(1, 0))
    return u.cell_volume * float(np.sum(Dgu * gp))


def grid_energy(D, u: GridField) -> float:
    """``int grad_* u . D grad_* u dx``."""
    return grid_flow(D, u, u)


def interpolate(u: GridField, points) -> np.ndarray:
    """Periodic multilinear interpolation of grid values at arbitrary points."""
    pts = np.asarray(points, dtype=float).reshape(-1, u.dim)
    shape = np.array(u.resolution)
    s = np.mod(pts / u.spacing, shape)
    base = np.floor(s).astype(np.int64)
    frac = s - base
    out = np.zeros(pts.shape[0])
    for corner in itertools.product((0, 1), repeat=u.dim):
        corner = np.array(corner)
        idx = np.mod(base + corner, shape)
        weight = np.prod(np.where(corner == 1, frac, 1.0 - frac), axis=1)
        out += weight * u.values[tuple(idx.T)]
    return out
