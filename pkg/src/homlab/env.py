"""Finite periodic samples of random environments.

An environment is a finite set of atoms on the torus ``[0, L)^d`` carrying
weights ``n_x`` and a symmetric conductance ``c_{x,y} = n_x r_{x,y}`` stored
once per unordered pair, together with the periodic jump vector of the pair.

Random draws for lattice models are counter based: the value attached to a
bond is a hash of ``(seed, site, jump vector)``, so it does not depend on the
box size or on iteration order.  Restricting a large sample to a smaller box
therefore reuses the same bond variables.
"""

from __future__ import annotations

import enum
import itertools
import json
import math
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

__all__ = [
    "BoxSpec",
    "ConductanceLaw",
    "MarkLaw",
    "KernelVariant",
    "RateKernel",
    "Environment",
    "GenerationError",
    "periodic_displacement",
    "generate_nn_conductance",
    "generate_percolation",
    "generate_mott",
    "generate_long_range",
    "mott_rate",
    "mott_environment",
    "make_environment",
    "counter_uniform",
]


class GenerationError(RuntimeError):
    """The sampled environment is unusable (empty cluster, no points)."""


# -- counter-based uniforms -------------------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def counter_uniform(seed: int, stream: int, keys: np.ndarray) -> np.ndarray:
    """Uniform [0, 1) variates that are a pure function of (seed, stream, key)."""
    keys = np.asarray(keys, dtype=np.uint64)
    with np.errstate(over="ignore"):
        base = _mix64(np.uint64(seed % 2**64) + _GOLDEN * np.uint64(stream + 1))
        z = _mix64(base ^ _mix64(keys * _GOLDEN + np.uint64(0x632BE59BD9B4E019)))
    return (z >> np.uint64(11)).astype(np.float64) * 2.0**-53


def _site_keys(coords: np.ndarray) -> np.ndarray:
    # 21 bits per axis, d <= 3
    coords = np.asarray(coords, dtype=np.int64)
    key = np.zeros(coords.shape[0], dtype=np.uint64)
    for k in range(coords.shape[1]):
        key |= coords[:, k].astype(np.uint64) << np.uint64(21 * k)
    return key


def _bond_keys(coords: np.ndarray, z: np.ndarray) -> np.ndarray:
    zkey = 0
    for k, zk in enumerate(z):
        zkey |= (int(zk) + 2**15) << (16 * k)
    with np.errstate(over="ignore"):
        return _mix64(_site_keys(coords)) ^ _mix64(np.uint64(zkey) * _GOLDEN + np.uint64(1))


# -- parameter types --------------------------------------------------------


@dataclass(frozen=True)
class BoxSpec:
    """Periodic sampling window ``[0, L)^d``."""

    d: int
    L: float
    periodic: bool = True

    def __post_init__(self) -> None:
        if not 1 <= int(self.d) <= 3 or int(self.d) != self.d:
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.d}")
        if not self.L > 0:
            raise ValueError(f"box side must be positive, got {self.L}")
        if not self.periodic:
            raise ValueError("only periodic boxes are supported")

    @property
    def is_lattice(self) -> bool:
        return float(self.L).is_integer()

    @property
    def volume(self) -> float:
        return float(self.L) ** self.d

    def lattice_side(self) -> int:
        if not self.is_lattice:
            raise ValueError(f"lattice models need an integer box side, got {self.L}")
        return int(self.L)


@dataclass(frozen=True)
class ConductanceLaw:
    """Law of a single bond conductance.

    ``kind`` is one of ``constant`` (``c``), ``two_point`` (``c1`` with
    probability ``q``, else ``c2``) or ``uniform`` (on ``[a, b]``).
    """

    kind: str = "constant"
    c: float = 1.0
    c1: float = 1.0
    c2: float = 1.0
    q: float = 0.5
    a: float = 1.0
    b: float = 1.0

    def __post_init__(self) -> None:
        if self.kind == "constant":
            positive = [self.c]
        elif self.kind == "two_point":
            positive = [self.c1, self.c2]
            if not 0.0 <= self.q <= 1.0:
                raise ValueError(f"two-point probability must lie in [0, 1], got {self.q}")
        elif self.kind == "uniform":
            positive = [self.a, self.b]
            if self.b < self.a:
                raise ValueError("uniform law needs a <= b")
        else:
            raise ValueError(f"unknown conductance law {self.kind!r}")
        if any(not v > 0 for v in positive):
            raise ValueError(f"conductance law parameters must be positive: {self}")

    def from_uniform(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.kind == "constant":
            return np.full(u.shape, float(self.c))
        if self.kind == "two_point":
            return np.where(u < self.q, float(self.c1), float(self.c2))
        return self.a + (self.b - self.a) * u

    def mean(self) -> float:
        if self.kind == "constant":
            return float(self.c)
        if self.kind == "two_point":
            return self.q * self.c1 + (1.0 - self.q) * self.c2
        return 0.5 * (self.a + self.b)

    def to_dict(self) -> dict[str, Any]:
        keys = {"constant": ("c",), "two_point": ("c1", "c2", "q"), "uniform": ("a", "b")}[self.kind]
        return {"kind": self.kind, **{k: float(getattr(self, k)) for k in keys}}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ConductanceLaw":
        return cls(**data)


@dataclass(frozen=True)
class MarkLaw:
    """Law of the Mott energy marks: ``zero`` or ``uniform`` on ``[a, b]``."""

    kind: str = "zero"
    a: float = -1.0
    b: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("zero", "uniform"):
            raise ValueError(f"unknown mark law {self.kind!r}")
        if self.kind == "uniform" and self.b < self.a:
            raise ValueError("uniform mark law needs a <= b")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros(n)
        return rng.uniform(self.a, self.b, size=n)

    def to_dict(self) -> dict[str, Any]:
        if self.kind == "zero":
            return {"kind": "zero"}
        return {"kind": self.kind, "a": float(self.a), "b": float(self.b)}


class KernelVariant(str, enum.Enum):
    NN_CONDUCTANCE = "NN_CONDUCTANCE"
    LONG_RANGE_CONDUCTANCE = "LONG_RANGE_CONDUCTANCE"
    PERCOLATION = "PERCOLATION"
    MOTT = "MOTT"
    CUSTOM = "CUSTOM"


@dataclass(frozen=True)
class RateKernel:
    variant: KernelVariant
    r_max: float
    params: dict[str, Any] = field(default_factory=dict)


# -- geometry ---------------------------------------------------------------


def periodic_displacement(x, y, L: float) -> np.ndarray:
    """Representative of ``y - x`` modulo ``L`` with components in ``[-L/2, L/2)``."""
    delta = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
    return delta - L * np.floor((delta + 0.5 * L) / L)


# -- environment ------------------------------------------------------------


def _frozen(a: np.ndarray, dtype=None) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Environment:
    """Finite periodic sample of the random medium.

    Attributes:
        box: the sampling torus.
        positions: ``(N, d)`` atom positions in ``[0, L)^d``.
        weights: ``(N,)`` atom weights ``n_x > 0``.
        edges: ``(E, 2)`` atom indices, one row per unordered pair.
        conductance: ``(E,)`` symmetric ``c_{x,y} = n_x r_{x,y} > 0``.
        displacement: ``(E, d)`` periodic jump vector from ``edges[:, 0]``
            to ``edges[:, 1]``.
        kernel: the rate kernel that produced the edges.
        seed: master seed.
        model: free-form model name.
        marks: optional ``(N,)`` Mott energies.
    """

    box: BoxSpec
    positions: np.ndarray
    weights: np.ndarray
    edges: np.ndarray
    conductance: np.ndarray
    displacement: np.ndarray
    kernel: RateKernel
    seed: int = 0
    model: str = "custom"
    marks: np.ndarray | None = None

    def __post_init__(self) -> None:
        d = self.box.d
        pos = np.asarray(self.positions, dtype=float).reshape(-1, d)
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        disp = np.asarray(self.displacement, dtype=float).reshape(-1, d)
        cond = np.asarray(self.conductance, dtype=float).reshape(-1)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if w.shape[0] != pos.shape[0]:
            raise ValueError("weights and positions disagree in length")
        if cond.shape[0] != edges.shape[0] or disp.shape[0] != edges.shape[0]:
            raise ValueError("edge arrays disagree in length")
        if np.any(w <= 0):
            raise ValueError("atom weights must be positive")
        if np.any(cond <= 0):
            raise ValueError("stored conductances must be positive")
        if edges.size and (edges.min() < 0 or edges.max() >= pos.shape[0]):
            raise ValueError("edge index out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise ValueError("self loops are not allowed (r_xx = 0)")
        object.__setattr__(self, "positions", _frozen(pos))
        object.__setattr__(self, "weights", _frozen(w))
        object.__setattr__(self, "edges", _frozen(edges))
        object.__setattr__(self, "conductance", _frozen(cond))
        object.__setattr__(self, "displacement", _frozen(disp))
        if self.marks is not None:
            object.__setattr__(self, "marks", _frozen(np.asarray(self.marks, dtype=float)))

    @property
    def n_atoms(self) -> int:
        return self.positions.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def dim(self) -> int:
        return self.box.d

    def rates(self) -> tuple[np.ndarray, np.ndarray]:
        """Forward and backward rates ``(r_{x,y}, r_{y,x})`` per stored edge."""
        c = self.conductance
        return c / self.weights[self.edges[:, 0]], c / self.weights[self.edges[:, 1]]

    def total_rates(self) -> np.ndarray:
        """``r_x = sum_y r_{x,y}`` for every atom."""
        n = self.n_atoms
        s = np.bincount(self.edges[:, 0], self.conductance, minlength=n)
        s += np.bincount(self.edges[:, 1], self.conductance, minlength=n)
        return s / self.weights

    def rate_matrix(self) -> np.ndarray:
        """Dense ``r_{x,y}``; only for small environments."""
        n = self.n_atoms
        r = np.zeros((n, n))
        fwd, bwd = self.rates()
        np.add.at(r, (self.edges[:, 0], self.edges[:, 1]), fwd)
        np.add.at(r, (self.edges[:, 1], self.edges[:, 0]), bwd)
        return r

    def reweighted(self, weights: np.ndarray, model: str | None = None) -> "Environment":
        """Same conductances, new weights (hence new rates ``c / n``)."""
        return replace(self, weights=np.asarray(weights, dtype=float), model=model or self.model)

    def unit_weighted(self) -> "Environment":
        """The ``n = 1``, ``r = c`` version of this environment."""
        return self.reweighted(np.ones(self.n_atoms))

    def degree_weighted(self) -> "Environment":
        """Weights ``n_x = sum_y c_{x,y}``, so each atom has unit total rate."""
        deg = np.bincount(self.edges[:, 0], self.conductance, minlength=self.n_atoms)
        deg += np.bincount(self.edges[:, 1], self.conductance, minlength=self.n_atoms)
        if np.any(deg <= 0):
            raise GenerationError("isolated atom has zero degree")
        return self.reweighted(deg)

    def with_edges(self, mask: np.ndarray) -> "Environment":
        """Keep only the edges selected by a boolean mask."""
        mask = np.asarray(mask, dtype=bool)
        return replace(
            self,
            edges=self.edges[mask],
            conductance=self.conductance[mask],
            displacement=self.displacement[mask],
        )

    def scaled(self, s: float) -> "Environment":
        """All conductances multiplied by ``s``."""
        return replace(self, conductance=self.conductance * float(s))

    def components(self) -> tuple[int, np.ndarray]:
        graph = coo_matrix(
            (np.ones(self.n_edges), (self.edges[:, 0], self.edges[:, 1])),
            shape=(self.n_atoms, self.n_atoms),
        )
        return connected_components(graph, directed=False)

    def is_connected(self) -> bool:
        return self.components()[0] == 1

    # -- text format --------------------------------------------------------

    def to_text(self, extra_header: dict[str, Any] | None = None) -> str:
        d = self.dim
        head = {
            "model": self.model,
            "d": d,
            "L": _fmt(self.box.L),
            "seed": int(self.seed),
            "kernel": self.kernel.variant.value,
            "r_max": _fmt(self.kernel.r_max),
            "kernel_params": json.dumps(self.kernel.params, sort_keys=True),
            "atoms": self.n_atoms,
            "edges": self.n_edges,
        }
        if extra_header:
            head.update(extra_header)
        lines = ["# homlab environment v1"]
        lines += [f"{k} = {v}" for k, v in head.items()]
        lines.append("[atoms]")
        marks = self.marks if self.marks is not None else np.full(self.n_atoms, np.nan)
        for i in range(self.n_atoms):
            pos = " ".join(_fmt(v) for v in self.positions[i])
            lines.append(f"{i} {pos} {_fmt(self.weights[i])} {_fmt(marks[i])}")
        lines.append("[edges]")
        fwd, _ = self.rates()
        for k in range(self.n_edges):
            i, j = self.edges[k]
            z = " ".join(_fmt(v) for v in self.displacement[k])
            lines.append(f"{i} {j} {_fmt(fwd[k])} {_fmt(self.conductance[k])} {z}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Environment":
        header: dict[str, str] = {}
        atoms: list[list[float]] = []
        edges: list[list[float]] = []
        section = None
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line in ("[atoms]", "[edges]"):
                section = line[1:-1]
                continue
            if section is None:
                key, _, value = line.partition("=")
                header[key.strip()] = value.strip()
            elif section == "atoms":
                atoms.append([float(t) for t in line.split()])
            else:
                edges.append([float(t) for t in line.split()])
        d = int(header["d"])
        box = BoxSpec(d=d, L=float(header["L"]))
        a = np.array(atoms, dtype=float).reshape(-1, d + 3)
        e = np.array(edges, dtype=float).reshape(-1, d + 4)
        marks = a[:, d + 2]
        kernel = RateKernel(
            KernelVariant(header["kernel"]),
            float(header["r_max"]),
            json.loads(header.get("kernel_params", "{}")),
        )
        return cls(
            box=box,
            positions=a[:, 1 : d + 1],
            weights=a[:, d + 1],
            edges=e[:, :2].astype(np.int64),
            conductance=e[:, 3],
            displacement=e[:, 4:],
            kernel=kernel,
            seed=int(header["seed"]),
            model=header["model"],
            marks=None if np.all(np.isnan(marks)) else marks,
        )


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def make_environment(
    box: BoxSpec,
    positions,
    weights,
    edges,
    conductance,
    displacement=None,
    *,
    marks=None,
    model: str = "custom",
    seed: int = 0,
    r_max: float | None = None,
) -> Environment:
    """Build an environment from explicit arrays.

    Missing displacements are computed with :func:`periodic_displacement`.
    """
    positions = np.asarray(positions, dtype=float).reshape(-1, box.d)
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if displacement is None:
        displacement = periodic_displacement(positions[edges[:, 0]], positions[edges[:, 1]], box.L)
    displacement = np.asarray(displacement, dtype=float).reshape(-1, box.d)
    if r_max is None:
        r_max = float(np.max(np.linalg.norm(displacement, axis=1))) if len(edges) else 0.0
    kernel = RateKernel(KernelVariant.CUSTOM, r_max, {})
    return Environment(box, positions, weights, edges, conductance, displacement, kernel, seed, model, marks)


# -- lattice helpers --------------------------------------------------------


def _lattice_sites(d: int, L: int) -> np.ndarray:
    grids = np.meshgrid(*[np.arange(L)] * d, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def _lattice_bonds(coords: np.ndarray, L: int, z: np.ndarray) -> np.ndarray:
    target = np.mod(coords + z, L)
    return np.ravel_multi_index(tuple(target.T), (L,) * coords.shape[1])


def _half_space_vectors(d: int, r_max: float) -> list[tuple[int, ...]]:
    """Lattice vectors ``0 < |z| <= r_max`` whose first nonzero entry is positive."""
    R = int(math.floor(r_max))
    out = []
    for z in itertools.product(range(-R, R + 1), repeat=d):
        nz = [v for v in z if v != 0]
        if not nz or nz[0] < 0:
            continue
        if sum(v * v for v in z) <= r_max * r_max + 1e-12:
            out.append(z)
    out.sort(key=lambda z: (sum(v * v for v in z), tuple(-v for v in z)))
    return out


_STREAM_BONDS = 1
_STREAM_POINTS = 2


def generate_nn_conductance(
    box: BoxSpec,
    law: ConductanceLaw,
    weight_mode: str = "UNIT",
    seed: int = 0,
) -> Environment:
    """Nearest-neighbour random conductance model on the periodic lattice box.

    ``UNIT`` keeps ``n_x = 1`` and ``r_{x,y} = w_{x,y}``; ``DEGREE`` sets
    ``n_x = sum_y w_{x,y}`` so the walk has unit total jump rate.
    """
    L = box.lattice_side()
    if L < 2:
        raise ValueError(f"degenerate torus: L = {L} < 2")
    weight_mode = weight_mode.upper()
    if weight_mode not in ("UNIT", "DEGREE"):
        raise ValueError(f"unknown weight mode {weight_mode!r}")
    d = box.d
    coords = _lattice_sites(d, L)
    n = coords.shape[0]
    src, dst, cond, disp = [], [], [], []
    for axis in range(d):
        z = np.zeros(d, dtype=np.int64)
        z[axis] = 1
        u = counter_uniform(seed, _STREAM_BONDS, _bond_keys(coords, z))
        src.append(np.arange(n))
        dst.append(_lattice_bonds(coords, L, z))
        cond.append(law.from_uniform(u))
        disp.append(np.broadcast_to(z, (n, d)))
    env = Environment(
        box=box,
        positions=coords.astype(float),
        weights=np.ones(n),
        edges=np.stack([np.concatenate(src), np.concatenate(dst)], axis=1),
        conductance=np.concatenate(cond),
        displacement=np.concatenate(disp).astype(float),
        kernel=RateKernel(
            KernelVariant.NN_CONDUCTANCE, 1.0, {"law": law.to_dict(), "weight_mode": weight_mode}
        ),
        seed=seed,
        model="nn_conductance",
    )
    if weight_mode == "DEGREE":
        env = env.degree_weighted()
    return env


def generate_long_range(
    box: BoxSpec,
    law: ConductanceLaw,
    decay: float,
    r_max: float,
    seed: int = 0,
) -> Environment:
    """Lattice model with a conductance ``w * |z|^-decay`` for every jump ``0 < |z| <= r_max``."""
    d = box.d
    if not decay > d + 2:
        raise ValueError(
            f"decay exponent {decay} must exceed d + 2 = {d + 2} so that the second jump "
            "moment E_0[lambda_2] is finite"
        )
    L = box.lattice_side()
    if not r_max < L / 2:
        raise ValueError(f"r_max = {r_max} must be smaller than L/2 = {L / 2}")
    if r_max < 1:
        raise ValueError("r_max must be at least 1")
    coords = _lattice_sites(d, L)
    n = coords.shape[0]
    src, dst, cond, disp = [], [], [], []
    for z in _half_space_vectors(d, r_max):
        zv = np.array(z, dtype=np.int64)
        u = counter_uniform(seed, _STREAM_BONDS, _bond_keys(coords, zv))
        norm = math.sqrt(float(zv @ zv))
        src.append(np.arange(n))
        dst.append(_lattice_bonds(coords, L, zv))
        cond.append(law.from_uniform(u) * norm**-decay)
        disp.append(np.broadcast_to(zv, (n, d)))
    return Environment(
        box=box,
        positions=coords.astype(float),
        weights=np.ones(n),
        edges=np.stack([np.concatenate(src), np.concatenate(dst)], axis=1),
        conductance=np.concatenate(cond),
        displacement=np.concatenate(disp).astype(float),
        kernel=RateKernel(
            KernelVariant.LONG_RANGE_CONDUCTANCE,
            float(r_max),
            {"law": law.to_dict(), "decay": float(decay)},
        ),
        seed=seed,
        model="long_range",
    )


def long_range_lambda2(law: ConductanceLaw, decay: float, r_max: float, d: int) -> float:
    """Truncated series ``sum_{0<|z|<=r_max} E[w] |z|^(2 - decay)`` over all jump vectors."""
    total = 0.0
    for z in _half_space_vectors(d, r_max):
        total += 2.0 * law.mean() * float(sum(v * v for v in z)) ** ((2.0 - decay) / 2.0)
    return total


def generate_percolation(box: BoxSpec, p: float, seed: int = 0) -> Environment:
    """Largest open cluster of i.i.d. bond percolation on the periodic lattice box."""
    if not 0.0 < p <= 1.0:
        raise ValueError(f"open-bond probability must lie in (0, 1], got {p}")
    L = box.lattice_side()
    if L < 2:
        raise ValueError(f"degenerate torus: L = {L} < 2")
    d = box.d
    coords = _lattice_sites(d, L)
    n = coords.shape[0]
    src, dst, disp = [], [], []
    for axis in range(d):
        z = np.zeros(d, dtype=np.int64)
        z[axis] = 1
        is_open = counter_uniform(seed, _STREAM_BONDS, _bond_keys(coords, z)) < p
        src.append(np.arange(n)[is_open])
        dst.append(_lattice_bonds(coords, L, z)[is_open])
        disp.append(np.broadcast_to(z, (int(is_open.sum()), d)))
    src = np.concatenate(src)
    dst = np.concatenate(dst)
    disp = np.concatenate(disp).astype(float)
    if src.size == 0:
        raise GenerationError(f"empty cluster: no open bond for p = {p} in a box of side {L}")
    graph = coo_matrix((np.ones(src.size), (src, dst)), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    sizes = np.bincount(labels)
    _, first = np.unique(labels, return_index=True)
    best = max(range(sizes.size), key=lambda k: (sizes[k], -first[k]))
    if sizes[best] < 2:
        raise GenerationError(f"empty cluster for p = {p} in a box of side {L}")
    keep = np.flatnonzero(labels == best)
    relabel = np.full(n, -1, dtype=np.int64)
    relabel[keep] = np.arange(keep.size)
    inside = labels[src] == best
    return Environment(
        box=box,
        positions=coords[keep].astype(float),
        weights=np.ones(keep.size),
        edges=np.stack([relabel[src[inside]], relabel[dst[inside]]], axis=1),
        conductance=np.ones(int(inside.sum())),
        displacement=disp[inside],
        kernel=RateKernel(KernelVariant.PERCOLATION, 1.0, {"p": float(p)}),
        seed=seed,
        model="percolation",
    )


def mott_rate(distance, e_x, e_y) -> np.ndarray:
    """Mott variable-range hopping rate between two marked points."""
    distance = np.asarray(distance, dtype=float)
    e_x = np.asarray(e_x, dtype=float)
    e_y = np.asarray(e_y, dtype=float)
    return np.exp(-distance - np.abs(e_x) - np.abs(e_y) - np.abs(e_x - e_y))


def mott_environment(
    box: BoxSpec,
    positions,
    marks,
    r_max: float,
    *,
    seed: int = 0,
    params: dict[str, Any] | None = None,
) -> Environment:
    """Mott environment on given marked points, rates truncated beyond ``r_max``."""
    if not r_max < box.L / 2:
        raise ValueError(f"r_max = {r_max} must be smaller than L/2 = {box.L / 2}")
    positions = np.asarray(positions, dtype=float).reshape(-1, box.d)
    marks = np.asarray(marks, dtype=float).reshape(-1)
    if positions.shape[0] == 0:
        raise GenerationError("no points sampled")
    tree = cKDTree(positions, boxsize=float(box.L))
    pairs = tree.query_pairs(r_max, output_type="ndarray").astype(np.int64)
    if pairs.size:
        pairs = np.sort(pairs, axis=1)
        pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
    pairs = pairs.reshape(-1, 2)
    disp = periodic_displacement(positions[pairs[:, 0]], positions[pairs[:, 1]], box.L)
    dist = np.linalg.norm(disp, axis=1)
    keep = dist <= r_max
    pairs, disp, dist = pairs[keep], disp[keep], dist[keep]
    cond = mott_rate(dist, marks[pairs[:, 0]], marks[pairs[:, 1]])
    # rates so small they underflow carry no information
    pos_c = cond > 0
    return Environment(
        box=box,
        positions=positions,
        weights=np.ones(positions.shape[0]),
        edges=pairs[pos_c],
        conductance=cond[pos_c],
        displacement=disp[pos_c],
        kernel=RateKernel(KernelVariant.MOTT, float(r_max), dict(params or {})),
        seed=seed,
        model="mott",
        marks=marks,
    )


def generate_mott(
    box: BoxSpec,
    intensity: float,
    mark_law: MarkLaw,
    r_max: float,
    seed: int = 0,
) -> Environment:
    """Poisson point process of the given intensity with i.i.d. energy marks."""
    if not intensity > 0:
        raise ValueError(f"intensity must be positive, got {intensity}")
    if not r_max < box.L / 2:
        raise ValueError(f"r_max = {r_max} must be smaller than L/2 = {box.L / 2}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed % 2**64, _STREAM_POINTS])))
    count = int(rng.poisson(intensity * box.volume))
    if count == 0:
        raise GenerationError("zero sampled points")
    positions = rng.uniform(0.0, box.L, size=(count, box.d))
    positions = np.where(positions >= box.L, 0.0, positions)
    marks = mark_law.sample(rng, count)
    params = {"intensity": float(intensity), "mark_law": mark_law.to_dict()}
    return mott_environment(box, positions, marks, r_max, seed=seed, params=params)
