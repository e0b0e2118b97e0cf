"""Discrete signed measures, Stampacchia solutions and weak-* surrogates.

A measure is a list of node atoms plus an optional absolutely continuous
density.  A Dirac atom is discretized as a nodal load scaled by h^(-d)
at the nearest unknown node, which preserves its mass under the nodal
quadrature; with that convention the duality identity
int u g dx = int v d(lambda) holds exactly up to solver residuals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .domain import DIRICHLET, GridField, Mesh
from .elliptic import assemble, solve

__all__ = [
    "DiscreteMeasure",
    "DualityReport",
    "stampacchia_solve",
    "check_duality",
    "wstar_distance",
    "test_dictionary",
]

DICTIONARY_MAX_ORDER = 8


@dataclass
class DiscreteMeasure:
    """Signed Borel measure: node atoms + optional density part."""

    mesh: Mesh
    atoms: list = field(default_factory=list)  # (node index, signed mass)
    density: GridField | None = None

    def __post_init__(self):
        for idx, mass in self.atoms:
            if not 0 <= idx < self.mesh.n_nodes:
                raise ValueError(f"atom node {idx} outside the mesh")
            if not np.isfinite(mass):
                raise ValueError("non-finite atom mass")
        if self.density is not None and self.density.mesh != self.mesh:
            raise ValueError("density lives on a different mesh")

    @classmethod
    def dirac(cls, mesh: Mesh, x0, mass: float = 1.0) -> "DiscreteMeasure":
        """Atom of the given mass at the node nearest to x0."""
        coords = mesh.node_coords()
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        idx = int(np.argmin(np.sum((coords - x0) ** 2, axis=1)))
        return cls(mesh=mesh, atoms=[(idx, float(mass))])

    @classmethod
    def from_density(cls, rho: GridField) -> "DiscreteMeasure":
        return cls(mesh=rho.mesh, density=rho)

    def __add__(self, other: "DiscreteMeasure") -> "DiscreteMeasure":
        if other.mesh != self.mesh:
            raise ValueError("measures live on different meshes")
        dens = None
        if self.density is not None or other.density is not None:
            v = np.zeros(self.mesh.n_nodes)
            if self.density is not None:
                v = v + self.density.values
            if other.density is not None:
                v = v + other.density.values
            dens = GridField(self.mesh, v)
        return DiscreteMeasure(self.mesh, list(self.atoms) + list(other.atoms), dens)

    def total_variation(self) -> float:
        """|lambda|(Omega) = sum |mass| + int |density| (nodal quadrature)."""
        tv = float(sum(abs(m) for _, m in self.atoms))
        if self.density is not None:
            tv += float(
                np.sum(np.abs(self.density.values)) * self.mesh.h**self.mesh.d
            )
        return tv

    def nodal_load(self) -> np.ndarray:
        """Pointwise right-hand side: density + atoms scaled by h^(-d)."""
        rhs = np.zeros(self.mesh.n_nodes)
        if self.density is not None:
            rhs += self.density.values
        hd = self.mesh.h**self.mesh.d
        for idx, mass in self.atoms:
            rhs[idx] += mass / hd
        return rhs

    def integrate(self, nodal_values: np.ndarray) -> float:
        """int phi d(lambda) for a function given by nodal values."""
        out = float(sum(m * nodal_values[i] for i, m in self.atoms))
        if self.density is not None:
            out += float(
                np.dot(self.density.values, nodal_values) * self.mesh.h**self.mesh.d
            )
        return out


@dataclass
class DualityReport:
    trials: list  # (left = int u g, right = int v dlambda, gap)

    @property
    def max_gap(self) -> float:
        return max((t[2] for t in self.trials), default=0.0)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("trial,left,right,gap\n")
            for i, (left, right, gap) in enumerate(self.trials):
                fh.write(f"{i},{left:.12e},{right:.12e},{gap:.12e}\n")


def stampacchia_solve(mesh: Mesh, A_table: np.ndarray, lam: DiscreteMeasure,
                      x0: np.ndarray | None = None) -> GridField:
    """State with measure data: -div(A grad u) = lambda, u = 0 on the boundary."""
    if mesh.bc != DIRICHLET:
        raise ValueError("measure-data problems are posed on Dirichlet meshes")
    if lam.mesh != mesh:
        raise ValueError("measure lives on a different mesh")
    system = assemble(mesh, A_table)
    u, _ = solve(system, lam.nodal_load(), x0=x0, tag="stampacchia")
    return u


def check_duality(u: GridField, A_table: np.ndarray, lam: DiscreteMeasure,
                  trials: int = 20, seed: int = 7) -> DualityReport:
    """Test int u g dx = int v dlambda for random bounded g, v the adjoint state."""
    mesh = u.mesh
    rng = np.random.default_rng(seed)
    system_t = assemble(mesh, A_table, transpose=True)
    hd = mesh.h**mesh.d
    rows = []
    for _ in range(trials):
        g = rng.uniform(-1.0, 1.0, size=mesh.n_nodes)
        v, _ = solve(system_t, g, tag="duality-adjoint")
        left = float(np.dot(u.values, g) * hd)
        right = lam.integrate(v.values)
        rows.append((left, right, abs(left - right)))
    return DualityReport(trials=rows)


def test_dictionary(mesh: Mesh, max_order: int = DICTIONARY_MAX_ORDER) -> np.ndarray:
    """Fixed smooth test functions at the nodes: tensor sine/cosine modes.

    Returns an array of shape (n_functions, n_nodes).
    """
    coords = mesh.node_coords()

    def axis_modes(x):
        mods = [np.ones_like(x)]
        for m in range(1, max_order + 1):
            mods.append(np.sin(2 * np.pi * m * x))
            mods.append(np.cos(2 * np.pi * m * x))
        return mods

    mx = axis_modes(coords[:, 0])
    if mesh.d == 1:
        return np.stack(mx)
    my = axis_modes(coords[:, 1])
    return np.stack([fx * fy for fx in mx for fy in my])


def wstar_distance(lam: DiscreteMeasure, mu: DiscreteMeasure,
                   dictionary: np.ndarray | None = None) -> float:
    """max over the test dictionary of |int phi dlambda - int phi dmu|."""
    if lam.mesh != mu.mesh:
        raise ValueError("measures live on different meshes")
    if dictionary is None:
        dictionary = test_dictionary(lam.mesh)
    gaps = [abs(lam.integrate(phi) - mu.integrate(phi)) for phi in dictionary]
    return max(gaps)
