"""Uniform meshes on (0,1)^d, coefficient fields, nodal/element fields and norms.

Discretization conventions used throughout the package:

- A mesh of resolution N has spacing h = 1/N.  Dirichlet meshes carry
  unknowns on the (N-1)^d interior lattice nodes; boundary nodes are
  implicitly zero.  Periodic meshes carry N^d nodes with wraparound
  indexing and fields are defined up to an additive constant (the
  zero-mean gauge is enforced by the solvers).
- Elements are the N^d cells between lattice nodes; coefficients are
  sampled at element centers, gradients are piecewise constant per
  element, and all integrals use the composite midpoint rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "Mesh",
    "CoefficientField",
    "GridField",
    "GridVectorField",
    "UnderResolvedError",
    "build_mesh",
    "sample_epsilon",
    "sample_cell",
    "constant_table",
    "lp_norm",
    "grad_norm",
    "w1q_norm",
    "coefficient_preset",
    "write_field_csv",
]

DIRICHLET = "dirichlet"
PERIODIC = "periodic"

# grid must resolve one oscillation period by at least this many cells
MIN_CELLS_PER_PERIOD = 16


class UnderResolvedError(ValueError):
    """Raised when an oscillation scale is too fine for the mesh."""


@dataclass(frozen=True)
class Mesh:
    """Uniform tensor grid on (0,1)^d, d in {1,2}."""

    d: int
    N: int
    bc: str  # "dirichlet" | "periodic"

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.d}")
        if self.N < 2:
            raise ValueError(f"resolution must be >= 2, got {self.N}")
        if self.bc not in (DIRICHLET, PERIODIC):
            raise ValueError(f"unknown boundary tag {self.bc!r}")

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def nodes_per_axis(self) -> int:
        return self.N - 1 if self.bc == DIRICHLET else self.N

    @property
    def n_nodes(self) -> int:
        return self.nodes_per_axis**self.d

    @property
    def n_elements(self) -> int:
        return self.N**self.d

    def node_coords(self) -> np.ndarray:
        """Unknown-node coordinates, lexicographic, shape (n_nodes, d)."""
        if self.bc == DIRICHLET:
            axis = (np.arange(1, self.N) * self.h)
        else:
            axis = (np.arange(self.N) * self.h)
        if self.d == 1:
            return axis[:, None]
        X, Y = np.meshgrid(axis, axis, indexing="ij")
        return np.stack([X.ravel(), Y.ravel()], axis=1)

    def element_centers(self) -> np.ndarray:
        """Element-center coordinates, lexicographic, shape (n_elements, d)."""
        axis = (np.arange(self.N) + 0.5) * self.h
        if self.d == 1:
            return axis[:, None]
        X, Y = np.meshgrid(axis, axis, indexing="ij")
        return np.stack([X.ravel(), Y.ravel()], axis=1)

    def node_shape(self) -> tuple:
        return (self.nodes_per_axis,) * self.d

    def element_shape(self) -> tuple:
        return (self.N,) * self.d


def build_mesh(d: int, N: int, bc: str) -> Mesh:
    """Build a uniform mesh; rejects d not in {1,2} and N < 2."""
    return Mesh(d=d, N=N, bc=bc)


@dataclass(frozen=True)
class CoefficientField:
    """Y-periodic matrix field A(x, y) with ellipticity bounds.

    ``evaluator(x, y)`` takes arrays of shape (m, d) for both the slow
    variable x in Omega and the fast variable y in Y and returns matrices
    of shape (m, d, d).  ``separable`` marks fields depending on y only,
    which lets the homogenizer solve a single cell problem.
    """

    d: int
    evaluator: Callable[[np.ndarray, np.ndarray], np.ndarray]
    alpha: float
    beta: float
    symmetric: bool = True
    separable: bool = True
    name: str = "custom"

    def __post_init__(self):
        if not (0 < self.alpha <= self.beta):
            raise ValueError("need 0 < alpha <= beta")
        self._check_samples(n=256, seed=0)

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        out = np.asarray(self.evaluator(x, y), dtype=float)
        if out.shape != (x.shape[0], self.d, self.d):
            raise ValueError(
                f"evaluator returned shape {out.shape}, "
                f"expected {(x.shape[0], self.d, self.d)}"
            )
        return out

    def _check_samples(self, n: int, seed: int) -> None:
        rng = np.random.default_rng(seed)
        x = rng.random((n, self.d))
        y = rng.random((n, self.d))
        mats = self(x, y)
        xi = rng.normal(size=(n, self.d))
        xi /= np.linalg.norm(xi, axis=1, keepdims=True)
        quad = np.einsum("mi,mij,mj->m", xi, mats, xi)
        if np.any(quad < self.alpha - 1e-12) or np.any(quad > self.beta + 1e-12):
            raise ValueError("field violates the declared ellipticity bounds")
        if self.symmetric:
            gap = np.max(np.abs(mats - np.swapaxes(mats, 1, 2)))
            if gap != 0.0:
                raise ValueError("field declared symmetric but A != A^t at samples")


@dataclass
class GridField:
    """Scalar field with one value per unknown node."""

    mesh: Mesh
    values: np.ndarray
    role: str = "data"  # state | control | adjoint | data

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.values.shape[0] != self.mesh.n_nodes:
            raise ValueError(
                f"expected {self.mesh.n_nodes} nodal values, got {self.values.shape[0]}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite nodal values")

    @classmethod
    def zeros(cls, mesh: Mesh, role: str = "data") -> "GridField":
        return cls(mesh, np.zeros(mesh.n_nodes), role)

    @classmethod
    def from_function(cls, mesh: Mesh, fn, role: str = "data") -> "GridField":
        """Sample ``fn`` at node coordinates; fn takes (m, d) -> (m,)."""
        vals = np.asarray(fn(mesh.node_coords()), dtype=float).reshape(-1)
        return cls(mesh, vals, role)

    def padded(self) -> np.ndarray:
        """Full lattice of shape (N+1,)*d: Dirichlet zeros / periodic wrap."""
        return _pad(self.mesh, self.values)


@dataclass
class GridVectorField:
    """One d-vector per element (cell-centered gradients and fluxes)."""

    mesh: Mesh
    values: np.ndarray  # shape (n_elements, d)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(
            self.mesh.n_elements, self.mesh.d
        )


def _pad(mesh: Mesh, values: np.ndarray) -> np.ndarray:
    """Embed unknown values into the full (N+1,)^d lattice."""
    N, d = mesh.N, mesh.d
    U = np.zeros((N + 1,) * d)
    v = values.reshape(mesh.node_shape())
    if mesh.bc == DIRICHLET:
        if d == 1:
            U[1:N] = v
        else:
            U[1:N, 1:N] = v
    else:
        if d == 1:
            U[:N] = v
            U[N] = v[0]
        else:
            U[:N, :N] = v
            U[N, :N] = v[0, :]
            U[:N, N] = v[:, 0]
            U[N, N] = v[0, 0]
    return U


def element_gradient(u: GridField) -> GridVectorField:
    """Cell-centered gradient from first-order lattice differences."""
    mesh = u.mesh
    U = u.padded()
    h = mesh.h
    if mesh.d == 1:
        g = (U[1:] - U[:-1])[:, None] / h
    else:
        gx = (U[1:, :-1] - U[:-1, :-1] + U[1:, 1:] - U[:-1, 1:]) / (2 * h)
        gy = (U[:-1, 1:] - U[:-1, :-1] + U[1:, 1:] - U[1:, :-1]) / (2 * h)
        g = np.stack([gx.ravel(), gy.ravel()], axis=1)
    return GridVectorField(mesh, g)


def element_average(u: GridField) -> np.ndarray:
    """Field value at element centers (mean of the corner nodes)."""
    U = u.padded()
    if u.mesh.d == 1:
        return 0.5 * (U[1:] + U[:-1])
    c = 0.25 * (U[:-1, :-1] + U[1:, :-1] + U[:-1, 1:] + U[1:, 1:])
    return c.ravel()


def _check_epsilon(mesh: Mesh, eps: float) -> int:
    inv = 1.0 / eps
    m = int(round(inv))
    if eps <= 0 or abs(inv - m) > 1e-9:
        raise ValueError(f"1/eps must be an integer, got eps={eps}")
    if mesh.N % m != 0:
        raise UnderResolvedError(
            f"under-resolved oscillation: 1/eps={m} must divide N={mesh.N}"
        )
    if mesh.N // m < MIN_CELLS_PER_PERIOD:
        raise UnderResolvedError(
            f"under-resolved oscillation: eps/h = {mesh.N // m} < {MIN_CELLS_PER_PERIOD}"
        )
    return m


def sample_epsilon(coeff: CoefficientField, mesh: Mesh, eps: float) -> np.ndarray:
    """Per-element table A(x_c, x_c/eps mod Y), shape (n_elements, d, d)."""
    _check_epsilon(mesh, eps)
    xc = mesh.element_centers()
    y = np.mod(xc / eps, 1.0)
    return coeff(xc, y)


def sample_cell(coeff: CoefficientField, cell_mesh: Mesh, x: np.ndarray | None = None) -> np.ndarray:
    """Per-element table A(x, y_c) on the unit-cell mesh at fixed slow point x."""
    if cell_mesh.bc != PERIODIC:
        raise ValueError("cell sampling needs a periodic mesh")
    yc = cell_mesh.element_centers()
    if x is None:
        x = np.zeros(cell_mesh.d)
    xs = np.broadcast_to(np.asarray(x, dtype=float), yc.shape)
    return coeff(xs, yc)


def constant_table(mesh: Mesh, matrix: np.ndarray) -> np.ndarray:
    """Per-element table of a constant d x d matrix."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if matrix.shape != (mesh.d, mesh.d):
        raise ValueError(f"matrix shape {matrix.shape} does not match d={mesh.d}")
    return np.broadcast_to(matrix, (mesh.n_elements, mesh.d, mesh.d)).copy()


def lp_norm(u: GridField, p: float) -> float:
    """(int |u|^p)^(1/p) by midpoint quadrature at element centers."""
    if p < 1:
        raise ValueError("p must be >= 1")
    c = element_average(u)
    return float(np.sum(np.abs(c) ** p) * u.mesh.h**u.mesh.d) ** (1.0 / p)


def grad_norm(u: GridField, q: float) -> float:
    """(int |grad u|^q)^(1/q) with per-element first-order differences."""
    if q < 1:
        raise ValueError("q must be >= 1")
    g = element_gradient(u).values
    mag = np.linalg.norm(g, axis=1)
    return float(np.sum(mag**q) * u.mesh.h**u.mesh.d) ** (1.0 / q)


def w1q_norm(u: GridField, q: float) -> float:
    """Discrete W^{1,q} norm: (int |u|^q + int |grad u|^q)^(1/q)."""
    return float(lp_norm(u, q) ** q + grad_norm(u, q) ** q) ** (1.0 / q)


def l2_inner(mesh: Mesh, a: np.ndarray, b: np.ndarray) -> float:
    """Discrete L^2 inner product of nodal vectors, weight h^d."""
    return float(np.dot(a, b) * mesh.h**mesh.d)


def l2_norm_nodal(mesh: Mesh, a: np.ndarray) -> float:
    return float(np.sqrt(max(l2_inner(mesh, a, a), 0.0)))


# ---------------------------------------------------------------------------
# coefficient presets

def _iso(d: int, scalar_fn) -> Callable:
    def ev(x, y):
        a = np.asarray(scalar_fn(x, y), dtype=float)
        out = np.zeros((x.shape[0], d, d))
        for i in range(d):
            out[:, i, i] = a
        return out

    return ev


def _two_phase_scalar(lo: float, hi: float):
    # jump at y_1 = 1/2 within the unit cell
    def f(x, y):
        return np.where(y[:, 0] < 0.5, lo, hi)

    return f


def coefficient_preset(name: str, d: int, **params) -> CoefficientField:
    """Named coefficient fields used in config files.

    Presets: ``constant`` (value), ``two-phase-1d`` (lo, hi),
    ``laminate-2d`` (lo, hi), ``smooth-sin``, ``smooth-sin-xy`` and
    ``piecewise`` (breaks, values: a 1D piecewise-constant profile in y_1).
    """
    if name == "constant":
        value = float(params.get("value", 1.0))
        return CoefficientField(
            d=d,
            evaluator=_iso(d, lambda x, y: np.full(x.shape[0], value)),
            alpha=value,
            beta=value,
            name=f"constant({value})",
        )
    if name in ("two-phase-1d", "laminate-2d"):
        lo = float(params.get("lo", 1.0))
        hi = float(params.get("hi", 4.0))
        if name == "two-phase-1d" and d != 1:
            raise ValueError("two-phase-1d is a 1D preset")
        return CoefficientField(
            d=d,
            evaluator=_iso(d, _two_phase_scalar(lo, hi)),
            alpha=min(lo, hi),
            beta=max(lo, hi),
            name=f"{name}({lo},{hi})",
        )
    if name == "smooth-sin":
        return CoefficientField(
            d=d,
            evaluator=_iso(d, lambda x, y: 2.0 + np.sin(2 * np.pi * y[:, 0])),
            alpha=1.0,
            beta=3.0,
            name="smooth-sin",
        )
    if name == "smooth-sin-xy":
        # x-modulated amplitude; exercises the macro-grid corrector path
        def f(x, y):
            amp = 0.5 + 0.25 * np.sin(2 * np.pi * x[:, 0])
            return 2.0 + amp * np.sin(2 * np.pi * y[:, 0])

        return CoefficientField(
            d=d,
            evaluator=_iso(d, f),
            alpha=1.25,
            beta=2.75,
            separable=False,
            name="smooth-sin-xy",
        )
    if name == "piecewise":
        breaks = np.asarray(params["breaks"], dtype=float)
        vals = np.asarray(params["values"], dtype=float)
        if breaks.ndim != 1 or vals.shape[0] != breaks.shape[0] + 1:
            raise ValueError("need len(values) == len(breaks) + 1")

        def f(x, y):
            idx = np.searchsorted(breaks, y[:, 0], side="right")
            return vals[idx]

        return CoefficientField(
            d=d,
            evaluator=_iso(d, f),
            alpha=float(vals.min()),
            beta=float(vals.max()),
            name="piecewise",
        )
    raise ValueError(f"unknown coefficient preset {name!r}")


def write_field_csv(path, u: GridField) -> None:
    """Serialize a field as (node index, coordinates..., value) rows."""
    coords = u.mesh.node_coords()
    header = "index," + ",".join(f"x{i+1}" for i in range(u.mesh.d)) + ",value"
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for i in range(u.mesh.n_nodes):
            cs = ",".join(f"{c:.12e}" for c in coords[i])
            fh.write(f"{i},{cs},{u.values[i]:.12e}\n")
