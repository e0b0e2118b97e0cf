"""Discrete elliptic operators: assembly, preconditioned CG, cell problems.

The stiffness operator is kept in stencil (matrix-free) form: per
direction, one conductance per lattice edge.  In 1D the conductance of
the edge between two nodes is the coefficient sampled at the center of
the element it spans; in 2D an edge lies on the face between two
elements and carries the harmonic average of their samples, which
preserves exactness for piecewise-constant coefficients with interfaces
on the grid.

All systems are solved with Jacobi-preconditioned conjugate gradients.
Minimal-residual smoothing (Zhou/Walker) is applied to the iterates so
the reported residual history is non-increasing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import DIRICHLET, PERIODIC, GridField, Mesh, _pad

__all__ = [
    "LinearSystem",
    "SolveReport",
    "SolverError",
    "assemble",
    "solve",
    "solve_cell",
    "energy",
    "harmonic_mean",
    "append_report_csv",
]

CG_RTOL = 1e-10
CG_ITER_FACTOR = 10


class SolverError(RuntimeError):
    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


@dataclass
class SolveReport:
    tag: str
    dof: int
    iterations: int
    residual: float
    energy: float


def harmonic_mean(a, b):
    """2ab/(a+b); the face coefficient between two element samples."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return 2.0 * a * b / (a + b)


def _diag_entries(table: np.ndarray, mesh: Mesh) -> list[np.ndarray]:
    """Per-direction diagonal coefficient entries on the element grid."""
    d = mesh.d
    table = np.asarray(table, dtype=float)
    if table.shape != (mesh.n_elements, d, d):
        raise ValueError(
            f"coefficient table shape {table.shape} does not match mesh "
            f"({mesh.n_elements} elements, d={d})"
        )
    if d == 2:
        off = max(np.max(np.abs(table[:, 0, 1])), np.max(np.abs(table[:, 1, 0])))
        if off > 1e-14:
            raise ValueError("5-point stencil supports diagonal coefficient matrices only")
    return [table[:, k, k].reshape(mesh.element_shape()) for k in range(d)]


def edge_weights(mesh: Mesh, table: np.ndarray) -> list[np.ndarray]:
    """Conductance-times-measure weight per lattice edge, per direction.

    Direction k arrays have N edges along axis k.  The transverse axes
    index lattice lines: size N+1 for both boundary tags, with periodic
    wraparound folded into line 0 (line N carries zero weight).
    Weights include the h^(d-2) measure factor, so
    sum_e W_e (du)_e (dv)_e equals the discrete energy form.
    """
    d, N, h = mesh.d, mesh.N, mesh.h
    entries = _diag_entries(table, mesh)
    weights = []
    for k in range(d):
        a = entries[k]
        if d == 1:
            W = a / h  # omega = h^(d-2)
        else:
            t_axis = 1 - k
            W = np.zeros((N, N + 1) if k == 0 else (N + 1, N))
            a_lo = np.take(a, range(0, N - 1), axis=t_axis)
            a_hi = np.take(a, range(1, N), axis=t_axis)
            hm = harmonic_mean(a_lo, a_hi)
            if k == 0:
                W[:, 1:N] = hm
            else:
                W[1:N, :] = hm
            if mesh.bc == DIRICHLET:
                # boundary lines carry the half-element share
                if k == 0:
                    W[:, 0] = 0.5 * a[:, 0]
                    W[:, N] = 0.5 * a[:, N - 1]
                else:
                    W[0, :] = 0.5 * a[0, :]
                    W[N, :] = 0.5 * a[N - 1, :]
            else:
                wrap = harmonic_mean(
                    np.take(a, [N - 1], axis=t_axis), np.take(a, [0], axis=t_axis)
                )
                if k == 0:
                    W[:, 0] = wrap[:, 0]
                else:
                    W[0, :] = wrap[0, :]
        weights.append(W)
    return weights


def edge_diffs(mesh: Mesh, padded: np.ndarray) -> list[np.ndarray]:
    """First differences along each axis, aligned with ``edge_weights``."""
    return [np.diff(padded, axis=k) for k in range(mesh.d)]


def _unpad(mesh: Mesh, R: np.ndarray) -> np.ndarray:
    N = mesh.N
    if mesh.bc == DIRICHLET:
        view = R[1:N] if mesh.d == 1 else R[1:N, 1:N]
    else:
        if mesh.d == 1:
            R[0] += R[N]
            view = R[:N]
        else:
            R[0, :] += R[N, :]
            R[:, 0] += R[:, N]
            view = R[:N, :N]
    return view.reshape(-1).copy()


def _divergence(mesh: Mesh, fluxes: list[np.ndarray]) -> np.ndarray:
    """Accumulate edge fluxes to nodes: (div F)_n restricted to unknowns."""
    R = np.zeros((mesh.N + 1,) * mesh.d)
    for k, F in enumerate(fluxes):
        if k == 0:
            R[:-1] -= F
            R[1:] += F
        else:
            R[:, :-1] -= F
            R[:, 1:] += F
    return _unpad(mesh, R)


@dataclass
class LinearSystem:
    """Stencil-form SPD operator for -div(A grad u) on a mesh.

    ``apply`` realizes the scaled operator K = S / h^d whose action on
    nodal values matches pointwise right-hand sides (K u = g), e.g. the
    1D unit-coefficient stencil is (-1, 2, -1)/h^2 per row.
    """

    mesh: Mesh
    weights: list  # per-direction edge weight arrays
    transpose: bool = False
    tol: float = CG_RTOL

    @property
    def n_dof(self) -> int:
        return self.mesh.n_nodes

    def apply(self, u: np.ndarray) -> np.ndarray:
        padded = _pad(self.mesh, u)
        diffs = edge_diffs(self.mesh, padded)
        fluxes = [W * D for W, D in zip(self.weights, diffs)]
        return _divergence(self.mesh, fluxes) / self.mesh.h**self.mesh.d

    def diagonal(self) -> np.ndarray:
        return self.apply_diag()

    def apply_diag(self) -> np.ndarray:
        # diag(K) via accumulation of incident edge weights
        mesh = self.mesh
        R = np.zeros((mesh.N + 1,) * mesh.d)
        for k, W in enumerate(self.weights):
            if k == 0:
                R[:-1] += W
                R[1:] += W
            else:
                R[:, :-1] += W
                R[:, 1:] += W
        return _unpad(mesh, R) / mesh.h**mesh.d

    def to_dense(self) -> np.ndarray:
        n = self.n_dof
        K = np.empty((n, n))
        e = np.zeros(n)
        for j in range(n):
            e[j] = 1.0
            K[:, j] = self.apply(e)
            e[j] = 0.0
        return K

    def bilinear(self, u: np.ndarray, v: np.ndarray) -> float:
        """Energy form: sum_e W_e (du)_e (dv)_e  (= h^d u.K v)."""
        du = edge_diffs(self.mesh, _pad(self.mesh, u))
        dv = edge_diffs(self.mesh, _pad(self.mesh, v))
        return float(sum(np.sum(W * a * b) for W, a, b in zip(self.weights, du, dv)))


def assemble(mesh: Mesh, table: np.ndarray, transpose: bool = False) -> LinearSystem:
    """Assemble the stencil operator from a per-element coefficient table.

    Only diagonal matrix coefficients are representable on the 5-point
    (3-point) stencil; those are always symmetric, so the transpose flag
    yields a bit-identical system.
    """
    weights = edge_weights(mesh, table)
    return LinearSystem(mesh=mesh, weights=weights, transpose=transpose)


def _project_zero_mean(v: np.ndarray) -> np.ndarray:
    return v - v.mean()


def _pcg(system: LinearSystem, b: np.ndarray, x0: np.ndarray | None,
         zero_mean: bool) -> tuple[np.ndarray, int, float, list[float]]:
    n = b.shape[0]
    if zero_mean:
        b = _project_zero_mean(b)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(n), 0, 0.0, [0.0]
    tol = system.tol * bnorm
    maxiter = CG_ITER_FACTOR * n

    diag = system.apply_diag()
    if zero_mean:
        # periodic stiffness is singular on constants; the diagonal is fine
        pass
    inv_diag = 1.0 / diag

    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    if zero_mean:
        x = _project_zero_mean(x)
    r = b - system.apply(x)
    if zero_mean:
        r = _project_zero_mean(r)

    # minimal-residual smoothed sequence
    xs = x.copy()
    rs = r.copy()
    history = [float(np.linalg.norm(rs))]

    z = inv_diag * r
    if zero_mean:
        z = _project_zero_mean(z)
    p = z.copy()
    rz = float(np.dot(r, z))
    it = 0
    while history[-1] > tol and it < maxiter:
        Ap = system.apply(p)
        if zero_mean:
            Ap = _project_zero_mean(Ap)
        pAp = float(np.dot(p, Ap))
        if pAp <= 0.0:
            raise SolverError("operator is not positive definite", history[-1] / bnorm)
        alpha = rz / pAp
        x = x + alpha * p
        r = r - alpha * Ap
        # smoothing step: keep the residual history monotone
        dr = r - rs
        dd = float(np.dot(dr, dr))
        if dd > 0.0:
            eta = -float(np.dot(rs, dr)) / dd
            eta = min(max(eta, 0.0), 1.0)
            xs = xs + eta * (x - xs)
            rs = rs + eta * (r - rs)
        history.append(float(np.linalg.norm(rs)))
        z = inv_diag * r
        if zero_mean:
            z = _project_zero_mean(z)
        rz_new = float(np.dot(r, z))
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p
        it += 1
    if history[-1] > tol:
        raise SolverError(
            f"CG failed to converge in {maxiter} iterations",
            residual=history[-1] / bnorm,
        )
    if zero_mean:
        xs = _project_zero_mean(xs)
    return xs, it, history[-1] / bnorm, history


def solve(system: LinearSystem, rhs, x0: np.ndarray | None = None,
          tag: str = "solve") -> tuple[GridField, SolveReport]:
    """Solve K u = g with PCG; returns the state and a solve report."""
    mesh = system.mesh
    b = rhs.values if isinstance(rhs, GridField) else np.asarray(rhs, dtype=float)
    zero_mean = mesh.bc == PERIODIC
    x, it, res, _ = _pcg(system, b, x0, zero_mean)
    u = GridField(mesh, x, role="state")
    en = mesh.h**mesh.d * float(np.dot(x, system.apply(x)))
    return u, SolveReport(tag=tag, dof=system.n_dof, iterations=it,
                          residual=res, energy=en)


def cell_rhs(mesh: Mesh, weights: list[np.ndarray], direction: int) -> np.ndarray:
    """Right-hand side of the cell problem -div(A(grad chi + e_i)) = 0."""
    fluxes = [np.zeros_like(W) for W in weights]
    fluxes[direction] = weights[direction] * mesh.h
    return -_divergence(mesh, fluxes) / mesh.h**mesh.d


def solve_cell(mesh: Mesh, table: np.ndarray, direction: int,
               x0: np.ndarray | None = None) -> tuple[GridField, SolveReport]:
    """Zero-mean periodic corrector chi_i for a unit macroscopic gradient."""
    if mesh.bc != PERIODIC:
        raise ValueError("cell problems require a periodic mesh")
    if not (0 <= direction < mesh.d):
        raise ValueError(f"direction must be in 0..{mesh.d - 1}")
    system = assemble(mesh, table)
    b = cell_rhs(mesh, system.weights, direction)
    chi, report = solve(system, b, x0=x0, tag=f"cell-e{direction + 1}")
    return chi, report


def energy(table: np.ndarray, u: GridField, v: GridField) -> float:
    """int A grad u . grad v via the edge (stencil-consistent) quadrature."""
    if u.mesh is not v.mesh and u.mesh != v.mesh:
        raise ValueError("fields live on different meshes")
    system = assemble(u.mesh, table)
    return system.bilinear(u.values, v.values)


def append_report_csv(path, report: SolveReport) -> None:
    import os

    write_header = not os.path.exists(path)
    with open(path, "a") as fh:
        if write_header:
            fh.write("tag,dof,iterations,residual,energy\n")
        fh.write(
            f"{report.tag},{report.dof},{report.iterations},"
            f"{report.residual:.6e},{report.energy:.12e}\n"
        )
