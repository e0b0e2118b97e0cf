"""Cell correctors, effective tensors and oscillatory gradient reconstruction.

All cell-average quadratures reuse the edge weights of the cell-problem
stencil, so the discrete flux identity  int_Y A (P + I) e_i dy = A0 e_i
holds to solver tolerance by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .domain import (
    CoefficientField,
    GridField,
    GridVectorField,
    Mesh,
    PERIODIC,
    _pad,
    build_mesh,
    element_gradient,
    sample_cell,
)
from .elliptic import assemble, edge_diffs, solve_cell

__all__ = [
    "CellCorrector",
    "CorrectorTable",
    "HomogenizedTensors",
    "homogenize_A",
    "assemble_Bsharp",
    "homogenize_B0",
    "reconstruct",
    "cell_flux_integral",
    "sym_eig_min",
]

MIN_CELL_RESOLUTION = 32
DEFAULT_MACRO_RES = 8


def sym_eig_min(mat: np.ndarray) -> float:
    """Smallest eigenvalue of a symmetric 1x1 or 2x2 matrix, closed form."""
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    if mat.shape == (1, 1):
        return float(mat[0, 0])
    if mat.shape != (2, 2):
        raise ValueError("closed-form eigensolver handles 1x1 and 2x2 only")
    a, b, c = mat[0, 0], 0.5 * (mat[0, 1] + mat[1, 0]), mat[1, 1]
    mean = 0.5 * (a + c)
    rad = np.sqrt(max(0.25 * (a - c) ** 2 + b * b, 0.0))
    return float(mean - rad)


@dataclass
class CellCorrector:
    """Correctors and effective tensor of one cell problem (fixed x)."""

    x: np.ndarray | None  # macro point, None for y-only fields
    chi: list  # d zero-mean GridFields on the cell mesh
    diffs: list  # diffs[i][k]: edge differences of chi_i along axis k
    P_elem: np.ndarray  # (n_cell_elements, d, d), columns = grad_y chi_i
    A0: np.ndarray  # (d, d)
    flux: np.ndarray  # (d, d), int_Y A (P + I), columnwise


@dataclass
class CorrectorTable:
    """Corrector data on a coarse macro grid (one entry if A = A(y))."""

    cell_mesh: Mesh
    macro_res: int  # macro cells per axis; 1 when the field is separable
    cells: list  # CellCorrector per macro cell, lexicographic
    field_name: str = ""

    @property
    def d(self) -> int:
        return self.cell_mesh.d

    @property
    def n_macro(self) -> int:
        return len(self.cells)

    def macro_index(self, x: np.ndarray) -> np.ndarray:
        """Piecewise-constant macro lookup for points of shape (m, d)."""
        if self.n_macro == 1:
            return np.zeros(x.shape[0], dtype=int)
        idx = np.clip((x * self.macro_res).astype(int), 0, self.macro_res - 1)
        out = idx[:, 0]
        for k in range(1, self.d):
            out = out * self.macro_res + idx[:, k]
        return out

    def A0_at(self, x: np.ndarray) -> np.ndarray:
        """(m, d, d) effective tensor at macro points."""
        mi = self.macro_index(np.atleast_2d(x))
        return np.stack([self.cells[i].A0 for i in mi])

    @property
    def A0_const(self) -> np.ndarray:
        if self.n_macro != 1:
            raise ValueError("tensor varies across macro cells")
        return self.cells[0].A0


def _macro_points(d: int, macro_res: int) -> np.ndarray:
    axis = (np.arange(macro_res) + 0.5) / macro_res
    if d == 1:
        return axis[:, None]
    X, Y = np.meshgrid(axis, axis, indexing="ij")
    return np.stack([X.ravel(), Y.ravel()], axis=1)


def _tensor_from_edges(mesh: Mesh, weights: list, diffs: list) -> np.ndarray:
    """T_ij = sum_e W_e (dchi_i + h delta)(dchi_j + h delta) over the cell."""
    d, h = mesh.d, mesh.h
    T = np.zeros((d, d))
    for i in range(d):
        for j in range(i, d):
            v = 0.0
            for k in range(d):
                di = diffs[i][k] + (h if k == i else 0.0)
                dj = diffs[j][k] + (h if k == j else 0.0)
                v += float(np.sum(weights[k] * di * dj))
            T[i, j] = T[j, i] = v
    return T


def _flux_from_edges(mesh: Mesh, weights: list, diffs: list) -> np.ndarray:
    """Columnwise int_Y A (grad chi_i + e_i) dy via edge fluxes."""
    d, h = mesh.d, mesh.h
    F = np.zeros((d, d))
    for i in range(d):
        for k in range(d):
            di = diffs[i][k] + (h if k == i else 0.0)
            F[k, i] = h * float(np.sum(weights[k] * di))
    return F


def _solve_one_cell(coeff: CoefficientField, cell_mesh: Mesh,
                    x: np.ndarray | None) -> CellCorrector:
    table = sample_cell(coeff, cell_mesh, x)
    system = assemble(cell_mesh, table)
    d = cell_mesh.d
    chis, diffs = [], []
    for i in range(d):
        chi, _ = solve_cell(cell_mesh, table, i)
        chis.append(chi)
        diffs.append(edge_diffs(cell_mesh, _pad(cell_mesh, chi.values)))
    P = np.zeros((cell_mesh.n_elements, d, d))
    for i in range(d):
        P[:, :, i] = element_gradient(chis[i]).values
    A0 = _tensor_from_edges(cell_mesh, system.weights, diffs)
    flux = _flux_from_edges(cell_mesh, system.weights, diffs)
    return CellCorrector(x=x, chi=chis, diffs=diffs, P_elem=P, A0=A0, flux=flux)


def homogenize_A(coeff: CoefficientField, cell_resolution: int,
                 macro_res: int = DEFAULT_MACRO_RES) -> tuple[np.ndarray, CorrectorTable]:
    """Solve the cell problems and return (A0, corrector table).

    A0 has shape (d, d) for y-only fields, (macro_res^d, d, d) otherwise.
    """
    if cell_resolution < MIN_CELL_RESOLUTION:
        raise ValueError(f"cell resolution must be >= {MIN_CELL_RESOLUTION}")
    cell_mesh = build_mesh(coeff.d, cell_resolution, PERIODIC)
    if coeff.separable:
        cells = [_solve_one_cell(coeff, cell_mesh, None)]
        table = CorrectorTable(cell_mesh, 1, cells, coeff.name)
        return cells[0].A0.copy(), table
    pts = _macro_points(coeff.d, macro_res)
    cells = [_solve_one_cell(coeff, cell_mesh, p) for p in pts]
    table = CorrectorTable(cell_mesh, macro_res, cells, coeff.name)
    return np.stack([c.A0 for c in cells]), table


def assemble_Bsharp(coeff_B: CoefficientField, table: CorrectorTable) -> np.ndarray:
    """Effective tensor of B-weighted energies on A-corrected gradients."""
    if coeff_B.d != table.d:
        raise ValueError("dimension mismatch between B and the corrector table")
    if not coeff_B.symmetric:
        raise ValueError("the weight matrix must be symmetric")
    out = []
    for cell in table.cells:
        tab_B = sample_cell(coeff_B, table.cell_mesh, cell.x)
        wB = assemble(table.cell_mesh, tab_B).weights
        out.append(_tensor_from_edges(table.cell_mesh, wB, cell.diffs))
    if table.n_macro == 1:
        return out[0]
    return np.stack(out)


def homogenize_B0(coeff_B: CoefficientField, cell_resolution: int,
                  macro_res: int = DEFAULT_MACRO_RES) -> np.ndarray:
    """Effective tensor of B itself (periodic cell formula applied to B)."""
    B0, _ = homogenize_A(coeff_B, cell_resolution, macro_res)
    return B0


def cell_flux_integral(table: CorrectorTable) -> np.ndarray:
    """int_Y A (P + I) dy per macro cell; equals A0 to solver tolerance."""
    if table.n_macro == 1:
        return table.cells[0].flux.copy()
    return np.stack([c.flux for c in table.cells])


def reconstruct(table: CorrectorTable, u0: GridField, eps: float) -> GridVectorField:
    """Per-element oscillatory gradient (P(x, x/eps) + I) grad u0."""
    from .domain import _check_epsilon

    mesh = u0.mesh
    _check_epsilon(mesh, eps)
    xc = mesh.element_centers()
    y = np.mod(xc / eps, 1.0)
    Nc = table.cell_mesh.N
    iy = np.clip((y * Nc).astype(int), 0, Nc - 1)
    if table.d == 1:
        elem = iy[:, 0]
    else:
        elem = iy[:, 0] * Nc + iy[:, 1]
    g = element_gradient(u0).values
    macro = table.macro_index(xc)
    out = np.empty_like(g)
    eye = np.eye(table.d)
    if table.n_macro == 1:
        P = table.cells[0].P_elem[elem]
        out = np.einsum("mij,mj->mi", P + eye, g)
    else:
        for mi in np.unique(macro):
            sel = macro == mi
            P = table.cells[mi].P_elem[elem[sel]]
            out[sel] = np.einsum("mij,mj->mi", P + eye, g[sel])
    return GridVectorField(mesh, out)


@dataclass
class HomogenizedTensors:
    """Bundle of effective tensors with JSON export."""

    A0: np.ndarray
    Bsharp: np.ndarray
    B0: np.ndarray | None
    cell_resolution: int
    preset_A: str = ""
    preset_B: str = ""

    def __post_init__(self):
        a = np.atleast_2d(self.A0)
        if np.any(np.array(a.shape[-2:]) != a.shape[-1]):
            raise ValueError("A0 must be square")

    def to_json(self) -> str:
        payload = {
            "A0": np.asarray(self.A0).tolist(),
            "Bsharp": np.asarray(self.Bsharp).tolist(),
            "B0": None if self.B0 is None else np.asarray(self.B0).tolist(),
            "cell_resolution": self.cell_resolution,
            "preset_A": self.preset_A,
            "preset_B": self.preset_B,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")
