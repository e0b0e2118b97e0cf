"""Admissible control sets, exact projections, and adjoint-gradient solvers.

The epsilon-level problems minimize either a Dirichlet-type energy cost
(1/2) int B grad u . grad u + (N/2) ||theta||_2^2 or an L^r state cost
||u||_r^r + N ||theta||_2^2, with the state solving
-div(A grad u) = f + theta.  The optimizer is projected gradient with
Barzilai-Borwein steps and an Armijo backtracking fallback, so the
objective sequence is monotone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .domain import (
    GridField,
    Mesh,
    constant_table,
    element_average,
    l2_inner,
    l2_norm_nodal,
)
from .elliptic import LinearSystem, SolverError, assemble, solve

__all__ = [
    "ConvexSet",
    "ControlProblem",
    "Optimum",
    "OptimizerError",
    "project",
    "project_l1_masses",
    "solve_lowcost",
    "solve_limit_dirichlet",
    "solve_limit_measure",
    "hminus_norm",
]

STEP_TOL = 1e-8
KKT_TOL = 1e-7
MAX_ITER = 10_000


class OptimizerError(RuntimeError):
    pass


@dataclass(frozen=True)
class ConvexSet:
    """Admissible set descriptor with an exact discrete-L^2 projection.

    Kinds: ``whole-space``; ``box`` (lo, hi); ``positive-cone``;
    ``l2-ball`` (radius, in the h^d-weighted norm); ``l1-ball`` (bound on
    the discrete L^1 norm sum |theta_i| h^d).
    """

    kind: str
    lo: float = -np.inf
    hi: float = np.inf
    radius: float = 0.0

    def __post_init__(self):
        if self.kind not in ("whole-space", "box", "positive-cone", "l2-ball", "l1-ball"):
            raise ValueError(f"unknown convex set kind {self.kind!r}")
        if self.kind == "box" and not self.lo <= self.hi:
            raise ValueError("box needs lo <= hi")
        if self.kind in ("l2-ball", "l1-ball") and self.radius < 0:
            raise ValueError("ball radius must be >= 0")


def _project_l1(values: np.ndarray, radius: np.ndarray | float) -> np.ndarray:
    """Euclidean projection onto {sum |v_i| <= radius} (sort-based)."""
    if radius <= 0:
        return np.zeros_like(values)
    a = np.abs(values)
    if a.sum() <= radius:
        return values.copy()
    # soft threshold tau from the sorted cumulative sums
    s = np.sort(a)[::-1]
    cs = np.cumsum(s)
    k = np.arange(1, s.size + 1)
    tau_cand = (cs - radius) / k
    rho = np.nonzero(s > tau_cand)[0][-1]
    tau = tau_cand[rho]
    return np.sign(values) * np.maximum(a - tau, 0.0)


def project_l1_masses(masses: np.ndarray, bound: float) -> np.ndarray:
    """Projection of atom masses onto the total-variation ball sum|m| <= bound."""
    return _project_l1(np.asarray(masses, dtype=float), bound)


def project(cset: ConvexSet, theta: GridField) -> GridField:
    """Exact discrete-L^2 projection of a control onto the admissible set."""
    v = theta.values
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite control")
    if cset.kind == "whole-space":
        out = v.copy()
    elif cset.kind == "box":
        out = np.clip(v, cset.lo, cset.hi)
    elif cset.kind == "positive-cone":
        out = np.maximum(v, 0.0)
    elif cset.kind == "l2-ball":
        nrm = l2_norm_nodal(theta.mesh, v)
        out = v.copy() if nrm <= cset.radius else v * (cset.radius / nrm)
    else:  # l1-ball on the weighted norm sum|theta| h^d
        hd = theta.mesh.h**theta.mesh.d
        out = _project_l1(v, cset.radius / hd)
    return GridField(theta.mesh, out, role="control")


@dataclass
class ControlProblem:
    """Optimal control instance on a Dirichlet mesh.

    ``cost`` is ("dirichlet", B_table) or ("lr", r).  ``weight`` is the
    Tikhonov coefficient N (set to eps for low-cost runs).
    """

    mesh: Mesh
    A_table: np.ndarray
    cost: tuple
    f: GridField
    U: ConvexSet
    weight: float

    def __post_init__(self):
        kind = self.cost[0]
        if kind not in ("dirichlet", "lr"):
            raise ValueError(f"unknown cost kind {kind!r}")
        if kind == "lr":
            r = float(self.cost[1])
            if not 1.0 <= r <= 3.0:
                raise ValueError("r must lie in [1, 3]")
        if self.weight < 0:
            raise ValueError("Tikhonov weight must be >= 0")


@dataclass
class Optimum:
    theta: GridField
    state: GridField
    value: float
    kkt_residual: float
    iterations: int
    objective_history: list = field(default_factory=list)


class _Objective:
    """Shared state solves for value/gradient evaluation with warm starts."""

    def __init__(self, problem: ControlProblem):
        self.p = problem
        self.mesh = problem.mesh
        self.K = assemble(self.mesh, problem.A_table)
        self.Kt = assemble(self.mesh, problem.A_table, transpose=True)
        if problem.cost[0] == "dirichlet":
            self.KB = assemble(self.mesh, problem.cost[1])
            self.r = None
        else:
            self.KB = None
            self.r = float(problem.cost[1])
        self._u_warm = None
        self._p_warm = None

    def state(self, theta: np.ndarray) -> GridField:
        rhs = self.p.f.values + theta
        u, _ = solve(self.K, rhs, x0=self._u_warm, tag="state")
        self._u_warm = u.values
        return u

    def value(self, theta: np.ndarray, u: GridField | None = None) -> float:
        if u is None:
            u = self.state(theta)
        N = self.p.weight
        tik = 0.5 * N * l2_inner(self.mesh, theta, theta)
        if self.KB is not None:
            return 0.5 * self.KB.bilinear(u.values, u.values) + tik
        # L^r cost uses J = ||u||_r^r + N ||theta||_2^2 (no 1/2 factors)
        return self._lr_value(u) + 2.0 * tik

    def _lr_value(self, u: GridField) -> float:
        c = element_average(u)
        return float(np.sum(np.abs(c) ** self.r) * self.mesh.h**self.mesh.d)

    def _lr_nodal_gradient(self, u: GridField) -> np.ndarray:
        # d/du_node of sum |avg(u)|^r h^d through the corner averaging
        mesh = self.mesh
        c = element_average(u).reshape(mesh.element_shape())
        g_elem = self.r * np.abs(c) ** (self.r - 1.0) * np.sign(c)
        share = g_elem * mesh.h**mesh.d / 2**mesh.d
        R = np.zeros((mesh.N + 1,) * mesh.d)
        if mesh.d == 1:
            R[:-1] += share
            R[1:] += share
        else:
            R[:-1, :-1] += share
            R[1:, :-1] += share
            R[:-1, 1:] += share
            R[1:, 1:] += share
        from .elliptic import _unpad

        return _unpad(mesh, R)

    def value_and_gradient(self, theta: np.ndarray) -> tuple[float, np.ndarray, GridField]:
        u = self.state(theta)
        N = self.p.weight
        if self.KB is not None:
            J = 0.5 * self.KB.bilinear(u.values, u.values) \
                + 0.5 * N * l2_inner(self.mesh, theta, theta)
            adj_rhs = self.KB.apply(u.values)
            p, _ = solve(self.Kt, adj_rhs, x0=self._p_warm, tag="adjoint")
            grad = p.values + N * theta
        else:
            J = self._lr_value(u) + N * l2_inner(self.mesh, theta, theta)
            # adjoint rhs r|u|^{r-2}u in the h^d-weighted pairing
            adj_rhs = self._lr_nodal_gradient(u) / self.mesh.h**self.mesh.d
            p, _ = solve(self.Kt, adj_rhs, x0=self._p_warm, tag="adjoint")
            grad = p.values + 2.0 * N * theta
        self._p_warm = p.values
        return float(J), grad, u


def _projected_gradient(obj_val, obj_grad, proj, mesh: Mesh, theta0: np.ndarray,
                        step_tol: float = STEP_TOL, kkt_tol: float = KKT_TOL,
                        max_iter: int = MAX_ITER):
    """Monotone projected gradient with BB steps and Armijo backtracking.

    ``obj_val(theta)`` -> J, ``obj_grad(theta)`` -> (J, grad); ``proj``
    maps nodal vectors into the admissible set.  Distances use the
    discrete L^2 norm.
    """
    theta = proj(theta0.copy())
    J, g = obj_grad(theta)
    history = [J]
    step = 1.0
    prev_theta = None
    prev_g = None
    kkt = np.inf
    it = 0
    while it < max_iter:
        kkt = l2_norm_nodal(mesh, theta - proj(theta - g))
        if kkt <= kkt_tol:
            break
        if prev_theta is not None:
            s = theta - prev_theta
            y = g - prev_g
            sy = float(np.dot(s, y))
            if sy > 1e-300:
                step = float(np.dot(s, s)) / sy
            step = min(max(step, 1e-10), 1e10)
        accepted = False
        t = step
        for _ in range(60):
            cand = proj(theta - t * g)
            dcand = cand - theta
            Jc = obj_val(cand)
            lin = float(np.dot(g, dcand)) * mesh.h**mesh.d
            quad = 0.5 / t * l2_norm_nodal(mesh, dcand) ** 2
            if Jc <= J + 1e-4 * (lin + quad) + 1e-14 * (1 + abs(J)):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            raise OptimizerError("Armijo backtracking failed to find a descent step")
        step_len = l2_norm_nodal(mesh, cand - theta)
        prev_theta, prev_g = theta, g
        theta = cand
        J, g = obj_grad(theta)
        history.append(J)
        it += 1
        if step_len <= step_tol:
            kkt = l2_norm_nodal(mesh, theta - proj(theta - g))
            break
    if it >= max_iter:
        raise OptimizerError(f"projected gradient hit the {max_iter}-iteration cap")
    return theta, J, g, kkt, it, history


def solve_lowcost(problem: ControlProblem, theta0: np.ndarray | None = None) -> Optimum:
    """Minimize the epsilon-level cost over U by projected BB gradient."""
    if problem.weight <= 0:
        raise ValueError("low-cost solves need a positive Tikhonov weight")
    obj = _Objective(problem)
    mesh = problem.mesh
    if theta0 is None:
        theta0 = np.zeros(mesh.n_nodes)

    def proj(v):
        return project(problem.U, GridField(mesh, v, role="control")).values

    def val(v):
        return obj.value(v)

    def grad(v):
        J, g, _ = obj.value_and_gradient(v)
        return J, g

    theta, J, g, kkt, it, hist = _projected_gradient(val, grad, proj, mesh, theta0)
    u = obj.state(theta)
    return Optimum(
        theta=GridField(mesh, theta, role="control"),
        state=u,
        value=obj.value(theta, u),
        kkt_residual=kkt,
        iterations=it,
        objective_history=hist,
    )


def solve_limit_dirichlet(mesh: Mesh, A0: np.ndarray, Bsharp: np.ndarray,
                          f: GridField, U: ConvexSet,
                          ladder: tuple = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)) -> Optimum:
    """Minimize F(theta) = (1/2) int Bsharp grad u . grad u over U.

    F has no Tikhonov term; a decreasing regularization ladder keeps the
    iterations well posed and the final value is Richardson-extrapolated
    linearly in the ladder weight.
    """
    A_tab = constant_table(mesh, np.atleast_2d(A0))
    B_tab = constant_table(mesh, np.atleast_2d(Bsharp))
    theta0 = np.zeros(mesh.n_nodes)
    values = []
    opt = None
    for N in ladder:
        problem = ControlProblem(mesh=mesh, A_table=A_tab, cost=("dirichlet", B_tab),
                                 f=f, U=U, weight=N)
        opt = solve_lowcost(problem, theta0=theta0)
        theta0 = opt.theta.values
        # pure energy value, Tikhonov part removed
        KB = assemble(mesh, B_tab)
        values.append(0.5 * KB.bilinear(opt.state.values, opt.state.values))
    ratio = ladder[-1] / ladder[-2]
    extrapolated = (values[-1] - ratio * values[-2]) / (1.0 - ratio)
    return Optimum(
        theta=opt.theta,
        state=opt.state,
        value=float(extrapolated),
        kkt_residual=opt.kkt_residual,
        iterations=opt.iterations,
        objective_history=values,
    )


def solve_limit_measure(mesh: Mesh, A0: np.ndarray, f: GridField, k: float,
                        r: float = 2.0):
    """Minimize ||u0||_r^r over node-atom measures with total variation <= k.

    Returns (optimal DiscreteMeasure, state, value).  The state solves
    -div(A0 grad u0) = f + mu with mu a sum of node atoms.
    """
    from .measure import DiscreteMeasure, stampacchia_solve

    if k < 0:
        raise ValueError("total-variation bound must be >= 0")
    A_tab = constant_table(mesh, np.atleast_2d(A0))
    K = assemble(mesh, A_tab)
    Kt = assemble(mesh, A_tab, transpose=True)
    hd = mesh.h**mesh.d

    helper = ControlProblem(mesh=mesh, A_table=A_tab, cost=("lr", r), f=f,
                            U=ConvexSet("whole-space"), weight=0.0)
    obj = _Objective(helper)

    state_warm = {"u": None, "p": None}

    def state_of(masses):
        rhs = f.values + masses / hd
        u, _ = solve(K, rhs, x0=state_warm["u"], tag="limit-measure-state")
        state_warm["u"] = u.values
        return u

    def val(masses):
        return obj._lr_value(state_of(masses))

    def grad(masses):
        u = state_of(masses)
        J = obj._lr_value(u)
        adj_rhs = obj._lr_nodal_gradient(u) / hd
        p, _ = solve(Kt, adj_rhs, x0=state_warm["p"], tag="limit-measure-adjoint")
        state_warm["p"] = p.values
        return J, p.values

    def proj(masses):
        return project_l1_masses(masses, k)

    masses, J, g, kkt, it, hist = _projected_gradient(
        val, grad, proj, mesh, np.zeros(mesh.n_nodes))
    atoms = [(int(i), float(m)) for i, m in enumerate(masses) if m != 0.0]
    mu = DiscreteMeasure(mesh=mesh, atoms=atoms)
    u0 = state_of(masses)
    return mu, u0, float(J)


def hminus_norm(theta: GridField) -> float:
    """Discrete H^{-1} surrogate: ||grad w||_2 with -Lap w = theta."""
    from .domain import build_mesh, grad_norm

    mesh = theta.mesh
    lap = assemble(mesh, constant_table(mesh, np.eye(mesh.d)))
    w, _ = solve(lap, theta.values, tag="hminus")
    return grad_norm(w, 2)
