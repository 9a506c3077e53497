"""Dense dual active-set solver for strictly convex inequality-constrained QPs.

Solves

    minimize    0.5 * u' H u + g' u
    subject to  G u <= w

with H symmetric positive definite, following the Goldfarb-Idnani dual
scheme: start at the unconstrained minimizer (always dual feasible), then
repeatedly add the most violated constraint, taking partial dual steps that
drop blocking constraints on the way.  H is factorized once by Cholesky and
that factor is reused for every direction solve.

The solver certifies its answer through the KKT residuals it returns; callers
treat a residual above tolerance as a failure, never as a warning.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import QPInfeasibleError, QPNumericError


@dataclass(frozen=True)
class QPProblem:
    """Condensed QP data; ``const`` completes the original objective."""

    H: np.ndarray
    g: np.ndarray
    G: np.ndarray
    w: np.ndarray
    const: float = 0.0

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        g = np.asarray(self.g, dtype=float)
        n = g.size
        G = np.asarray(self.G, dtype=float).reshape(-1, n)
        w = np.asarray(self.w, dtype=float).reshape(-1)
        if H.shape != (n, n):
            raise ValueError(f"H must be ({n},{n}), got {H.shape}")
        if w.size != G.shape[0]:
            raise ValueError("G and w row counts differ")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "w", w)

    @property
    def n_variables(self) -> int:
        return self.g.size

    @property
    def n_constraints(self) -> int:
        return self.w.size

    def objective(self, u) -> float:
        u = np.asarray(u, dtype=float)
        return float(0.5 * u @ self.H @ u + self.g @ u)


@dataclass(frozen=True)
class QPSolution:
    u: np.ndarray
    multipliers: np.ndarray
    active_set: tuple[int, ...]
    objective: float
    kkt: dict = field(repr=False)
    n_iterations: int = 0

    @property
    def kkt_residual(self) -> float:
        return max(self.kkt.values())


def kkt_residuals(problem: QPProblem, u, multipliers) -> dict:
    """Stationarity, primal/dual feasibility and complementarity residuals."""
    u = np.asarray(u, dtype=float)
    lam = np.asarray(multipliers, dtype=float)
    stationarity = problem.H @ u + problem.g
    if problem.n_constraints:
        stationarity = stationarity + problem.G.T @ lam
        slack = problem.G @ u - problem.w
        primal = float(np.maximum(slack, 0.0).max(initial=0.0))
        dual = float(np.maximum(-lam, 0.0).max(initial=0.0))
        comp = float(np.abs(lam * slack).max(initial=0.0))
    else:
        primal = dual = comp = 0.0
    return {
        "stationarity": float(np.abs(stationarity).max(initial=0.0)),
        "primal": primal,
        "dual": dual,
        "complementarity": comp,
    }


def solve_qp(problem: QPProblem, *, feas_tol: float = 1e-10,
             max_iter: int | None = None) -> QPSolution:
    """Solve the QP; raises on infeasible constraints or numeric breakdown."""
    n = problem.n_variables
    m = problem.n_constraints
    if max_iter is None:
        max_iter = 10 * (m + 1) + 50

    try:
        chol = scipy.linalg.cho_factor(problem.H, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise QPNumericError(f"Hessian Cholesky factorization failed: {exc}") from exc

    u = scipy.linalg.cho_solve(chol, -problem.g)
    lam_full = np.zeros(m)
    active: list[int] = []
    hi_cols: list[np.ndarray] = []  # H^-1 G[a]' for a in active
    lam_active: list[float] = []

    if m == 0:
        kkt = kkt_residuals(problem, u, lam_full)
        return QPSolution(u, lam_full, (), problem.objective(u), kkt, 0)

    iterations = 0
    while True:
        slack = problem.G @ u - problem.w
        if active:
            slack[np.array(active)] = 0.0  # active rows are equalities here
        worst = int(np.argmax(slack))
        if slack[worst] <= feas_tol:
            break

        a = problem.G[worst]
        lam_add = 0.0
        while True:
            iterations += 1
            if iterations > max_iter:
                lam_full = _scatter(lam_active, active, m)
                raise QPNumericError(
                    "active-set iteration limit exceeded",
                    residuals=kkt_residuals(problem, u, lam_full),
                )
            hi_a = scipy.linalg.cho_solve(chol, a)
            if active:
                n_mat = problem.G[np.array(active)].T          # n x q
                hi_n = np.column_stack(hi_cols)                # n x q
                s_mat = n_mat.T @ hi_n                         # q x q
                try:
                    r = np.linalg.solve(s_mat, n_mat.T @ hi_a)
                except np.linalg.LinAlgError as exc:
                    raise QPNumericError(f"active-set system singular: {exc}") from exc
                z = hi_a - hi_n @ r
            else:
                r = np.zeros(0)
                z = hi_a

            a_dot_z = float(a @ z)
            scale = max(1.0, float(np.abs(a).max()) * float(np.abs(u).max(initial=1.0)))
            curvature_ok = a_dot_z > 1e-14 * scale

            # Dual blocking step: first active multiplier driven to zero.
            t_block = np.inf
            block_idx = -1
            for k, rk in enumerate(r):
                if rk > 1e-14 and max(lam_active[k], 0.0) / rk < t_block:
                    t_block = max(lam_active[k], 0.0) / rk
                    block_idx = k

            if curvature_ok:
                t_full = (float(a @ u) - problem.w[worst]) / a_dot_z
            else:
                t_full = np.inf

            if not curvature_ok and t_block == np.inf:
                # Constraint normal lies in the span of the active normals and
                # no multiplier can give way: the combined rows conflict.
                lam_full = _scatter(lam_active, active, m)
                raise QPInfeasibleError(
                    f"constraints {tuple(active)} and {worst} are inconsistent",
                    certificate={"active": tuple(active), "entering": worst,
                                 "combination": r.copy()},
                )

            t = min(t_full, t_block)
            if t == np.inf:
                raise QPNumericError("unbounded dual step")  # pragma: no cover
            u = u - t * z
            lam_active = [lk - t * rk for lk, rk in zip(lam_active, r)]
            lam_add += t

            if t == t_block and t_block < t_full:
                del active[block_idx]
                del hi_cols[block_idx]
                del lam_active[block_idx]
                continue
            active.append(worst)
            hi_cols.append(hi_a)
            lam_active.append(lam_add)
            break

    lam_full = _scatter(lam_active, active, m)
    kkt = kkt_residuals(problem, u, lam_full)
    return QPSolution(
        u=u,
        multipliers=lam_full,
        active_set=tuple(sorted(active)),
        objective=problem.objective(u),
        kkt=kkt,
        n_iterations=iterations,
    )


def _scatter(lam_active, active, m):
    lam = np.zeros(m)
    for idx, value in zip(active, lam_active):
        lam[idx] = value
    return lam
