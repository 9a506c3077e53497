"""Per-region MPC: gain sets, condensed QP construction, receding horizon.

The stage cost is the weighted-square sum

    J(x~(0), {u~}) = x~(N)' P x~(N)
                     + sum_{i=0}^{N-1} ( x~(i)' Q x~(i) + u~(i)' R u~(i) )

over the region's discrete model x~(i+1) = A x~(i) + B u~(i), in perturbation
coordinates around the steady targets (x*, u*).  States are eliminated
through the prediction matrices, leaving a strictly convex QP in the stacked
input sequence.  Only the first move of the minimizer is applied.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ControllerFault, QPInfeasibleError, QPNumericError
from .plant import RegionModel
from .qp import QPProblem, solve_qp

N_GAIN_PARAMETERS = 26  # 10 + 10 + 6 independent entries of (P, Q, R)

_TRIL4 = np.tril_indices(4)
_TRIL3 = np.tril_indices(3)

DEFAULT_HORIZON = 10

# Cone tolerance applied when gains enter a controller: oracle probes sit
# within mu*||M|| of the cones and must stay evaluable.
PROBE_TOL = 1e-6


def _symmetric(mat, size, name, tol=1e-10):
    mat = np.asarray(mat, dtype=float)
    if mat.shape != (size, size):
        raise ValueError(f"{name} must be {size}x{size}, got {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise ValueError(f"{name} has non-finite entries")
    if np.abs(mat - mat.T).max() > tol * max(1.0, np.abs(mat).max()):
        raise ValueError(f"{name} is not symmetric")
    return (mat + mat.T) / 2.0


@dataclass(frozen=True)
class GainSet:
    """Symmetric tuning matrices (P, Q, R) and the horizon length.

    P and Q must be positive semidefinite and R positive definite; symmetry
    brings the independent parameter count down to 26 (10 + 10 + 6).
    """

    P: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    horizon: int = DEFAULT_HORIZON

    def __post_init__(self):
        object.__setattr__(self, "P", _symmetric(self.P, 4, "P"))
        object.__setattr__(self, "Q", _symmetric(self.Q, 4, "Q"))
        object.__setattr__(self, "R", _symmetric(self.R, 3, "R"))
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")

    def validate(self, *, tol: float = 1e-10, pd_floor: float = 1e-15) -> None:
        """Check the cone memberships up to ``tol``; raises ValueError if violated.

        P and Q must have eigenvalues >= -tol and R >= pd_floor - tol.
        Controllers validate with a tolerance at the oracle's smoothing scale
        so that perturbed probe candidates stay evaluable; actual QP
        solvability is arbitrated by the Hessian factorization.
        """
        if np.linalg.eigvalsh(self.P).min() < -tol:
            raise ValueError("P is not positive semidefinite")
        if np.linalg.eigvalsh(self.Q).min() < -tol:
            raise ValueError("Q is not positive semidefinite")
        if np.linalg.eigvalsh(self.R).min() < pd_floor - tol:
            raise ValueError(f"R has an eigenvalue below the floor {pd_floor:g}")

    def parameters(self) -> np.ndarray:
        """The 26-vector of independent entries (lower triangles, row-major)."""
        return np.concatenate([
            self.P[_TRIL4], self.Q[_TRIL4], self.R[_TRIL3]
        ])

    @classmethod
    def from_parameters(cls, kappa, horizon: int = DEFAULT_HORIZON) -> "GainSet":
        kappa = np.asarray(kappa, dtype=float).reshape(-1)
        if kappa.size != N_GAIN_PARAMETERS:
            raise ValueError(f"expected {N_GAIN_PARAMETERS} parameters, got {kappa.size}")
        return cls(
            P=_from_tril(kappa[:10], 4),
            Q=_from_tril(kappa[10:20], 4),
            R=_from_tril(kappa[20:], 3),
            horizon=horizon,
        )

    def to_dict(self) -> dict:
        return {
            "P": self.P[_TRIL4].tolist(),
            "Q": self.Q[_TRIL4].tolist(),
            "R": self.R[_TRIL3].tolist(),
            "horizon": self.horizon,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GainSet":
        return cls(
            P=_from_tril(np.asarray(data["P"], dtype=float), 4),
            Q=_from_tril(np.asarray(data["Q"], dtype=float), 4),
            R=_from_tril(np.asarray(data["R"], dtype=float), 3),
            horizon=int(data["horizon"]),
        )

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def from_json(cls, path) -> "GainSet":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _from_tril(values, size):
    mat = np.zeros((size, size))
    mat[np.tril_indices(size)] = values
    return mat + np.tril(mat, -1).T


def prediction_matrices(A, B, horizon: int):
    """Stack x~(i) = Sx[i] x~(0) + Su[i] U for i = 0..N over the horizon."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    n, m = B.shape
    sx = np.zeros(((horizon + 1) * n, n))
    su = np.zeros(((horizon + 1) * n, horizon * m))
    sx[:n] = np.eye(n)
    for i in range(1, horizon + 1):
        rows = slice(i * n, (i + 1) * n)
        prev = slice((i - 1) * n, i * n)
        sx[rows] = A @ sx[prev]
        su[rows] = A @ su[prev]
        su[rows, (i - 1) * m: i * m] = B
    return sx, su


@dataclass(frozen=True)
class CondensedStructure:
    """State-independent part of the condensed QP for fixed (A, B, P, Q, R, N).

    Per sampled state x~(0) the concrete problem is

        H fixed,   g = lin_map @ x0,   const = x0' const_map x0,
        G fixed,   w = w_const + w_shift @ x0.
    """

    H: np.ndarray
    lin_map: np.ndarray     # g = lin_map @ x0
    const_map: np.ndarray   # const = x0' const_map x0
    G: np.ndarray
    w_const: np.ndarray
    w_shift: np.ndarray
    n_states: int
    n_inputs: int
    horizon: int

    def instantiate(self, x0_tilde) -> QPProblem:
        x0_tilde = np.asarray(x0_tilde, dtype=float).reshape(self.n_states)
        return QPProblem(
            H=self.H,
            g=self.lin_map @ x0_tilde,
            G=self.G,
            w=self.w_const + self.w_shift @ x0_tilde,
            const=float(x0_tilde @ self.const_map @ x0_tilde),
        )


def condense_structure(A, B, P, Q, R, horizon: int, *,
                       x_bounds=None, u_bounds=None) -> CondensedStructure:
    """Build the reusable condensed-QP data for a fixed model and gains.

    ``x_bounds`` and ``u_bounds`` are (lower, upper) pairs already expressed
    in perturbation coordinates; ``None`` (or infinite entries) means
    unconstrained.  State boxes are imposed on the predicted states i = 1..N
    (x~(0) is data, not a decision variable).
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    P = np.atleast_2d(np.asarray(P, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n, m = B.shape
    N = int(horizon)

    sx, su = prediction_matrices(A, B, N)
    qbar = scipy.linalg.block_diag(*([Q] * N + [P]))
    rbar = scipy.linalg.block_diag(*([R] * N))

    h = 2.0 * (su.T @ qbar @ su + rbar)
    h = (h + h.T) / 2.0
    lin_map = 2.0 * (su.T @ qbar @ sx)
    const_map = sx.T @ qbar @ sx

    rows = []
    w_const = []
    w_shift = []
    zero_shift = np.zeros(n)
    if u_bounds is not None:
        u_lb, u_ub = (np.asarray(v, dtype=float) for v in u_bounds)
        eye = np.eye(N * m)
        for i in range(N * m):
            ub = u_ub[i % m]
            lb = u_lb[i % m]
            if np.isfinite(ub):
                rows.append(eye[i])
                w_const.append(ub)
                w_shift.append(zero_shift)
            if np.isfinite(lb):
                rows.append(-eye[i])
                w_const.append(-lb)
                w_shift.append(zero_shift)
    if x_bounds is not None:
        x_lb, x_ub = (np.asarray(v, dtype=float) for v in x_bounds)
        for i in range(1, N + 1):
            for k in range(n):
                row = su[i * n + k]
                free_row = sx[i * n + k]
                if np.isfinite(x_ub[k]):
                    rows.append(row)
                    w_const.append(x_ub[k])
                    w_shift.append(-free_row)
                if np.isfinite(x_lb[k]):
                    rows.append(-row)
                    w_const.append(-x_lb[k])
                    w_shift.append(free_row)
    g_mat = np.array(rows).reshape(-1, N * m) if rows else np.zeros((0, N * m))
    w_shift_mat = (np.array(w_shift).reshape(-1, n) if w_shift
                   else np.zeros((0, n)))
    return CondensedStructure(
        H=h, lin_map=lin_map, const_map=const_map,
        G=g_mat, w_const=np.array(w_const, dtype=float), w_shift=w_shift_mat,
        n_states=n, n_inputs=m, horizon=N,
    )


def condense_dynamics(A, B, P, Q, R, horizon: int, x0_tilde, *,
                      x_bounds=None, u_bounds=None) -> QPProblem:
    """One-shot condensed QP; see :func:`condense_structure`.

    The returned problem satisfies

        0.5 u'Hu + g'u + const == J(x~(0), {u~})

    for every input sequence u.
    """
    structure = condense_structure(A, B, P, Q, R, horizon,
                                   x_bounds=x_bounds, u_bounds=u_bounds)
    return structure.instantiate(x0_tilde)


def condense(region: RegionModel, gains: GainSet, x0_tilde, *,
             x_bounds=None, u_bounds=None) -> QPProblem:
    """Condensed QP for one region under a validated gain set."""
    gains.validate(tol=PROBE_TOL)
    return condense_dynamics(
        region.A, region.B, gains.P, gains.Q, gains.R, gains.horizon,
        x0_tilde, x_bounds=x_bounds, u_bounds=u_bounds,
    )


def _as_rows(arr):
    arr = np.asarray(arr, dtype=float)
    return arr[:, None] if arr.ndim == 1 else arr


def stage_cost(x_traj, u_seq, P, Q, R) -> float:
    """Direct summation of the horizon cost over an explicit trajectory."""
    x_traj = _as_rows(x_traj)
    u_seq = _as_rows(u_seq)
    P = np.atleast_2d(np.asarray(P, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    N = u_seq.shape[0]
    if x_traj.shape[0] != N + 1:
        raise ValueError(
            f"trajectory must have {N + 1} states for {N} moves, got {x_traj.shape[0]}"
        )
    total = float(x_traj[N] @ P @ x_traj[N])
    for i in range(N):
        total += float(x_traj[i] @ Q @ x_traj[i])
        total += float(u_seq[i] @ R @ u_seq[i])
    return total


def evaluate_cost(x_traj, u_seq, gains: GainSet) -> float:
    """Horizon cost of a trajectory under a gain set (length-checked)."""
    u_seq = _as_rows(u_seq)
    if u_seq.shape[0] != gains.horizon:
        raise ValueError(
            f"input sequence must have {gains.horizon} moves, got {u_seq.shape[0]}"
        )
    return stage_cost(x_traj, u_seq, gains.P, gains.Q, gains.R)


def riccati_terminal_weight(region: RegionModel, Q=None, R=None) -> np.ndarray:
    """Stabilizing solution of the discrete algebraic Riccati equation."""
    n, m = region.B.shape
    Q = np.eye(n) if Q is None else np.asarray(Q, dtype=float)
    R = np.eye(m) if R is None else np.asarray(R, dtype=float)
    return scipy.linalg.solve_discrete_are(region.A, region.B, Q, R)


def default_gains(region: RegionModel, horizon: int = DEFAULT_HORIZON) -> GainSet:
    """Riccati baseline: Q = I, R = I, P their DARE fixed point."""
    n, m = region.B.shape
    p = riccati_terminal_weight(region)
    return GainSet(P=(p + p.T) / 2.0, Q=np.eye(n), R=np.eye(m), horizon=horizon)


class MpcController:
    """Receding-horizon controller for one region.

    Holds the immutable condensed data for a fixed (region, gains, targets)
    triple; `step` builds the per-sample QP from the sampled state and
    applies the first optimized move.  Instances are cheap enough to create
    per region/reference pair and must not be stepped concurrently.
    """

    def __init__(self, region: RegionModel, gains: GainSet, *,
                 x_bounds=None, u_bounds=None, targets=None):
        gains.validate(tol=PROBE_TOL)
        self.region = region
        self.gains = gains
        if targets is None:
            targets = (region.x_star, region.u_star, region.r_star)
        self.x_star = np.asarray(targets[0], dtype=float)
        self.u_star = np.asarray(targets[1], dtype=float)
        self.reference = np.asarray(targets[2], dtype=float)
        self._x_bounds_abs = x_bounds
        self._u_bounds_abs = u_bounds

        n, m = region.B.shape
        self.n_states, self.n_inputs = n, m
        self._x_bounds = self._shift(x_bounds, self.x_star)
        self._u_bounds = self._shift(u_bounds, self.u_star)
        self._structure = condense_structure(
            region.A, region.B, gains.P, gains.Q, gains.R, gains.horizon,
            x_bounds=self._x_bounds, u_bounds=self._u_bounds,
        )
        self.last_applied = self.u_star.copy()

    @staticmethod
    def _shift(bounds, center):
        if bounds is None:
            return None
        lb, ub = (np.asarray(v, dtype=float) for v in bounds)
        return lb - center, ub - center

    def step(self, x_sample) -> tuple[np.ndarray, dict]:
        """One receding-horizon move; returns (applied input, diagnostics)."""
        x_sample = np.asarray(x_sample, dtype=float).reshape(self.n_states)
        x0_tilde = x_sample - self.x_star
        problem = self._structure.instantiate(x0_tilde)
        try:
            solution = solve_qp(problem)
        except (QPInfeasibleError, QPNumericError) as exc:
            raise ControllerFault(
                f"region {self.region.index}: QP failed: {exc}",
                region_index=self.region.index,
                residuals=getattr(exc, "residuals", None),
            ) from exc
        if solution.kkt_residual > 1e-8:
            raise ControllerFault(
                f"region {self.region.index}: KKT residual "
                f"{solution.kkt_residual:.3e} above tolerance",
                region_index=self.region.index,
                residuals=solution.kkt,
            )
        u_tilde0 = solution.u[: self.n_inputs]
        applied = self.u_star + u_tilde0
        if self._u_bounds_abs is not None:
            lb, ub = self._u_bounds_abs
            applied = np.clip(applied, lb, ub)
        self.last_applied = applied
        info = {
            "u_tilde0": u_tilde0,
            "objective": solution.objective + problem.const,
            "kkt": solution.kkt,
            "active_set": solution.active_set,
            "qp_iterations": solution.n_iterations,
        }
        return applied, info


def mpc_step(x_sample, region: RegionModel, gains: GainSet, *,
             x_bounds=None, u_bounds=None, targets=None) -> np.ndarray:
    """Single MPC move for a sampled state (one-shot controller)."""
    controller = MpcController(
        region, gains, x_bounds=x_bounds, u_bounds=u_bounds, targets=targets
    )
    applied, _ = controller.step(x_sample)
    return applied
