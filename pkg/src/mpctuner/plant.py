"""Synthetic four-state air-path twin: dynamics, operating grid, linearization.

The plant stands in for an unavailable mean-value engine model.  Its dynamics
are a parameter-dependent linear core plus mild bilinear coupling, written in
deviations from a designed equilibrium map, so that

* every operating point ``theta`` admits an exact equilibrium by construction,
* the Jacobians at those equilibria equal the configured linear parts (the
  coupling terms are products of deviations, hence vanish to first order),
* the regional linearizations stay genuinely distinct across the grid.

Conventions used throughout the package:

==========  ======================================  =================
quantity    components                              typical box
==========  ======================================  =================
state x     (p_in, p_ex, w_comp, f_egr)             normalized, see
                                                    ``PlantConfig``
input u     (u_thr, u_egr, u_vgt)                   each in [0, 1]
theta       (w, w_fuel)                             rectangle Theta
output y    (p_in, f_egr)                           direct state reads
==========  ======================================  =================
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import (
    DomainError,
    GridBuildError,
    IntegrationError,
    NumericError,
    SteadyStateError,
)

N_STATES = 4
N_INPUTS = 3
N_THETA = 2
N_OUTPUTS = 2

STATE_NAMES = ("p_in", "p_ex", "w_comp", "f_egr")
INPUT_NAMES = ("u_thr", "u_egr", "u_vgt")
THETA_NAMES = ("w", "w_fuel")

# Output map: boost pressure and EGR rate are direct state reads.
OUTPUT_MATRIX = np.zeros((N_OUTPUTS, N_STATES))
OUTPUT_MATRIX[0, 0] = 1.0
OUTPUT_MATRIX[1, 3] = 1.0
OUTPUT_MATRIX.setflags(write=False)

FEEDTHROUGH_MATRIX = np.zeros((N_OUTPUTS, N_INPUTS))
FEEDTHROUGH_MATRIX.setflags(write=False)


def _vector(value, size, name):
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.shape != (size,):
        raise ValueError(f"{name} must have shape ({size},), got {arr.shape}")
    return arr


def _check_box(arr, lb, ub, names, what):
    for k, name in enumerate(names):
        if not np.isfinite(arr[k]):
            raise DomainError(f"{what} component {name} is not finite")
        if arr[k] < lb[k] or arr[k] > ub[k]:
            raise DomainError(
                f"{what} component {name}={arr[k]:.6g} outside [{lb[k]:g}, {ub[k]:g}]"
            )


@dataclass(frozen=True)
class PlantState:
    """Plant state (p_in, p_ex, w_comp, f_egr), normalized units."""

    p_in: float
    p_ex: float
    w_comp: float
    f_egr: float

    def __post_init__(self):
        arr = self.as_array()
        if not np.all(np.isfinite(arr)):
            raise DomainError("plant state must be finite")
        if not 0.0 <= self.f_egr <= 1.0:
            raise DomainError(f"f_egr={self.f_egr:.6g} outside [0, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([self.p_in, self.p_ex, self.w_comp, self.f_egr])

    @classmethod
    def from_array(cls, arr) -> "PlantState":
        arr = _vector(arr, N_STATES, "state")
        return cls(*arr)


@dataclass(frozen=True)
class ControlInput:
    """Actuator positions (throttle, EGR valve, VGT vane), each in [0, 1]."""

    u_thr: float
    u_egr: float
    u_vgt: float

    def __post_init__(self):
        arr = self.as_array()
        for k, name in enumerate(INPUT_NAMES):
            if not np.isfinite(arr[k]) or not 0.0 <= arr[k] <= 1.0:
                raise DomainError(f"{name}={arr[k]:.6g} outside [0, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([self.u_thr, self.u_egr, self.u_vgt])

    @classmethod
    def from_array(cls, arr) -> "ControlInput":
        arr = _vector(arr, N_INPUTS, "input")
        return cls(*arr)


@dataclass(frozen=True)
class OperatingPoint:
    """Engine speed and volumetric fueling rate, normalized."""

    w: float
    w_fuel: float

    def __post_init__(self):
        if not (np.isfinite(self.w) and np.isfinite(self.w_fuel)):
            raise DomainError("operating point must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.w_fuel])

    @classmethod
    def from_array(cls, arr) -> "OperatingPoint":
        arr = _vector(arr, N_THETA, "operating point")
        return cls(*arr)


@dataclass(frozen=True)
class PlantOutput:
    """Tracked outputs: boost pressure and EGR rate."""

    y1: float
    y2: float

    def as_array(self) -> np.ndarray:
        return np.array([self.y1, self.y2])


def _as_array(value, size, name):
    if hasattr(value, "as_array"):
        value = value.as_array()
    return _vector(value, size, name)


def _readonly(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PlantConfig:
    """Coefficients and operating boxes of the synthetic twin.

    The linear core is affine in the operating point measured from the
    center of Theta:

        A(theta) = a0 + (w - w_c) * a_w + (w_fuel - wf_c) * a_f
        B(theta) = b0 + (w - w_c) * b_w + (w_fuel - wf_c) * b_f

    The designed equilibrium map is affine in theta:

        x_eq(theta) = eq_x0 + eq_x @ theta
        u_eq(theta) = eq_u0 + eq_u @ theta

    and the coupling adds ``coupling * q(dx, du)`` where every term of q is a
    product of two deviations (value and Jacobian both vanish at the
    equilibrium).  All coefficients are artifact choices, not measured engine
    physics.
    """

    a0: np.ndarray
    a_w: np.ndarray
    a_f: np.ndarray
    b0: np.ndarray
    b_w: np.ndarray
    b_f: np.ndarray
    eq_x0: np.ndarray
    eq_x: np.ndarray
    eq_u0: np.ndarray
    eq_u: np.ndarray
    coupling: float = 0.08
    x_lb: np.ndarray = field(default_factory=lambda: np.array([0.05, 0.05, 0.0, 0.0]))
    x_ub: np.ndarray = field(default_factory=lambda: np.array([2.0, 2.5, 1.5, 1.0]))
    u_lb: np.ndarray = field(default_factory=lambda: np.zeros(3))
    u_ub: np.ndarray = field(default_factory=lambda: np.ones(3))
    y_lb: np.ndarray = field(default_factory=lambda: np.array([0.05, 0.0]))
    y_ub: np.ndarray = field(default_factory=lambda: np.array([2.0, 1.0]))
    theta_lb: np.ndarray = field(default_factory=lambda: np.array([0.2, 0.1]))
    theta_ub: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.9]))
    dt: float = 0.02
    ts: float = 0.1
    n_speed: int = 3
    n_fuel: int = 4
    output_noise_std: float = 0.0

    def __post_init__(self):
        for name in (
            "a0", "a_w", "a_f", "b0", "b_w", "b_f",
            "eq_x0", "eq_x", "eq_u0", "eq_u",
            "x_lb", "x_ub", "u_lb", "u_ub", "y_lb", "y_ub",
            "theta_lb", "theta_ub",
        ):
            object.__setattr__(self, name, _readonly(getattr(self, name)))
        if self.dt <= 0 or self.ts <= 0:
            raise ValueError("dt and ts must be positive")
        if self.n_speed < 1 or self.n_fuel < 1:
            raise ValueError("grid sizes must be at least 1")

    @property
    def theta_center(self) -> np.ndarray:
        return (self.theta_lb + self.theta_ub) / 2.0

    @classmethod
    def default(cls) -> "PlantConfig":
        a0 = [
            [-1.4, 0.25, 0.45, -0.3],
            [0.3, -1.8, 0.2, 0.5],
            [0.35, 0.25, -2.2, 0.0],
            [-0.15, 0.3, 0.1, -1.1],
        ]
        a_w = [
            [-0.4, 0.0, 0.15, 0.0],
            [0.1, -0.5, 0.0, 0.1],
            [0.05, 0.0, -0.6, 0.0],
            [0.0, 0.05, 0.0, -0.25],
        ]
        a_f = [
            [0.2, 0.1, 0.0, 0.0],
            [0.15, 0.25, 0.0, -0.1],
            [0.0, 0.05, 0.15, 0.0],
            [0.05, 0.0, 0.0, 0.2],
        ]
        b0 = [
            [0.9, -0.25, 0.35],
            [0.15, 0.2, 0.8],
            [0.4, -0.1, 0.55],
            [-0.2, 0.85, -0.3],
        ]
        b_w = [
            [0.2, 0.0, 0.1],
            [0.0, 0.0, 0.15],
            [0.1, 0.0, 0.1],
            [0.0, 0.1, 0.0],
        ]
        b_f = [
            [0.1, -0.05, 0.0],
            [0.05, 0.0, 0.1],
            [0.0, 0.0, 0.05],
            [-0.05, 0.15, 0.0],
        ]
        eq_x0 = [0.42, 0.53, 0.13, 0.395]
        eq_x = [
            [0.15, 0.35],
            [0.18, 0.43],
            [0.52, 0.10],
            [0.05, -0.18],
        ]
        eq_u0 = [0.55, 0.435, 0.505]
        eq_u = [
            [0.10, -0.10],
            [0.0, 0.15],
            [0.15, -0.05],
        ]
        return cls(
            a0=a0, a_w=a_w, a_f=a_f, b0=b0, b_w=b_w, b_f=b_f,
            eq_x0=eq_x0, eq_x=eq_x, eq_u0=eq_u0, eq_u=eq_u,
        )

    def to_dict(self) -> dict:
        out = {}
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            out[name] = value.tolist() if isinstance(value, np.ndarray) else value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "PlantConfig":
        return cls(**data)

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def from_json(cls, path) -> "PlantConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class RegionModel:
    """One operating region: grid point, discrete LTI model, steady targets."""

    index: int
    theta_sharp: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    x_star: np.ndarray
    u_star: np.ndarray
    r_star: np.ndarray
    ts: float

    def __post_init__(self):
        for name in ("theta_sharp", "A", "B", "C", "D", "x_star", "u_star", "r_star"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "theta_sharp": self.theta_sharp.tolist(),
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
            "D": self.D.tolist(),
            "x_star": self.x_star.tolist(),
            "u_star": self.u_star.tolist(),
            "r_star": self.r_star.tolist(),
            "ts": self.ts,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RegionModel":
        return cls(**data)


def linear_parts(cfg: PlantConfig, theta) -> tuple[np.ndarray, np.ndarray]:
    """Continuous-time (A, B) of the twin's linear core at ``theta``."""
    theta = _as_array(theta, N_THETA, "theta")
    dw, df = theta - cfg.theta_center
    A = cfg.a0 + dw * cfg.a_w + df * cfg.a_f
    B = cfg.b0 + dw * cfg.b_w + df * cfg.b_f
    return A, B


def equilibrium_state(cfg: PlantConfig, theta) -> np.ndarray:
    theta = _as_array(theta, N_THETA, "theta")
    return cfg.eq_x0 + cfg.eq_x @ theta


def equilibrium_input(cfg: PlantConfig, theta) -> np.ndarray:
    theta = _as_array(theta, N_THETA, "theta")
    return cfg.eq_u0 + cfg.eq_u @ theta


def default_reference(cfg: PlantConfig, theta) -> np.ndarray:
    """Reference pair tracked at the designed equilibrium of ``theta``."""
    return OUTPUT_MATRIX @ equilibrium_state(cfg, theta)


def _coupling_terms(dx, du):
    # Smooth bilinear cross-terms; every term is a product of two deviations.
    return np.array([
        np.tanh(dx[1]) * du[2] - dx[0] * dx[2],
        dx[0] * du[0] - np.tanh(dx[2]) * dx[1],
        np.tanh(dx[0]) * du[2] - dx[2] * dx[3],
        np.tanh(dx[1]) * du[1] - dx[3] * dx[0],
    ])


def check_domain(x, u, theta, cfg: PlantConfig) -> None:
    """Raise :class:`DomainError` naming the first violated bound."""
    x = _as_array(x, N_STATES, "state")
    u = _as_array(u, N_INPUTS, "input")
    theta = _as_array(theta, N_THETA, "theta")
    _check_box(x, cfg.x_lb, cfg.x_ub, STATE_NAMES, "state")
    _check_box(u, cfg.u_lb, cfg.u_ub, INPUT_NAMES, "input")
    _check_box(theta, cfg.theta_lb, cfg.theta_ub, THETA_NAMES, "operating point")


def evaluate_dynamics(x, u, theta, cfg: PlantConfig, *, validate: bool = True) -> np.ndarray:
    """State derivative of the twin, xdot = f(x, u, theta).

    With ``validate=False`` the smooth formulas are evaluated outside the
    operating boxes (used by integrators for intermediate stage points).
    """
    x = _as_array(x, N_STATES, "state")
    u = _as_array(u, N_INPUTS, "input")
    theta = _as_array(theta, N_THETA, "theta")
    if validate:
        check_domain(x, u, theta, cfg)
    dx = x - equilibrium_state(cfg, theta)
    du = u - equilibrium_input(cfg, theta)
    A, B = linear_parts(cfg, theta)
    return A @ dx + B @ du + cfg.coupling * _coupling_terms(dx, du)


def output_map(x, u=None, theta=None) -> np.ndarray:
    """Measured outputs y = (p_in, f_egr); no feedthrough."""
    x = _as_array(x, N_STATES, "state")
    return OUTPUT_MATRIX @ x


def rk4_step(func, x, dt: float) -> np.ndarray:
    """One classical Runge-Kutta step of xdot = func(x)."""
    k1 = func(x)
    k2 = func(x + 0.5 * dt * k1)
    k3 = func(x + 0.5 * dt * k2)
    k4 = func(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_step(x, u, theta, dt: float, cfg: PlantConfig, *, validate: bool = True) -> np.ndarray:
    """Advance the twin by one RK4 step under a held input."""
    if dt <= 0:
        raise DomainError(f"dt={dt:g} must be positive")
    x = _as_array(x, N_STATES, "state")
    u = _as_array(u, N_INPUTS, "input")
    theta = _as_array(theta, N_THETA, "theta")
    if validate:
        check_domain(x, u, theta, cfg)
    x_next = rk4_step(
        lambda s: evaluate_dynamics(s, u, theta, cfg, validate=False), x, dt
    )
    if not np.all(np.isfinite(x_next)):
        raise IntegrationError("integration produced a non-finite state")
    return x_next


def central_difference_jacobian(func, z0, rel_step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian with per-coordinate step rel_step*(1+|z|)."""
    z0 = np.asarray(z0, dtype=float)
    f0 = np.atleast_1d(np.asarray(func(z0), dtype=float))
    jac = np.empty((f0.size, z0.size))
    for k in range(z0.size):
        h = rel_step * (1.0 + abs(z0[k]))
        zp = z0.copy()
        zm = z0.copy()
        zp[k] += h
        zm[k] -= h
        jac[:, k] = (
            np.atleast_1d(np.asarray(func(zp), dtype=float))
            - np.atleast_1d(np.asarray(func(zm), dtype=float))
        ) / (2.0 * h)
    return jac


def linearize(theta_sharp, cfg: PlantConfig, equilibrium=None):
    """Continuous (A_c, B_c, C_c, D_c) at the equilibrium for ``theta_sharp``.

    Jacobians of f are taken by central differences; the output map is linear
    so C and D are exact.  When ``equilibrium`` is omitted it is solved for
    the designed default reference of the operating point.
    """
    theta = _as_array(theta_sharp, N_THETA, "theta")
    if equilibrium is None:
        equilibrium = solve_steady_state(theta, default_reference(cfg, theta), cfg)
    x_star, u_star = (np.asarray(v, dtype=float) for v in equilibrium)

    a_c = central_difference_jacobian(
        lambda x: evaluate_dynamics(x, u_star, theta, cfg, validate=False), x_star
    )
    b_c = central_difference_jacobian(
        lambda u: evaluate_dynamics(x_star, u, theta, cfg, validate=False), u_star
    )
    return a_c, b_c, OUTPUT_MATRIX.copy(), FEEDTHROUGH_MATRIX.copy()


def discretize(a_c, b_c, ts: float, *, tol: float = 1e-14, max_terms: int = 100):
    """Zero-order-hold discretization by truncated matrix-exponential series.

    A = sum_k (A_c ts)^k / k!   and   B = (sum_k A_c^k ts^(k+1) / (k+1)!) B_c,
    truncated once the added term drops below ``tol`` in max-norm.
    """
    if ts <= 0:
        raise DomainError(f"ts={ts:g} must be positive")
    a_c = np.atleast_2d(np.asarray(a_c, dtype=float))
    b_c = np.atleast_2d(np.asarray(b_c, dtype=float))
    n = a_c.shape[0]
    a_d = np.eye(n)
    s = ts * np.eye(n)
    term = np.eye(n)
    for k in range(1, max_terms + 1):
        term = term @ a_c * (ts / k)
        a_d = a_d + term
        term_s = term * (ts / (k + 1))
        s = s + term_s
        if max(np.abs(term).max(), np.abs(term_s).max()) < tol:
            break
    else:
        raise NumericError(f"discretization series not converged in {max_terms} terms")
    return a_d, s @ b_c


def solve_steady_state(theta_sharp, r, cfg: PlantConfig, *, tol: float = 1e-8,
                       max_iter: int = 200):
    """Solve f(x*, u*, theta) = 0, h(x*, u*, theta) = r within the boxes.

    Damped Newton iteration started from the designed equilibrium; the system
    is underdetermined (7 unknowns, 6 equations) so each step is the
    minimum-norm least-squares solution.  Iterates are clipped to the state
    and input boxes, which makes unreachable references fail the residual
    tolerance instead of wandering outside the operating envelope.
    """
    theta = _as_array(theta_sharp, N_THETA, "theta")
    r = _as_array(r, N_OUTPUTS, "reference")
    _check_box(theta, cfg.theta_lb, cfg.theta_ub, THETA_NAMES, "operating point")
    _check_box(r, cfg.y_lb, cfg.y_ub, ("r1", "r2"), "reference")

    lb = np.concatenate([cfg.x_lb, cfg.u_lb])
    ub = np.concatenate([cfg.x_ub, cfg.u_ub])

    def residual(z):
        x, u = z[:N_STATES], z[N_STATES:]
        return np.concatenate([
            evaluate_dynamics(x, u, theta, cfg, validate=False),
            output_map(x) - r,
        ])

    z = np.clip(
        np.concatenate([equilibrium_state(cfg, theta), equilibrium_input(cfg, theta)]),
        lb, ub,
    )
    res = np.abs(residual(z)).max()
    for _ in range(max_iter):
        if res <= tol:
            return z[:N_STATES].copy(), z[N_STATES:].copy()
        jac = central_difference_jacobian(residual, z)
        step, *_ = np.linalg.lstsq(jac, -residual(z), rcond=None)
        alpha = 1.0
        improved = False
        while alpha >= 1.0 / 64.0:
            z_try = np.clip(z + alpha * step, lb, ub)
            res_try = np.abs(residual(z_try)).max()
            if res_try < res:
                z, res = z_try, res_try
                improved = True
                break
            alpha /= 2.0
        if not improved:
            raise SteadyStateError(
                f"steady-state solve stalled at residual {res:.3e} (tol {tol:g})",
                residual=res,
            )
    raise SteadyStateError(
        f"steady-state solve did not converge: residual {res:.3e} after {max_iter} iterations",
        residual=res,
    )


def _verify_region(region: RegionModel, cfg: PlantConfig, theta) -> None:
    # Stabilizability: the DARE with Q=R=I must admit a stabilizing solution.
    p = scipy.linalg.solve_discrete_are(
        region.A, region.B, np.eye(N_STATES), np.eye(N_INPUTS)
    )
    gain = np.linalg.solve(
        region.B.T @ p @ region.B + np.eye(N_INPUTS), region.B.T @ p @ region.A
    )
    radius = np.abs(np.linalg.eigvals(region.A - region.B @ gain)).max()
    if radius >= 1.0:
        raise NumericError(f"DARE closed loop not contractive (rho={radius:.4f})")
    resid = np.concatenate([
        evaluate_dynamics(region.x_star, region.u_star, theta, cfg, validate=False),
        output_map(region.x_star) - region.r_star,
    ])
    if np.abs(resid).max() > 1e-8:
        raise NumericError(f"steady-state residual {np.abs(resid).max():.3e} > 1e-8")


def grid_points(cfg: PlantConfig) -> list[np.ndarray]:
    """Evenly spaced operating points, speed-major ordering."""
    speeds = np.linspace(cfg.theta_lb[0], cfg.theta_ub[0], cfg.n_speed)
    fuels = np.linspace(cfg.theta_lb[1], cfg.theta_ub[1], cfg.n_fuel)
    return [np.array([w, wf]) for w in speeds for wf in fuels]


def build_region_grid(cfg: PlantConfig) -> list[RegionModel]:
    """Linearize, discretize and solve targets at every grid point."""
    regions = []
    for offset, theta in enumerate(grid_points(cfg)):
        index = offset + 1
        try:
            r_def = default_reference(cfg, theta)
            x_star, u_star = solve_steady_state(theta, r_def, cfg)
            a_c, b_c, c_c, d_c = linearize(theta, cfg, equilibrium=(x_star, u_star))
            a_d, b_d = discretize(a_c, b_c, cfg.ts)
            region = RegionModel(
                index=index, theta_sharp=theta, A=a_d, B=b_d, C=c_c, D=d_c,
                x_star=x_star, u_star=u_star, r_star=r_def, ts=cfg.ts,
            )
            _verify_region(region, cfg, theta)
        except Exception as exc:
            raise GridBuildError(f"region {index}: {exc}", region_index=index) from exc
        regions.append(region)
    return regions


def select_region(theta, grid: list[RegionModel]) -> int:
    """Index (1-based) of the nearest grid point in spacing-scaled distance.

    Each axis is normalized by its grid spacing; exact ties resolve to the
    lower region index.
    """
    theta = _as_array(theta, N_THETA, "theta")
    thetas = np.array([reg.theta_sharp for reg in grid])
    scales = np.ones(N_THETA)
    for axis in range(N_THETA):
        values = np.unique(thetas[:, axis])
        if values.size > 1:
            scales[axis] = np.diff(values).min()
    dist = (((theta - thetas) / scales) ** 2).sum(axis=1)
    nearest = np.flatnonzero(dist == dist.min())
    return int(min(grid[i].index for i in nearest))


def grid_to_json(grid: list[RegionModel], path) -> None:
    with open(path, "w") as fh:
        json.dump([region.to_dict() for region in grid], fh, indent=2)


def grid_from_json(path) -> list[RegionModel]:
    with open(path) as fh:
        return [RegionModel.from_dict(entry) for entry in json.load(fh)]
