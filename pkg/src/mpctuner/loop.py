"""Switched closed-loop simulation of the twin under per-region MPC.

One engine serves both the tuning evaluations (single region, one step
reference) and drive-cycle simulation (piecewise-constant schedule over the
whole grid), so a step experiment replayed through a schedule reproduces the
tuning trajectory bit for bit.

Plant states advance by RK4 substeps of ``cfg.dt`` between controller samples
spaced ``cfg.ts`` apart; the log is kept at substep resolution.  A controller
fault (QP failure) is recorded and the previous input is held; a non-finite
state aborts the run with the fault logged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import plant as plant_mod
from .errors import ControllerFault
from .features import StepResponse
from .mpc import GainSet, MpcController
from .plant import PlantConfig, RegionModel


@dataclass(frozen=True)
class ScheduleSegment:
    """Hold (theta, reference) from ``start`` until the next segment."""

    start: float
    theta: np.ndarray
    reference: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float))
        object.__setattr__(self, "reference", np.asarray(self.reference, dtype=float))


@dataclass
class ClosedLoopLog:
    t: np.ndarray
    x: np.ndarray        # (n_samples, 4) substep states
    u: np.ndarray        # (n_samples, 3) held inputs
    y: np.ndarray        # (n_samples, 2)
    r: np.ndarray        # (n_samples, 2) active reference
    region: np.ndarray   # (n_samples,) active region index
    faults: list = field(default_factory=list)

    @property
    def faulted(self) -> bool:
        return bool(self.faults)


class TargetCache:
    """Steady-state targets per (region, reference), solved on demand."""

    def __init__(self, cfg: PlantConfig):
        self.cfg = cfg
        self._cache: dict = {}

    def get(self, region: RegionModel, reference) -> tuple[np.ndarray, np.ndarray]:
        reference = np.asarray(reference, dtype=float)
        key = (region.index, float(reference[0]), float(reference[1]))
        if key not in self._cache:
            if np.allclose(reference, region.r_star, rtol=0.0, atol=0.0):
                self._cache[key] = (region.x_star, region.u_star)
            else:
                self._cache[key] = plant_mod.solve_steady_state(
                    region.theta_sharp, reference, self.cfg
                )
        return self._cache[key]


def _segment_at(segments, t):
    active = segments[0]
    for seg in segments:
        if seg.start <= t + 1e-12:
            active = seg
        else:
            break
    return active


class _FastDynamics:
    """Per-theta cached twin dynamics for the inner integration loop.

    Matches ``plant.evaluate_dynamics`` exactly; it only hoists the
    theta-dependent quantities out of the RK4 stage evaluations.
    """

    def __init__(self, cfg: PlantConfig):
        self.cfg = cfg
        self._cache: dict = {}

    def rk4(self, x, u, theta, dt):
        key = (float(theta[0]), float(theta[1]))
        if key not in self._cache:
            self._cache[key] = (
                *plant_mod.linear_parts(self.cfg, theta),
                plant_mod.equilibrium_state(self.cfg, theta),
                plant_mod.equilibrium_input(self.cfg, theta),
            )
        a_mat, b_mat, x_eq, u_eq = self._cache[key]
        b_du = b_mat @ (u - u_eq)
        coupling = self.cfg.coupling

        def f(state):
            dx = state - x_eq
            lin = a_mat @ dx + b_du
            if coupling:
                lin = lin + coupling * plant_mod._coupling_terms(dx, u - u_eq)
            return lin

        k1 = f(x)
        k2 = f(x + 0.5 * dt * k1)
        k3 = f(x + 0.5 * dt * k2)
        k4 = f(x + dt * k3)
        return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def simulate_closed_loop(cfg: PlantConfig, grid: list[RegionModel],
                         gains_by_region: dict[int, GainSet],
                         segments: list[ScheduleSegment], duration: float,
                         x0, *, target_cache: TargetCache | None = None,
                         noise_seed: int | None = None) -> ClosedLoopLog:
    """Run the switched loop for ``duration`` seconds from state ``x0``."""
    if not segments:
        raise ValueError("schedule must contain at least one segment")
    substeps = int(round(cfg.ts / cfg.dt))
    if substeps < 1 or abs(substeps * cfg.dt - cfg.ts) > 1e-9 * cfg.ts:
        raise ValueError("plant dt must divide the sample period ts")
    n_samples = int(round(duration / cfg.ts))
    if n_samples < 1:
        raise ValueError("duration shorter than one sample period")

    cache = target_cache or TargetCache(cfg)
    by_index = {region.index: region for region in grid}
    controllers: dict = {}
    dynamics = _FastDynamics(cfg)
    rng = np.random.default_rng(noise_seed) if cfg.output_noise_std > 0 else None

    x = np.asarray(x0, dtype=float).copy()
    seg0 = _segment_at(segments, 0.0)
    u_prev = cache.get(by_index[plant_mod.select_region(seg0.theta, grid)],
                       seg0.reference)[1].copy()

    total_rows = n_samples * substeps + 1  # substeps plus the terminal state
    log_t = np.empty(total_rows)
    log_x = np.empty((total_rows, plant_mod.N_STATES))
    log_u = np.empty((total_rows, plant_mod.N_INPUTS))
    log_y = np.empty((total_rows, plant_mod.N_OUTPUTS))
    log_r = np.empty((total_rows, plant_mod.N_OUTPUTS))
    log_region = np.empty(total_rows, dtype=int)
    faults: list = []

    row = 0
    for k in range(n_samples):
        t_k = k * cfg.ts
        seg = _segment_at(segments, t_k)
        region_idx = plant_mod.select_region(seg.theta, grid)
        region = by_index[region_idx]
        ctrl_key = (region_idx, float(seg.reference[0]), float(seg.reference[1]))
        if ctrl_key not in controllers:
            if region_idx not in gains_by_region:
                raise KeyError(f"no gains supplied for region {region_idx}")
            x_star, u_star = cache.get(region, seg.reference)
            controllers[ctrl_key] = MpcController(
                region, gains_by_region[region_idx],
                x_bounds=(cfg.x_lb, cfg.x_ub), u_bounds=(cfg.u_lb, cfg.u_ub),
                targets=(x_star, u_star, seg.reference),
            )
        try:
            u, _ = controllers[ctrl_key].step(x)
        except ControllerFault as fault:
            faults.append({"t": t_k, "region": region_idx, "error": str(fault)})
            u = u_prev.copy()
        u_prev = u

        for s in range(substeps):
            t_sub = t_k + s * cfg.dt
            seg_sub = _segment_at(segments, t_sub)
            log_t[row] = t_sub
            log_x[row] = x
            log_u[row] = u
            y = plant_mod.output_map(x)
            if rng is not None:
                y = y + rng.normal(0.0, cfg.output_noise_std, size=y.shape)
            log_y[row] = y
            log_r[row] = seg_sub.reference
            log_region[row] = region_idx
            row += 1
            x = dynamics.rk4(x, u, seg_sub.theta, cfg.dt)
            if not np.all(np.isfinite(x)):
                faults.append({"t": t_sub, "region": region_idx,
                               "error": "integration produced a non-finite state"})
                return ClosedLoopLog(
                    t=log_t[:row], x=log_x[:row], u=log_u[:row], y=log_y[:row],
                    r=log_r[:row], region=log_region[:row], faults=faults,
                )

    seg_end = _segment_at(segments, duration)
    log_t[row] = duration
    log_x[row] = x
    log_u[row] = u_prev
    y = plant_mod.output_map(x)
    if rng is not None:
        y = y + rng.normal(0.0, cfg.output_noise_std, size=y.shape)
    log_y[row] = y
    log_r[row] = seg_end.reference
    log_region[row] = plant_mod.select_region(seg_end.theta, grid)
    return ClosedLoopLog(t=log_t, x=log_x, u=log_u, y=log_y, r=log_r,
                         region=log_region, faults=faults)


def step_response_from_log(log: ClosedLoopLog, r_from, r_to,
                           window: float) -> StepResponse:
    """Package a step-experiment log as a feature-ready response."""
    r_from = np.asarray(r_from, dtype=float)
    r_to = np.asarray(r_to, dtype=float)
    return StepResponse(
        t=log.t, y1=log.y[:, 0], y2=log.y[:, 1],
        r1=(float(r_from[0]), float(r_to[0])),
        r2=(float(r_from[1]), float(r_to[1])),
        window=float(log.t[-1] - log.t[0]),
    )
