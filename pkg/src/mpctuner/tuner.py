"""Projected derivative-free random search over the MPC weight matrices.

One tuning run minimizes the learned grading cost of a closed-loop step
experiment over symmetric (P, Q, R).  Candidate gains are perturbed jointly
along random symmetric directions; the resulting one-sided difference
quotient scales each direction matrix into a random-oracle step, and every
iterate is projected back onto its cone (positive semidefinite for P and Q,
eigenvalues floored at ``pd_floor`` for R).

Defaults follow the published constants: smoothing 1e-9, steps
1e-6 / sqrt(j+1) for j = 1..50, definite floor 1e-15, and a batch of initial
points whose best member ("promising candidate") seeds the search.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import OracleError, TuningError
from .features import extract_features
from .loop import ScheduleSegment, TargetCache, simulate_closed_loop, step_response_from_log
from .mpc import DEFAULT_HORIZON, GainSet
from .plant import PlantConfig, RegionModel

FAULT_COST = 1.0  # worst grading cost, assigned to faulted evaluations


@dataclass(frozen=True)
class TunerConfig:
    """Search constants; defaults are the published values."""

    mu: float = 1e-9                 # oracle smoothing
    step_scale: float = 1e-6         # h_j = step_scale / sqrt(j + 1)
    n_iterations: int = 50
    pd_floor: float = 1e-15          # eigenvalue floor of the R projection
    batch_size: int = 8
    max_redraws: int = 20            # direction redraws after faulted probes
    init_scale: float = 1.0          # scale of the random initial draws
    seed: int = 0
    metric: dict | None = None       # optional SPD metrics {"P": B_P, ...}

    def __post_init__(self):
        if self.mu <= 0 or self.pd_floor <= 0 or self.step_scale <= 0:
            raise ValueError("mu, step_scale and pd_floor must be positive")
        if self.n_iterations < 0 or self.batch_size < 1:
            raise ValueError("need n_iterations >= 0 and batch_size >= 1")
        if self.metric is not None:
            for key, mat in self.metric.items():
                mat = np.asarray(mat, dtype=float)
                if np.abs(mat - mat.T).max() > 1e-12 or np.linalg.eigvalsh(mat).min() <= 0:
                    raise ValueError(f"metric {key} must be symmetric positive definite")


def step_size(iteration: int, scale: float = 1e-6) -> float:
    """h_j = scale / sqrt(j + 1) for the 1-based iteration index j."""
    return scale / np.sqrt(iteration + 1.0)


def random_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
    R-diagonal sign correction."""
    z = rng.standard_normal((n, n))
    q, r = np.linalg.qr(z)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def random_symmetric_direction(n: int, rng: np.random.Generator) -> np.ndarray:
    """Exactly symmetric direction Q' diag(L) Q with Haar Q and normal L."""
    q = random_orthogonal(n, rng)
    lam = rng.standard_normal(n)
    mat = q.T @ (lam[:, None] * q)
    return (mat + mat.T) / 2.0


@dataclass(frozen=True)
class DirectionTriple:
    m_p: np.ndarray
    m_q: np.ndarray
    m_r: np.ndarray

    @classmethod
    def draw(cls, rng: np.random.Generator) -> "DirectionTriple":
        return cls(
            m_p=random_symmetric_direction(4, rng),
            m_q=random_symmetric_direction(4, rng),
            m_r=random_symmetric_direction(3, rng),
        )


def _eig_floor(sym, floor: float) -> np.ndarray:
    """Clip the spectrum at ``floor`` and restore it against roundoff.

    Eigendecompose, clip the eigenvalues, reconstruct; reconstruction noise
    of order eps*||S|| can push the smallest eigenvalue back below the floor,
    so tiny diagonal shifts are added until the floor verifiably holds.
    """
    sym = np.asarray(sym, dtype=float)
    if np.abs(sym - sym.T).max() > 1e-10 * max(1.0, np.abs(sym).max()):
        raise ValueError("projection input must be symmetric")
    sym = (sym + sym.T) / 2.0
    lam, vec = np.linalg.eigh(sym)
    proj = (vec * np.maximum(lam, floor)) @ vec.T
    proj = (proj + proj.T) / 2.0
    eye = np.eye(sym.shape[0])
    for _ in range(4):
        low = np.linalg.eigvalsh(proj).min()
        if low >= floor:
            break
        proj = proj + (floor - low + 8.0 * np.finfo(float).eps *
                       max(1.0, np.abs(proj).max())) * eye
    return proj


def project_psd(sym) -> np.ndarray:
    """Frobenius-nearest positive semidefinite matrix."""
    return _eig_floor(sym, 0.0)


def project_pd(sym, floor: float) -> np.ndarray:
    """Projection with eigenvalues floored at ``floor`` > 0."""
    if floor <= 0:
        raise ValueError("floor must be positive")
    return _eig_floor(sym, floor)


def random_oracle(gains: GainSet, directions: DirectionTriple, mu: float,
                  evaluate, *, base_cost: float | None = None):
    """Joint difference quotient scaled back along each direction.

    Returns (G_P, G_Q, G_R) where each matrix is ``delta * M`` and ``delta``
    is (evaluate(perturbed) - evaluate(base)) / mu with all three matrices
    perturbed together.  ``base_cost`` skips re-evaluating the unperturbed
    candidate when the caller already knows it.
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    perturbed = GainSet(
        P=gains.P + mu * directions.m_p,
        Q=gains.Q + mu * directions.m_q,
        R=gains.R + mu * directions.m_r,
        horizon=gains.horizon,
    )
    try:
        cost_perturbed = float(evaluate(perturbed))
        if base_cost is None:
            base_cost = float(evaluate(gains))
    except Exception as exc:
        raise OracleError(f"evaluation failed inside the oracle: {exc}") from exc
    delta = (cost_perturbed - float(base_cost)) / mu
    return delta * directions.m_p, delta * directions.m_q, delta * directions.m_r


@dataclass(frozen=True)
class StepExperimentConfig:
    """Closed-loop step experiment evaluated during tuning of one region.

    The loop starts at the exact plant equilibrium for ``r_from`` and tracks
    ``r_to`` over a window of ``window`` seconds, with theta pinned at the
    region's grid point.
    """

    plant: PlantConfig
    r_from: np.ndarray
    r_to: np.ndarray
    window: float = 8.0

    def __post_init__(self):
        object.__setattr__(self, "r_from", np.asarray(self.r_from, dtype=float))
        object.__setattr__(self, "r_to", np.asarray(self.r_to, dtype=float))
        if self.window <= 0:
            raise ValueError("window must be positive")


def default_experiment(region: RegionModel, grid: list[RegionModel],
                       cfg: PlantConfig, window: float = 8.0) -> StepExperimentConfig:
    """Step from the region's own reference to its nearest neighbor's."""
    others = [r for r in grid if r.index != region.index]
    if not others:
        # single-region grid: step a fixed fraction of the reference
        r_to = region.r_star * np.array([1.08, 0.92])
    else:
        def dist(other):
            return float(((other.theta_sharp - region.theta_sharp) ** 2).sum())
        r_to = min(others, key=dist).r_star
    return StepExperimentConfig(plant=cfg, r_from=region.r_star, r_to=r_to,
                                window=window)


def evaluate_candidate_detailed(gains: GainSet, region: RegionModel, surrogate,
                                experiment: StepExperimentConfig,
                                target_cache: TargetCache | None = None):
    """Closed-loop evaluation; returns (cost, response, faulted)."""
    cache = target_cache or TargetCache(experiment.plant)
    try:
        x0, _ = cache.get(region, experiment.r_from)
        segments = [ScheduleSegment(0.0, region.theta_sharp, experiment.r_to)]
        log = simulate_closed_loop(
            experiment.plant, [region], {region.index: gains}, segments,
            experiment.window, x0, target_cache=cache,
        )
    except Exception:
        return FAULT_COST, None, True
    if log.faulted:
        return FAULT_COST, None, True
    response = step_response_from_log(log, experiment.r_from, experiment.r_to,
                                      experiment.window)
    features = extract_features(response)
    return float(surrogate.cost(features)), response, False


def evaluate_candidate(gains: GainSet, region: RegionModel, surrogate,
                       experiment: StepExperimentConfig,
                       target_cache: TargetCache | None = None) -> float:
    """Grading cost of one gain set; faults map to the worst cost 1.0."""
    cost, _, _ = evaluate_candidate_detailed(gains, region, surrogate,
                                             experiment, target_cache)
    return cost


@dataclass
class TuneTrace:
    """Per-iteration record of one tuning run; best cost is nonincreasing."""

    region_index: int
    batch_costs: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    initial_cost: float = np.nan
    final_cost: float = np.nan

    def record(self, iteration, candidate_cost, best_cost, oracle_norms,
               step, faulted, gains, redraws=0):
        self.iterations.append({
            "iteration": iteration,
            "candidate_cost": candidate_cost,
            "best_cost": best_cost,
            "oracle_norm_p": oracle_norms[0],
            "oracle_norm_q": oracle_norms[1],
            "oracle_norm_r": oracle_norms[2],
            "step": step,
            "faulted": faulted,
            "redraws": redraws,
            "accepted_parameters": gains.parameters().tolist(),
        })

    def best_costs(self) -> np.ndarray:
        return np.array([row["best_cost"] for row in self.iterations])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "candidate_cost", "best_cost"])
            writer.writerow([0, repr(float(self.initial_cost)),
                             repr(float(self.initial_cost))])
            for row in self.iterations:
                writer.writerow([row["iteration"],
                                 repr(float(row["candidate_cost"])),
                                 repr(float(row["best_cost"]))])


def draw_initial_gains(rng: np.random.Generator, horizon: int = DEFAULT_HORIZON,
                       pd_floor: float = 1e-15, scale: float = 1.0) -> GainSet:
    """Random symmetric matrices projected into the admissible cones."""
    return GainSet(
        P=project_psd(scale * random_symmetric_direction(4, rng)),
        Q=project_psd(scale * random_symmetric_direction(4, rng)),
        R=project_pd(scale * random_symmetric_direction(3, rng), pd_floor),
        horizon=horizon,
    )


def tune_region(region: RegionModel, surrogate, cfg: TunerConfig,
                experiment: StepExperimentConfig | None = None, *,
                objective=None, horizon: int = DEFAULT_HORIZON):
    """Batch-initialized projected random search for one region.

    ``objective`` overrides the closed-loop evaluation with a plain callable
    GainSet -> cost (used by the statistical self-checks); otherwise the
    candidate cost is ``evaluate_candidate`` under ``experiment``.
    Returns (best gains, trace).
    """
    if objective is None:
        if experiment is None:
            raise ValueError("either an experiment or an objective is required")
        cache = TargetCache(experiment.plant)

        def objective_fn(gains):
            return evaluate_candidate(gains, region, surrogate, experiment, cache)

        def probe_fn(gains):
            # Probes sit mu off the cones; with the published floor d << mu
            # the perturbed QP can lose definiteness.  A faulted probe is an
            # oracle error (directions are redrawn), not a cost of 1.
            cost, _, faulted = evaluate_candidate_detailed(
                gains, region, surrogate, experiment, cache)
            if faulted:
                raise OracleError("perturbed candidate faulted")
            return cost
    else:
        objective_fn = objective
        probe_fn = objective

    rng = np.random.default_rng(cfg.seed)
    metric = cfg.metric or {}
    inv_metric = {
        key: np.linalg.inv(np.asarray(mat, dtype=float))
        for key, mat in metric.items()
    }

    batch = [draw_initial_gains(rng, horizon, cfg.pd_floor, cfg.init_scale)
             for _ in range(cfg.batch_size)]
    batch_costs = [float(objective_fn(g)) for g in batch]
    trace = TuneTrace(region_index=region.index if region is not None else -1)
    trace.batch_costs = batch_costs
    if all(c >= FAULT_COST for c in batch_costs) and objective is None:
        raise TuningError(
            f"region {trace.region_index}: every batch initial point faulted"
        )

    best_idx = int(np.argmin(batch_costs))
    current = batch[best_idx]
    current_cost = batch_costs[best_idx]
    trace.initial_cost = current_cost
    best_gains, best_cost = current, current_cost

    for j in range(1, cfg.n_iterations + 1):
        redraws = 0
        while True:
            directions = DirectionTriple.draw(rng)
            try:
                g_p, g_q, g_r = random_oracle(current, directions, cfg.mu,
                                              probe_fn, base_cost=current_cost)
                break
            except OracleError:
                redraws += 1
                if redraws >= cfg.max_redraws:
                    # every probe direction faulted: hold position this round
                    g_p = np.zeros((4, 4))
                    g_q = np.zeros((4, 4))
                    g_r = np.zeros((3, 3))
                    break
        h = step_size(j, cfg.step_scale)
        step_p = inv_metric.get("P", None)
        step_q = inv_metric.get("Q", None)
        step_r = inv_metric.get("R", None)
        p_next = project_psd(current.P - h * (step_p @ g_p if step_p is not None else g_p))
        q_next = project_psd(current.Q - h * (step_q @ g_q if step_q is not None else g_q))
        r_next = project_pd(current.R - h * (step_r @ g_r if step_r is not None else g_r),
                            cfg.pd_floor)
        current = GainSet(P=p_next, Q=q_next, R=r_next, horizon=horizon)
        current_cost = float(objective_fn(current))
        if current_cost < best_cost:
            best_gains, best_cost = current, current_cost
        trace.record(
            iteration=j, candidate_cost=current_cost, best_cost=best_cost,
            oracle_norms=(float(np.linalg.norm(g_p)), float(np.linalg.norm(g_q)),
                          float(np.linalg.norm(g_r))),
            step=h, faulted=current_cost >= FAULT_COST, gains=best_gains,
            redraws=redraws,
        )
    trace.final_cost = best_cost
    return best_gains, trace
