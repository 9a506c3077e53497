"""Campaign orchestration: drive schedules, trajectory generation, tuning runs.

This is the workbench layer gluing the twin, the controllers, the feature
extractor, the surrogate and the tuner together.  All entry points are
deterministic per (config, seed); region tunings are independent and may run
on a process pool.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import plant as plant_mod
from .errors import TuningError
from .features import MIN_SAMPLES, StepResponse, extract_features
from .loop import ClosedLoopLog, ScheduleSegment, TargetCache, simulate_closed_loop
from .mpc import DEFAULT_HORIZON, GainSet
from .plant import PlantConfig, RegionModel
from .surrogate import (LabeledSample, SurrogateBundle, TrainConfig,
                        split_dataset, synth_label, train)
from .tuner import (TunerConfig, default_experiment, draw_initial_gains,
                    evaluate_candidate, tune_region)


@dataclass(frozen=True)
class DriveSchedule:
    """Piecewise-constant (operating point, reference) profile."""

    segments: tuple
    duration: float

    def __post_init__(self):
        if not self.segments:
            raise ValueError("schedule needs at least one segment")
        starts = [seg.start for seg in self.segments]
        if starts[0] != 0.0:
            raise ValueError("first segment must start at t = 0")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("segment start times must be strictly increasing")
        if self.duration <= starts[-1]:
            raise ValueError("duration must exceed the last segment start")

    def check_domain(self, cfg: PlantConfig) -> None:
        for seg in self.segments:
            plant_mod._check_box(seg.theta, cfg.theta_lb, cfg.theta_ub,
                                 plant_mod.THETA_NAMES, "operating point")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "w", "w_fuel", "r1", "r2"])
            for seg in self.segments:
                writer.writerow([repr(float(seg.start)), repr(float(seg.theta[0])),
                                 repr(float(seg.theta[1])),
                                 repr(float(seg.reference[0])),
                                 repr(float(seg.reference[1]))])
            writer.writerow([repr(float(self.duration)), "", "", "", ""])

    @classmethod
    def from_csv(cls, path) -> "DriveSchedule":
        segments = []
        duration = None
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                if row[1] == "":
                    duration = float(row[0])
                    continue
                segments.append(ScheduleSegment(
                    start=float(row[0]),
                    theta=np.array([float(row[1]), float(row[2])]),
                    reference=np.array([float(row[3]), float(row[4])]),
                ))
        if duration is None:
            raise ValueError("schedule file lacks the final duration row")
        return cls(segments=tuple(segments), duration=duration)


def default_drive_schedule(grid: list[RegionModel], dwell: float = 8.0) -> DriveSchedule:
    """Visit every region at its own operating point and reference."""
    segments = [
        ScheduleSegment(start=i * dwell, theta=region.theta_sharp,
                        reference=region.r_star)
        for i, region in enumerate(grid)
    ]
    return DriveSchedule(segments=tuple(segments), duration=dwell * len(grid))


def run_closed_loop(schedule: DriveSchedule, gains_by_region: dict[int, GainSet],
                    grid: list[RegionModel], cfg: PlantConfig, *,
                    x0=None, noise_seed=None) -> ClosedLoopLog:
    """Simulate the switched loop over a drive schedule.

    The initial state defaults to the exact equilibrium of the first
    segment's reference, so a constant schedule is a closed-loop fixed point.
    """
    schedule.check_domain(cfg)
    cache = TargetCache(cfg)
    if x0 is None:
        first = schedule.segments[0]
        by_index = {r.index: r for r in grid}
        region = by_index[plant_mod.select_region(first.theta, grid)]
        x0, _ = cache.get(region, first.reference)
    return simulate_closed_loop(cfg, grid, gains_by_region,
                                list(schedule.segments), schedule.duration, x0,
                                target_cache=cache, noise_seed=noise_seed)


LOG_COLUMNS = ("t", "p_in", "p_ex", "w_comp", "f_egr", "u_thr", "u_egr",
               "u_vgt", "y1", "y2", "r1", "r2", "region")


def log_to_csv(log: ClosedLoopLog, path) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        for i in range(log.t.size):
            row = ([log.t[i]] + list(log.x[i]) + list(log.u[i])
                   + list(log.y[i]) + list(log.r[i]))
            writer.writerow([repr(float(v)) for v in row] + [int(log.region[i])])
    if log.faults:
        with open(path.with_suffix(path.suffix + ".faults.json"), "w") as fh:
            json.dump(log.faults, fh, indent=2)


def _second_order_step(t, zeta, wn):
    """Unit step response of a standard second-order lag, any damping."""
    if zeta < 1.0:
        wd = wn * np.sqrt(1.0 - zeta ** 2)
        return 1.0 - np.exp(-zeta * wn * t) * (
            np.cos(wd * t) + zeta / np.sqrt(1.0 - zeta ** 2) * np.sin(wd * t)
        )
    if zeta == 1.0:
        return 1.0 - (1.0 + wn * t) * np.exp(-wn * t)
    root = np.sqrt(zeta ** 2 - 1.0)
    p1 = wn * (zeta - root)
    p2 = wn * (zeta + root)
    return 1.0 - (p2 * np.exp(-p1 * t) - p1 * np.exp(-p2 * t)) / (p2 - p1)


def _template_output(rng, t, r_from, r_to):
    """One synthetic output trace: second-order core, steady offset, dip."""
    dr = r_to - r_from
    if rng.random() < 0.6:  # plausible, well-behaved response
        zeta = rng.uniform(0.45, 1.2)
        wn = rng.uniform(1.2, 4.0)
        offset = float(np.clip(rng.normal(0.0, 0.02), -0.06, 0.06))
        dip = 0.0 if rng.random() < 0.7 else rng.uniform(0.0, 0.15)
    else:  # clearly degraded response
        zeta = rng.uniform(0.08, 0.5)
        wn = rng.uniform(0.25, 1.5)
        offset = rng.uniform(-0.25, 0.25)
        dip = rng.uniform(0.0, 0.5)
    target = r_to + offset * dr
    y = r_from + (target - r_from) * _second_order_step(t, zeta, wn)
    if dip > 0:
        y = y - dip * dr * 4.0 * (wn * t) * np.exp(-2.0 * wn * t)
    return y


def synthetic_step_response(rng, r_from, r_to, window: float = 8.0,
                            n_samples: int = 400) -> StepResponse:
    """Artificial trajectory pair from parameterized second-order templates."""
    t = np.linspace(0.0, window, n_samples)
    y1 = _template_output(rng, t, r_from[0], r_to[0])
    y2 = _template_output(rng, t, r_from[1], r_to[1])
    return StepResponse(
        t=t, y1=y1, y2=y2,
        r1=(float(r_from[0]), float(r_to[0])),
        r2=(float(r_from[1]), float(r_to[1])),
        window=window,
    )


def generate_candidate_trajectories(grid: list[RegionModel], cfg: PlantConfig, *,
                                    mode: str = "synthetic", count: int = 100,
                                    seed: int = 0, window: float = 8.0,
                                    horizon: int = DEFAULT_HORIZON,
                                    out_dir=None):
    """Produce step responses plus their feature rows for labeling.

    ``synthetic`` draws second-order template pairs between region references
    (cheap, wide coverage); ``closed_loop`` draws random cone gains and runs
    the actual loop, skipping faulted runs.  Returns
    (list of (trajectory_id, StepResponse, features), skipped_count) and
    optionally writes each response as CSV+sidecar under ``out_dir``.
    """
    if mode not in ("synthetic", "closed_loop"):
        raise ValueError(f"unknown sampler mode {mode!r}")
    rng = np.random.default_rng(seed)
    cache = TargetCache(cfg)
    experiments = {
        region.index: default_experiment(region, grid, cfg, window=window)
        for region in grid
    }
    results = []
    skipped = 0
    attempts = 0
    max_attempts = 20 * count + 100
    while len(results) < count and attempts < max_attempts:
        attempts += 1
        region = grid[rng.integers(len(grid))]
        exp = experiments[region.index]
        trajectory_id = f"{mode}-{seed:04d}-{len(results):05d}"
        if mode == "synthetic":
            resp = synthetic_step_response(rng, exp.r_from, exp.r_to,
                                           window=window)
        else:
            gains = draw_initial_gains(rng, horizon=horizon)
            try:
                x0, _ = cache.get(region, exp.r_from)
                log = simulate_closed_loop(
                    cfg, [region], {region.index: gains},
                    [ScheduleSegment(0.0, region.theta_sharp, exp.r_to)],
                    window, x0, target_cache=cache,
                )
            except Exception:
                skipped += 1
                continue
            if log.faulted or log.t.size < MIN_SAMPLES:
                skipped += 1
                continue
            resp = StepResponse(
                t=log.t, y1=log.y[:, 0], y2=log.y[:, 1],
                r1=(float(exp.r_from[0]), float(exp.r_to[0])),
                r2=(float(exp.r_from[1]), float(exp.r_to[1])),
                window=float(log.t[-1] - log.t[0]),
            )
        features = extract_features(resp)
        results.append((trajectory_id, resp, features))
        if out_dir is not None:
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            resp.to_csv(out_dir / f"{trajectory_id}.csv")
    if len(results) < count:
        raise TuningError(
            f"only {len(results)} of {count} trajectories generated "
            f"({skipped} faulted)"
        )
    return results, skipped


def build_synthetic_dataset(grid, cfg, *, count: int = 4330, seed: int = 0,
                            window: float = 8.0):
    """Label template trajectories with the synthetic monotone grader."""
    rows, _ = generate_candidate_trajectories(
        grid, cfg, mode="synthetic", count=count, seed=seed, window=window
    )
    return [
        LabeledSample(trajectory_id=tid, features=feats,
                      grade=synth_label(feats), source="synthetic")
        for tid, _, feats in rows
    ]


def train_surrogate_bundle(samples, train_cfg: TrainConfig, *, ratios=(0.7, 0.15, 0.15),
                           split_seed: int = 0):
    """Split, normalize, train; returns (bundle, metrics)."""
    dataset = split_dataset(samples, ratios=ratios, seed=split_seed)
    params, metrics = train(dataset, train_cfg)
    return SurrogateBundle(params=params, scaler=dataset.scaler), metrics


@dataclass(frozen=True)
class CampaignConfig:
    """Everything one tuning campaign needs, JSON-round-trippable."""

    plant: PlantConfig = field(default_factory=PlantConfig.default)
    regions: tuple = ()            # empty tuple means every region
    tuner: TunerConfig = field(default_factory=TunerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    horizon: int = DEFAULT_HORIZON
    window: float = 8.0
    n_synthetic: int = 4330
    shared_surrogate: bool = True  # one grading cost for every region

    def to_dict(self) -> dict:
        tuner = vars(self.tuner).copy()
        if tuner.get("metric"):
            tuner["metric"] = {k: np.asarray(v).tolist()
                               for k, v in tuner["metric"].items()}
        return {
            "plant": self.plant.to_dict(),
            "regions": list(self.regions),
            "tuner": tuner,
            "train": vars(self.train).copy(),
            "horizon": self.horizon,
            "window": self.window,
            "n_synthetic": self.n_synthetic,
            "shared_surrogate": self.shared_surrogate,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CampaignConfig":
        return cls(
            plant=PlantConfig.from_dict(data["plant"]) if "plant" in data
            else PlantConfig.default(),
            regions=tuple(data.get("regions", ())),
            tuner=TunerConfig(**data.get("tuner", {})),
            train=TrainConfig(**data.get("train", {})),
            horizon=data.get("horizon", DEFAULT_HORIZON),
            window=data.get("window", 8.0),
            n_synthetic=data.get("n_synthetic", 4330),
            shared_surrogate=data.get("shared_surrogate", True),
        )

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def from_json(cls, path) -> "CampaignConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _tune_one_region(args):
    """Worker for one region tuning; top level so it pickles."""
    region, bundle, tuner_cfg, experiment, horizon = args
    try:
        gains, trace = tune_region(region, bundle, tuner_cfg, experiment,
                                   horizon=horizon)
        return region.index, gains, trace, None
    except Exception as exc:  # collected, campaign decides the exit code
        return region.index, None, None, f"{type(exc).__name__}: {exc}"


def run_tuning_campaign(cfg: CampaignConfig, out_dir, *, seed: int = 0,
                        parallel: int = 1, surrogate: SurrogateBundle | None = None):
    """Tune every requested region; persist gains, traces and a report.

    Returns the report dict.  Region failures are collected; only a campaign
    with zero successes counts as fatal (raises TuningError).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = plant_mod.build_region_grid(cfg.plant)
    plant_mod.grid_to_json(grid, out_dir / "grid.json")
    wanted = set(cfg.regions) if cfg.regions else {r.index for r in grid}
    regions = [r for r in grid if r.index in wanted]
    if not regions:
        raise ValueError(f"no regions match {sorted(wanted)}")

    seed_seq = np.random.SeedSequence(seed)
    surrogate_seed, *region_seeds = [
        int(s.generate_state(1)[0]) for s in seed_seq.spawn(len(regions) + 1)
    ]

    metrics = None
    if surrogate is None:
        samples = build_synthetic_dataset(
            grid, cfg.plant, count=cfg.n_synthetic,
            seed=surrogate_seed, window=cfg.window,
        )
        surrogate, metrics = train_surrogate_bundle(
            samples, replace(cfg.train, seed=surrogate_seed % (2 ** 31)),
            split_seed=surrogate_seed % (2 ** 31),
        )
        surrogate.to_json(out_dir / "surrogate.json")

    jobs = []
    for region, region_seed in zip(regions, region_seeds):
        experiment = default_experiment(region, grid, cfg.plant,
                                        window=cfg.window)
        tuner_cfg = replace(cfg.tuner, seed=region_seed % (2 ** 31))
        if not cfg.shared_surrogate:
            # Per-region grading cost: same labeler, region-specific data.
            samples = build_synthetic_dataset(
                grid, cfg.plant, count=cfg.n_synthetic,
                seed=region_seed % (2 ** 31), window=cfg.window,
            )
            region_surrogate, _ = train_surrogate_bundle(
                samples, replace(cfg.train, seed=region_seed % (2 ** 31)),
                split_seed=region_seed % (2 ** 31),
            )
        else:
            region_surrogate = surrogate
        jobs.append((region, region_surrogate, tuner_cfg, experiment, cfg.horizon))

    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            outcomes = list(pool.map(_tune_one_region, jobs))
    else:
        outcomes = [_tune_one_region(job) for job in jobs]

    report = {"seed": seed, "regions": {}, "failed_regions": []}
    if metrics is not None:
        report["surrogate_metrics"] = metrics
    cache = TargetCache(cfg.plant)
    for (region, region_surrogate, tuner_cfg, experiment, _), outcome in zip(jobs, outcomes):
        index, gains, trace, error = outcome
        if error is not None:
            report["failed_regions"].append(index)
            report["regions"][str(index)] = {"error": error}
            continue
        gains_path = out_dir / f"gains_region_{index:02d}.json"
        trace_path = out_dir / f"trace_region_{index:02d}.csv"
        gains.to_json(gains_path)
        trace.to_csv(trace_path)
        check = evaluate_candidate(GainSet.from_json(gains_path), region,
                                   region_surrogate, experiment, cache)
        report["regions"][str(index)] = {
            "initial_cost": trace.initial_cost,
            "final_cost": trace.final_cost,
            "improved": bool(trace.final_cost < trace.initial_cost),
            "replayed_cost": check,
            "gains": gains_path.name,
            "trace": trace_path.name,
        }
    if len(report["failed_regions"]) == len(regions):
        raise TuningError("every region failed to tune")
    with open(out_dir / "report.json", "w") as fh:
        json.dump(report, fh, indent=2)
    return report
