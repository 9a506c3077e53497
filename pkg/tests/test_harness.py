import json

import numpy as np
import pytest

from mpctuner import harness, plant
from mpctuner.features import extract_features
from mpctuner.harness import (CampaignConfig, DriveSchedule, default_drive_schedule,
                              generate_candidate_trajectories, log_to_csv,
                              run_closed_loop, run_tuning_campaign,
                              synthetic_step_response)
from mpctuner.loop import ScheduleSegment, TargetCache, simulate_closed_loop
from mpctuner.mpc import GainSet, default_gains
from mpctuner.surrogate import SurrogateBundle, init_network
from mpctuner.features import FeatureScaler
from mpctuner.tuner import default_experiment, evaluate_candidate_detailed


@pytest.fixture(scope="module")
def baseline_gains(grid):
    return {region.index: default_gains(region) for region in grid}


class TestRunClosedLoop:
    def test_equilibrium_schedule_is_fixed_point(self, cfg, grid, baseline_gains):
        region = grid[3]
        sched = DriveSchedule(
            segments=(ScheduleSegment(0.0, region.theta_sharp, region.r_star),),
            duration=4.0,
        )
        log = run_closed_loop(sched, baseline_gains, grid, cfg)
        assert not log.faulted
        assert np.abs(log.y - region.r_star).max() <= 1e-6

    def test_region_switches_exactly_at_segment_boundaries(self, cfg, grid,
                                                           baseline_gains):
        sched = DriveSchedule(
            segments=(
                ScheduleSegment(0.0, grid[0].theta_sharp, grid[0].r_star),
                ScheduleSegment(2.0, grid[5].theta_sharp, grid[5].r_star),
                ScheduleSegment(4.0, grid[9].theta_sharp, grid[9].r_star),
            ),
            duration=6.0,
        )
        log = run_closed_loop(sched, baseline_gains, grid, cfg)
        for i, t in enumerate(log.t):
            if t < 2.0:
                expected_theta = grid[0].theta_sharp
            elif t < 4.0:
                expected_theta = grid[5].theta_sharp
            else:
                expected_theta = grid[9].theta_sharp
            assert log.region[i] == plant.select_region(expected_theta, grid)

    def test_step_schedule_bit_identical_to_candidate_evaluation(self, cfg, grid):
        region = grid[7]
        experiment = default_experiment(region, grid, cfg)
        scaler = FeatureScaler()
        scaler.fit(np.abs(np.random.default_rng(0).normal(size=(40, 8))))
        bundle = SurrogateBundle(params=init_network(0), scaler=scaler)
        gains = default_gains(region)
        _, resp, faulted = evaluate_candidate_detailed(gains, region, bundle,
                                                       experiment)
        assert not faulted

        cache = TargetCache(cfg)
        x0, _ = cache.get(region, experiment.r_from)
        sched = DriveSchedule(
            segments=(ScheduleSegment(0.0, region.theta_sharp, experiment.r_to),),
            duration=experiment.window,
        )
        log = run_closed_loop(sched, {region.index: gains}, grid, cfg, x0=x0)
        assert np.array_equal(log.y[:, 0], resp.y1)
        assert np.array_equal(log.y[:, 1], resp.y2)
        assert np.array_equal(log.t, resp.t)

    def test_missing_gains_raise(self, cfg, grid, baseline_gains):
        sched = default_drive_schedule(grid)
        partial = {1: baseline_gains[1]}
        with pytest.raises(KeyError):
            run_closed_loop(sched, partial, grid, cfg)

    def test_output_noise_toggle(self, cfg, grid, baseline_gains):
        data = cfg.to_dict()
        data["output_noise_std"] = 0.002
        noisy_cfg = plant.PlantConfig.from_dict(data)
        region = grid[0]
        sched = DriveSchedule(
            segments=(ScheduleSegment(0.0, region.theta_sharp, region.r_star),),
            duration=2.0,
        )
        clean = run_closed_loop(sched, baseline_gains, grid, cfg)
        noisy1 = run_closed_loop(sched, baseline_gains, grid, noisy_cfg,
                                 noise_seed=5)
        noisy2 = run_closed_loop(sched, baseline_gains, grid, noisy_cfg,
                                 noise_seed=5)
        assert not np.array_equal(noisy1.y, clean.y)
        assert np.array_equal(noisy1.y, noisy2.y)  # deterministic per seed
        assert np.abs(noisy1.y - clean.y).std() < 0.01

    def test_log_csv_round_trip(self, cfg, grid, baseline_gains, tmp_path):
        region = grid[0]
        sched = DriveSchedule(
            segments=(ScheduleSegment(0.0, region.theta_sharp, region.r_star),),
            duration=2.0,
        )
        log = run_closed_loop(sched, baseline_gains, grid, cfg)
        path = tmp_path / "log.csv"
        log_to_csv(log, path)
        rows = path.read_text().strip().splitlines()
        assert len(rows) == log.t.size + 1
        first = rows[1].split(",")
        assert float(first[0]) == log.t[0]
        assert float(first[1]) == log.x[0, 0]


class TestDriveSchedule:
    def test_csv_round_trip(self, grid, tmp_path):
        sched = default_drive_schedule(grid, dwell=5.0)
        path = tmp_path / "schedule.csv"
        sched.to_csv(path)
        loaded = DriveSchedule.from_csv(path)
        assert loaded.duration == sched.duration
        assert len(loaded.segments) == len(sched.segments)
        for a, b in zip(loaded.segments, sched.segments):
            assert a.start == b.start
            assert np.array_equal(a.theta, b.theta)
            assert np.array_equal(a.reference, b.reference)

    def test_nonincreasing_timestamps_rejected(self, grid):
        seg = ScheduleSegment(0.0, grid[0].theta_sharp, grid[0].r_star)
        with pytest.raises(ValueError, match="strictly increasing"):
            DriveSchedule(segments=(seg, seg), duration=9.0)

    def test_theta_outside_box_rejected(self, cfg, grid, baseline_gains):
        sched = DriveSchedule(
            segments=(ScheduleSegment(0.0, np.array([5.0, 5.0]), grid[0].r_star),),
            duration=2.0,
        )
        with pytest.raises(Exception):
            run_closed_loop(sched, baseline_gains, grid, cfg)


class TestGenerateCandidateTrajectories:
    def test_synthetic_mode_counts_and_files(self, cfg, grid, tmp_path):
        rows, skipped = generate_candidate_trajectories(
            grid, cfg, mode="synthetic", count=20, seed=4, out_dir=tmp_path)
        assert len(rows) == 20 and skipped == 0
        assert len(list(tmp_path.glob("*.csv"))) == 20
        ids = [tid for tid, _, _ in rows]
        assert len(set(ids)) == 20

    def test_closed_loop_mode_gains_respect_cones(self, cfg, grid):
        rows, skipped = generate_candidate_trajectories(
            grid, cfg, mode="closed_loop", count=6, seed=5)
        assert len(rows) == 6

    def test_feature_rows_match_saved_files(self, cfg, grid, tmp_path):
        from mpctuner.features import StepResponse
        rows, _ = generate_candidate_trajectories(
            grid, cfg, mode="synthetic", count=5, seed=6, out_dir=tmp_path)
        for tid, resp, feats in rows:
            reloaded = StepResponse.from_csv(tmp_path / f"{tid}.csv")
            assert np.array_equal(extract_features(reloaded), feats)

    def test_unknown_mode_rejected(self, cfg, grid):
        with pytest.raises(ValueError, match="mode"):
            generate_candidate_trajectories(grid, cfg, mode="telepathy", count=1)

    def test_template_responses_are_deterministic(self, cfg):
        rng1 = np.random.default_rng(8)
        rng2 = np.random.default_rng(8)
        a = synthetic_step_response(rng1, (0.5, 0.4), (0.6, 0.35))
        b = synthetic_step_response(rng2, (0.5, 0.4), (0.6, 0.35))
        assert np.array_equal(a.y1, b.y1) and np.array_equal(a.y2, b.y2)


class TestCampaign:
    @pytest.fixture(scope="class")
    def small_campaign(self):
        return CampaignConfig(regions=(1,), n_synthetic=600)

    def test_single_region_campaign(self, small_campaign, tmp_path):
        report = run_tuning_campaign(small_campaign, tmp_path / "out", seed=2)
        out = tmp_path / "out"
        assert (out / "gains_region_01.json").exists()
        assert (out / "trace_region_01.csv").exists()
        assert (out / "report.json").exists()
        assert report["failed_regions"] == []
        entry = report["regions"]["1"]
        assert entry["replayed_cost"] == entry["final_cost"]

    def test_rerun_is_bit_identical(self, small_campaign, tmp_path):
        run_tuning_campaign(small_campaign, tmp_path / "a", seed=5)
        run_tuning_campaign(small_campaign, tmp_path / "b", seed=5)
        for name in ("gains_region_01.json", "trace_region_01.csv", "report.json"):
            assert (tmp_path / "a" / name).read_text() == \
                   (tmp_path / "b" / name).read_text()

    def test_default_grid_campaign_writes_twelve_gain_files(self, tmp_path):
        # all 12 regions, with the search shrunk to keep the check quick
        from mpctuner.tuner import TunerConfig
        from mpctuner.surrogate import TrainConfig
        cfg = CampaignConfig(
            n_synthetic=600,
            tuner=TunerConfig(n_iterations=2, batch_size=2),
            train=TrainConfig(epochs=60, patience=60),
        )
        report = run_tuning_campaign(cfg, tmp_path / "full", seed=1)
        gains = sorted((tmp_path / "full").glob("gains_region_*.json"))
        traces = sorted((tmp_path / "full").glob("trace_region_*.csv"))
        assert len(gains) == 12 and len(traces) == 12
        assert report["failed_regions"] == []
        for index, entry in report["regions"].items():
            assert entry["replayed_cost"] == entry["final_cost"], index

    def test_config_json_round_trip(self, tmp_path):
        cfg = CampaignConfig(regions=(2, 3), n_synthetic=500,
                             shared_surrogate=False)
        path = tmp_path / "campaign.json"
        cfg.to_json(path)
        loaded = CampaignConfig.from_json(path)
        assert loaded.regions == (2, 3)
        assert loaded.n_synthetic == 500
        assert loaded.shared_surrogate is False
        assert loaded.tuner.mu == cfg.tuner.mu
