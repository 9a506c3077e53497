import json

import numpy as np
import pytest
import scipy.linalg

from mpctuner import plant
from mpctuner.errors import DomainError, GridBuildError, SteadyStateError


class TestEvaluateDynamics:
    def test_equilibrium_is_fixed_point(self, cfg, grid):
        for region in grid:
            xdot = plant.evaluate_dynamics(region.x_star, region.u_star,
                                           region.theta_sharp, cfg)
            assert np.abs(xdot).max() <= 1e-10

    def test_perturbation_matches_linear_part(self, cfg, grid):
        # +delta along e1 must produce A_c @ (delta e1) up to O(delta^2)
        region = grid[0]
        a_c, _ = plant.linear_parts(cfg, region.theta_sharp)
        delta = 1e-4
        x = region.x_star + delta * np.eye(4)[0]
        xdot = plant.evaluate_dynamics(x, region.u_star, region.theta_sharp, cfg)
        assert np.abs(xdot - a_c @ (delta * np.eye(4)[0])).max() < 10 * delta ** 2

    def test_out_of_box_f_egr_rejected(self, cfg, grid):
        region = grid[0]
        x = region.x_star.copy()
        x[3] = 1.5
        with pytest.raises(DomainError, match="f_egr"):
            plant.evaluate_dynamics(x, region.u_star, region.theta_sharp, cfg)

    def test_state_type_rejects_bad_egr(self):
        with pytest.raises(DomainError):
            plant.PlantState(0.5, 0.6, 0.3, 1.5)


class TestIntegrateStep:
    def test_equilibrium_held(self, cfg, grid):
        region = grid[0]
        x1 = plant.integrate_step(region.x_star, region.u_star,
                                  region.theta_sharp, 0.1, cfg)
        assert np.abs(x1 - region.x_star).max() <= 1e-9

    def test_rk4_against_exponential_decay(self):
        # xdot = -x, x0 = 1, dt = 0.1  ->  exp(-0.1)
        x1 = plant.rk4_step(lambda x: -x, np.array([1.0]), 0.1)
        assert abs(x1[0] - np.exp(-0.1)) < 1e-7

    def test_zero_dt_rejected(self, cfg, grid):
        region = grid[0]
        with pytest.raises(DomainError):
            plant.integrate_step(region.x_star, region.u_star,
                                 region.theta_sharp, 0.0, cfg)


class TestLinearize:
    def test_recovers_configured_linear_part(self, linear_cfg):
        theta = linear_cfg.theta_center
        a_ref, b_ref = plant.linear_parts(linear_cfg, theta)
        a_c, b_c, _, _ = plant.linearize(theta, linear_cfg)
        assert np.abs(a_c - a_ref).max() < 1e-6
        assert np.abs(b_c - b_ref).max() < 1e-6

    def test_jacobian_at_equilibria_matches_linear_part(self, cfg, grid):
        # coupling terms are products of deviations: zero first-order effect
        for region in grid[:4]:
            a_ref, b_ref = plant.linear_parts(cfg, region.theta_sharp)
            a_c, b_c, _, _ = plant.linearize(
                region.theta_sharp, cfg,
                equilibrium=(region.x_star, region.u_star),
            )
            scale = np.abs(a_ref).max()
            assert np.abs(a_c - a_ref).max() < 1e-5 * scale
            assert np.abs(b_c - b_ref).max() < 1e-5 * np.abs(b_ref).max()

    def test_output_rows_are_state_selectors(self, cfg, grid):
        region = grid[0]
        _, _, c_c, d_c = plant.linearize(region.theta_sharp, cfg,
                                         equilibrium=(region.x_star, region.u_star))
        assert np.array_equal(c_c[0], [1.0, 0.0, 0.0, 0.0])
        assert np.array_equal(c_c[1], [0.0, 0.0, 0.0, 1.0])
        assert np.array_equal(d_c, np.zeros((2, 3)))

    def test_central_difference_on_square(self):
        jac = plant.central_difference_jacobian(lambda z: z ** 2, np.array([3.0]))
        assert abs(jac[0, 0] - 6.0) < 1e-6


class TestDiscretize:
    def test_integrator(self):
        a, b = plant.discretize(np.zeros((2, 2)), np.eye(2), 0.5)
        assert np.abs(a - np.eye(2)).max() < 1e-14
        assert np.abs(b - 0.5 * np.eye(2)).max() < 1e-14

    def test_scalar_decay(self):
        a, _ = plant.discretize(np.array([[-1.0]]), np.array([[0.0]]), 0.1)
        assert abs(a[0, 0] - np.exp(-0.1)) < 1e-12

    def test_against_expm_oracle(self, cfg, grid):
        region = grid[3]
        a_c, b_c = plant.linear_parts(cfg, region.theta_sharp)
        a_d, _ = plant.discretize(a_c, b_c, cfg.ts)
        assert np.abs(a_d - scipy.linalg.expm(a_c * cfg.ts)).max() < 1e-12

    def test_semigroup_property(self, cfg):
        a_c, b_c = plant.linear_parts(cfg, cfg.theta_center)
        a1, _ = plant.discretize(a_c, b_c, 0.1)
        a2, _ = plant.discretize(a_c, b_c, 0.2)
        assert np.abs(a2 - a1 @ a1).max() < 1e-10

    def test_rejects_bad_ts(self):
        with pytest.raises(DomainError):
            plant.discretize(np.eye(2), np.eye(2), 0.0)


class TestSolveSteadyState:
    def test_designed_equilibrium_is_fixed_point(self, cfg):
        theta = cfg.theta_center
        r = plant.default_reference(cfg, theta)
        x_star, u_star = plant.solve_steady_state(theta, r, cfg)
        assert np.abs(x_star - plant.equilibrium_state(cfg, theta)).max() < 1e-9
        assert np.abs(u_star - plant.equilibrium_input(cfg, theta)).max() < 1e-9

    def test_linear_twin_matches_min_norm_least_squares(self, linear_cfg):
        theta = linear_cfg.theta_center
        r = plant.default_reference(linear_cfg, theta) + np.array([0.05, -0.02])
        x_star, u_star = plant.solve_steady_state(theta, r, linear_cfg)

        a_c, b_c = plant.linear_parts(linear_cfg, theta)
        c = plant.OUTPUT_MATRIX
        x_eq = plant.equilibrium_state(linear_cfg, theta)
        u_eq = plant.equilibrium_input(linear_cfg, theta)
        stacked = np.block([[a_c, b_c], [c, np.zeros((2, 3))]])
        rhs = np.concatenate([np.zeros(4), r - c @ x_eq])
        z, *_ = np.linalg.lstsq(stacked, rhs, rcond=None)
        assert np.abs(x_star - (x_eq + z[:4])).max() < 1e-7
        assert np.abs(u_star - (u_eq + z[4:])).max() < 1e-7

    def test_unreachable_reference_fails(self, cfg):
        theta = cfg.theta_center
        with pytest.raises(SteadyStateError) as err:
            plant.solve_steady_state(theta, np.array([1.95, 0.98]), cfg)
        assert err.value.residual > 1e-8

    def test_reference_outside_output_box_rejected(self, cfg):
        with pytest.raises(DomainError):
            plant.solve_steady_state(cfg.theta_center, np.array([0.5, 1.4]), cfg)

    def test_residual_contract_on_random_references(self, cfg, grid):
        # 100 random feasible references per region
        rng = np.random.default_rng(11)
        for region in grid:
            for _ in range(100):
                r = region.r_star + rng.uniform(-0.05, 0.05, size=2)
                x_star, u_star = plant.solve_steady_state(region.theta_sharp, r, cfg)
                resid = np.concatenate([
                    plant.evaluate_dynamics(x_star, u_star, region.theta_sharp, cfg),
                    plant.output_map(x_star) - r,
                ])
                assert np.abs(resid).max() <= 1e-8


class TestRegionGrid:
    def test_default_grid_has_twelve_regions(self, grid):
        assert len(grid) == 12
        assert [r.index for r in grid] == list(range(1, 13))

    def test_single_point_grid(self, cfg):
        data = cfg.to_dict()
        data["n_speed"] = data["n_fuel"] = 1
        single = plant.build_region_grid(plant.PlantConfig.from_dict(data))
        assert len(single) == 1

    def test_region_invariants(self, cfg, grid):
        for region in grid:
            # stabilizability: DARE solution exists and contracts
            p = scipy.linalg.solve_discrete_are(region.A, region.B,
                                                np.eye(4), np.eye(3))
            k = np.linalg.solve(region.B.T @ p @ region.B + np.eye(3),
                                region.B.T @ p @ region.A)
            assert np.abs(np.linalg.eigvals(region.A - region.B @ k)).max() < 1.0
            resid = np.concatenate([
                plant.evaluate_dynamics(region.x_star, region.u_star,
                                        region.theta_sharp, cfg),
                plant.output_map(region.x_star) - region.r_star,
            ])
            assert np.abs(resid).max() <= 1e-8

    def test_failure_names_region(self, cfg):
        data = cfg.to_dict()
        data["a0"] = (np.eye(4) * 50.0).tolist()  # violently unstable core
        data["eq_x0"] = [5.0, 5.0, 5.0, 5.0]      # equilibrium far outside boxes
        with pytest.raises(GridBuildError, match="region 1"):
            plant.build_region_grid(plant.PlantConfig.from_dict(data))

    def test_grid_json_round_trip(self, grid, tmp_path):
        path = tmp_path / "grid.json"
        plant.grid_to_json(grid, path)
        loaded = plant.grid_from_json(path)
        assert len(loaded) == len(grid)
        for a, b in zip(grid, loaded):
            assert a.index == b.index
            assert np.array_equal(a.A, b.A)
            assert np.array_equal(a.x_star, b.x_star)


class TestSelectRegion:
    def test_exact_grid_point(self, grid):
        for region in grid:
            assert plant.select_region(region.theta_sharp, grid) == region.index

    def test_tie_breaks_to_lower_index(self):
        def region_at(index, theta):
            return plant.RegionModel(
                index=index, theta_sharp=np.array(theta), A=np.eye(4),
                B=np.zeros((4, 3)), C=plant.OUTPUT_MATRIX, D=np.zeros((2, 3)),
                x_star=np.zeros(4), u_star=np.zeros(3), r_star=np.zeros(2), ts=0.1,
            )
        pair = [region_at(1, [0.5, 0.0]), region_at(2, [0.5, 0.5])]
        assert plant.select_region(np.array([0.5, 0.25]), pair) == 1

    def test_matches_brute_force_voronoi(self, cfg, grid):
        thetas = np.array([r.theta_sharp for r in grid])
        scales = np.array([
            np.diff(np.unique(thetas[:, 0])).min(),
            np.diff(np.unique(thetas[:, 1])).min(),
        ])
        rng = np.random.default_rng(3)
        for _ in range(400):
            theta = rng.uniform(cfg.theta_lb, cfg.theta_ub)
            dist = (((theta - thetas) / scales) ** 2).sum(axis=1)
            assert plant.select_region(theta, grid) == int(np.argmin(dist)) + 1

    def test_idempotent_on_grid_points(self, grid):
        # selecting at a selected region's grid point returns the region
        for region in grid:
            chosen = plant.select_region(region.theta_sharp, grid)
            assert plant.select_region(grid[chosen - 1].theta_sharp, grid) == chosen


class TestPlantConfig:
    def test_json_round_trip(self, cfg, tmp_path):
        path = tmp_path / "plant.json"
        cfg.to_json(path)
        loaded = plant.PlantConfig.from_json(path)
        assert np.array_equal(loaded.a0, cfg.a0)
        assert loaded.dt == cfg.dt
        assert loaded.n_fuel == cfg.n_fuel

    def test_arrays_immutable(self, cfg):
        with pytest.raises(ValueError):
            cfg.a0[0, 0] = 99.0
