import numpy as np
import pytest

from mpctuner import plant


@pytest.fixture(scope="session")
def cfg():
    return plant.PlantConfig.default()


@pytest.fixture(scope="session")
def grid(cfg):
    return plant.build_region_grid(cfg)


@pytest.fixture(scope="session")
def linear_cfg(cfg):
    """Twin with the bilinear coupling switched off (purely linear core)."""
    data = cfg.to_dict()
    data["coupling"] = 0.0
    return plant.PlantConfig.from_dict(data)


@pytest.fixture(scope="session")
def trained_bundle(cfg, grid):
    """Compact surrogate trained on synthetic-labeler data (shared by tests)."""
    from mpctuner.harness import build_synthetic_dataset, train_surrogate_bundle
    from mpctuner.surrogate import TrainConfig

    samples = build_synthetic_dataset(grid, cfg, count=2000, seed=13)
    bundle, metrics = train_surrogate_bundle(
        samples, TrainConfig(seed=13, epochs=250, patience=60), split_seed=13)
    assert metrics["test_r2"] > 0.9
    return bundle, samples


def first_order_response(tau=1.0, window=10.0, n=1001):
    """y = 1 - exp(-t/tau) tracking a 0 -> 1 step."""
    t = np.linspace(0.0, window, n)
    return t, 1.0 - np.exp(-t / tau)


def second_order_response(zeta, wn=1.0, window=40.0, n=8001):
    """Unit step response of a standard underdamped second-order lag."""
    t = np.linspace(0.0, window, n)
    wd = wn * np.sqrt(1.0 - zeta ** 2)
    y = 1.0 - np.exp(-zeta * wn * t) * (
        np.cos(wd * t) + zeta / np.sqrt(1.0 - zeta ** 2) * np.sin(wd * t)
    )
    return t, y
