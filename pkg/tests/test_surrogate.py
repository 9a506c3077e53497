import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpctuner.errors import TrainingError
from mpctuner.surrogate import (GRADE_SCALE, N_PARAMETERS, CostSurrogate, Dataset,
                                LabeledSample, NetworkParams, SurrogateBundle,
                                TrainConfig, forward, grade_to_cost,
                                gradient_check, init_network, load_samples,
                                output_gradient, save_samples, sgd_fit,
                                split_dataset, synth_label, train)
from mpctuner.features import FeatureScaler


def random_features(rng, n):
    ov = rng.exponential(0.1, (n, 2))
    un = rng.exponential(0.06, (n, 2))
    st_ = rng.uniform(0.02, 1.0, (n, 2))
    er = rng.exponential(0.05, (n, 2))
    return np.column_stack([ov[:, 0], un[:, 0], st_[:, 0], er[:, 0],
                            ov[:, 1], un[:, 1], st_[:, 1], er[:, 1]])


def labeled(rng, n, source="synthetic"):
    feats = random_features(rng, n)
    return [LabeledSample(f"{source}-{i:05d}", f, synth_label(f), source)
            for i, f in enumerate(feats)]


class TestInitNetwork:
    def test_deterministic_per_seed(self):
        assert np.array_equal(init_network(9).pack(), init_network(9).pack())
        assert not np.array_equal(init_network(9).pack(), init_network(10).pack())

    def test_parameter_count(self):
        # 8*24+24 + 24*8+8 + 8+1 = 425 scalars
        assert N_PARAMETERS == 425
        assert init_network(0).n_parameters() == 425

    def test_biases_zero_and_weights_bounded(self):
        params = init_network(3)
        assert np.all(params.b1 == 0) and np.all(params.b2 == 0) and np.all(params.b3 == 0)
        limit1 = np.sqrt(6.0 / (8 + 24))
        assert np.abs(params.w1).max() <= limit1


class TestForward:
    def test_zero_network_outputs_ln2(self):
        zero = NetworkParams.unpack(np.zeros(N_PARAMETERS))
        rng = np.random.default_rng(0)
        for _ in range(5):
            assert forward(zero, rng.normal(size=8)) == pytest.approx(np.log(2.0))

    def test_output_nonnegative(self):
        rng = np.random.default_rng(1)
        params = init_network(1)
        X = rng.normal(size=(10_000, 8), scale=3.0)
        from mpctuner.surrogate import _forward_batch
        out, _ = _forward_batch(params, X)
        assert out.min() >= 0.0

    def test_empirically_lipschitz(self):
        rng = np.random.default_rng(2)
        params = init_network(2)
        x = rng.normal(size=8)
        base = forward(params, x)
        deltas = rng.normal(size=(200, 8)) * 1e-3
        lips = [abs(forward(params, x + d) - base) / np.linalg.norm(d)
                for d in deltas]
        assert max(lips) < 50.0  # loose bound; continuity, not a tight constant

    def test_wrong_dimension_rejected(self):
        with pytest.raises(ValueError):
            forward(init_network(0), np.zeros(5))


class TestGradients:
    def test_backprop_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        worst = 0.0
        for k in range(20):
            params = init_network(k)
            x = rng.normal(size=8)
            worst = max(worst, gradient_check(params, x))
        assert worst <= 1e-5

    def test_zero_network_output_bias_gradient(self):
        # softplus'(0) = 0.5 and d z3 / d b3 = 1
        zero = NetworkParams.unpack(np.zeros(N_PARAMETERS))
        grad = output_gradient(zero, np.ones(8))
        assert grad[-1] == pytest.approx(0.5)

    def test_gradient_deterministic(self):
        params = init_network(4)
        x = np.linspace(-1, 1, 8)
        assert np.array_equal(output_gradient(params, x), output_gradient(params, x))


class TestSynthLabel:
    def test_perfect_features_grade_ten(self):
        assert synth_label(np.zeros(8)) == GRADE_SCALE

    def test_strictly_decreasing_in_overshoot_until_clamp(self):
        grades = []
        for ov in np.linspace(0.0, 2.0, 40):
            f = np.zeros(8)
            f[0] = ov
            grades.append(synth_label(f))
        diffs = np.diff(grades)
        before_clamp = np.array(grades[:-1]) > 0.0
        assert np.all(diffs[before_clamp] < 0.0)
        assert grades[-1] == 0.0

    @settings(max_examples=300, deadline=None)
    @given(seed=st.integers(0, 2 ** 20))
    def test_elementwise_dominance(self, seed):
        rng = np.random.default_rng(seed)
        f = rng.uniform(0.0, 1.0, size=8)
        worse = f + rng.uniform(0.0, 0.5, size=8)
        assert synth_label(worse) <= synth_label(f)


class TestGradeToCost:
    def test_endpoints_and_midpoint(self):
        assert grade_to_cost(10.0) == 0.0
        assert grade_to_cost(0.0) == 1.0
        assert grade_to_cost(7.5) == pytest.approx(0.25)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            grade_to_cost(10.5)
        with pytest.raises(ValueError):
            grade_to_cost(-0.1)


class TestSplitDataset:
    def test_sizes_70_15_15(self):
        rng = np.random.default_rng(6)
        ds = split_dataset(labeled(rng, 100), seed=0)
        assert ds.indices("train").size == 70
        assert ds.indices("dev").size == 15
        assert ds.indices("test").size == 15

    def test_deterministic_per_seed(self):
        rng = np.random.default_rng(7)
        samples = labeled(rng, 60)
        a = split_dataset(samples, seed=4)
        b = split_dataset(samples, seed=4)
        assert np.array_equal(a.split, b.split)

    def test_stratified_by_source(self):
        rng = np.random.default_rng(8)
        samples = labeled(rng, 80, "synthetic") + labeled(rng, 40, "human")
        ds = split_dataset(samples, seed=1)
        for part, ratio in zip(("train", "dev", "test"), (0.7, 0.15, 0.15)):
            idx = ds.indices(part)
            human = sum(1 for i in idx if ds.samples[i].source == "human")
            synth = idx.size - human
            assert abs(human - ratio * 40) <= 1.0
            assert abs(synth - ratio * 80) <= 1.0

    def test_bad_ratios_rejected(self):
        rng = np.random.default_rng(9)
        with pytest.raises(ValueError, match="sum to 1"):
            split_dataset(labeled(rng, 10), ratios=(0.5, 0.2, 0.2))

    def test_empty_split_rejected(self):
        rng = np.random.default_rng(10)
        with pytest.raises(ValueError, match="empty"):
            split_dataset(labeled(rng, 3), ratios=(0.9, 0.05, 0.05))

    def test_stats_come_from_train_split_only(self):
        rng = np.random.default_rng(11)
        ds = split_dataset(labeled(rng, 100), seed=2)
        manual = FeatureScaler().fit(ds.features("train"))
        assert np.array_equal(ds.scaler.mean_, manual.mean_)
        assert np.array_equal(ds.scaler.scale_, manual.scale_)


class TestTrain:
    def test_constant_target_converges(self):
        rng = np.random.default_rng(12)
        feats = random_features(rng, 120)
        samples = [LabeledSample(f"c-{i}", f, 4.0, "synthetic")
                   for i, f in enumerate(feats)]
        ds = split_dataset(samples, seed=0)
        params, metrics = train(ds, TrainConfig(seed=0, epochs=500, patience=500))
        assert metrics["train_mse"] < 1e-4

    def test_deterministic_per_seed(self):
        rng = np.random.default_rng(13)
        samples = labeled(rng, 200)
        ds = split_dataset(samples, seed=0)
        cfg = TrainConfig(seed=5, epochs=30, patience=30)
        p1, m1 = train(ds, cfg)
        p2, m2 = train(ds, cfg)
        assert np.array_equal(p1.pack(), p2.pack())
        assert m1 == m2

    def test_divergence_raises_training_error(self):
        rng = np.random.default_rng(14)
        samples = labeled(rng, 64)
        ds = split_dataset(samples, seed=0)
        with pytest.raises(TrainingError) as err:
            train(ds, TrainConfig(learning_rate=4e3, seed=0, epochs=50, patience=50))
        assert err.value.epoch is not None

    def test_estimator_fit_predict_score(self):
        rng = np.random.default_rng(15)
        feats = random_features(rng, 600)
        y = np.array([grade_to_cost(synth_label(f)) for f in feats])
        scaler = FeatureScaler().fit(feats)
        Xn = scaler.transform(feats)
        model = CostSurrogate(seed=0, epochs=150, patience=150)
        model.fit(Xn[:500], y[:500])
        assert model.score(Xn[500:], y[500:]) > 0.9

    def test_estimator_get_params_round_trip(self):
        model = CostSurrogate(seed=3, epochs=10)
        params = model.get_params()
        clone = CostSurrogate(**params)
        assert clone.seed == 3 and clone.epochs == 10


class TestRankFidelity:
    def test_trained_surrogate_preserves_grade_ranking(self, trained_bundle):
        # held-out pairs whose grades differ by >= 1.0 must rank identically
        # under the learned cost in at least 90% of cases
        bundle, samples = trained_bundle
        ds = split_dataset(samples, seed=13)
        idx = ds.indices("test")
        held = [ds.samples[i] for i in idx]
        rng = np.random.default_rng(0)
        agree = 0
        checked = 0
        while checked < 400:
            a, b = held[rng.integers(len(held))], held[rng.integers(len(held))]
            if abs(a.grade - b.grade) < 1.0:
                continue
            cost_a = bundle.cost(a.features)
            cost_b = bundle.cost(b.features)
            # lower grade means higher cost
            agree += (a.grade > b.grade) == (cost_a < cost_b)
            checked += 1
        assert agree / checked >= 0.9


class TestPersistence:
    def test_jsonl_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(16)
        samples = labeled(rng, 25) + labeled(rng, 5, "human")
        path = tmp_path / "data.jsonl"
        save_samples(samples, path)
        loaded = load_samples(path)
        assert len(loaded) == len(samples)
        for a, b in zip(samples, loaded):
            assert a.trajectory_id == b.trajectory_id
            assert np.array_equal(a.features, b.features)
            assert a.grade == b.grade and a.source == b.source

    def test_network_params_json_round_trip_bit_exact(self, tmp_path):
        params = init_network(17)
        path = tmp_path / "net.json"
        params.to_json(path)
        loaded = NetworkParams.from_json(path)
        assert np.array_equal(params.pack(), loaded.pack())

    def test_surrogate_bundle_round_trip(self, tmp_path):
        rng = np.random.default_rng(18)
        scaler = FeatureScaler().fit(random_features(rng, 50))
        bundle = SurrogateBundle(params=init_network(18), scaler=scaler)
        path = tmp_path / "bundle.json"
        bundle.to_json(path)
        loaded = SurrogateBundle.from_json(path)
        f = random_features(rng, 1)[0]
        assert loaded.cost(f) == bundle.cost(f)

    def test_bad_source_rejected(self):
        with pytest.raises(ValueError, match="source"):
            LabeledSample("x", np.zeros(8), 5.0, "robot")

    def test_out_of_scale_grade_rejected(self):
        with pytest.raises(ValueError):
            LabeledSample("x", np.zeros(8), 11.0, "human")
