"""Learned grading cost: dataset handling, a small feedforward regressor,
its training loop, and the synthetic monotone labeler.

The regressor is written out explicitly (no autograd) so its gradients can be
verified against finite differences parameter by parameter.  Architecture:
8 inputs -> 24 tanh -> 8 tanh -> softplus scalar, 425 parameters in total.
Grades live on [0, 10] (higher is better); everything downstream of the
grader consumes ``cost = (10 - grade) / 10`` so that the tuner minimizes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .errors import TrainingError
from .features import N_FEATURES, FeatureScaler

LAYER_SIZES = (N_FEATURES, 24, 8, 1)
N_PARAMETERS = sum((fan_in + 1) * fan_out
                   for fan_in, fan_out in zip(LAYER_SIZES, LAYER_SIZES[1:]))  # 425

GRADE_SCALE = 10.0

# Penalty weight per feature class (overshoot, undershoot, settling, ss-error),
# applied to both outputs by the synthetic labeler.  Chosen so that grades of
# plausible closed-loop responses span the scale instead of clamping.
SYNTH_WEIGHTS = np.array([3.0, 3.0, 1.5, 4.0, 3.0, 3.0, 1.5, 4.0])


def softplus(z):
    return np.logaddexp(0.0, z)


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500.0, 500.0)))


@dataclass(frozen=True)
class NetworkParams:
    """Weights and biases of the 24/8 regressor."""

    w1: np.ndarray  # (24, 8)
    b1: np.ndarray  # (24,)
    w2: np.ndarray  # (8, 24)
    b2: np.ndarray  # (8,)
    w3: np.ndarray  # (1, 8)
    b3: np.ndarray  # (1,)
    activation: str = "tanh_softplus"

    def __post_init__(self):
        shapes = {
            "w1": (LAYER_SIZES[1], LAYER_SIZES[0]), "b1": (LAYER_SIZES[1],),
            "w2": (LAYER_SIZES[2], LAYER_SIZES[1]), "b2": (LAYER_SIZES[2],),
            "w3": (LAYER_SIZES[3], LAYER_SIZES[2]), "b3": (LAYER_SIZES[3],),
        }
        for name, shape in shapes.items():
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            object.__setattr__(self, name, arr)

    def n_parameters(self) -> int:
        return sum(getattr(self, name).size
                   for name in ("w1", "b1", "w2", "b2", "w3", "b3"))

    def pack(self) -> np.ndarray:
        return np.concatenate([getattr(self, name).ravel()
                               for name in ("w1", "b1", "w2", "b2", "w3", "b3")])

    @classmethod
    def unpack(cls, flat, activation: str = "tanh_softplus") -> "NetworkParams":
        flat = np.asarray(flat, dtype=float)
        arrays = {}
        offset = 0
        shapes = {
            "w1": (LAYER_SIZES[1], LAYER_SIZES[0]), "b1": (LAYER_SIZES[1],),
            "w2": (LAYER_SIZES[2], LAYER_SIZES[1]), "b2": (LAYER_SIZES[2],),
            "w3": (LAYER_SIZES[3], LAYER_SIZES[2]), "b3": (LAYER_SIZES[3],),
        }
        for name, shape in shapes.items():
            size = int(np.prod(shape))
            arrays[name] = flat[offset: offset + size].reshape(shape)
            offset += size
        if offset != flat.size:
            raise ValueError(f"expected {offset} values, got {flat.size}")
        return cls(activation=activation, **arrays)

    def copy(self) -> "NetworkParams":
        return replace(self, w1=self.w1.copy(), b1=self.b1.copy(),
                       w2=self.w2.copy(), b2=self.b2.copy(),
                       w3=self.w3.copy(), b3=self.b3.copy())

    def to_dict(self) -> dict:
        return {
            "layers": list(LAYER_SIZES),
            "activation": self.activation,
            "w1": self.w1.tolist(), "b1": self.b1.tolist(),
            "w2": self.w2.tolist(), "b2": self.b2.tolist(),
            "w3": self.w3.tolist(), "b3": self.b3.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkParams":
        return cls(
            w1=data["w1"], b1=data["b1"], w2=data["w2"], b2=data["b2"],
            w3=data["w3"], b3=data["b3"], activation=data["activation"],
        )

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_json(cls, path) -> "NetworkParams":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def init_network(seed: int = 0) -> NetworkParams:
    """Glorot-uniform weights, zero biases, deterministic per seed."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for idx, (fan_in, fan_out) in enumerate(zip(LAYER_SIZES, LAYER_SIZES[1:]), start=1):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        arrays[f"w{idx}"] = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        arrays[f"b{idx}"] = np.zeros(fan_out)
    return NetworkParams(**arrays)


def _forward_batch(params: NetworkParams, X):
    X = np.asarray(X, dtype=float)
    z1 = X @ params.w1.T + params.b1
    a1 = np.tanh(z1)
    z2 = a1 @ params.w2.T + params.b2
    a2 = np.tanh(z2)
    z3 = a2 @ params.w3.T + params.b3
    out = softplus(z3)[:, 0]
    return out, (X, a1, a2, z3)


def forward(params: NetworkParams, features) -> float:
    """Nonnegative cost estimate for one normalized feature vector."""
    features = np.asarray(features, dtype=float)
    if features.shape != (N_FEATURES,):
        raise ValueError(f"features must have shape ({N_FEATURES},), got {features.shape}")
    out, _ = _forward_batch(params, features[None, :])
    return float(out[0])


def _backward_batch(params: NetworkParams, cache, dout):
    """Gradients of sum(dout * output) w.r.t. every parameter."""
    X, a1, a2, z3 = cache
    d3 = (dout[:, None]) * sigmoid(z3)          # (n, 1)
    gw3 = d3.T @ a2
    gb3 = d3.sum(axis=0)
    da2 = d3 @ params.w3
    d2 = da2 * (1.0 - a2 ** 2)
    gw2 = d2.T @ a1
    gb2 = d2.sum(axis=0)
    da1 = d2 @ params.w2
    d1 = da1 * (1.0 - a1 ** 2)
    gw1 = d1.T @ X
    gb1 = d1.sum(axis=0)
    return {"w1": gw1, "b1": gb1, "w2": gw2, "b2": gb2, "w3": gw3, "b3": gb3}


def output_gradient(params: NetworkParams, features) -> np.ndarray:
    """Packed gradient of the scalar output w.r.t. all 425 parameters."""
    features = np.asarray(features, dtype=float).reshape(1, N_FEATURES)
    _, cache = _forward_batch(params, features)
    grads = _backward_batch(params, cache, np.ones(1))
    return np.concatenate([grads[name].ravel()
                           for name in ("w1", "b1", "w2", "b2", "w3", "b3")])


def gradient_check(params: NetworkParams, features, step: float = 1e-6) -> float:
    """Max relative error of backprop vs central differences over all parameters.

    Relative error uses a unit floor in the denominator so that near-zero
    gradients compare absolutely.
    """
    features = np.asarray(features, dtype=float)
    analytic = output_gradient(params, features)
    flat = params.pack()
    numeric = np.empty_like(flat)
    for k in range(flat.size):
        up, down = flat.copy(), flat.copy()
        up[k] += step
        down[k] -= step
        numeric[k] = (
            forward(NetworkParams.unpack(up), features)
            - forward(NetworkParams.unpack(down), features)
        ) / (2.0 * step)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float((np.abs(analytic - numeric) / denom).max())


def loss_and_gradients(params: NetworkParams, X, y):
    """Mean-squared error and its packed parameter gradient."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    out, cache = _forward_batch(params, X)
    err = out - y
    loss = float((err ** 2).mean())
    dout = 2.0 * err / err.size
    grads = _backward_batch(params, cache, dout)
    flat = np.concatenate([grads[name].ravel()
                           for name in ("w1", "b1", "w2", "b2", "w3", "b3")])
    return loss, flat


def synth_label(features, weights=SYNTH_WEIGHTS) -> float:
    """Monotone synthetic grade: 10 minus a penalty that grows with every
    feature through phi(z) = z + z^2, clamped to [0, 10]."""
    features = np.asarray(features, dtype=float)
    if features.shape != (N_FEATURES,):
        raise ValueError(f"features must have shape ({N_FEATURES},), got {features.shape}")
    if not np.all(np.isfinite(features)):
        raise ValueError("features must be finite")
    penalty = float(np.dot(weights, features + features ** 2))
    return float(np.clip(GRADE_SCALE - penalty, 0.0, GRADE_SCALE))


def grade_to_cost(grade: float) -> float:
    """Affine map from the grading scale to the minimized cost in [0, 1]."""
    grade = float(grade)
    if not 0.0 <= grade <= GRADE_SCALE:
        raise ValueError(f"grade {grade:g} outside [0, {GRADE_SCALE:g}]")
    return (GRADE_SCALE - grade) / GRADE_SCALE


@dataclass(frozen=True)
class LabeledSample:
    trajectory_id: str
    features: np.ndarray
    grade: float
    source: str  # "human" | "synthetic"

    def __post_init__(self):
        features = np.asarray(self.features, dtype=float)
        if features.shape != (N_FEATURES,):
            raise ValueError(f"features must have shape ({N_FEATURES},)")
        if not np.isfinite(self.grade) or not 0.0 <= self.grade <= GRADE_SCALE:
            raise ValueError(f"grade {self.grade!r} outside [0, {GRADE_SCALE:g}]")
        if self.source not in ("human", "synthetic"):
            raise ValueError(f"unknown source {self.source!r}")
        object.__setattr__(self, "features", features)

    def to_record(self) -> dict:
        return {
            "trajectory_id": self.trajectory_id,
            "features": self.features.tolist(),
            "grade": self.grade,
            "source": self.source,
        }

    @classmethod
    def from_record(cls, record: dict) -> "LabeledSample":
        return cls(
            trajectory_id=record["trajectory_id"],
            features=record["features"],
            grade=record["grade"],
            source=record["source"],
        )


def save_samples(samples, path) -> None:
    """Line-delimited JSON records; floats round-trip bit-exactly."""
    with open(path, "w") as fh:
        for sample in samples:
            fh.write(json.dumps(sample.to_record()) + "\n")


def load_samples(path) -> list[LabeledSample]:
    samples = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                samples.append(LabeledSample.from_record(json.loads(line)))
    return samples


@dataclass
class Dataset:
    """Labeled samples with a fixed split assignment and training-split stats."""

    samples: list
    split: np.ndarray        # entries "train" | "dev" | "test"
    scaler: FeatureScaler = field(default=None)

    def __post_init__(self):
        self.split = np.asarray(self.split)
        if len(self.samples) != self.split.size:
            raise ValueError("split assignment length mismatch")
        if self.scaler is None:
            scaler = FeatureScaler()
            scaler.fit(self.features("train"))
            self.scaler = scaler

    def indices(self, part: str) -> np.ndarray:
        return np.nonzero(self.split == part)[0]

    def features(self, part: str) -> np.ndarray:
        idx = self.indices(part)
        return np.array([self.samples[i].features for i in idx])

    def grades(self, part: str) -> np.ndarray:
        idx = self.indices(part)
        return np.array([self.samples[i].grade for i in idx])

    def costs(self, part: str) -> np.ndarray:
        return np.array([grade_to_cost(g) for g in self.grades(part)])

    def normalized_features(self, part: str) -> np.ndarray:
        feats = self.features(part)
        return self.scaler.transform(feats) if feats.size else feats


def _largest_remainder_counts(total: int, ratios) -> list[int]:
    raw = [total * r for r in ratios]
    counts = [int(np.floor(v)) for v in raw]
    remainder = total - sum(counts)
    order = np.argsort([c - v for c, v in zip(counts, raw)])
    for k in range(remainder):
        counts[order[k]] += 1
    return counts


def split_dataset(samples, ratios=(0.7, 0.15, 0.15), seed: int = 0) -> Dataset:
    """Deterministic shuffle split, stratified by label source."""
    ratios = tuple(float(r) for r in ratios)
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios):g}")
    if not samples:
        raise ValueError("cannot split an empty sample list")
    rng = np.random.default_rng(seed)
    parts = ("train", "dev", "test")
    split = np.empty(len(samples), dtype=object)
    for source in sorted({s.source for s in samples}):
        idx = np.array([i for i, s in enumerate(samples) if s.source == source])
        rng.shuffle(idx)
        counts = _largest_remainder_counts(idx.size, ratios)
        offset = 0
        for part, count in zip(parts, counts):
            split[idx[offset: offset + count]] = part
            offset += count
    for part, ratio in zip(parts, ratios):
        if ratio > 0 and not (split == part).any():
            raise ValueError(f"split {part!r} is empty despite ratio {ratio:g}")
    return Dataset(samples=list(samples), split=split)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 400
    seed: int = 0
    patience: int = 60

    def __post_init__(self):
        if min(self.learning_rate, self.batch_size, self.epochs, self.patience) <= 0:
            raise ValueError("training hyperparameters must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")


def _r_squared(pred, target) -> float:
    target = np.asarray(target, dtype=float)
    ss_tot = float(((target - target.mean()) ** 2).sum())
    if ss_tot == 0.0:
        return 0.0
    ss_res = float(((target - pred) ** 2).sum())
    return 1.0 - ss_res / ss_tot


def sgd_fit(X, y, cfg: TrainConfig, *, X_dev=None, y_dev=None):
    """Mini-batch gradient descent with momentum on the MSE; returns the
    best-dev checkpoint (best-train when no dev split is given)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape[0] == 0:
        raise ValueError("training split is empty")
    have_dev = X_dev is not None and len(X_dev) > 0
    rng = np.random.default_rng(cfg.seed)
    params = init_network(cfg.seed)
    flat = params.pack()
    velocity = np.zeros_like(flat)
    best_flat = flat.copy()
    best_loss = np.inf
    stale = 0
    history = []
    n = X.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start: start + cfg.batch_size]
            loss, grad = loss_and_gradients(NetworkParams.unpack(flat), X[batch], y[batch])
            if not np.isfinite(loss):
                raise TrainingError(f"loss diverged at epoch {epoch}", epoch=epoch)
            velocity = cfg.momentum * velocity - cfg.learning_rate * grad
            flat = flat + velocity
        model = NetworkParams.unpack(flat)
        if have_dev:
            pred, _ = _forward_batch(model, X_dev)
            monitor = float(((pred - y_dev) ** 2).mean())
        else:
            pred, _ = _forward_batch(model, X)
            monitor = float(((pred - y) ** 2).mean())
        if not np.isfinite(monitor):
            raise TrainingError(f"loss diverged at epoch {epoch}", epoch=epoch)
        history.append(monitor)
        if monitor < best_loss - 1e-12:
            best_loss = monitor
            best_flat = flat.copy()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return NetworkParams.unpack(best_flat), history


def train(dataset: Dataset, cfg: TrainConfig = TrainConfig()):
    """Train on the dataset's train split; report MSE and R^2 per split."""
    X = dataset.normalized_features("train")
    y = dataset.costs("train")
    X_dev = dataset.normalized_features("dev")
    y_dev = dataset.costs("dev")
    params, history = sgd_fit(X, y, cfg, X_dev=X_dev, y_dev=y_dev)
    metrics = {"epochs_run": len(history)}
    for part in ("train", "dev", "test"):
        feats = dataset.normalized_features(part)
        if len(feats) == 0:
            continue
        target = dataset.costs(part)
        pred, _ = _forward_batch(params, feats)
        metrics[f"{part}_mse"] = float(((pred - target) ** 2).mean())
        metrics[f"{part}_r2"] = _r_squared(pred, target)
    return params, metrics


class CostSurrogate(RegressorMixin, BaseEstimator):
    """sklearn-style regressor wrapping the explicit 24/8 network.

    ``fit`` expects normalized features and cost targets; a fraction of the
    data is held out internally for early stopping.
    """

    def __init__(self, learning_rate=0.05, momentum=0.9, batch_size=64,
                 epochs=400, seed=0, patience=60, validation_fraction=0.15):
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.patience = patience
        self.validation_fraction = validation_fraction

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float).reshape(-1)
        if X.ndim != 2 or X.shape[1] != N_FEATURES:
            raise ValueError(f"X must be (n, {N_FEATURES}), got {X.shape}")
        if X.shape[0] != y.size:
            raise ValueError("X and y lengths differ")
        cfg = TrainConfig(
            learning_rate=self.learning_rate, momentum=self.momentum,
            batch_size=self.batch_size, epochs=self.epochs,
            seed=self.seed, patience=self.patience,
        )
        n_dev = int(round(self.validation_fraction * X.shape[0]))
        if n_dev > 0:
            order = np.random.default_rng(self.seed).permutation(X.shape[0])
            dev, tr = order[:n_dev], order[n_dev:]
            params, history = sgd_fit(X[tr], y[tr], cfg,
                                      X_dev=X[dev], y_dev=y[dev])
        else:
            params, history = sgd_fit(X, y, cfg)
        self.params_ = params
        self.loss_curve_ = history
        self.n_iter_ = len(history)
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "params_"):
            raise ValueError("CostSurrogate is not fitted")
        X = np.asarray(X, dtype=float)
        out, _ = _forward_batch(self.params_, X)
        return out


@dataclass
class SurrogateBundle:
    """Trained network plus the feature statistics it was trained under."""

    params: NetworkParams
    scaler: FeatureScaler

    def cost(self, features_raw) -> float:
        """Predicted grading cost of a raw (unnormalized) feature vector."""
        normalized = self.scaler.transform(
            np.asarray(features_raw, dtype=float).reshape(1, -1)
        )[0]
        return forward(self.params, normalized)

    def to_json(self, path) -> None:
        payload = {"network": self.params.to_dict(), "scaler": self.scaler.to_dict()}
        with open(path, "w") as fh:
            json.dump(payload, fh)

    @classmethod
    def from_json(cls, path) -> "SurrogateBundle":
        with open(Path(path)) as fh:
            payload = json.load(fh)
        return cls(
            params=NetworkParams.from_dict(payload["network"]),
            scaler=FeatureScaler.from_dict(payload["scaler"]),
        )
