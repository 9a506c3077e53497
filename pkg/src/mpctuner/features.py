"""Step-response feature extraction: the map from trajectories to 8-vectors.

Each closed-loop experiment yields two output traces tracking a step
reference.  Per output the extractor computes four classic step metrics
(overshoot, undershoot, settling time, steady-state error), all as
dimensionless ratios so they are invariant to translating or rescaling the
signals.  Feature order:

    [ov_1, un_1, settle_1, sse_1, ov_2, un_2, settle_2, sse_2]

Definitions (rising step; falling steps are sign-mirrored first):

* steady value ``y_ss``   mean of the final tenth of the window,
* overshoot               max(0, (max y - y_ss) / |dr|),
* undershoot              max(0, (y[0] - min y) / |dr|),
* settling time           last instant after which y stays inside
                          y_ss +- (settle_frac * |y_ss - y[0]| +
                          noise_band * |dr|), with the band crossing located
                          by linear interpolation between samples;
                          out-of-band excursions shorter than
                          ``excursion_frac`` of the window are forgiven;
                          normalized by the window length and capped at 1,
* steady-state error      |y_ss - r_final| / |dr|,

where ``dr`` is the commanded step magnitude.  A response that is in band
from the start settles at the first sample after the window opens, keeping
the normalized settling time strictly positive.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import DegenerateStepError

FEATURE_NAMES = (
    "overshoot_y1", "undershoot_y1", "settling_y1", "ss_error_y1",
    "overshoot_y2", "undershoot_y2", "settling_y2", "ss_error_y2",
)
N_FEATURES = len(FEATURE_NAMES)
MIN_SAMPLES = 32


@dataclass(frozen=True)
class ToleranceConfig:
    """Band parameters for the settling-time computation."""

    settle_frac: float = 0.01       # fraction of the achieved step span
    noise_band: float = 0.0025      # extra band, as a fraction of |dr|
    excursion_frac: float = 0.02    # forgivable excursion length / window

    def __post_init__(self):
        if self.settle_frac <= 0:
            raise ValueError("settle_frac must be positive")
        if self.noise_band < 0 or self.excursion_frac < 0:
            raise ValueError("noise_band and excursion_frac must be nonnegative")


DEFAULT_TOLERANCE = ToleranceConfig()

# Analytic-oracle comparisons use a bare 1% band with no noise allowance.
EXACT_TOLERANCE = ToleranceConfig(noise_band=0.0, excursion_frac=0.0)


@dataclass(frozen=True)
class StepResponse:
    """A two-output step experiment on a uniform time grid."""

    t: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    r1: tuple[float, float]   # (initial, final) reference for output 1
    r2: tuple[float, float]
    window: float = 0.0       # filled from the grid when omitted

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        y1 = np.asarray(self.y1, dtype=float)
        y2 = np.asarray(self.y2, dtype=float)
        if t.ndim != 1 or t.size < MIN_SAMPLES:
            raise ValueError(f"need at least {MIN_SAMPLES} samples, got {t.size}")
        if y1.shape != t.shape or y2.shape != t.shape:
            raise ValueError("y1/y2 must match the time grid")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y1))
                and np.all(np.isfinite(y2))):
            raise ValueError("step response contains non-finite values")
        steps = np.diff(t)
        dt = steps[0]
        if dt <= 0 or np.abs(steps - dt).max() > 1e-9 * max(dt, 1.0):
            raise ValueError("time grid must be uniform and increasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "y1", y1)
        object.__setattr__(self, "y2", y2)
        object.__setattr__(self, "r1", (float(self.r1[0]), float(self.r1[1])))
        object.__setattr__(self, "r2", (float(self.r2[0]), float(self.r2[1])))
        window = float(self.window) if self.window else float(t[-1] - t[0])
        if abs(window - (t[-1] - t[0])) > 1e-6 * max(window, 1.0):
            raise ValueError("window length disagrees with the time grid span")
        object.__setattr__(self, "window", window)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    def to_csv(self, path) -> None:
        """Write samples as CSV plus a JSON sidecar for references and window."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "y1", "y2"])
            for row in zip(self.t, self.y1, self.y2):
                writer.writerow([repr(float(v)) for v in row])
        sidecar = {"r1": list(self.r1), "r2": list(self.r2), "window": self.window}
        with open(path.with_suffix(path.suffix + ".json"), "w") as fh:
            json.dump(sidecar, fh, indent=2)

    @classmethod
    def from_csv(cls, path) -> "StepResponse":
        path = Path(path)
        rows = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            rows = [[float(v) for v in row] for row in reader]
        data = np.array(rows)
        with open(path.with_suffix(path.suffix + ".json")) as fh:
            sidecar = json.load(fh)
        return cls(
            t=data[:, 0], y1=data[:, 1], y2=data[:, 2],
            r1=tuple(sidecar["r1"]), r2=tuple(sidecar["r2"]),
            window=sidecar["window"],
        )


def _forgive_short_excursions(out_of_band: np.ndarray, dt: float,
                              min_duration: float) -> np.ndarray:
    """Clear runs of out-of-band samples shorter than ``min_duration``."""
    if min_duration <= 0 or not out_of_band.any():
        return out_of_band
    kept = out_of_band.copy()
    n = kept.size
    start = None
    for i in range(n + 1):
        inside_run = i < n and kept[i]
        if inside_run and start is None:
            start = i
        elif not inside_run and start is not None:
            if (i - start) * dt < min_duration:
                kept[start:i] = False
            start = None
    return kept


def _single_output_features(t, y, r_start, r_final, window, tol):
    dr = r_final - r_start
    if dr == 0.0:
        raise DegenerateStepError("step reference magnitude is zero")
    if dr < 0:  # mirror falling steps so metrics stay nonnegative
        y, r_start, r_final, dr = -y, -r_start, -r_final, -dr

    n = y.size
    tail = y[n - max(1, n // 10):]
    y_ss = float(tail.mean())

    overshoot = max(0.0, (float(y.max()) - y_ss) / dr)
    undershoot = max(0.0, (float(y[0]) - float(y.min())) / dr)
    ss_error = abs(y_ss - r_final) / dr

    band = tol.settle_frac * abs(y_ss - float(y[0])) + tol.noise_band * dr
    deviation = np.abs(y - y_ss)
    out = deviation > band
    dt = float(t[1] - t[0])
    out = _forgive_short_excursions(out, dt, tol.excursion_frac * window)
    if not out.any():
        settling = (float(t[1]) - float(t[0])) / window  # in band from the start
    else:
        last_out = int(np.nonzero(out)[0][-1])
        if last_out + 1 >= n:
            settling = 1.0  # never settles within the window: capped
        else:
            # locate the band crossing between the last out-of-band sample
            # and its in-band successor
            drop = deviation[last_out] - deviation[last_out + 1]
            frac = (deviation[last_out] - band) / drop if drop > 0 else 1.0
            instant = float(t[last_out]) + min(max(frac, 0.0), 1.0) * dt
            settling = max((instant - float(t[0])) / window, dt / window)
    return overshoot, undershoot, settling, ss_error


def extract_features(resp: StepResponse,
                     tol: ToleranceConfig = DEFAULT_TOLERANCE) -> np.ndarray:
    """Feature 8-vector of a two-output step response."""
    f1 = _single_output_features(resp.t, resp.y1, resp.r1[0], resp.r1[1],
                                 resp.window, tol)
    f2 = _single_output_features(resp.t, resp.y2, resp.r2[0], resp.r2[1],
                                 resp.window, tol)
    return np.array(f1 + f2)


class StepFeatureExtractor(TransformerMixin, BaseEstimator):
    """Transformer mapping step responses to rows of the feature matrix."""

    def __init__(self, tol: ToleranceConfig = DEFAULT_TOLERANCE):
        self.tol = tol

    def fit(self, X, y=None):
        return self

    def transform(self, X) -> np.ndarray:
        return np.array([extract_features(resp, self.tol) for resp in X])


class FeatureScaler(TransformerMixin, BaseEstimator):
    """Per-feature standardization with an explicit zero-scale contract.

    ``fit`` computes mean and standard deviation per column; columns that are
    constant in the training data get scale 1 so the transform stays total.
    Explicitly supplied stats must have strictly positive scales.
    """

    def __init__(self, mean=None, scale=None):
        self.mean = mean
        self.scale = scale

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        self.mean_ = X.mean(axis=0)
        std = X.std(axis=0)
        std[std < 1e-12] = 1.0
        self.scale_ = std
        return self

    def _stats(self):
        if self.mean is not None and self.scale is not None:
            mean = np.asarray(self.mean, dtype=float)
            scale = np.asarray(self.scale, dtype=float)
        elif hasattr(self, "mean_"):
            mean, scale = self.mean_, self.scale_
        else:
            raise ValueError("FeatureScaler is not fitted and has no explicit stats")
        if np.any(scale <= 0):
            raise ValueError("feature scale must be strictly positive")
        return mean, scale

    def transform(self, X) -> np.ndarray:
        mean, scale = self._stats()
        return (np.asarray(X, dtype=float) - mean) / scale

    def inverse_transform(self, X) -> np.ndarray:
        mean, scale = self._stats()
        return np.asarray(X, dtype=float) * scale + mean

    def to_dict(self) -> dict:
        mean, scale = self._stats()
        return {"mean": mean.tolist(), "scale": scale.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureScaler":
        scaler = cls()
        scaler.mean_ = np.asarray(data["mean"], dtype=float)
        scaler.scale_ = np.asarray(data["scale"], dtype=float)
        return scaler


def normalize_features(fv, scaler: FeatureScaler) -> np.ndarray:
    """Standardize one feature vector with training-split statistics."""
    return scaler.transform(np.asarray(fv, dtype=float).reshape(1, -1))[0]


def denormalize_features(fv, scaler: FeatureScaler) -> np.ndarray:
    return scaler.inverse_transform(np.asarray(fv, dtype=float).reshape(1, -1))[0]
