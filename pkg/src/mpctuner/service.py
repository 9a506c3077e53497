"""HTTP labeling service: queue trajectories, collect grades, order by value.

The store keeps every queued trajectory in memory and appends accepted labels
to a line-delimited JSON dataset file (append-only; rewrites never happen).
The queue is ordered by an active-learning acquisition score: the variance of
an ensemble of surrogate networks trained on bootstrap resamples of the
labeled data, so the grader always sees the trajectory the current models
disagree on most.  Ties fall back to insertion order.

Endpoints (JSON payloads):

    GET  /queue/next      next pending item + trajectory samples
    POST /labels          {"id": ..., "grade": 0..10}
    GET  /dataset/export  dataset snapshot, one record per line
    GET  /progress        {"labeled": n, "pending": m}
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from pydantic import BaseModel

from .features import StepResponse, extract_features
from .surrogate import (GRADE_SCALE, CostSurrogate, LabeledSample, grade_to_cost,
                        load_samples)


class LabelRequest(BaseModel):
    id: str
    grade: float


@dataclass
class QueueItem:
    trajectory_id: str
    response: StepResponse
    features: np.ndarray
    score: float = 0.0
    status: str = "pending"
    order: int = 0
    grade: float | None = None

    def payload(self) -> dict:
        samples = [
            [float(t), float(y1), float(y2), float(self.response.r1[1]),
             float(self.response.r2[1])]
            for t, y1, y2 in zip(self.response.t, self.response.y1,
                                 self.response.y2)
        ]
        return {
            "id": self.trajectory_id,
            "features": self.features.tolist(),
            "score": self.score,
            "window": self.response.window,
            "r1": list(self.response.r1),
            "r2": list(self.response.r2),
            "samples": samples,
        }


class EnsembleAcquisition:
    """Disagreement score from surrogates fit on bootstrap resamples."""

    def __init__(self, n_members: int = 5, seed: int = 0, epochs: int = 60,
                 min_samples: int = 8):
        if n_members < 2:
            raise ValueError("an ensemble needs at least 2 members for a variance")
        self.n_members = n_members
        self.seed = seed
        self.epochs = epochs
        self.min_samples = min_samples
        self.members: list[CostSurrogate] = []
        self._mean = np.zeros(8)
        self._scale = np.ones(8)

    def fit(self, samples) -> None:
        if len(samples) < self.min_samples:
            return
        X = np.array([s.features for s in samples])
        y = np.array([grade_to_cost(s.grade) for s in samples])
        self._mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale < 1e-12] = 1.0
        self._scale = scale
        Xn = (X - self._mean) / self._scale
        rng = np.random.default_rng(self.seed)
        members = []
        for k in range(self.n_members):
            pick = rng.integers(0, len(samples), size=len(samples))
            member = CostSurrogate(seed=self.seed + k, epochs=self.epochs,
                                   patience=self.epochs,
                                   validation_fraction=0.0)
            member.fit(Xn[pick], y[pick])
            members.append(member)
        self.members = members

    def score(self, features) -> float:
        if not self.members:
            return 0.0
        x = ((np.asarray(features, dtype=float) - self._mean) / self._scale)
        preds = [float(m.predict(x.reshape(1, -1))[0]) for m in self.members]
        return float(np.var(preds))


class LabelingStore:
    """Thread-safe queue plus append-only dataset log."""

    def __init__(self, dataset_path, *, acquisition=None, retrain_every: int = 25,
                 seed_samples=None):
        self.dataset_path = Path(dataset_path)
        self.acquisition = acquisition
        self.retrain_every = retrain_every
        self._items: dict[str, QueueItem] = {}
        self._lock = threading.Lock()
        self._accepted = 0
        self.retrain_count = 0
        self._seed_samples = list(seed_samples) if seed_samples else []
        if self.acquisition is not None and self._seed_samples:
            self.acquisition.fit(self._seed_samples)
        if not self.dataset_path.exists():
            self.dataset_path.parent.mkdir(parents=True, exist_ok=True)
            self.dataset_path.touch()

    # -- queue ---------------------------------------------------------

    def enqueue(self, entries) -> int:
        """Add (trajectory_id, StepResponse) pairs as pending items."""
        with self._lock:
            prepared = []
            for trajectory_id, response in entries:
                if trajectory_id in self._items:
                    raise KeyError(f"duplicate trajectory id {trajectory_id!r}")
                features = extract_features(response)
                score = (self.acquisition.score(features)
                         if self.acquisition is not None else 0.0)
                prepared.append(QueueItem(
                    trajectory_id=trajectory_id, response=response,
                    features=features, score=score, order=len(self._items) + len(prepared),
                ))
            for item in prepared:
                self._items[item.trajectory_id] = item
            return len(self._items)

    def next_unlabeled(self) -> QueueItem | None:
        """Pending item with the largest acquisition score (ties: oldest)."""
        with self._lock:
            pending = [it for it in self._items.values() if it.status == "pending"]
            if not pending:
                return None
            return min(pending, key=lambda it: (-it.score, it.order))

    def queue_order(self) -> list[str]:
        with self._lock:
            pending = [it for it in self._items.values() if it.status == "pending"]
            pending.sort(key=lambda it: (-it.score, it.order))
            return [it.trajectory_id for it in pending]

    # -- labels --------------------------------------------------------

    def submit_label(self, trajectory_id: str, grade: float) -> LabeledSample:
        grade = float(grade)
        if not np.isfinite(grade) or not 0.0 <= grade <= GRADE_SCALE:
            raise ValueError(f"grade {grade!r} outside [0, {GRADE_SCALE:g}]")
        with self._lock:
            item = self._items.get(trajectory_id)
            if item is None:
                raise KeyError(f"unknown trajectory id {trajectory_id!r}")
            if item.status == "labeled":
                raise FileExistsError(f"{trajectory_id!r} already labeled")
            sample = LabeledSample(
                trajectory_id=trajectory_id, features=item.features,
                grade=grade, source="human",
            )
            with open(self.dataset_path, "a") as fh:
                fh.write(json.dumps(sample.to_record()) + "\n")
            item.status = "labeled"
            item.grade = grade
            self._accepted += 1
            retrain = (self.acquisition is not None and self.retrain_every > 0
                       and self._accepted % self.retrain_every == 0)
        if retrain:
            self._retrain()
        return sample

    def _retrain(self) -> None:
        human = load_samples(self.dataset_path)
        self.acquisition.fit(self._seed_samples + human)
        with self._lock:
            self.retrain_count += 1
            for item in self._items.values():
                if item.status == "pending":
                    item.score = self.acquisition.score(item.features)

    def skip(self, trajectory_id: str) -> None:
        with self._lock:
            item = self._items.get(trajectory_id)
            if item is None:
                raise KeyError(f"unknown trajectory id {trajectory_id!r}")
            if item.status != "pending":
                raise FileExistsError(f"{trajectory_id!r} is not pending")
            item.status = "skipped"

    # -- export --------------------------------------------------------

    def export_dataset(self) -> str:
        with self._lock:
            return self.dataset_path.read_text()

    def progress(self) -> dict:
        with self._lock:
            labeled = sum(1 for it in self._items.values() if it.status == "labeled")
            pending = sum(1 for it in self._items.values() if it.status == "pending")
            return {"labeled": labeled, "pending": pending,
                    "retrain_count": self.retrain_count}


def create_app(store: LabelingStore):
    """FastAPI application over a labeling store."""
    from fastapi import FastAPI, HTTPException
    from fastapi.middleware.cors import CORSMiddleware
    from fastapi.responses import PlainTextResponse

    app = FastAPI(title="trajectory labeling service")
    # the grading UI is typically served from a different origin
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])
    app.state.store = store

    @app.get("/queue/next")
    def queue_next():
        item = store.next_unlabeled()
        if item is None:
            return {"empty": True}
        return {"empty": False, "item": item.payload()}

    @app.post("/labels")
    def post_label(req: LabelRequest):
        try:
            sample = store.submit_label(req.id, req.grade)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except FileExistsError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return {"accepted": True, "record": sample.to_record()}

    @app.get("/dataset/export", response_class=PlainTextResponse)
    def export():
        return store.export_dataset()

    @app.get("/progress")
    def progress():
        return store.progress()

    return app


def load_trajectory_dir(path) -> list[tuple[str, StepResponse]]:
    """All CSV step responses in a directory, sorted by filename."""
    path = Path(path)
    entries = []
    for csv_path in sorted(path.glob("*.csv")):
        entries.append((csv_path.stem, StepResponse.from_csv(csv_path)))
    return entries
