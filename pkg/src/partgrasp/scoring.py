"""Grasp candidate scorers: analytic closure margin and a learned classifier.

The learned scorer sees the approach direction concatenated with summary
statistics of the in-hand cloud (points inside the closing region, in
gripper coordinates) and predicts the probability of success.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Protocol

import numpy as np

from .errors import MissingModel, ShapeMismatch
from .geometry import LabeledCloud, SpatialIndex
from .grasp import SUCCESS, GraspCandidate, HandConfig, analytic_quality
from .mlp import MLP, Adam, Standardizer

CONTACT_K = 5
N_GRASP_FEATURES = 17


class Scorer(Protocol):
    def score(self, candidates: list[GraspCandidate], cloud: LabeledCloud, normals,
              hand: HandConfig, index: SpatialIndex | None = None) -> np.ndarray: ...


class AnalyticScorer:
    """Normalized force-closure margin; zero for grasps without closure."""

    def score(self, candidates, cloud, normals, hand, index: SpatialIndex | None = None) -> np.ndarray:
        index = index or SpatialIndex(cloud.points)
        return np.array([analytic_quality(c, index, normals, hand) for c in candidates])


def grasp_features(candidate: GraspCandidate, cloud: LabeledCloud, normals, hand: HandConfig,
                   index: SpatialIndex | None = None) -> np.ndarray:
    """Approach direction plus in-hand cloud statistics (17 values).

    approach (3), approach along the table normal, log point count, mean and
    std of gripper-frame coordinates scaled by the box half-extents (6), span
    along the closing axis over the aperture, and for each finger the mean
    alignment of the ``CONTACT_K`` outermost normals with the closing axis
    and their mean depth along the approach.
    """
    index = index or SpatialIndex(cloud.points)
    pose = candidate.pose
    half = np.array([hand.finger_depth, hand.max_aperture, hand.hand_height]) / 2
    idx = index.within(pose.position, float(np.linalg.norm(half)))
    local = pose.to_local(cloud.points[idx]) if len(idx) else np.zeros((0, 3))
    inside = np.all(np.abs(local) <= half, axis=1)
    local = local[inside]
    nrm = np.asarray(normals)[idx[inside]] @ pose.rotation if len(idx) else np.zeros((0, 3))
    f = np.zeros(N_GRASP_FEATURES)
    f[0:3] = pose.approach
    f[3] = float(pose.approach @ cloud.up)
    f[4] = np.log1p(len(local))
    if len(local):
        f[5:8] = local.mean(axis=0) / half
        f[8:11] = local.std(axis=0) / half
        f[11] = np.ptp(local[:, 1]) / hand.max_aperture
        order = np.argsort(local[:, 1])
        lo, hi = order[:CONTACT_K], order[-CONTACT_K:]
        # outward normals on the -y side should point to -y, on the +y side to +y
        f[12] = float(np.mean(-nrm[lo, 1]))
        f[13] = float(np.mean(nrm[hi, 1]))
        f[14] = float(np.mean(local[lo, 0]) / half[0])
        f[15] = float(np.mean(local[hi, 0]) / half[0])
        f[16] = float(np.mean(np.abs(nrm[:, 1])))
    return f


@dataclass(frozen=True)
class ScorerTrainConfig:
    epochs: int = 60
    batch_size: int = 64
    lr: float = 5e-3
    hidden: tuple[int, ...] = (64, 32)


@dataclass
class LearnedScorer:
    net: MLP
    scaler: Standardizer
    manifest: dict = field(default_factory=dict)

    def predict_features(self, feats) -> np.ndarray:
        return self.net.predict_proba(self.scaler(np.atleast_2d(feats)))

    def score(self, candidates, cloud, normals, hand, index: SpatialIndex | None = None) -> np.ndarray:
        index = index or SpatialIndex(cloud.points)
        feats = np.array([grasp_features(c, cloud, normals, hand, index) for c in candidates])
        return self.predict_features(feats)

    def to_json(self) -> dict:
        return {"version": "1", "kind": "learned-scorer", "scaler": self.scaler.to_json(),
                "net": self.net.to_json(), "manifest": self.manifest}

    @classmethod
    def from_json(cls, data: dict) -> LearnedScorer:
        if data.get("kind") != "learned-scorer":
            raise MissingModel("file does not hold a learned scorer")
        return cls(MLP.from_json(data["net"]), Standardizer.from_json(data["scaler"]), data.get("manifest", {}))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> LearnedScorer:
        try:
            with open(path) as fh:
                return cls.from_json(json.load(fh))
        except FileNotFoundError:
            raise MissingModel(f"no scorer model at {path}") from None


def train_scorer(features, labels, config: ScorerTrainConfig = ScorerTrainConfig(),
                 seed: int = 0) -> tuple[LearnedScorer, list[float]]:
    """Mini-batch Adam on binary cross-entropy; returns the model and per-epoch loss."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or len(x) != len(y) or len(x) == 0:
        raise ShapeMismatch("features must be a non-empty (n, d) array aligned with labels")
    rng = np.random.default_rng(seed)
    scaler = Standardizer.fit(x)
    xs = scaler(x)
    net = MLP((x.shape[1], *config.hidden, 1), seed=int(rng.integers(2**31)))
    opt = Adam(config.lr)
    curve = []
    for _ in range(config.epochs):
        order = rng.permutation(len(xs))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            b = order[start:start + config.batch_size]
            loss, grads = net.loss_and_grads(xs[b], y[b])
            opt.step(net.params, grads)
            total += loss * len(b)
        curve.append(total / len(xs))
    manifest = {"config": {**asdict(config), "hidden": list(config.hidden)}, "seed": seed, "n": len(xs)}
    return LearnedScorer(net, scaler, manifest), curve


def candidate_labels(candidates: list[GraspCandidate]) -> np.ndarray:
    return np.array([c.label == SUCCESS for c in candidates], dtype=np.float64)


def score_candidates(candidates: list[GraspCandidate], cloud: LabeledCloud, normals, hand: HandConfig,
                     scorer: Scorer | None = None, index: SpatialIndex | None = None) -> np.ndarray:
    if not candidates:
        raise ValueError("no candidates to score")
    scorer = scorer or AnalyticScorer()
    s = np.asarray(scorer.score(candidates, cloud, normals, hand, index=index), dtype=np.float64)
    return np.clip(s, 0.0, 1.0)
