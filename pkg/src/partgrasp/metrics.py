"""Grounding and grasping metrics."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .errors import EmptyResults, LengthMismatch


def iou(pred, truth) -> float:
    """Intersection over union of two boolean masks; 1.0 when both are empty."""
    p = np.asarray(pred, dtype=bool)
    t = np.asarray(truth, dtype=bool)
    if p.shape != t.shape:
        raise LengthMismatch(f"mask lengths differ: {p.shape} vs {t.shape}")
    union = np.count_nonzero(p | t)
    if union == 0:
        return 1.0
    return np.count_nonzero(p & t) / union


class GroundingResult(NamedTuple):
    pred: np.ndarray
    truth: np.ndarray
    part_class: str
    object_class: str


@dataclass(frozen=True)
class GroundingMetrics:
    accuracy: float
    part_avg_iou: float
    object_avg_iou: float
    instance_avg_iou: float
    n: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def _class_mean(values: list[float], keys: list[str]) -> float:
    groups: dict[str, list[float]] = defaultdict(list)
    for v, k in zip(values, keys):
        groups[k].append(v)
    return float(np.mean([np.mean(groups[k]) for k in sorted(groups)]))


def grounding_metrics(results) -> GroundingMetrics:
    """Per-point accuracy (micro) plus IoU averaged per part class, per object class and per sample.

    Part and object averages first take the mean IoU within each class and
    then average over the classes that have samples.
    """
    results = [GroundingResult(*r) for r in results]
    if not results:
        raise EmptyResults("no grounding results")
    ious, correct, total = [], 0, 0
    for r in results:
        p = np.asarray(r.pred, dtype=bool)
        t = np.asarray(r.truth, dtype=bool)
        ious.append(iou(p, t))
        correct += int(np.count_nonzero(p == t))
        total += len(p)
    return GroundingMetrics(
        accuracy=correct / total if total else 1.0,
        part_avg_iou=_class_mean(ious, [r.part_class for r in results]),
        object_avg_iou=_class_mean(ious, [r.object_class for r in results]),
        instance_avg_iou=float(np.mean(ious)),
        n=len(results),
    )


class TrialOutcome(NamedTuple):
    part_correct: bool
    exec_success: bool
    trials_used: int
    error: str | None = None


@dataclass(frozen=True)
class GraspMetrics:
    part_specific_sr: float
    part_agnostic_sr: float
    trial_cost: float
    n: int
    failures: int = 0
    relative_increase: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def grasp_metrics(outcomes) -> GraspMetrics:
    """Success rates over all trials (sampler errors count as failed trials)."""
    outcomes = [TrialOutcome(*o) for o in outcomes]
    if not outcomes:
        raise EmptyResults("no grasp trials")
    n = len(outcomes)
    spec = sum(o.part_correct and o.exec_success for o in outcomes) / n
    agn = sum(o.exec_success for o in outcomes) / n
    ran = [o.trials_used for o in outcomes if o.trials_used > 0]
    cost = float(np.mean(ran)) if ran else 0.0
    return GraspMetrics(spec, agn, cost, n, sum(o.error is not None for o in outcomes))


def relative_increase(sr_selected: float, sr_random: float) -> float:
    """Difference in success rate between a selection policy and random selection."""
    return float(sr_selected - sr_random)
