"""Scene preparation and the ground -> sample -> score -> select chain."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import EmptyRegion
from .geometry import (LabeledCloud, SpatialIndex, estimate_normals, fps_downsample, icp_register,
                       merge_clouds, voxel_downsample)
from .grasp import GraspCandidate, HandConfig, SamplerRules, sample_antipodal, select_grasp
from .grounding import N_GROUND_POINTS, RegionMask
from .scoring import Scorer, score_candidates

VOXEL = 0.002
NORMAL_K = 12
MERGE_CORRESPONDENCE = 0.01


@dataclass(frozen=True, eq=False)
class Scene:
    cloud: LabeledCloud          # dense sampling cloud
    normals: np.ndarray
    index: SpatialIndex
    ground_cloud: LabeledCloud   # fixed-size cloud handed to the grounder
    ground_to_cloud: np.ndarray  # nearest grounding point for every sampling point


def register_views(views: list[LabeledCloud], max_iter: int = 30) -> list[LabeledCloud]:
    """Align every view onto the first with trimmed point-to-point ICP."""
    out = [views[0]]
    for v in views[1:]:
        reg = icp_register(v.points, views[0].points, max_iter, 1e-10, MERGE_CORRESPONDENCE)
        out.append(v.transformed(reg.pose))
    return out


def prepare_scene(views: list[LabeledCloud], register: bool = False, voxel: float = VOXEL,
                  n_ground: int = N_GROUND_POINTS, seed: int = 0) -> Scene:
    if register and len(views) > 1:
        views = register_views(views)
    merged = merge_clouds(list(views))
    cloud = voxel_downsample(merged, voxel)
    normals = estimate_normals(cloud.points, min(NORMAL_K, len(cloud) - 1), cloud.sensor_origins())
    index = SpatialIndex(cloud.points)
    ground_cloud = fps_downsample(cloud, n_ground, seed)
    _, nn = SpatialIndex(ground_cloud.points).nearest(cloud.points)
    return Scene(cloud, normals, index, ground_cloud, nn)


def lift_mask(scene: Scene, region: RegionMask) -> np.ndarray:
    """Carry a mask on the grounding cloud over to the sampling cloud by nearest neighbour."""
    return region.mask[scene.ground_to_cloud]


class PlanResult(NamedTuple):
    candidate: GraspCandidate
    score: float
    index: int
    candidates: list[GraspCandidate]
    scores: np.ndarray
    trials_used: int


def plan_grasp(scene: Scene, region_mask: np.ndarray, hand: HandConfig, rules: SamplerRules,
               scorer: Scorer | None = None, policy: str = "highest-score", seed: int = 0) -> PlanResult:
    if not np.any(region_mask):
        raise EmptyRegion("grounded region is empty")
    rng = np.random.default_rng(seed)
    sample_seed, select_seed = (int(s) for s in rng.integers(2**62, size=2))
    res = sample_antipodal(scene.cloud, scene.normals, region_mask, hand, rules, sample_seed, scene.index)
    scores = score_candidates(res.candidates, scene.cloud, scene.normals, hand, scorer, scene.index)
    k = select_grasp(res.candidates, scores, policy, select_seed)
    return PlanResult(res.candidates[k], float(scores[k]), k, res.candidates, scores, res.trials_used)
