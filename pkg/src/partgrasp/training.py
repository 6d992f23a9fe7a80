"""Dataset-level training inputs for the grounder and the learned scorer."""
from __future__ import annotations

import zlib
from typing import NamedTuple

import numpy as np

from .dataset import ObjectData
from .grasp import HandConfig
from .grounding import GrounderTrainConfig, GroundingSample, TrainedGrounder, make_sample, train_grounder
from .pipeline import Scene, prepare_scene
from .scoring import LearnedScorer, ScorerTrainConfig, candidate_labels, grasp_features, train_scorer


class GroundingCase(NamedTuple):
    sample: GroundingSample
    object_id: str
    category: str
    part_id: str
    mode: str
    text: str


def scene_seed(object_id: str, placement: int) -> int:
    return zlib.crc32(f"{object_id}/{placement}".encode())


def object_scene(obj: ObjectData, placement: int = 0) -> Scene:
    return prepare_scene(obj.views(placement), seed=scene_seed(obj.object_id, placement))


def grounding_cases(objects: list[ObjectData], modes, placement: int = 0,
                    parts: set[tuple[str, str]] | None = None) -> list[GroundingCase]:
    """One case per stored sentence in ``modes``, grounded on the merged view cloud.

    ``parts`` restricts to (object_id, part) pairs, e.g. the members of a split.
    """
    out = []
    for obj in objects:
        cloud = object_scene(obj, placement).ground_cloud
        for s in obj.sentences:
            if s.mode not in modes or (parts is not None and (obj.object_id, s.part_id) not in parts):
                continue
            truth = cloud.labels == obj.part_names.index(s.part_id)
            out.append(GroundingCase(make_sample(cloud, s.text, truth, n=0), obj.object_id, obj.category,
                                     s.part_id, s.mode, s.text))
    return out


def fit_grounder(cases: list[GroundingCase], config: GrounderTrainConfig = GrounderTrainConfig(),
                 seed: int = 0) -> tuple[TrainedGrounder, list[float]]:
    return train_grounder([c.sample for c in cases], config, seed)


def scorer_dataset(objects: list[ObjectData], hand: HandConfig = HandConfig(),
                   placement: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """In-hand features of the stored grasp sets, seen through the merged partial views."""
    feats, labels = [], []
    for obj in objects:
        scene = object_scene(obj, placement)
        for _, gs in sorted(obj.grasp_sets.items()):
            for c in gs.candidates:
                feats.append(grasp_features(c, scene.cloud, scene.normals, hand, scene.index))
            labels.append(candidate_labels(gs.candidates))
    if not feats:
        return np.zeros((0, 0)), np.zeros(0)
    return np.vstack(feats), np.concatenate(labels)


def fit_scorer(objects: list[ObjectData], hand: HandConfig = HandConfig(),
               config: ScorerTrainConfig = ScorerTrainConfig(), seed: int = 0,
               placement: int = 0) -> tuple[LearnedScorer, list[float]]:
    x, y = scorer_dataset(objects, hand, placement)
    return train_scorer(x, y, config, seed)
