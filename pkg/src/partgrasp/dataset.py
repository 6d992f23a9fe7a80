"""Per-object dataset generation and the on-disk layout.

``<root>/<category>/<object_id>/`` holds ``mesh.obj.json``, ``omni.ply``
(with normals), ``p{i}_v{j}.ply`` partial views, ``grasps.json``,
``sentences.json`` and ``manifest.json``. All randomness is derived from
the global seed, the category name and the object index, so objects can be
generated in any order or in parallel with identical results.
"""
from __future__ import annotations

import json
import logging
import os
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, UnknownCategory
from .geometry import LabeledCloud, RigidPose, SpatialIndex
from .grasp import GraspCandidate, GraspSet, HandConfig, build_grasp_set
from .language import MODES, Instruction, default_lexicon, generate_sentences
from .plyio import read_ply, write_ply
from .render import N_VIEWPOINTS, ObservationSet, build_observation_set
from .shapes import CATALOG, CATALOG_VERSION, PartMesh, Workspace, make_shape, resolve_params

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GenConfig:
    categories: tuple[str, ...] = ("mug", "table", "hammer", "lamp", "bag", "knife", "guitar", "pistol")
    objects_per_category: int = 20
    seed: int = 0
    placements: int = 3
    grasps_per_part: int = 60
    depth_jitter: float = 0.0
    modes: tuple[str, ...] = MODES

    def __post_init__(self):
        if not self.categories:
            raise ConfigError("no categories selected")
        unknown = [c for c in self.categories if c not in CATALOG]
        if unknown:
            raise UnknownCategory(f"unknown categories: {', '.join(unknown)}")
        if self.objects_per_category < 1 or self.placements < 1 or self.grasps_per_part < 0:
            raise ConfigError("objects_per_category and placements must be >= 1, grasps_per_part >= 0")
        bad = [m for m in self.modes if m not in MODES]
        if bad:
            raise ConfigError(f"unknown language modes: {', '.join(bad)}")


def object_seed(seed: int, category: str, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & (2**63 - 1), zlib.crc32(category.encode()), int(index)])


def object_id(category: str, index: int) -> str:
    return f"{category}-{index:04d}"


@dataclass
class ObjectData:
    object_id: str
    category: str
    params: dict
    mesh: PartMesh
    obs: ObservationSet
    grasp_sets: dict[int, GraspSet] = field(default_factory=dict)
    sentences: list[Instruction] = field(default_factory=list)
    seeds: dict = field(default_factory=dict)

    @property
    def part_names(self) -> tuple[str, ...]:
        return self.mesh.part_names

    def views(self, placement: int = 0) -> list[LabeledCloud]:
        return [self.obs.view(placement, v) for v in range(N_VIEWPOINTS)]


def generate_object(category: str, index: int, config: GenConfig, hand: HandConfig = HandConfig(),
                    workspace: Workspace | None = None, templates=None) -> ObjectData:
    if category not in CATALOG:
        raise UnknownCategory(f"unknown category {category!r}")
    ss = object_seed(config.seed, category, index)
    param_seed, obs_seed, grasp_seed, lang_seed = (int(s) for s in ss.generate_state(4, np.uint64) >> 2)
    params = resolve_params(category, seed=param_seed)
    mesh = make_shape(category, params)
    obs = build_observation_set(mesh, workspace, obs_seed, placements=config.placements,
                                depth_jitter=config.depth_jitter)
    data = ObjectData(object_id(category, index), category, params, mesh, obs,
                      seeds={"params": param_seed, "observations": obs_seed, "grasps": grasp_seed,
                             "sentences": lang_seed, **obs.seeds})
    if config.grasps_per_part:
        index_ = SpatialIndex(obs.omni.points)
        g_seeds = np.random.SeedSequence(grasp_seed).generate_state(len(mesh.part_names), np.uint64) >> 2
        for label in range(len(mesh.part_names)):
            data.grasp_sets[label] = build_grasp_set(obs.omni, obs.omni_normals, label, hand,
                                                     config.grasps_per_part, int(g_seeds[label]),
                                                     index=index_)
    lex = default_lexicon()
    l_rng = np.random.default_rng(lang_seed)
    for part in mesh.part_names:
        affs = lex.affordances_for(category, part)
        aff = affs[int(l_rng.integers(len(affs)))]
        data.sentences.extend(generate_sentences(category, part, aff, config.modes,
                                                 int(l_rng.integers(2**62)), lex, templates))
    return data


# ------------------------------------------------------------ writing / reading

def _dump(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_object(root, data: ObjectData) -> Path:
    d = Path(root) / data.category / data.object_id
    d.mkdir(parents=True, exist_ok=True)
    _dump(d / "mesh.obj.json", data.mesh.to_json())
    write_ply(d / "omni.ply", data.obs.omni, normals=data.obs.omni_normals)
    for p in range(len(data.obs.placements)):
        for v in range(N_VIEWPOINTS):
            write_ply(d / f"p{p}_v{v}.ply", data.obs.view(p, v))
    grasps = []
    counts = {}
    for label, gs in sorted(data.grasp_sets.items()):
        counts[data.part_names[label]] = len(gs.candidates)
        for c in gs.candidates:
            grasps.append({**c.to_json(), "seed": gs.seed, "trials_used": gs.attempts})
    _dump(d / "grasps.json", grasps)
    _dump(d / "sentences.json", [s.to_json() for s in data.sentences])
    manifest = {
        "object_id": data.object_id,
        "category": data.category,
        "catalog_version": CATALOG_VERSION,
        "lexicon_version": default_lexicon().version,
        "params": data.params,
        "part_names": list(data.part_names),
        "seeds": data.seeds,
        "placements": [p.to_list() for p in data.obs.placements],
        "observations": {"omni": len(data.obs.omni), "views": [len(v) for v in data.obs.views]},
        "grasp_counts": counts,
        "grasp_notes": {data.part_names[k]: gs.notes for k, gs in sorted(data.grasp_sets.items()) if gs.notes},
    }
    _dump(d / "manifest.json", manifest)
    return d


def read_object(path) -> ObjectData:
    d = Path(path)
    with open(d / "manifest.json") as fh:
        man = json.load(fh)
    with open(d / "mesh.obj.json") as fh:
        mesh = PartMesh.from_json(json.load(fh))
    omni, extras = read_ply(d / "omni.ply")
    n_place = len(man["placements"])
    views = tuple(read_ply(d / f"p{p}_v{v}.ply")[0] for p in range(n_place) for v in range(N_VIEWPOINTS))
    obs = ObservationSet(omni, extras["normals"], views,
                         tuple(RigidPose.from_list(p) for p in man["placements"]), man["seeds"])
    data = ObjectData(man["object_id"], man["category"], man["params"], mesh, obs, seeds=man["seeds"])
    with open(d / "grasps.json") as fh:
        grasps = json.load(fh)
    by_label: dict[int, list[GraspCandidate]] = {}
    meta: dict[int, tuple[int, int]] = {}
    for g in grasps:
        c = GraspCandidate.from_json(g)
        by_label.setdefault(c.part_label, []).append(c)
        meta[c.part_label] = (g["seed"], g["trials_used"])
    for label, cands in by_label.items():
        seed, attempts = meta[label]
        data.grasp_sets[label] = GraspSet(cands, label, attempts, seed, len(cands))
    with open(d / "sentences.json") as fh:
        data.sentences = [Instruction.from_json(s) for s in json.load(fh)]
    return data


def list_objects(root) -> list[Path]:
    """Object directories under ``root`` in sorted order."""
    root = Path(root)
    out = []
    for cat in sorted(p for p in root.iterdir() if p.is_dir()):
        out.extend(sorted(p for p in cat.iterdir() if (p / "manifest.json").exists()))
    return out


def write_dataset_manifest(root, config: GenConfig, object_ids: list[str]) -> None:
    _dump(Path(root) / "manifest.json", {
        "catalog_version": CATALOG_VERSION,
        "lexicon_version": default_lexicon().version,
        "config": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(config).items()},
        "objects": sorted(object_ids),
    })


def default_root() -> str | None:
    return os.environ.get("PARTGRASP_DATA")
