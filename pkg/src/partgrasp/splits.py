"""Train/val/test splits over (object, part) samples.

Modes
-----
object-wise
    Object instances are the unit; every category is spread across the
    splits in the requested ratios.
part-wise
    Part classes are the unit; every sample of a part class lands in the
    same split.
related
    Test categories never appear in training, yet every test part name is
    seen in training on other categories (compositional generalization).
non_related
    Test categories share neither category nor part name with training.

Category-level modes assign every category to one side unless
``train_categories`` restricts the training side, in which case categories
outside both lists are left out.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, InfeasibleSplit

SPLIT_MODES = ("object-wise", "part-wise", "related", "non_related")


class SampleKey(NamedTuple):
    object_id: str
    category: str
    part: str


@dataclass(frozen=True)
class SplitSpec:
    mode: str = "object-wise"
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0
    test_categories: tuple[str, ...] | None = None
    train_categories: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.mode not in SPLIT_MODES:
            raise ConfigError(f"unknown split mode {self.mode!r}")
        if len(self.ratios) != 3 or min(self.ratios) < 0 or abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ConfigError("ratios must be three non-negative numbers summing to 1")


@dataclass
class Split:
    train: list[SampleKey] = field(default_factory=list)
    val: list[SampleKey] = field(default_factory=list)
    test: list[SampleKey] = field(default_factory=list)

    def parts(self) -> dict[str, list[SampleKey]]:
        return {"train": self.train, "val": self.val, "test": self.test}

    def digest(self) -> str:
        payload = {k: [list(s) for s in v] for k, v in self.parts().items()}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def _allocate(n_items: int, ratios) -> list[int]:
    """Split index for each position: the split furthest below its quota takes the next item."""
    counts = np.zeros(3)
    target = np.asarray(ratios, dtype=np.float64)
    out = []
    for t in range(1, n_items + 1):
        k = int(np.argmax(target * t - counts))
        counts[k] += 1
        out.append(k)
    return out


def _interleave(groups: dict[str, list], rng: np.random.Generator) -> list:
    """Round-robin over shuffled groups so every prefix is close to stratified."""
    pools = {k: [g[i] for i in rng.permutation(len(g))] for k, g in sorted(groups.items())}
    out = []
    while any(pools.values()):
        for k in sorted(pools):
            if pools[k]:
                out.append(pools[k].pop(0))
    return out


def _object_wise(samples: list[SampleKey], spec: SplitSpec) -> Split:
    rng = np.random.default_rng(spec.seed)
    objects: dict[str, list[str]] = {}
    for s in samples:
        objects.setdefault(s.category, [])
        if s.object_id not in objects[s.category]:
            objects[s.category].append(s.object_id)
    order = _interleave(objects, rng)
    where = dict(zip(order, _allocate(len(order), spec.ratios)))
    split = Split()
    dest = (split.train, split.val, split.test)
    for s in samples:
        dest[where[s.object_id]].append(s)
    return split


def _part_wise(samples: list[SampleKey], spec: SplitSpec) -> Split:
    rng = np.random.default_rng(spec.seed)
    sizes: dict[str, int] = {}
    for s in samples:
        sizes[s.part] = sizes.get(s.part, 0) + 1
    names = sorted(sizes)
    names = [names[i] for i in rng.permutation(len(names))]
    names.sort(key=lambda p: -sizes[p])        # stable: ties keep the seeded order
    target = np.asarray(spec.ratios) * len(samples)
    counts = np.zeros(3)
    where = {}
    for p in names:
        k = int(np.argmax(target - counts))
        where[p] = k
        counts[k] += sizes[p]
    split = Split()
    dest = (split.train, split.val, split.test)
    for s in samples:
        dest[where[s.part]].append(s)
    return split


def _category_parts(samples: list[SampleKey]) -> dict[str, set[str]]:
    out: dict[str, set[str]] = {}
    for s in samples:
        out.setdefault(s.category, set()).add(s.part)
    return out


def _part_component(parts: dict[str, set[str]], seeds: tuple[str, ...]) -> tuple[str, ...]:
    """Categories reachable from ``seeds`` through shared part names."""
    found = set(seeds)
    frontier = list(seeds)
    while frontier:
        c = frontier.pop()
        for other, names in parts.items():
            if other not in found and names & parts[c]:
                found.add(other)
                frontier.append(other)
    return tuple(sorted(found))


def _by_category(samples: list[SampleKey], spec: SplitSpec, related: bool) -> Split:
    """Category-level split; every category lands on exactly one side.

    related: the test categories are fixed and all others train, provided the
    training side covers every test part name. non_related: the test side is
    closed under shared part names, so it grows to the whole part-sharing
    component of the requested categories.
    """
    parts = _category_parts(samples)
    cats = sorted(parts)
    rng = np.random.default_rng(spec.seed)

    def sides(test: tuple[str, ...]) -> tuple[list[str], tuple[str, ...]] | None:
        if not related:
            test = _part_component(parts, test)
        train = [c for c in cats if c not in test]
        if spec.train_categories is not None:
            train = [c for c in train if c in spec.train_categories]
        if not train:
            return None
        test_parts = set().union(*(parts[c] for c in test))
        train_parts = set().union(*(parts[c] for c in train))
        if related and not test_parts <= train_parts:
            return None
        if not related and train_parts & test_parts:
            return None
        return train, test

    if spec.test_categories is not None:
        missing = [c for c in spec.test_categories if c not in parts]
        if missing:
            raise InfeasibleSplit(f"test categories absent from the dataset: {missing}")
        found = sides(tuple(spec.test_categories))
    else:
        found = None
        for i in rng.permutation(len(cats)):
            found = sides((cats[i],))
            if found:
                break
    if not found:
        kind = "related" if related else "non_related"
        raise InfeasibleSplit(f"no {kind} split exists for categories {cats}")
    train, test = found

    split = Split()
    train_objects = sorted({s.object_id for s in samples if s.category in train})
    train_objects = [train_objects[i] for i in rng.permutation(len(train_objects))]
    tr, va = spec.ratios[0], spec.ratios[1]
    val_share = va / (tr + va) if tr + va > 0 else 0.0
    n_val = int(round(val_share * len(train_objects)))
    val_objects = set(train_objects[:n_val])
    for s in samples:
        if s.category in test:
            split.test.append(s)
        elif s.category in train:
            (split.val if s.object_id in val_objects else split.train).append(s)
    return split


def make_splits(samples, spec: SplitSpec) -> Split:
    samples = sorted(SampleKey(*s) for s in samples)
    if not samples:
        raise InfeasibleSplit("empty dataset")
    if spec.mode == "object-wise":
        return _object_wise(samples, spec)
    if spec.mode == "part-wise":
        return _part_wise(samples, spec)
    return _by_category(samples, spec, related=spec.mode == "related")
