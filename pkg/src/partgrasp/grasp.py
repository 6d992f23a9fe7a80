"""Region-constrained antipodal sampling, in-hand clipping, analytic labeling
and per-part grasp-set construction for a parallel-jaw gripper.

Gripper frame: origin at the grasp center between the fingertips, x along
the approach (toward the object), y along the closing line, z = x cross y.
The closing region is the box ``finger_depth x max_aperture x hand_height``
centred on the origin; the two fingers sit just outside it in y and the palm
sits behind it in -x.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import wrench
from .errors import EmptyRegion, NoCandidates, PartTooSmall
from .geometry import LabeledCloud, RigidPose, SpatialIndex

log = logging.getLogger(__name__)

SUCCESS, FAILURE, UNLABELED = "success", "failure", "unlabeled"
REGION_EPS = 0.005


@dataclass(frozen=True)
class HandConfig:
    max_aperture: float = 0.085
    finger_depth: float = 0.04
    finger_width: float = 0.01
    hand_height: float = 0.02
    friction_mu: float = 0.5

    def __post_init__(self):
        if min(self.max_aperture, self.finger_depth, self.finger_width, self.hand_height) <= 0:
            raise ValueError("hand dimensions must be positive")
        if not 0 < self.friction_mu <= 2:
            raise ValueError("friction_mu must lie in (0, 2]")

    @property
    def cone_angle(self) -> float:
        return float(np.arctan(self.friction_mu))

    @property
    def reach(self) -> float:
        """Radius of a ball around the grasp center enclosing the whole hand."""
        dx = self.finger_depth / 2 + self.finger_width
        dy = self.max_aperture / 2 + self.finger_width
        return float(np.sqrt(dx * dx + dy * dy + (self.hand_height / 2) ** 2))


@dataclass(frozen=True)
class SamplerRules:
    max_trials: int = 150
    target: int = 20
    approach_tries: int = 8
    region_eps: float = REGION_EPS

    def __post_init__(self):
        if min(self.max_trials, self.target, self.approach_tries) < 1:
            raise ValueError("max_trials, target and approach_tries must be at least 1")
        if self.region_eps <= 0:
            raise ValueError("region_eps must be positive")


@dataclass(frozen=True, eq=False)
class GraspPose:
    position: np.ndarray
    rotation: np.ndarray      # columns: approach, closing, axis

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64).reshape(3))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))

    @classmethod
    def from_vectors(cls, position, approach, closing) -> GraspPose:
        a = np.asarray(approach, float)
        c = np.asarray(closing, float)
        return cls(position, np.stack([a, c, np.cross(a, c)], axis=1))

    @property
    def approach(self) -> np.ndarray:
        return self.rotation[:, 0]

    @property
    def closing(self) -> np.ndarray:
        return self.rotation[:, 1]

    @property
    def axis(self) -> np.ndarray:
        return self.rotation[:, 2]

    def as_rigid(self) -> RigidPose:
        return RigidPose(self.rotation, self.position)

    def to_local(self, points) -> np.ndarray:
        return (np.asarray(points, float) - self.position) @ self.rotation

    def to_list(self) -> list[float]:
        return self.as_rigid().to_list()

    @classmethod
    def from_list(cls, values) -> GraspPose:
        r = RigidPose.from_list(values)
        return cls(r.translation, r.rotation)


@dataclass(frozen=True, eq=False)
class GraspCandidate:
    pose: GraspPose
    contact_left: np.ndarray
    contact_right: np.ndarray
    part_label: int
    quality: float = 0.0
    label: str = UNLABELED

    @property
    def gap(self) -> float:
        return float(np.linalg.norm(self.contact_right - self.contact_left))

    def to_json(self) -> dict:
        return {
            "pose": self.pose.to_list(),
            "contacts": [[float(v) for v in self.contact_left], [float(v) for v in self.contact_right]],
            "part_label": int(self.part_label),
            "quality": float(self.quality),
            "label": self.label,
        }

    @classmethod
    def from_json(cls, data: dict) -> GraspCandidate:
        left, right = data["contacts"]
        return cls(GraspPose.from_list(data["pose"]), np.asarray(left, float), np.asarray(right, float),
                   int(data["part_label"]), float(data["quality"]), data["label"])


class SampleResult(NamedTuple):
    candidates: list[GraspCandidate]
    trials_used: int


# ------------------------------------------------------------ hand geometry

def closing_box(hand: HandConfig) -> tuple[np.ndarray, np.ndarray]:
    half = np.array([hand.finger_depth, hand.max_aperture, hand.hand_height]) / 2
    return -half, half


def hand_boxes(hand: HandConfig) -> list[tuple[np.ndarray, np.ndarray]]:
    """Finger and palm boxes in the gripper frame."""
    d, a, w, h = hand.finger_depth / 2, hand.max_aperture / 2, hand.finger_width, hand.hand_height / 2
    return [
        (np.array([-d, a, -h]), np.array([d, a + w, h])),
        (np.array([-d, -a - w, -h]), np.array([d, -a, h])),
        (np.array([-d - w, -a - w, -h]), np.array([-d, a + w, h])),
    ]


def _inside(local: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    return np.all((local >= lo) & (local <= hi), axis=1)


def hand_collides(pose: GraspPose, points: np.ndarray, hand: HandConfig) -> bool:
    local = pose.to_local(points)
    return any(_inside(local, lo, hi).any() for lo, hi in hand_boxes(hand))


def approach_ok(pose: GraspPose, up) -> bool:
    """The palm must stay on the table-free side: approach has no upward component."""
    return float(np.dot(pose.approach, up)) <= 1e-12


def clip_in_hand(cloud: LabeledCloud, g: GraspPose, hand: HandConfig) -> LabeledCloud:
    """Points inside the closing region, expressed in gripper coordinates."""
    local = g.to_local(cloud.points)
    lo, hi = closing_box(hand)
    keep = _inside(local, lo, hi)
    return LabeledCloud(local[keep], cloud.labels[keep], None, g.rotation.T @ cloud.up)


# ------------------------------------------------------------ helpers

def _orthonormal_pair(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    e1 = np.cross(u, [0.0, 0.0, 1.0])
    if np.linalg.norm(e1) < 1e-6:
        e1 = np.cross(u, [1.0, 0.0, 0.0])
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(u, e1)


def _approach(u, phi, up) -> np.ndarray:
    e1, e2 = _orthonormal_pair(u)
    a = np.cos(phi) * e1 + np.sin(phi) * e2
    return -a if np.dot(a, up) > 0 else a


def _line_tolerance(index: SpatialIndex) -> float:
    pts = index.points
    sample = pts[:: max(1, len(pts) // 512)]
    d, _ = index.knn(sample, 2)
    return float(max(0.002, 0.75 * np.median(d[:, 1])))


def _exit_point(i: int, direction: np.ndarray, index: SpatialIndex, normals: np.ndarray,
                hand: HandConfig, tol: float) -> int | None:
    """First surface point where a ray from point ``i`` along ``direction`` leaves the object."""
    pts = index.points
    c1 = pts[i]
    near = index.within(c1, hand.max_aperture)
    v = pts[near] - c1
    t = v @ direction
    perp = np.linalg.norm(v - t[:, None] * direction, axis=1)
    ok = (t > 1e-4) & (perp <= tol) & (normals[near] @ direction > 0)
    if not ok.any():
        return None
    cand = near[ok]
    return int(cand[np.argmin(t[ok])])


def _free_pose(center, closing, phi0, near, up, hand, tries) -> GraspPose | None:
    """First collision-free pose among ``tries`` evenly spaced approach angles.

    Same test as :func:`hand_collides`, batched over approaches: the closing
    coordinate is shared, so points beyond the finger span are dropped first.
    """
    approaches = np.stack([_approach(closing, phi0 + 2 * np.pi * k / tries, up) for k in range(tries)])
    axes = np.cross(approaches, closing)
    q = near - center
    y = np.abs(q @ closing)
    d, a, w, h = hand.finger_depth / 2, hand.max_aperture / 2, hand.finger_width, hand.hand_height / 2
    keep = y <= a + w
    q, y = q[keep], y[keep]
    x = q @ approaches.T
    z = np.abs(q @ axes.T)
    finger = (y >= a)[:, None] & (np.abs(x) <= d)
    palm = (x >= -d - w) & (x <= -d)
    hit = ((z <= h) & (finger | palm)).any(axis=0)
    free = np.flatnonzero(~hit)
    if len(free) == 0:
        return None
    k = free[0]
    return GraspPose(center, np.stack([approaches[k], closing, axes[k]], axis=1))


# ------------------------------------------------------------ sampling

def sample_antipodal(cloud: LabeledCloud, normals, region, hand: HandConfig = HandConfig(),
                     rules: SamplerRules = SamplerRules(), seed: int = 0,
                     index: SpatialIndex | None = None) -> SampleResult:
    """Antipodal candidates whose seed contacts come from ``region``.

    A trial picks a region point, casts the closing line along its inward
    normal, and keeps the pair if both contacts sit inside the friction cone,
    the gap fits the hand, the grasp center lies within ``rules.region_eps``
    of a region point, and some upper-hemisphere approach is collision-free.
    Stops after ``rules.target`` kept candidates or ``rules.max_trials``
    trials.
    """
    region = np.asarray(region, dtype=bool)
    if region.shape != (len(cloud),):
        raise ValueError("region mask must align with the cloud")
    region_idx = np.flatnonzero(region)
    if len(region_idx) == 0:
        raise EmptyRegion("grounded region is empty")
    normals = np.asarray(normals, dtype=np.float64)
    index = index or SpatialIndex(cloud.points)
    region_index = SpatialIndex(cloud.points[region_idx])
    tol = _line_tolerance(index)
    cos_fc = np.cos(hand.cone_angle)
    up = cloud.up
    rng = np.random.default_rng(seed)
    pts = cloud.points

    kept: list[GraspCandidate] = []
    trials = 0
    while trials < rules.max_trials and len(kept) < rules.target:
        trials += 1
        i = int(region_idx[rng.integers(len(region_idx))])
        phi0 = rng.uniform(0.0, 2 * np.pi)
        d = -normals[i]
        j = _exit_point(i, d, index, normals, hand, tol)
        if j is None:
            continue
        c1, c2 = pts[i], pts[j]
        gap = np.linalg.norm(c2 - c1)
        if gap > hand.max_aperture or gap <= 0:
            continue
        u = (c2 - c1) / gap
        if np.dot(u, -normals[i]) < cos_fc or np.dot(u, normals[j]) < cos_fc:
            continue
        center = 0.5 * (c1 + c2)
        if region_index.nearest(center)[0] > rules.region_eps:
            continue
        pose = _free_pose(center, u, phi0, pts[index.within(center, hand.reach)], up, hand,
                          rules.approach_tries)
        if pose is not None:
            kept.append(GraspCandidate(pose, c1.copy(), c2.copy(), int(cloud.labels[i])))
    if not kept:
        err = NoCandidates(f"no antipodal candidate in {trials} trials")
        err.trials_used = trials
        raise err
    return SampleResult(kept, trials)


# ------------------------------------------------------------ labeling

def contact_normals(candidate: GraspCandidate, index: SpatialIndex, normals) -> tuple[np.ndarray, np.ndarray]:
    _, nn = index.nearest(np.stack([candidate.contact_left, candidate.contact_right]))
    return normals[nn[0]], normals[nn[1]]


def force_closure_label(candidate: GraspCandidate, cloud: LabeledCloud, normals, hand: HandConfig,
                        index: SpatialIndex | None = None, up=None) -> str:
    """Analytic success oracle: friction cones, wrench-space closure, free approach.

    ``up`` overrides the cloud's table normal, e.g. to judge a grasp planned
    in one placement against the full-surface cloud.
    """
    up = cloud.up if up is None else np.asarray(up, dtype=np.float64)
    index = index or SpatialIndex(cloud.points)
    n1, n2 = contact_normals(candidate, index, np.asarray(normals))
    c1, c2 = candidate.contact_left, candidate.contact_right
    if candidate.gap > hand.max_aperture:
        return FAILURE
    if not wrench.in_friction_cones(c1, n1, c2, n2, hand.friction_mu):
        return FAILURE
    ok, _ = wrench.force_closure(c1, n1, c2, n2, hand.friction_mu)
    if not ok:
        return FAILURE
    if not approach_ok(candidate.pose, up):
        return FAILURE
    near = cloud.points[index.within(candidate.pose.position, hand.reach)]
    if hand_collides(candidate.pose, near, hand):
        return FAILURE
    return SUCCESS


def analytic_quality(candidate: GraspCandidate, index: SpatialIndex, normals, hand: HandConfig) -> float:
    n1, n2 = contact_normals(candidate, index, np.asarray(normals))
    return wrench.normalized_quality(candidate.contact_left, n1, candidate.contact_right, n2, hand.friction_mu)


@dataclass
class GraspSet:
    candidates: list[GraspCandidate]
    part_label: int
    attempts: int
    seed: int
    requested: int = 60
    notes: list[str] = field(default_factory=list)

    @property
    def positive_fraction(self) -> float:
        if not self.candidates:
            return 0.0
        return sum(c.label == SUCCESS for c in self.candidates) / len(self.candidates)


def _random_in_cone(axis: np.ndarray, half_angle: float, rng: np.random.Generator) -> np.ndarray:
    cos_t = rng.uniform(np.cos(half_angle), 1.0)
    sin_t = np.sqrt(1 - cos_t * cos_t)
    phi = rng.uniform(0, 2 * np.pi)
    e1, e2 = _orthonormal_pair(axis)
    return cos_t * axis + sin_t * (np.cos(phi) * e1 + np.sin(phi) * e2)


def build_grasp_set(cloud: LabeledCloud, normals, part_label: int, hand: HandConfig = HandConfig(),
                    n: int = 60, seed: int = 0, perturb_deg: float = 35.0,
                    approach_tries: int = 8, max_attempts: int | None = None, index: SpatialIndex | None = None) -> GraspSet:
    """Sample ``n`` labeled candidates whose first contact lies on one part.

    The closing direction is drawn from a cone around the inward normal that
    is wider than the friction cone, so the set mixes successes and failures.
    The approach is the first collision-free one among evenly spaced
    upper-hemisphere directions; pairs with no free approach are redrawn.
    Every candidate is labeled by :func:`force_closure_label`.
    """
    normals = np.asarray(normals, dtype=np.float64)
    part_idx = np.flatnonzero(cloud.labels == part_label)
    if len(part_idx) < 3:
        raise PartTooSmall(f"part {part_label} has {len(part_idx)} points")
    index = index or SpatialIndex(cloud.points)
    tol = _line_tolerance(index)
    rng = np.random.default_rng(seed)
    max_attempts = max_attempts or 40 * n
    seen: set[tuple[int, int, int]] = set()
    out: list[GraspCandidate] = []
    attempts = 0
    while len(out) < n and attempts < max_attempts:
        attempts += 1
        i = int(part_idx[rng.integers(len(part_idx))])
        d = _random_in_cone(-normals[i], np.deg2rad(perturb_deg), rng)
        phi = rng.uniform(0, 2 * np.pi)
        j = _exit_point(i, d, index, normals, hand, tol)
        if j is None:
            continue
        c1, c2 = cloud.points[i], cloud.points[j]
        gap = np.linalg.norm(c2 - c1)
        if gap <= 0 or gap > hand.max_aperture:
            continue
        u = (c2 - c1) / gap
        center = 0.5 * (c1 + c2)
        pose = _free_pose(center, u, phi, cloud.points[index.within(center, hand.reach)], cloud.up,
                          hand, approach_tries)
        if pose is None:
            continue
        key = (i, j, *np.round(pose.approach, 3))
        if key in seen:
            continue
        seen.add(key)
        cand = GraspCandidate(pose, c1.copy(), c2.copy(), part_label)
        label = force_closure_label(cand, cloud, normals, hand, index)
        quality = analytic_quality(cand, index, normals, hand) if label == SUCCESS else 0.0
        out.append(replace(cand, label=label, quality=quality))
    if not out:
        raise PartTooSmall(f"no feasible contact pair on part {part_label}")
    gs = GraspSet(out, part_label, attempts, seed, n)
    if len(out) < n:
        gs.notes.append(f"only {len(out)} of {n} distinct candidates found")
        log.info("part %d: %s", part_label, gs.notes[-1])
    return gs


# ------------------------------------------------------------ selection

def select_grasp(candidates: list[GraspCandidate], scores, policy: str = "highest-score",
                 seed: int = 0) -> int:
    """Index of the chosen candidate (argmax with lowest-index ties, or seeded uniform)."""
    if not candidates:
        raise ValueError("no candidates to select from")
    scores = np.asarray(scores, dtype=np.float64)
    if len(scores) != len(candidates):
        raise ValueError("one score per candidate required")
    if policy == "highest-score":
        return int(np.argmax(scores))
    if policy == "random":
        return int(np.random.default_rng(seed).integers(len(candidates)))
    raise ValueError(f"unknown selection policy {policy!r}")
