"""Per-point language grounding: instruction + cloud -> binary region mask.

Two back-ends share the :class:`Grounder` interface:

* :class:`RuleGrounder` parses the instruction with the lexicon, resolves the
  part to grasp, segments the cloud by registering it to a labeled exemplar
  and transferring nearest-neighbour labels, then keeps the resolved part.
* :class:`TrainedGrounder` scores every point with a perceptron applied to
  ``[language feature, point feature]``: the language vector is repeated once
  per point and concatenated with that point's geometric features.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import logging
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import NamedTuple, Protocol

import numpy as np

from .errors import (Unresolvable, DegenerateCorrespondences, MissingModel, ShapeMismatch, TooFewPoints,
                     UnknownCategory)
from .geometry import (LabeledCloud, RigidPose, SpatialIndex, estimate_normals, fps_downsample,
                       icp_register, local_covariances)
from .language import IdentityRewriter, Lexicon, default_lexicon, parse_instruction, resolve_part, tokenize
from .mlp import MLP, Adam, Standardizer
from .shapes import category_parts, make_shape, sample_omni

log = logging.getLogger(__name__)

N_GROUND_POINTS = 2048
K_GEOM = 16
LANG_DIM = 64
PROJECTION_SEED = 1729
THRESHOLD = 0.5
POINT_FEATURES = ("cx", "cy", "cz", "height", "radius", "eig_min_mid", "eig_mid_max", "eig_min_sum", "normal_up")
MODEL_VERSION = "1"


@dataclass(frozen=True, eq=False)
class RegionMask:
    mask: np.ndarray
    part_id: str | None = None
    object_id: str | None = None
    flagged: bool = False       # resolved part has no visible points

    def __post_init__(self):
        object.__setattr__(self, "mask", np.asarray(self.mask, dtype=bool))

    def __len__(self) -> int:
        return len(self.mask)

    @property
    def count(self) -> int:
        return int(self.mask.sum())


def threshold(probs) -> np.ndarray:
    """Probabilities at or above one half are positive."""
    return np.asarray(probs, dtype=np.float64) >= THRESHOLD


class Grounder(Protocol):
    def ground(self, cloud: LabeledCloud, text: str) -> RegionMask: ...


def ground(grounder: Grounder, cloud: LabeledCloud, text: str) -> RegionMask:
    region = grounder.ground(cloud, text)
    if len(region) != len(cloud):
        raise ShapeMismatch("grounder returned a mask of the wrong length")
    return region


# ------------------------------------------------------------ point features

def featurize_points(cloud: LabeledCloud, k: int = K_GEOM, normals=None) -> np.ndarray:
    """Per-point geometric features (N x 9).

    Columns: centroid-relative x, y, z; height above the lowest point along the
    table normal; distance to the centroid; local covariance eigenvalue ratios
    min/mid, mid/max and min/sum over ``k`` neighbours; normal component along
    the table normal.
    """
    p = cloud.points
    if len(p) < k + 1:
        raise TooFewPoints(f"need at least {k + 1} points, got {len(p)}")
    index = SpatialIndex(p)
    up = cloud.up
    centered = p - p.mean(axis=0)
    h = p @ up
    lam = np.linalg.eigvalsh(local_covariances(p, k, index))
    lam = np.maximum(lam, 0.0)
    tiny = 1e-18
    if normals is None:
        normals = estimate_normals(p, min(12, len(p) - 1), cloud.sensor_origins())
    feats = np.column_stack([
        centered,
        h - h.min(),
        np.linalg.norm(centered, axis=1),
        lam[:, 0] / (lam[:, 1] + tiny),
        lam[:, 1] / (lam[:, 2] + tiny),
        lam[:, 0] / (lam.sum(axis=1) + tiny),
        np.asarray(normals) @ up,
    ])
    return feats


# ------------------------------------------------------------ language features

def language_slots(text: str, lexicon: Lexicon | None = None) -> np.ndarray:
    """Binary slot per canonical id found in ``text`` plus a count of unmatched tokens."""
    lex = lexicon or default_lexicon()
    slots = lex.slot_features()
    pos = {s: i for i, s in enumerate(slots)}
    v = np.zeros(len(slots) + 1)
    matched = 0
    for slot, cid, a, b in lex.scan_spans(text):
        v[pos[(slot, cid)]] = 1.0
        matched += b - a
    v[-1] = len(tokenize(text)) - matched
    return v


@lru_cache(maxsize=8)
def _projection(n_in: int, dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, dim))


def featurize_language(text: str, lexicon: Lexicon | None = None, dim: int = LANG_DIM,
                       seed: int = PROJECTION_SEED) -> np.ndarray:
    """Frozen random projection of the slot vector to ``dim`` entries."""
    v = language_slots(text, lexicon)
    return v @ _projection(len(v), dim, seed)


def fuse(lang: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Repeat the language vector once per point and concatenate with the point features."""
    return np.hstack([np.repeat(lang[None, :], len(points), axis=0), points])


# ------------------------------------------------------------ rule grounder

def cube_rotations() -> list[np.ndarray]:
    """The 24 proper rotations mapping coordinate axes onto coordinate axes."""
    out = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1.0, -1.0), repeat=3):
            r = np.zeros((3, 3))
            r[np.arange(3), perm] = signs
            if np.linalg.det(r) > 0:
                out.append(r)
    return out


class Exemplar(NamedTuple):
    category: str
    cloud: LabeledCloud
    part_names: tuple[str, ...]


def default_exemplars(categories=None, n: int = N_GROUND_POINTS, seed: int = 0) -> dict[str, Exemplar]:
    from .shapes import CATALOG
    cats = categories or tuple(CATALOG)
    return {c: Exemplar(c, sample_omni(make_shape(c), n, seed), category_parts(c)) for c in cats}


class Segmentation(NamedTuple):
    labels: np.ndarray
    category: str
    part_names: tuple[str, ...]
    pose: RigidPose
    rmse: float


def segment_by_exemplar(cloud: LabeledCloud, exemplars: dict[str, Exemplar], category: str | None = None,
                        search: bool = True, coarse_points: int = 256, coarse_iters: int = 8,
                        max_iter: int = 40, seed: int = 0) -> Segmentation:
    """Predict part labels by ICP registration to a labeled exemplar.

    With ``search`` the cloud is tried from each of the 24 axis-aligned
    orientations (centroids matched) against every candidate exemplar on a
    small subsample; the best start is refined on the full cloud. Without it a
    single identity start is used. Never reads ``cloud.labels``.
    """
    if category is not None:
        if category not in exemplars:
            raise UnknownCategory(f"no exemplar for {category!r}")
        pool = [exemplars[category]]
    else:
        pool = list(exemplars.values())
    src = cloud.points
    rng = np.random.default_rng(seed)
    sub = src if len(src) <= coarse_points else src[np.sort(rng.choice(len(src), coarse_points, replace=False))]
    best = None
    for ex in pool:
        dst = ex.cloud.points
        index = SpatialIndex(dst)
        trim = 0.25 * np.linalg.norm(dst - dst.mean(axis=0), axis=1).max()
        if search:
            shift = dst.mean(axis=0)
            starts = [RigidPose.identity()] + [RigidPose(r, shift - r @ src.mean(axis=0)) for r in cube_rotations()]
            runs = [(sub, start, coarse_iters) for start in starts]
        else:
            runs = [(src, RigidPose.identity(), max_iter)]
        for pts, start, iters in runs:
            try:
                reg = icp_register(pts, dst, iters, 1e-10, trim, start, index)
            except DegenerateCorrespondences:
                continue
            d, _ = index.nearest(reg.pose.apply(pts))
            score = float(np.sqrt(np.mean(np.minimum(d, trim) ** 2)))
            if best is None or score < best[4] - 1e-12:
                best = (reg, ex, index, trim, score)
    if best is None:
        raise DegenerateCorrespondences("no exemplar could be registered")
    reg, ex, index, trim, _ = best
    if search:
        try:
            reg = icp_register(src, ex.cloud.points, max_iter, 1e-10, trim, reg.pose, index)
        except DegenerateCorrespondences:
            pass
    _, nn = index.nearest(reg.pose.apply(src))
    return Segmentation(ex.cloud.labels[nn], ex.category, ex.part_names, reg.pose, reg.rmse)


@dataclass
class RuleGrounder:
    """Lexicon parse + exemplar segmentation; no training, no ground-truth labels."""
    exemplars: dict[str, Exemplar] = field(default_factory=dict)
    lexicon: Lexicon = field(default_factory=default_lexicon)
    rewriter: object = field(default_factory=IdentityRewriter)
    search: bool = True

    def __post_init__(self):
        if not self.exemplars:
            self.exemplars = default_exemplars()

    def ground(self, cloud: LabeledCloud, text: str, segmentation: Segmentation | None = None) -> RegionMask:
        slots = parse_instruction(self.rewriter.rewrite(text), self.lexicon)
        if not slots:
            # the segmented category is only a hint; it cannot stand in for an instruction
            raise Unresolvable("instruction names no part, affordance or known object")
        obj = slots.get("object")
        if obj is not None and obj not in self.exemplars:
            obj = None
        if segmentation is None:
            segmentation = segment_by_exemplar(cloud, self.exemplars, obj, self.search)
        part = resolve_part(slots, segmentation.category, self.lexicon, available=segmentation.part_names)
        if part not in segmentation.part_names:
            return RegionMask(np.zeros(len(cloud), bool), part, segmentation.category, True)
        mask = segmentation.labels == segmentation.part_names.index(part)
        return RegionMask(mask, part, segmentation.category, not mask.any())


def truth_segmentation(cloud: LabeledCloud, category: str) -> Segmentation:
    """Segmentation that simply reports the stored labels (oracle substitution)."""
    return Segmentation(cloud.labels.copy(), category, category_parts(category), RigidPose.identity(), 0.0)


# ------------------------------------------------------------ trained grounder

class GroundingSample(NamedTuple):
    points: np.ndarray      # N x 9 raw point features
    lang: np.ndarray        # LANG_DIM
    mask: np.ndarray        # N bool


def make_sample(cloud: LabeledCloud, text: str, truth: np.ndarray, lexicon: Lexicon | None = None,
                n: int = N_GROUND_POINTS, seed: int = 0) -> GroundingSample:
    truth = np.asarray(truth, dtype=bool)
    if truth.shape != (len(cloud),):
        raise ShapeMismatch("truth mask must align with the cloud")
    if n and len(cloud) != n:
        cloud = LabeledCloud(cloud.points, truth.astype(np.int64), cloud.view_pose, cloud.up, cloud.origins)
        cloud = fps_downsample(cloud, n, seed)
        truth = cloud.labels.astype(bool)
    return GroundingSample(featurize_points(cloud), featurize_language(text, lexicon), truth)


@dataclass(frozen=True)
class GrounderTrainConfig:
    epochs: int = 160
    batch_size: int = 128
    lr: float = 1e-3
    hidden: tuple[int, ...] = (64, 32)
    points_per_sample: int | None = 256

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("epochs, batch_size and lr must be positive")
        if self.points_per_sample is not None and self.points_per_sample < 1:
            raise ValueError("points_per_sample must be positive or None")


@dataclass
class TrainedGrounder:
    net: MLP
    scaler: Standardizer
    lexicon: Lexicon = field(default_factory=default_lexicon)
    lang_dim: int = LANG_DIM
    projection_seed: int = PROJECTION_SEED
    k_geom: int = K_GEOM
    manifest: dict = field(default_factory=dict)

    def inputs(self, points: np.ndarray, lang: np.ndarray) -> np.ndarray:
        return fuse(lang, self.scaler(points))

    def predict_proba(self, cloud: LabeledCloud, text: str) -> np.ndarray:
        zc = featurize_points(cloud, self.k_geom)
        zq = featurize_language(text, self.lexicon, self.lang_dim, self.projection_seed)
        return self.net.predict_proba(self.inputs(zc, zq))

    def predict_sample(self, sample: GroundingSample) -> np.ndarray:
        return self.net.predict_proba(self.inputs(sample.points, sample.lang))

    def ground(self, cloud: LabeledCloud, text: str) -> RegionMask:
        mask = threshold(self.predict_proba(cloud, text))
        return RegionMask(mask, flagged=not mask.any())

    def to_json(self) -> dict:
        return {
            "version": MODEL_VERSION,
            "kind": "trained-grounder",
            "lang_dim": self.lang_dim,
            "projection_seed": self.projection_seed,
            "k_geom": self.k_geom,
            "lexicon_version": self.lexicon.version,
            "scaler": self.scaler.to_json(),
            "net": self.net.to_json(),
            "manifest": self.manifest,
        }

    @classmethod
    def from_json(cls, data: dict, lexicon: Lexicon | None = None) -> TrainedGrounder:
        if data.get("kind") != "trained-grounder":
            raise MissingModel("file does not hold a trained grounder")
        return cls(MLP.from_json(data["net"]), Standardizer.from_json(data["scaler"]),
                   lexicon or default_lexicon(), data["lang_dim"], data["projection_seed"],
                   data["k_geom"], data.get("manifest", {}))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path, lexicon: Lexicon | None = None) -> TrainedGrounder:
        try:
            with open(path) as fh:
                return cls.from_json(json.load(fh), lexicon)
        except FileNotFoundError:
            raise MissingModel(f"no grounder model at {path}") from None


def samples_digest(samples: list[GroundingSample]) -> str:
    h = hashlib.sha256()
    for s in samples:
        for a in s:
            h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()[:16]


def train_grounder(samples: list[GroundingSample], config: GrounderTrainConfig = GrounderTrainConfig(),
                   seed: int = 0, lexicon: Lexicon | None = None) -> tuple[TrainedGrounder, list[float]]:
    """Fit the fused per-point classifier with Adam on mean binary cross-entropy.

    Each epoch visits the samples in a seeded random order, ``batch_size``
    samples per step; each sample contributes ``points_per_sample`` randomly
    drawn points (all points when None). Returns the model and the per-epoch
    mean training loss.
    """
    if not samples:
        raise ShapeMismatch("empty training set")
    dim_p = samples[0].points.shape[1]
    dim_q = len(samples[0].lang)
    for s in samples:
        if s.points.shape[1] != dim_p or len(s.lang) != dim_q or len(s.mask) != len(s.points):
            raise ShapeMismatch("inconsistent sample shapes")
    rng = np.random.default_rng(seed)
    scaler = Standardizer.fit(np.vstack([s.points for s in samples]))
    net = MLP((dim_q + dim_p, *config.hidden, 1), seed=int(rng.integers(2**31)))
    opt = Adam(config.lr)
    model = TrainedGrounder(net, scaler, lexicon or default_lexicon(), dim_q)
    scaled = [scaler(s.points) for s in samples]
    curve = []
    for _ in range(config.epochs):
        order = rng.permutation(len(samples))
        losses, weights = [], []
        for start in range(0, len(order), config.batch_size):
            xs, ys = [], []
            for i in order[start:start + config.batch_size]:
                s = samples[i]
                pts = scaled[i]
                y = s.mask
                if config.points_per_sample is not None and len(pts) > config.points_per_sample:
                    sel = rng.choice(len(pts), config.points_per_sample, replace=False)
                    pts, y = pts[sel], y[sel]
                xs.append(fuse(s.lang, pts))
                ys.append(y)
            x = np.vstack(xs)
            y = np.concatenate(ys)
            loss, grads = net.loss_and_grads(x, y)
            opt.step(net.params, grads)
            losses.append(loss)
            weights.append(len(y))
        curve.append(float(np.average(losses, weights=weights)))
    model.manifest = {"config": {**asdict(config), "hidden": list(config.hidden)}, "seed": seed,
                      "n_samples": len(samples), "data_digest": samples_digest(samples)}
    return model, curve
