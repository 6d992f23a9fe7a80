"""Geometric primitives: rigid poses, labeled clouds, nearest-neighbour index,
normals, downsampling and point-to-point ICP.

Points are plain ``(N, 3)`` float64 arrays in meters. All randomness comes from
explicit integer seeds.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateCorrespondences, EmptyCloud, TooFewPoints

ORTHO_TOL = 1e-9


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def as_points(points) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 3:
        raise ValueError(f"expected (N, 3) points, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("point coordinates must be finite")
    return p


@dataclass(frozen=True, eq=False)
class RigidPose:
    """Element of SE(3): ``x -> rotation @ x + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = _frozen(self.rotation)
        t = _frozen(self.translation).reshape(3)
        if r.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if np.max(np.abs(r.T @ r - np.eye(3))) > ORTHO_TOL or np.linalg.det(r) < 0:
            raise ValueError("rotation is not a proper orthonormal matrix")
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidPose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> RigidPose:
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_axis_angle(cls, axis, angle: float, translation=(0.0, 0.0, 0.0)) -> RigidPose:
        return cls(axis_angle_matrix(axis, angle), translation)

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def __matmul__(self, other: RigidPose) -> RigidPose:
        return RigidPose(self.rotation @ other.rotation,
                         self.rotation @ other.translation + self.translation)

    def inverse(self) -> RigidPose:
        rt = self.rotation.T
        return RigidPose(rt, -rt @ self.translation)

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def apply_vectors(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=np.float64) @ self.rotation.T

    def to_list(self) -> list[float]:
        """Row-major 3x4 ``[R | t]`` as 12 floats."""
        return [float(v) for v in self.matrix[:3, :].reshape(-1)]

    @classmethod
    def from_list(cls, values) -> RigidPose:
        v = np.asarray(values, dtype=np.float64)
        if v.shape != (12,):
            raise ValueError("pose list must hold 12 numbers")
        m = v.reshape(3, 4)
        return cls(m[:, :3], m[:, 3])

    def allclose(self, other: RigidPose, atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.matrix, other.matrix, atol=atol, rtol=0.0))


def axis_angle_matrix(axis, angle: float) -> np.ndarray:
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    k = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def rotation_angle(r: np.ndarray) -> float:
    return float(np.arccos(np.clip((np.trace(r) - 1) / 2, -1.0, 1.0)))


@dataclass(frozen=True, eq=False)
class LabeledCloud:
    """Points with per-point part labels.

    ``view_pose`` is the sensor pose in the cloud's frame (None for clouds
    sampled straight from a mesh). ``origins`` optionally stores a per-point
    sensor origin, which is what merged multi-view clouds carry. ``up`` is the
    table normal expressed in the cloud's frame.
    """

    points: np.ndarray
    labels: np.ndarray
    view_pose: RigidPose | None = None
    up: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    origins: np.ndarray | None = None

    def __post_init__(self):
        p = as_points(self.points)
        lab = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if len(lab) != len(p):
            raise ValueError("labels must align with points")
        object.__setattr__(self, "points", _frozen(p))
        object.__setattr__(self, "labels", _frozen(lab, np.int64))
        up = np.asarray(self.up, dtype=np.float64).reshape(3)
        object.__setattr__(self, "up", _frozen(up / np.linalg.norm(up)))
        if self.origins is not None:
            o = as_points(self.origins)
            if len(o) != len(p):
                raise ValueError("origins must align with points")
            object.__setattr__(self, "origins", _frozen(o))

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, idx) -> LabeledCloud:
        idx = np.asarray(idx)
        return replace(self, points=self.points[idx], labels=self.labels[idx],
                       origins=None if self.origins is None else self.origins[idx])

    def sensor_origins(self) -> np.ndarray | None:
        if self.origins is not None:
            return self.origins
        if self.view_pose is not None:
            return np.broadcast_to(self.view_pose.translation, self.points.shape)
        return None

    def transformed(self, pose: RigidPose) -> LabeledCloud:
        vp = None if self.view_pose is None else pose @ self.view_pose
        return LabeledCloud(pose.apply(self.points), self.labels, vp,
                            pose.apply_vectors(self.up),
                            None if self.origins is None else pose.apply(self.origins))


def merge_clouds(clouds: list[LabeledCloud]) -> LabeledCloud:
    """Concatenate clouds that share a frame, keeping each point's sensor origin."""
    if not clouds:
        raise EmptyCloud("nothing to merge")
    origins = []
    for c in clouds:
        o = c.sensor_origins()
        origins.append(np.zeros_like(c.points) if o is None else o)
    return LabeledCloud(np.concatenate([c.points for c in clouds]),
                        np.concatenate([c.labels for c in clouds]),
                        None, clouds[0].up, np.concatenate(origins))


class SpatialIndex:
    """Immutable k-d tree over a point set (backed by scipy's cKDTree)."""

    def __init__(self, points):
        self.points = _frozen(as_points(points))
        if len(self.points) == 0:
            raise EmptyCloud("cannot index an empty point set")
        self._tree = cKDTree(self.points)

    def __len__(self) -> int:
        return len(self.points)

    def nearest(self, queries) -> tuple[np.ndarray, np.ndarray]:
        """Distance and index of the nearest indexed point for each query."""
        d, i = self._tree.query(np.asarray(queries, dtype=np.float64), k=1)
        return d, i

    def knn(self, queries, k: int) -> tuple[np.ndarray, np.ndarray]:
        return self._tree.query(np.asarray(queries, dtype=np.float64), k=k)

    def within(self, query, radius: float) -> np.ndarray:
        idx = self._tree.query_ball_point(np.asarray(query, dtype=np.float64), radius)
        return np.sort(np.asarray(idx, dtype=np.int64))


def local_covariances(points: np.ndarray, k: int, index: SpatialIndex | None = None) -> np.ndarray:
    """Covariance of each point's k-nearest neighbourhood (self included)."""
    index = index or SpatialIndex(points)
    _, nn = index.knn(points, k + 1)
    nbrs = points[nn]
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    return np.einsum("nki,nkj->nij", centered, centered) / (k + 1)


def estimate_normals(points, k: int = 12, viewpoint=None) -> np.ndarray:
    """Unit normals from the smallest-eigenvalue direction of k-NN covariances.

    Normals are flipped to face ``viewpoint`` (a single 3-vector or one origin
    per point). Without a viewpoint they face away from the cloud centroid.
    """
    p = as_points(points)
    if k < 3:
        raise ValueError("k must be at least 3")
    if len(p) <= k:
        raise TooFewPoints(f"need more than {k} points, got {len(p)}")
    _, vecs = np.linalg.eigh(local_covariances(p, k))
    normals = vecs[:, :, 0]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    if viewpoint is None:
        toward = p - p.mean(axis=0)
    else:
        toward = np.broadcast_to(np.asarray(viewpoint, dtype=np.float64), p.shape) - p
    flip = np.einsum("ij,ij->i", normals, toward) < 0
    normals[flip] *= -1
    return normals


def voxel_downsample(cloud: LabeledCloud, voxel: float) -> LabeledCloud:
    """One centroid per occupied voxel; label by majority, ties to the smallest id.

    Output is ordered by voxel key, so the operation is idempotent.
    """
    if voxel <= 0:
        raise ValueError("voxel size must be positive")
    if len(cloud) == 0:
        return cloud
    pts = cloud.points
    keys = np.floor(pts / voxel).astype(np.int64)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    m = len(uniq)
    counts = np.bincount(inv, minlength=m).astype(np.float64)
    cent = np.stack([np.bincount(inv, weights=pts[:, d], minlength=m) for d in range(3)], axis=1)
    cent /= counts[:, None]
    # keep each centroid inside its own voxel despite rounding
    lo = np.full((m, 3), np.inf)
    hi = np.full((m, 3), -np.inf)
    np.minimum.at(lo, inv, pts)
    np.maximum.at(hi, inv, pts)
    cent = np.clip(cent, lo, hi)

    pairs, pair_counts = np.unique(np.stack([inv, cloud.labels], axis=1), axis=0, return_counts=True)
    order = np.lexsort((pairs[:, 1], -pair_counts, pairs[:, 0]))
    first = np.ones(len(order), dtype=bool)
    first[1:] = pairs[order[1:], 0] != pairs[order[:-1], 0]
    labels = np.empty(m, dtype=np.int64)
    labels[pairs[order[first], 0]] = pairs[order[first], 1]

    origins = None
    if cloud.origins is not None:
        origins = np.stack([np.bincount(inv, weights=cloud.origins[:, d], minlength=m)
                            for d in range(3)], axis=1) / counts[:, None]
    return replace(cloud, points=cent, labels=labels, origins=origins)


def fps_indices(points: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Farthest-point sampling order of ``min(n, len(points))`` indices."""
    count = len(points)
    m = min(n, count)
    out = np.empty(m, dtype=np.int64)
    out[0] = rng.integers(count)
    x, y, z = (np.ascontiguousarray(points[:, d]) for d in range(3))
    dist = np.full(count, np.inf)
    tmp, acc = np.empty(count), np.empty(count)
    nxt = int(out[0])
    for i in range(m):
        nxt = int(out[i]) if i == 0 else int(np.argmax(dist))
        out[i] = nxt
        np.subtract(x, x[nxt], out=tmp)
        np.multiply(tmp, tmp, out=acc)
        np.subtract(y, y[nxt], out=tmp)
        acc += tmp * tmp
        np.subtract(z, z[nxt], out=tmp)
        acc += tmp * tmp
        np.minimum(dist, acc, out=dist)
    return out


def fps_downsample(cloud: LabeledCloud, n: int, seed: int) -> LabeledCloud:
    """Exactly ``n`` points by farthest-point sampling from a seeded start.

    Clouds smaller than ``n`` are padded by sampling with replacement.
    """
    if len(cloud) == 0:
        raise EmptyCloud("cannot downsample an empty cloud")
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    idx = fps_indices(cloud.points, n, rng)
    if len(idx) < n:
        idx = np.concatenate([idx, rng.integers(len(cloud), size=n - len(idx))])
    return cloud.subset(idx)


class Registration(NamedTuple):
    pose: RigidPose
    rmse: float
    iterations: int


def best_fit_transform(src: np.ndarray, dst: np.ndarray) -> RigidPose:
    """Least-squares rigid transform mapping ``src`` rows onto ``dst`` rows (Kabsch)."""
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    h = (src - cs).T @ (dst - cd)
    u, s, vt = np.linalg.svd(h)
    if s[0] <= 1e-300 or s[1] <= 1e-12 * s[0]:
        raise DegenerateCorrespondences("matched covariance is rank-deficient")
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    # re-orthonormalise to keep the pose invariant tight
    uu, _, vv = np.linalg.svd(r)
    r = uu @ vv
    return RigidPose(r, cd - r @ cs)


def icp_register(source, target, max_iter: int = 50, tol: float = 1e-8,
                 max_correspondence: float | None = None,
                 init: RigidPose | None = None,
                 index: SpatialIndex | None = None) -> Registration:
    """Point-to-point ICP aligning ``source`` onto ``target``.

    Stops when the RMSE improvement drops below ``tol`` or after ``max_iter``
    iterations. ``max_correspondence`` optionally drops matches farther than
    the given distance (partial-overlap merges). ``index`` may carry a
    prebuilt tree over ``target``.
    """
    src = as_points(source)
    dst = as_points(target)
    if len(src) == 0 or len(dst) == 0:
        raise EmptyCloud("ICP needs non-empty clouds")
    index = index or SpatialIndex(dst)
    pose = init or RigidPose.identity()
    prev = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        moved = pose.apply(src)
        d, nn = index.nearest(moved)
        keep = np.ones(len(d), dtype=bool) if max_correspondence is None else d <= max_correspondence
        if keep.sum() < 3:
            raise DegenerateCorrespondences("fewer than 3 correspondences")
        rmse = float(np.sqrt(np.mean(d[keep] ** 2)))
        if prev - rmse < tol:
            break
        prev = rmse
        pose = best_fit_transform(moved[keep], dst[nn[keep]]) @ pose
    d, _ = index.nearest(pose.apply(src))
    if max_correspondence is not None:
        d = d[d <= max_correspondence]
    rmse = float(np.sqrt(np.mean(d ** 2))) if len(d) else float("inf")
    return Registration(pose, rmse, it)
