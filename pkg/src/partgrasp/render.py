"""Pinhole ray-cast rendering of partial views and the 13-cloud observation set."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoVisiblePoints
from .geometry import LabeledCloud, RigidPose, fps_downsample
from .shapes import PartMesh, Workspace, random_place, sample_omni_with_normals

N_VIEW_POINTS = 4096
N_OMNI_POINTS = 10000
N_PLACEMENTS = 3
N_VIEWPOINTS = 4
ELEVATION_DEG = 45.0
TILE = 16


@dataclass(frozen=True)
class Intrinsics:
    width: int = 160
    height: int = 160
    fx: float = 171.6
    fy: float = 171.6
    cx: float = 80.0
    cy: float = 80.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or self.fx <= 0 or self.fy <= 0:
            raise ValueError("invalid intrinsics")

    @classmethod
    def from_fov(cls, width: int, height: int, fov_deg: float) -> Intrinsics:
        f = 0.5 * width / np.tan(np.deg2rad(fov_deg) / 2)
        return cls(width, height, f, f, width / 2, height / 2)

    @property
    def half_fov(self) -> float:
        return float(np.arctan(0.5 * min(self.width / self.fx, self.height / self.fy)))


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> RigidPose:
    """Camera pose (camera -> world) with +z forward, +x right, +y down."""
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z /= np.linalg.norm(z)
    up = np.asarray(up, dtype=np.float64)
    if abs(np.dot(z, up)) > 0.999:
        up = np.array([0.0, 1.0, 0.0])
    x = np.cross(z, up)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return RigidPose(np.stack([x, y, z], axis=1), eye)


def ray_triangle(origins, dirs, tri, eps=1e-12) -> np.ndarray:
    """Two-sided Moller-Trumbore; returns (R, T) hit distances (inf on miss)."""
    v0 = tri[:, 0]
    e1 = tri[:, 1] - v0
    e2 = tri[:, 2] - v0
    pvec = np.cross(dirs[:, None, :], e2[None])
    det = np.einsum("rtk,tk->rt", pvec, e1)
    ok = np.abs(det) > eps
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tvec = origins[:, None, :] - v0[None]
    u = np.einsum("rtk,rtk->rt", tvec, pvec) * inv
    qvec = np.cross(tvec, e1[None])
    v = np.einsum("rk,rtk->rt", dirs, qvec) * inv
    t = np.einsum("rtk,tk->rt", qvec, e2) * inv
    hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 1e-9)
    return np.where(hit, t, np.inf)


def depth_image(mesh: PartMesh, cam_in_obj: RigidPose, intr: Intrinsics):
    """Ray-cast one ray per pixel; returns hit distances (H*W,), face ids, ray dirs."""
    w, h = intr.width, intr.height
    uu, vv = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    d_cam = np.stack([(uu - intr.cx) / intr.fx, (vv - intr.cy) / intr.fy, np.ones_like(uu)], axis=-1)
    d_cam /= np.linalg.norm(d_cam, axis=-1, keepdims=True)
    dirs = d_cam.reshape(-1, 3) @ cam_in_obj.rotation.T
    origin = cam_in_obj.translation

    # conservative screen-space bounds per triangle for tile culling
    tri = mesh.triangles
    pc = cam_in_obj.inverse().apply(tri.reshape(-1, 3)).reshape(-1, 3, 3)
    front = np.all(pc[..., 2] > 1e-6, axis=1)
    z = np.where(pc[..., 2] > 1e-6, pc[..., 2], 1.0)
    px = intr.fx * pc[..., 0] / z + intr.cx
    py = intr.fy * pc[..., 1] / z + intr.cy
    bx0 = np.where(front, px.min(axis=1), -np.inf)
    bx1 = np.where(front, px.max(axis=1), np.inf)
    by0 = np.where(front, py.min(axis=1), -np.inf)
    by1 = np.where(front, py.max(axis=1), np.inf)

    dist = np.full(w * h, np.inf)
    face = np.full(w * h, -1, dtype=np.int64)
    pix = np.arange(w * h).reshape(h, w)
    for ty in range(0, h, TILE):
        for tx in range(0, w, TILE):
            sel = np.flatnonzero((bx1 >= tx) & (bx0 <= tx + TILE) & (by1 >= ty) & (by0 <= ty + TILE))
            if len(sel) == 0:
                continue
            rays = pix[ty:ty + TILE, tx:tx + TILE].reshape(-1)
            t = ray_triangle(np.broadcast_to(origin, (len(rays), 3)), dirs[rays], tri[sel])
            best = np.argmin(t, axis=1)
            tb = t[np.arange(len(rays)), best]
            hit = np.isfinite(tb)
            dist[rays[hit]] = tb[hit]
            face[rays[hit]] = sel[best[hit]]
    return dist, face, dirs


def render_view(mesh: PartMesh, object_pose: RigidPose, camera: RigidPose,
                intrinsics: Intrinsics | None = None, n: int = N_VIEW_POINTS, seed: int = 0,
                depth_jitter: float = 0.0) -> LabeledCloud:
    """Render the placed mesh from ``camera`` (both poses in world frame).

    The returned cloud is in object coordinates; its ``view_pose`` is the
    camera pose in that frame and ``up`` is the table normal in that frame.
    """
    intr = intrinsics or Intrinsics()
    world_to_obj = object_pose.inverse()
    cam = world_to_obj @ camera
    dist, face, dirs = depth_image(mesh, cam, intr)
    hit = np.isfinite(dist)
    if not hit.any():
        raise NoVisiblePoints(f"no ray hits the {mesh.category}")
    d = dist[hit]
    if depth_jitter > 0:
        d = d + np.random.default_rng(seed).normal(0.0, depth_jitter, size=len(d))
    pts = cam.translation + dirs[hit] * d[:, None]
    up = world_to_obj.apply_vectors(np.array([0.0, 0.0, 1.0]))
    cloud = LabeledCloud(pts, mesh.labels[face[hit]], cam, up)
    return fps_downsample(cloud, n, seed)


def view_cameras(mesh: PartMesh, object_pose: RigidPose, intr: Intrinsics,
                 n_views: int = N_VIEWPOINTS, elevation_deg: float = ELEVATION_DEG,
                 azimuth0: float = 0.0) -> list[RigidPose]:
    """Evenly spaced azimuths at fixed elevation, distance fitted to the bounding sphere."""
    v = object_pose.apply(mesh.vertices)
    center = 0.5 * (v.min(axis=0) + v.max(axis=0))
    radius = np.linalg.norm(v - center, axis=1).max()
    dist = 1.05 * radius / np.sin(intr.half_fov)
    el = np.deg2rad(elevation_deg)
    cams = []
    for k in range(n_views):
        az = azimuth0 + 2 * np.pi * k / n_views
        eye = center + dist * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        cams.append(look_at(eye, center))
    return cams


@dataclass(frozen=True, eq=False)
class ObservationSet:
    omni: LabeledCloud
    omni_normals: np.ndarray
    views: tuple[LabeledCloud, ...]          # placement-major: p0_v0..p0_v3, p1_v0, ...
    placements: tuple[RigidPose, ...]
    seeds: dict

    def view(self, placement: int, viewpoint: int) -> LabeledCloud:
        return self.views[placement * N_VIEWPOINTS + viewpoint]

    @property
    def clouds(self) -> list[LabeledCloud]:
        return [self.omni, *self.views]


def build_observation_set(mesh: PartMesh, workspace: Workspace | None = None, seed: int = 0,
                          intrinsics: Intrinsics | None = None, placements: int = N_PLACEMENTS,
                          depth_jitter: float = 0.0) -> ObservationSet:
    """One omni cloud plus ``placements`` x 4 partial views, all in object coordinates."""
    workspace = workspace or Workspace()
    intr = intrinsics or Intrinsics()
    rng = np.random.default_rng(seed)
    omni_seed = int(rng.integers(2**62))
    omni, normals = sample_omni_with_normals(mesh, N_OMNI_POINTS, omni_seed)
    views, poses, seeds = [], [], {"omni": omni_seed, "placements": []}
    for _ in range(placements):
        place_seed, render_seed = (int(s) for s in rng.integers(2**62, size=2))
        pose = random_place(mesh, workspace, place_seed)
        poses.append(pose)
        seeds["placements"].append({"place": place_seed, "render": render_seed})
        for k, cam in enumerate(view_cameras(mesh, pose, intr)):
            views.append(render_view(mesh, pose, cam, intr, N_VIEW_POINTS, render_seed + k, depth_jitter))
    return ObservationSet(omni, normals, tuple(views), tuple(poses), seeds)
