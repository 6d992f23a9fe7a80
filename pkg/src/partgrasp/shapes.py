"""Parametric part-labeled meshes, surface sampling and tabletop placement.

Every catalog shape is modeled in its natural rest pose (z up, lowest vertex
on z=0), with outward-wound triangles. Dimensions are desk scale and each
part has at least one thin feature (wall, rim, rod or slab under ~9 mm) that
a parallel-jaw gripper can pinch.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, Delaunay

from .errors import DoesNotFit, ParamOutOfRange, UnknownCategory
from .geometry import LabeledCloud, RigidPose, axis_angle_matrix

CATALOG_VERSION = "1.0"
SEGMENTS = 20


@dataclass(frozen=True, eq=False)
class PartMesh:
    triangles: np.ndarray            # (F, 3, 3)
    labels: np.ndarray               # (F,) local part label
    category: str
    part_names: tuple[str, ...]      # label -> canonical part id
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        tri = np.array(self.triangles, dtype=np.float64)
        lab = np.array(self.labels, dtype=np.int64)
        if tri.ndim != 3 or tri.shape[1:] != (3, 3) or len(lab) != len(tri):
            raise ValueError("triangles must be (F, 3, 3) with one label each")
        if np.any(triangle_areas(tri) <= 0):
            raise ValueError("degenerate triangle in mesh")
        if lab.min() < 0 or lab.max() >= len(self.part_names):
            raise ValueError("every part label needs a name")
        missing = set(range(len(self.part_names))) - set(lab.tolist())
        if missing:
            raise ValueError(f"parts without triangles: {sorted(missing)}")
        tri.setflags(write=False)
        lab.setflags(write=False)
        object.__setattr__(self, "triangles", tri)
        object.__setattr__(self, "labels", lab)
        object.__setattr__(self, "part_names", tuple(self.part_names))

    @property
    def vertices(self) -> np.ndarray:
        return self.triangles.reshape(-1, 3)

    @property
    def normals(self) -> np.ndarray:
        n = np.cross(self.triangles[:, 1] - self.triangles[:, 0], self.triangles[:, 2] - self.triangles[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    @property
    def areas(self) -> np.ndarray:
        return triangle_areas(self.triangles)

    def label_of(self, part: str) -> int:
        return self.part_names.index(part)

    def transformed(self, pose: RigidPose) -> PartMesh:
        tri = pose.apply(self.triangles.reshape(-1, 3)).reshape(-1, 3, 3)
        return PartMesh(tri, self.labels, self.category, self.part_names, self.params)

    def to_json(self) -> dict:
        verts, inv = np.unique(self.vertices, axis=0, return_inverse=True)
        return {
            "category": self.category,
            "catalog_version": CATALOG_VERSION,
            "params": {k: float(v) for k, v in self.params.items()},
            "part_names": list(self.part_names),
            "vertices": verts.tolist(),
            "faces": inv.reshape(-1, 3).tolist(),
            "face_labels": self.labels.tolist(),
        }

    @classmethod
    def from_json(cls, data: dict) -> PartMesh:
        verts = np.asarray(data["vertices"], dtype=np.float64)
        faces = np.asarray(data["faces"], dtype=np.int64)
        return cls(verts[faces], data["face_labels"], data["category"],
                   tuple(data["part_names"]), dict(data.get("params", {})))

    def components(self) -> int:
        """Number of vertex-connected components."""
        _, inv = np.unique(self.vertices, axis=0, return_inverse=True)
        inv = inv.reshape(-1, 3)
        parent = np.arange(inv.max() + 1)

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for a, b, c in inv:
            ra, rb, rc = find(a), find(b), find(c)
            parent[rb] = ra
            parent[find(rc)] = ra
        return len({find(v) for v in range(len(parent))})


def triangle_areas(tri: np.ndarray) -> np.ndarray:
    return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)


# ---------------------------------------------------------------- primitives

def _quads(grid: np.ndarray, closed_u: bool = True) -> list:
    """Triangulate an (nu, nv, 3) vertex grid; winding follows (u, v) order."""
    nu, nv = grid.shape[:2]
    tris = []
    for i in range(nu if closed_u else nu - 1):
        i2 = (i + 1) % nu
        for j in range(nv - 1):
            a, b, c, d = grid[i, j], grid[i2, j], grid[i2, j + 1], grid[i, j + 1]
            tris.append((a, b, c))
            tris.append((a, c, d))
    return tris


def _fan(center, ring, flip=False) -> list:
    tris = []
    n = len(ring)
    for i in range(n):
        a, b = ring[i], ring[(i + 1) % n]
        tris.append((center, b, a) if flip else (center, a, b))
    return tris


def box(lo, hi) -> np.ndarray:
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    v = np.array([[x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
                  [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1]], dtype=np.float64)
    faces = [(0, 2, 1), (0, 3, 2), (4, 5, 6), (4, 6, 7), (0, 1, 5), (0, 5, 4),
             (1, 2, 6), (1, 6, 5), (2, 3, 7), (2, 7, 6), (3, 0, 4), (3, 4, 7)]
    return v[np.array(faces)]


def _circle(radius, z, n=SEGMENTS, rx=None):
    a = 2 * np.pi * np.arange(n) / n
    rx = radius if rx is None else rx
    return np.stack([rx * np.cos(a), radius * np.sin(a), np.full(n, z)], axis=1)


def cylinder(radius, z0, z1, n=SEGMENTS, rx=None) -> np.ndarray:
    """Closed z-aligned cylinder (elliptic when ``rx`` differs from ``radius``)."""
    bottom, top = _circle(radius, z0, n, rx), _circle(radius, z1, n, rx)
    tris = _quads(np.stack([bottom, top], axis=1))
    tris += _fan(np.array([0, 0, z0]), bottom, flip=True)
    tris += _fan(np.array([0, 0, z1]), top)
    return np.array(tris)


def hollow_cylinder(r_out, r_in, z0, z1, floor, n=SEGMENTS) -> np.ndarray:
    """Open-top cup: outer wall, inner wall, rim, outer bottom and inner floor."""
    ob, ot = _circle(r_out, z0, n), _circle(r_out, z1, n)
    ib, it = _circle(r_in, z0 + floor, n), _circle(r_in, z1, n)
    tris = _quads(np.stack([ob, ot], axis=1))
    tris += _quads(np.stack([it, ib], axis=1))           # inner wall faces the axis
    tris += _quads(np.stack([ot, it], axis=1))           # rim faces up
    tris += _fan(np.array([0, 0, z0]), ob, flip=True)
    tris += _fan(np.array([0, 0, z0 + floor]), ib)
    return np.array(tris)


def frustum_shell(r_bot, r_top, z0, z1, wall, n=SEGMENTS) -> np.ndarray:
    """Open-ended thin conical shell (lamp shade)."""
    ob, ot = _circle(r_bot, z0, n), _circle(r_top, z1, n)
    ib, it = _circle(r_bot - wall, z0, n), _circle(r_top - wall, z1, n)
    tris = _quads(np.stack([ob, ot], axis=1))
    tris += _quads(np.stack([it, ib], axis=1))
    tris += _quads(np.stack([ot, it], axis=1))
    tris += _quads(np.stack([ib, ob], axis=1))
    return np.array(tris)


def tube_arc(major, minor, phi0, phi1, n_arc=14, n_ring=10) -> np.ndarray:
    """Capped torus section in the x-z plane, centred at the origin."""
    phis = np.linspace(phi0, phi1, n_arc)
    th = 2 * np.pi * np.arange(n_ring) / n_ring
    rings = []
    for p in phis:
        c = major * np.array([np.cos(p), 0.0, np.sin(p)])
        radial = np.array([np.cos(p), 0.0, np.sin(p)])
        side = np.array([0.0, 1.0, 0.0])
        rings.append(c + minor * (np.cos(th)[:, None] * radial + np.sin(th)[:, None] * side))
    grid = np.stack(rings, axis=1)                       # (n_ring, n_arc, 3)
    tris = _quads(grid)
    c0 = major * np.array([np.cos(phi0), 0.0, np.sin(phi0)])
    c1 = major * np.array([np.cos(phi1), 0.0, np.sin(phi1)])
    tris += _fan(c0, grid[:, 0], flip=True)
    tris += _fan(c1, grid[:, -1], flip=False)
    return np.array(tris)


def _place(tris, rotation=None, offset=(0.0, 0.0, 0.0)) -> np.ndarray:
    t = tris.reshape(-1, 3)
    if rotation is not None:
        t = t @ np.asarray(rotation).T
    return (t + np.asarray(offset)).reshape(-1, 3, 3)


# ----------------------------------------------------------------- catalog

def _mug(p):
    r, h, wall, tube, reach = p["radius"], p["height"], p["wall"], p["handle_tube"], p["handle_reach"]
    body = hollow_cylinder(r, r - wall, 0.0, h, wall)
    ang = np.deg2rad(95)
    handle = _place(tube_arc(reach, tube, -ang, ang), offset=(r, 0.0, 0.5 * h))
    return [body, handle]


def _table(p):
    lx, ly, th, lh, leg = p["top_x"], p["top_y"], p["top_thickness"], p["leg_height"], p["leg_side"]
    top = box((-lx / 2, -ly / 2, lh), (lx / 2, ly / 2, lh + th))
    inset = 0.01
    legs = [box((sx * (lx / 2 - inset) - leg / 2, sy * (ly / 2 - inset) - leg / 2, 0.0),
                (sx * (lx / 2 - inset) + leg / 2, sy * (ly / 2 - inset) + leg / 2, lh))
            for sx in (-1, 1) for sy in (-1, 1)]
    return [top, np.concatenate(legs)]


def _hammer(p):
    hl, hr, hs = p["handle_length"], p["handle_radius"], p["head_size"]
    head = box((-hs / 2, -1.2 * hs, 0.0), (hs / 2, 1.2 * hs, hs))
    rot = axis_angle_matrix((0, 1, 0), np.pi / 2)       # z-axis -> x-axis
    handle = _place(cylinder(hr, 0.0, hl, n=12), rot, (hs / 2 - 0.002, 0.0, hs / 2))
    return [head, handle]


def _lamp(p):
    br, pole_h, sr, sh = p["base_radius"], p["pole_height"], p["shade_radius"], p["shade_height"]
    disk = cylinder(br, 0.0, 0.008)
    pole = cylinder(0.004, 0.008, pole_h, n=10)
    shade_z0 = pole_h - 0.6 * sh
    shade = frustum_shell(sr, 0.6 * sr, shade_z0, shade_z0 + sh, 0.003)
    return [np.concatenate([disk, pole]), shade]


def _bag(p):
    w, d, h, reach = p["width"], p["depth"], p["height"], p["handle_reach"]
    body = box((-w / 2, -d / 2, 0.0), (w / 2, d / 2, h))
    handle = _place(tube_arc(reach, 0.004, np.deg2rad(-8), np.deg2rad(188)), offset=(0.0, 0.0, h))
    return [body, handle]


def _knife(p):
    hl, bl, bw = p["handle_length"], p["blade_length"], p["blade_width"]
    handle = box((-hl, -0.008, 0.0), (0.0, 0.008, 0.008))
    blade = box((-0.003, -bw / 2, 0.003), (bl, bw / 2, 0.005))
    return [blade, handle]


def _guitar(p):
    a, b, t, nl = p["body_rx"], p["body_ry"], p["thickness"], p["neck_length"]
    body = cylinder(b, 0.0, t, rx=a)
    neck = box((a - 0.004, -0.007, 0.001), (a + nl, 0.007, 0.007))
    return [body, neck]


def _pistol(p):
    bl, gl = p["body_length"], p["grip_length"]
    body = box((0.0, -0.012, 0.0), (bl, 0.012, 0.008))
    grip = box((0.0, -0.012 - gl, 0.0), (0.028, -0.011, 0.008))
    trigger = box((0.036, -0.026, 0.002), (0.042, -0.0115, 0.006))
    return [body, grip, trigger]


def _chair(p):
    s, sh, bh = p["seat_size"], p["seat_height"], p["back_height"]
    seat = box((-s / 2, -s / 2, sh), (s / 2, s / 2, sh + 0.008))
    back = box((-s / 2, s / 2 - 0.008, sh + 0.008), (s / 2, s / 2, sh + 0.008 + bh))
    legs = [box((sx * (s / 2 - 0.008) - 0.004, sy * (s / 2 - 0.008) - 0.004, 0.0),
                (sx * (s / 2 - 0.008) + 0.004, sy * (s / 2 - 0.008) + 0.004, sh))
            for sx in (-1, 1) for sy in (-1, 1)]
    return [seat, back, np.concatenate(legs)]


def _skateboard(p):
    length, width = p["length"], p["width"]
    board = box((-length / 2, -width / 2, 0.02), (length / 2, width / 2, 0.026))
    rot = axis_angle_matrix((1, 0, 0), np.pi / 2)       # wheel axles along y
    wheels = [_place(cylinder(0.01, -0.004, 0.004, n=12), rot, (sx * (length / 2 - 0.03), sy * (width / 2 - 0.006), 0.01))
              for sx in (-1, 1) for sy in (-1, 1)]
    return [board, np.concatenate(wheels)]


def _laptop(p):
    w, d, sh = p["width"], p["depth"], p["screen_height"]
    base = box((-w / 2, -d / 2, 0.0), (w / 2, d / 2, 0.008))
    screen = box((-w / 2, d / 2 - 0.005, 0.008), (w / 2, d / 2, 0.008 + sh))
    return [base, screen]


# category -> (builder, part names, {param: (default, lo, hi)})
CATALOG: dict[str, tuple] = {
    "mug": (_mug, ("body", "handle"), {
        "radius": (0.040, 0.035, 0.045), "height": (0.095, 0.080, 0.110),
        "wall": (0.004, 0.003, 0.005), "handle_tube": (0.004, 0.0035, 0.0045),
        "handle_reach": (0.028, 0.024, 0.032)}),
    "table": (_table, ("board", "leg"), {
        "top_x": (0.20, 0.16, 0.22), "top_y": (0.12, 0.10, 0.14),
        "top_thickness": (0.008, 0.006, 0.009), "leg_height": (0.08, 0.07, 0.10),
        "leg_side": (0.008, 0.007, 0.009)}),
    "hammer": (_hammer, ("head", "handle"), {
        "handle_length": (0.19, 0.16, 0.22), "handle_radius": (0.0042, 0.0038, 0.0045),
        "head_size": (0.03, 0.026, 0.034)}),
    "lamp": (_lamp, ("base", "shade"), {
        "base_radius": (0.05, 0.045, 0.06), "pole_height": (0.12, 0.10, 0.14),
        "shade_radius": (0.05, 0.045, 0.055), "shade_height": (0.06, 0.05, 0.07)}),
    "bag": (_bag, ("body", "handle"), {
        "width": (0.16, 0.14, 0.18), "depth": (0.008, 0.006, 0.009),
        "height": (0.12, 0.10, 0.14), "handle_reach": (0.045, 0.04, 0.05)}),
    "knife": (_knife, ("blade", "handle"), {
        "handle_length": (0.09, 0.08, 0.10), "blade_length": (0.12, 0.10, 0.14),
        "blade_width": (0.025, 0.02, 0.03)}),
    "guitar": (_guitar, ("body", "neck"), {
        "body_rx": (0.06, 0.055, 0.065), "body_ry": (0.045, 0.04, 0.05),
        "thickness": (0.008, 0.007, 0.009), "neck_length": (0.12, 0.10, 0.14)}),
    "pistol": (_pistol, ("body", "handle", "trigger"), {
        "body_length": (0.12, 0.10, 0.14), "grip_length": (0.05, 0.045, 0.06)}),
    "chair": (_chair, ("seat", "back", "leg"), {
        "seat_size": (0.10, 0.09, 0.11), "seat_height": (0.08, 0.07, 0.09),
        "back_height": (0.09, 0.08, 0.10)}),
    "skateboard": (_skateboard, ("board", "wheel"), {
        "length": (0.20, 0.18, 0.22), "width": (0.05, 0.045, 0.055)}),
    "laptop": (_laptop, ("board", "screen"), {
        "width": (0.16, 0.14, 0.18), "depth": (0.11, 0.10, 0.12),
        "screen_height": (0.10, 0.09, 0.11)}),
}

CORE_CATEGORIES = ("mug", "table", "hammer", "lamp", "bag", "knife", "guitar", "pistol")


def category_parts(category: str) -> tuple[str, ...]:
    if category not in CATALOG:
        raise UnknownCategory(category)
    return CATALOG[category][1]


def param_table(category: str) -> dict:
    if category not in CATALOG:
        raise UnknownCategory(category)
    return CATALOG[category][2]


def resolve_params(category: str, params=None, seed: int | None = None) -> dict:
    """Explicit params (dict or ordered sequence), seeded random draw, or defaults."""
    table = param_table(category)
    names = list(table)
    if params is None:
        if seed is None:
            return {k: v[0] for k, v in table.items()}
        rng = np.random.default_rng(seed)
        return {k: float(rng.uniform(v[1], v[2])) for k, v in table.items()}
    if not isinstance(params, dict):
        values = list(params)
        if len(values) != len(names):
            raise ParamOutOfRange(f"{category} takes {len(names)} params, got {len(values)}")
        params = dict(zip(names, values))
    out = {k: v[0] for k, v in table.items()}
    for k, v in params.items():
        if k not in table:
            raise ParamOutOfRange(f"unknown {category} param {k!r}")
        lo, hi = table[k][1], table[k][2]
        if not lo <= float(v) <= hi:
            raise ParamOutOfRange(f"{category}.{k}={v} outside [{lo}, {hi}]")
        out[k] = float(v)
    return out


def make_shape(category: str, params=None, seed: int | None = None) -> PartMesh:
    """Build a catalog mesh; ``params=None`` with a seed draws random in-range params."""
    if category not in CATALOG:
        raise UnknownCategory(category)
    builder, parts, _ = CATALOG[category]
    p = resolve_params(category, params, seed)
    pieces = builder(p)
    tris = np.concatenate(pieces)
    labels = np.concatenate([np.full(len(t), i) for i, t in enumerate(pieces)])
    tris = tris.copy()
    tris[..., 2] -= tris[..., 2].min()
    return PartMesh(tris, labels, category, parts, p)


# ------------------------------------------------------------ sampling

def sample_surface(mesh: PartMesh, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Area-weighted uniform surface samples and their triangle indices."""
    areas = mesh.areas
    faces = rng.choice(len(areas), size=n, p=areas / areas.sum())
    u = rng.random((n, 2))
    flip = u.sum(axis=1) > 1
    u[flip] = 1 - u[flip]
    t = mesh.triangles[faces]
    pts = t[:, 0] + u[:, :1] * (t[:, 1] - t[:, 0]) + u[:, 1:] * (t[:, 2] - t[:, 0])
    return pts, faces


def sample_omni(mesh: PartMesh, n: int = 10000, seed: int = 0) -> LabeledCloud:
    pts, faces = sample_surface(mesh, n, np.random.default_rng(seed))
    return LabeledCloud(pts, mesh.labels[faces])


def sample_omni_with_normals(mesh: PartMesh, n: int = 10000, seed: int = 0) -> tuple[LabeledCloud, np.ndarray]:
    pts, faces = sample_surface(mesh, n, np.random.default_rng(seed))
    return LabeledCloud(pts, mesh.labels[faces]), mesh.normals[faces]


# ------------------------------------------------------------ placement

@dataclass(frozen=True)
class Workspace:
    """Tabletop at z=0 with an axis-aligned region for the object's center."""

    x_range: tuple[float, float] = (-0.15, 0.15)
    y_range: tuple[float, float] = (-0.15, 0.15)
    max_size: float = 0.5

    def __post_init__(self):
        if self.x_range[0] > self.x_range[1] or self.y_range[0] > self.y_range[1]:
            raise ValueError("workspace bounds are empty")


_AXIS_ROTATIONS = (
    np.eye(3),
    axis_angle_matrix((1, 0, 0), np.pi),
    axis_angle_matrix((1, 0, 0), np.pi / 2),
    axis_angle_matrix((1, 0, 0), -np.pi / 2),
    axis_angle_matrix((0, 1, 0), np.pi / 2),
    axis_angle_matrix((0, 1, 0), -np.pi / 2),
)


def rest_orientations(mesh: PartMesh, band: float = 1e-4) -> list[np.ndarray]:
    """Axis-aligned orientations in which the mesh rests stably on a plane.

    Stable means the area-weighted surface centroid projects inside the
    convex support polygon of the vertices touching the table.
    """
    centroid = (mesh.triangles.mean(axis=1) * mesh.areas[:, None]).sum(axis=0) / mesh.areas.sum()
    out = []
    for rot in _AXIS_ROTATIONS:
        v = mesh.vertices @ rot.T
        c = rot @ centroid
        low = v[v[:, 2] <= v[:, 2].min() + band][:, :2]
        low = np.unique(np.round(low, 9), axis=0)
        if len(low) < 3:
            continue
        try:
            hull = ConvexHull(low)
        except Exception:  # collinear support
            continue
        if hull.volume < 1e-6:
            continue
        if Delaunay(low[hull.vertices]).find_simplex(c[:2]) >= 0:
            out.append(rot)
    return out or [np.eye(3)]


def random_place(mesh: PartMesh, workspace: Workspace, seed: int) -> RigidPose:
    """Uniform stable rest orientation, uniform yaw, uniform center in bounds, resting on z=0."""
    extent = np.ptp(mesh.vertices, axis=0)
    if np.linalg.norm(extent) > workspace.max_size:
        raise DoesNotFit(f"{mesh.category} ({np.linalg.norm(extent):.3f} m) exceeds workspace")
    rng = np.random.default_rng(seed)
    rests = rest_orientations(mesh)
    rest = rests[int(rng.integers(len(rests)))]
    yaw = rng.uniform(0.0, 2 * np.pi)
    rot = axis_angle_matrix((0, 0, 1), yaw) @ rest
    x = rng.uniform(*workspace.x_range)
    y = rng.uniform(*workspace.y_range)
    v = mesh.vertices @ rot.T
    center = 0.5 * (v.min(axis=0) + v.max(axis=0))
    t = np.array([x - center[0], y - center[1], -v[:, 2].min()])
    return RigidPose(rot, t)
