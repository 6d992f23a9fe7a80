import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from partgrasp.errors import DegenerateCorrespondences, EmptyCloud, TooFewPoints
from partgrasp.geometry import (LabeledCloud, RigidPose, SpatialIndex, estimate_normals, fps_downsample,
                                icp_register, merge_clouds, rotation_angle, voxel_downsample)

seeds = st.integers(0, 2**32 - 1)


def random_pose(seed):
    rng = np.random.default_rng(seed)
    r = Rotation.random(random_state=seed).as_matrix()
    return RigidPose(r, rng.uniform(-1, 1, 3))


def cloud(points, labels=None):
    points = np.asarray(points, dtype=float)
    return LabeledCloud(points, np.zeros(len(points), int) if labels is None else labels)


# ------------------------------------------------------------ poses

def test_pose_rejects_reflection():
    with pytest.raises(ValueError):
        RigidPose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


@given(seeds, seeds, seeds)
def test_pose_composition_is_associative(a, b, c):
    pa, pb, pc = random_pose(a), random_pose(b), random_pose(c)
    assert ((pa @ pb) @ pc).allclose(pa @ (pb @ pc), atol=1e-9)


@given(seeds)
def test_pose_times_inverse_is_identity(s):
    p = random_pose(s)
    assert (p @ p.inverse()).allclose(RigidPose.identity(), atol=1e-9)


@given(seeds)
def test_pose_list_roundtrip(s):
    p = random_pose(s)
    assert len(p.to_list()) == 12
    assert RigidPose.from_list(p.to_list()).allclose(p, atol=1e-12)


# ------------------------------------------------------------ spatial index

@given(seeds, st.integers(1, 400))
def test_nearest_matches_brute_force(seed, n):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n, 3))
    q = rng.normal(size=(50, 3))
    d, i = SpatialIndex(pts).nearest(q)
    brute = np.linalg.norm(q[:, None] - pts[None], axis=2)
    assert np.allclose(d, brute.min(axis=1))
    assert np.allclose(brute[np.arange(len(q)), i], brute.min(axis=1))


def test_nearest_on_1000_queries(rng):
    pts = rng.uniform(-1, 1, (2000, 3))
    q = rng.uniform(-1.2, 1.2, (1000, 3))
    _, i = SpatialIndex(pts).nearest(q)
    brute = np.linalg.norm(q[:, None] - pts[None], axis=2).min(axis=1)
    assert np.allclose(np.linalg.norm(pts[i] - q, axis=1), brute, atol=0)


def test_within_matches_brute_force(rng):
    pts = rng.uniform(-1, 1, (500, 3))
    got = SpatialIndex(pts).within([0.1, 0.2, 0.0], 0.4)
    want = np.flatnonzero(np.linalg.norm(pts - [0.1, 0.2, 0.0], axis=1) <= 0.4)
    assert np.array_equal(got, want)


def test_empty_index():
    with pytest.raises(EmptyCloud):
        SpatialIndex(np.zeros((0, 3)))


# ------------------------------------------------------------ normals

def test_planar_normals(rng):
    pts = np.c_[rng.uniform(0, 1, (200, 2)), np.zeros(200)]
    n = estimate_normals(pts, 8)
    assert np.allclose(np.abs(n[:, 2]), 1.0)
    assert np.allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-9)


def test_normals_face_the_viewpoint(rng):
    pts = np.c_[rng.uniform(0, 1, (200, 2)), np.zeros(200)]
    n = estimate_normals(pts, 8, viewpoint=[0.5, 0.5, -2.0])
    assert np.all(n[:, 2] < 0)


def test_cylinder_normals_are_radial():
    theta, z = np.meshgrid(np.linspace(0, 2 * np.pi, 60, endpoint=False), np.linspace(0, 0.2, 30))
    theta, z = theta.ravel(), z.ravel()
    pts = np.c_[0.05 * np.cos(theta), 0.05 * np.sin(theta), z]
    n = estimate_normals(pts, 8, viewpoint=None)
    radial = np.c_[np.cos(theta), np.sin(theta), np.zeros_like(z)]
    angle = np.degrees(np.arccos(np.clip(np.abs(np.sum(n * radial, axis=1)), 0, 1)))
    assert angle.max() < 5.0


def test_normals_need_k_plus_one_points():
    pts = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], float)
    with pytest.raises(TooFewPoints):
        estimate_normals(pts, 3)
    n = estimate_normals(np.vstack([pts, [3, 0, 0]]), 3)
    assert np.allclose(np.linalg.norm(n, axis=1), 1.0)


@given(seeds)
def test_normals_unit_length(seed):
    pts = np.random.default_rng(seed).normal(size=(60, 3))
    n = estimate_normals(pts, 8, viewpoint=[0, 0, 10])
    assert np.allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-9)


# ------------------------------------------------------------ downsampling

def test_voxel_single_voxel():
    c = cloud([[0.1, 0.1, 0.1], [0.2, 0.2, 0.2], [0.3, 0.1, 0.2]])
    out = voxel_downsample(c, 1.0)
    assert len(out) == 1
    assert np.allclose(out.points[0], c.points.mean(axis=0))


def test_voxel_cube_corners():
    corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], float) + 0.25
    assert len(voxel_downsample(cloud(corners), 10.0)) == 1
    assert len(voxel_downsample(cloud(corners), 0.5)) == 8


def test_voxel_majority_and_tie_break():
    c = cloud([[0.1, 0, 0], [0.2, 0, 0], [0.3, 0, 0]], [3, 3, 1])
    assert voxel_downsample(c, 1.0).labels.tolist() == [3]
    tie = cloud([[0.1, 0, 0], [0.2, 0, 0]], [5, 2])
    assert voxel_downsample(tie, 1.0).labels.tolist() == [2]


@given(seeds, st.floats(0.05, 0.5))
def test_voxel_idempotent(seed, voxel):
    rng = np.random.default_rng(seed)
    c = cloud(rng.uniform(-1, 1, (300, 3)), rng.integers(0, 3, 300))
    once = voxel_downsample(c, voxel)
    twice = voxel_downsample(once, voxel)
    assert np.allclose(once.points, twice.points) and np.array_equal(once.labels, twice.labels)


def test_fps_full_size_is_permutation(rng):
    pts = rng.normal(size=(50, 3))
    out = fps_downsample(cloud(pts), 50, seed=3)
    assert sorted(map(tuple, out.points)) == sorted(map(tuple, pts))


def test_fps_two_clusters(rng):
    a = rng.normal(0, 0.01, (100, 3))
    b = rng.normal(0, 0.01, (100, 3)) + 5
    out = fps_downsample(cloud(np.vstack([a, b])), 2, seed=0)
    assert sorted(out.points[:, 0] > 2.5) == [False, True]


def test_fps_pads_and_is_deterministic(rng):
    c = cloud(rng.normal(size=(10, 3)))
    a = fps_downsample(c, 25, seed=9)
    b = fps_downsample(c, 25, seed=9)
    assert len(a) == 25 and np.array_equal(a.points, b.points)
    src = {tuple(p) for p in c.points}
    assert all(tuple(p) in src for p in a.points)


def test_fps_empty():
    with pytest.raises(EmptyCloud):
        fps_downsample(cloud(np.zeros((0, 3))), 4, 0)


# ------------------------------------------------------------ registration

def test_icp_identity(rng):
    pts = rng.normal(size=(200, 3))
    reg = icp_register(pts, pts)
    assert reg.pose.allclose(RigidPose.identity(), atol=1e-9)
    assert reg.rmse < 1e-12


@given(seeds)
def test_icp_recovers_small_transform(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-0.1, 0.1, (500, 3)) * [1.0, 0.6, 0.3]
    t = RigidPose.from_axis_angle(rng.normal(size=3), rng.uniform(0, 0.15), rng.uniform(-0.005, 0.005, 3))
    reg = icp_register(pts, t.apply(pts), max_iter=100, tol=1e-12)
    assert np.linalg.norm(reg.pose.translation - t.translation) <= 1e-3
    assert rotation_angle(reg.pose.rotation.T @ t.rotation) <= 1e-3


def test_icp_degenerate_source():
    with pytest.raises(DegenerateCorrespondences):
        icp_register(np.ones((20, 3)), np.random.default_rng(0).normal(size=(20, 3)))


def test_merge_keeps_sensor_origins(rng):
    a = LabeledCloud(rng.normal(size=(5, 3)), np.zeros(5), RigidPose(np.eye(3), [0, 0, 1]))
    b = LabeledCloud(rng.normal(size=(4, 3)), np.ones(4), RigidPose(np.eye(3), [0, 1, 0]))
    m = merge_clouds([a, b])
    assert len(m) == 9
    assert np.allclose(m.sensor_origins()[:5], [0, 0, 1]) and np.allclose(m.sensor_origins()[5:], [0, 1, 0])
