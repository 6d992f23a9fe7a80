import numpy as np
import pytest

from partgrasp.wrench import MARGIN_EPS, cone_edges, force_closure, in_friction_cones, normalized_quality

from oracles import dense_wrenches, positively_spans

MU = 0.5


def tilted(normal, degrees, rng):
    """Rotate ``normal`` by ``degrees`` about a random perpendicular axis."""
    axis = np.cross(normal, rng.normal(size=3))
    axis /= np.linalg.norm(axis)
    a = np.radians(degrees)
    return normal * np.cos(a) + np.cross(axis, normal) * np.sin(a)


def test_cube_antipodal_closure():
    ok, delta = force_closure(np.array([-0.02, 0, 0]), np.array([-1.0, 0, 0]),
                              np.array([0.02, 0, 0]), np.array([1.0, 0, 0]), MU)
    assert ok and delta > MARGIN_EPS


def test_same_face_has_no_closure():
    ok, _ = force_closure(np.array([0.0, 0, 0.02]), np.array([0, 0, 1.0]),
                          np.array([0.01, 0, 0.02]), np.array([0, 0, 1.0]), MU)
    assert not ok


def test_thirty_degrees_off_antipodal_fails():
    rng = np.random.default_rng(0)
    c1, c2 = np.array([-0.02, 0, 0]), np.array([0.02, 0, 0])
    n1 = tilted(np.array([-1.0, 0, 0]), 30, rng)
    assert not in_friction_cones(c1, n1, c2, np.array([1.0, 0, 0]), MU)
    ok, _ = force_closure(c1, n1, c2, np.array([1.0, 0, 0]), MU)
    assert not ok


def test_cone_edges_sit_at_friction_angle():
    e = cone_edges([0, 0, 1.0], [1.0, 0, 0], MU, 8)
    ang = np.degrees(np.arccos(e @ [0, 0, 1.0]))
    assert np.allclose(ang, np.degrees(np.arctan(MU)))
    assert np.allclose(np.linalg.norm(e, axis=1), 1.0)


def test_quality_range():
    q = normalized_quality(np.array([-0.02, 0, 0]), np.array([-1.0, 0, 0]),
                           np.array([0.02, 0, 0]), np.array([1.0, 0, 0]), MU)
    assert 0 < q <= 1
    assert normalized_quality(np.zeros(3), np.array([0, 0, 1.0]), np.array([0.01, 0, 0]),
                              np.array([0, 0, 1.0]), MU) == 0.0


@pytest.mark.parametrize("seed", range(4))
def test_agrees_with_dense_span_oracle(seed):
    rng = np.random.default_rng(seed)
    for _ in range(15):
        c1 = rng.uniform(-0.05, 0.05, 3)
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        c2 = c1 + d * rng.uniform(0.005, 0.08)
        n1 = tilted(-d, rng.uniform(0, 45), rng)
        n2 = tilted(d, rng.uniform(0, 45), rng)
        ok, delta = force_closure(c1, n1, c2, n2, MU)
        want = positively_spans(dense_wrenches(c1, n1, c2, n2, MU))
        assert ok == want or abs(delta) < MARGIN_EPS
