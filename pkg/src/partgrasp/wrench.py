"""Two-contact force-closure tests on discretized friction cones.

Each contact is a soft finger: ``m`` friction-cone edges plus two torsional
generators bounded by ``mu * patch_radius``. Torques are taken about the
contact midpoint and divided by half the contact gap, so the margin does not
depend on object scale.

The first cone edge is placed in the plane spanned by the contact normal and
the closing line. With that alignment the polyhedral cone contains the line
exactly when the analytic cone does, for any edge count.
"""
from __future__ import annotations

import numpy as np
from scipy.optimize import linprog

CONE_EDGES = 8
PATCH_RADIUS = 0.005
MARGIN_EPS = 1e-6


def _tangent_basis(normal, hint):
    t1 = hint - np.dot(hint, normal) * normal
    if np.linalg.norm(t1) < 1e-9:
        t1 = np.cross(normal, [1.0, 0.0, 0.0])
        if np.linalg.norm(t1) < 1e-9:
            t1 = np.cross(normal, [0.0, 1.0, 0.0])
    t1 /= np.linalg.norm(t1)
    return t1, np.cross(normal, t1)


def cone_edges(inward, toward, mu: float, m: int = CONE_EDGES) -> np.ndarray:
    """Unit generators of an m-sided friction cone about ``inward``."""
    nrm = np.asarray(inward, dtype=np.float64)
    nrm = nrm / np.linalg.norm(nrm)
    t1, t2 = _tangent_basis(nrm, np.asarray(toward, dtype=np.float64))
    a = 2 * np.pi * np.arange(m) / m
    e = nrm + mu * (np.cos(a)[:, None] * t1 + np.sin(a)[:, None] * t2)
    return e / np.linalg.norm(e, axis=1, keepdims=True)


def contact_wrenches(c1, n1, c2, n2, mu: float, m: int = CONE_EDGES,
                     patch_radius: float = PATCH_RADIUS) -> np.ndarray:
    """6 x K matrix of primitive wrenches for two soft-finger contacts.

    ``n1`` and ``n2`` are outward surface normals at the contacts.
    """
    c1, c2 = np.asarray(c1, float), np.asarray(c2, float)
    n1, n2 = np.asarray(n1, float), np.asarray(n2, float)
    mid = 0.5 * (c1 + c2)
    scale = max(0.5 * np.linalg.norm(c2 - c1), 1e-3)
    gamma = mu * patch_radius / scale
    cols = []
    for c, n, other in ((c1, n1, c2), (c2, n2, c1)):
        inward = -n / np.linalg.norm(n)
        f = cone_edges(inward, other - c, mu, m)
        r = (c - mid) / scale
        cols.append(np.hstack([f, np.cross(r, f)]))
        base_t = np.cross(r, inward)
        for s in (1.0, -1.0):
            cols.append(np.hstack([inward, base_t + s * gamma * inward])[None])
    return np.vstack(cols).T


def closure_margin(w: np.ndarray) -> float:
    """Largest ``d`` with ``W @ lam = 0``, ``sum(lam) = 1``, ``lam >= d``.

    Positive iff the origin lies strictly inside the convex hull of the
    columns; returns 0 when W does not have full row rank and -inf when the
    equality system is infeasible.
    """
    k = w.shape[1]
    c = np.zeros(k + 1)
    c[-1] = -1.0
    a_eq = np.zeros((w.shape[0] + 1, k + 1))
    a_eq[:-1, :k] = w
    a_eq[-1, :k] = 1.0
    b_eq = np.zeros(w.shape[0] + 1)
    b_eq[-1] = 1.0
    a_ub = np.hstack([-np.eye(k), np.ones((k, 1))])
    res = linprog(c, A_ub=a_ub, b_ub=np.zeros(k), A_eq=a_eq, b_eq=b_eq,
                  bounds=[(None, None)] * (k + 1), method="highs")
    if res.status != 0:
        return float("-inf")
    delta = float(res.x[-1])
    if np.linalg.matrix_rank(w, tol=1e-9) < w.shape[0]:
        return min(delta, 0.0)
    return delta


def in_friction_cones(c1, n1, c2, n2, mu: float) -> bool:
    """Both contact normals within atan(mu) of the closing line."""
    u = np.asarray(c2, float) - np.asarray(c1, float)
    norm = np.linalg.norm(u)
    if norm <= 0:
        return False
    u /= norm
    cos_fc = np.cos(np.arctan(mu))
    a1 = np.dot(u, -np.asarray(n1) / np.linalg.norm(n1))
    a2 = np.dot(-u, -np.asarray(n2) / np.linalg.norm(n2))
    return bool(a1 >= cos_fc and a2 >= cos_fc)


def force_closure(c1, n1, c2, n2, mu: float, m: int = CONE_EDGES) -> tuple[bool, float]:
    """Verdict and signed LP margin (columns normalized so the margin lies in [., 1/K])."""
    w = contact_wrenches(c1, n1, c2, n2, mu, m)
    delta = closure_margin(w)
    return delta >= MARGIN_EPS, delta


def normalized_quality(c1, n1, c2, n2, mu: float, m: int = CONE_EDGES) -> float:
    """LP margin rescaled to [0, 1]; 0 for any grasp without closure."""
    w = contact_wrenches(c1, n1, c2, n2, mu, m)
    delta = closure_margin(w)
    if delta < MARGIN_EPS:
        return 0.0
    return float(min(1.0, delta * w.shape[1]))
