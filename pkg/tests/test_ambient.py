"""Ambient-space geometry: geodesics, exp/log, transport, curvature."""

import math

import numpy as np
import pytest

from reachkit import ambient as amb
from reachkit.ambient import Box, Point, Tangent
from reachkit.errors import (
    DegeneratePlaneError,
    DomainEscapeError,
    MetricEvaluationError,
    NonuniqueGeodesicError,
)


def test_euclidean_straight_line(e2):
    p = e2.point([0.0, 0.0])
    v = e2.tangent(p, [1.0, 0.0])
    path = amb.geodesic(e2, p, v, steps=16)
    assert np.allclose(path.points[-1], [1.0, 0.0])
    assert np.allclose(path.velocities, [1.0, 0.0])


def test_sphere_quarter_great_circle(s2):
    p = s2.point([1.0, 0.0, 0.0])
    v = s2.tangent(p, [0.0, math.pi / 2, 0.0])
    path = amb.geodesic(s2, p, v, steps=32)
    assert np.allclose(path.points[-1], [0.0, 1.0, 0.0], atol=1e-12)


def test_flat_chart_matches_straight_line(flat_chart):
    p = Point(np.array([0.1, 0.2]))
    v = Tangent(p, np.array([1.0, 1.0]))
    path = amb.geodesic(flat_chart, p, v, steps=64)
    assert np.allclose(path.points[-1], [1.1, 1.2], atol=1e-8)


def test_sphere_orthogonal_distance(s2):
    d, _ = amb.distance_and_log(s2, s2.point([1, 0, 0]), s2.point([0, 0, 1]))
    assert abs(d - math.pi / 2) < 1e-12


def test_hyperbolic_distance_by_construction(h2):
    p = h2.point([1.0, 0.0, 0.0])
    q = h2.point([math.cosh(1.0), math.sinh(1.0), 0.0])
    d, v = amb.distance_and_log(h2, p, q)
    assert abs(d - 1.0) < 1e-12
    end = amb.exponential(h2, p, v)
    assert np.allclose(end.coords, q.coords, atol=1e-10)


@pytest.mark.parametrize("kind", ["euclidean", "sphere", "hyperbolic"])
def test_exp_log_roundtrip_space_forms(kind, e3, s2, h2):
    space = {"euclidean": e3, "sphere": s2, "hyperbolic": h2}[kind]
    rng = np.random.default_rng(11)
    for _ in range(10):
        if kind == "euclidean":
            p = Point(rng.normal(size=3))
            q = Point(rng.normal(size=3))
        elif kind == "sphere":
            a = rng.normal(size=3)
            b = a + 0.7 * rng.normal(size=3)  # avoid antipodal pairs
            p = Point(a / np.linalg.norm(a))
            q = Point(b / np.linalg.norm(b))
        else:
            xs = rng.normal(size=2)
            ys = rng.normal(size=2)
            p = Point(np.array([math.sqrt(1 + xs @ xs), *xs]))
            q = Point(np.array([math.sqrt(1 + ys @ ys), *ys]))
        d, v = amb.distance_and_log(space, p, q)
        end = amb.exponential(space, p, v)
        assert np.linalg.norm(end.coords - q.coords) < 1e-8
        assert abs(amb.norm(space, p.coords, v.components) - d) < 1e-10


def test_chart_exp_log_roundtrip(stereo_chart):
    p = Point(np.array([0.3, -0.1]))
    q = Point(np.array([-0.2, 0.4]))
    d, v = amb.distance_and_log(stereo_chart, p, q, steps=128)
    end = amb.exponential(stereo_chart, p, v, steps=128)
    assert np.linalg.norm(end.coords - q.coords) < 1e-6
    # oracle: stereographic points correspond to unit-sphere points
    def lift(x):
        s = float(x @ x)
        return np.array([2 * x[0], 2 * x[1], s - 1.0]) / (1.0 + s)
    exact = math.acos(float(np.clip(lift(p.coords) @ lift(q.coords), -1, 1)))
    assert abs(d - exact) < 1e-6


def test_antipodal_rejected(s2):
    with pytest.raises(NonuniqueGeodesicError):
        amb.distance_and_log(s2, s2.point([1, 0, 0]), s2.point([-1, 0, 0]))


def test_chart_domain_escape():
    space = amb.chart(2, lambda X: np.broadcast_to(
        np.eye(2), np.asarray(X).shape[:-1] + (2, 2)).copy(),
        domain=Box([-1.0, -1.0], [1.0, 1.0], [False, False]))
    p = Point(np.array([0.0, 0.0]))
    with pytest.raises(DomainEscapeError):
        amb.geodesic(space, p, Tangent(p, np.array([5.0, 0.0])), steps=32)


def test_non_finite_metric_raises():
    def metric(X):
        X = np.asarray(X, dtype=float)
        g = np.broadcast_to(np.eye(2), X.shape[:-1] + (2, 2)).copy()
        with np.errstate(divide="ignore"):
            g[..., 0, 0] = 1.0 / np.maximum(1.0 - np.abs(X[..., 0]), 0.0)
        return g
    space = amb.chart(2, metric)
    with pytest.raises(MetricEvaluationError):
        amb.metric_at(space, np.array([1.0, 0.0]))


def test_transport_euclidean_identity(e3):
    p = e3.point([1.0, 2.0, 3.0])
    v = e3.tangent(p, [0.5, -1.0, 0.25])
    path = amb.geodesic(e3, p, v, steps=8)
    w = amb.parallel_transport(e3, path, e3.tangent(p, [1.0, 1.0, 0.0]))
    assert np.allclose(w.components, [1.0, 1.0, 0.0])


def test_transport_isometry_space_forms(s2, h2):
    for space, p_coords, v_comp, w_comp in [
        (s2, [1, 0, 0], [0, 1.2, 0.3], [0, -0.2, 0.9]),
        (h2, [1, 0, 0], [0, 0.8, 0.1], [0, 0.3, -0.5]),
    ]:
        p = space.point(p_coords)
        v = Tangent(p, amb.project_to_tangent(space, p.coords, np.array(v_comp, float)))
        w0 = amb.project_to_tangent(space, p.coords, np.array(w_comp, float))
        path = amb.geodesic(space, p, v, steps=64)
        ts = path.ts
        U = amb.transport_field(space, path, Tangent(p, w0), ts)
        for i in (0, len(ts) // 2, -1):
            x = path.points[i]
            assert abs(amb.norm(space, x, U[i]) - amb.norm(space, p.coords, w0)) < 1e-10
            dot = amb.inner(space, x, U[i], path.velocities[i])
            assert abs(dot - amb.inner(space, p.coords, w0, v.components)) < 1e-9


def test_transport_isometry_chart(stereo_chart):
    p = Point(np.array([0.2, 0.1]))
    v = Tangent(p, np.array([0.6, -0.2]))
    path = amb.geodesic(stereo_chart, p, v, steps=256)
    w0 = np.array([0.1, 0.8])
    U = amb.transport_field(stereo_chart, path, Tangent(p, w0), path.ts)
    n0 = amb.norm(stereo_chart, path.points[0], U[0])
    n1 = amb.norm(stereo_chart, path.points[-1], U[-1])
    assert abs(n1 - n0) < 1e-9


def test_holonomy_latitude_loop(s2):
    # closed latitude loop at colatitude pi/3: the transported vector comes
    # back rotated by 2 pi (1 - cos theta) = pi (closed-form rotation oracle)
    theta = math.pi / 3
    n = 2048
    ts = np.linspace(0.0, 1.0, n + 1)
    phi = 2 * math.pi * ts
    pts = np.stack([math.sin(theta) * np.cos(phi),
                    math.sin(theta) * np.sin(phi),
                    math.cos(theta) * np.ones_like(phi)], axis=1)
    vel = np.stack([-2 * math.pi * math.sin(theta) * np.sin(phi),
                    2 * math.pi * math.sin(theta) * np.cos(phi),
                    np.zeros_like(phi)], axis=1)
    w0 = np.array([math.cos(theta), 0.0, -math.sin(theta)])
    W = amb.transport_along_curve(s2, ts, pts, vel, w0)
    e1 = w0
    e2v = np.cross(pts[0], e1)
    e2v /= np.linalg.norm(e2v)
    angle = math.atan2(float(W[-1] @ e2v), float(W[-1] @ e1))
    assert abs(abs(angle) - math.pi) < 1e-5
    assert abs(np.linalg.norm(W[-1]) - 1.0) < 1e-9


def test_sectional_curvature_space_forms(e3):
    sp = amb.sphere(2, 2.0)
    p = sp.point([2, 0, 0])
    v = Tangent(p, np.array([0.0, 1.0, 0.0]))
    w = Tangent(p, np.array([0.0, 0.3, 1.0]))
    assert abs(amb.sectional_curvature(sp, p, v, w) - 0.25) < 1e-12
    pE = e3.point([0, 0, 0])
    assert amb.sectional_curvature(
        e3, pE, Tangent(pE, np.array([1.0, 0, 0])),
        Tangent(pE, np.array([0, 1.0, 0]))) == 0.0


def test_sectional_curvature_stereographic(stereo_chart):
    p = Point(np.array([0.3, -0.1]))
    v = Tangent(p, np.array([1.0, 0.0]))
    w = Tangent(p, np.array([0.3, 1.0]))
    k = amb.sectional_curvature(stereo_chart, p, v, w)
    assert abs(k - 1.0) < 1e-5


def test_degenerate_plane_rejected(s2):
    p = s2.point([1, 0, 0])
    v = Tangent(p, np.array([0.0, 1.0, 0.0]))
    w = Tangent(p, np.array([0.0, 1.0 + 1e-9, 0.0]))
    with pytest.raises(DegeneratePlaneError):
        amb.sectional_curvature(s2, p, v, w)


def test_geodesic_speed_conservation(stereo_chart, s2):
    for space, p_c, v_c in [
        (stereo_chart, [0.3, -0.1], [0.8, 0.5]),
        (s2, [0, 1, 0], [1.1, 0, 0.4]),
    ]:
        p = Point(np.array(p_c, dtype=float))
        vv = amb.project_to_tangent(space, p.coords, np.array(v_c, dtype=float))
        path = amb.geodesic(space, p, Tangent(p, vv), steps=256)
        speeds = path.speeds()
        assert np.max(np.abs(speeds - speeds[0])) / speeds[0] < 1e-6
        assert abs(path.length - speeds[0]) < 1e-6 * speeds[0]


def test_flat_chart_agrees_with_euclidean(flat_chart, e2):
    pairs = [([0.0, 0.0], [1.0, 2.0]), ([0.5, -0.3], [-0.7, 0.9]),
             ([1.0, 1.0], [1.5, 0.25])]
    for a, b in pairs:
        pE, qE = e2.point(a), e2.point(b)
        pC, qC = Point(np.array(a)), Point(np.array(b))
        dE, vE = amb.distance_and_log(e2, pE, qE)
        dC, vC = amb.distance_and_log(flat_chart, pC, qC, steps=64)
        assert abs(dE - dC) < 1e-6
        assert np.linalg.norm(vE.components - vC.components) < 1e-6
        pathC = amb.geodesic(flat_chart, pC, vC, steps=64)
        w = amb.parallel_transport(flat_chart, pathC, Tangent(pC, np.array([0.3, 0.7])))
        assert np.linalg.norm(w.components - [0.3, 0.7]) < 1e-6


def test_point_and_tangent_constraints(s2, h2):
    x = s2.point([0.6, 0.8, 0.0]).coords
    assert amb.point_residual(s2, x) < 1e-9
    with pytest.raises(ValueError):
        s2.point([1.0, 1.0, 0.0])
    v = amb.project_to_tangent(s2, x, np.array([1.0, 1.0, 1.0]))
    assert amb.tangent_residual(s2, x, v) < 1e-9
    y = h2.point([math.cosh(0.5), math.sinh(0.5), 0.0]).coords
    assert amb.point_residual(h2, y) < 1e-9
    w = amb.project_to_tangent(h2, y, np.array([0.0, 1.0, 0.5]))
    assert amb.tangent_residual(h2, y, w) < 1e-9


def test_box_wrap_and_distance():
    box = Box([0.0, -1.0], [2 * math.pi, 1.0], [True, False])
    u = box.wrap(np.array([7.0, 0.5]))
    assert 0.0 <= u[0] < 2 * math.pi
    assert u[1] == 0.5
    d = box.param_distance(np.array([0.1, 0.0]), np.array([2 * math.pi - 0.1, 0.0]))
    assert abs(d - 0.2) < 1e-12
