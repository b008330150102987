"""Submanifold machinery: frames, second fundamental form, shape operator,
intrinsic geodesics and intrinsic transport."""

import math

import numpy as np
import pytest

from reachkit import ambient as amb
from reachkit import immersion as im
from reachkit import scenarios as scn
from reachkit.ambient import Box, Point, Tangent
from reachkit.errors import DomainEscapeError, ImmersionDegeneracyError


def unit_tangent(imm, u):
    g = im.induced_metric(imm, np.asarray(u, dtype=float))
    k = imm.param_dim
    w = np.zeros(k)
    w[0] = 1.0 / math.sqrt(g[0, 0])
    return w


def test_circle_frame(circle):
    fr = im.frame(circle, [0.3])
    assert np.allclose(fr.metric, [[4.0]])
    assert fr.normals.shape == (1, 2)


def test_torus_frame_metric(torus):
    th = 0.7
    fr = im.frame(torus, [th, 1.1])
    expect = np.diag([0.25, (2.0 + 0.5 * math.cos(th)) ** 2])
    assert np.allclose(fr.metric, expect, atol=1e-10)


def test_equator_normal_is_meridian(great_circle, s2):
    fr = im.frame(great_circle, [0.4])
    assert fr.normals.shape == (1, 3)
    n = fr.normals[0]
    assert abs(amb.norm(s2, fr.point, n) - 1.0) < 1e-9
    # the meridian direction at the equator is vertical
    assert abs(abs(n[2]) - 1.0) < 1e-9


def test_rank_deficiency_detected(e2):
    # cusp curve: the differential vanishes at u = 0
    imm = im.Immersion(e2, Box([-1.0], [1.0], [False]),
                       lambda U: np.stack([U[..., 0] ** 2, U[..., 0] ** 3], axis=-1))
    with pytest.raises(ImmersionDegeneracyError):
        im.frame(imm, [0.0])


def test_second_fundamental_round_sphere(round_sphere, e3):
    u = [1.1, 0.4]
    w = unit_tangent(round_sphere, u)
    Pi = im.second_fundamental(round_sphere, u, w, w)
    assert abs(np.linalg.norm(Pi.components) - 1.0) < 1e-6
    # points along the inward normal
    x = round_sphere.points(np.asarray(u, dtype=float))
    assert np.allclose(Pi.components, -x, atol=1e-6)


def test_second_fundamental_circle(e2):
    for r in (0.5, 1.0, 2.0):
        imm = scn.circle_immersion(e2, r)
        w = unit_tangent(imm, [0.9])
        Pi = im.second_fundamental(imm, [0.9], w, w)
        assert abs(np.linalg.norm(Pi.components) - 1.0 / r) < 1e-8


def test_second_fundamental_small_circle_fd_mode(s2):
    # no closed-form jacobian: exercises the finite-difference derivative
    # path against the geodesic-curvature oracle cot(colatitude)
    rho = math.pi / 3
    imm = im.Immersion(
        s2, Box([0.0], [2 * math.pi], [True]),
        lambda U: np.stack([math.sin(rho) * np.cos(U[..., 0]),
                            math.sin(rho) * np.sin(U[..., 0]),
                            math.cos(rho) * np.ones_like(U[..., 0])], axis=-1))
    u = [0.9]
    w = unit_tangent(imm, u)
    Pi = im.second_fundamental(imm, u, w, w)
    x = imm.points(np.asarray(u, dtype=float))
    val = float(amb.norm(s2, x, Pi.components))
    assert abs(val - 1.0 / math.tan(rho)) < 1e-5
    # the result is tangent to the model sphere
    assert abs(float(np.dot(Pi.components, x))) < 1e-6


def test_shape_operator_sphere_and_circle(e2, e3):
    sph = scn.sphere_immersion(e3, 0.5)
    fr = im.frame(sph, [1.0, 2.0])
    res = im.shape_operator_norm(sph, [1.0, 2.0], fr.normals[0])
    assert abs(res.norm - 2.0) < 1e-6
    # umbilic: both eigenvalues agree
    assert np.allclose(np.abs(res.eigenvalues), 2.0, atol=1e-6)

    circ = scn.circle_immersion(e2, 2.0)
    fr = im.frame(circ, [0.2])
    res = im.shape_operator_norm(circ, [0.2], fr.normals[0])
    assert abs(res.norm - 0.5) < 1e-8


def test_shape_operator_torus_inner_equator(torus):
    u = [math.pi, 0.4]
    fr = im.frame(torus, u)
    res = im.shape_operator_norm(torus, u, fr.normals[0])
    assert abs(res.norm - 2.0) < 1e-5
    # principal curvatures oracle: 1/r and cos(theta)/(R + r cos(theta))
    expected = sorted([2.0, -1.0 / 1.5])
    assert np.allclose(sorted(res.eigenvalues * res.eta_sign), expected, atol=1e-5)


def test_shape_operator_sign_convention(torus):
    u = [math.pi, 0.4]
    fr = im.frame(torus, u)
    res_plus = im.shape_operator_norm(torus, u, fr.normals[0])
    res_minus = im.shape_operator_norm(torus, u, -fr.normals[0])
    assert abs(res_plus.norm - res_minus.norm) < 1e-10
    assert res_plus.eta_sign == -res_minus.eta_sign


def test_intrinsic_geodesic_one_manifold_is_itself(circle):
    w = unit_tangent(circle, [0.0])
    crv = im.intrinsic_geodesic(circle, [0.0], w, 1.5)
    assert crv.unit_speed
    speeds = np.linalg.norm(crv.ambient_velocities(), axis=1)
    assert np.max(np.abs(speeds - 1.0)) < 1e-8


def test_torus_outer_equator_is_geodesic(torus):
    g = im.induced_metric(torus, np.array([0.0, 0.0]))
    w0 = np.array([0.0, 1.0 / math.sqrt(g[1, 1])])
    crv = im.intrinsic_geodesic(torus, [0.0, 0.0], w0, 1.0)
    assert np.max(np.abs(crv.us[:, 0])) < 1e-10
    # residual of the geodesic equation from finite differences of samples
    ds = crv.ss[1] - crv.ss[0]
    acc = (crv.us[2:] - 2 * crv.us[1:-1] + crv.us[:-2]) / ds ** 2
    gam, _ = im.covariant_split(torus, crv.us[1:-1])
    corr = np.einsum("ncab,na,nb->nc", gam, crv.dus[1:-1], crv.dus[1:-1])
    assert np.max(np.abs(acc + corr)) < 1e-6


def test_great_circle_matches_ambient_formula(e3):
    sph = scn.sphere_immersion(e3, 1.0)
    u0 = np.array([math.pi / 2, 0.0])   # (1, 0, 0) on the equator
    g = im.induced_metric(sph, u0)
    w0 = np.array([1.0 / math.sqrt(g[0, 0]), 0.0])  # head along the meridian
    crv = im.intrinsic_geodesic(sph, u0, w0, 1.0)
    pts = crv.ambient_points()
    # closed-form great circle through (1,0,0) with vertical initial velocity
    expect = np.stack([np.cos(crv.ss), np.zeros_like(crv.ss), -np.sin(crv.ss)], axis=1)
    assert np.max(np.linalg.norm(pts - expect, axis=1)) < 1e-6


def test_ambient_acceleration_is_normal(torus):
    g = im.induced_metric(torus, np.array([0.9, 0.4]))
    L = np.linalg.cholesky(g)
    w0 = np.linalg.inv(L).T @ np.array([0.6, 0.8])
    # dense samples keep the second-difference oracle below the tolerance
    crv = im.intrinsic_geodesic(torus, [0.9, 0.4], w0, 0.8, steps_per_unit=1024)
    ds = crv.ss[1] - crv.ss[0]
    pts = crv.ambient_points()
    acc = (pts[2:] - 2 * pts[1:-1] + pts[:-2]) / ds ** 2
    J = torus.jacobian(crv.us[1:-1])
    tangential = np.einsum("nmk,nm->nk", J, acc)  # euclidean ambient
    assert np.max(np.abs(tangential)) < 1e-6 * np.max(np.linalg.norm(acc, axis=1))


def test_intrinsic_transport_one_manifold(circle):
    w = unit_tangent(circle, [0.0])
    crv = im.intrinsic_geodesic(circle, [0.0], w, 1.0)
    out = im.intrinsic_parallel_transport(circle, crv, w)
    assert np.allclose(out[-1], crv.dus[-1], atol=1e-9)


def test_intrinsic_transport_matches_space_form(e3, s2):
    # transport on the immersed unit sphere vs the embedded model's closed form
    sph = scn.sphere_immersion(e3, 1.0)
    u0 = np.array([math.pi / 2, 0.2])
    g = im.induced_metric(sph, u0)
    L = np.linalg.cholesky(g)
    w_dir = np.linalg.inv(L).T @ np.array([1.0, 0.0])
    v0_par = np.linalg.inv(L).T @ np.array([0.0, 1.0])
    crv = im.intrinsic_geodesic(sph, u0, w_dir, 0.9)
    out = im.intrinsic_parallel_transport(sph, crv, v0_par)
    J_end = sph.jacobian(crv.us[-1])
    got = J_end @ out[-1]

    p = s2.point(sph.points(u0))
    v_amb = sph.jacobian(u0) @ w_dir * 0.9
    path = amb.geodesic(s2, p, Tangent(p, v_amb), steps=64)
    w_amb0 = sph.jacobian(u0) @ v0_par
    expect = amb.parallel_transport(s2, path, Tangent(p, w_amb0)).components
    assert np.linalg.norm(got - expect) < 1e-6


def test_intrinsic_transport_norm_preserved(torus):
    g = im.induced_metric(torus, np.array([0.3, 1.7]))
    L = np.linalg.cholesky(g)
    w0 = np.linalg.inv(L).T @ np.array([0.8, -0.6])
    v0 = np.linalg.inv(L).T @ np.array([0.1, 0.99])
    crv = im.intrinsic_geodesic(torus, [0.3, 1.7], w0, 1.2)
    out = im.intrinsic_parallel_transport(torus, crv, v0)
    g_end = im.induced_metric(torus, crv.us[-1])
    n_end = math.sqrt(out[-1] @ g_end @ out[-1])
    n_start = math.sqrt(v0 @ g @ v0)
    assert abs(n_end - n_start) < 1e-9


def test_gauss_curvature_spot_check(e3):
    # intrinsic curvature of the induced metric on a radius-r sphere is 1/r^2
    r = 0.8
    sph = scn.sphere_immersion(e3, r)
    induced = amb.chart(2, lambda U: im.induced_metric(sph, U))
    p = Point(np.array([1.2, 0.7]))
    k = amb.sectional_curvature(induced, p, Tangent(p, np.array([1.0, 0.1])),
                                Tangent(p, np.array([-0.2, 1.0])))
    assert abs(k - 1.0 / r ** 2) < 1e-4


def test_totally_geodesic_detection(great_circle, torus):
    assert great_circle.is_totally_geodesic()
    assert not torus.is_totally_geodesic()


def test_connect_points_torus_meridian(torus):
    crv = im.connect_points(torus, np.array([0.4, 1.0]), np.array([2.2, 1.0]))
    assert np.allclose(crv.us[-1], [2.2, 1.0], atol=1e-6)
    assert abs(crv.s_max - 0.5 * 1.8) < 1e-6


def test_connect_points_shorter_wrap(circle):
    crv = im.connect_points(circle, np.array([0.1]), np.array([2 * math.pi - 0.1]))
    # the short way across the seam has arclength 2 * 0.2 = 0.4
    assert abs(crv.s_max - 0.4) < 1e-6


def test_domain_escape_intrinsic(e3):
    sph = scn.sphere_immersion(e3, 1.0)
    w = unit_tangent(sph, [0.3, 0.0])
    with pytest.raises(DomainEscapeError):
        # heading over the pole exits the closed colatitude axis
        im.intrinsic_geodesic(sph, [0.3, 0.0], -w, 1.0)


def test_fd_jacobian_matches_closed_form(torus):
    U = np.array([[0.3, 1.1], [2.0, 4.4]])
    fd_imm = im.Immersion(torus.space, torus.domain, torus._map)
    J_fd = fd_imm.jacobian(U)
    J_cf = torus.jacobian(U)
    assert np.max(np.abs(J_fd - J_cf)) < 1e-9
    D2_fd = fd_imm.second_derivative(U)
    D2_cf = torus.second_derivative(U)
    assert np.max(np.abs(D2_fd - D2_cf)) < 1e-6


def test_immersion_image_satisfies_model_constraints(small_circle, s2):
    U = im.sample_grid(small_circle.domain, [64])
    F = small_circle.points(U)
    for x in F[::8]:
        assert amb.point_residual(s2, x) < 1e-8
    fr = im.frame(small_circle, U[3])
    for a in range(fr.tangents.shape[1]):
        assert amb.tangent_residual(s2, fr.point, fr.tangents[:, a]) < 1e-8


def test_unbounded_nonperiodic_domain_rejected(e2):
    with pytest.raises(ValueError):
        im.Immersion(e2, Box([0.0], [np.inf], [False]),
                     lambda U: np.stack([U[..., 0], U[..., 0]], axis=-1))
