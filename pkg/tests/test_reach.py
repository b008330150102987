"""Foot points, both reach estimators, and reach-assigning classification."""

import math

import numpy as np

from reachkit import ambient as amb
from reachkit import reach as rch
from reachkit import scenarios as scn
from reachkit.ambient import Box


def test_halton_deterministic():
    a = rch.halton_points(16, 2)
    b = rch.halton_points(16, 2)
    assert np.array_equal(a, b)
    assert np.all((a >= 0) & (a < 1))


def test_foot_points_circle_radial(circle):
    fp = rch.foot_points(circle, np.array([3.0, 0.0]))
    assert abs(fp.distance - 1.0) < 1e-9
    assert fp.multiplicity == 1
    assert abs(float(fp.minimizers[0][0][0]) % (2 * math.pi)) < 1e-6


def test_foot_points_circle_center_degenerate(circle):
    fp = rch.foot_points(circle, np.array([0.0, 0.0]))
    assert abs(fp.distance - 2.0) < 1e-9
    assert fp.multiplicity >= 2        # whole-fiber degenerate cluster


def test_foot_points_torus_center(torus):
    fp = rch.foot_points(torus, np.array([0.0, 0.0, 0.0]))
    assert abs(fp.distance - 1.5) < 1e-8
    assert fp.multiplicity >= 2
    # all minimizers sit on the inner equator theta = pi
    for u, d in fp.minimizers[:4]:
        assert abs(abs(math.remainder(u[0], 2 * math.pi)) - math.pi) < 1e-4


def test_foot_points_flat_chart_smoke(flat_chart):
    imm = scn.chart_circle_immersion(flat_chart, 1.0)
    fp = rch.foot_points(imm, np.array([2.0, 0.0]), starts=8)
    assert abs(fp.distance - 1.0) < 1e-5


def test_collision_circle(circle):
    est = rch.reach_normal_collision(circle, surface_samples=16)
    assert abs(est.tau_hat - 2.0) < 0.01 * 2.0
    assert est.status == "ok"
    assert np.linalg.norm(est.witness_point) < 1e-3   # the center


def test_collision_small_circle(small_circle):
    est = rch.reach_normal_collision(small_circle, surface_samples=16)
    assert abs(est.tau_hat - math.pi / 3) < 0.02 * math.pi / 3


def test_collision_circle_in_3space(e3):
    # codimension 2: normal directions sampled on a great-circle grid
    from reachkit.immersion import Immersion

    def mapping(U):
        t = U[..., 0]
        return np.stack([np.cos(t), np.sin(t), np.zeros_like(t)], axis=-1)

    ring = Immersion(e3, Box([0.0], [2 * math.pi], [True]), mapping)
    est = rch.reach_normal_collision(ring, surface_samples=12, normal_samples=8)
    assert abs(est.tau_hat - 1.0) < 0.02


def test_collision_unbounded_report(circle):
    est = rch.reach_normal_collision(circle, surface_samples=8, horizon=0.5)
    assert est.status == "unbounded"
    assert est.tau_hat == math.inf


def test_medial_circle_and_witness(circle):
    est = rch.reach_medial_infimum(
        circle, ambient_samples=500,
        region=(np.array([-3.0, -3.0]), np.array([3.0, 3.0])))
    assert abs(est.tau_hat - 2.0) < 0.02 * 2.0
    assert np.linalg.norm(est.witness_point) < 1e-3
    assert est.witness_feet.multiplicity >= 2
    # witness invariant: tau_hat equals the distance to the nearest foot
    fp = rch.foot_points(circle, est.witness_point)
    assert abs(fp.distance - est.tau_hat) < 1e-6


def test_medial_ellipse(ellipse):
    est = rch.reach_medial_infimum(
        ellipse, ambient_samples=700,
        region=(np.array([-2.6, -1.6]), np.array([2.6, 1.6])))
    assert abs(est.tau_hat - 0.5) < 0.02 * 0.5
    assert np.linalg.norm(est.witness_point - [1.5, 0.0]) < 0.01 or \
        np.linalg.norm(est.witness_point - [-1.5, 0.0]) < 0.01


def test_medial_insufficient_resolution(circle):
    # a probe region far away from the medial set finds no crossings
    est = rch.reach_medial_infimum(
        circle, ambient_samples=16,
        region=(np.array([2.05, 2.05]), np.array([2.4, 2.4])))
    assert est.status == "insufficient_resolution"


def test_method_agreement_small_circle(small_circle):
    nc = rch.reach_normal_collision(small_circle, surface_samples=16)
    mi = rch.reach_medial_infimum(small_circle, ambient_samples=400)
    mean = 0.5 * (nc.tau_hat + mi.tau_hat)
    assert abs(nc.tau_hat - mi.tau_hat) <= 0.02 * mean


def test_assigners_circle_bottleneck(circle):
    est = rch.reach_normal_collision(circle, surface_samples=16)
    ras = rch.reach_assigning_points(circle, est, tol=1e-4)
    assert ras and ras[0].classification == "bottleneck"
    assert np.linalg.norm(ras[0].q) < 1e-3


def test_assigners_ellipse_unique(ellipse):
    est = rch.reach_normal_collision(ellipse, surface_samples=64)
    ras = rch.reach_assigning_points(ellipse, est, tol=1e-4)
    assert ras and ras[0].classification == "unique_foot_point"
    q = np.abs(ras[0].q)
    assert np.linalg.norm(q - [1.5, 0.0]) < 5e-3


def test_assigners_torus_bottleneck(scenario_data):
    data = scenario_data("torus")
    ras = rch.reach_assigning_points(data.imm, data.collision, tol=1e-4,
                                     cache=data.cache)
    assert ras and ras[0].classification == "bottleneck"
    # witness on the core circle: radius 2, z = 0
    q = ras[0].q
    assert abs(np.linalg.norm(q[:2]) - 2.0) < 1e-3
    assert abs(q[2]) < 1e-3
    # the foot fiber is a whole meridian circle
    assert ras[0].foot_points.multiplicity >= 2


def test_witness_distance_invariant(scenario_data):
    for name in ("circle", "small-circle-on-sphere"):
        data = scenario_data(name)
        for est in (data.collision, data.medial):
            fp = rch.foot_points(data.imm, est.witness_point, cache=data.cache)
            assert abs(fp.distance - est.tau_hat) < 1e-6


def test_monotone_refinement_ladder(circle):
    taus = []
    for n in (8, 16, 32):
        est = rch.reach_normal_collision(circle, surface_samples=n,
                                         march_step=0.25, refine_argmin=False)
        taus.append(est.tau_hat)
    assert taus[1] <= taus[0] + 1e-9
    assert taus[2] <= taus[1] + 1e-9


def test_classification_stable_under_halved_cluster_tol(ellipse, circle):
    for imm, expected in ((ellipse, "unique_foot_point"), (circle, "bottleneck")):
        est = rch.reach_normal_collision(imm, surface_samples=32)
        for ct in (5e-2, 2.5e-2):
            ras = rch.reach_assigning_points(imm, est, tol=1e-4, cluster_tol=ct)
            assert ras and ras[0].classification == expected


def test_foot_point_set_invariants(torus):
    fp = rch.foot_points(torus, np.array([0.0, 0.0, 0.0]))
    d0 = fp.distance
    for u, d in fp.minimizers:
        assert d <= d0 + fp.dist_tol
    reps = [u for u, _ in fp.minimizers]
    for i in range(len(reps)):
        for j in range(i + 1, len(reps)):
            assert torus.domain.param_distance(reps[i], reps[j]) > fp.cluster_tol


def test_hyperbolic_geodesic_circle(h2):
    import math as _math
    from reachkit.immersion import Immersion

    r = 0.8

    def mapping(U):
        t = U[..., 0]
        return np.stack([_math.cosh(r) * np.ones_like(t),
                         _math.sinh(r) * np.cos(t),
                         _math.sinh(r) * np.sin(t)], axis=-1)

    circ_h = Immersion(h2, Box([0.0], [2 * math.pi], [True]), mapping)
    est = rch.reach_normal_collision(circ_h, surface_samples=16)
    assert abs(est.tau_hat - r) < 0.01 * r
    fp = rch.foot_points(circ_h, np.array([1.0, 0.0, 0.0]))
    assert abs(fp.distance - r) < 1e-9
    assert fp.multiplicity >= 2          # the center sees the whole fiber


def test_collision_witness_location_ellipse(ellipse):
    est = rch.reach_normal_collision(ellipse, surface_samples=64)
    w = np.abs(est.witness_point)
    assert np.linalg.norm(w - [1.5, 0.0]) < 1e-3   # medial-segment endpoint
