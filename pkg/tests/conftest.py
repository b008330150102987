"""Shared fixtures: spaces, immersions and cached reach estimates."""

import math
import time

import numpy as np
import pytest

from reachkit import ambient as amb
from reachkit import reach as rch
from reachkit import scenarios as scn

SESSION_T0 = time.perf_counter()


@pytest.fixture(scope="session")
def e2():
    return amb.euclidean(2)


@pytest.fixture(scope="session")
def e3():
    return amb.euclidean(3)


@pytest.fixture(scope="session")
def s2():
    return amb.sphere(2, 1.0)


@pytest.fixture(scope="session")
def h2():
    return amb.hyperbolic(2, -1.0)


@pytest.fixture(scope="session")
def stereo_chart():
    return amb.chart(2, scn.stereographic_sphere_metric(1.0),
                     domain=amb.Box([-12.0, -12.0], [12.0, 12.0], [False, False]))


@pytest.fixture(scope="session")
def flat_chart():
    def metric(X):
        X = np.asarray(X, dtype=float)
        return np.broadcast_to(np.eye(2), X.shape[:-1] + (2, 2)).copy()
    return amb.chart(2, metric)


@pytest.fixture(scope="session")
def circle(e2):
    return scn.circle_immersion(e2, 2.0)


@pytest.fixture(scope="session")
def ellipse(e2):
    return scn.ellipse_immersion(e2, 2.0, 1.0)


@pytest.fixture(scope="session")
def round_sphere(e3):
    return scn.sphere_immersion(e3, 1.0)


@pytest.fixture(scope="session")
def torus(e3):
    return scn.torus_immersion(e3, 2.0, 0.5)


@pytest.fixture(scope="session")
def great_circle(s2):
    return scn.sphere_circle_immersion(s2, math.pi / 2)


@pytest.fixture(scope="session")
def small_circle(s2):
    return scn.sphere_circle_immersion(s2, math.pi / 3)


class ScenarioData:
    """Reach estimates for one registry scenario at default resolutions."""

    def __init__(self, name):
        self.name = name
        sdef = scn.get_scenario(name)
        self.sdef = sdef
        self.space, self.imm = sdef.instantiate()
        t0 = time.perf_counter()
        self.cache = rch._ProjectionCache(self.imm)
        self.collision = rch.reach_normal_collision(
            self.imm, surface_samples=sdef.surface_samples,
            normal_samples=sdef.normal_samples, cache=self.cache)
        region = None
        if sdef.region is not None:
            region = (np.asarray(sdef.region[0], float),
                      np.asarray(sdef.region[1], float))
        self.medial = rch.reach_medial_infimum(
            self.imm, ambient_samples=sdef.ambient_samples, region=region,
            dist_tol=sdef.dist_tol, cluster_tol=sdef.cluster_tol,
            cache=self.cache)
        self.reach_seconds = time.perf_counter() - t0


_SCENARIO_CACHE = {}


@pytest.fixture(scope="session")
def scenario_data():
    """Lazy per-scenario reach estimation, shared across the whole session."""

    def get(name):
        if name not in _SCENARIO_CACHE:
            _SCENARIO_CACHE[name] = ScenarioData(name)
        return _SCENARIO_CACHE[name]

    return get


def pytest_sessionfinish(session, exitstatus):
    elapsed = time.perf_counter() - SESSION_T0
    print(f"\n[suite] total wall time {elapsed:.1f}s (budget 300s)")
    if elapsed > 300.0 and exitstatus == 0:
        print("[suite] FAIL: run exceeded the 5 minute budget")
        session.exitstatus = 1
