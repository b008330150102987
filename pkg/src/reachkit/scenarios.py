"""Built-in analytic scenarios: ambient spaces, immersions and the default
sampling/tolerance settings each scenario is verified with.

Chart metrics come from two named analytic families (the round-sphere metric
in stereographic coordinates and a conformally perturbed flat metric), so no
expression parsing is involved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import ambient as amb
from .ambient import Box
from .errors import ScenarioNotFoundError
from .immersion import Immersion

__all__ = [
    "ScenarioDefinition",
    "REGISTRY",
    "scenario_names",
    "get_scenario",
    "stereographic_sphere_metric",
    "perturbed_flat_metric",
    "circle_immersion",
    "ellipse_immersion",
    "sphere_immersion",
    "torus_immersion",
    "sphere_circle_immersion",
    "chart_circle_immersion",
]


# ---------------------------------------------------------------------------
# chart metric families

def stereographic_sphere_metric(radius: float = 1.0) -> Callable:
    """Round metric of a radius-R sphere in stereographic plane coordinates."""
    R2 = radius * radius

    def metric(X):
        X = np.asarray(X, dtype=float)
        lam = 4.0 * R2 * R2 / (R2 + np.sum(X ** 2, axis=-1)) ** 2
        n = X.shape[-1]
        return lam[..., None, None] * np.eye(n)

    return metric


def perturbed_flat_metric(amplitude: float = 0.1, wave: float = 1.0) -> Callable:
    """Conformally perturbed flat metric exp(2 a sin(w x) cos(w y)) I."""

    def metric(X):
        X = np.asarray(X, dtype=float)
        phi = amplitude * np.sin(wave * X[..., 0]) * np.cos(wave * X[..., 1])
        n = X.shape[-1]
        return np.exp(2.0 * phi)[..., None, None] * np.eye(n)

    return metric


# ---------------------------------------------------------------------------
# immersion builders

def circle_immersion(space: amb.AmbientSpace, radius: float = 2.0) -> Immersion:
    r = float(radius)

    def mapping(U):
        t = U[..., 0]
        return np.stack([r * np.cos(t), r * np.sin(t)], axis=-1)

    def jac(U):
        t = U[..., 0]
        return np.stack([-r * np.sin(t), r * np.cos(t)], axis=-1)[..., None]

    return Immersion(space, Box([0.0], [2 * math.pi], [True]), mapping,
                     jacobian=jac, name=f"circle(r={r:g})")


def ellipse_immersion(space: amb.AmbientSpace, a: float = 2.0, b: float = 1.0) -> Immersion:
    a, b = float(a), float(b)

    def mapping(U):
        t = U[..., 0]
        return np.stack([a * np.cos(t), b * np.sin(t)], axis=-1)

    def jac(U):
        t = U[..., 0]
        return np.stack([-a * np.sin(t), b * np.cos(t)], axis=-1)[..., None]

    return Immersion(space, Box([0.0], [2 * math.pi], [True]), mapping,
                     jacobian=jac, name=f"ellipse(a={a:g},b={b:g})")


def sphere_immersion(space: amb.AmbientSpace, radius: float = 1.0) -> Immersion:
    r = float(radius)

    def mapping(U):
        th, ph = U[..., 0], U[..., 1]
        return np.stack([r * np.sin(th) * np.cos(ph),
                         r * np.sin(th) * np.sin(ph),
                         r * np.cos(th)], axis=-1)

    def jac(U):
        th, ph = U[..., 0], U[..., 1]
        d_th = np.stack([r * np.cos(th) * np.cos(ph),
                         r * np.cos(th) * np.sin(ph),
                         -r * np.sin(th)], axis=-1)
        d_ph = np.stack([-r * np.sin(th) * np.sin(ph),
                         r * np.sin(th) * np.cos(ph),
                         np.zeros_like(th)], axis=-1)
        return np.stack([d_th, d_ph], axis=-1)

    return Immersion(space, Box([0.0, 0.0], [math.pi, 2 * math.pi], [False, True]),
                     mapping, jacobian=jac, name=f"sphere(r={r:g})")


def torus_immersion(space: amb.AmbientSpace, big_radius: float = 2.0,
                    tube_radius: float = 0.5) -> Immersion:
    R, r = float(big_radius), float(tube_radius)

    def mapping(U):
        th, ph = U[..., 0], U[..., 1]
        w = R + r * np.cos(th)
        return np.stack([w * np.cos(ph), w * np.sin(ph), r * np.sin(th)], axis=-1)

    def jac(U):
        th, ph = U[..., 0], U[..., 1]
        w = R + r * np.cos(th)
        d_th = np.stack([-r * np.sin(th) * np.cos(ph),
                         -r * np.sin(th) * np.sin(ph),
                         r * np.cos(th)], axis=-1)
        d_ph = np.stack([-w * np.sin(ph), w * np.cos(ph), np.zeros_like(th)], axis=-1)
        return np.stack([d_th, d_ph], axis=-1)

    return Immersion(space, Box([0.0, 0.0], [2 * math.pi, 2 * math.pi], [True, True]),
                     mapping, jacobian=jac, name=f"torus(R={R:g},r={r:g})")


def sphere_circle_immersion(space: amb.AmbientSpace, colatitude: float) -> Immersion:
    """Circle of constant colatitude on an embedded sphere (pi/2 = equator)."""
    R = space.radius
    s, c = R * math.sin(colatitude), R * math.cos(colatitude)

    def mapping(U):
        t = U[..., 0]
        return np.stack([s * np.cos(t), s * np.sin(t), c * np.ones_like(t)], axis=-1)

    def jac(U):
        t = U[..., 0]
        return np.stack([-s * np.sin(t), s * np.cos(t), np.zeros_like(t)], axis=-1)[..., None]

    return Immersion(space, Box([0.0], [2 * math.pi], [True]), mapping,
                     jacobian=jac, name=f"sphere-circle(colat={colatitude:g})")


def chart_circle_immersion(space: amb.AmbientSpace, radius: float = 1.0) -> Immersion:
    """Circle in chart coordinates (the equator when the chart carries the
    stereographic round metric and radius matches the sphere radius)."""
    r = float(radius)

    def mapping(U):
        t = U[..., 0]
        return np.stack([r * np.cos(t), r * np.sin(t)], axis=-1)

    def jac(U):
        t = U[..., 0]
        return np.stack([-r * np.sin(t), r * np.cos(t)], axis=-1)[..., None]

    return Immersion(space, Box([0.0], [2 * math.pi], [True]), mapping,
                     jacobian=jac, name=f"chart-circle(r={r:g})")


# ---------------------------------------------------------------------------
# registry

@dataclass(frozen=True)
class ScenarioDefinition:
    """A named analytic scenario with its default verification settings.

    ``build`` accepts two optional parameter dicts (immersion family
    parameters and ambient/chart parameters) so configs can rescale the
    built-in families without new code.
    """

    name: str
    build: Callable[..., tuple]
    c_lower: float
    surface_samples: int
    normal_samples: int
    ambient_samples: int
    region: Optional[tuple] = None
    declared_reach: Optional[float] = None     # skip estimators when set
    fd_tau: float = 0.3                        # probe radius for L''(0) checks
    fd_h: float = 1e-3
    quadrature_order: int = 16
    ode_steps: int = 256
    dist_tol: float = 1e-6
    cluster_tol: float = 5e-2
    pass_tol: float = 1e-6
    equality_tol: float = 1e-3
    notes: str = ""

    def instantiate(self, immersion_params=None, ambient_params=None):
        return self.build(immersion_params or {}, ambient_params or {})


CHART_FAMILIES = {
    "stereographic_sphere": stereographic_sphere_metric,
    "perturbed_flat": perturbed_flat_metric,
}


def _circle(imm_p=None, amb_p=None):
    space = amb.euclidean(2)
    return space, circle_immersion(space, **{"radius": 2.0, **(imm_p or {})})


def _ellipse(imm_p=None, amb_p=None):
    space = amb.euclidean(2)
    return space, ellipse_immersion(space, **{"a": 2.0, "b": 1.0, **(imm_p or {})})


def _round_sphere(imm_p=None, amb_p=None):
    space = amb.euclidean(3)
    return space, sphere_immersion(space, **{"radius": 1.0, **(imm_p or {})})


def _torus(imm_p=None, amb_p=None):
    space = amb.euclidean(3)
    params = {"big_radius": 2.0, "tube_radius": 0.5, **(imm_p or {})}
    return space, torus_immersion(space, **params)


def _great_circle(imm_p=None, amb_p=None):
    space = amb.sphere(2, **{"radius": 1.0, **(amb_p or {})})
    colat = (imm_p or {}).get("colatitude", math.pi / 2)
    return space, sphere_circle_immersion(space, colat)


def _small_circle(imm_p=None, amb_p=None):
    space = amb.sphere(2, **{"radius": 1.0, **(amb_p or {})})
    colat = (imm_p or {}).get("colatitude", math.pi / 3)
    return space, sphere_circle_immersion(space, colat)


def _chart_geodesic(imm_p=None, amb_p=None):
    amb_p = dict(amb_p or {})
    family = amb_p.pop("family", "stereographic_sphere")
    if family not in CHART_FAMILIES:
        raise ValueError(f"unknown chart metric family {family!r}; "
                         f"known: {sorted(CHART_FAMILIES)}")
    metric = CHART_FAMILIES[family](**amb_p)
    space = amb.chart(2, metric,
                      domain=Box([-12.0, -12.0], [12.0, 12.0], [False, False]),
                      name=family)
    return space, chart_circle_immersion(space, **{"radius": 1.0, **(imm_p or {})})


REGISTRY = {
    "circle": ScenarioDefinition(
        name="circle", build=_circle, c_lower=0.0,
        surface_samples=32, normal_samples=2, ambient_samples=900,
        region=((-3.0, -3.0), (3.0, 3.0)), fd_tau=1.0, fd_h=1e-3),
    "ellipse": ScenarioDefinition(
        name="ellipse", build=_ellipse, c_lower=0.0,
        surface_samples=64, normal_samples=2, ambient_samples=900,
        region=((-2.6, -1.6), (2.6, 1.6)), fd_tau=0.3, fd_h=1e-3),
    "round-sphere": ScenarioDefinition(
        name="round-sphere", build=_round_sphere, c_lower=0.0,
        surface_samples=48, normal_samples=2, ambient_samples=1000,
        region=((-1.4, -1.4, -1.4), (1.4, 1.4, 1.4)), fd_tau=0.55, fd_h=1e-3),
    "torus": ScenarioDefinition(
        name="torus", build=_torus, c_lower=0.0,
        surface_samples=100, normal_samples=2, ambient_samples=2200,
        region=((-2.8, -2.8, -0.9), (2.8, 2.8, 0.9)), fd_tau=0.3, fd_h=1e-3),
    "great-circle-on-sphere": ScenarioDefinition(
        name="great-circle-on-sphere", build=_great_circle, c_lower=1.0,
        surface_samples=32, normal_samples=2, ambient_samples=500,
        fd_tau=0.3, fd_h=1e-3,
        notes="totally geodesic: acceleration checks report not-applicable"),
    "small-circle-on-sphere": ScenarioDefinition(
        name="small-circle-on-sphere", build=_small_circle, c_lower=1.0,
        surface_samples=32, normal_samples=2, ambient_samples=500,
        fd_tau=0.3, fd_h=1e-3),
    "geodesic-on-chart-sphere-metric": ScenarioDefinition(
        name="geodesic-on-chart-sphere-metric", build=_chart_geodesic,
        c_lower=1.0 - 1e-6,
        surface_samples=8, normal_samples=2, ambient_samples=0,
        declared_reach=math.pi / 2, fd_tau=0.3, fd_h=1e-3,
        notes="reach declared analytically: numerical estimation on chart "
              "ambients needs a two-point shooting solve per distance and is "
              "excluded from the default pipeline for runtime reasons"),
}


def scenario_names() -> list:
    return list(REGISTRY.keys())


def get_scenario(name: str) -> ScenarioDefinition:
    try:
        return REGISTRY[name]
    except KeyError:
        raise ScenarioNotFoundError(
            f"unknown scenario {name!r}; known: {', '.join(scenario_names())}")
