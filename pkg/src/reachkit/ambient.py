"""Model ambient spaces: geodesics, exp/log, parallel transport, curvature.

Three space forms are supported in embedded models (Euclidean space, the
round sphere in R^(n+1), the hyperboloid sheet in Minkowski R^(n,1)) plus
chart-defined metrics, where everything is obtained numerically from the
metric matrix: Christoffel symbols by central finite differences, geodesics
and transport by fixed-step RK4, curvature by second differences.

All operations are pure; an AmbientSpace is immutable after construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import (
    ConvergenceError,
    DegeneratePlaneError,
    DomainEscapeError,
    MetricEvaluationError,
    NonuniqueGeodesicError,
    ResolutionError,
)

__all__ = [
    "Box",
    "Point",
    "Tangent",
    "GeodesicPath",
    "AmbientSpace",
    "euclidean",
    "sphere",
    "hyperbolic",
    "chart",
    "inner",
    "norm",
    "tangent_basis",
    "point_residual",
    "tangent_residual",
    "project_to_tangent",
    "geodesic",
    "exponential",
    "distance",
    "distance_many",
    "distance_and_log",
    "parallel_transport",
    "transport_field",
    "transport_along_curve",
    "sectional_curvature",
    "sectional_curvature_many",
    "christoffel",
]

_DEFAULT_ODE_STEPS = 256  # RK4 steps per unit parameter
_CHRISTOFFEL_STEP = 1e-5  # relative step for metric first differences
_CURVATURE_STEP = 2.5e-4  # relative step for Christoffel differences


# ---------------------------------------------------------------------------
# domains

@dataclass(frozen=True)
class Box:
    """Axis-aligned coordinate box with per-axis periodicity flags."""

    lows: np.ndarray
    highs: np.ndarray
    periodic: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lows", np.asarray(self.lows, dtype=float))
        object.__setattr__(self, "highs", np.asarray(self.highs, dtype=float))
        object.__setattr__(self, "periodic", np.asarray(self.periodic, dtype=bool))
        if not np.all(self.highs > self.lows):
            raise ValueError("box must have positive extent on every axis")

    @property
    def dim(self) -> int:
        return self.lows.size

    @property
    def spans(self) -> np.ndarray:
        return self.highs - self.lows

    def wrap(self, u: np.ndarray) -> np.ndarray:
        """Wrap periodic axes into [low, high); leave other axes untouched."""
        u = np.asarray(u, dtype=float)
        out = u.copy()
        per = self.periodic
        if np.any(per):
            lo = self.lows[per]
            span = self.spans[per]
            out[..., per] = (u[..., per] - lo) % span + lo
        return out

    def contains(self, u: np.ndarray, slack: float = 0.0) -> np.ndarray:
        """Containment mask; periodic axes always contain."""
        u = np.asarray(u, dtype=float)
        ok = np.ones(u.shape[:-1], dtype=bool)
        for a in range(self.dim):
            if self.periodic[a]:
                continue
            ok &= (u[..., a] >= self.lows[a] - slack) & (u[..., a] <= self.highs[a] + slack)
        return ok

    def clamp(self, u: np.ndarray) -> np.ndarray:
        u = self.wrap(u)
        free = ~self.periodic
        if np.any(free):
            u[..., free] = np.clip(u[..., free], self.lows[free], self.highs[free])
        return u

    def param_delta(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Shortest signed difference a-b, wrap-aware on periodic axes."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        d = a - b
        per = self.periodic
        if np.any(per):
            span = self.spans[per]
            d_per = d[..., per]
            d_per = (d_per + span / 2.0) % span - span / 2.0
            d = d.copy()
            d[..., per] = d_per
        return d

    def param_distance(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return np.linalg.norm(self.param_delta(a, b), axis=-1)


# ---------------------------------------------------------------------------
# points, tangents, paths

@dataclass(frozen=True)
class Point:
    """A point in the model representation of the ambient space."""

    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", np.asarray(self.coords, dtype=float))


@dataclass(frozen=True)
class Tangent:
    """A tangent vector attached to a base point, in model coordinates."""

    base: Point
    components: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "components", np.asarray(self.components, dtype=float))


@dataclass(frozen=True)
class GeodesicPath:
    """Sampled geodesic on parameter range [0, 1].

    ``points[i]``/``velocities[i]`` sample the curve and its parameter
    velocity at ``ts[i]``.  ``length`` is the Riemannian arc length, equal to
    the (constant) speed because the parameter span is 1.
    """

    space: "AmbientSpace"
    ts: np.ndarray
    points: np.ndarray
    velocities: np.ndarray
    length: float

    @property
    def start(self) -> Point:
        return Point(self.points[0])

    @property
    def end(self) -> Point:
        return Point(self.points[-1])

    @property
    def initial_velocity(self) -> Tangent:
        return Tangent(self.start, self.velocities[0])

    def samples(self):
        for t, x, v in zip(self.ts, self.points, self.velocities):
            yield float(t), Point(x), Tangent(Point(x), v)

    def speeds(self) -> np.ndarray:
        return np.array(
            [norm(self.space, x, v) for x, v in zip(self.points, self.velocities)]
        )


# ---------------------------------------------------------------------------
# ambient space

@dataclass(frozen=True)
class AmbientSpace:
    """A model Riemannian manifold of dimension ``dim``.

    kind is one of ``euclidean``, ``sphere``, ``hyperbolic``, ``chart``.
    Sphere and hyperbolic use embedded models (coords live in R^(dim+1));
    chart coords live in R^dim with a user metric ``(..., n) -> (..., n, n)``.
    """

    kind: str
    dim: int
    curvature_constant: Optional[float] = None
    radius: Optional[float] = None
    metric: Optional[Callable[[np.ndarray], np.ndarray]] = None
    domain: Optional[Box] = None
    name: str = ""

    @property
    def ambient_dim(self) -> int:
        return self.dim + 1 if self.kind in ("sphere", "hyperbolic") else self.dim

    @property
    def is_space_form(self) -> bool:
        return self.kind in ("euclidean", "sphere", "hyperbolic")

    def point(self, coords) -> Point:
        p = Point(np.asarray(coords, dtype=float))
        res = point_residual(self, p.coords)
        if res > 1e-7 * max(1.0, float(np.max(np.abs(p.coords)))):
            raise ValueError(f"coords violate the {self.kind} model constraint (residual {res:.3e})")
        return p

    def tangent(self, point: Point, components) -> Tangent:
        return Tangent(point, np.asarray(components, dtype=float))


def euclidean(n: int) -> AmbientSpace:
    return AmbientSpace(kind="euclidean", dim=n, curvature_constant=0.0, name=f"euclidean({n})")


def sphere(n: int, radius: float = 1.0) -> AmbientSpace:
    if radius <= 0:
        raise ValueError("sphere radius must be positive")
    return AmbientSpace(
        kind="sphere",
        dim=n,
        curvature_constant=1.0 / radius**2,
        radius=float(radius),
        name=f"sphere({n},R={radius:g})",
    )


def hyperbolic(n: int, curvature: float = -1.0) -> AmbientSpace:
    if curvature >= 0:
        raise ValueError("hyperbolic curvature must be negative")
    radius = 1.0 / math.sqrt(-curvature)
    return AmbientSpace(
        kind="hyperbolic",
        dim=n,
        curvature_constant=float(curvature),
        radius=radius,
        name=f"hyperbolic({n},c={curvature:g})",
    )


def chart(n: int, metric: Callable[[np.ndarray], np.ndarray], domain: Optional[Box] = None,
          name: str = "") -> AmbientSpace:
    return AmbientSpace(kind="chart", dim=n, metric=metric, domain=domain,
                        name=name or f"chart({n})")


# ---------------------------------------------------------------------------
# model inner products and constraints

def _minkowski_inner(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    prod = a * b
    return np.sum(prod[..., 1:], axis=-1) - prod[..., 0]


def metric_at(space: AmbientSpace, x: np.ndarray) -> np.ndarray:
    """Chart metric matrix with finiteness check."""
    g = np.asarray(space.metric(np.asarray(x, dtype=float)), dtype=float)
    if not np.all(np.isfinite(g)):
        raise MetricEvaluationError(f"metric not finite at {x}")
    return g


def inner(space: AmbientSpace, x: np.ndarray, a: np.ndarray, b: np.ndarray):
    """Riemannian inner product of model vectors a, b at base x (batched)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if space.kind == "hyperbolic":
        return _minkowski_inner(a, b)
    if space.kind == "chart":
        g = metric_at(space, x)
        return np.einsum("...i,...ij,...j->...", a, g, b)
    return np.sum(a * b, axis=-1)


def norm(space: AmbientSpace, x: np.ndarray, a: np.ndarray):
    val = inner(space, x, a, a)
    return np.sqrt(np.maximum(val, 0.0))


def point_residual(space: AmbientSpace, x: np.ndarray) -> float:
    """Violation of the model constraint (0 for euclidean/chart)."""
    x = np.asarray(x, dtype=float)
    if space.kind == "sphere":
        return abs(float(np.linalg.norm(x)) - space.radius)
    if space.kind == "hyperbolic":
        if x[..., 0] <= 0:
            return math.inf
        return abs(float(_minkowski_inner(x, x)) + space.radius**2)
    return 0.0


def tangent_residual(space: AmbientSpace, x: np.ndarray, v: np.ndarray) -> float:
    """Violation of the tangency constraint at x."""
    if space.kind == "sphere":
        return abs(float(np.dot(x, v)))
    if space.kind == "hyperbolic":
        return abs(float(_minkowski_inner(x, v)))
    return 0.0


def project_to_tangent(space: AmbientSpace, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Project a model-coordinate vector onto the tangent space at x."""
    v = np.asarray(v, dtype=float)
    if space.kind == "sphere":
        return v - (np.dot(x, v) / space.radius**2) * x
    if space.kind == "hyperbolic":
        return v + (_minkowski_inner(x, v) / space.radius**2) * x
    return v


def tangent_basis(space: AmbientSpace, x: np.ndarray) -> np.ndarray:
    """Deterministic orthonormal basis of T_x N, rows = basis vectors.

    Built by projecting the standard basis in declaration order and
    Gram-Schmidt orthonormalizing with respect to the model inner product.
    """
    m = space.ambient_dim
    basis = []
    for i in range(m):
        e = np.zeros(m)
        e[i] = 1.0
        w = project_to_tangent(space, x, e)
        for b in basis:
            w = w - inner(space, x, w, b) * b
        s = float(norm(space, x, w))
        if s > 1e-10:
            basis.append(w / s)
        if len(basis) == space.dim:
            break
    if len(basis) != space.dim:
        raise MetricEvaluationError("could not build a full tangent basis")
    return np.array(basis)


# ---------------------------------------------------------------------------
# chart Christoffel symbols and curvature (finite differences)

def _fd_steps(x: np.ndarray, rel: float) -> np.ndarray:
    return rel * (1.0 + np.abs(x))


def metric_many(space: AmbientSpace, X: np.ndarray, strict: bool = True) -> np.ndarray:
    """Vectorized chart metric evaluation with finiteness check."""
    g = np.asarray(space.metric(np.asarray(X, dtype=float)), dtype=float)
    if strict and not np.all(np.isfinite(g)):
        raise MetricEvaluationError("metric not finite on batch")
    return g


def christoffel(space: AmbientSpace, X: np.ndarray, strict: bool = True) -> np.ndarray:
    """Christoffel symbols Gamma^k_{ij} of a chart metric, batched over X.

    Metric derivatives come from central differences with per-axis step
    h_a = 1e-5 * (1 + |x_a|).  With ``strict=False`` rows touching a
    non-finite metric come back as NaN instead of raising.
    """
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    n = space.dim
    h = _fd_steps(X, _CHRISTOFFEL_STEP)  # (B, n)

    # stencil: center + 2n shifted copies, evaluated in one metric call
    shifts = [X]
    for a in range(n):
        dx = np.zeros_like(X)
        dx[:, a] = h[:, a]
        shifts.append(X + dx)
        shifts.append(X - dx)
    g_all = metric_many(space, np.concatenate(shifts, axis=0), strict=strict)
    bad = ~np.all(np.isfinite(g_all), axis=(-2, -1))
    if np.any(bad):
        g_all = g_all.copy()
        g_all[bad] = np.eye(n)
    B = X.shape[0]
    g0 = g_all[:B]
    dg = np.empty((B, n, n, n))  # dg[:, a, i, j] = d_a g_ij
    for a in range(n):
        gp = g_all[B * (1 + 2 * a): B * (2 + 2 * a)]
        gm = g_all[B * (2 + 2 * a): B * (3 + 2 * a)]
        dg[:, a] = (gp - gm) / (2.0 * h[:, a])[:, None, None]

    g_inv = np.linalg.inv(g0)
    # Gamma^k_{ij} = 1/2 g^{kl} (d_i g_jl + d_j g_il - d_l g_ij);
    # dg[b, a, i, j] = d_a g_ij, so with axes (b, i, j, l):
    bracket = dg + dg.transpose(0, 2, 1, 3) - dg.transpose(0, 3, 2, 1)
    gamma = 0.5 * np.einsum("bkl,bijl->bkij", g_inv, bracket)
    if np.any(bad):
        gamma[bad.reshape(2 * n + 1, B).any(axis=0)] = np.nan
    if single:
        return gamma[0]
    return gamma


def sectional_curvature(space: AmbientSpace, p: Point, v: Tangent, w: Tangent) -> float:
    """Sectional curvature of the plane spanned by v, w at p.

    Space forms return their constant.  Chart metrics evaluate the curvature
    tensor from finite differences of the Christoffel symbols and normalize
    by the Gram determinant of (v, w).
    """
    x = p.coords
    a = np.asarray(v.components, dtype=float)
    b = np.asarray(w.components, dtype=float)
    gram = _plane_gram(space, x, a, b)
    if gram < 1e-12:
        raise DegeneratePlaneError("v, w are numerically parallel")
    if space.is_space_form:
        return float(space.curvature_constant)
    num = _curvature_pairing(space, x, a, b)
    return float(num / gram)


def _plane_gram(space, x, a, b) -> float:
    aa = float(inner(space, x, a, a))
    bb = float(inner(space, x, b, b))
    ab = float(inner(space, x, a, b))
    return aa * bb - ab * ab


def sectional_curvature_many(space: AmbientSpace, X: np.ndarray, V: np.ndarray,
                             W: np.ndarray) -> np.ndarray:
    """Batched sectional curvature (rows of X, V, W aligned)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if space.is_space_form:
        return np.full(X.shape[0], float(space.curvature_constant))
    g = metric_many(space, X)
    vv = np.einsum("bi,bij,bj->b", V, g, V)
    ww = np.einsum("bi,bij,bj->b", W, g, W)
    vw = np.einsum("bi,bij,bj->b", V, g, W)
    gram = vv * ww - vw * vw
    if np.any(gram < 1e-12):
        raise DegeneratePlaneError("v, w are numerically parallel")
    R = _riemann_mixed_many(space, X)
    rv = np.einsum("blkij,bi,bj,bk->bl", R, V, W, W)
    num = np.einsum("bl,blm,bm->b", rv, g, V)
    return num / gram


def _curvature_pairing(space: AmbientSpace, x: np.ndarray, v: np.ndarray, w: np.ndarray) -> float:
    """<R(v,w)w, v> for a chart metric at x (single point)."""
    R = _riemann_mixed_many(space, x[None, :])[0]
    rv = np.einsum("lkij,i,j,k->l", R, v, w, w)
    g = metric_at(space, x)
    return float(np.einsum("l,lm,m->", rv, g, v))


def _riemann_mixed_many(space: AmbientSpace, X: np.ndarray) -> np.ndarray:
    """R^l_{kij} with (R(e_i, e_j) e_k)^l = R^l_{kij}, by central FD of Gamma.

    Batched over the rows of X (shape (B, n) -> (B, n, n, n, n)).
    """
    n = space.dim
    B = X.shape[0]
    h = _fd_steps(X, _CURVATURE_STEP)  # (B, n)
    pts = [X]
    for a in range(n):
        dx = np.zeros_like(X)
        dx[:, a] = h[:, a]
        pts.append(X + dx)
        pts.append(X - dx)
    gammas = christoffel(space, np.concatenate(pts, axis=0))
    g0 = gammas[:B]
    dG = np.empty((B, n, n, n, n))  # dG[b, a, k, i, j] = d_a Gamma^k_{ij}
    for a in range(n):
        gp = gammas[B * (1 + 2 * a): B * (2 + 2 * a)]
        gm = gammas[B * (2 + 2 * a): B * (3 + 2 * a)]
        dG[:, a] = (gp - gm) / (2.0 * h[:, a])[:, None, None, None]
    # R^l_{kij} = d_i Gamma^l_{jk} - d_j Gamma^l_{ik}
    #             + Gamma^l_{im} Gamma^m_{jk} - Gamma^l_{jm} Gamma^m_{ik}
    term = np.einsum("biljk->blkij", dG) - np.einsum("bjlik->blkij", dG)
    term += np.einsum("blim,bmjk->blkij", g0, g0) - np.einsum("bljm,bmik->blkij", g0, g0)
    return term


# ---------------------------------------------------------------------------
# geodesics

def geodesic(space: AmbientSpace, p: Point, v: Tangent, steps: int = _DEFAULT_ODE_STEPS
             ) -> GeodesicPath:
    """Geodesic sigma on [0,1] with sigma(0)=p, sigma'(0)=v.

    Space forms use the closed-form line / great circle / hyperbolic formulas;
    chart metrics integrate the geodesic equation with RK4.
    """
    if steps < 2:
        raise ValueError("steps must be >= 2")
    x0 = p.coords
    v0 = np.asarray(v.components, dtype=float)
    ts = np.linspace(0.0, 1.0, steps + 1)
    speed = float(norm(space, x0, v0))

    if space.kind == "euclidean":
        pts = x0[None, :] + ts[:, None] * v0[None, :]
        vel = np.repeat(v0[None, :], ts.size, axis=0)
        return GeodesicPath(space, ts, pts, vel, speed)

    if space.kind in ("sphere", "hyperbolic"):
        pts, vel = _space_form_geodesic_samples(space, x0, v0, ts)
        return GeodesicPath(space, ts, pts, vel, speed)

    pts, vel = _chart_geodesic_integrate(space, x0, v0, ts)
    return GeodesicPath(space, ts, pts, vel, speed)


def exponential(space: AmbientSpace, p: Point, v: Tangent, steps: int = _DEFAULT_ODE_STEPS
                ) -> Point:
    """Endpoint exp_p(v)."""
    if space.kind == "euclidean":
        return Point(p.coords + v.components)
    if space.kind in ("sphere", "hyperbolic"):
        pts, _ = _space_form_geodesic_samples(space, p.coords, v.components, np.array([1.0]))
        return Point(pts[0])
    return geodesic(space, p, v, steps).end


def _space_form_geodesic_samples(space, x0, v0, ts):
    R = space.radius
    s = float(norm(space, x0, v0))
    if s == 0.0:
        pts = np.repeat(x0[None, :], ts.size, axis=0)
        return pts, np.zeros_like(pts)
    phase = (s / R) * ts
    if space.kind == "sphere":
        c, sn = np.cos(phase), np.sin(phase)
        pts = c[:, None] * x0[None, :] + (R / s) * sn[:, None] * v0[None, :]
        vel = -(s / R) * sn[:, None] * x0[None, :] + c[:, None] * v0[None, :]
    else:
        ch, sh = np.cosh(phase), np.sinh(phase)
        pts = ch[:, None] * x0[None, :] + (R / s) * sh[:, None] * v0[None, :]
        vel = (s / R) * sh[:, None] * x0[None, :] + ch[:, None] * v0[None, :]
    return pts, vel


def _chart_domain_check(space, x):
    if space.domain is not None and not bool(np.all(space.domain.contains(x))):
        raise DomainEscapeError(f"geodesic left the chart domain at {x}")


def _chart_geodesic_integrate(space, x0, v0, ts):
    """Fixed-step RK4 for x'' + Gamma(x) x' x' = 0, sampled at ts (uniform)."""
    nseg = ts.size - 1
    dt = 1.0 / nseg
    pts = np.empty((ts.size, space.dim))
    vel = np.empty_like(pts)
    x, v = np.array(x0, dtype=float), np.array(v0, dtype=float)
    pts[0], vel[0] = x, v
    for i in range(nseg):
        x, v = _rk4_geodesic_step(space, x, v, dt)
        _chart_domain_check(space, x)
        pts[i + 1], vel[i + 1] = x, v
    return pts, vel


def _geodesic_acc(space, xs, vs, strict: bool = True):
    gam = christoffel(space, xs, strict=strict)
    return -np.einsum("...kij,...i,...j->...k", gam, vs, vs)


def _rk4_geodesic_step(space, x, v, dt):
    # one RK4 step; the 4 stage points are batched into a single
    # Christoffel call pattern of 4 sequential evaluations
    a1 = _geodesic_acc(space, x, v)
    x2, v2 = x + 0.5 * dt * v, v + 0.5 * dt * a1
    a2 = _geodesic_acc(space, x2, v2)
    x3, v3 = x + 0.5 * dt * v2, v + 0.5 * dt * a2
    a3 = _geodesic_acc(space, x3, v3)
    x4, v4 = x + dt * v3, v + dt * a3
    a4 = _geodesic_acc(space, x4, v4)
    xn = x + dt * (v + 2.0 * v2 + 2.0 * v3 + v4) / 6.0
    vn = v + dt * (a1 + 2.0 * a2 + 2.0 * a3 + a4) / 6.0
    return xn, vn


# ---------------------------------------------------------------------------
# distances and logarithm

def distance(space: AmbientSpace, p: Point, q: Point) -> float:
    if space.is_space_form:
        return float(distance_many(space, p.coords, q.coords[None, :])[0])
    d, _ = distance_and_log(space, p, q)
    return d


def distance_many(space: AmbientSpace, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Closed-form distances between broadcastable batches (space forms).

    X and Y broadcast against each other over their leading axes, so this
    covers one-to-many, row-wise and chunked pairwise queries alike.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if space.kind == "euclidean":
        return np.linalg.norm(Y - X, axis=-1)
    if space.kind == "sphere":
        R = space.radius
        dots = np.sum(X * Y, axis=-1)
        u = Y - (dots / R**2)[..., None] * X
        sin_part = np.linalg.norm(u, axis=-1) / R
        cos_part = dots / R**2
        return R * np.arctan2(sin_part, cos_part)
    if space.kind == "hyperbolic":
        R = space.radius
        dots = _minkowski_inner(X, Y)
        arg = np.maximum(-dots / R**2, 1.0)
        return R * np.arccosh(arg)
    raise ValueError("distance_many is closed-form only (space forms)")


def distance_and_log(space: AmbientSpace, p: Point, q: Point,
                     steps: int = _DEFAULT_ODE_STEPS):
    """Minimal-geodesic distance d(p,q) and initial velocity v with exp_p(v)=q.

    Chart metrics solve the two-point problem by multi-start shooting with
    damped Gauss-Newton on the endpoint residual.
    """
    x, y = p.coords, q.coords
    if space.kind == "euclidean":
        v = y - x
        return float(np.linalg.norm(v)), Tangent(p, v)
    if space.kind == "sphere":
        R = space.radius
        dot = float(np.dot(x, y))
        u = y - (dot / R**2) * x
        un = float(np.linalg.norm(u))
        theta = math.atan2(un / R, dot / R**2)
        d = R * theta
        if un < 1e-12 * R:
            if dot < 0:
                raise NonuniqueGeodesicError("antipodal points on the sphere")
            return 0.0, Tangent(p, np.zeros_like(x))
        return d, Tangent(p, (d / un) * u)
    if space.kind == "hyperbolic":
        R = space.radius
        dot = float(_minkowski_inner(x, y))
        arg = max(-dot / R**2, 1.0)
        d = R * math.acosh(arg)
        u = y + (dot / R**2) * x
        un = float(math.sqrt(max(_minkowski_inner(u, u), 0.0)))
        if un < 1e-12 * R:
            return 0.0, Tangent(p, np.zeros_like(x))
        return d, Tangent(p, (d / un) * u)
    return _chart_log_shoot(space, p, q, steps)


_SHOOT_DIRECTIONS = 8


def _unit_directions(n: int, count: int) -> np.ndarray:
    """Deterministic spread of unit directions in R^n."""
    if n == 1:
        return np.array([[1.0], [-1.0]])
    if n == 2:
        ang = 2.0 * math.pi * np.arange(count) / count
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    dirs = []
    for i in range(count):
        vec = np.array([_halton_scalar(i + 1, b) - 0.5 for b in _PRIMES[:n]])
        nv = np.linalg.norm(vec)
        dirs.append(vec / nv if nv > 0 else np.eye(n)[0])
    return np.array(dirs)


_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19)


def _halton_scalar(i: int, base: int) -> float:
    f, r = 1.0, 0.0
    while i > 0:
        f /= base
        r += f * (i % base)
        i //= base
    return r


def _chart_log_shoot(space, p, q, steps):
    x, y = p.coords, q.coords
    n = space.dim
    gp = metric_at(space, x)
    dy = y - x
    scale = float(math.sqrt(max(dy @ gp @ dy, 1e-300)))
    if scale < 1e-14:
        return 0.0, Tangent(p, np.zeros(n))

    starts = [dy]
    for d in _unit_directions(n, _SHOOT_DIRECTIONS):
        s = float(math.sqrt(max(d @ gp @ d, 1e-300)))
        starts.append(scale * d / s)
    V0 = np.array(starts)

    tol = 1e-8 * max(1.0, float(np.linalg.norm(y)))
    search_steps = max(32, steps // 4)
    V_coarse = _batched_gauss_newton_shoot(space, x, y, V0, search_steps, tol=10 * tol)
    if V_coarse.size == 0:
        raise ConvergenceError("shooting failed to reach endpoint residual 1e-8")
    V_fine = _batched_gauss_newton_shoot(space, x, y, V_coarse, steps, tol=tol, max_iter=8)
    if V_fine.size == 0:
        raise ConvergenceError("shooting failed to reach endpoint residual 1e-8")

    lengths = np.sqrt(np.maximum(np.einsum("bi,ij,bj->b", V_fine, gp, V_fine), 0.0))
    order = np.argsort(lengths)
    best = order[0]
    best_len = float(lengths[best])
    best_v = V_fine[best]
    for idx in order[1:]:
        if lengths[idx] > best_len + 1e-6 * max(best_len, 1.0):
            break
        gap = np.linalg.norm(V_fine[idx] - best_v)
        if gap > 1e-4 * max(best_len, 1.0):
            raise NonuniqueGeodesicError(
                "two distinct minimal geodesics tie in length; point near cut locus")
    return best_len, Tangent(p, best_v)


def _batched_gauss_newton_shoot(space, x, target, V0, steps, tol, max_iter=40):
    """Damped Gauss-Newton on the endpoint residual for a batch of starts.

    Every iteration integrates the whole batch (values + central-difference
    Jacobian stencil) in one vectorized pass.  Returns converged velocities.
    """
    V = np.array(V0, dtype=float)
    B, n = V.shape
    lam = np.full(B, 1e-8)
    active = np.ones(B, dtype=bool)

    ends = _endpoint_batch_dispatch(space, x, V, steps)
    res = ends - target[None, :]
    rn = np.linalg.norm(res, axis=-1)
    active &= np.isfinite(rn)

    for _ in range(max_iter):
        work = active & (rn >= tol)
        idx = np.flatnonzero(work)
        if idx.size == 0:
            break
        h = 1e-6 * (1.0 + np.linalg.norm(V[idx], axis=-1))
        pert = []
        for a in range(n):
            dv = np.zeros((idx.size, n))
            dv[:, a] = h
            pert.append(V[idx] + dv)
            pert.append(V[idx] - dv)
        ends_p = _endpoint_batch_dispatch(space, x, np.concatenate(pert, axis=0), steps)
        m = target.size
        J = np.empty((idx.size, m, n))
        for a in range(n):
            ep = ends_p[2 * a * idx.size:(2 * a + 1) * idx.size]
            em = ends_p[(2 * a + 1) * idx.size:(2 * a + 2) * idx.size]
            J[:, :, a] = (ep - em) / (2.0 * h)[:, None]
        bad_j = ~np.all(np.isfinite(J.reshape(idx.size, -1)), axis=-1)
        if np.any(bad_j):
            active[idx[bad_j]] = False
            idx = idx[~bad_j]
            J = J[~bad_j]
            if idx.size == 0:
                continue

        JtJ = np.einsum("bma,bmc->bac", J, J)
        Jtr = np.einsum("bma,bm->ba", J, res[idx])
        improved = np.zeros(idx.size, dtype=bool)
        for _damp in range(10):
            rem = np.flatnonzero(~improved)
            if rem.size == 0:
                break
            rows = idx[rem]
            A = JtJ[rem] + lam[rows][:, None, None] * np.eye(n)[None, :, :]
            try:
                step = np.linalg.solve(A, -Jtr[rem][..., None])[..., 0]
            except np.linalg.LinAlgError:
                lam[rows] *= 10
                continue
            trial = V[rows] + step
            ends_t = _endpoint_batch_dispatch(space, x, trial, steps)
            res_t = ends_t - target[None, :]
            rn_t = np.linalg.norm(res_t, axis=-1)
            good = np.isfinite(rn_t) & (rn_t < rn[rows])
            gi = rows[good]
            V[gi] = trial[good]
            res[gi] = res_t[good]
            rn[gi] = rn_t[good]
            lam[gi] = np.maximum(lam[gi] / 3.0, 1e-12)
            lam[rows[~good]] *= 10
            improved[rem[good]] = True
        stalled = idx[~improved]
        if stalled.size:
            active[stalled] = False
    return V[active & (rn < tol)]


def _endpoint_batch_dispatch(space, x0, V, steps):
    """Batched geodesic endpoints from x0; NaN rows mark failed trajectories."""
    V = np.atleast_2d(np.asarray(V, dtype=float))
    B = V.shape[0]
    X = np.repeat(np.asarray(x0, float)[None, :], B, axis=0)
    Vc = V.copy()
    dt = 1.0 / steps
    alive = np.ones(B, dtype=bool)
    for _ in range(steps):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        x, v = X[idx], Vc[idx]
        a1 = _geodesic_acc(space, x, v, strict=False)
        x2, v2 = x + 0.5 * dt * v, v + 0.5 * dt * a1
        a2 = _geodesic_acc(space, x2, v2, strict=False)
        x3, v3 = x + 0.5 * dt * v2, v + 0.5 * dt * a2
        a3 = _geodesic_acc(space, x3, v3, strict=False)
        x4, v4 = x + dt * v3, v + dt * a3
        a4 = _geodesic_acc(space, x4, v4, strict=False)
        xn = x + dt * (v + 2.0 * v2 + 2.0 * v3 + v4) / 6.0
        vn = v + dt * (a1 + 2.0 * a2 + 2.0 * a3 + a4) / 6.0
        ok = np.all(np.isfinite(xn), axis=-1)
        if space.domain is not None:
            ok &= space.domain.contains(xn)
        X[idx], Vc[idx] = xn, vn
        dead = idx[~ok]
        if dead.size:
            alive[dead] = False
            X[dead] = np.nan
    X[~alive] = np.nan
    return X


# ---------------------------------------------------------------------------
# parallel transport

def parallel_transport(space: AmbientSpace, path: GeodesicPath, v: Tangent) -> Tangent:
    """Transport v along a geodesic path to its endpoint."""
    U = transport_field(space, path, v, path.ts[-1:])
    return Tangent(path.end, U[0])


def transport_field(space: AmbientSpace, path: GeodesicPath, v: Tangent,
                    ts: np.ndarray) -> np.ndarray:
    """Parallel transport of v along a geodesic, sampled at requested times.

    Space forms use the closed form (only the component along the velocity
    rotates; the orthogonal complement of the geodesic 2-plane is constant in
    model coordinates).  Charts integrate the transport ODE.
    """
    ts = np.asarray(ts, dtype=float)
    w0 = np.asarray(v.components, dtype=float)
    x0 = path.points[0]
    v0 = path.velocities[0]

    if space.kind == "euclidean":
        return np.repeat(w0[None, :], ts.size, axis=0)

    if space.kind in ("sphere", "hyperbolic"):
        s = float(norm(space, x0, v0))
        if s < 1e-300:
            return np.repeat(w0[None, :], ts.size, axis=0)
        along = float(inner(space, x0, w0, v0)) / s
        w_perp = w0 - (along / s) * v0
        pts, vels = _space_form_geodesic_samples(space, x0, v0, ts)
        return (along / s) * vels + w_perp[None, :]

    return _chart_transport(space, path, w0, ts)


def _hermite_state(path, t):
    """Cubic-Hermite interpolation of (x, v) between stored path samples."""
    ts = path.ts
    i = min(np.searchsorted(ts, t) - 1, ts.size - 2)
    i = max(i, 0)
    t0, t1 = ts[i], ts[i + 1]
    dt = t1 - t0
    s = (t - t0) / dt
    x0, x1 = path.points[i], path.points[i + 1]
    v0, v1 = path.velocities[i], path.velocities[i + 1]
    h00 = 2 * s**3 - 3 * s**2 + 1
    h10 = s**3 - 2 * s**2 + s
    h01 = -2 * s**3 + 3 * s**2
    h11 = s**3 - s**2
    x = h00 * x0 + h10 * dt * v0 + h01 * x1 + h11 * dt * v1
    d00 = 6 * s**2 - 6 * s
    d10 = 3 * s**2 - 4 * s + 1
    d01 = -6 * s**2 + 6 * s
    d11 = 3 * s**2 - 2 * s
    v = (d00 * x0 / dt + d10 * v0 + d01 * x1 / dt + d11 * v1)
    return x, v


def _chart_transport(space, path, w0, ts):
    """RK4 integration of w' = -Gamma(x) x' w along the stored samples.

    The transported norm is conserved analytically; drift beyond 1e-8
    relative indicates the stored path is too coarse and raises.
    """
    out = np.empty((ts.size, space.dim))
    w = np.array(w0, dtype=float)
    t_cur = float(path.ts[0])
    order = np.argsort(ts)
    grid = path.ts

    def rhs(t, wv):
        x, xv = _hermite_state(path, t)
        gam = christoffel(space, x)
        return -np.einsum("kij,i,j->k", gam, xv, wv)

    n0 = float(norm(space, path.points[0], w))
    for idx in order:
        t_target = float(ts[idx])
        while t_cur < t_target - 1e-15:
            nxt = grid[np.searchsorted(grid, t_cur + 1e-15)] if t_cur + 1e-15 < grid[-1] else t_target
            t_next = min(float(nxt), t_target)
            dt = t_next - t_cur
            k1 = rhs(t_cur, w)
            k2 = rhs(t_cur + dt / 2, w + dt / 2 * k1)
            k3 = rhs(t_cur + dt / 2, w + dt / 2 * k2)
            k4 = rhs(t_cur + dt, w + dt * k3)
            w = w + dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
            t_cur = t_next
        out[idx] = w
    x_end, _ = _hermite_state(path, t_cur)
    n1 = float(norm(space, x_end, w))
    if abs(n1 - n0) > 1e-8 * (1.0 + n0):
        raise ResolutionError(
            f"transport norm drift {abs(n1 - n0):.2e}: path sampling too coarse")
    return out


def transport_along_curve(space: AmbientSpace, ts: np.ndarray, points: np.ndarray,
                          velocities: np.ndarray, w0: np.ndarray) -> np.ndarray:
    """Parallel transport along an arbitrary sampled curve (all kinds, RK4).

    Returns the transported vector at every sample time.  The curve between
    samples is interpolated with cubic Hermite polynomials; one RK4 step is
    taken per sample interval.
    """
    ts = np.asarray(ts, dtype=float)
    points = np.asarray(points, dtype=float)
    velocities = np.asarray(velocities, dtype=float)
    m = points.shape[1]
    out = np.empty((ts.size, m))
    w = np.array(w0, dtype=float)
    out[0] = w

    if space.kind == "euclidean":
        return np.repeat(w[None, :], ts.size, axis=0)

    def rhs(x, xv, wv):
        if space.kind == "sphere":
            return -(np.dot(wv, xv) / space.radius**2) * x
        if space.kind == "hyperbolic":
            return (_minkowski_inner(wv, xv) / space.radius**2) * x
        gam = christoffel(space, x)
        return -np.einsum("kij,i,j->k", gam, xv, wv)

    for i in range(ts.size - 1):
        dt = ts[i + 1] - ts[i]
        x0, v0 = points[i], velocities[i]
        x1, v1 = points[i + 1], velocities[i + 1]
        xm = 0.5 * (x0 + x1) + 0.125 * dt * (v0 - v1)
        vm = 1.5 * (x1 - x0) / dt - 0.25 * (v0 + v1)
        k1 = rhs(x0, v0, w)
        k2 = rhs(xm, vm, w + dt / 2 * k1)
        k3 = rhs(xm, vm, w + dt / 2 * k2)
        k4 = rhs(x1, v1, w + dt * k3)
        w = w + dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        out[i + 1] = w
    return out
