"""Compact immersed submanifolds: frames, second fundamental form, shape
operator, intrinsic geodesics and intrinsic parallel transport.

An :class:`Immersion` wraps a parametrization F of a k-manifold into an
ambient model space.  Compactness is encoded through the parameter domain:
every axis is either periodic or explicitly closed.  Derivatives come from a
closed-form jacobian when the immersion supplies one, otherwise from central
finite differences with Richardson extrapolation.

The workhorse is the ambient covariant Hessian H_ab of F: its tangential
part gives the Christoffel symbols of the induced metric (used by the
geodesic and transport ODEs) and its normal part is the second fundamental
form, so both always stay mutually consistent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import ambient as amb
from .ambient import Box, Point, Tangent
from .errors import DomainEscapeError, ImmersionDegeneracyError, ResolutionError

__all__ = [
    "Immersion",
    "TangentFrame",
    "IntrinsicCurve",
    "ShapeOperatorResult",
    "frame",
    "induced_metric",
    "second_fundamental",
    "shape_operator",
    "shape_operator_norm",
    "intrinsic_geodesic",
    "intrinsic_parallel_transport",
    "connect_points",
    "sample_grid",
]

_JAC_STEP = 1e-5
_HESS_STEP = 2e-4


class Immersion:
    """Parametrized compact submanifold of an ambient model space."""

    def __init__(self, space: amb.AmbientSpace, domain: Box,
                 mapping: Callable[[np.ndarray], np.ndarray],
                 jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                 name: str = "", fd_step: float = _JAC_STEP):
        bounded = np.isfinite(domain.lows) & np.isfinite(domain.highs)
        if not np.all(domain.periodic | bounded):
            raise ValueError("nonperiodic axes must be closed bounded intervals")
        self.space = space
        self.domain = domain
        self._map = mapping
        self._jac = jacobian
        self.name = name
        self.fd_step = fd_step
        self._totally_geodesic: Optional[bool] = None

    @property
    def param_dim(self) -> int:
        return self.domain.dim

    @property
    def codim(self) -> int:
        return self.space.dim - self.param_dim

    def points(self, U: np.ndarray) -> np.ndarray:
        return np.asarray(self._map(np.asarray(U, dtype=float)), dtype=float)

    def point(self, u) -> Point:
        return Point(self.points(np.asarray(u, dtype=float)))

    def jacobian(self, U: np.ndarray) -> np.ndarray:
        """dF/du with shape (..., m, k)."""
        U = np.asarray(U, dtype=float)
        if self._jac is not None:
            return np.asarray(self._jac(U), dtype=float)
        return self._fd_jacobian(U)

    def _fd_jacobian(self, U: np.ndarray) -> np.ndarray:
        """Central differences with one Richardson extrapolation step."""
        k = self.param_dim
        h = self.fd_step * (1.0 + np.abs(U))
        cols = []
        for a in range(k):
            da = np.zeros_like(U)
            da[..., a] = h[..., a]
            d_h = (self.points(U + da) - self.points(U - da)) / (2.0 * h[..., a])[..., None]
            d_h2 = (self.points(U + 0.5 * da) - self.points(U - 0.5 * da)) / (h[..., a])[..., None]
            cols.append((4.0 * d_h2 - d_h) / 3.0)
        return np.stack(cols, axis=-1)

    def second_derivative(self, U: np.ndarray) -> np.ndarray:
        """d2F/du_a du_b with shape (..., m, k, k), symmetric in (a, b)."""
        U = np.asarray(U, dtype=float)
        k = self.param_dim
        if self._jac is not None:
            h = self.fd_step * (1.0 + np.abs(U))
            dJ = []
            for a in range(k):
                da = np.zeros_like(U)
                da[..., a] = h[..., a]
                dJ.append((self.jacobian(U + da) - self.jacobian(U - da))
                          / (2.0 * h[..., a])[..., None, None])
            D2 = np.stack(dJ, axis=-1)  # (..., m, k_b, k_a) = d_a J[:, b]
            return 0.5 * (D2 + np.swapaxes(D2, -1, -2))
        h = _HESS_STEP * (1.0 + np.abs(U))
        F0 = self.points(U)
        m = F0.shape[-1]
        D2 = np.empty(U.shape[:-1] + (m, k, k))
        for a in range(k):
            da = np.zeros_like(U)
            da[..., a] = h[..., a]
            D2[..., a, a] = (self.points(U + da) - 2.0 * F0 + self.points(U - da)) \
                / (h[..., a] ** 2)[..., None]
            for b in range(a + 1, k):
                db = np.zeros_like(U)
                db[..., b] = h[..., b]
                cross = (self.points(U + da + db) - self.points(U + da - db)
                         - self.points(U - da + db) + self.points(U - da - db)) \
                    / (4.0 * h[..., a] * h[..., b])[..., None]
                D2[..., a, b] = cross
                D2[..., b, a] = cross
        return D2

    def is_totally_geodesic(self, probes_per_axis: int = 5, tol: float = 1e-8) -> bool:
        """Probe-grid test max |Pi| < tol; cached after the first call."""
        if self._totally_geodesic is None:
            U = sample_grid(self.domain, [probes_per_axis] * self.param_dim)
            _, Pi = covariant_split(self, U)
            sup = 0.0
            for u_idx in range(U.shape[0]):
                x = self.points(U[u_idx])
                for a in range(self.param_dim):
                    for b in range(self.param_dim):
                        sup = max(sup, float(amb.norm(self.space, x, Pi[u_idx, :, a, b])))
            self._totally_geodesic = sup < tol
        return self._totally_geodesic


def sample_grid(domain: Box, counts) -> np.ndarray:
    """Deterministic parameter grid, shape (prod(counts), k).

    Periodic axes use the uniform vertex grid starting at the low edge;
    closed axes use the interior vertex grid (endpoints excluded).  Doubling
    every count produces a superset of the coarse grid on both axis kinds.
    """
    axes = []
    for a in range(domain.dim):
        n = int(counts[a])
        span = domain.spans[a]
        if domain.periodic[a]:
            axes.append(domain.lows[a] + span * np.arange(n) / n)
        else:
            axes.append(domain.lows[a] + span * np.arange(1, n) / n)
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


# ---------------------------------------------------------------------------
# frames

@dataclass(frozen=True)
class TangentFrame:
    """Tangent/normal data of the immersion at one parameter point."""

    u: np.ndarray
    point: np.ndarray
    tangents: np.ndarray       # (m, k) columns dF/du_a
    metric: np.ndarray         # (k, k) induced metric
    normals: np.ndarray        # (codim, m) orthonormal rows

    def tangent_vectors(self):
        p = Point(self.point)
        return [Tangent(p, self.tangents[:, a]) for a in range(self.tangents.shape[1])]

    def normal_vectors(self):
        p = Point(self.point)
        return [Tangent(p, n) for n in self.normals]


def induced_metric(imm: Immersion, U: np.ndarray) -> np.ndarray:
    """Induced metric g_ab = <dF_a, dF_b>, batched over parameters."""
    U = np.asarray(U, dtype=float)
    J = imm.jacobian(U)
    return _gram(imm.space, imm.points(U), J)


def _gram(space, x, J):
    if space.kind == "hyperbolic":
        sig = np.ones(space.ambient_dim)
        sig[0] = -1.0
        return np.einsum("...ma,m,...mb->...ab", J, sig, J)
    if space.kind == "chart":
        g = amb.metric_many(space, x)
        return np.einsum("...ma,...mn,...nb->...ab", J, g, J)
    return np.einsum("...ma,...mb->...ab", J, J)


def frame(imm: Immersion, u) -> TangentFrame:
    """Tangent basis, induced metric and an orthonormal normal basis at u.

    The normal basis is built deterministically: the ambient tangent basis
    at F(u) is run through Gram-Schmidt against the (normalized) immersion
    tangents, in declaration order, keeping the first codim survivors.
    """
    u = np.asarray(u, dtype=float)
    space = imm.space
    x = imm.points(u)
    J = imm.jacobian(u)
    g = _gram(space, x, J)
    eigmin = float(np.linalg.eigvalsh(g)[0])
    if eigmin <= 1e-8:
        raise ImmersionDegeneracyError(
            f"immersion differential is rank deficient at u={u} (eigmin={eigmin:.2e})")

    ortho = []
    for a in range(imm.param_dim):
        w = J[:, a].copy()
        for b in ortho:
            w -= float(amb.inner(space, x, w, b)) * b
        w /= float(amb.norm(space, x, w))
        ortho.append(w)
    normals = []
    for cand in amb.tangent_basis(space, x):
        w = cand.copy()
        for b in ortho:
            w -= float(amb.inner(space, x, w, b)) * b
        s = float(amb.norm(space, x, w))
        if s > 1e-8:
            w /= s
            ortho.append(w)
            normals.append(w)
        if len(normals) == imm.codim:
            break
    if len(normals) != imm.codim:
        raise ImmersionDegeneracyError(f"could not complete the normal basis at u={u}")
    return TangentFrame(u=u, point=x, tangents=J, metric=g, normals=np.array(normals))


# ---------------------------------------------------------------------------
# covariant Hessian: induced Christoffels + second fundamental form

def covariant_split(imm: Immersion, U: np.ndarray):
    """Split the ambient covariant Hessian of F into (Gamma, Pi).

    Returns ``gamma`` with shape (..., k, k, k) (Christoffel symbols
    Gamma^c_{ab} of the induced metric) and ``Pi`` with shape (..., m, k, k)
    (normal-valued second fundamental form on the coordinate basis).
    """
    U = np.asarray(U, dtype=float)
    space = imm.space
    x = imm.points(U)
    J = imm.jacobian(U)
    D2 = imm.second_derivative(U)
    H = _ambient_correction(space, x, J, D2)
    g = _gram(space, x, J)

    # tangential coefficients: g_cd Gamma^d_ab = <H_ab, J_c>
    if space.kind == "hyperbolic":
        sig = np.ones(space.ambient_dim)
        sig[0] = -1.0
        rhs = np.einsum("...mc,m,...mab->...cab", J, sig, H)
    elif space.kind == "chart":
        gx = amb.metric_many(space, x)
        rhs = np.einsum("...mc,...mn,...nab->...cab", J, gx, H)
    else:
        rhs = np.einsum("...mc,...mab->...cab", J, H)
    k = imm.param_dim
    rhs_flat = rhs.reshape(rhs.shape[:-3] + (k, k * k))
    gamma = np.linalg.solve(g, rhs_flat).reshape(rhs.shape)
    Pi = H - np.einsum("...mc,...cab->...mab", J, gamma)
    return gamma, Pi


def _ambient_correction(space, x, J, D2):
    """Ambient covariant Hessian from the coordinate second derivative."""
    if space.kind == "euclidean":
        return D2
    if space.kind == "sphere":
        r2 = space.radius ** 2
        coef = np.einsum("...m,...mab->...ab", x, D2) / r2
        return D2 - np.einsum("...ab,...m->...mab", coef, x)
    if space.kind == "hyperbolic":
        r2 = space.radius ** 2
        sig = np.ones(space.ambient_dim)
        sig[0] = -1.0
        coef = np.einsum("...m,m,...mab->...ab", x, sig, D2) / r2
        return D2 + np.einsum("...ab,...m->...mab", coef, x)
    gam = amb.christoffel(space, x)
    return D2 + np.einsum("...krs,...ra,...sb->...kab", gam, J, J)


def second_fundamental(imm: Immersion, u, v, w) -> Tangent:
    """Second fundamental form Pi(v, w) as an ambient normal vector.

    ``v`` and ``w`` are tangent vectors of M given in parameter coordinates.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    _, Pi = covariant_split(imm, u)
    vec = np.einsum("mab,a,b->m", Pi, v, w)
    return Tangent(Point(imm.points(u)), vec)


@dataclass(frozen=True)
class ShapeOperatorResult:
    """Spectral data of the shape operator A_eta at one point."""

    norm: float
    maximizer_param: np.ndarray    # unit (induced metric) tangent achieving |A|
    maximizer_ambient: np.ndarray
    eta_sign: float                # +1: quotient positive for eta; -1: for -eta
    eigenvalues: np.ndarray


def shape_operator(imm: Immersion, u, eta: np.ndarray) -> np.ndarray:
    """Matrix of A_eta in the coordinate basis (A^a_b)."""
    u = np.asarray(u, dtype=float)
    x = imm.points(u)
    J = imm.jacobian(u)
    g = _gram(imm.space, x, J)
    _, Pi = covariant_split(imm, u)
    M = np.einsum("mab,m->ab", _lower(imm.space, x, Pi), np.asarray(eta, dtype=float))
    return np.linalg.solve(g, M)


def _lower(space, x, Pi):
    """Apply the ambient metric so that <Pi_ab, eta> = Pi_low[m,a,b] eta^m."""
    if space.kind == "hyperbolic":
        sig = np.ones(space.ambient_dim)
        sig[0] = -1.0
        return Pi * sig[:, None, None]
    if space.kind == "chart":
        g = amb.metric_at(space, x)
        return np.einsum("mn,nab->mab", g, Pi)
    return Pi


def shape_operator_norm(imm: Immersion, u, eta: np.ndarray) -> ShapeOperatorResult:
    """Spectral norm of A_eta with a maximizing unit tangent.

    If the extreme Rayleigh quotient is negative the result is reported for
    -eta instead (eta_sign = -1), so the quoted quotient is always positive.
    """
    u = np.asarray(u, dtype=float)
    x = imm.points(u)
    J = imm.jacobian(u)
    g = _gram(imm.space, x, J)
    _, Pi = covariant_split(imm, u)
    M = np.einsum("mab,m->ab", _lower(imm.space, x, Pi), np.asarray(eta, dtype=float))
    L = np.linalg.cholesky(g)
    Linv = np.linalg.inv(L)
    S = Linv @ M @ Linv.T
    S = 0.5 * (S + S.T)
    vals, vecs = np.linalg.eigh(S)
    idx = int(np.argmax(np.abs(vals)))
    lam = float(vals[idx])
    w_param = Linv.T @ vecs[:, idx]
    return ShapeOperatorResult(
        norm=abs(lam),
        maximizer_param=w_param,
        maximizer_ambient=J @ w_param,
        eta_sign=1.0 if lam >= 0 else -1.0,
        eigenvalues=vals,
    )


# ---------------------------------------------------------------------------
# intrinsic curves

@dataclass(frozen=True)
class IntrinsicCurve:
    """Sampled curve in the parameter domain with its parameter velocity."""

    imm: Immersion
    ss: np.ndarray      # (n,) arclength-like parameter grid
    us: np.ndarray      # (n, k)
    dus: np.ndarray     # (n, k) du/ds
    unit_speed: bool

    @property
    def s_max(self) -> float:
        return float(self.ss[-1])

    def ambient_points(self) -> np.ndarray:
        return self.imm.points(self.us)

    def ambient_velocities(self) -> np.ndarray:
        J = self.imm.jacobian(self.us)
        return np.einsum("nmk,nk->nm", J, self.dus)

    def at(self, s: float):
        """Hermite-interpolated (u, du/ds) between samples."""
        ss = self.ss
        i = int(np.clip(np.searchsorted(ss, s) - 1, 0, ss.size - 2))
        t0, t1 = ss[i], ss[i + 1]
        dt = t1 - t0
        w = (s - t0) / dt
        u0, u1 = self.us[i], self.us[i + 1]
        v0, v1 = self.dus[i], self.dus[i + 1]
        h00 = 2 * w**3 - 3 * w**2 + 1
        h10 = w**3 - 2 * w**2 + w
        h01 = -2 * w**3 + 3 * w**2
        h11 = w**3 - w**2
        u = h00 * u0 + h10 * dt * v0 + h01 * u1 + h11 * dt * v1
        d00 = (6 * w**2 - 6 * w) / dt
        d10 = 3 * w**2 - 4 * w + 1
        d01 = (-6 * w**2 + 6 * w) / dt
        d11 = 3 * w**2 - 2 * w
        du = d00 * u0 + d10 * v0 + d01 * u1 + d11 * v1
        return u, du


def _intrinsic_christoffel(imm: Immersion, U: np.ndarray) -> np.ndarray:
    gamma, _ = covariant_split(imm, U)
    return gamma


def intrinsic_geodesic(imm: Immersion, u0, w0, s_max: float,
                       steps_per_unit: int = 256) -> IntrinsicCurve:
    """Geodesic of the induced metric from u0 with initial velocity w0.

    ``w0`` is a parameter-space vector; for a unit-speed curve it must have
    unit induced norm.  The intrinsic acceleration vanishes along the result
    by construction of the ODE.
    """
    u0 = np.asarray(u0, dtype=float)
    w0 = np.asarray(w0, dtype=float)
    nsteps = max(8, int(math.ceil(steps_per_unit * abs(s_max))))
    ds = s_max / nsteps
    us = np.empty((nsteps + 1, imm.param_dim))
    dus = np.empty_like(us)
    u, w = u0.copy(), w0.copy()
    us[0], dus[0] = u, w

    def acc(uu, ww):
        gam = _intrinsic_christoffel(imm, uu)
        return -np.einsum("cab,a,b->c", gam, ww, ww)

    for i in range(nsteps):
        a1 = acc(u, w)
        u2, w2 = u + 0.5 * ds * w, w + 0.5 * ds * a1
        a2 = acc(u2, w2)
        u3, w3 = u + 0.5 * ds * w2, w + 0.5 * ds * a2
        a3 = acc(u3, w3)
        u4, w4 = u + ds * w3, w + ds * a3
        a4 = acc(u4, w4)
        u = u + ds * (w + 2 * w2 + 2 * w3 + w4) / 6.0
        w = w + ds * (a1 + 2 * a2 + 2 * a3 + a4) / 6.0
        if not bool(np.all(imm.domain.contains(u))):
            raise DomainEscapeError(f"intrinsic geodesic left the domain at u={u}")
        us[i + 1], dus[i + 1] = u, w

    g0 = induced_metric(imm, u0)
    speed0 = float(math.sqrt(max(w0 @ g0 @ w0, 0.0)))
    ss = np.linspace(0.0, s_max, nsteps + 1)
    return IntrinsicCurve(imm=imm, ss=ss, us=us, dus=dus,
                          unit_speed=abs(speed0 - 1.0) < 1e-8)


def intrinsic_parallel_transport(imm: Immersion, curve: IntrinsicCurve,
                                 v0) -> np.ndarray:
    """Transport v0 (parameter components) along the curve; returns samples.

    Integrates nabla_{alpha'} v = 0 for the induced connection with one RK4
    step per stored sample interval (Hermite midpoints).
    """
    v0 = np.asarray(v0, dtype=float)
    n = curve.ss.size
    out = np.empty((n, imm.param_dim))
    v = v0.copy()
    out[0] = v
    for i in range(n - 1):
        ds = curve.ss[i + 1] - curve.ss[i]
        sm = 0.5 * (curve.ss[i] + curve.ss[i + 1])
        um, dum = curve.at(sm)
        stack = np.stack([curve.us[i], um, curve.us[i + 1]])
        gam3 = _intrinsic_christoffel(imm, stack)

        def rhs(gam, du, vv):
            return -np.einsum("cab,a,b->c", gam, du, vv)

        k1 = rhs(gam3[0], curve.dus[i], v)
        k2 = rhs(gam3[1], dum, v + 0.5 * ds * k1)
        k3 = rhs(gam3[1], dum, v + 0.5 * ds * k2)
        k4 = rhs(gam3[2], curve.dus[i + 1], v + ds * k3)
        v = v + ds * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        out[i + 1] = v
    g0 = induced_metric(imm, curve.us[0])
    g1 = induced_metric(imm, curve.us[-1])
    n0 = math.sqrt(max(float(v0 @ g0 @ v0), 0.0))
    n1 = math.sqrt(max(float(out[-1] @ g1 @ out[-1]), 0.0))
    if abs(n1 - n0) > 1e-8 * (1.0 + n0):
        raise ResolutionError(
            f"intrinsic transport norm drift {abs(n1 - n0):.2e}: curve sampling too coarse")
    return out


# ---------------------------------------------------------------------------
# two-point intrinsic geodesics

def connect_points(imm: Immersion, ua, ub, steps_per_unit: int = 192) -> IntrinsicCurve:
    """Minimizing unit-speed geodesic of M from F(ua) to F(ub).

    Curves (k = 1) integrate the arclength directly in both wrap directions
    and keep the shorter; surfaces shoot over the initial velocity with a
    batched damped Gauss-Newton, then keep the shortest converged solution.
    """
    ua = np.asarray(ua, dtype=float)
    ub = np.asarray(ub, dtype=float)
    if imm.param_dim == 1:
        return _connect_1d(imm, ua, ub, steps_per_unit)
    return _connect_shoot(imm, ua, ub, steps_per_unit)


def _connect_1d(imm, ua, ub, steps_per_unit):
    span = float(imm.domain.spans[0]) if imm.domain.periodic[0] else None
    delta = float(ub[0] - ua[0])
    candidates = [delta]
    if span is not None:
        delta_mod = (delta + span / 2.0) % span - span / 2.0
        candidates = [delta_mod, delta_mod - math.copysign(span, delta_mod)]

    best = None
    for dlt in candidates:
        if dlt == 0.0:
            continue
        ugrid = ua[0] + dlt * np.linspace(0.0, 1.0, 1025)
        g = induced_metric(imm, ugrid[:, None])[:, 0, 0]
        speeds = np.sqrt(np.maximum(g, 0.0)) * abs(dlt)
        s_cum = np.concatenate([[0.0], np.cumsum((speeds[1:] + speeds[:-1]) / 2.0)]) / 1024.0
        length = float(s_cum[-1])
        if best is None or length < best[0]:
            best = (length, ugrid, s_cum, dlt)
    if best is None:
        raise ValueError("connect_points requires distinct parameters")
    length, ugrid, s_cum, dlt = best
    n = max(64, int(math.ceil(steps_per_unit * length)))
    ss = np.linspace(0.0, length, n + 1)
    us = np.interp(ss, s_cum, ugrid)[:, None]
    g_s = induced_metric(imm, us)[:, 0, 0]
    dus = (math.copysign(1.0, dlt) / np.sqrt(np.maximum(g_s, 1e-300)))[:, None]
    return IntrinsicCurve(imm=imm, ss=ss, us=us, dus=dus, unit_speed=True)


def _connect_shoot(imm, ua, ub, steps_per_unit, n_starts=10, steps=64):
    k = imm.param_dim
    delta = imm.domain.param_delta(ub, ua)
    g0 = induced_metric(imm, ua)
    scale = float(math.sqrt(max(delta @ g0 @ delta, 1e-300)))

    starts = [delta]
    dirs = amb._unit_directions(k, n_starts)
    for d in dirs:
        s = float(math.sqrt(max(d @ g0 @ d, 1e-300)))
        starts.append(scale * d / s)
    W = np.array(starts)

    tol = 1e-9 * max(1.0, float(np.linalg.norm(ub)))
    sols = _shoot_param_batch(imm, ua, ub, W, steps, tol)
    if sols.size == 0:
        raise ValueError("two-point intrinsic geodesic shooting failed")
    lengths = np.sqrt(np.maximum(np.einsum("bi,ij,bj->b", sols, g0, sols), 0.0))
    w_best = sols[int(np.argmin(lengths))]
    s_f = float(np.min(lengths))
    return intrinsic_geodesic(imm, ua, w_best / s_f, s_f, steps_per_unit)


def _shoot_param_batch(imm, ua, ub, W, steps, tol, max_iter=20):
    """Batched GN on the wrapped endpoint residual of intrinsic geodesics.

    Diverging starts turn into NaN rows and are dropped by the finiteness
    filters, so warnings from runaway trajectories are suppressed here.
    """

    def endpoints(Wb):
        B = Wb.shape[0]
        U = np.repeat(ua[None, :], B, axis=0)
        V = Wb.copy()
        dt = 1.0 / steps
        for _ in range(steps):
            gam = _intrinsic_christoffel(imm, U)
            a1 = -np.einsum("bcij,bi,bj->bc", gam, V, V)
            U2, V2 = U + 0.5 * dt * V, V + 0.5 * dt * a1
            a2 = -np.einsum("bcij,bi,bj->bc", _intrinsic_christoffel(imm, U2), V2, V2)
            U3, V3 = U + 0.5 * dt * V2, V + 0.5 * dt * a2
            a3 = -np.einsum("bcij,bi,bj->bc", _intrinsic_christoffel(imm, U3), V3, V3)
            U4, V4 = U + dt * V3, V + dt * a3
            a4 = -np.einsum("bcij,bi,bj->bc", _intrinsic_christoffel(imm, U4), V4, V4)
            U = U + dt * (V + 2 * V2 + 2 * V3 + V4) / 6.0
            V = V + dt * (a1 + 2 * a2 + 2 * a3 + a4) / 6.0
        return U

    def residual(Wb):
        with np.errstate(all="ignore"):
            ends = endpoints(Wb)
            return imm.domain.param_delta(ends, np.broadcast_to(ub, Wb.shape))

    W = np.array(W, dtype=float)
    B, k = W.shape
    res = residual(W)
    rn = np.linalg.norm(res, axis=-1)
    rn = np.where(np.isfinite(rn), rn, np.inf)
    lam = np.full(B, 1e-8)
    active = np.ones(B, dtype=bool)
    for _ in range(max_iter):
        work = active & (rn >= tol)
        idx = np.flatnonzero(work)
        if idx.size == 0:
            break
        h = 1e-6 * (1.0 + np.linalg.norm(W[idx], axis=-1))
        pert = []
        for a in range(k):
            dv = np.zeros((idx.size, k))
            dv[:, a] = h
            pert.append(W[idx] + dv)
            pert.append(W[idx] - dv)
        r_all = residual(np.concatenate(pert, axis=0))
        J = np.empty((idx.size, k, k))
        for a in range(k):
            rp = r_all[2 * a * idx.size:(2 * a + 1) * idx.size]
            rm = r_all[(2 * a + 1) * idx.size:(2 * a + 2) * idx.size]
            J[:, :, a] = (rp - rm) / (2.0 * h)[:, None]
        bad = ~np.all(np.isfinite(J.reshape(idx.size, -1)), axis=-1)
        if np.any(bad):
            active[idx[bad]] = False
            keep = ~bad
            idx = idx[keep]
            J = J[keep]
            if idx.size == 0:
                continue
        JtJ = np.einsum("bma,bmc->bac", J, J)
        Jtr = np.einsum("bma,bm->ba", J, res[idx])
        improved = np.zeros(idx.size, dtype=bool)
        for _damp in range(8):
            rem = np.flatnonzero(~improved)
            if rem.size == 0:
                break
            rows = idx[rem]
            A = JtJ[rem] + lam[rows][:, None, None] * np.eye(k)
            try:
                step = np.linalg.solve(A, -Jtr[rem][..., None])[..., 0]
            except np.linalg.LinAlgError:
                lam[rows] *= 10
                continue
            trial = W[rows] + step
            r_t = residual(trial)
            rn_t = np.linalg.norm(r_t, axis=-1)
            good = np.isfinite(rn_t) & (rn_t < rn[rows])
            gi = rows[good]
            W[gi] = trial[good]
            res[gi] = r_t[good]
            rn[gi] = rn_t[good]
            lam[gi] = np.maximum(lam[gi] / 3.0, 1e-12)
            lam[rows[~good]] *= 10
            improved[rem[good]] = True
        stalled = idx[~improved]
        if stalled.size:
            active[stalled] = False
    return W[active & (rn < tol)]
