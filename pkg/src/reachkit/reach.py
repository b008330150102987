"""Foot-point projection, medial-axis probing and reach estimation.

Two independent estimators are provided:

* ``reach_normal_collision`` marches along normal geodesics until the base
  point stops being a foot point of the marched point and refines the
  crossing by bisection (an upper estimate converging from above);
* ``reach_medial_infimum`` samples an ambient probe region, marks points
  with at least two foot points, and runs a shrinking neighborhood descent
  of the distance-to-M over the marked set.

Both report witnesses, so reach-assigning points can be harvested and
classified as bottleneck / unique-foot-point afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import ambient as amb
from .ambient import Point
from .errors import ProjectionFailureError
from .immersion import Immersion, frame, sample_grid

__all__ = [
    "FootPointSet",
    "ReachEstimate",
    "ReachAssigner",
    "halton_points",
    "foot_points",
    "reach_normal_collision",
    "reach_medial_infimum",
    "reach_assigning_points",
]

_PRIMES = (2, 3, 5, 7, 11, 13)


def halton_points(count: int, dim: int, skip: int = 20) -> np.ndarray:
    """Deterministic Halton sequence in [0, 1)^dim."""
    out = np.empty((count, dim))
    for d in range(dim):
        base = _PRIMES[d % len(_PRIMES)]
        for i in range(count):
            n, f, r = skip + i + 1, 1.0, 0.0
            while n > 0:
                f /= base
                r += f * (n % base)
                n //= base
            out[i, d] = r
    return out


# ---------------------------------------------------------------------------
# distance helpers

def _dist2_batch(space, q: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Squared ambient distance from q to a batch of model points."""
    return amb.distance_many(space, q, X) ** 2


def _dist_point(space, q: np.ndarray, x: np.ndarray) -> float:
    return float(amb.distance_many(space, q, x[None, :])[0])


class _ProjectionCache:
    """Per-immersion cache: a fixed parameter grid and its image."""

    def __init__(self, imm: Immersion, counts=None):
        k = imm.param_dim
        if counts is None:
            counts = [512] if k == 1 else [64] * k if k == 2 else [16] * k
        self.counts = list(counts)
        self.u_grid = sample_grid(imm.domain, self.counts)
        self.f_grid = imm.points(self.u_grid)
        self.imm = imm

    def grid_spacing(self) -> np.ndarray:
        return self.imm.domain.spans / np.asarray(self.counts, dtype=float)


def _newton_refine(imm: Immersion, q: np.ndarray, U0: np.ndarray,
                   iters: int = 36) -> tuple[np.ndarray, np.ndarray]:
    """Batched damped Newton on u -> d^2(q, F(u)); returns (U, distances).

    ``q`` may be a single point or one query row per start.
    """
    space = imm.space
    dom = imm.domain
    U = np.atleast_2d(np.asarray(U0, dtype=float)).copy()
    S, k = U.shape
    lam = np.full(S, 1e-10)
    q = np.asarray(q, dtype=float)
    Q = q[None, :] if q.ndim == 1 else q  # (1 or S, m)

    def f_of(stack):
        # stack: (P, S, k) -> squared distances (P, S)
        X = imm.points(stack)
        return amb.distance_many(space, Q[None, :, :], X) ** 2

    fval = f_of(U[None, :, :])[0]
    h0 = 3e-6
    eye = np.eye(k)
    for _ in range(iters):
        h = h0 * (1.0 + np.abs(U))  # (S, k)
        stencil = [U]
        for a in range(k):
            da = np.zeros_like(U)
            da[:, a] = h[:, a]
            stencil.append(U + da)
            stencil.append(U - da)
        for a in range(k):
            for b in range(a + 1, k):
                da = np.zeros_like(U)
                da[:, a] = h[:, a]
                db = np.zeros_like(U)
                db[:, b] = h[:, b]
                stencil.extend([U + da + db, U + da - db, U - da + db, U - da - db])
        vals = f_of(np.stack(stencil, axis=0))
        f0 = vals[0]
        grad = np.empty((S, k))
        hess = np.empty((S, k, k))
        for a in range(k):
            fp, fm = vals[1 + 2 * a], vals[2 + 2 * a]
            grad[:, a] = (fp - fm) / (2.0 * h[:, a])
            hess[:, a, a] = (fp - 2.0 * f0 + fm) / h[:, a] ** 2
        pos = 1 + 2 * k
        for a in range(k):
            for b in range(a + 1, k):
                fpp, fpm, fmp, fmm = vals[pos], vals[pos + 1], vals[pos + 2], vals[pos + 3]
                cross = (fpp - fpm - fmp + fmm) / (4.0 * h[:, a] * h[:, b])
                hess[:, a, b] = cross
                hess[:, b, a] = cross
                pos += 4

        shift = np.maximum(lam, 1e-12 * (1.0 + np.abs(f0)))
        A = hess + shift[:, None, None] * eye[None, :, :]
        try:
            step = np.linalg.solve(A, -grad[..., None])[..., 0]
        except np.linalg.LinAlgError:
            A = hess + (shift + 1e-3)[:, None, None] * eye[None, :, :]
            step = np.linalg.solve(A, -grad[..., None])[..., 0]
        # keep steps bounded; distant starts otherwise overshoot badly
        sn = np.linalg.norm(step / (1.0 + np.abs(U)), axis=-1)
        cap = 0.5
        scalef = np.where(sn > cap, cap / np.maximum(sn, 1e-300), 1.0)
        trial = dom.clamp(U + step * scalef[:, None])
        f_t = f_of(trial[None, :, :])[0]
        good = f_t <= f0
        U[good] = trial[good]
        fval = np.where(good, f_t, f0)
        lam = np.where(good, np.maximum(lam / 4.0, 1e-12), lam * 8.0)
        if np.all(np.abs(grad) < 3e-10 * (1.0 + np.abs(fval))[:, None]):
            break
    return U, np.sqrt(np.maximum(fval, 0.0))


def _global_min_distance(imm: Immersion, q: np.ndarray, cache: _ProjectionCache,
                         extra_starts=None, top: int = 4, iters: int = 36):
    """Global minimum of d(q, F(u)) via grid scan + Newton refinement.

    Returns (d_min, u_min).  ``extra_starts`` (e.g. warm starts) join the
    best grid candidates before refinement.
    """
    d2 = _dist2_batch(imm.space, q, cache.f_grid)
    if top < d2.size:
        order = np.argpartition(d2, top)[:top]
    else:
        order = np.arange(d2.size)
    starts = [cache.u_grid[order]]
    if extra_starts is not None and len(extra_starts):
        starts.append(np.atleast_2d(np.asarray(extra_starts, dtype=float)))
    U0 = np.concatenate(starts, axis=0)
    U, d = _newton_refine(imm, q, U0, iters=iters)
    i = int(np.argmin(d))
    return float(d[i]), U[i]


def _grid_argmin_chunked(imm, cache, X, chunk=256):
    """Nearest cached-grid parameter for every query row."""
    G, Ug = cache.f_grid, cache.u_grid
    B = X.shape[0]
    out = np.empty((B, imm.param_dim))
    for s in range(0, B, chunk):
        xs = X[s:s + chunk]
        D = amb.distance_many(imm.space, xs[:, None, :], G[None, :, :])
        out[s:s + chunk] = Ug[D.argmin(axis=1)]
    return out


def _batched_min_distance(imm, cache, X, warm=None, iters: int = 14):
    """Row-wise global min of d(X_i, F(u)): (distances, params).

    Each row refines from its grid argmin plus an optional warm start.
    """
    B = X.shape[0]
    k = imm.param_dim
    U0g = _grid_argmin_chunked(imm, cache, X)
    if warm is None:
        starts = U0g[:, None, :]
    else:
        starts = np.stack([U0g, np.asarray(warm, dtype=float)], axis=1)
    S = starts.shape[1]
    Q = np.repeat(X, S, axis=0)
    U, d = _newton_refine(imm, Q, starts.reshape(B * S, k), iters=iters)
    d = d.reshape(B, S)
    U = U.reshape(B, S, k)
    pick = d.argmin(axis=1)
    rows = np.arange(B)
    return d[rows, pick], U[rows, pick]


def _exp_points_batch(space, starts, etas, ts):
    """exp_x(t eta) for unit etas, one row per ray (space forms only)."""
    ts = np.asarray(ts, dtype=float)
    if space.kind == "euclidean":
        return starts + ts[:, None] * etas
    if space.kind == "sphere":
        R = space.radius
        ph = ts / R
        return np.cos(ph)[:, None] * starts + (R * np.sin(ph))[:, None] * etas
    if space.kind == "hyperbolic":
        R = space.radius
        ph = ts / R
        return np.cosh(ph)[:, None] * starts + (R * np.sinh(ph))[:, None] * etas
    raise ValueError("batched exponential requires a space form")


def _march_rays_batch(imm, cache, starts_pts, etas, refs_pt, refs_u, steps, caps,
                      offsets=None, prune_slack=None, newton_iters: int = 12):
    """Synchronized coarse march of many rays until their foot flips.

    Returns (hit, lo, hi, warm): per-ray crossing brackets [lo, hi] and the
    last projection parameters.  When ``offsets`` is given, rays are pruned
    dynamically against the best upper bound of offset + t (candidate value)
    plus ``prune_slack``.
    """
    B = len(steps)
    t = np.asarray(steps, dtype=float).copy()
    steps = np.asarray(steps, dtype=float)
    caps = np.asarray(caps, dtype=float).copy()
    prev = np.zeros(B)
    alive = t <= caps + 1e-12
    hit = np.zeros(B, dtype=bool)
    lo = np.zeros(B)
    hi = np.zeros(B)
    warm = np.array(refs_u, dtype=float).copy()
    best_up = math.inf
    while np.any(alive):
        idx = np.flatnonzero(alive)
        X_t = _exp_points_batch(imm.space, starts_pts[idx], etas[idx], t[idx])
        d_ref = amb.distance_many(imm.space, X_t, refs_pt[idx])
        d_min, u_min = _batched_min_distance(imm, cache, X_t, warm=warm[idx],
                                             iters=newton_iters)
        warm[idx] = u_min
        coll = d_min < d_ref - 1e-14 * (1.0 + d_ref)
        hidx = idx[coll]
        if hidx.size:
            hit[hidx] = True
            lo[hidx] = prev[hidx]
            hi[hidx] = t[hidx]
            alive[hidx] = False
            if offsets is not None:
                best_up = min(best_up, float(np.min(offsets[hidx] + hi[hidx])))
                caps = np.minimum(caps, best_up - offsets + prune_slack)
        midx = idx[~coll]
        prev[midx] = t[midx]
        t[midx] = t[midx] + steps[midx]
        alive[midx] &= t[midx] <= caps[midx] + 1e-12
    return hit, lo, hi, warm


# ---------------------------------------------------------------------------
# foot points

@dataclass(frozen=True)
class FootPointSet:
    """Clustered nearest points on M to an ambient query point."""

    query: Point
    minimizers: list          # [(param u, distance), ...] sorted by distance
    dist_tol: float
    cluster_tol: float
    imm: Immersion = field(repr=False, default=None)

    @property
    def distance(self) -> float:
        return self.minimizers[0][1]

    @property
    def multiplicity(self) -> int:
        """Number of mutually distinct foot points.

        Distinct means parameter separation > cluster_tol and ambient
        separation > 10 * dist_tol, so exact symmetric ties count while
        numerically merged minimizers do not.
        """
        reps = self.distinct_parameters()
        return len(reps)

    def distinct_parameters(self) -> list:
        dom = self.imm.domain
        reps = []
        for u, d in self.minimizers:
            distinct = True
            for v in reps:
                if dom.param_distance(u, v) <= self.cluster_tol:
                    distinct = False
                    break
                fa = self.imm.points(u)
                fb = self.imm.points(v)
                if _dist_point(self.imm.space, fa, fb) <= 10.0 * self.dist_tol:
                    distinct = False
                    break
            if distinct:
                reps.append(u)
        return reps

    def contains_parameter(self, u, tol: Optional[float] = None) -> bool:
        tol = self.cluster_tol if tol is None else tol
        u = np.asarray(u, dtype=float)
        return any(self.imm.domain.param_distance(u, v) <= tol for v, _ in self.minimizers)


def foot_points(imm: Immersion, q, starts: Optional[int] = None,
                dist_tol: float = 1e-6, cluster_tol: float = 5e-2,
                cache: Optional[_ProjectionCache] = None) -> FootPointSet:
    """All nearest points on M to q, clustered with multiplicity.

    Multi-start local minimization of u -> d(q, F(u)) from a deterministic
    Halton grid over the parameter domain; minimizers within ``dist_tol`` of
    the global minimum are clustered by ``cluster_tol``.
    """
    q = q.coords if isinstance(q, Point) else np.asarray(q, dtype=float)
    k = imm.param_dim
    if starts is None:
        starts = 48 if k == 1 else 96
    starts = max(starts, 4 * k)

    if imm.space.kind == "chart":
        return _foot_points_chart(imm, q, starts, dist_tol, cluster_tol)

    dom = imm.domain
    U0 = dom.lows + halton_points(starts, k) * dom.spans
    if cache is not None:
        d2 = _dist2_batch(imm.space, q, cache.f_grid)
        best = cache.u_grid[np.argsort(d2)[:4]]
        U0 = np.concatenate([U0, best], axis=0)
    U, d = _newton_refine(imm, q, U0)
    if not np.all(np.isfinite(d)):
        raise ProjectionFailureError("projection produced non-finite distances")
    return _cluster_minimizers(imm, q, U, d, dist_tol, cluster_tol)


def _cluster_minimizers(imm, q, U, d, dist_tol, cluster_tol) -> FootPointSet:
    d_min = float(np.min(d))
    keep = d <= d_min + dist_tol
    Uk, dk = U[keep], d[keep]
    order = np.argsort(dk)
    reps: list = []
    for i in order:
        u = imm.domain.wrap(Uk[i])
        if any(imm.domain.param_distance(u, v) <= cluster_tol for v, _ in reps):
            continue
        reps.append((u, float(dk[i])))
    reps.sort(key=lambda t: (t[1], tuple(np.round(t[0], 9))))
    return FootPointSet(query=Point(q), minimizers=reps, dist_tol=dist_tol,
                        cluster_tol=cluster_tol, imm=imm)


def _foot_points_chart(imm, q, starts, dist_tol, cluster_tol):
    """Slow generic fallback: every distance evaluation solves a two-point
    geodesic problem by shooting, so only coarse multistarts are practical."""
    dom = imm.domain
    k = imm.param_dim
    per_axis = max(4 * k, min(starts, 12))
    grid = sample_grid(dom, [per_axis] if k == 1 else [max(4, int(round(per_axis ** (1 / k))))] * k)
    qp = Point(q)

    def dist_of(u):
        d, _ = amb.distance_and_log(imm.space, qp, Point(imm.points(u)), steps=96)
        return d

    dvals = np.array([dist_of(u) for u in grid])
    order = np.argsort(dvals)[:3]
    results = []
    for i in order:
        u = grid[i].copy()
        step = dom.spans / (2.0 * len(grid) ** (1.0 / k))
        d_cur = dvals[i]
        for _ in range(24):  # per-axis golden-style shrink
            moved = False
            for a in range(k):
                for sgn in (1.0, -1.0):
                    cand = u.copy()
                    cand[a] += sgn * step[a]
                    cand = dom.clamp(cand)
                    d_new = dist_of(cand)
                    if d_new < d_cur - 1e-14:
                        u, d_cur = cand, d_new
                        moved = True
            if not moved:
                step *= 0.5
            if np.all(step < 1e-7 * (1.0 + np.abs(u))):
                break
        results.append((u, d_cur))
    U = np.array([r[0] for r in results])
    d = np.array([r[1] for r in results])
    return _cluster_minimizers(imm, q, U, d, dist_tol, cluster_tol)


# ---------------------------------------------------------------------------
# reach estimators

@dataclass
class ReachEstimate:
    """Reach estimate with witness and sampling resolution."""

    tau_hat: float
    method: str
    witness_point: Optional[np.ndarray]
    witness_feet: Optional[FootPointSet]
    resolution: dict
    status: str = "ok"        # ok | unbounded | insufficient_resolution
    events: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "tau_hat": float(self.tau_hat),
            "method": self.method,
            "status": self.status,
            "witness_point": None if self.witness_point is None
            else [float(x) for x in self.witness_point],
            "witness_distance": None if self.witness_feet is None
            else float(self.witness_feet.distance),
            "witness_multiplicity": None if self.witness_feet is None
            else int(self.witness_feet.multiplicity),
            "resolution": {k: (float(v) if isinstance(v, (int, float)) else v)
                           for k, v in self.resolution.items()},
        }


@dataclass(frozen=True)
class ReachAssigner:
    """A medial point realizing the reach, with its foot-point data."""

    q: np.ndarray
    foot_points: FootPointSet
    classification: str    # bottleneck | unique_foot_point


def _normal_directions(fr, normal_samples: int) -> np.ndarray:
    """Normal probe directions: +-eta in codimension 1, a great-circle grid
    in the first two normal directions otherwise."""
    normals = fr.normals
    if normals.shape[0] == 1:
        return np.stack([normals[0], -normals[0]])
    count = max(normal_samples, 4)
    ang = 2.0 * math.pi * np.arange(count) / count
    return np.outer(np.cos(ang), normals[0]) + np.outer(np.sin(ang), normals[1])


def _diameter(space, F: np.ndarray) -> float:
    anchors = F[:: max(1, F.shape[0] // 8)]
    d = 0.0
    for a in anchors:
        d = max(d, float(np.max(amb.distance_many(space, a, F))))
    return d


def reach_normal_collision(imm: Immersion, surface_samples: int = 48,
                           normal_samples: int = 8, march_step: float = 0.0,
                           horizon: Optional[float] = None,
                           bisect_tol: float = 1e-8,
                           refine_argmin: bool = True,
                           cache: Optional[_ProjectionCache] = None) -> ReachEstimate:
    """Reach via first collision of marching normal geodesics.

    For each sampled surface point p and unit normal eta, march t along
    exp_p(t eta) until p stops being a foot point of the marched point, then
    bisect the crossing.  tau_hat is the minimum over all rays; refining the
    sample grid can only lower it.
    """
    space = imm.space
    k = imm.param_dim
    counts = _axis_counts(imm, surface_samples)
    P = sample_grid(imm.domain, counts)
    if cache is None:
        cache = _ProjectionCache(imm)
    diam = _diameter(space, cache.f_grid)
    if horizon is None:
        horizon = 4.0 * diam
        if space.kind == "sphere":
            horizon = min(horizon, math.pi * space.radius)
    if march_step <= 0.0:
        march_step = diam / 24.0

    # assemble the ray batch: every sampled point with every normal direction
    ray_u, ray_pt, ray_eta = [], [], []
    for u in P:
        fr = frame(imm, u)
        for eta in _normal_directions(fr, normal_samples):
            ray_u.append(fr.u)
            ray_pt.append(fr.point)
            ray_eta.append(eta)
    ray_u = np.array(ray_u)
    ray_pt = np.array(ray_pt)
    ray_eta = np.array(ray_eta)
    B = ray_u.shape[0]
    steps = np.full(B, march_step)
    caps = np.full(B, horizon)

    hit, lo, hi, _warm = _march_rays_batch(
        imm, cache, ray_pt, ray_eta, ray_pt, ray_u, steps, caps,
        offsets=np.zeros(B), prune_slack=march_step)

    events = []
    state = {"best": math.inf}
    hit_idx = np.flatnonzero(hit)
    if hit_idx.size == 0:
        return ReachEstimate(
            tau_hat=math.inf, method="normal_collision", witness_point=None,
            witness_feet=None, status="unbounded",
            resolution={"surface_samples": surface_samples,
                        "normal_samples": normal_samples,
                        "march_step": march_step, "horizon": horizon})

    def make_pred(i):
        return _collision_predicate(imm, cache, ray_u[i], ray_pt[i], ray_pt[i],
                                    ray_eta[i], newton_iters=16, top=3)

    resolved, _best = _resolve_hits(lo, hi, np.zeros(B), make_pred, hit_idx,
                                    bisect_tol)
    best_ray = None
    for i in hit_idx:
        t_hit = resolved.get(i, hi[i])
        events.append((t_hit, imm.domain.wrap(ray_u[i].copy()), ray_eta[i]))
        state["best"] = min(state["best"], t_hit)
        if best_ray is None or t_hit < best_ray[0]:
            best_ray = (t_hit, ray_u[i].copy(), ray_eta[i])

    if refine_argmin and k >= 1:
        best_ray = _refine_collision_argmin(imm, cache, best_ray, march_step,
                                            horizon, bisect_tol, state, events)

    t_best, u_best, eta_best = best_ray
    witness = _exp_point(space, imm.points(u_best), eta_best, t_best)
    feet = foot_points(imm, witness, cache=cache)
    events.sort(key=lambda e: (e[0], tuple(np.round(e[1], 9))))
    return ReachEstimate(
        tau_hat=t_best, method="normal_collision", witness_point=witness,
        witness_feet=feet,
        resolution={"surface_samples": surface_samples,
                    "normal_samples": normal_samples,
                    "march_step": march_step, "horizon": horizon},
        events=events)


def _axis_counts(imm: Immersion, total: int) -> list:
    k = imm.param_dim
    if k == 1:
        return [max(total, 4)]
    per = max(2, int(round(total ** (1.0 / k))))
    return [per] * k


def _exp_point(space, p_coords, eta, t):
    tang = amb.Tangent(Point(p_coords), t * np.asarray(eta, dtype=float))
    return amb.exponential(space, Point(p_coords), tang).coords


def _collision_predicate(imm, cache, u_ref, ref_pt, start_pt, eta,
                         newton_iters: int = 36, top: int = 4):
    """Returns collided(t): has the reference point stopped being a foot of
    exp_start(t eta)?  Warm-starts the projection across calls."""
    space = imm.space
    u_ref = np.asarray(u_ref, dtype=float)
    state = {"warm": [u_ref]}

    def gap_of(t):
        x = _exp_point(space, start_pt, eta, t)
        d_ref = _dist_point(space, x, ref_pt)
        d_min, u_min = _global_min_distance(imm, x, cache,
                                            extra_starts=state["warm"],
                                            iters=newton_iters, top=top)
        state["warm"] = [u_ref, u_min]
        return d_ref - d_min, d_ref

    def collided(t):
        gap, d_ref = gap_of(t)
        return gap > 1e-14 * (1.0 + d_ref)

    collided.gap_of = gap_of
    return collided


def _bisect_crossing(collided, lo, hi, bisect_tol):
    while hi - lo > bisect_tol:
        mid = 0.5 * (lo + hi)
        if collided(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _resolve_hits(lo, hi, offsets, make_predicate, hit_idx, bisect_tol):
    """Refine crossing brackets to exact values, cheaply skipping losers.

    Rays are visited in order of their best possible value (offset + lo).  A
    single predicate evaluation at the current best value dismisses rays
    that cannot improve it; the rest are bisected.  Returns ({ray: t_hit},
    best value); dismissed rays keep their conservative upper bracket end.
    """
    order = sorted(hit_idx, key=lambda i: offsets[i] + lo[i])
    resolved = {}
    best = math.inf
    for i in order:
        if offsets[i] + lo[i] >= best:
            continue
        pred = make_predicate(i)
        t_test = best - offsets[i]
        if t_test >= hi[i]:
            t_hit = _bisect_crossing(pred, lo[i], hi[i], bisect_tol)
        else:
            if not pred(t_test):
                continue
            t_hit = _bisect_crossing(pred, lo[i], t_test, bisect_tol)
        resolved[i] = t_hit
        best = min(best, offsets[i] + t_hit)
    return resolved, best


def _march_ray(imm, cache, u_ref, ref_pt, start_pt, eta, step, cap, bisect_tol,
               newton_iters: int = 36, top: int = 4,
               refine_below: float = math.inf):
    """First t in (0, cap] where the reference point stops being a foot of
    exp_start(t eta).  Returns (t_hit, refined); None when no crossing.

    Crossings whose bracket starts above ``refine_below`` skip bisection and
    report the conservative upper end of the bracket.
    """
    collided = _collision_predicate(imm, cache, u_ref, ref_pt, start_pt, eta,
                                    newton_iters, top)
    t = step
    prev = 0.0
    while t <= cap + 1e-12:
        if collided(t):
            if prev <= refine_below:
                return _bisect_crossing(collided, prev, t, bisect_tol), True
            return t, False
        prev = t
        t += step
    return None


def _refine_collision_argmin(imm, cache, best_ray, step, horizon, bisect_tol,
                             state, events):
    """Golden-section polish of the collision distance over the surface
    parameter near the minimizing sample (per axis, a few rounds)."""
    t_best, u_best, eta_best = best_ray
    k = imm.param_dim
    gold = (math.sqrt(5.0) - 1.0) / 2.0
    counts = cache.counts

    coarse_tol = max(bisect_tol, 1e-6)

    def t_of(u, tol):
        fr = frame(imm, u)
        dirs = _normal_directions(fr, 8)
        # keep the probe direction aligned with the winning ray
        sims = [float(amb.inner(imm.space, fr.point, d, eta_best)) for d in dirs]
        eta = dirs[int(np.argmax(sims))]
        hit = _march_ray(imm, cache, u, fr.point, fr.point, eta, step,
                         min(horizon, state["best"] + step), tol,
                         newton_iters=16, top=3)
        return math.inf if hit is None else hit[0]

    u_cur = np.asarray(u_best, dtype=float).copy()
    improved = False
    for _round in range(2 if k > 1 else 1):
        for a in range(imm.param_dim):
            span = imm.domain.spans[a] / counts[min(a, len(counts) - 1)]
            # symmetric scenarios have u-flat collision distances; probe one
            # neighbor before paying for a golden-section scan of the axis
            u_probe = u_cur.copy()
            u_probe[a] += 0.37 * span
            if abs(t_of(u_probe, coarse_tol) - t_best) <= 10.0 * coarse_tol:
                continue
            lo, hi = u_cur[a] - span, u_cur[a] + span
            x1 = hi - gold * (hi - lo)
            x2 = lo + gold * (hi - lo)
            ua, ub = u_cur.copy(), u_cur.copy()
            ua[a], ub[a] = x1, x2
            f1, f2 = t_of(ua, coarse_tol), t_of(ub, coarse_tol)
            for _ in range(18):
                if hi - lo < 1e-5 * (1.0 + abs(u_cur[a])):
                    break
                if f1 <= f2:
                    hi, x2, f2 = x2, x1, f1
                    x1 = hi - gold * (hi - lo)
                    ua = u_cur.copy()
                    ua[a] = x1
                    f1 = t_of(ua, coarse_tol)
                else:
                    lo, x1, f1 = x1, x2, f2
                    x2 = lo + gold * (hi - lo)
                    ub = u_cur.copy()
                    ub[a] = x2
                    f2 = t_of(ub, coarse_tol)
            u_new = u_cur.copy()
            u_new[a] = x1 if f1 <= f2 else x2
            t_new = min(f1, f2)
            if t_new < t_best + coarse_tol:
                u_cur = u_new
                improved = True
                fr = frame(imm, u_cur)
                dirs = _normal_directions(fr, 8)
                sims = [float(amb.inner(imm.space, fr.point, d, eta_best)) for d in dirs]
                eta_best = dirs[int(np.argmax(sims))]
    if improved:
        t_tight = t_of(u_cur, bisect_tol)
        if t_tight < t_best:
            t_best = t_tight
            state["best"] = min(state["best"], t_best)
            events.append((t_best, imm.domain.wrap(u_cur.copy()), eta_best))
            return t_best, u_cur, eta_best
    return t_best, np.asarray(u_best, dtype=float).copy(), best_ray[2]


# ---------------------------------------------------------------------------
# medial infimum

def _region_samples(space, region, count, f_grid):
    if space.kind == "sphere":
        n = space.ambient_dim
        if n != 3:
            raise ValueError("medial probing on spheres is implemented for S^2 models")
        i = np.arange(count, dtype=float)
        phi = math.pi * (3.0 - math.sqrt(5.0)) * i
        z = 1.0 - 2.0 * (i + 0.5) / count
        r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
        pts = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1) * space.radius
        spacing = math.sqrt(4.0 * math.pi * space.radius ** 2 / count)
        return pts, spacing
    if region is None:
        lo = f_grid.min(axis=0)
        hi = f_grid.max(axis=0)
        pad = 0.35 * float(np.max(hi - lo) + 1e-12)
        region = (lo - pad, hi + pad)
    lo, hi = np.asarray(region[0], float), np.asarray(region[1], float)
    m = lo.size
    per = max(3, int(round(count ** (1.0 / m))))
    axes = [np.linspace(lo[a], hi[a], per) for a in range(m)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=-1)
    spacing = float(np.max((hi - lo) / (per - 1)))
    return pts, spacing


def _neighbors(space, X, spacing):
    """Stencil of nearby probe points (ambient-aware)."""
    out = [X]
    if space.kind == "sphere":
        for x in X:
            basis = amb.tangent_basis(space, x)
            for b in basis:
                for sgn in (1.0, -1.0):
                    y = x + sgn * spacing * b
                    y *= space.radius / np.linalg.norm(y)
                    out.append(y[None, :])
        return np.concatenate([np.atleast_2d(o) for o in out], axis=0)
    m = X.shape[1]
    offsets = np.array(np.meshgrid(*([[-1.0, 0.0, 1.0]] * m), indexing="ij"))
    offsets = offsets.reshape(m, -1).T * spacing
    return (X[:, None, :] + offsets[None, :, :]).reshape(-1, m)


def _exact_feet(imm, cache, X):
    """Exact nearest point on M for every probe row: (distances, params)."""
    U0 = _grid_argmin_chunked(imm, cache, X)
    U, d = _newton_refine(imm, X, U0, iters=24)
    return d, U


def _away_from_foot(space, x, foot_pt, d1):
    """Unit direction at x continuing the geodesic from the foot through x."""
    v = amb.distance_and_log(space, Point(x), Point(foot_pt))[1].components
    return -v / max(d1, 1e-300)


def _medialize(imm, cache, x_c, foot_pt, warm=None):
    """Shift a near-crossing point to the midpoint between its two competing
    feet and return (exact d(., M) there, shifted point).

    Rays crossing a low-dimensional medial filament (e.g. a core circle in a
    3-space) generically miss it by the probe resolution; the midpoint shift
    cancels that first-order miss.
    """
    space = imm.space
    d_min, u_min = _global_min_distance(imm, x_c, cache, extra_starts=warm)
    d_ref = _dist_point(space, x_c, foot_pt)
    gap = d_ref - d_min
    if gap <= 1e-12 * (1.0 + d_ref) or d_min <= 1e-12:
        return d_min, x_c
    near_pt = imm.points(u_min)
    eta2 = _away_from_foot(space, x_c, near_pt, d_min)
    x_med = _exp_point(space, x_c, eta2, 0.5 * gap)
    d_med, _ = _global_min_distance(imm, x_med, cache, extra_starts=[u_min])
    return d_med, x_med


def _crossing_candidates(imm, cache, X, spacing, best_val, coarse_tol):
    """March every probe away from its foot; collect medial crossings.

    A crossing of the medial set at distance t along the ray gives a medial
    point with d(., M) equal to the distance of the crossing point to the
    original foot.  Marching is capped by the running best value so probes
    that cannot improve the infimum stay cheap; crossings are bisected to
    ``coarse_tol`` only when they compete for the infimum.
    """
    space = imm.space
    d1, U1 = _exact_feet(imm, cache, X)
    keepers = d1 > 1e-9
    X, d1, U1 = X[keepers], d1[keepers], U1[keepers]
    B = X.shape[0]
    if B == 0:
        return [], best_val
    feet_pts = imm.points(U1)
    # away-from-foot directions (batch: space forms have closed-form logs)
    etas = np.empty_like(X)
    ok = np.ones(B, dtype=bool)
    for i in range(B):
        try:
            etas[i] = _away_from_foot(space, X[i], feet_pts[i], float(d1[i]))
        except Exception:
            ok[i] = False
    X, d1, U1, feet_pts, etas = X[ok], d1[ok], U1[ok], feet_pts[ok], etas[ok]
    B = X.shape[0]

    slack = 2.0 * spacing + 1e-6
    caps = 0.6 * d1 + 2.0 * spacing
    steps = np.maximum(0.2 * d1, 0.1 * spacing)
    best = best_val
    if math.isfinite(best):
        room = best - d1 + slack
        caps = np.minimum(caps, np.where(d1 >= best + slack, slack, room))
        steps = np.minimum(np.maximum(0.25 * np.maximum(room, 0.0), 0.05 * d1), caps)
    live = (caps > 0) & (steps > 0)
    X, d1, U1, feet_pts, etas = X[live], d1[live], U1[live], feet_pts[live], etas[live]
    caps, steps = caps[live], steps[live]
    B = X.shape[0]
    if B == 0:
        return [], best

    hit, lo, hi, warm = _march_rays_batch(
        imm, cache, X, etas, feet_pts, U1, steps, caps,
        offsets=d1, prune_slack=slack)
    out = []
    hit_idx = np.flatnonzero(hit)
    if hit_idx.size == 0:
        return [], best

    def make_pred(i):
        return _collision_predicate(imm, cache, U1[i], feet_pts[i], X[i],
                                    etas[i], newton_iters=14, top=2)

    resolved, _best = _resolve_hits(lo, hi, d1, make_pred, hit_idx, coarse_tol)
    for i in hit_idx:
        t_hit = resolved.get(i)
        if t_hit is not None:
            x_c = _exp_point(space, X[i], etas[i], t_hit)
            val, x_c = _medialize(imm, cache, x_c, feet_pts[i], warm=[U1[i]])
        else:
            t_hit = hi[i]
            x_c = _exp_point(space, X[i], etas[i], t_hit)
            val = _dist_point(space, x_c, feet_pts[i])
        out.append((val, x_c, X[i], etas[i], t_hit))
        best = min(best, val)
    return out, best


def reach_medial_infimum(imm: Immersion, ambient_samples: int = 1000,
                         region=None, stages: int = 4, keep: int = 10,
                         dist_tol: float = 1e-6, cluster_tol: float = 5e-2,
                         bisect_tol: float = 1e-8,
                         cache: Optional[_ProjectionCache] = None) -> ReachEstimate:
    """Reach as the infimum of d(., M) over detected medial points.

    Every probe-region sample is projected to M exactly and then marched
    along its normal ray away from the foot; where a second foot takes over
    (multiplicity >= 2, the medial set) the crossing point is recorded with
    its distance to M.  A shrinking neighborhood descent around the best
    crossings refines the infimum and the final witness.
    """
    space = imm.space
    if space.kind == "chart":
        raise ValueError("medial probing needs closed-form ambient distances")
    if cache is None:
        cache = _ProjectionCache(imm)
    X, spacing = _region_samples(space, region, ambient_samples, cache.f_grid)

    all_events: list = []
    candidates: list = []
    best = math.inf
    for stage in range(stages):
        coarse_tol = max(bisect_tol, 0.04 * spacing)
        found, best = _crossing_candidates(imm, cache, X, spacing, best, coarse_tol)
        all_events.extend(found)
        pool = sorted(all_events, key=lambda e: e[0])
        candidates = []
        for ev in pool:
            if len(candidates) >= keep:
                break
            if all(_dist_point(space, ev[1], c[1]) > 0.4 * spacing for c in candidates):
                candidates.append(ev)
        if not candidates:
            return ReachEstimate(
                tau_hat=math.inf, method="medial_infimum", witness_point=None,
                witness_feet=None, status="insufficient_resolution",
                resolution={"ambient_samples": ambient_samples, "stages": stages})
        spacing *= 0.5
        if stage < stages - 1:
            X = _neighbors(space, np.array([c[1] for c in candidates]), spacing)

    # tight re-bisection of the leading rays
    polished = []
    for val, x_c, x0, eta, t_hit in candidates[:4]:
        d_x0, u_x0 = _global_min_distance(imm, x0, cache)
        foot_pt = imm.points(u_x0)
        collided = _collision_predicate(imm, cache, u_x0, foot_pt, x0, eta)
        hi = t_hit
        if not collided(hi):
            hi = t_hit * 1.05 + bisect_tol
            if not collided(hi):
                polished.append((val, x_c))
                continue
        lo = max(hi - 0.05 * max(val, 1e-6), 0.0)
        while lo > 0.0 and collided(lo):
            lo = max(lo - 0.1 * hi, 0.0)
        t_tight = _bisect_crossing(collided, lo, hi, bisect_tol)
        x_tight = _exp_point(space, x0, eta, t_tight)
        polished.append(_medialize(imm, cache, x_tight, foot_pt, warm=[u_x0]))
    polished.sort(key=lambda e: e[0])
    d_best, x_best = polished[0]

    feet = foot_points(imm, x_best, dist_tol=dist_tol, cluster_tol=cluster_tol,
                       cache=cache)
    events = sorted(((e[0], e[1]) for e in all_events), key=lambda e: e[0])[: 4 * keep]
    return ReachEstimate(
        tau_hat=d_best, method="medial_infimum", witness_point=np.asarray(x_best),
        witness_feet=feet,
        resolution={"ambient_samples": ambient_samples, "stages": stages,
                    "final_spacing": spacing},
        events=events)


def _grid_distance_error(imm, cache) -> float:
    """Crude bound on d(x, grid) - d(x, M) from the image grid spacing."""
    counts = [c if imm.domain.periodic[a] else c - 1
              for a, c in enumerate(cache.counts)]
    Fg = cache.f_grid.reshape(*counts, -1)
    worst = 0.0
    for a in range(imm.param_dim):
        d = np.linalg.norm(np.roll(Fg, -1, axis=a) - Fg, axis=-1)
        if not imm.domain.periodic[a]:
            d = np.moveaxis(d, a, 0)[:-1]  # drop the wrap-around pair
        worst = max(worst, float(np.max(d)))
    return 0.5 * worst


# ---------------------------------------------------------------------------
# reach-assigning points

def reach_assigning_points(imm: Immersion, estimate: ReachEstimate, tol: float,
                           dist_tol: float = 1e-6, cluster_tol: float = 5e-2,
                           max_points: int = 6,
                           cache: Optional[_ProjectionCache] = None) -> list:
    """Collect witnesses with d(q, M) within tol of tau_hat and classify them.

    Classification is ``bottleneck`` when the foot-point multiplicity is at
    least two at the given tolerances, else ``unique_foot_point``.
    """
    if estimate.status != "ok" or not math.isfinite(estimate.tau_hat):
        return []
    if cache is None:
        cache = _ProjectionCache(imm)
    space = imm.space
    qs = []
    if estimate.method == "normal_collision":
        for t_hit, u_p, eta in estimate.events:
            if t_hit <= estimate.tau_hat + tol:
                qs.append(_exp_point(space, imm.points(u_p), eta, t_hit))
    else:
        for d_val, x in estimate.events:
            if d_val <= estimate.tau_hat + tol:
                qs.append(np.asarray(x, dtype=float))
    if estimate.witness_point is not None:
        qs.insert(0, np.asarray(estimate.witness_point, dtype=float))

    out = []
    for q in qs:
        if len(out) >= max_points:
            break
        q = _snap_to_medial(imm, cache, q)
        if any(_dist_point(space, q, a.q) <= max(tol, 1e-6) for a in out):
            continue
        feet = foot_points(imm, q, dist_tol=dist_tol, cluster_tol=cluster_tol,
                           cache=cache)
        if feet.distance > estimate.tau_hat + tol:
            continue
        cls = "bottleneck" if feet.multiplicity >= 2 else "unique_foot_point"
        out.append(ReachAssigner(q=q, foot_points=feet, classification=cls))
    return out


def _snap_to_medial(imm, cache, q):
    """Pull a near-medial candidate onto the medial set.

    Coarse witnesses sit slightly off the medial set, where the foot-point
    set collapses to a single cluster and classification would be wrong.
    Marching away from the current foot relocates the crossing; the midpoint
    shift then cancels any remaining miss.
    """
    d_q, u_q = _global_min_distance(imm, q, cache)
    if d_q <= 1e-9:
        return q
    foot_pt = imm.points(u_q)
    try:
        eta = _away_from_foot(imm.space, q, foot_pt, d_q)
    except Exception:
        return q
    hit = _march_ray(imm, cache, u_q, foot_pt, q, eta,
                     step=max(0.05 * d_q, 1e-7), cap=0.35 * d_q,
                     bisect_tol=1e-9, newton_iters=20, top=2)
    if hit is None:
        return q
    x_c = _exp_point(imm.space, q, eta, hit[0])
    _, x_med = _medialize(imm, cache, x_c, foot_pt, warm=[u_q])
    return x_med
