"""Scenario runner and command-line interface.

Subcommands:
  list                      print the scenario registry
  run --config cfg.json     run configured scenarios, write a report
  check <scenario>          run one built-in scenario with defaults

Exit status: 0 all checks pass, 1 check failure, 2 configuration error,
3 numeric error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import ambient as amb
from . import immersion as imm_mod
from . import reach as reach_mod
from . import variation as var_mod
from .ambient import Point, Tangent
from .errors import ConfigError, GeometryError, ScenarioNotFoundError
from .scenarios import ScenarioDefinition, get_scenario, scenario_names

__all__ = [
    "ScenarioConfig",
    "ScenarioResult",
    "run_scenario",
    "run_many",
    "emit_report",
    "main",
]

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


# ---------------------------------------------------------------------------
# configuration

_CONFIG_FIELDS = {
    "surface_samples", "normal_samples", "ambient_samples", "quadrature_order",
    "ode_steps", "dist_tol", "cluster_tol", "pass_tol", "equality_tol",
    "fd_tau", "fd_h", "declared_reach", "c_lower", "region", "seed",
    "immersion", "ambient",
}


@dataclass
class ScenarioConfig:
    """A registry scenario plus optional overrides of its defaults."""

    name: str
    overrides: dict = field(default_factory=dict)
    seed: int = 0

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise ConfigError("scenario entry must be an object")
        if "name" not in data:
            raise ConfigError("scenario entry needs a 'name'")
        name = data["name"]
        get_scenario(name)  # raises ScenarioNotFoundError for unknown names
        overrides = {k: v for k, v in data.items() if k != "name"}
        unknown = set(overrides) - _CONFIG_FIELDS
        if unknown:
            raise ConfigError(f"unknown scenario options: {sorted(unknown)}")
        for key in ("surface_samples", "normal_samples", "ambient_samples",
                    "quadrature_order", "ode_steps"):
            if key in overrides and int(overrides[key]) <= 0:
                raise ConfigError(f"{key} must be positive")
        for key in ("dist_tol", "cluster_tol", "pass_tol", "equality_tol",
                    "fd_tau", "fd_h"):
            if key in overrides and float(overrides[key]) <= 0:
                raise ConfigError(f"{key} must be positive")
        for key in ("immersion", "ambient"):
            if key in overrides and not isinstance(overrides[key], dict):
                raise ConfigError(f"{key} must be an object of family parameters")
        seed = int(overrides.pop("seed", 0))
        return cls(name=name, overrides=overrides, seed=seed)

    @property
    def immersion_params(self) -> dict:
        return dict(self.overrides.get("immersion") or {})

    @property
    def ambient_params(self) -> dict:
        return dict(self.overrides.get("ambient") or {})

    def resolved(self) -> ScenarioDefinition:
        base = get_scenario(self.name)
        clean = {k: v for k, v in self.overrides.items()
                 if k not in ("immersion", "ambient")}
        if "region" in clean and clean["region"] is not None:
            lo, hi = clean["region"]
            clean["region"] = (tuple(float(x) for x in lo),
                               tuple(float(x) for x in hi))
        return dataclasses.replace(base, **clean)


def load_config(path: str) -> list:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}")
    if not isinstance(data, dict) or "schema_version" not in data:
        raise ConfigError("config must be an object with a schema_version field")
    if int(data["schema_version"]) != SCHEMA_VERSION:
        raise ConfigError(
            f"unsupported schema_version {data['schema_version']} (expected {SCHEMA_VERSION})")
    entries = data.get("scenarios")
    if not isinstance(entries, list) or not entries:
        raise ConfigError("config needs a non-empty 'scenarios' list")
    return [ScenarioConfig.from_dict(e) for e in entries]


# ---------------------------------------------------------------------------
# results

@dataclass
class Check:
    name: str
    lhs: float
    rhs: float
    residual: float
    passed: bool

    def __post_init__(self):
        self.lhs = float(self.lhs)
        self.rhs = float(self.rhs)
        self.residual = float(self.residual)
        self.passed = bool(self.passed)

    def to_row(self, scenario: str):
        return [scenario, self.name, repr(self.lhs), repr(self.rhs),
                repr(self.residual), str(self.passed).lower()]

    def to_dict(self) -> dict:
        return {"name": self.name, "lhs": self.lhs, "rhs": self.rhs,
                "residual": self.residual, "pass": self.passed}


@dataclass
class ScenarioResult:
    """All measured quantities and pass flags for one scenario run."""

    name: str
    reach_estimates: dict
    assigners: list
    checks: list
    bound_reports: list
    equality_reports: list
    defect_reports: list
    notes: list
    overall_pass: bool
    wall_time: float

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "reach": {k: v.to_dict() for k, v in self.reach_estimates.items()},
            "assigners": [
                {"q": [float(x) for x in np.asarray(a.q, dtype=float)],
                 "classification": a.classification,
                 "multiplicity": int(a.foot_points.multiplicity),
                 "distance": float(a.foot_points.distance)}
                for a in self.assigners],
            "checks": [c.to_dict() for c in self.checks],
            "bound_reports": [b.to_dict() for b in self.bound_reports],
            "equality_reports": [e.to_dict() for e in self.equality_reports],
            "defect_reports": [d.to_dict() for d in self.defect_reports],
            "notes": list(self.notes),
            "overall_pass": bool(self.overall_pass),
            "wall_time": self.wall_time,
        }


# ---------------------------------------------------------------------------
# orchestration

def run_scenario(config: ScenarioConfig) -> ScenarioResult:
    """Build the scenario, estimate the reach both ways, classify the reach
    assigners and run every configured inequality/equality/defect check."""
    t_start = time.perf_counter()
    sdef = config.resolved()
    try:
        space, imm = sdef.instantiate(config.immersion_params,
                                      config.ambient_params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad scenario parameters for {sdef.name}: {exc}")
    notes = [sdef.notes] if sdef.notes else []
    checks: list = []

    cache = None
    estimates = {}
    if sdef.declared_reach is not None:
        estimates["declared"] = reach_mod.ReachEstimate(
            tau_hat=float(sdef.declared_reach), method="declared",
            witness_point=None, witness_feet=None,
            resolution={}, status="ok")
        primary = estimates["declared"]
        notes.append("reach estimators skipped: declared analytic value used")
    else:
        cache = reach_mod._ProjectionCache(imm)
        est_nc = reach_mod.reach_normal_collision(
            imm, surface_samples=sdef.surface_samples,
            normal_samples=sdef.normal_samples, cache=cache)
        region = None
        if sdef.region is not None:
            region = (np.asarray(sdef.region[0], dtype=float),
                      np.asarray(sdef.region[1], dtype=float))
        est_mi = reach_mod.reach_medial_infimum(
            imm, ambient_samples=sdef.ambient_samples, region=region,
            dist_tol=sdef.dist_tol, cluster_tol=sdef.cluster_tol, cache=cache)
        estimates["normal_collision"] = est_nc
        estimates["medial_infimum"] = est_mi
        mean = 0.5 * (est_nc.tau_hat + est_mi.tau_hat)
        gap = abs(est_nc.tau_hat - est_mi.tau_hat)
        checks.append(Check("reach_method_agreement", est_nc.tau_hat,
                            est_mi.tau_hat, gap / mean if mean else math.inf,
                            gap <= 0.02 * mean))
        primary = est_nc if est_nc.tau_hat <= est_mi.tau_hat else est_mi

    tau = primary.tau_hat
    # reach-assigning points from every estimate; the tolerance is tight
    # because the equality checks below hold exactly only at points whose
    # distance to M equals the reach
    assigners = []
    if cache is not None:
        for est in estimates.values():
            assigners.extend(reach_mod.reach_assigning_points(
                imm, est, tol=max(2e-4 * tau, 1e-6),
                dist_tol=sdef.dist_tol, cluster_tol=sdef.cluster_tol,
                cache=cache))

    # extrinsic bound checks
    bound_reports = var_mod.check_extrinsic_bounds(
        imm, primary, geodesic_probes=8, normal_probes=sdef.normal_samples,
        tol=sdef.pass_tol, c_lower=sdef.c_lower,
        quad_order=sdef.quadrature_order)
    worst_pairing = max(r.accel_pairing for r in bound_reports)
    worst_shape = max(r.shape_norm for r in bound_reports)
    B = bound_reports[0].B
    checks.append(Check("pairing_bound", worst_pairing, B, B - worst_pairing,
                        all(r.pass_pairing for r in bound_reports)))
    accel_vals = [r.accel_norm for r in bound_reports if r.accel_norm is not None]
    if accel_vals:
        worst_accel = max(accel_vals)
        checks.append(Check("accel_bound", worst_accel, B, B - worst_accel,
                            all(r.pass_accel for r in bound_reports
                                if r.pass_accel is not None)))
    else:
        notes.append("acceleration bound not applicable: totally geodesic")
    checks.append(Check("shape_bound", worst_shape, B, B - worst_shape,
                        all(r.pass_shape for r in bound_reports)))

    # second-variation probes: closed form vs finite differences + sign
    sv_checks = _second_variation_checks(space, imm, sdef, tau, cache)
    checks.extend(sv_checks)

    # bottleneck / unique-foot-point equality
    equality_reports = []
    seen_cases = set()
    for a in assigners:
        if a.classification in seen_cases:
            continue
        seen_cases.add(a.classification)
        rep = var_mod.check_bottleneck_equality(imm, a, tol=sdef.equality_tol,
                                                quad_order=sdef.quadrature_order)
        equality_reports.append(rep)
        if rep.status == "ok":
            checks.append(Check(f"equality_{a.classification}", rep.lhs, rep.rhs,
                                rep.residual, bool(rep.passed)))
        elif rep.status == "scan_failed":
            checks.append(Check(f"equality_{a.classification}", math.nan,
                                math.nan, math.nan, False))

    # transport defect probes
    defect_reports = _defect_probes(imm, sdef, primary)
    for i, rep in enumerate(defect_reports):
        checks.append(Check(f"defect_bound_{i}", abs(rep.D), rep.bound,
                            rep.bound - abs(rep.D), rep.pass_bound))
        if rep.deriv_residual is not None:
            checks.append(Check(f"defect_derivative_{i}", rep.deriv_residual,
                                1e-4, 1e-4 - rep.deriv_residual,
                                bool(rep.pass_derivative)))

    overall = all(c.passed for c in checks)
    wall = time.perf_counter() - t_start
    return ScenarioResult(
        name=sdef.name, reach_estimates=estimates, assigners=assigners,
        checks=checks, bound_reports=bound_reports,
        equality_reports=equality_reports, defect_reports=defect_reports,
        notes=notes, overall_pass=overall, wall_time=wall)


def _second_variation_checks(space, imm, sdef, tau, cache) -> list:
    """Closed-form vs finite-difference L''(0) and its nonnegativity below
    the estimated reach, on a small deterministic probe set."""
    checks = []
    tau_probe = min(sdef.fd_tau, 0.8 * tau)
    h = sdef.fd_h
    counts = reach_mod._axis_counts(imm, 4 if imm.param_dim == 1 else 9)
    P = imm_mod.sample_grid(imm.domain, counts)[:3]
    worst_gap = 0.0
    min_value = math.inf
    any_probe = False
    for u in P:
        fr = imm_mod.frame(imm, u)
        eta = fr.normals[0]
        dirs = var_mod._tangent_directions(fr, 1)
        w = dirs[0]
        try:
            fd_val = var_mod.second_variation_fd(
                space, imm, u, eta, w, tau_probe, h=h,
                check_unique_foot=space.kind != "chart", cache=cache)
        except GeometryError:
            continue
        gamma_pi = imm_mod.covariant_split(imm, u)
        acc = np.einsum("mab,a,b->m", gamma_pi[1], w, w)
        pairing = float(amb.inner(space, fr.point, acc, eta))
        w_amb = fr.tangents @ w
        path = amb.geodesic(space, Point(fr.point),
                            Tangent(Point(fr.point), tau_probe * eta),
                            steps=sdef.ode_steps)
        I_val = var_mod.curvature_integral(space, path, w_amb,
                                           sdef.quadrature_order)
        closed = var_mod.second_variation_closed(tau_probe, I_val, pairing)
        worst_gap = max(worst_gap, abs(closed - fd_val))
        min_value = min(min_value, fd_val, closed)
        any_probe = True
    if any_probe:
        tol = max(1e-3, 10.0 * h ** 2)
        checks.append(Check("second_variation_consistency", worst_gap, tol,
                            tol - worst_gap, worst_gap <= tol))
        checks.append(Check("second_variation_nonneg", min_value, 0.0,
                            min_value, min_value >= -1e-6))
    return checks


def _defect_probes(imm, sdef, estimate) -> list:
    """Unit-speed, length-1 geodesics with transported unit vectors."""
    reports = []
    u0 = imm.domain.lows + 0.37 * imm.domain.spans
    fr = imm_mod.frame(imm, u0)
    dirs = var_mod._tangent_directions(fr, 2)
    w = dirs[0]
    curve = imm_mod.intrinsic_geodesic(imm, u0, w, 1.0,
                                       steps_per_unit=sdef.ode_steps)
    reports.append(var_mod.transport_defect(imm, curve, w, estimate,
                                            c=sdef.c_lower, tol=sdef.pass_tol))
    if imm.param_dim > 1:
        # second probe: transported vector orthogonal to the velocity
        w2 = dirs[1]
        reports.append(var_mod.transport_defect(imm, curve, w2, estimate,
                                                c=sdef.c_lower, tol=sdef.pass_tol))
    return reports


def run_many(configs: list, threads: int = 1) -> list:
    if threads <= 1 or len(configs) <= 1:
        return [run_scenario(c) for c in configs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run_scenario, configs))


# ---------------------------------------------------------------------------
# reports

def emit_report(results: list, fmt: str = "json", path: Optional[str] = None,
                configs: Optional[list] = None, plots_dir: Optional[str] = None):
    """Serialize results (JSON or CSV) and optionally draw SVG plots."""
    if fmt not in ("json", "csv"):
        raise ConfigError(f"unknown report format {fmt!r}")
    if fmt == "json":
        doc = {
            "schema_version": SCHEMA_VERSION,
            "config": [
                {"name": c.name, **c.overrides, "seed": c.seed}
                for c in (configs or [])
            ],
            "results": [r.to_dict() for r in results],
        }
        text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    else:
        import io

        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["scenario", "check", "lhs", "rhs", "residual", "pass"])
        for r in results:
            for c in r.checks:
                writer.writerow(c.to_row(r.name))
        text = buf.getvalue()
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    if plots_dir is not None:
        _emit_plots(results, plots_dir)


def _emit_plots(results: list, plots_dir: str):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(plots_dir, exist_ok=True)
    for r in results:
        for i, rep in enumerate(r.equality_reports):
            if getattr(rep, "scan_ss", None) is None:
                continue
            fig, ax = plt.subplots(figsize=(5, 3))
            ax.plot(rep.scan_ss, rep.scan_Ls)
            if rep.s0 is not None:
                ax.axvline(rep.s0, linestyle="--", linewidth=0.8)
            ax.set_xlabel("s")
            ax.set_ylabel("L(s)")
            ax.set_title(f"{r.name}: distance profile along the connecting geodesic")
            fig.tight_layout()
            fig.savefig(os.path.join(plots_dir, f"{r.name}_profile_{i}.svg"))
            plt.close(fig)
        for i, rep in enumerate(r.defect_reports):
            fig, ax = plt.subplots(figsize=(5, 3))
            ax.plot(rep.ts, rep.f_trace)
            ax.set_xlabel("t")
            ax.set_ylabel("f(t)")
            ax.set_title(f"{r.name}: transport comparison trace {i}")
            fig.tight_layout()
            fig.savefig(os.path.join(plots_dir, f"{r.name}_defect_{i}.svg"))
            plt.close(fig)
        if r.checks:
            fig, ax = plt.subplots(figsize=(6, 3))
            names = [c.name for c in r.checks]
            vals = [0.0 if math.isnan(c.residual) else c.residual for c in r.checks]
            ax.barh(range(len(names)), vals)
            ax.set_yticks(range(len(names)))
            ax.set_yticklabels(names, fontsize=6)
            ax.set_xlabel("residual")
            ax.set_title(f"{r.name}: check residuals")
            fig.tight_layout()
            fig.savefig(os.path.join(plots_dir, f"{r.name}_residuals.svg"))
            plt.close(fig)


# ---------------------------------------------------------------------------
# CLI

def _default_threads() -> int:
    env = os.environ.get("REACHKIT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def main(argv: Optional[list] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="reachkit",
        description="Reach, medial axis and extrinsic curvature checks for "
                    "compact submanifolds of model spaces.")
    sub = parser.add_subparsers(dest="command")

    sub.add_parser("list", help="print the scenario registry")

    p_run = sub.add_parser("run", help="run scenarios from a config file")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--format", choices=("json", "csv"), default="json")
    p_run.add_argument("--plots", default=None)
    p_run.add_argument("--threads", type=int, default=None)

    p_check = sub.add_parser("check", help="run one built-in scenario")
    p_check.add_argument("scenario")
    p_check.add_argument("--out", default=None)
    p_check.add_argument("--format", choices=("json", "csv"), default="json")

    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return EXIT_CONFIG

    if args.command == "list":
        for name in scenario_names():
            print(name)
        return EXIT_OK

    try:
        if args.command == "run":
            configs = load_config(args.config)
            threads = args.threads if args.threads else _default_threads()
            results = run_many(configs, threads=threads)
        else:
            configs = [ScenarioConfig.from_dict({"name": args.scenario})]
            results = [run_scenario(configs[0])]
    except (ConfigError, ScenarioNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GeometryError as exc:
        print(f"numeric error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    try:
        emit_report(results, fmt=args.format, path=args.out, configs=configs,
                    plots_dir=getattr(args, "plots", None))
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO

    for r in results:
        status = "pass" if r.overall_pass else "FAIL"
        print(f"[{status}] {r.name} ({r.wall_time:.1f}s)", file=sys.stderr)
    return EXIT_OK if all(r.overall_pass for r in results) else EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
