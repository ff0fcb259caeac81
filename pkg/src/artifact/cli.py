"""Command line: ``artifact <command> --config run.json [--out DIR] [--seed N] [--grid N] [--plot]``.

Exit status: 0 success, 1 configuration error, 2 an asserted invariant
failed, 3 the solver did not converge and found no destabilizer.
"""

from __future__ import annotations

import argparse
import sys
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import COMMANDS, RunConfig, from_dict, line_from_spec, load
from .curvature_reports import extension_soliton_check, lubke_report, prescribed_gamma, yang_mills_report
from .donaldson import donaldson_functional
from .errors import (ArtifactError, BackendMismatch, ConfigError, DegenerateDenominator, DeformationStuck,
                     FitDiverged, Inconclusive, InversionMismatch, NegativeTwist, NewtonDiverged, NonPositiveMetric,
                     NonPositiveWeight, NotSolvable, PreconditionWeight, WrongFamily)
from .geometry import EquivariantLineBundle, geometry, random_metric
from .intersections import TAU_BACKEND, beta_invariant, intersection_report
from .plots import emit_plot
from .serialize import write_csv, write_json
from .solver import (DET_TOL, SLOPE_TOL, closed_form_moment, continuity_run, line_bundle_whe, moment_profile,
                     weight_deformation_run, whe_residual)
from .stability import euler_expansion_check, gieseker_compare, stability_verdict
from .weights import hessian_condition_check, make_weight

EXIT_OK, EXIT_CONFIG, EXIT_ASSERT, EXIT_SOLVER = 0, 1, 2, 3

INPUT_ERRORS = (ConfigError, PreconditionWeight, WrongFamily, DegenerateDenominator, NegativeTwist,
                NonPositiveWeight, NonPositiveMetric)
ASSERT_ERRORS = (BackendMismatch, InversionMismatch)
SOLVER_ERRORS = (NewtonDiverged, DeformationStuck, NotSolvable, FitDiverged, Inconclusive)


class AssertionFailure(ArtifactError):
    code = "assertion"


class SolverFailure(ArtifactError):
    code = "solver"


# ---------------------------------------------------------------------------
# report helpers


def provenance(cfg: RunConfig) -> dict:
    return {
        "versions": {
            "artifact": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "jsonschema": metadata.version("jsonschema"),
        },
        "command": cfg.command,
        "grid": cfg.grid,
        "seed": cfg.seed,
        "tolerances": {
            "backend": TAU_BACKEND,
            "slope": SLOPE_TOL,
            "det_one": DET_TOL,
            "newton": cfg.solver.newton_tol,
            "converge": cfg.solver.converge_tol,
        },
        "config": {k: v for k, v in cfg.raw.items() if k != "out"},
    }


class Run:
    """Collects the JSON body, CSV tables and plots of one command."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = Path(cfg.out)
        self.files = []
        self.failures = []
        self.nonconverged = None

    def csv(self, name, rows, columns):
        write_csv(self.out / name, rows, columns)
        self.files.append(name)

    def plot(self, name, series, kind, **labels):
        if self.cfg.plot:
            emit_plot(series, kind, self.out / name, **labels)
            self.files.append(name)

    def check(self, ok: bool, message: str):
        if not ok:
            self.failures.append(message)


def _need(cfg: RunConfig, *names):
    for name in names:
        if getattr(cfg, name) is None:
            raise ConfigError(f"command '{cfg.command}' needs '{name}'", field=name)


# ---------------------------------------------------------------------------
# commands


def cmd_intersect(run: Run) -> dict:
    cfg = run.cfg
    _need(cfg, "bundle", "weight")
    rep = intersection_report(cfg.bundle, cfg.weight, cfg.second_weight)
    mu = np.linspace(0.0, 1.0, 201)
    run.plot("intersect_weight.svg", {"x": mu, "y": cfg.weight.value(mu), "name": cfg.weight.label()},
             "polytope-weight")
    return {"bundle": cfg.bundle.label(), "weight": cfg.weight.label(), "report": rep}


def cmd_stability(run: Run) -> dict:
    cfg = run.cfg
    _need(cfg, "bundle", "weight")
    verdict = stability_verdict(cfg.bundle, cfg.weight)
    series = euler_expansion_check(cfg.bundle, cfg.weight, cfg.euler.get("k_values"))
    run.csv("stability_euler.csv", series.rows(), ["k", "chi_v", "residual"])
    run.check(series.passed, "Euler expansion coefficients outside tolerance")
    euler = {k: getattr(series, k) for k in ("A", "B", "A_expected", "B_expected", "decay_exponent",
                                             "exact", "outside_unit_interval", "passed", "checks")}
    return {"bundle": cfg.bundle.label(), "weight": cfg.weight.label(), "verdict": verdict, "euler": euler}


def cmd_gieseker(run: Run) -> dict:
    cfg = run.cfg
    _need(cfg, "bundle", "weight")
    rep = gieseker_compare(cfg.bundle, cfg.weight, cfg.euler.get("k_values"))
    slope = stability_verdict(cfg.bundle, cfg.weight)
    return {"bundle": cfg.bundle.label(), "weight": cfg.weight.label(), "gieseker": rep,
            "slope_verdict": slope.verdict}


def _solve_line(run: Run) -> tuple:
    cfg = run.cfg
    geom = geometry(cfg.grid)
    metric = line_bundle_whe(cfg.bundle, cfg.weight, geom)
    phi = moment_profile(metric)[:, 0, 0].real
    exact = closed_form_moment(cfg.bundle.summands[0], cfg.weight, geom.mu)
    residual = whe_residual(cfg.bundle, metric, cfg.weight)
    run.csv("solve_profile.csv", [{"mu": m, "phi": p, "phi_exact": e} for m, p, e in zip(geom.mu, phi, exact)],
            ["mu", "phi", "phi_exact"])
    run.plot("solve_profile.svg", [{"x": geom.mu, "y": phi, "name": "phi (solved)"}], "profile")
    body = {
        "mode": "line",
        "status": "converged",
        "residual": residual,
        "closed_form_error": float(np.max(np.abs(phi - exact))),
        "mu": geom.mu,
        "phi": phi,
        "log_metric_ratio": np.log(metric.diag[:, 0]),
    }
    return body, metric


def _solve_continuity(run: Run) -> tuple:
    cfg = run.cfg
    try:
        outcome = continuity_run(cfg.bundle, cfg.weight, cfg.solver)
    except NewtonDiverged as exc:
        trail = [exc.last_state.row()] if exc.last_state is not None else []
        run.csv("solve_trail.csv", trail, ["epsilon", "residual", "m_eps", "det_error"])
        raise
    run.csv("solve_trail.csv", outcome.trail, ["epsilon", "residual", "m_eps", "det_error"])
    eps = [row["epsilon"] for row in outcome.trail]
    m = [row["m_eps"] for row in outcome.trail]
    if any(x > 0 for x in m):
        run.plot("solve_convergence.svg", [{"x": eps, "y": m, "name": "m_eps"}], "convergence")
    run.check(not outcome.violations, "; ".join(outcome.violations))
    if outcome.status == "destabilized":
        verdict = stability_verdict(cfg.bundle, cfg.weight)
        img = (outcome.projector or {}).get("image_slope")
        ok = img is not None and img >= verdict.bundle_slope - SLOPE_TOL * max(1.0, abs(verdict.bundle_slope))
        run.check(ok, "destabilizing image slope below the bundle slope")
    body = {"mode": "continuity", "outcome": outcome}
    if outcome.status == "budget_exhausted":
        run.nonconverged = outcome.message or "continuity budget exhausted"
    return body, outcome.metric


def _solve_deform(run: Run) -> tuple:
    cfg = run.cfg
    spec = cfg.deform
    if spec is None:
        raise ConfigError("mode 'deform' needs a 'deform' block", field="deform")
    base = dict(cfg.raw["weight"])
    param = spec["parameter"]

    def v_path(t):
        return make_weight(dict(base, **{param: t}))

    try:
        v_path(spec["start"])
    except (TypeError, ArtifactError) as exc:
        raise ConfigError(f"weight cannot be deformed along '{param}': {exc}", field="deform.parameter") from None
    geom = geometry(cfg.grid)
    initial = line_bundle_whe(cfg.bundle, v_path(spec["start"]), geom) if cfg.bundle.rank == 1 else None
    res = weight_deformation_run(cfg.bundle, v_path, spec["start"], spec["end"], initial=initial,
                                 steps=spec.get("steps", 8))
    run.csv("solve_deform.csv", [{"t": t, "residual": r} for t, r in zip(res.t_values, res.residuals)],
            ["t", "residual"])
    body = {"mode": "deform", "t_values": res.t_values, "residuals": res.residuals, "status": "converged"}
    if cfg.bundle.rank == 1:
        final = res.metrics[-1]
        phi = moment_profile(final)[:, 0, 0].real
        exact = closed_form_moment(cfg.bundle.summands[0], v_path(res.t_values[-1]), geom.mu)
        body["closed_form_error"] = float(np.max(np.abs(phi - exact)))
        run.plot("solve_profile.svg", [{"x": geom.mu, "y": phi, "name": f"phi at t={res.t_values[-1]:g}"}],
                 "profile")
    return body, res.metrics[-1]


def _solve(run: Run) -> tuple:
    cfg = run.cfg
    _need(cfg, "bundle", "weight")
    mode = cfg.mode
    if mode == "line":
        if cfg.bundle.rank != 1:
            raise ConfigError("mode 'line' needs a rank one bundle", field="mode")
        return _solve_line(run)
    if mode == "continuity":
        return _solve_continuity(run)
    return _solve_deform(run)


def cmd_solve(run: Run) -> dict:
    body, _ = _solve(run)
    return {"bundle": run.cfg.bundle.label(), "weight": run.cfg.weight.label(), "solve": body}


def cmd_lubke(run: Run) -> dict:
    cfg = run.cfg
    _need(cfg, "bundle", "weight")
    n = int(cfg.lubke.get("n", 1))
    check = hessian_condition_check(cfg.weight, n)
    if not check.holds:
        raise PreconditionWeight(f"weight {cfg.weight.label()} fails the Hessian condition "
                                 f"(max {check.max_margin:.3g})")
    if cfg.bundle.rank == 1:
        metric = line_bundle_whe(cfg.bundle, cfg.weight, geometry(cfg.grid))
    else:
        outcome = continuity_run(cfg.bundle, cfg.weight, cfg.solver)
        if outcome.status != "converged":
            raise SolverFailure(f"no weighted Hermite-Einstein metric: {outcome.status}")
        metric = outcome.metric
    rep = lubke_report(cfg.bundle, metric, cfg.weight, n)
    run.check(rep.holds, "weighted Lubke inequality violated")
    body = {"bundle": cfg.bundle.label(), "weight": cfg.weight.label(), "lubke": rep,
            "residual": whe_residual(cfg.bundle, metric, cfg.weight)}
    if cfg.weight.family == "exp" or (cfg.weight.family == "constant" and cfg.weight.params["c"] == 1.0):
        ym = yang_mills_report(cfg.bundle, metric, cfg.weight)
        run.check(ym.identity_residual < 1e-6, "Yang-Mills identity residual above 1e-6")
        body["yang_mills"] = ym
    return body


def cmd_beta(run: Run) -> dict:
    cfg = run.cfg
    spec = cfg.beta
    sub = line_from_spec(spec["subsheaf"]) if "subsheaf" in spec else EquivariantLineBundle(1, 0, 1)
    liftable = bool(spec.get("liftable", True))
    xis = spec.get("xi", [0.0, 0.5, 1.0])
    n = int(spec.get("n", 1))
    rows = [beta_invariant(sub, liftable, float(x), n) for x in xis]
    gammas = [0.0, prescribed_gamma(n)]
    ext = [extension_soliton_check(g, grid=cfg.grid, n=n) for g in gammas]
    for e in ext:
        run.check(e.residual < 1e-6, f"extension residual {e.residual:.3g} at gamma={e.gamma:.6g}")
    run.csv("beta.csv", [{"xi": r.xi, "beta": r.beta, "beta_min": r.beta_min} for r in rows],
            ["xi", "beta", "beta_min"])
    return {"subsheaf": sub.label(), "liftable": liftable, "beta": rows, "extension": ext}


def _sweep(run: Run, metric) -> dict:
    """Seeded property sweep for report-all: Donaldson cocycle and Yang-Mills identity."""
    cfg = run.cfg
    rng = np.random.default_rng(cfg.seed)
    geom = geometry(cfg.grid)
    h = [random_metric(cfg.bundle, geom, rng) for _ in range(3)]
    a = donaldson_functional(cfg.bundle, cfg.weight, h[1], h[0]).value
    b = donaldson_functional(cfg.bundle, cfg.weight, h[2], h[1]).value
    c = donaldson_functional(cfg.bundle, cfg.weight, h[2], h[0]).value
    out = {"donaldson_cocycle": abs(a + b - c), "donaldson_values": [a, b, c]}
    run.check(out["donaldson_cocycle"] < 1e-7, "Donaldson cocycle above 1e-7")
    if metric is not None:
        out["donaldson_to_solution"] = donaldson_functional(cfg.bundle, cfg.weight, metric, h[0]).value
    if cfg.weight.family == "exp":
        res = [yang_mills_report(cfg.bundle, m, cfg.weight).identity_residual for m in h]
        out["yang_mills_identity"] = max(res)
        run.check(max(res) < 1e-6, "Yang-Mills identity residual above 1e-6")
    return out


def cmd_report_all(run: Run) -> dict:
    cfg = run.cfg
    body = {"beta": cmd_beta(run)}
    if cfg.bundle is None or cfg.weight is None:
        return body
    body["intersect"] = cmd_intersect(run)
    body["stability"] = cmd_stability(run)
    body["gieseker"] = cmd_gieseker(run)
    metric = None
    try:
        solve, metric = _solve(run)
    except SOLVER_ERRORS + (SolverFailure,) as exc:
        solve = {"status": "not_converged", "error": str(exc)}
    body["solve"] = solve
    converged = metric is not None and (cfg.mode != "continuity" or solve["outcome"].status == "converged")
    if not converged:
        metric = None
    if metric is not None and hessian_condition_check(cfg.weight, int(cfg.lubke.get("n", 1))).holds:
        body["lubke"] = lubke_report(cfg.bundle, metric, cfg.weight, int(cfg.lubke.get("n", 1)))
    body["sweep"] = _sweep(run, metric)
    return body


HANDLERS = {
    "intersect": cmd_intersect,
    "stability": cmd_stability,
    "gieseker": cmd_gieseker,
    "solve": cmd_solve,
    "lubke": cmd_lubke,
    "beta": cmd_beta,
    "report-all": cmd_report_all,
}


# ---------------------------------------------------------------------------
# entry point


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="artifact", description="Weighted Hermite-Einstein toolkit on the model sphere.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--out", help="output directory (default: out)")
    p.add_argument("--seed", type=int, help="seed for randomized sweeps and initial metrics")
    p.add_argument("--grid", type=int, help="number of Gauss-Legendre nodes")
    p.add_argument("--plot", action="store_true", default=None, help="also write SVG plots")
    return p


def execute(cfg: RunConfig) -> tuple:
    """Run one command; returns (exit status, report dict)."""
    run = Run(cfg)
    status, body, error = EXIT_OK, None, None
    try:
        body = HANDLERS[cfg.command](run)
        if run.failures:
            status = EXIT_ASSERT
        elif run.nonconverged:
            status, error = EXIT_SOLVER, SolverFailure(run.nonconverged)
    except INPUT_ERRORS as exc:
        status, error = EXIT_CONFIG, exc
    except ASSERT_ERRORS + (AssertionFailure,) as exc:
        status, error = EXIT_ASSERT, exc
    except SOLVER_ERRORS + (SolverFailure,) as exc:
        status, error = EXIT_SOLVER, exc
    report = {
        "provenance": provenance(cfg),
        "exit_status": status,
        "assertion_failures": run.failures,
        "result": body,
        "error": None if error is None else {"type": type(error).__name__, "message": str(error)},
    }
    name = cfg.command.replace("-", "_") + ".json"
    report["files"] = sorted(run.files + [name])
    write_json(run.out / name, report)
    return status, report


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    overrides = {"out": args.out, "seed": args.seed, "grid": args.grid, "plot": args.plot}
    try:
        if args.config:
            cfg = load(args.config, command=args.command, **overrides)
        else:
            cfg = from_dict({}, command=args.command, **overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    status, report = execute(cfg)
    if report["error"] is not None:
        print(f"{report['error']['type']}: {report['error']['message']}", file=sys.stderr)
    for msg in report["assertion_failures"]:
        print(f"assertion failed: {msg}", file=sys.stderr)
    print(f"{cfg.command}: exit {status}; wrote {len(report['files'])} file(s) to {cfg.out}")
    return status


if __name__ == "__main__":
    sys.exit(main())
