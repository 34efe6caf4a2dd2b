"""Command-line entry point: ``mfgcorner <subcommand> --scenario FILE --out DIR``.

Exit codes: 0 pass, 1 fail, 2 error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .cgo import CgoProbe, QuadratureError, boundary_norms, cone_integral, verify_asymptotics
from .detector import InadmissibleScenario, run_f_experiment, run_kappa_experiment
from .expr import ExpressionError
from .forward import SolverDivergence, measure, solve_forward
from .geometry import GeometryError, PolygonalInclusion, ProbeDirectionError
from .linearization import linearize, taylor_consistency_check
from .report import EXIT_ERROR, EXIT_FAIL, EXIT_PASS, write_csv, write_json, write_rows
from .scenario import Scenario, ScenarioError, load_candidates, load_scenario

log = logging.getLogger("mfgcorner")


def _field_dump(path, grid, u, m):
    X, Y = grid.mesh
    write_csv(path, ["x", "y", "u", "m"], [X, Y, u, m])


def cmd_solve(sc: Scenario, out: Path, args) -> int:
    grid = sc.grid()
    sol = solve_forward(sc.coefficient(), sc.boundary(), grid, sc.diffusion,
                        tol=sc.tolerances["newton"], small_data_bound=sc.tolerances["small_data"])
    rec = measure(sol)
    _field_dump(out / "fields.csv", grid, sol.u, sol.m)
    write_csv(out / "measurement.csv", ["node", "s", "x", "y", "psi", "phi", "dnu_u", "dnu_m"],
              [np.arange(rec.s.size), rec.s, rec.x, rec.y, rec.psi, rec.phi, rec.dnu_u, rec.dnu_m])
    passed = sol.residual_norm <= sc.tolerances["newton"]
    write_json(out / "solve.json", {
        "newton_iterations": sol.newton_iterations,
        "residual_norm": sol.residual_norm,
        "residual_history": sol.history,
        "lambda_used": list(sol.lambda_used),
        "min_m": sol.min_m,
        "small_data": sol.small_data,
        "epsilon": sc.epsilon,
        "verdict": "pass" if passed else "fail",
    })
    return EXIT_PASS if passed else EXIT_FAIL


def cmd_linearize(sc: Scenario, out: Path, args) -> int:
    grid = sc.grid()
    coeff, bc = sc.coefficient(), sc.boundary()
    sols = linearize(coeff, bc, grid, sc.diffusion, order=2)
    for s in sols:
        _field_dump(out / f"order{s.order}.csv", grid, s.u, s.m)
    rep = taylor_consistency_check(coeff, bc, grid, sc.epsilon_ladder, sc.diffusion, orders=2,
                                   small_data_bound=sc.tolerances["small_data"], tol=sc.tolerances["newton"])
    body = rep.verdict()
    body["linear_residuals"] = {f"order{s.order}": list(s.residuals()) for s in sols}
    write_json(out / "linearize.json", body)
    return EXIT_PASS if rep.passed else EXIT_FAIL


def _cones(sc: Scenario):
    cone = sc.truncated_cone()
    if cone is not None:
        return [cone]
    cones = []
    for poly in sc.candidate_polygons():
        cones.extend(poly.corner_probe_regions())
    if not cones:
        raise InadmissibleScenario("scenario defines neither a [cone] nor any polygon corners")
    return cones


def cmd_probe(sc: Scenario, out: Path, args) -> int:
    if not sc.tau_ladder:
        raise InadmissibleScenario("probe needs a tau ladder")
    rows = []
    for ci, cone in enumerate(_cones(sc)):
        for tau in sc.tau_ladder:
            p = CgoProbe.for_cone(cone, tau, sc.xi)
            val = cone_integral(p, cone, refine=sc.refine)
            bn = boundary_norms(p, cone, refine=sc.refine)
            rows.append({"cone": ci, "tau": tau, "integral_re": val.real, "integral_im": val.imag,
                         "scaled_abs": tau**cone.dim * abs(val), "boundary_l2": bn.l2,
                         "boundary_h1": bn.h1, "boundary_dnu_l2": bn.normal_l2})
    write_rows(out / "probe.csv", rows)
    write_json(out / "probe.json", {"samples": rows, "verdict": "pass"})
    return EXIT_PASS


def cmd_verify(sc: Scenario, out: Path, args) -> int:
    if not sc.tau_ladder:
        raise InadmissibleScenario("verify-asymptotics needs a tau ladder")
    alphas = sc.cone["alphas"] if sc.cone else []
    reports, rows = [], []
    passed = True
    for ci, cone in enumerate(_cones(sc)):
        xi = -cone.axis if sc.xi is None else np.asarray(sc.xi)
        rep = verify_asymptotics(cone, xi, sc.tau_ladder, alphas, refine=sc.refine)
        reports.append(rep.verdict())
        passed &= rep.passed
        for t, v in zip(rep.tau, rep.integrals):
            rows.append({"cone": ci, "tau": t, "integral_re": v.real, "integral_im": v.imag, "abs": abs(v),
                         "fitted_exponent": rep.integral_fit.exponent, "residual": rep.integral_fit.residual})
    write_rows(out / "asymptotics.csv", rows)
    write_json(out / "asymptotics.json", {"cones": reports, "verdict": "pass" if passed else "fail"})
    return EXIT_PASS if passed else EXIT_FAIL


def _experiment(sc: Scenario, candidates, workers):
    kinds = {"kappa": None, "f-order-1": 1, "f-order-2": 2}
    if sc.kind not in kinds:
        raise InadmissibleScenario(f"scenario kind {sc.kind!r} has no detection experiment")
    polys = candidates if candidates is not None else sc.candidate_polygons()
    kw = dict(rel_tol=sc.tolerances["recovery"], epsilon=sc.epsilon, xi=sc.xi,
              small_data_bound=sc.tolerances["small_data"], threshold=sc.tolerances["threshold"],
              refine=sc.refine, workers=workers)
    if len(sc.tau_ladder) < 6:
        raise InadmissibleScenario("detection needs a tau ladder with >= 6 entries")
    if sc.kind == "kappa":
        return run_kappa_experiment(sc.coefficient(), sc.boundary(), sc.grid(), polys, sc.tau_ladder,
                                    sc.diffusion, **kw)
    return run_f_experiment(sc.coefficient(), sc.boundary(), sc.grid(), polys, sc.tau_ladder,
                            kinds[sc.kind], sc.diffusion, **kw)


def cmd_detect(sc: Scenario, out: Path, args) -> int:
    cands = None
    if args.candidates:
        cands = [PolygonalInclusion(v) for v in load_candidates(args.candidates)]
    rep = _experiment(sc, cands, args.threads)
    rows = []
    for c, v in zip(rep.corners, rep.verdicts):
        for s in v.samples:
            r = {"candidate": c["candidate"], "corner": c["corner"]}
            r.update(s.row())
            rows.append(r)
    write_rows(out / "indicator_samples.csv", rows)
    write_json(out / "detect.json", rep.summary())
    return EXIT_PASS if rep.passed else EXIT_FAIL


def cmd_experiment(sc: Scenario, out: Path, args) -> int:
    rep = _experiment(sc, None, args.threads)
    body = rep.summary()
    passed = rep.passed
    if len(sc.epsilon_ladder) >= 4:
        tay = taylor_consistency_check(sc.coefficient(), sc.boundary(), sc.grid(), sc.epsilon_ladder,
                                       sc.diffusion, orders=2, small_data_bound=sc.tolerances["small_data"],
                                       tol=sc.tolerances["newton"])
        body["taylor"] = tay.verdict()
        passed &= tay.passed
    body["verdict"] = "pass" if passed else "fail"
    write_json(out / "experiment.json", body)
    return EXIT_PASS if passed else EXIT_FAIL


COMMANDS = {
    "solve": (cmd_solve, "solve the nonlinear system and write fields and boundary measurements"),
    "linearize": (cmd_linearize, "first/second-order fields and the eps-Taylor consistency check"),
    "probe": (cmd_probe, "cone integrals and boundary norms of the exponential probes"),
    "verify-asymptotics": (cmd_verify, "check probe decay rates over the tau ladder"),
    "detect": (cmd_detect, "corner scans against a candidate geometry"),
    "experiment": (cmd_experiment, "full detection experiment for the scenario kind"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", required=True, help="scenario TOML file")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for independent scans")
    common.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="logging verbosity")
    ap = argparse.ArgumentParser(prog="mfgcorner", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_)
        if name == "detect":
            p.add_argument("--candidates", help="candidate-geometry TOML file (polygons = [...])")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    out = Path(args.out)
    fn = COMMANDS[args.command][0]
    try:
        sc = load_scenario(args.scenario)
        out.mkdir(parents=True, exist_ok=True)
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            return fn(sc, out, args)
    except SolverDivergence as exc:
        diag = {"error": "solver divergence", "message": str(exc), "residual_history": exc.history}
        if exc.last is not None:
            diag["last_iterate"] = {"max_abs_u": float(np.max(np.abs(exc.last[0]))),
                                    "max_abs_m": float(np.max(np.abs(exc.last[1])))}
        _error(out, args.command, diag)
    except (ScenarioError, ExpressionError, InadmissibleScenario, GeometryError, ProbeDirectionError,
            QuadratureError) as exc:
        _error(out, args.command, {"error": type(exc).__name__, "message": str(exc)})
    except OSError as exc:
        print(f"mfgcorner: {exc}", file=sys.stderr)
    return EXIT_ERROR


def _error(out: Path, command: str, diag: dict):
    print(f"mfgcorner {command}: {diag['message']}", file=sys.stderr)
    try:
        write_json(out / f"{command}.error.json", {"diagnostics": diag, "verdict": "error"})
    except OSError:
        pass


if __name__ == "__main__":
    sys.exit(main())
