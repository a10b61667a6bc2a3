"""Command-line front end.

Every subcommand loads a TOML model, runs one pipeline and emits a JSON run
report (stdout, or ``--out``).  Exit codes: 0 success, 1 infeasible,
2 parse error, 3 inadmissible model or unsupported program, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .convert import InadmissibleError, ModelError, PIESystem, build_pie, load_model
from .invert import Gains, InversionError, invert_4pi, reconstruct_gains
from .lpi import SYNTHESIS_KINDS, LPIError, LPIProgram, build_kyp_lpi, build_stability_lpi, build_synthesis_lpi
from .piop import pi_format
from .polyalg import poly_str
from .sdp import export_sdpa
from .sim import SimConfig, SimulationError, empirical_l2_gain, simulate_closed_loop

EXIT_OK, EXIT_INFEASIBLE, EXIT_PARSE, EXIT_INADMISSIBLE, EXIT_NUMERICAL = 0, 1, 2, 3, 4
NUMERICAL_STATUSES = ("numerical", "max-iter")


class CLIError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# --------------------------------------------------------------------------
# report helpers
# --------------------------------------------------------------------------

def _clean(x):
    """JSON-safe copy: numpy scalars/arrays to lists, non-finite floats to strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else repr(v)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def dump_report(report: dict) -> str:
    return json.dumps(_clean(report), sort_keys=True, indent=2) + "\n"


def _program_meta(prog: LPIProgram, args) -> dict:
    sdp = prog.compile()
    meta = {k: v for k, v in prog.meta.items()}
    meta.update({"theorem": prog.theorem, "monomials": args.monomials,
                 "sdp": {"blocks": list(sdp.blocks), "free": sdp.n_free, "equalities": sdp.m}})
    return meta


def _solver_meta(res, args) -> dict:
    sol = res.solution
    out = {"status": res.status, "tol": args.tol, "max_iter": args.max_iter}
    if sol is not None:
        out["iterations"] = sol.iterations
        out["residuals"] = dict(sol.residuals)
    return out


def _status_code(status: str, feasible: bool) -> int:
    if feasible:
        return EXIT_OK
    if status in NUMERICAL_STATUSES:
        return EXIT_NUMERICAL
    return EXIT_INFEASIBLE


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def _param(text: str):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected name=value, got {text!r}")
    k, v = text.split("=", 1)
    try:
        return k.strip(), float(v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"parameter value {v!r} is not a number") from None


@dataclass(frozen=True)
class Sweep:
    name: str
    lo: float
    hi: float
    tol: float


def _sweep(text: str) -> Sweep:
    parts = text.split(":")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("sweep must read name:lo:hi:tol")
    try:
        lo, hi, tol = (float(p) for p in parts[1:])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad numbers in sweep {text!r}") from None
    if not (hi > lo and tol > 0):
        raise argparse.ArgumentTypeError("sweep needs lo < hi and tol > 0")
    return Sweep(parts[0], lo, hi, tol)


def _grid(text: str):
    name, _, vals = text.partition(":")
    try:
        values = [float(v) for v in vals.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}") from None
    if not name or not values:
        raise argparse.ArgumentTypeError("grid must read name:v1,v2,...")
    return name, values


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("model", help="TOML model file")
    common.add_argument("-p", "--param", action="append", type=_param, default=[], metavar="NAME=VALUE",
                        help="override a named model parameter (repeatable)")
    common.add_argument("--out", help="write the JSON report here instead of stdout")

    solver = argparse.ArgumentParser(add_help=False)
    solver.add_argument("-d", "--degree", type=int, default=2, help="polynomial degree of the decision operators")
    solver.add_argument("--eps", type=float, default=None, help="strictness margin (default scales with ||A||)")
    solver.add_argument("--eps-c", type=float, default=1e-4, help="coercivity margin of P")
    solver.add_argument("--monomials", choices=("box", "total"), default="box")
    solver.add_argument("--tol", type=float, default=1e-8, help="interior-point tolerance")
    solver.add_argument("--max-iter", type=int, default=200)
    solver.add_argument("--explain", action="store_true", help="print the program layout to stderr")

    ap = argparse.ArgumentParser(prog="piesyn", description="PIE-based analysis and control synthesis for ODE-PDEs")
    ap.add_argument("--version", action="version", version=f"piesyn {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    c = sub.add_parser("convert", parents=[common], help="convert a model to PIE form")
    c.add_argument("--dump-ops", metavar="FILE", help="also save the operators as JSON")
    c.add_argument("--text", action="store_true", help="print the operator listing instead of JSON")

    s = sub.add_parser("stability", parents=[common, solver], help="certify exponential stability")
    s.add_argument("--mode", choices=("primal", "dual"), default="dual")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--sweep", type=_sweep, metavar="NAME:LO:HI:TOL", help="bisection on a model parameter")
    g.add_argument("--grid", type=_grid, metavar="NAME:V1,V2,...", help="evaluate an explicit parameter grid")
    s.add_argument("--jobs", type=int, default=1, help="worker processes for --grid")

    k = sub.add_parser("gain", parents=[common, solver], help="certify an L2-gain bound (minimize gamma)")
    k.add_argument("--mode", choices=("primal", "dual"), default="dual")

    y = sub.add_parser("synth", parents=[common, solver], help="synthesize a state-feedback controller")
    y.add_argument("--kind", choices=("stab", "hinf"), default="stab")
    y.add_argument("--channel", choices=("indomain", "boundary"), default="indomain")
    y.add_argument("--gains-out", metavar="FILE", help="gains file (default: <model>.gains.json)")
    y.add_argument("--loose-inverse", action="store_true", help="accept inaccurate multiplier inverse fits")
    y.add_argument("--gain-degree", type=int, default=10, help="polynomial degree of the reconstructed K1")
    y.add_argument("--young-weight", type=float, default=1.0,
                   help="weight alpha of the Young bound in static boundary synthesis (1 = unweighted)")

    m = sub.add_parser("simulate", parents=[common], help="simulate open or closed loop")
    m.add_argument("--gains", metavar="FILE", help="gains file written by synth")
    m.add_argument("--tf", type=float)
    m.add_argument("--dt", type=float)
    m.add_argument("--ns", type=int, help="number of grid intervals")
    m.add_argument("--disturbance", help="disturbance expression in t, or a named signal")
    m.add_argument("--init", help="initial PDE state expression in s")
    m.add_argument("--csv", metavar="FILE", help="write the trajectory as CSV")

    e = sub.add_parser("export-sdpa", parents=[common, solver], help="write an LPI program in SDPA format")
    e.add_argument("--program", required=True,
                   choices=("stability", "gain") + SYNTHESIS_KINDS, help="which program to compile")
    e.add_argument("--mode", choices=("primal", "dual"), default="dual")
    e.add_argument("-o", "--file", metavar="FILE", help="SDPA output (default: <model>.<program>.dat-s)")
    return ap


# --------------------------------------------------------------------------
# pipelines
# --------------------------------------------------------------------------

def _load(path, params: dict):
    try:
        model = load_model(path, params or None)
    except InadmissibleError as exc:
        raise CLIError(EXIT_INADMISSIBLE, f"inadmissible model: {exc}") from None
    except FileNotFoundError:
        raise CLIError(EXIT_PARSE, f"model file not found: {path}") from None
    except (ModelError, ValueError, KeyError, TypeError) as exc:
        raise CLIError(EXIT_PARSE, f"cannot parse model: {exc}") from None
    declared = model.sim.get("_source", {}).get("params", {})
    unknown = sorted(set(params) - set(declared))
    if unknown:
        raise CLIError(EXIT_PARSE, f"unknown model parameter(s): {', '.join(unknown)}")
    try:
        pie = build_pie(model)
    except InadmissibleError as exc:
        raise CLIError(EXIT_INADMISSIBLE, f"inadmissible model: {exc}") from None
    except ModelError as exc:
        raise CLIError(EXIT_PARSE, f"cannot convert model: {exc}") from None
    return model, pie


def _model_meta(path, model) -> dict:
    return {"path": str(path), "name": model.name, "digest": model.digest(), "params": dict(model.params)}


def _build(pie: PIESystem, program: str, args) -> LPIProgram:
    kw = dict(d=args.degree, eps=args.eps, eps_c=args.eps_c, monomials=args.monomials)
    try:
        if program == "stability":
            return build_stability_lpi(pie, args.mode, **kw)
        if program == "gain":
            return build_kyp_lpi(pie, args.mode, **kw)
        if program == "stab_boundary":
            kw["young_weight"] = getattr(args, "young_weight", 1.0)
        return build_synthesis_lpi(pie, program, **kw)
    except LPIError as exc:
        raise CLIError(EXIT_INADMISSIBLE, f"program not applicable: {exc}") from None


def _explain(prog: LPIProgram, args, report: dict):
    if args.explain:
        text = prog.explain()
        print(text, file=sys.stderr)
        report["explain"] = text.splitlines()


def cmd_convert(args, report: dict) -> int:
    model, pie = _load(args.model, dict(args.param))
    report["model"] = _model_meta(args.model, model)
    report["pie"] = {"state_dims": list(pie.state_dims), "nw": pie.nw, "nu": pie.nu, "nz": pie.nz, "ny": pie.ny}
    report["operators"] = {k: pi_format(v, k).splitlines() for k, v in pie.ops().items()}
    if args.dump_ops:
        Path(args.dump_ops).write_text(json.dumps(_clean(pie.to_dict()), sort_keys=True, indent=1) + "\n")
        report["artifacts"] = {"operators": args.dump_ops}
    if args.text:
        report["_text"] = "\n".join("\n".join(v) for v in report["operators"].values()) + "\n"
    return EXIT_OK


def _solve_point(path, params: dict, program: str, args) -> dict:
    _, pie = _load(path, params)
    prog = _build(pie, program, args)
    res = prog.solve(tol=args.tol, max_iter=args.max_iter)
    out = {"status": res.status, "feasible": bool(res.feasible)}
    if res.solution is not None:
        out["iterations"] = res.solution.iterations
    return out


def _grid_worker(job):
    path, params, program, args = job
    return _solve_point(path, params, program, args)


def _bisect(args, sweep: Sweep) -> tuple[dict, int]:
    base = dict(args.param)
    points = []

    def check(v):
        r = _solve_point(args.model, {**base, sweep.name: v}, "stability", args)
        points.append({"value": v, **r})
        return r["feasible"]

    lo, hi = sweep.lo, sweep.hi
    out = {"parameter": sweep.name, "lo": lo, "hi": hi, "tol": sweep.tol, "points": points}
    if not check(lo):
        out.update(threshold=None, verdict=f"not certified at {sweep.name} = {lo:g}")
        return out, EXIT_INFEASIBLE
    if check(hi):
        out.update(threshold=hi, bracket=[hi, None], verdict="certified on the whole range")
        return out, EXIT_OK
    while hi - lo > sweep.tol:
        mid = 0.5 * (lo + hi)
        if check(mid):
            lo = mid
        else:
            hi = mid
    out.update(threshold=lo, bracket=[lo, hi],
               verdict=f"certified for {sweep.name} <= {lo:.6g}; not certified at {hi:.6g}")
    return out, EXIT_OK


def cmd_stability(args, report: dict) -> int:
    model, pie = _load(args.model, dict(args.param))
    report["model"] = _model_meta(args.model, model)
    prog = _build(pie, "stability", args)
    _explain(prog, args, report)
    report["program"] = _program_meta(prog, args)
    if args.sweep is not None:
        if args.sweep.name not in model.sim["_source"].get("params", {}):
            raise CLIError(EXIT_PARSE, f"model has no parameter {args.sweep.name!r}")
        report["sweep"], code = _bisect(args, args.sweep)
        return code
    if args.grid is not None:
        name, values = args.grid
        if name not in model.sim["_source"].get("params", {}):
            raise CLIError(EXIT_PARSE, f"model has no parameter {name!r}")
        base = dict(args.param)
        jobs = [(args.model, {**base, name: v}, "stability", args) for v in values]
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as ex:
                results = list(ex.map(_grid_worker, jobs))
        else:
            results = [_grid_worker(j) for j in jobs]
        report["grid"] = {"parameter": name, "points": [{"value": v, **r} for v, r in zip(values, results)]}
        return EXIT_OK if any(r["feasible"] for r in results) else EXIT_INFEASIBLE
    res = prog.solve(tol=args.tol, max_iter=args.max_iter)
    report["solver"] = _solver_meta(res, args)
    report["result"] = {"stable": bool(res.feasible),
                        "verdict": "exponentially stable (certified)" if res.feasible else "not certified"}
    return _status_code(res.status, res.feasible)


def cmd_gain(args, report: dict) -> int:
    model, pie = _load(args.model, dict(args.param))
    report["model"] = _model_meta(args.model, model)
    prog = _build(pie, "gain", args)
    _explain(prog, args, report)
    report["program"] = _program_meta(prog, args)
    res = prog.solve(tol=args.tol, max_iter=args.max_iter)
    report["solver"] = _solver_meta(res, args)
    report["result"] = {"gamma": res.gamma if res.feasible else None}
    return _status_code(res.status, res.feasible)


def _gains_summary(g: Gains) -> dict:
    return {"K0": g.K0, "K1": poly_str(g.K1), "K1_degree": g.K1.deg, "residuals": dict(g.residuals)}


def cmd_synth(args, report: dict) -> int:
    model, pie = _load(args.model, dict(args.param))
    report["model"] = _model_meta(args.model, model)
    kind = f"{args.kind}_{args.channel}"
    prog = _build(pie, kind, args)
    _explain(prog, args, report)
    report["program"] = _program_meta(prog, args)
    res = prog.solve(tol=args.tol, max_iter=args.max_iter)
    report["solver"] = _solver_meta(res, args)
    if not res.feasible:
        report["result"] = {"feasible": False}
        if kind == "hinf_indomain":
            report["result"]["hint"] = (
                "this program needs every disturbance profile B1 w to lie in the range of T; a disturbance "
                "acting on the whole domain of a PDE with Dirichlet conditions violates this, and "
                "--kind stab still applies")
        return _status_code(res.status, False)
    try:
        Pinv = invert_4pi(res.op("P"), loose=args.loose_inverse)
        gains = reconstruct_gains(res.op("Z"), Pinv, degree=args.gain_degree)
    except InversionError as exc:
        raise CLIError(EXIT_NUMERICAL, f"cannot invert the Lyapunov operator: {exc}") from None
    path = args.gains_out or f"{Path(args.model).stem}.gains.json"
    doc = {"model": report["model"], "kind": kind, "gamma": res.gamma, "gains": gains.to_dict()}
    Path(path).write_text(dump_report(doc))
    report["result"] = {"feasible": True, "gamma": res.gamma, "inverse": dict(Pinv.info),
                        "gains": _gains_summary(gains)}
    report["artifacts"] = {"gains": path}
    return EXIT_OK


def load_gains(path) -> Gains:
    try:
        doc = json.loads(Path(path).read_text())
        return Gains.from_dict(doc.get("gains", doc))
    except FileNotFoundError:
        raise CLIError(EXIT_PARSE, f"gains file not found: {path}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise CLIError(EXIT_PARSE, f"cannot read gains file: {exc}") from None


def cmd_simulate(args, report: dict) -> int:
    model, pie = _load(args.model, dict(args.param))
    report["model"] = _model_meta(args.model, model)
    gains = load_gains(args.gains) if args.gains else None
    try:
        cfg = SimConfig.from_model(model, tf=args.tf, dt=args.dt, N_s=args.ns, disturbance=args.disturbance,
                                   init=args.init)
        traj = simulate_closed_loop(pie, gains, cfg)
    except SimulationError as exc:
        raise CLIError(EXIT_NUMERICAL, str(exc)) from None
    except ValueError as exc:
        raise CLIError(EXIT_PARSE, f"bad simulation setup: {exc}") from None
    norms = traj.state_norm()
    out = {"closed_loop": gains is not None, "tf": cfg.tf, "dt": cfg.dt, "N_s": cfg.N_s,
           "disturbance": str(cfg.disturbance), "init": str(cfg.init), "diverged": traj.diverged,
           "state_norm": {"initial": norms[0], "peak": norms.max(), "final": norms[-1],
                          "t_peak": traj.t[int(np.argmax(norms))]}}
    if traj.w.size and np.any(traj.w != 0) and traj.z.size:
        out["empirical_l2_gain"] = empirical_l2_gain(traj)
    report["result"] = out
    if args.csv:
        traj.to_csv(args.csv)
        report["artifacts"] = {"trajectory": args.csv}
    return EXIT_NUMERICAL if traj.diverged else EXIT_OK


def cmd_export(args, report: dict) -> int:
    model, pie = _load(args.model, dict(args.param))
    report["model"] = _model_meta(args.model, model)
    prog = _build(pie, args.program, args)
    _explain(prog, args, report)
    report["program"] = _program_meta(prog, args)
    path = args.file or f"{Path(args.model).stem}.{args.program}.dat-s"
    Path(path).write_text(export_sdpa(prog.compile()))
    report["artifacts"] = {"sdpa": path}
    return EXIT_OK


COMMANDS = {"convert": cmd_convert, "stability": cmd_stability, "gain": cmd_gain, "synth": cmd_synth,
            "simulate": cmd_simulate, "export-sdpa": cmd_export}


def run(argv=None) -> tuple[int, dict]:
    """Parse ``argv`` and run one command; returns the exit code and the report."""
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else EXIT_PARSE
        return code, {"command": argv, "version": __version__, "exit_code": code, "_quiet": True}
    report: dict = {"command": argv, "version": __version__, "_out": args.out}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            code = COMMANDS[args.command](args, report)
        except CLIError as exc:
            code = exc.code
            report["error"] = str(exc)
    msgs = sorted({str(w.message) for w in caught})
    if msgs:
        report["warnings"] = msgs
    report["exit_code"] = code
    return code, report


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    code, report = run(argv)
    text = report.pop("_text", None)
    out = report.pop("_out", None)
    if report.pop("_quiet", False):
        return code
    if "error" in report:
        print(f"piesyn: {report['error']}", file=sys.stderr)
    if out:
        Path(out).write_text(dump_report(report))
    if text is not None and "error" not in report:
        sys.stdout.write(text)
    elif not out:
        sys.stdout.write(dump_report(report))
    return code


if __name__ == "__main__":
    sys.exit(main())
