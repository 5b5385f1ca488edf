"""Command-line front end.

Exit codes: 0 success, 1 invalid input or infeasible problem, 2 environment or
solver trouble.  Diagnostics go to stderr; data goes to files or stdout.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import KsdError, SchemaError, SolverUnavailableError

log = logging.getLogger("ksdsynth")

EXIT_OK, EXIT_INPUT, EXIT_ENV = 0, 1, 2


class Infeasible(Exception):
    pass


class SolverTrouble(Exception):
    pass


# ------------------------------------------------------------------ manifest

def system_hash(sysobj) -> str:
    from .model import system_to_json

    blob = json.dumps(system_to_json(sysobj), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def run_manifest(command: str, sysobj=None, config: dict | None = None, started: float | None = None) -> dict:
    now = time.time()
    return {
        "command": command,
        "input_hash": system_hash(sysobj) if sysobj is not None else None,
        "system": getattr(sysobj, "name", None),
        "config": config or {},
        "tool": "ksdsynth",
        "version": __version__,
        "started": datetime.fromtimestamp(started or now, timezone.utc).isoformat(timespec="seconds"),
        "wall_clock": None if started is None else round(now - started, 3),
    }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def emit_json(payload: dict, path: str | None) -> None:
    text = json.dumps(_jsonable(payload), indent=1, sort_keys=False)
    if path:
        Path(path).write_text(text + "\n", encoding="utf-8")
        log.info("wrote %s", path)
    else:
        sys.stdout.write(text + "\n")


def write_trace_csv(trace: list, path: str, manifest: dict) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("# " + json.dumps(_jsonable(manifest), sort_keys=True) + "\n")
        wr = csv.writer(fh)
        wr.writerow(["stage", "iter", "status", "gamma", "dY", "dK", "max_eig_diss", "k"])
        for e in trace:
            k = e.get("K")
            wr.writerow([e.get("stage"), e.get("iter", ""), e.get("status"), _fmt(e.get("gamma")),
                         _fmt(e.get("dY")), _fmt(e.get("dK")), _fmt(e.get("max_eig_diss")),
                         "" if k is None else " ".join(f"{v:.10g}" for v in np.ravel(k))])


def _fmt(v):
    return "" if v is None else f"{v:.10g}"


def read_manifest_header(path) -> dict:
    """Manifest stored as the leading ``# {...}`` line of a CSV output."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    if not first.startswith("# "):
        raise ValueError(f"{path} has no manifest header")
    return json.loads(first[2:])


GNUPLOT_TEMPLATE = """# gnuplot script generated by ksdsynth
set datafile separator ","
set key autotitle columnhead
set xlabel "t [s]"
set grid
set terminal pngcairo size 900,600
set output "{stem}_x.png"
plot {xplots}
set output "{stem}_u.png"
plot {uplots}
set output "{stem}_z.png"
plot {zplots}
"""


def write_gnuplot(csv_path: str, script_path: str, n: int, p: int, m: int) -> None:
    stem = str(Path(csv_path).with_suffix(""))

    def plots(first, count):
        return ", ".join(f'"{csv_path}" using 1:{first + j} with lines' for j in range(count))

    Path(script_path).write_text(GNUPLOT_TEMPLATE.format(
        stem=stem, xplots=plots(2, n), uplots=plots(2 + n, p), zplots=plots(2 + n + p, m)), encoding="utf-8")


# ------------------------------------------------------------------- helpers

def _load(spec: str):
    from .model import load_system, validate_system

    try:
        s = load_system(spec)
    except FileNotFoundError:
        raise SchemaError("<file>", f"no such system file or builtin: {spec}") from None
    bad = validate_system(s)
    if bad:
        for v in bad:
            print(f"error: {v}", file=sys.stderr)
        raise SchemaError(bad[0].code, bad[0].message)
    return s


def parse_gain(text: str, p: int, n: int) -> np.ndarray:
    from . import fixtures

    named = {"table1": fixtures.PAPER_GAIN_TABLE1, "table2": fixtures.PAPER_GAIN_TABLE2,
             "theorem2": fixtures.PAPER_GAIN_THEOREM2}
    if text in named:
        K = named[text]
    elif text.startswith("file:"):
        obj = json.loads(Path(text[5:]).read_text(encoding="utf-8"))
        K = np.asarray(obj.get("result", obj)["K"], dtype=float)
    else:
        rows = [r for r in text.replace(";", "/").split("/") if r.strip()]
        K = np.array([[float(v) for v in r.split(",")] for r in rows])
    K = np.atleast_2d(K)
    if K.shape != (p, n):
        raise SchemaError("gain", f"expected a {p}x{n} gain, got {K.shape[0]}x{K.shape[1]}")
    return K


def _plant(s, args):
    from .augplant import assemble_plant
    from .gram import QuadTol

    return assemble_plant(s, tol=QuadTol(getattr(args, "rel_tol", 1e-12), getattr(args, "abs_tol", 1e-14)))


def _alphas(args, ap):
    from .synth import default_alphas

    if not args.alpha:
        return default_alphas(ap)
    a = list(args.alpha)
    if len(a) > ap.dims.beta:
        raise SchemaError("alpha", f"at most beta={ap.dims.beta} values")
    return a + [0.0] * (ap.dims.beta - len(a))


def _check_status(res):
    if res.status == "infeasible":
        raise Infeasible(f"{res.mode}: problem infeasible")
    if res.status != "optimal":
        raise SolverTrouble(f"{res.mode}: {res.status} ({res.diagnostics.get('reason', '')})")


def _config(args) -> dict:
    skip = {"func", "verbose", "_t0"}
    return {k: v for k, v in vars(args).items() if k not in skip}


# --------------------------------------------------------------- subcommands

def cmd_validate(args):
    from .model import load_system, validate_system

    try:
        s = load_system(args.system)
    except FileNotFoundError:
        raise SchemaError("<file>", f"no such system file or builtin: {args.system}") from None
    bad = validate_system(s)
    for v in bad:
        print(f"error: {v}", file=sys.stderr)
    emit_json({"manifest": run_manifest("validate", s, _config(args), args._t0),
               "result": {"valid": not bad, "violations": [{"code": v.code, "message": v.message} for v in bad]}},
              args.output)
    return EXIT_OK if not bad else EXIT_INPUT


def cmd_gram(args):
    s = _load(args.system)
    ap = _plant(s, args)
    emit_json({"manifest": run_manifest("gram", s, _config(args), args._t0),
               "result": {"intervals": [g.to_json() for g in ap.grams]}}, args.output)
    return EXIT_OK


def cmd_inspect(args):
    s = _load(args.system)
    ap = _plant(s, args)
    out = {"dimensions": ap.dims.as_dict(), "columns": ap.dims.column_layout(),
           "cond_G": [g.cond_G for g in ap.grams], "rhat": list(ap.rhat),
           "shapes": {k: list(getattr(ap, k).shape) for k in ("A", "B1", "C", "B2", "Ihat", "Mmat", "Lambda")}}
    emit_json({"manifest": run_manifest("inspect", s, _config(args), args._t0), "result": out}, args.output)
    return EXIT_OK


def cmd_synth2(args):
    from .synth import solve_theorem2

    s = _load(args.system)
    ap = _plant(s, args)
    res = solve_theorem2(ap, s.supply, _alphas(args, ap), solver=args.solver, tol=args.solver_tol)
    emit_json({"manifest": run_manifest("synth2", s, _config(args), args._t0), "result": res.to_json()}, args.output)
    _check_status(res)
    return EXIT_OK


def cmd_analyze(args):
    from .synth import analyze_theorem1_fixed_gain

    s = _load(args.system)
    K = parse_gain(args.gain, s.dims.p, s.dims.n)
    ap = _plant(s, args)
    res = analyze_theorem1_fixed_gain(ap, s.supply, K, solver=args.solver, tol=args.solver_tol)
    emit_json({"manifest": run_manifest("analyze", s, _config(args), args._t0), "result": res.to_json()}, args.output)
    _check_status(res)
    return EXIT_OK


def cmd_iterate(args):
    from .synth import IterationConfig, algorithm1

    s = _load(args.system)
    ap = _plant(s, args)
    cfg = IterationConfig(args.rho1, args.rho2, args.eps, args.max_iter, not args.no_gamma)
    K0 = parse_gain(args.gain, s.dims.p, s.dims.n) if args.gain else None

    def progress(k, g, K):
        log.info("iteration %d: gamma=%s K=%s", k, g, np.ravel(K))

    res = algorithm1(ap, s.supply, _alphas(args, ap), cfg, K0=K0, solver=args.solver, tol=args.solver_tol,
                     callback=progress)
    manifest = run_manifest("iterate", s, _config(args), args._t0)
    emit_json({"manifest": manifest, "result": res.to_json()}, args.output)
    if args.csv:
        write_trace_csv(res.trace, args.csv, manifest)
    _check_status(res)
    return EXIT_OK


def cmd_simulate(args):
    from .sim import GlitchSpec, SimConfig, empirical_l2_gain, inject_glitches, parse_disturbance, simulate

    s = _load(args.system)
    K = parse_gain(args.gain, s.dims.p, s.dims.n)
    psi = [float(v) for v in args.psi.split(",")] if args.psi else 0.0
    cfg = SimConfig(args.t_end, args.step, psi, parse_disturbance(args.disturbance), rule=args.rule)
    if args.glitch:
        cfg = inject_glitches(cfg, GlitchSpec.parse(args.glitch), s.dims.n, s.dims.p)
    traj = simulate(s, K, cfg)
    manifest = run_manifest("simulate", s, {**_config(args), "resolved": cfg.describe()}, args._t0)
    target = args.output or "-"
    if target == "-":
        traj.to_csv(sys.stdout, _jsonable(manifest))
    else:
        traj.to_csv(target, _jsonable(manifest))
        if args.gnuplot:
            write_gnuplot(target, args.gnuplot, s.dims.n, s.dims.p, s.dims.m)
    if np.any(traj.w[traj.start:]):
        print(f"empirical L2 gain (t >= 0): {empirical_l2_gain(traj):.6g}", file=sys.stderr)
    return EXIT_OK


def cmd_spectrum(args):
    from .spectral import SpectralConfig, spectral_abscissa

    s = _load(args.system)
    K = parse_gain(args.gain, s.dims.p, s.dims.n)
    res = spectral_abscissa(s, K, SpectralConfig(N=args.nodes, refine=args.refine, count=args.count))
    emit_json({"manifest": run_manifest("spectrum", s, _config(args), args._t0), "result": res.to_json()},
              args.output)
    return EXIT_OK


def cmd_reproduce(args):
    from .reproduce import reproduce_paper

    report = reproduce_paper(args.outdir, skip_sim=args.skip_sim, max_iter=args.max_iter,
                             solver=args.solver, tol=args.solver_tol, manifest_config=_config(args), started=args._t0)
    for row in report["rows"]:
        print(f"{'PASS' if row['pass'] else 'FAIL'}  {row['item']}: computed {row['computed']}, "
              f"target {row['target']} ({row['tolerance']})", file=sys.stderr)
    return EXIT_OK if not report["failed_stages"] else EXIT_ENV


# ------------------------------------------------------------------- parser

def _add_system(p):
    p.add_argument("system", help="system JSON file or builtin name (paper-s4, paper-s4-lambda2)")
    p.add_argument("-o", "--output", help="output file (default: stdout)")


def _add_solver(p):
    p.add_argument("--solver", default=None, help="SDP backend (default: $KSDSYNTH_SOLVER or CLARABEL)")
    p.add_argument("--solver-tol", type=float, default=None)


def _add_quad(p):
    p.add_argument("--rel-tol", type=float, default=1e-12, help="quadrature relative tolerance")
    p.add_argument("--abs-tol", type=float, default=1e-14, help="quadrature absolute tolerance")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ksdsynth", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a system file")
    _add_system(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("gram", help="Gram/projection matrices per interval")
    _add_system(p)
    _add_quad(p)
    p.set_defaults(func=cmd_gram)

    p = sub.add_parser("inspect", help="dimension table and augmented-plant shapes")
    _add_system(p)
    _add_quad(p)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("synth2", help="direct convex synthesis (dual condition)")
    _add_system(p)
    _add_solver(p)
    _add_quad(p)
    p.add_argument("--alpha", type=float, nargs="+", help="outer-factor scalars (default 5, 0, ...)")
    p.set_defaults(func=cmd_synth2)

    p = sub.add_parser("analyze", help="certify a given gain")
    _add_system(p)
    _add_solver(p)
    _add_quad(p)
    p.add_argument("--gain", required=True, help="K as 'k11,k12/k21,k22', table1|table2|theorem2, or file:<json>")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("iterate", help="iterative inner convex approximation")
    _add_system(p)
    _add_solver(p)
    _add_quad(p)
    p.add_argument("--alpha", type=float, nargs="+")
    p.add_argument("--gain", help="initial gain instead of the direct synthesis")
    p.add_argument("--rho1", type=float, default=1e-3)
    p.add_argument("--rho2", type=float, default=1e-3)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--max-iter", type=int, default=20)
    p.add_argument("--no-gamma", action="store_true", help="drop gamma from the iteration objective")
    p.add_argument("--csv", help="write the iteration table here")
    p.set_defaults(func=cmd_iterate)

    p = sub.add_parser("simulate", help="closed-loop time response")
    _add_system(p)
    p.add_argument("--gain", required=True)
    p.add_argument("--t-end", type=float, default=20.0)
    p.add_argument("--step", type=float, default=0.002)
    p.add_argument("--psi", help="constant initial history, e.g. 5,3 (default 0)")
    p.add_argument("--disturbance", default="builtin:paper", help="builtin:paper | none | file:<csv>")
    p.add_argument("--glitch", help="'t1,t2@magnitude' or 'noise:T,power[,seed]'")
    p.add_argument("--rule", choices=("trapezoid", "simpson"), default="trapezoid")
    p.add_argument("--gnuplot", help="also write a gnuplot script for the CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("spectrum", help="spectral abscissa of the closed loop")
    _add_system(p)
    p.add_argument("--gain", required=True)
    p.add_argument("--nodes", type=int, default=60)
    p.add_argument("--refine", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--count", type=int, default=10)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("reproduce-paper", help="end-to-end benchmark run with a comparison report")
    p.add_argument("--outdir", default="reproduce-out")
    p.add_argument("--skip-sim", action="store_true")
    p.add_argument("--max-iter", type=int, default=20)
    _add_solver(p)
    p.set_defaults(func=cmd_reproduce)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    args._t0 = time.time()
    func = args.func
    try:
        return func(args)
    except SolverUnavailableError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ENV
    except SolverTrouble as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ENV
    except Infeasible as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (KsdError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
