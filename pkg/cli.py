#!/usr/bin/env python3
"""
Invariant Manifold Toolkit - Command Line
Subcommands: solve-wave, decompose, simulate, build-manifold, verify.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from bundle_reduction import BundlePoint, CutoffParams, chart
from errors import ParameterError, ToolkitError
from field_core import Grid, save_density_png
from gp_model import ModelParams, gray_wave, load_profile, save_profile, transverse_extend
from linearization import GPLinearization, LinearizedModel
from manifold_solver import GraphDesign, center_graph, jet1_solve, load_graph, save_graph, solve_graph
from propagator import IntegratorConfig, direct_trajectory, integrate_reduced
from spectral_decomposition import decompose, load_decomposition, project, save_decomposition
from synthetic_models import MODEL_FACTORIES, build_synthetic
from verification_harness import SUITES, load_run_config, run_suite

logger = logging.getLogger(__name__)

SIMULATE_MODES = ("reduced", "cutoff-cu", "cutoff-cs", "direct")


def _model_from_args(args) -> LinearizedModel:
    if args.profile:
        return GPLinearization(load_profile(args.profile))
    if args.model:
        return build_synthetic(args.model)
    raise ParameterError("give --profile (GP wave) or --model (synthetic system)")


def _decomposition_from_args(args, model: LinearizedModel):
    if getattr(args, "dec", None):
        logger.info(f"Loading decomposition {args.dec}")
        return load_decomposition(args.dec, model)
    return decompose(model, tol=getattr(args, "tol", 1e-6))


def cmd_solve_wave(args) -> int:
    grid = Grid((args.n,), (args.box,))
    profile = gray_wave(grid, args.c, ModelParams(chi_radius=args.chi_radius, c=(args.c,)), tol=args.tol)
    if args.dim == 2:
        profile = transverse_extend(profile, args.transverse_n, args.transverse_box)
    elif args.dim != 1:
        raise ParameterError(f"--dim must be 1 or 2, got {args.dim}")
    save_profile(profile, args.out)
    if args.png:
        save_density_png(profile.U_c, args.png)
    logger.info(f"Traveling wave c = {profile.c.tolist()}: residual {profile.residual:.3e}")
    return 0


def cmd_decompose(args) -> int:
    dec = decompose(_model_from_args(args), tol=args.tol)
    save_decomposition(dec, args.out)
    summary = dec.summary()
    logger.info(f"Decomposition dims {summary['dims']}, lambda {summary['lambda']:.6f}, "
                f"Morse index {summary['morse_index']}")
    return 0


def _initial_point(dec, path: str) -> BundlePoint:
    """init.json keys: y, a (block order d1, d2, +, -), optional V or ve_amplitude with seed"""
    p = BundlePoint.origin(dec)
    if not path:
        return p
    with open(path) as fh:
        record = json.load(fh)
    y = np.asarray(record.get("y", p.y), dtype=float)
    a = np.asarray(record.get("a", p.a), dtype=float)
    if a.shape != p.a.shape:
        raise ParameterError(f"init 'a' needs {p.a.size} entries in block order d1, d2, +, -")
    if "V" in record:
        V = np.asarray(record["V"], dtype=float)
    elif "ve_amplitude" in record:
        rng = np.random.default_rng(int(record.get("seed", 0)))
        V = project(dec, y, "e", dec.space.random_vector(rng, float(record["ve_amplitude"])))
    else:
        V = p.Ve
    return BundlePoint.from_coefficients(dec, y, a, V)


def cmd_simulate(args) -> int:
    model = _model_from_args(args)
    config = IntegratorConfig(dt=args.dt, scheme=args.scheme, horizon=args.T)
    if args.mode == "direct":
        dec = _decomposition_from_args(args, model)
        U0 = chart(dec, _initial_point(dec, args.init))
        trajectory = direct_trajectory(model, U0, config, record_every=args.record_every)
        columns = {"norm_displacement": lambda U: dec.space.x1_norm(U - model.base_state(None))}
    else:
        dec = _decomposition_from_args(args, model)
        params = CutoffParams.for_decomposition(dec, delta=args.delta) if args.mode != "reduced" else None
        trajectory = integrate_reduced(dec, _initial_point(dec, args.init), config, mode=args.mode,
                                       params=params, record_every=args.record_every)
        nT, k = dec.n_translation, dec.rank - dec.n_translation
        columns = {f"y{j}": (lambda s, j=j: s[j]) for j in range(nT)}
        columns.update({f"a{j}": (lambda s, j=j: s[nT + j]) for j in range(k)})
        columns["norm_V"] = lambda s: dec.space.x1_norm(s[nT + k:])
    trajectory.to_csv(args.out, columns)
    if trajectory.energy:
        logger.info(f"Energy drift over [0, {args.T}]: {trajectory.energy_drift():.3e}")
    return 0


def cmd_build_manifold(args) -> int:
    model = _model_from_args(args)
    dec = _decomposition_from_args(args, model)
    params = CutoffParams.for_decomposition(dec, delta=args.delta, mu=args.mu, Q=args.Q, eta=args.eta)

    def design(side):
        return GraphDesign(side=side, box=args.box, points=args.samples, galerkin=args.galerkin,
                           interp=args.interp, dt=args.dt, workers=args.workers)

    if args.side == "c":
        h_cu = load_graph(args.cu_graph) if args.cu_graph else solve_graph(dec, params, design("cu"))[0]
        h_cs = load_graph(args.cs_graph) if args.cs_graph else solve_graph(dec, params, design("cs"))[0]
        h = center_graph(dec, h_cu, h_cs, params)
    else:
        h, report = solve_graph(dec, params, design(args.side))
        logger.info(f"Fixed point: {json.dumps(report.to_dict(), default=float)}")
        if args.jet:
            h = jet1_solve(dec, params, h)
    save_graph(h, args.out)
    return 0


def cmd_verify(args) -> int:
    config = load_run_config(args.config)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    reports = run_suite(config, args.suite, out_dir=out_dir)
    with open(args.out, "w") as fh:
        json.dump(reports, fh, indent=2, default=float)
    failed = [name for name, r in reports.items() if r["status"] == "fail"]
    for name, r in reports.items():
        logger.info(f"{name:>12}: {r['status']}")
    return 1 if failed else 0


def _add_model_source(parser):
    parser.add_argument("--profile", help="traveling-wave profile (.imkf with JSON sidecar)")
    parser.add_argument("--model", choices=sorted(MODEL_FACTORIES), help="synthetic system instead of a profile")
    parser.add_argument("--dec", help="saved decomposition (dec.json); recomputed when omitted")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Invariant manifolds of traveling-wave manifolds")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-wave", help="Newton-solve a gray traveling wave")
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--c", type=float, default=0.5)
    p.add_argument("--box", type=float, default=32.0)
    p.add_argument("--n", type=int, default=128)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--chi-radius", type=float, default=1.0)
    p.add_argument("--transverse-n", type=int, default=16)
    p.add_argument("--transverse-box", type=float, default=16.0)
    p.add_argument("--png", help="also render the density |U|^2")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve_wave)

    p = sub.add_parser("decompose", help="spectral splitting of JL at the wave")
    p.add_argument("--profile")
    p.add_argument("--model", choices=sorted(MODEL_FACTORIES))
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("simulate", help="integrate the reduced, cut-off or direct system")
    _add_model_source(p)
    p.add_argument("--mode", choices=SIMULATE_MODES, default="reduced")
    p.add_argument("--init", help="init.json with y, a and V or ve_amplitude")
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--scheme", choices=("rk4", "splitting"), default="splitting")
    p.add_argument("--delta", type=float, default=1e-2)
    p.add_argument("--record-every", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("build-manifold", help="Lyapunov-Perron graph of W^cu, W^cs or W^c")
    _add_model_source(p)
    p.add_argument("--side", choices=("cu", "cs", "c"), default="cu")
    p.add_argument("--delta", type=float, default=1e-2)
    p.add_argument("--mu", type=float, default=0.1)
    p.add_argument("--Q", type=float, default=4.0)
    p.add_argument("--eta", type=float, default=0.25)
    p.add_argument("--samples", type=int, default=9, help="points per axis (odd)")
    p.add_argument("--box", type=float, default=0.3)
    p.add_argument("--galerkin", type=int, default=2)
    p.add_argument("--interp", choices=("linear", "cubic"), default="cubic")
    p.add_argument("--dt", type=float, default=0.05)
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--jet", action="store_true", help="also solve the first-order jet")
    p.add_argument("--cu-graph", help="saved cu graph reused for --side c")
    p.add_argument("--cs-graph", help="saved cs graph reused for --side c")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_manifold)

    p = sub.add_parser("verify", help="run the dynamic verification suite")
    p.add_argument("--suite", choices=SUITES, default="all")
    p.add_argument("--config", default="run.cfg")
    p.add_argument("--out", default="report.json")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(asctime)s - %(levelname)s - %(message)s')
    try:
        return args.func(args)
    except ToolkitError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 1
    except KeyboardInterrupt:
        logger.info("Interrupted")
        return 1


if __name__ == "__main__":
    sys.exit(main())
