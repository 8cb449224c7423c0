#!/usr/bin/env python3
"""
Test Verification Harness
Rate fits, attraction and ejection on lp-test, the tube criterion, the
non-degenerate checks, run files and the command line.
"""

import math
import os
import sys
import tempfile

import numpy as np

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from bundle_reduction import BundlePoint, CutoffParams
from cli import build_parser, main
from errors import ParameterError, PreconditionError
from field_core import Grid
from gp_model import gray_wave
from linearization import GPLinearization
from manifold_solver import GraphDesign, center_graph, solve_graph
from spectral_decomposition import decompose
from synthetic_models import center_test_system, lp_test_system
from verification_harness import (RunConfig, build_model, energy_expansion_residual, fit_rate, load_run_config,
                                  measure_attraction_cu, measure_center_attraction, measure_ejection_cs, morse_check,
                                  neighboring_wave_membership, run_suite, tube_candidates, tube_characterization)

DESIGN = dict(box=0.3, points=9, galerkin=0, interp="cubic", dt=0.02, scheme="rk4", workers=4)
_STATE = {}


def _lp_graphs():
    if "lp" not in _STATE:
        dec = decompose(lp_test_system(1.0))
        params = CutoffParams.for_decomposition(dec, delta=0.1)
        graphs = {side: solve_graph(dec, params, GraphDesign(side=side, **DESIGN), check_invariance=False)[0]
                  for side in ("cu", "cs")}
        _STATE["lp"] = (dec, params, graphs)
    return _STATE["lp"]


def test_fit_rate():
    print("=== Testing log-linear rate fits ===")
    t = np.linspace(0.0, 5.0, 51)
    decay = fit_rate(t, 1e-3 * np.exp(-2.0 * t))
    assert math.isclose(decay.rate, 2.0, rel_tol=1e-8)
    assert decay.residual < 1e-10 and decay.window[0] >= 0.5
    growth = fit_rate(t, 1e-6 * np.exp(t), growth=True, ceiling=1e-4)
    assert math.isclose(growth.rate, 1.0, rel_tol=1e-8)
    assert growth.window[1] <= math.log(100.0) + 1e-12
    print(f"  decay {decay.rate:.6f} over {decay.window}, growth {growth.rate:.6f} ✅")
    for args in (([0.0, 1.0], [1.0, 0.5]), (t, np.zeros_like(t))):
        try:
            fit_rate(*args)
        except ParameterError:
            pass
        else:
            raise AssertionError("unusable history accepted")


def test_attraction_to_unstable_graph():
    """Off-graph distance decays like e^{-lam t} >= lam - 2 eta"""
    print("=== Testing attraction to the cu graph ===")
    dec, params, graphs = _lp_graphs()
    with tempfile.TemporaryDirectory() as folder:
        report = measure_attraction_cu(dec, params, graphs["cu"], samples=3, out_dir=folder)
        assert all(os.path.exists(path) for path in report.artifacts)
    print(f"  rates {report.rates}")
    assert report.passed
    assert abs(report.rates["mean"] - 1.0) < 0.05
    assert report.rates["target"] == 0.5


def test_ejection_from_stable_graph():
    print("=== Testing ejection off the cs graph ===")
    dec, params, graphs = _lp_graphs()
    report = measure_ejection_cs(dec, params, graphs["cs"], samples=2)
    print(f"  rates {report.rates}, exits {report.details['exits']}")
    assert report.passed
    assert abs(report.rates["min"] - 1.0) < 0.05
    assert len(report.details["exits"]) == 2


def test_tube_characterization():
    """Orbits staying in the tube are exactly the graph points"""
    print("=== Testing the tube criterion ===")
    dec, params, graphs = _lp_graphs()
    candidates = tube_candidates(dec, graphs, np.random.default_rng(1), count=8)
    report = tube_characterization(dec, params, graphs, candidates, T=10.0)
    print(f"  members {report.details['members']}, disagreements {report.details['disagreements']}")
    assert report.passed
    assert report.details["members"] == {"cu": 4, "cs": 4, "c": 2}


def test_energy_expansion_and_morse():
    dec = decompose(lp_test_system(1.0))
    direction = BundlePoint.from_coefficients(dec, [0.0], [1.0, 0.0], np.zeros(4))
    value, residual = energy_expansion_residual(dec, direction, 0.1)
    # a^- = 0 and V^e = 0 leave only the cubic term
    assert math.isclose(abs(value), 0.1 ** 3 / 3.0, rel_tol=1e-8)
    assert math.isclose(residual, abs(value), rel_tol=1e-12)
    report = morse_check(dec)
    assert report["status"] == "pass" and report["morse_index"] == 1


def test_nondegenerate_suite():
    print("=== Testing the non-degenerate stability checks ===")
    reports = run_suite(RunConfig(), "nondeg")
    nondeg = reports["nondeg"]
    print(f"  slope {nondeg['rates']['expansion_slope']:.4f}, max |V^e| {nondeg['details']['max_ve']:.3e}")
    assert nondeg["status"] == "pass"
    assert abs(nondeg["rates"]["expansion_slope"] - 3.0) < 0.05
    try:
        run_suite(RunConfig(), "everything")
    except ParameterError:
        pass
    else:
        raise AssertionError("unknown suite accepted")


def test_center_attraction():
    """Orbits on W^cs reach the center graph at the stable rate"""
    print("=== Testing attraction to the center graph ===")
    dec = decompose(center_test_system(1.0, 1.0))
    params = CutoffParams.for_decomposition(dec, delta=0.1)
    design = dict(DESIGN, box=0.15, points=5, galerkin=1)
    h_cu, _ = solve_graph(dec, params, GraphDesign(side="cu", **design), check_invariance=False)
    h_cs, _ = solve_graph(dec, params, GraphDesign(side="cs", **design), check_invariance=False)
    h_c = center_graph(dec, h_cu, h_cs, params)
    report = measure_center_attraction(dec, params, h_c, h_cs)
    print(f"  rate {report.rates['rate']:.4f} (target {report.rates['target']})")
    assert report.passed
    assert abs(report.rates["rate"] - 1.0) < 0.05


def test_neighboring_wave():
    print("=== Testing a neighboring gray wave ===")
    grid = Grid((128,), (32.0,))
    profile, neighbor = gray_wave(grid, 0.5), gray_wave(grid, 0.501)
    dec = decompose(GPLinearization(profile))
    params = CutoffParams(delta=0.05)
    report = neighboring_wave_membership(profile, neighbor, dec, params)
    print(f"  |w_c' - w_c| = {report.details['x1_gap']:.3e}, max magnitude {report.details['max_magnitude']:.3e}")
    assert report.details["x1_gap"] < 0.05
    assert report.passed and report.details["classified"] == "c"
    try:
        neighboring_wave_membership(profile, neighbor, dec, params, delta0=1e-8)
    except PreconditionError:
        pass
    else:
        raise AssertionError("distant neighbor accepted")


def test_run_config():
    print("=== Testing run files ===")
    text = ("[model]\nkind = planted\nlam = 1.5\n\n[cutoff]\ndelta = 0.05\n\n"
            "[graph]\npoints = 7\ninterp = linear\n\n[suite]\nseed = 3\n")
    with tempfile.TemporaryDirectory() as folder:
        path = os.path.join(folder, "run.cfg")
        with open(path, "w") as fh:
            fh.write(text)
        config = load_run_config(path)
        with open(path, "w") as fh:
            fh.write("[model]\nkind = pendulum\n")
        try:
            load_run_config(path)
        except ParameterError:
            pass
        else:
            raise AssertionError("unknown model accepted")
    assert config.model == "planted" and config.model_options == {"lam": 1.5}
    assert config.cutoff_params().delta == 0.05 and config.cutoff_params().mu == 0.1
    design = config.design("cs")
    assert design.points == 7 and design.interp == "linear" and design.box == 0.3
    assert config.seed == 3 and config.integrator.dt == 0.01
    assert build_model(config.model, config.model_options).name == "planted"
    try:
        build_model("gp", {"width": 2.0})
    except ParameterError:
        pass
    else:
        raise AssertionError("unknown gp option accepted")
    try:
        load_run_config(os.path.join(folder, "missing.cfg"))
    except ParameterError:
        pass
    else:
        raise AssertionError("missing run file accepted")


def test_run_config_rejects_bad_values():
    """Malformed values, unknown keys and unknown sections surface as ParameterError"""
    print("=== Testing run file validation ===")
    bad = {
        "word for a count": "[suite]\nsamples = four\n",
        "fractional points": "[graph]\npoints = 7.5\n",
        "unknown cutoff key": "[cutoff]\nwidth = 1\n",
        "unknown model option": "[model]\nkind = lp-test\nwidth = 2\n",
        "unknown section": "[cutof]\ndelta = 0.05\n",
        "negative time step": "[integrator]\ndt = -0.1\n",
    }
    with tempfile.TemporaryDirectory() as folder:
        path = os.path.join(folder, "run.cfg")
        for label, text in bad.items():
            with open(path, "w") as fh:
                fh.write(text)
            try:
                load_run_config(path)
            except ParameterError as e:
                print(f"  {label}: {e}")
            else:
                raise AssertionError(f"run file with {label} accepted")
    try:
        build_model("lp-test", {"omega": 2.0})
    except ParameterError:
        pass
    else:
        raise AssertionError("option foreign to the model factory accepted")


def test_command_line():
    print("=== Testing the command line ===")
    args = build_parser().parse_args(["build-manifold", "--model", "lp-test", "--side", "cs",
                                      "--samples", "7", "--out", "cs.graph"])
    assert args.command == "build-manifold" and args.side == "cs" and args.samples == 7
    assert args.delta == 1e-2 and args.galerkin == 2
    with tempfile.TemporaryDirectory() as folder:
        dec_path = os.path.join(folder, "dec.json")
        csv_path = os.path.join(folder, "orbit.csv")
        assert main(["decompose", "--model", "lp-test", "--out", dec_path]) == 0
        assert main(["simulate", "--model", "lp-test", "--dec", dec_path, "--scheme", "rk4",
                     "--T", "0.1", "--out", csv_path]) == 0
        assert os.path.exists(dec_path) and os.path.exists(csv_path)
        assert main(["decompose", "--out", dec_path]) == 1
    print("  decompose and simulate round trip through files ✅")


if __name__ == "__main__":
    print("Verification Harness Tests")
    test_fit_rate()
    test_attraction_to_unstable_graph()
    test_ejection_from_stable_graph()
    test_tube_characterization()
    test_energy_expansion_and_morse()
    test_nondegenerate_suite()
    test_center_attraction()
    test_neighboring_wave()
    test_run_config()
    test_run_config_rejects_bad_values()
    test_command_line()
    print("\nAll verification harness tests completed! ✅")
