#!/usr/bin/env python3
"""
Test Manifold Solver
Lyapunov-Perron graphs against the closed-form invariant graphs of the
synthetic systems, the center graph, the first-order jet and graph files.
"""

import os
import sys
import tempfile

import numpy as np

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from bundle_reduction import BundlePoint, CutoffParams, CutoffSystem
from errors import ConvergenceError, ParameterError, ShapeError
from manifold_solver import (GraphDesign, GraphFn, center_graph, center_iterate, graph_diagnostics, graph_orbit,
                             invariance_residual, jet1_solve, load_graph, lp_apply, save_graph,
                             smoothness_diagnostic, solve_graph, translation_defect)
from spectral_decomposition import decompose
from synthetic_models import center_oracle, center_test_system, linear_saddle, lp_oracle, lp_test_system, reverse_time

LAM = 1.0
KAPPA = 1.0
LP_DESIGN = dict(box=0.3, points=9, galerkin=0, interp="cubic", dt=0.02, scheme="rk4", workers=4)
CENTER_DESIGN = dict(box=0.15, points=5, galerkin=1, interp="cubic", dt=0.05, scheme="rk4", workers=4)
_STATE = {}


def _lp():
    if "lp" not in _STATE:
        dec = decompose(lp_test_system(LAM))
        params = CutoffParams.for_decomposition(dec, delta=0.1)
        h, report = solve_graph(dec, params, GraphDesign(side="cu", **LP_DESIGN))
        _STATE["lp"] = (dec, params, h, report)
    return _STATE["lp"]


def _center():
    if "center" not in _STATE:
        dec = decompose(center_test_system(LAM, KAPPA))
        params = CutoffParams.for_decomposition(dec, delta=0.1)
        h_cu, _ = solve_graph(dec, params, GraphDesign(side="cu", **CENTER_DESIGN), check_invariance=False)
        h_cs, _ = solve_graph(dec, params, GraphDesign(side="cs", **CENTER_DESIGN), check_invariance=False)
        _STATE["center"] = (dec, params, h_cu, h_cs)
    return _STATE["center"]


def test_lp_graph_matches_oracle():
    """a- = (a+)^2 / (3 lam) on the sampled box"""
    print("=== Testing the unstable graph of lp-test ===")
    dec, params, h, report = _lp()
    s = h.axes[0]
    exact, _ = lp_oracle(LAM, s)
    error = float(np.max(np.abs(h.values[:, 0] - exact)))
    print(f"  {report.iterations} iterations, max error {error:.2e}")
    assert error < 1e-6
    assert report.converged
    off_grid = float(h(np.array([[0.017]]))[0, 0])
    assert abs(off_grid - 0.017 ** 2 / (3.0 * LAM)) < 1e-6


def test_lp_graph_diagnostics():
    dec, params, h, report = _lp()
    diagnostics = graph_diagnostics(h)
    print(f"  sup {diagnostics['sup']:.3e}, Lip {diagnostics['lipschitz']:.3e}")
    assert diagnostics["in_gamma"]
    assert diagnostics["base_value"] < 1e-12
    assert report.invariance["max"] < 1e-5
    assert invariance_residual(dec, params, h, samples=3)["samples"] == 3


def test_lp_stable_graph_is_flat():
    dec, params, _, _ = _lp()
    h_cs, report = solve_graph(dec, params, GraphDesign(side="cs", **LP_DESIGN), check_invariance=False)
    assert h_cs.sup() < 1e-12
    assert report.iterations == 1


def test_linear_saddle_graphs_vanish():
    dec = decompose(linear_saddle(LAM))
    params = CutoffParams.for_decomposition(dec, delta=0.1)
    for side in ("cu", "cs"):
        h, _ = solve_graph(dec, params, GraphDesign(side=side, **LP_DESIGN), check_invariance=False)
        assert h.sup() < 1e-14


def test_reversed_time_duality():
    """The stable graph of the time-reversed system is the unstable graph of the original"""
    print("=== Testing time-reversal duality ===")
    dec = decompose(reverse_time(lp_test_system(LAM)))
    params = CutoffParams.for_decomposition(dec, delta=0.1)
    h_cs, _ = solve_graph(dec, params, GraphDesign(side="cs", **LP_DESIGN), check_invariance=False)
    _, _, h_cu, _ = _lp()
    gap = h_cs.distance(h_cu)
    print(f"  |h_cs(reversed) - h_cu| = {gap:.2e}")
    assert gap < 1e-6


def test_center_graph():
    """center-test: all three graphs equal -kappa p^2 / (2 lam)"""
    print("=== Testing the center graph ===")
    dec, params, h_cu, h_cs = _center()
    h_c = center_graph(dec, h_cu, h_cs, params)
    p = h_c.axes[0]
    exact = center_oracle(LAM, KAPPA, p)
    error = float(np.max(np.abs(h_c.values - exact[:, None])))
    print(f"  center samples {len(p)}, max error {error:.2e}")
    assert error < 1e-6
    assert h_c.labels == ["xi[0]"]
    plus, minus = center_iterate(h_cu, h_cs, np.array([p[1]]), steps=5, a_size=2)
    assert np.allclose(plus, exact[1], atol=1e-6) and np.allclose(minus, exact[1], atol=1e-6)


def test_center_graph_refuses_mismatched_designs():
    dec, params, h_cu, h_cs = _center()
    try:
        center_graph(dec, h_cs, h_cu, params)
    except ParameterError:
        pass
    else:
        raise AssertionError("swapped sides accepted")
    other = GraphFn.zeros(dec, params, GraphDesign(side="cs", box=0.15, points=7, galerkin=1))
    try:
        center_graph(dec, h_cu, other, params)
    except ParameterError:
        pass
    else:
        raise AssertionError("mismatched sampling accepted")


def test_translation_defect():
    dec, _, h_cu, _ = _center()
    assert translation_defect(dec, h_cu, samples=3) < 1e-12


def test_first_order_jet():
    """Dh of the lp-test graph is 2 a+ / (3 lam)"""
    print("=== Testing the first-order jet ===")
    dec, params, h, _ = _lp()
    with_jet = jet1_solve(dec, params, h)
    _, slope = lp_oracle(LAM, h.axes[0])
    error = float(np.max(np.abs(with_jet.jet1[:, 0, 0] - slope)))
    print(f"  max jet error {error:.2e}")
    assert error < 1e-6
    assert with_jet.jet(np.array([[0.0]])).shape == (1, 1, 1)


def test_smoothness_diagnostic():
    _, _, h, _ = _lp()
    orders = smoothness_diagnostic(h)["+[0]"]
    assert abs(orders[1] - 1.0 / (3.0 * LAM)) < 1e-4
    assert orders[2] < 1e-2


def test_graph_file_round_trip():
    print("=== Testing graph files ===")
    dec, params, h, _ = _lp()
    jet = np.ones(h.values.shape + (h.naxes,))
    h = h.with_values(h.values, jet1=jet, diagnostics={"sup": h.sup(), "note": "lp"})
    with tempfile.TemporaryDirectory() as folder:
        path = os.path.join(folder, "cu.graph")
        save_graph(h, path)
        loaded = load_graph(path)
        bad = os.path.join(folder, "bad.graph")
        with open(bad, "wb") as fh:
            fh.write(b"NOPE" + bytes(8))
        try:
            load_graph(bad)
        except ShapeError:
            pass
        else:
            raise AssertionError("bad magic accepted")
    assert np.array_equal(loaded.values, h.values)
    assert np.array_equal(loaded.jet1, jet)
    assert loaded.params == params and loaded.design == h.design
    assert loaded.labels == h.labels and loaded.inputs == h.inputs and loaded.outputs == h.outputs
    assert loaded.diagnostics["note"] == "lp"
    print("  values, jet and design restored ✅")


def test_design_and_side_validation():
    for kwargs in ({"side": "x"}, {"box": 0.0}, {"points": 8}, {"interp": "spline"},
                   {"points": 3, "interp": "cubic"}, {"galerkin": -1}):
        try:
            GraphDesign(**kwargs)
        except ParameterError:
            pass
        else:
            raise AssertionError(f"{kwargs} accepted")
    dec, params, h, _ = _lp()
    for call in (lambda: solve_graph(dec, params, GraphDesign(side="c")),
                 lambda: lp_apply(dec, params, GraphFn.zeros(dec, params, GraphDesign(side="c", galerkin=0)))):
        try:
            call()
        except ParameterError:
            pass
        else:
            raise AssertionError("center side accepted by the Lyapunov-Perron step")
    try:
        GraphFn("cu", h.axes, h.labels, np.zeros((3, 1)), h.modes, h.inputs, h.outputs, params, h.design)
    except ShapeError:
        pass
    else:
        raise AssertionError("mis-shaped graph values accepted")


def test_iteration_limit():
    dec, params, _, _ = _lp()
    try:
        solve_graph(dec, params, GraphDesign(side="cu", **LP_DESIGN), max_iter=1, check_invariance=False)
    except ConvergenceError as e:
        assert len(e.residuals) == 1
    else:
        raise AssertionError("single iteration reported as converged")


def test_cubic_interpolant_reproduces_nodes():
    """The cubic interpolant returns the stored samples, the zero sample included"""
    dec, params, h, _ = _lp()
    at_nodes = h(h.axes[0][:, None])
    assert np.max(np.abs(at_nodes - h.values)) < 1e-12
    assert abs(float(h(np.zeros((1, 1)))[0, 0])) < 1e-12
    s = 0.5 * (h.axes[0][1:] + h.axes[0][:-1])
    exact, _ = lp_oracle(LAM, s)
    assert np.max(np.abs(h(s[:, None])[:, 0] - exact)) < 2e-6


def test_jet_iteration_limit():
    dec, params, h, _ = _lp()
    try:
        jet1_solve(dec, params, h, max_iter=1)
    except ConvergenceError as e:
        assert len(e.residuals) == 1
    else:
        raise AssertionError("single jet iteration reported as converged")


class _LeakyGraph(GraphFn):
    """Reports a fixed fiber norm outside the Galerkin span"""

    def galerkin_split(self, dec, y, V):
        xi, _ = super().galerkin_split(dec, y, V)
        return xi, 0.125


def test_discarded_fiber_energy():
    """Fiber norm outside the Galerkin span is tracked per orbit and reaches the updated graph"""
    print("=== Testing discarded fiber energy ===")
    dec, params, _, _ = _center()
    design = GraphDesign(side="cu", **{**CENTER_DESIGN, "galerkin": 0})
    h = GraphFn.zeros(dec, params, design)
    Ve = np.zeros(dec.space.dim)
    Ve[2] = 0.02
    p0 = BundlePoint.from_coefficients(dec, [0.0], np.zeros(dec.rank - dec.n_translation), Ve)
    tracker = {"discarded": 0.0}
    graph_orbit(dec, CutoffSystem(dec, params), h, p0, -0.5, design.integrator(), tracker=tracker)
    print(f"  largest discarded norm {tracker['discarded']:.3e}")
    assert abs(tracker["discarded"] - 0.02) < 1e-12

    leaky = _LeakyGraph.zeros(dec, params, design)
    updated = lp_apply(dec, params, leaky)
    assert leaky.discarded_energy == 0.0
    assert updated.discarded_energy == 0.125
    assert updated.diagnostics["discarded_energy"] == 0.125


if __name__ == "__main__":
    print("Manifold Solver Tests")
    test_lp_graph_matches_oracle()
    test_lp_graph_diagnostics()
    test_lp_stable_graph_is_flat()
    test_linear_saddle_graphs_vanish()
    test_reversed_time_duality()
    test_center_graph()
    test_center_graph_refuses_mismatched_designs()
    test_translation_defect()
    test_first_order_jet()
    test_smoothness_diagnostic()
    test_graph_file_round_trip()
    test_design_and_side_validation()
    test_iteration_limit()
    test_cubic_interpolant_reproduces_nodes()
    test_jet_iteration_limit()
    test_discarded_fiber_energy()
    print("\nAll manifold solver tests completed! ✅")
