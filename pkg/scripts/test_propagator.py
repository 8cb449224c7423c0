#!/usr/bin/env python3
"""
Test Propagator
Fixed-step integrators, the fiber flow and its Duhamel form, the reduced
and cut-off bundle systems and the linear-estimate experiments.
"""

import csv
import math
import os
import sys
import tempfile

import numpy as np

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from bundle_reduction import BundlePoint, CutoffParams, chart
from errors import DivergenceError, ParameterError, ShapeError, StepSizeError
from field_core import Grid
from gp_model import gray_wave
from linearization import GPLinearization
from propagator import (IntegratorConfig, LinearScenario, YPath, check_step_size, direct_trajectory,
                        duhamel_solve, energy_norm, flow_S, flow_trajectory, integrate, integrate_reduced,
                        measure_linear_estimate, perp_coefficients_ode, refinement_report)
from spectral_decomposition import decompose, project
from synthetic_models import lp_test_system, planted_system

_STATE = {}


def _gp():
    if "gp" not in _STATE:
        _STATE["gp"] = decompose(GPLinearization(gray_wave(Grid((128,), (32.0,)), 0.5)))
    return _STATE["gp"]


def _planted():
    if "planted" not in _STATE:
        _STATE["planted"] = decompose(planted_system(lam=1.0, omega=2.0, beta=0.3))
    return _STATE["planted"]


def test_rk4_fourth_order():
    print("=== Testing RK4 convergence order ===")
    errors = []
    for dt in (0.1, 0.05):
        trajectory = integrate(lambda t, x: x, np.array([1.0]), 0.0, 1.0, IntegratorConfig(dt=dt, scheme="rk4"))
        errors.append(abs(trajectory.final[0] - math.e))
    ratio = errors[0] / errors[1]
    print(f"  error ratio {ratio:.2f}")
    assert 14.0 < ratio < 18.0


def test_lawson_exact_for_linear_part():
    config = IntegratorConfig(dt=0.1, scheme="splitting")
    trajectory = integrate(lambda t, x: np.zeros_like(x), np.array([1.0]), 0.0, 1.0, config,
                           stiff_exp=lambda v, h: math.exp(-3.0 * h) * v)
    assert math.isclose(trajectory.final[0], math.exp(-3.0), rel_tol=1e-13)


def test_backward_and_early_stop():
    config = IntegratorConfig(dt=0.01, scheme="rk4")
    back = integrate(lambda t, x: x, np.array([1.0]), 0.0, -1.0, config)
    assert abs(back.final[0] - math.exp(-1.0)) < 1e-9
    assert math.isclose(back.times[-1], -1.0, abs_tol=1e-12)
    stopped = integrate(lambda t, x: x, np.array([1.0]), 0.0, 5.0, config,
                        should_stop=lambda t, x: x[0] > 2.0)
    assert "stop_time" in stopped.notes
    assert abs(stopped.notes["stop_time"] - math.log(2.0)) < 0.011
    assert stopped.final[0] > 2.0


def test_divergence_reported():
    print("=== Testing blow-up detection ===")
    config = IntegratorConfig(dt=0.001, scheme="rk4", blowup=1e6)
    try:
        integrate(lambda t, x: x * x, np.array([1.0]), 0.0, 2.0, config)
    except DivergenceError as e:
        print(f"  {e}")
        assert e.trajectory.times[-1] < 1.01
    else:
        raise AssertionError("blow-up of x' = x^2 not detected")


def test_config_validation():
    for kwargs in ({"dt": 0.0}, {"scheme": "euler"}, {"horizon": -1.0}):
        try:
            IntegratorConfig(**kwargs)
        except ParameterError:
            pass
        else:
            raise AssertionError(f"{kwargs} accepted")


def test_y_path():
    path = YPath.linear([0.5], 0.2)
    assert np.allclose(path(3.0), [1.1]) and np.allclose(path.rate(-2.0), [0.2])
    assert np.allclose(YPath.constant([1.0])(7.0), [1.0])
    for call in (lambda: YPath.linear([0.0], 1.5), lambda: YPath([0.0, 0.0], [[0.0], [0.0]], [[0.0], [0.0]])):
        try:
            call()
        except (ParameterError, ShapeError):
            pass
        else:
            raise AssertionError("invalid path accepted")


def test_step_size_check():
    dec = _planted()
    estimate = check_step_size(IntegratorConfig(dt=0.01, scheme="rk4"), dec)
    assert math.isclose(estimate, 2.0, rel_tol=1e-8)
    try:
        check_step_size(IntegratorConfig(dt=2.0, scheme="rk4"), dec)
    except StepSizeError as e:
        print(f"  refused: {e}")
    else:
        raise AssertionError("unstable step accepted")


def test_fiber_energy_conserved():
    """The planted fiber flow is a rotation plus a frozen momentum, so <L^e V, V> is constant"""
    dec = _planted()
    V0 = project(dec, None, "e", dec.space.random_vector(np.random.default_rng(1)))
    trajectory = flow_trajectory(dec, YPath.constant([0.0]), 0.0, 5.0, V0, IntegratorConfig(dt=0.01, scheme="rk4"))
    energies = [energy_norm(dec, None, V) for V in trajectory.states]
    assert max(energies) - min(energies) < 1e-9 * energies[0]


def test_cocycle():
    print("=== Testing S(t, tau) S(tau, s) = S(t, s) on a gray wave ===")
    dec = _gp()
    path = YPath.linear([0.0], 0.05)
    config = IntegratorConfig(dt=0.01, scheme="splitting")
    V0 = project(dec, None, "e", dec.space.random_vector(np.random.default_rng(2), 0.1))
    two_legs = flow_S(dec, path, 0.25, 0.5, flow_S(dec, path, 0.0, 0.25, V0, config), config)
    one_leg = flow_S(dec, path, 0.0, 0.5, V0, config)
    error = float(np.max(np.abs(two_legs - one_leg)))
    print(f"  max difference {error:.2e}")
    assert error <= 1e-10 * max(1.0, float(np.max(np.abs(one_leg))))
    assert np.array_equal(flow_S(dec, path, 0.3, 0.3, V0, config), V0)


def test_duhamel_perp_coefficients():
    """Finite-rank coefficients of the stepped Duhamel solution follow the low-dimensional law"""
    print("=== Testing the finite-rank coefficient law ===")
    dec = _gp()
    rng = np.random.default_rng(3)
    path = YPath.linear([0.0], 0.05)
    V0 = dec.space.random_vector(rng, 0.05)
    g = dec.space.random_vector(rng, 0.05)
    forcing = lambda tau: math.cos(tau) * g
    config = IntegratorConfig(dt=0.005, scheme="splitting")
    result = duhamel_solve(dec, path, 0.0, 0.5, V0, forcing, config)
    c0 = dec.coordinates(path(0.0), V0)
    ode = perp_coefficients_ode(dec, path, 0.0, 0.5, c0, forcing, result.times)
    error = float(np.max(np.abs(ode - result.perp)))
    scale = max(1.0, float(np.max(np.abs(result.perp))))
    print(f"  max coefficient difference {error:.2e}")
    assert error <= 1e-7 * scale


def test_forcing_samples_validated():
    dec = _planted()
    try:
        duhamel_solve(dec, YPath.constant([0.0]), 0.0, 1.0, np.zeros(6), ([0.0, 1.0], np.zeros((2, 4))))
    except ShapeError:
        pass
    else:
        raise AssertionError("forcing samples of the wrong width accepted")


def test_direct_energy_conserved():
    print("=== Testing direct traveling-frame integration ===")
    dec = _gp()
    p = BundlePoint.from_coefficients(dec, [0.0], np.zeros(dec.rank - 1),
                                      project(dec, None, "e", dec.space.random_vector(np.random.default_rng(4), 0.02)))
    trajectory = direct_trajectory(dec.model, chart(dec, p), IntegratorConfig(dt=0.01, horizon=1.0))
    drift = trajectory.energy_drift()
    print(f"  energy drift {drift:.2e}")
    assert drift < 1e-5 * max(1.0, abs(trajectory.energy[0]))
    assert len(trajectory.energy) == len(trajectory.times)


def test_reduced_matches_direct():
    """chart(reduced orbit) and the direct orbit agree"""
    print("=== Testing reduced against direct integration ===")
    dec = _gp()
    rng = np.random.default_rng(5)
    k = dec.rank - dec.n_translation
    p0 = BundlePoint.from_coefficients(dec, [0.1], 0.01 * rng.uniform(-1.0, 1.0, k),
                                       project(dec, [0.1], "e", dec.space.random_vector(rng, 0.02)))
    config = IntegratorConfig(dt=0.01, scheme="splitting", horizon=0.5)
    reduced = integrate_reduced(dec, p0, config, mode="reduced")
    direct = direct_trajectory(dec.model, chart(dec, p0), config)
    U_reduced = chart(dec, BundlePoint.unpack(dec, reduced.final))
    error = float(np.max(np.abs(U_reduced - direct.final)))
    print(f"  max state difference {error:.2e}, reduced energy drift {reduced.energy_drift():.2e}")
    assert error < 1e-6
    assert reduced.energy_drift() < 1e-5
    assert reduced.notes["mode"] == "reduced"


def test_cutoff_orbit_on_graph():
    """lp-test closed through a- = (a+)^2 / (3 lam) grows like e^{lam t} inside delta/3"""
    dec = decompose(lp_test_system(lam=1.0))
    params = CutoffParams(delta=0.3)
    p0 = BundlePoint.from_coefficients(dec, [0.0], [0.01, 0.0], np.zeros(4))
    closure = lambda y, a, V: np.array([a[0] ** 2 / 3.0])
    config = IntegratorConfig(dt=0.01, scheme="rk4", horizon=2.0)
    trajectory = integrate_reduced(dec, p0, config, mode="cutoff-cu", params=params, closure=closure)
    final = trajectory.final
    assert abs(final[1] - 0.01 * math.exp(2.0)) < 1e-9
    assert abs(final[2] - final[1] ** 2 / 3.0) < 1e-14
    stopped = integrate_reduced(dec, p0, config, mode="cutoff-cu", params=params, closure=closure,
                                exit_radius=0.05)
    assert stopped.notes["stop_time"] < 2.0
    for kwargs in ({"mode": "free"}, {"mode": "cutoff-cs"}):
        try:
            integrate_reduced(dec, p0, config, **kwargs)
        except ParameterError:
            pass
        else:
            raise AssertionError(f"{kwargs} accepted")


def test_trajectory_csv():
    dec = _planted()
    p0 = BundlePoint.from_coefficients(dec, [0.0], [0.01, 0.0], np.zeros(6))
    trajectory = integrate_reduced(dec, p0, IntegratorConfig(dt=0.1, scheme="rk4", horizon=1.0), record_every=5)
    with tempfile.TemporaryDirectory() as folder:
        path = os.path.join(folder, "orbit.csv")
        trajectory.to_csv(path, {"a_plus": lambda s: s[1]})
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    assert rows[0] == ["time", "a_plus", "energy"]
    assert len(rows) == 1 + len(trajectory.times) == 4


def test_eta_sweep_prefactor():
    """Resonant forcing saturates the eta^{-1/2} law with prefactor 2^{-1/2}"""
    print("=== Testing the forced estimate over an eta sweep ===")
    scenario = LinearScenario(kind="eta-sweep", etas=(0.1, 0.2, 0.4, 0.8), horizon=40.0,
                              config=IntegratorConfig(dt=0.05, scheme="rk4"))
    report = measure_linear_estimate(_planted(), scenario)
    print(f"  exponent {report.constants['eta_exponent']:.4f}, spread {report.constants['prefactor_spread']:.4f}")
    assert abs(report.constants["eta_exponent"] + 0.5) < 0.05
    assert report.constants["prefactor_spread"] < 0.2
    assert abs(report.constants["prefactor"] - 1.0 / math.sqrt(2.0)) < 0.01


def test_homogeneous_and_sigma_sweep():
    dec = _planted()
    config = IntegratorConfig(dt=0.02, scheme="rk4")
    homogeneous = measure_linear_estimate(dec, LinearScenario(kind="homogeneous", horizon=2.0, config=config))
    assert abs(homogeneous.constants["growth"] - 1.0) < 1e-8
    sweep = measure_linear_estimate(dec, LinearScenario(kind="sigma-sweep", horizon=2.0, config=config))
    assert abs(sweep.constants["C_sigma"]) < 1e-6
    assert len(sweep.samples["exponent"]) == 5
    try:
        measure_linear_estimate(dec, LinearScenario(kind="bogus"))
    except ParameterError:
        pass
    else:
        raise AssertionError("unknown scenario accepted")
    changes = refinement_report(sweep, sweep)
    assert all(v == 0.0 for v in changes.values())


if __name__ == "__main__":
    print("Propagator Tests")
    test_rk4_fourth_order()
    test_lawson_exact_for_linear_part()
    test_backward_and_early_stop()
    test_divergence_reported()
    test_config_validation()
    test_y_path()
    test_step_size_check()
    test_fiber_energy_conserved()
    test_cocycle()
    test_duhamel_perp_coefficients()
    test_forcing_samples_validated()
    test_direct_energy_conserved()
    test_reduced_matches_direct()
    test_cutoff_orbit_on_graph()
    test_trajectory_csv()
    test_eta_sweep_prefactor()
    test_homogeneous_and_sigma_sweep()
    print("\nAll propagator tests completed! ✅")
