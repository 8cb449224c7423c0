#!/usr/bin/env python3
"""
Test Synthetic Models
Planted spectra, closed-form vector fields and the invariant graphs the
solvers are checked against.
"""

import os
import sys

import numpy as np

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from errors import ParameterError, ShapeError
from linearization import materialize
from synthetic_models import (EuclideanSpace, SyntheticHamiltonian, build_synthetic, center_oracle,
                              center_test_system, linear_saddle, lp_oracle, lp_test_system, planted_system,
                              reverse_time)


def _sorted_spectrum(model) -> np.ndarray:
    A = materialize(lambda v: model.apply_JL(v, None), model.dim)
    values = np.linalg.eigvals(A)
    return np.array(sorted(values, key=lambda z: (round(z.real, 5), round(z.imag, 5))))


def test_planted_spectrum():
    print("=== Testing planted spectrum ===")
    model = planted_system(lam=1.5, omega=2.0)
    spectrum = _sorted_spectrum(model)
    expected = np.array([-1.5, -2.0j, 0.0, 0.0, 2.0j, 1.5])
    expected = np.array(sorted(expected, key=lambda z: (z.real, z.imag)))
    print(f"  eigenvalues {np.round(spectrum, 6).tolist()}")
    assert np.max(np.abs(spectrum - expected)) < 1e-6


def test_lp_vector_field():
    """dq = p, da+ = lam a+, dp = 0, da- = -lam a- + (a+)^2"""
    lam = 0.7
    model = lp_test_system(lam)
    q, ap, p, am = 0.3, 0.2, -0.4, 0.1
    rhs = model.traveling_rhs(np.array([q, ap, p, am]))
    assert np.allclose(rhs, [p, lam * ap, 0.0, -lam * am + ap ** 2], atol=1e-14)


def test_lp_graph_is_invariant():
    print("=== Testing the unstable graph of lp-test ===")
    lam = 1.0
    model = lp_test_system(lam)
    for ap in (-0.3, 0.05, 0.25):
        value, slope = lp_oracle(lam, ap)
        rhs = model.traveling_rhs(np.array([0.0, ap, 0.0, value]))
        # tangency: d(a-)/dt = h'(a+) d(a+)/dt
        assert abs(rhs[3] - slope * rhs[1]) < 1e-14
    print("  a- = (a+)^2 / (3 lam) is tangent to the flow ✅")


def test_center_graph_is_invariant():
    lam, kappa = 1.0, 0.8
    model = center_test_system(lam, kappa)
    for p in (-0.2, 0.1, 0.3):
        value = center_oracle(lam, kappa, p)
        rhs = model.traveling_rhs(np.array([0.0, value, p, value]))
        assert abs(rhs[1]) < 1e-14 and abs(rhs[2]) < 1e-14 and abs(rhs[3]) < 1e-14


def test_energy_conserved_along_field():
    """d/dt H(x) = <grad H, J grad H> = 0"""
    model = planted_system(beta=0.5)
    rng = np.random.default_rng(1)
    x = 0.3 * rng.standard_normal(model.dim)
    f = model.traveling_rhs(x)
    h = 1e-6
    derivative = (model.conserved(x + h * f) - model.conserved(x - h * f)) / (2 * h)
    assert abs(derivative) < 1e-8


def test_nonlinearity_vanishes_on_the_wave_manifold():
    model = lp_test_system()
    g0, gj = model.nonlinearity_split(np.array([2.5]), np.zeros(4))
    assert not np.any(g0) and all(not np.any(g) for g in gj)


def test_reverse_time():
    model = lp_test_system()
    reversed_model = reverse_time(model)
    x = np.array([0.1, 0.2, 0.3, 0.4])
    assert np.allclose(reversed_model.traveling_rhs(x), -model.traveling_rhs(x))
    assert reversed_model.orientation == -1.0
    assert reversed_model.name == "lp-test-reversed"


def test_linear_saddle_has_no_forcing():
    model = linear_saddle(2.0)
    x = np.array([0.0, 0.5, 0.0, 0.0])
    assert np.allclose(model.traveling_rhs(x), [0.0, 1.0, 0.0, 0.0])


def test_validation():
    print("=== Testing parameter validation ===")
    try:
        EuclideanSpace(3)
    except ShapeError:
        pass
    else:
        raise AssertionError("odd dimension accepted")
    bad = np.zeros((4, 4))
    bad[0, 1] = 1.0
    try:
        SyntheticHamiltonian(bad)
    except ParameterError:
        pass
    else:
        raise AssertionError("non-symmetric Hessian accepted")
    coupled = np.eye(4)
    try:
        SyntheticHamiltonian(coupled)
    except ParameterError as e:
        print(f"  translation outside ker L refused: {e}")
    else:
        raise AssertionError("translation coordinate outside ker L accepted")
    for call in (lambda: lp_test_system(0.0), lambda: planted_system(omega=-1.0),
                 lambda: build_synthetic("pendulum")):
        try:
            call()
        except ParameterError:
            pass
        else:
            raise AssertionError("invalid synthetic model accepted")


def test_factory():
    model = build_synthetic("center-test", lam=2.0, kappa=0.5)
    assert model.name == "center-test"
    assert model.info == {"lam": 2.0, "kappa": 0.5}
    assert model.describe()["labels"] == ["q", "a+", "p", "a-"]


if __name__ == "__main__":
    print("Synthetic Model Tests")
    test_planted_spectrum()
    test_lp_vector_field()
    test_lp_graph_is_invariant()
    test_center_graph_is_invariant()
    test_energy_conserved_along_field()
    test_nonlinearity_vanishes_on_the_wave_manifold()
    test_reverse_time()
    test_linear_saddle_has_no_forcing()
    test_validation()
    test_factory()
    print("\nAll synthetic model tests completed! ✅")
