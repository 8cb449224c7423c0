#!/usr/bin/env python3
"""
Test GP Model
Conserved functionals, the psi coordinate map and the traveling-wave solver.
"""

import math
import os
import sys
import tempfile

import numpy as np

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from errors import ParameterError
from field_core import Field, Grid, random_smooth_field, translate
from gp_model import (ModelParams, conserved_quantity, dip_amplitude, extended_momentum, gray_wave,
                      hamiltonian_gradient, load_profile, momentum, psi_forward, psi_inverse, save_profile,
                      traveling_frame_rhs, transverse_extend)

GRID = Grid((128,), (32.0,))
_PROFILES = {}


def _profile(c: float):
    if c not in _PROFILES:
        _PROFILES[c] = gray_wave(GRID, c)
    return _PROFILES[c]


def test_gray_wave_residual():
    """Newton-polished gray waves solve the traveling-wave equation to 1e-9"""
    print("=== Testing traveling-wave residual ===")
    for c in (0.0, 0.5):
        profile = _profile(c)
        print(f"  c = {c}: residual {profile.residual:.2e}")
        assert profile.residual <= 1e-9
        assert profile.info["newton_history"][-1] <= 1e-9


def test_supersonic_refused():
    for c in (math.sqrt(2.0), 1.6):
        try:
            gray_wave(GRID, c)
        except ParameterError:
            print(f"  c = {c:.3f} refused ✅")
        else:
            raise AssertionError(f"supersonic c = {c} accepted")


def test_dip_shrinks_with_speed():
    print("=== Testing dip amplitude over a speed sweep ===")
    dips = [dip_amplitude(_profile(c)) for c in (0.0, 0.5, 1.0)]
    print(f"  dips {np.round(dips, 4).tolist()}")
    assert dips[0] > dips[1] > dips[2] > 0.0


def test_psi_round_trip_and_equivariance():
    rng = np.random.default_rng(3)
    params = ModelParams()
    w = random_smooth_field(GRID, rng, amplitude=0.3)
    back = psi_inverse(psi_forward(w, params), params)
    assert np.max(np.abs(back.re - w.re)) < 1e-12
    assert np.max(np.abs(back.im - w.im)) < 1e-12
    y = [1.7]
    left = psi_forward(translate(w, y), params)
    right = translate(psi_forward(w, params), y)
    assert np.max(np.abs(left.re - right.re)) < 1e-10
    assert np.max(np.abs(left.im - right.im)) < 1e-10


def test_extended_momentum_matches_momentum():
    """P~(w) equals P(psi(w)) since the w2^2 grad w2 term integrates to zero"""
    x = GRID.coordinates()[0]
    k = 2.0 * np.pi / GRID.lengths[0]
    w = Field(GRID, 0.2 * np.cos(k * x), 0.1 * np.sin(k * x))
    extended = extended_momentum(w)
    assert np.allclose(extended, momentum(psi_forward(w)), atol=1e-12)
    assert math.isclose(extended[0], -0.02 * math.pi, rel_tol=1e-10)
    assert np.allclose(extended_momentum(Field(GRID, w.re, np.zeros_like(w.im))), 0.0)


def test_gradient_matches_functional():
    """<(E + c.P)'(U), v> against a central difference of E + c.P"""
    print("=== Testing Hamiltonian gradient ===")
    profile = _profile(0.5)
    rng = np.random.default_rng(5)
    v = random_smooth_field(GRID, rng, amplitude=0.1)
    U = profile.U_c + v
    g = hamiltonian_gradient(U, profile.c)
    eps = 1e-5
    plus = conserved_quantity(U + eps * v, profile.c)
    minus = conserved_quantity(U - eps * v, profile.c)
    numeric = (plus - minus) / (2 * eps)
    exact = GRID.cell_volume * float(np.sum(g.re * v.re + g.im * v.im))
    print(f"  directional derivative {exact:.8f} vs {numeric:.8f}")
    assert abs(numeric - exact) <= 1e-6 * max(1.0, abs(exact))


def test_vector_field_is_J_gradient():
    rng = np.random.default_rng(8)
    U = _profile(0.5).U_c + random_smooth_field(GRID, rng, amplitude=0.05)
    rhs = traveling_frame_rhs(U, 0.5)
    g = hamiltonian_gradient(U, 0.5)
    assert np.max(np.abs(rhs.re - g.im)) < 1e-10
    assert np.max(np.abs(rhs.im + g.re)) < 1e-10


def test_transverse_extension():
    profile = transverse_extend(_profile(0.5), 8, 6.0)
    assert profile.grid.dims == (128, 8)
    assert np.allclose(profile.c, [0.5, 0.0])
    assert profile.residual < 1e-8
    assert profile.translation_axes == (0,)


def test_profile_persistence():
    profile = _profile(0.5)
    with tempfile.TemporaryDirectory() as folder:
        path = os.path.join(folder, "profile.imkf")
        save_profile(profile, path)
        loaded = load_profile(path)
    assert np.array_equal(loaded.U_c.re, profile.U_c.re)
    assert np.allclose(loaded.c, profile.c)
    assert math.isclose(loaded.residual, profile.residual)
    assert loaded.params.chi_radius == profile.params.chi_radius
    print("  profile snapshot and sidecar ✅")


if __name__ == "__main__":
    print("GP Model Tests")
    test_gray_wave_residual()
    test_supersonic_refused()
    test_dip_shrinks_with_speed()
    test_psi_round_trip_and_equivariance()
    test_extended_momentum_matches_momentum()
    test_gradient_matches_functional()
    test_vector_field_is_J_gradient()
    test_transverse_extension()
    test_profile_persistence()
    print("\nAll GP model tests completed! ✅")
