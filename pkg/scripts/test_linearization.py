#!/usr/bin/env python3
"""
Test Linearization
K, L and JL at a translated gray wave, the constant-plus-decaying split,
the stiff exponentials and the exact nonlinearity G.
"""

import math
import os
import sys

import numpy as np
import scipy.linalg

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from field_core import Field, FieldSpace, Grid, random_smooth_field
from gp_model import gray_wave
from linearization import (GPLinearization, LinOpSet, apply_JL, apply_K, apply_K_inv, apply_L,
                           estimate_operator_norm, materialize, split_constant_decaying)

GRID = Grid((128,), (32.0,))
_STATE = {}


def _model() -> GPLinearization:
    if "model" not in _STATE:
        _STATE["model"] = GPLinearization(gray_wave(GRID, 0.5))
    return _STATE["model"]


def _sample_field(seed: int, amplitude: float = 1.0) -> Field:
    return random_smooth_field(GRID, np.random.default_rng(seed), amplitude)


def _close(f: Field, g: Field, tol: float) -> bool:
    scale = max(1.0, float(np.max(np.abs(f.re))), float(np.max(np.abs(f.im))))
    return max(float(np.max(np.abs(f.re - g.re))), float(np.max(np.abs(f.im - g.im)))) <= tol * scale


def test_K_inverse():
    print("=== Testing K o K^-1 ===")
    ops = LinOpSet.at(_model().profile, y=[0.7])
    f = _sample_field(1)
    assert _close(apply_K(ops, apply_K_inv(ops, f)), f, 1e-10)
    assert _close(apply_K_inv(ops, apply_K(ops, f)), f, 1e-10)
    print("  identity to 1e-10 ✅")


def test_L_symmetric():
    print("=== Testing symmetry of L ===")
    model = _model()
    ops = LinOpSet.at(model.profile, y=[-1.1])
    f, g = _sample_field(2), _sample_field(3)
    Lf, Lg = apply_L(ops, f), apply_L(ops, g)
    left = model.space.pairing(Lf.to_vector(), g.to_vector())
    right = model.space.pairing(f.to_vector(), Lg.to_vector())
    print(f"  <Lf, g> = {left:.12f}, <f, Lg> = {right:.12f}")
    assert abs(left - right) <= 1e-10 * max(1.0, abs(left))


def test_constant_plus_decaying_split():
    ops = LinOpSet.at(_model().profile, y=[0.3])
    jl_inf, q_tilde = split_constant_decaying(ops)
    f = _sample_field(4)
    assert _close(jl_inf(f) + q_tilde(f), apply_JL(ops, f), 1e-10)


def test_kernel_directions():
    """Translation and phase directions are annihilated by L up to the profile residual"""
    print("=== Testing kernel of L ===")
    model = _model()
    for row in model.kernel_modes(None):
        residual = float(np.max(np.abs(model.apply_L(row, None))))
        print(f"  |L d| = {residual:.2e}")
        assert residual < 1e-6


def test_translated_coefficients():
    """L at y equals the translated L at 0 on translated fields"""
    model = _model()
    space = model.space
    v = _sample_field(5).to_vector()
    y = np.array([1.3])
    left = model.apply_L(space.translate(v, y), y)
    right = space.translate(model.apply_L(v, None), y)
    assert np.max(np.abs(left - right)) < 1e-8


def test_stiff_exponential():
    """Closed-form exp(h JL_inf) against a dense matrix exponential"""
    print("=== Testing stiff exponential ===")
    model = _model()
    A = materialize(model.stiff_apply, model.dim)
    v = _sample_field(6).to_vector()
    h = 0.1
    dense = scipy.linalg.expm(h * A) @ v
    closed = model.stiff_exp(v, h)
    error = float(np.max(np.abs(dense - closed)))
    print(f"  max difference {error:.2e}")
    assert error < 1e-9 * max(1.0, float(np.max(np.abs(v))))
    assert np.max(np.abs(model.stiff_exp(model.stiff_exp(v, 0.04), 0.06) - closed)) < 1e-10


def test_direct_splitting_pieces():
    """d/dh of the direct linear exponential plus the nonlinearity gives traveling_rhs"""
    model = _model()
    U = model.base_state(None) + 0.1 * _sample_field(7).to_vector()
    h = 1e-4
    linear = (model.direct_stiff_exp(U, h) - model.direct_stiff_exp(U, -h)) / (2 * h)
    total = linear + model.direct_nonstiff(U)
    rhs = model.traveling_rhs(U)
    assert np.max(np.abs(total - rhs)) <= 1e-5 * max(1.0, float(np.max(np.abs(rhs))))


def test_nonlinearity_vanishes_to_second_order():
    print("=== Testing G(0) = 0 and DG(0) = 0 ===")
    model = _model()
    y = np.zeros(1)
    g0, gj = model.nonlinearity_split(y, np.zeros(model.dim))
    assert np.max(np.abs(g0)) < 1e-14 and np.max(np.abs(gj[0])) < 1e-14
    w = _sample_field(8).to_vector()
    small = np.linalg.norm(model.nonlinearity(y, np.zeros(1), 1e-4 * w))
    double = np.linalg.norm(model.nonlinearity(y, np.zeros(1), 2e-4 * w))
    ratio = double / small
    print(f"  |G(2 eps w)| / |G(eps w)| = {ratio:.4f}")
    assert abs(ratio - 4.0) < 0.1


def test_nonlinearity_translation_invariant():
    model = _model()
    space = model.space
    w = 0.2 * _sample_field(9).to_vector()
    y, z = np.array([0.4]), np.array([0.9])
    ydot = np.array([0.3])
    left = model.nonlinearity(y + z, ydot, space.translate(w, z))
    right = space.translate(model.nonlinearity(y, ydot, w), z)
    assert np.max(np.abs(left - right)) < 1e-9


def test_w_equation_consistency():
    """With Z = K_y w held at fixed y, chart(y, K^-1 Z) moves by JL Z + G0 under the full flow"""
    print("=== Testing the w-equation against the traveling-frame field ===")
    model = _model()
    y = np.array([0.25])
    Z = 0.05 * _sample_field(10).to_vector()

    def chart_of(Zv):
        return model.chart(y, model.apply_K_inv(Zv, y))

    g0, _ = model.nonlinearity_split(y, model.apply_K_inv(Z, y))
    R = model.apply_JL(Z, y) + g0
    h = 1e-6
    moved = (chart_of(Z + h * R) - chart_of(Z - h * R)) / (2 * h)
    rhs = model.traveling_rhs(chart_of(Z))
    error = float(np.max(np.abs(moved - rhs)))
    print(f"  chart derivative vs traveling-frame field: {error:.2e}")
    assert error <= 1e-6 * max(1.0, float(np.max(np.abs(rhs))))


def test_operator_norm_helpers():
    space = FieldSpace(Grid((8,), (2.0,)))
    assert np.array_equal(materialize(lambda v: 2.0 * v, 4), 2.0 * np.eye(4))
    assert math.isclose(estimate_operator_norm(space, lambda v: 3.0 * v), 3.0, rel_tol=1e-10)


if __name__ == "__main__":
    print("Linearization Tests")
    test_K_inverse()
    test_L_symmetric()
    test_constant_plus_decaying_split()
    test_kernel_directions()
    test_translated_coefficients()
    test_stiff_exponential()
    test_direct_splitting_pieces()
    test_nonlinearity_vanishes_to_second_order()
    test_nonlinearity_translation_invariant()
    test_w_equation_consistency()
    test_operator_norm_helpers()
    print("\nAll linearization tests completed! ✅")
