#!/usr/bin/env python3
"""
Linearization
Linearized objects at a translated traveling wave: the symplectic form J,
the Hessian L_{c,y}, the chart derivative K_{c,y} and its inverse, and the
split of JL_{c,y} into a constant-coefficient part plus a decaying part.
"""

import logging
import threading
from abc import ABC, abstractmethod
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np
import scipy.linalg

from errors import ShapeError
from field_core import (
    Field, FieldSpace, PhaseSpace, _tables, directional_derivative, fft, filter_array, ifft,
    spectral_derivative, spectral_laplacian, translate_array,
)
from gp_model import (
    WaveProfile, apply_hessian, conserved_quantity, frame_linear_symbol, frame_nonlinearity,
    hessian_coefficients, psi_forward, psi_inverse, traveling_frame_rhs,
)

logger = logging.getLogger(__name__)

# coefficient cache keys round y to this many digits
Y_KEY_DIGITS = 12
Y_CACHE_SIZE = 64


class LinearizedModel(ABC):
    """
    Hamiltonian system linearized along its traveling-wave manifold.
    States are flat vectors of space; the first and second halves are the
    two canonical components so J(a, b) = (b, -a).
    """

    space: PhaseSpace
    c: np.ndarray
    orientation: float = 1.0
    name: str = "model"

    @property
    def dim(self) -> int:
        return self.space.dim

    @property
    def n_translation(self) -> int:
        return self.space.n_translation

    def apply_J(self, v: np.ndarray) -> np.ndarray:
        half = v.shape[0] // 2
        return self.orientation * np.concatenate([v[half:], -v[:half]])

    @abstractmethod
    def apply_L(self, v: np.ndarray, y: np.ndarray) -> np.ndarray:
        pass

    def apply_JL(self, v: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.apply_J(self.apply_L(v, y))

    @abstractmethod
    def apply_K(self, w: np.ndarray, y: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def apply_K_inv(self, w: np.ndarray, y: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def base_state(self, y: np.ndarray) -> np.ndarray:
        """Physical state of the translated wave"""

    @abstractmethod
    def base_w(self, y: np.ndarray) -> np.ndarray:
        """Translated wave in w-coordinates"""

    @abstractmethod
    def translation_modes(self, y: np.ndarray) -> np.ndarray:
        """Rows d_j of the translated wave, one per translation axis"""

    def kernel_modes(self, y: np.ndarray) -> np.ndarray:
        """Analytically known kernel directions of L (translations first)"""
        return self.translation_modes(y)

    @abstractmethod
    def chart(self, y: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Physical state psi(w_c(. + y) + w)"""

    @abstractmethod
    def w_coordinates(self, U: np.ndarray) -> np.ndarray:
        """psi^{-1}(U)"""

    @abstractmethod
    def nonlinearity_split(self, y: np.ndarray, w: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
        """G = G0 + sum_j ydot_j G_j; returns (G0, [G_j])"""

    def nonlinearity(self, y: np.ndarray, ydot: np.ndarray, w: np.ndarray) -> np.ndarray:
        g0, gj = self.nonlinearity_split(y, w)
        for yd, g in zip(np.atleast_1d(ydot), gj):
            g0 = g0 + yd * g
        return g0

    @abstractmethod
    def traveling_rhs(self, U: np.ndarray) -> np.ndarray:
        """Full traveling-frame vector field at a physical state"""

    @abstractmethod
    def conserved(self, U: np.ndarray) -> float:
        """Conserved functional (E + c.P for the wave model)"""

    def stiff_apply(self, v: np.ndarray) -> np.ndarray:
        """Constant-coefficient part JL_inf"""
        return np.zeros_like(v)

    def stiff_exp(self, v: np.ndarray, h: float) -> np.ndarray:
        """exp(h JL_inf) v"""
        return v

    def direct_stiff_exp(self, U: np.ndarray, h: float) -> np.ndarray:
        """Exponential of the linear part of traveling_rhs"""
        return U

    def direct_nonstiff(self, U: np.ndarray) -> np.ndarray:
        return self.traveling_rhs(U)

    def describe(self) -> dict:
        return {"name": self.name, "dim": self.dim, "n_translation": self.n_translation,
                "c": np.atleast_1d(self.c).tolist()}


@dataclass(frozen=True)
class _Coefficients:
    u: np.ndarray
    v: np.ndarray
    hessian: Tuple[np.ndarray, np.ndarray, np.ndarray]
    grad_v: List[np.ndarray]
    w_base: np.ndarray


class GPLinearization(LinearizedModel):
    """Gross-Pitaevskii wave model linearized at a WaveProfile"""

    name = "gross-pitaevskii"

    def __init__(self, profile: WaveProfile):
        self.profile = profile
        self.grid = profile.grid
        self.params = profile.params
        self.c = np.asarray(profile.c, dtype=float)
        self.space = FieldSpace(self.grid, profile.translation_axes)
        self.chi = self.params.chi(self.grid)
        self._cache: "OrderedDict[tuple, _Coefficients]" = OrderedDict()
        self._cache_lock = threading.Lock()
        self._omega, self._alpha, self._k2 = self._stiff_tables()
        self._direct_symbol = frame_linear_symbol(self.grid, self.c)

    def _split(self, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        n = self.grid.size
        if v.shape != (2 * n,):
            raise ShapeError(f"state of shape {v.shape}, expected ({2 * n},)")
        return v[:n].reshape(self.grid.shape), v[n:].reshape(self.grid.shape)

    def _join(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return np.concatenate([a.ravel(), b.ravel()])

    def _full_y(self, y) -> np.ndarray:
        y_full = np.zeros(self.grid.spatial_dim)
        if y is not None:
            y_full[list(self.space.translation_axes)] = np.atleast_1d(y)
        return y_full

    def coefficients(self, y) -> _Coefficients:
        y_full = self._full_y(y)
        key = tuple(np.round(y_full, Y_KEY_DIGITS))
        with self._cache_lock:
            hit = self._cache.get(key)
            if hit is not None:
                self._cache.move_to_end(key)
                return hit
        u = translate_array(self.profile.U_c.re, self.grid, y_full)
        v = translate_array(self.profile.U_c.im, self.grid, y_full)
        grad_v = [spectral_derivative(v, self.grid, ax) for ax in self.space.translation_axes]
        w_base = psi_inverse(Field(self.grid, u, v), self.params).to_vector()
        entry = _Coefficients(u=u, v=v, hessian=hessian_coefficients(u, v), grad_v=grad_v, w_base=w_base)
        with self._cache_lock:
            self._cache[key] = entry
            if len(self._cache) > Y_CACHE_SIZE:
                self._cache.popitem(last=False)
        return entry

    def apply_L(self, v: np.ndarray, y=None) -> np.ndarray:
        f1, f2 = self._split(v)
        o1, o2 = apply_hessian(self.coefficients(y).hessian, self.grid, self.c, f1, f2)
        return self._join(o1, o2)

    def apply_K(self, w: np.ndarray, y=None) -> np.ndarray:
        w1, w2 = self._split(w)
        vc = self.coefficients(y).v
        return self._join(w1 - filter_array(vc * w2, self.chi), w2)

    def apply_K_inv(self, w: np.ndarray, y=None) -> np.ndarray:
        w1, w2 = self._split(w)
        vc = self.coefficients(y).v
        return self._join(w1 + filter_array(vc * w2, self.chi), w2)

    def base_state(self, y=None) -> np.ndarray:
        co = self.coefficients(y)
        return self._join(co.u, co.v)

    def base_w(self, y=None) -> np.ndarray:
        return self.coefficients(y).w_base

    def translation_modes(self, y=None) -> np.ndarray:
        co = self.coefficients(y)
        return np.array([self._join(spectral_derivative(co.u, self.grid, ax), gv)
                         for ax, gv in zip(self.space.translation_axes, co.grad_v)])

    def kernel_modes(self, y=None) -> np.ndarray:
        co = self.coefficients(y)
        phase = self._join(-co.v, co.u)
        return np.vstack([self.translation_modes(y), phase[None, :]])

    def chart(self, y, w: np.ndarray) -> np.ndarray:
        total = Field.from_vector(self.grid, self.base_w(y) + w)
        return psi_forward(total, self.params).to_vector()

    def w_coordinates(self, U: np.ndarray) -> np.ndarray:
        return psi_inverse(Field.from_vector(self.grid, U), self.params).to_vector()

    def nonlinearity_split(self, y, w: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
        """Closed-form remainder G of the w-equation; exact, no differencing"""
        co = self.coefficients(y)
        u, v = co.u, co.v
        w1, w2 = self._split(w)
        z1 = w1 - filter_array(v * w2, self.chi)
        s = 0.5 * filter_array(w2 * w2, self.chi)
        U1 = u + z1 - s
        U2 = v + w2
        mod2 = U1 * U1 + U2 * U2
        m = mod2 - u * u - v * v
        uz = u * z1 + v * w2
        g2 = -(m - 2.0 * uz) * u - m * z1 - (1.0 - mod2) * s - spectral_laplacian(s, self.grid)
        g11 = (m - 2.0 * uz) * v + m * w2 - directional_derivative(s, self.grid, self.c)
        lz1, _ = apply_hessian(co.hessian, self.grid, self.c, z1, w2)
        g12 = filter_array(w2 * (g2 - lz1), self.chi)
        g0 = self._join(g11 + g12, g2)
        zeros = np.zeros(self.grid.shape)
        gj = [self._join(-filter_array(w2 * gv, self.chi), zeros) for gv in co.grad_v]
        return g0, gj

    def traveling_rhs(self, U: np.ndarray) -> np.ndarray:
        return traveling_frame_rhs(Field.from_vector(self.grid, U), self.c).to_vector()

    def conserved(self, U: np.ndarray) -> float:
        return conserved_quantity(Field.from_vector(self.grid, U), self.c)

    def _stiff_tables(self):
        tables = _tables(self.grid)
        k2 = tables.k_squared
        alpha = sum(cj * (g / 1j).real for cj, g in zip(self.c, tables.grad))
        omega = np.sqrt(k2 * (k2 + 2.0))
        return omega, alpha, k2

    def stiff_apply(self, v: np.ndarray) -> np.ndarray:
        """JL_inf = J [[2 - Delta, -c.grad], [c.grad, -Delta]]"""
        f1, f2 = self._split(v)
        a, b = fft(f1), fft(f2)
        ia = 1j * self._alpha
        o1 = ia * a + self._k2 * b
        o2 = -(self._k2 + 2.0) * a + ia * b
        return self._join(ifft(o1).real, ifft(o2).real)

    def stiff_exp(self, v: np.ndarray, h: float) -> np.ndarray:
        """Closed form e^{i alpha h}(cos(wh) I + sin(wh)/w C) per Fourier mode"""
        f1, f2 = self._split(v)
        a, b = fft(f1), fft(f2)
        wh = self._omega * h
        cos = np.cos(wh)
        sinc = h * np.sinc(wh / np.pi)
        shift = np.exp(1j * self._alpha * h)
        o1 = shift * (cos * a + sinc * self._k2 * b)
        o2 = shift * (-sinc * (self._k2 + 2.0) * a + cos * b)
        return self._join(ifft(o1).real, ifft(o2).real)

    def direct_stiff_exp(self, U: np.ndarray, h: float) -> np.ndarray:
        a, b = self._split(U)
        z = ifft(np.exp(h * self._direct_symbol) * fft(a + 1j * b))
        return self._join(z.real, z.imag)

    def direct_nonstiff(self, U: np.ndarray) -> np.ndarray:
        a, b = self._split(U)
        z = frame_nonlinearity(a + 1j * b)
        return self._join(z.real, z.imag)

    def describe(self) -> dict:
        info = super().describe()
        info.update({"grid": {"dims": list(self.grid.dims), "lengths": list(self.grid.lengths)},
                     "residual": self.profile.residual, "rho": self.profile.rho})
        return info


@dataclass(frozen=True, eq=False)
class LinOpSet:
    """Linearized operators of a wave model at base translation y, acting on Fields"""
    model: GPLinearization
    y: np.ndarray

    @classmethod
    def at(cls, profile: WaveProfile, y=None) -> "LinOpSet":
        model = GPLinearization(profile)
        y = np.zeros(model.n_translation) if y is None else np.atleast_1d(np.asarray(y, dtype=float))
        return cls(model, y)

    def _wrap(self, op: Callable) -> Callable[[Field], Field]:
        grid = self.model.grid

        def apply(f: Field) -> Field:
            if f.grid != grid:
                raise ShapeError("field grid does not match the linearization grid")
            return Field.from_vector(grid, op(f.to_vector(), self.y))

        return apply

    @property
    def K(self) -> Callable[[Field], Field]:
        return self._wrap(self.model.apply_K)

    @property
    def K_inv(self) -> Callable[[Field], Field]:
        return self._wrap(self.model.apply_K_inv)

    @property
    def L(self) -> Callable[[Field], Field]:
        return self._wrap(self.model.apply_L)

    @property
    def JL(self) -> Callable[[Field], Field]:
        return self._wrap(self.model.apply_JL)


def apply_K(ops: LinOpSet, w: Field) -> Field:
    """(w1 - chi(D)(v_c(. + y) w2), w2)"""
    return ops.K(w)


def apply_K_inv(ops: LinOpSet, w: Field) -> Field:
    return ops.K_inv(w)


def apply_L(ops: LinOpSet, f: Field) -> Field:
    return ops.L(f)


def apply_JL(ops: LinOpSet, f: Field) -> Field:
    return ops.JL(f)


def q_tilde_coefficients(ops: LinOpSet) -> np.ndarray:
    """Pointwise 2x2 coefficient matrix of JL - JL_inf, shape (2, 2) + grid shape"""
    co = ops.model.coefficients(ops.y)
    u, v = co.u, co.v
    return np.array([[2.0 * u * v, u * u + 3.0 * v * v - 1.0],
                     [3.0 - 3.0 * u * u - v * v, -2.0 * u * v]])


def split_constant_decaying(ops: LinOpSet) -> Tuple[Callable[[Field], Field], Callable[[Field], Field]]:
    """Return (JL_inf, Q~(y)) handles whose sum is JL_{c,y}"""
    grid = ops.model.grid
    coefficients = q_tilde_coefficients(ops)

    def jl_inf(f: Field) -> Field:
        return Field.from_vector(grid, ops.model.stiff_apply(f.to_vector()))

    def q_tilde(f: Field) -> Field:
        return Field(grid,
                     coefficients[0, 0] * f.re + coefficients[0, 1] * f.im,
                     coefficients[1, 0] * f.re + coefficients[1, 1] * f.im)

    return jl_inf, q_tilde


def materialize(apply: Callable[[np.ndarray], np.ndarray], dim: int) -> np.ndarray:
    """Dense matrix of a linear map given as a vector function"""
    columns = np.empty((dim, dim))
    unit = np.zeros(dim)
    for j in range(dim):
        unit[j] = 1.0
        columns[:, j] = apply(unit)
        unit[j] = 0.0
    return columns


def estimate_operator_norm(space: PhaseSpace, apply: Callable[[np.ndarray], np.ndarray]) -> float:
    """X1 -> X1 operator norm from the dense whitened matrix"""
    matrix = materialize(lambda z: space.x1_whiten(apply(space.x1_unwhiten(z))), space.dim)
    return float(scipy.linalg.norm(matrix, 2))
