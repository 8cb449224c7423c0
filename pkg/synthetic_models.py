#!/usr/bin/env python3
"""
Synthetic Models
Finite-dimensional Hamiltonian systems with planted spectra and known
invariant graphs. They plug into the same LinearizedModel interface as the
wave model so every solver can be checked against closed forms.

Coordinates are stored as (x1 | x2) halves with J(x1, x2) = (x2, -x1):
  planted:  (q, a+, r1 | p, a-, r2)
  4-dim:    (q, a+ | p, a-)
"""

import logging
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from errors import ParameterError, ShapeError
from field_core import PhaseSpace
from linearization import LinearizedModel

logger = logging.getLogger(__name__)


class EuclideanSpace(PhaseSpace):
    """R^n with the dot pairing; X1 is the Euclidean inner product"""

    def __init__(self, dim: int, translation_indices: Sequence[int] = (0,)):
        if dim % 2:
            raise ShapeError(f"phase space dimension must be even, got {dim}")
        self.dim = dim
        self.translation_indices = tuple(translation_indices)
        self.n_translation = len(self.translation_indices)

    def pair_rows(self, rows: np.ndarray, v: np.ndarray) -> np.ndarray:
        return np.atleast_2d(rows) @ v

    def riesz(self, v: np.ndarray) -> np.ndarray:
        return np.array(v, dtype=float)

    def translate(self, v: np.ndarray, y: np.ndarray) -> np.ndarray:
        # translations only move the base point; fibers are y-independent
        return np.array(v, dtype=float)

    def gradient(self, v: np.ndarray, axis: int) -> np.ndarray:
        return np.zeros_like(v)

    def x1_whiten(self, v: np.ndarray) -> np.ndarray:
        return np.array(v, dtype=float)

    def x1_unwhiten(self, z: np.ndarray) -> np.ndarray:
        return np.array(z, dtype=float)

    def random_vector(self, rng: np.random.Generator, amplitude: float = 1.0) -> np.ndarray:
        return amplitude * rng.standard_normal(self.dim)


class SyntheticHamiltonian(LinearizedModel):
    """
    H(x) = 1/2 <L x, x> + Phi(x) with Phi independent of the translation
    coordinates, so every point x + s e_q is an equilibrium when the
    transverse coordinates vanish. Chart maps are the identity (K = I).
    """

    def __init__(self, hessian: np.ndarray, potential: Optional[Callable[[np.ndarray], float]] = None,
                 potential_gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                 translation_indices: Sequence[int] = (0,), name: str = "synthetic",
                 orientation: float = 1.0, labels: Optional[List[str]] = None, info: Optional[dict] = None):
        hessian = np.asarray(hessian, dtype=float)
        if hessian.ndim != 2 or hessian.shape[0] != hessian.shape[1]:
            raise ShapeError(f"Hessian must be square, got {hessian.shape}")
        if not np.allclose(hessian, hessian.T):
            raise ParameterError("Hessian must be symmetric")
        self.hessian = hessian
        self.space = EuclideanSpace(hessian.shape[0], translation_indices)
        for j in self.space.translation_indices:
            if np.any(hessian[:, j] != 0.0):
                raise ParameterError(f"translation coordinate {j} must lie in ker L")
        self.potential = potential or (lambda x: 0.0)
        self.potential_gradient = potential_gradient or (lambda x: np.zeros_like(x))
        self.c = np.zeros(self.space.n_translation)
        self.name = name
        self.orientation = orientation
        self.labels = labels or [f"x{j}" for j in range(self.dim)]
        self.info = dict(info or {})

    def apply_L(self, v: np.ndarray, y=None) -> np.ndarray:
        return self.hessian @ v

    def apply_K(self, w: np.ndarray, y=None) -> np.ndarray:
        return np.array(w, dtype=float)

    def apply_K_inv(self, w: np.ndarray, y=None) -> np.ndarray:
        return np.array(w, dtype=float)

    def base_state(self, y=None) -> np.ndarray:
        x = np.zeros(self.dim)
        if y is not None:
            x[list(self.space.translation_indices)] = np.atleast_1d(y)
        return x

    def base_w(self, y=None) -> np.ndarray:
        return self.base_state(y)

    def translation_modes(self, y=None) -> np.ndarray:
        modes = np.zeros((self.n_translation, self.dim))
        for row, j in enumerate(self.space.translation_indices):
            modes[row, j] = 1.0
        return modes

    def chart(self, y, w: np.ndarray) -> np.ndarray:
        return self.base_state(y) + w

    def w_coordinates(self, U: np.ndarray) -> np.ndarray:
        return np.array(U, dtype=float)

    def nonlinearity_split(self, y, w: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
        g0 = self.apply_J(self.potential_gradient(self.chart(y, w)))
        return g0, [np.zeros(self.dim) for _ in range(self.n_translation)]

    def traveling_rhs(self, U: np.ndarray) -> np.ndarray:
        return self.apply_J(self.hessian @ U + self.potential_gradient(U))

    def conserved(self, U: np.ndarray) -> float:
        return float(0.5 * U @ (self.hessian @ U) + self.potential(U))

    def describe(self) -> dict:
        info = super().describe()
        info.update({"labels": self.labels, "orientation": self.orientation})
        info.update(self.info)
        return info


def planted_system(lam: float = 1.0, omega: float = 2.0, beta: float = 0.0) -> SyntheticHamiltonian:
    """
    6-dim system with spectrum {+-lam, +-i omega, 0, 0}: a translation q,
    its momentum p (Jordan partner), a saddle (a+, a-) and a rotation (r1, r2).
    beta adds the cubic coupling -beta (a+)^3 / 3.
    """
    if not lam > 0 or not omega > 0:
        raise ParameterError(f"lam and omega must be positive, got {lam}, {omega}")
    q, ap, r1, p, am, r2 = range(6)
    hessian = np.zeros((6, 6))
    hessian[p, p] = 1.0
    hessian[ap, am] = hessian[am, ap] = lam
    hessian[r1, r1] = hessian[r2, r2] = omega

    def potential(x):
        return -beta * x[ap] ** 3 / 3.0

    def potential_gradient(x):
        g = np.zeros_like(x)
        g[ap] = -beta * x[ap] ** 2
        return g

    return SyntheticHamiltonian(hessian, potential, potential_gradient, (q,), name="planted",
                                labels=["q", "a+", "r1", "p", "a-", "r2"],
                                info={"lam": lam, "omega": omega, "beta": beta})


def lp_test_system(lam: float = 1.0) -> SyntheticHamiltonian:
    """
    da+/dt = lam a+, da-/dt = -lam a- + (a+)^2 plus a free translation pair.
    Unstable graph a- = (a+)^2 / (3 lam); stable graph a+ = 0.
    """
    if not lam > 0:
        raise ParameterError(f"lam must be positive, got {lam}")
    q, ap, p, am = range(4)
    hessian = np.zeros((4, 4))
    hessian[p, p] = 1.0
    hessian[ap, am] = hessian[am, ap] = lam

    def potential(x):
        return -x[ap] ** 3 / 3.0

    def potential_gradient(x):
        g = np.zeros_like(x)
        g[ap] = -x[ap] ** 2
        return g

    return SyntheticHamiltonian(hessian, potential, potential_gradient, (q,), name="lp-test",
                                labels=["q", "a+", "p", "a-"], info={"lam": lam})


def lp_oracle(lam: float, a_plus):
    """Exact unstable graph of lp_test_system and its derivative"""
    a_plus = np.asarray(a_plus, dtype=float)
    return a_plus ** 2 / (3.0 * lam), 2.0 * a_plus / (3.0 * lam)


def center_test_system(lam: float = 1.0, kappa: float = 1.0) -> SyntheticHamiltonian:
    """
    Phi = kappa p^2 (a+ + a-) / 2 couples the center momentum p to the saddle.
    p is conserved and a+ = a- = -kappa p^2 / (2 lam) is invariant, so all
    three graphs equal that value.
    """
    if not lam > 0:
        raise ParameterError(f"lam must be positive, got {lam}")
    q, ap, p, am = range(4)
    hessian = np.zeros((4, 4))
    hessian[p, p] = 1.0
    hessian[ap, am] = hessian[am, ap] = lam

    def potential(x):
        return 0.5 * kappa * x[p] ** 2 * (x[ap] + x[am])

    def potential_gradient(x):
        g = np.zeros_like(x)
        g[p] = kappa * x[p] * (x[ap] + x[am])
        g[ap] = g[am] = 0.5 * kappa * x[p] ** 2
        return g

    return SyntheticHamiltonian(hessian, potential, potential_gradient, (q,), name="center-test",
                                labels=["q", "a+", "p", "a-"], info={"lam": lam, "kappa": kappa})


def center_oracle(lam: float, kappa: float, p):
    return -kappa * np.asarray(p, dtype=float) ** 2 / (2.0 * lam)


def linear_saddle(lam: float = 1.0) -> SyntheticHamiltonian:
    """lp_test_system without the quadratic forcing; every graph is zero"""
    if not lam > 0:
        raise ParameterError(f"lam must be positive, got {lam}")
    hessian = np.zeros((4, 4))
    hessian[2, 2] = 1.0
    hessian[1, 3] = hessian[3, 1] = lam
    return SyntheticHamiltonian(hessian, None, None, (0,), name="linear-saddle",
                                labels=["q", "a+", "p", "a-"], info={"lam": lam})


def reverse_time(model: SyntheticHamiltonian) -> SyntheticHamiltonian:
    """Same Hamiltonian with J -> -J, so orbits run backwards"""
    reversed_model = SyntheticHamiltonian(model.hessian, model.potential, model.potential_gradient,
                                          model.space.translation_indices, name=f"{model.name}-reversed",
                                          orientation=-model.orientation, labels=model.labels,
                                          info=model.info)
    logger.debug(f"Reversed time orientation of {model.name}")
    return reversed_model


MODEL_FACTORIES = {
    "planted": planted_system,
    "lp-test": lp_test_system,
    "center-test": center_test_system,
    "linear-saddle": linear_saddle,
}


def build_synthetic(name: str, **kwargs) -> SyntheticHamiltonian:
    if name not in MODEL_FACTORIES:
        raise ParameterError(f"unknown synthetic model '{name}', choose from {sorted(MODEL_FACTORIES)}")
    try:
        return MODEL_FACTORIES[name](**kwargs)
    except TypeError as exc:
        raise ParameterError(f"bad options for synthetic model '{name}': {exc}") from exc
