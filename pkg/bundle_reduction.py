#!/usr/bin/env python3
"""
Bundle Reduction
Bundle coordinates (y, a^d1, a^d2, a^+, a^-, V^e) near the traveling-wave
manifold: the chart and its inverse, the second fundamental form, the
reduced vector field and its cut-off modification.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.optimize import root

from errors import ConvergenceError, OutOfChartError, ParameterError, ShapeError
from field_core import qweighted_norm
from spectral_decomposition import Decomposition, assemble_Ae, d_y_project, project

logger = logging.getLogger(__name__)

COEFFICIENT_TAGS = ("d1", "d2", "+", "-")
YDOT_TOL = 1e-12
YDOT_MAX_ITER = 50
GAUGE_STEP = 1e-6


@dataclass(frozen=True, eq=False)
class BundlePoint:
    """Point (or time derivative) in bundle coordinates; Ve lies in X^e_y"""
    y: np.ndarray
    a_d1: np.ndarray
    a_d2: np.ndarray
    a_plus: np.ndarray
    a_minus: np.ndarray
    Ve: np.ndarray

    def __post_init__(self):
        for name in ("y", "a_d1", "a_d2", "a_plus", "a_minus", "Ve"):
            value = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if not np.all(np.isfinite(value)):
                raise ShapeError(f"non-finite entries in {name}")
            object.__setattr__(self, name, value)

    @classmethod
    def origin(cls, dec: Decomposition, y=None) -> "BundlePoint":
        dims = dec.dims
        y = np.zeros(dec.n_translation) if y is None else y
        return cls(y, np.zeros(dims["d1"]), np.zeros(dims["d2"]), np.zeros(dims["+"]),
                   np.zeros(dims["-"]), np.zeros(dec.space.dim))

    @classmethod
    def from_coefficients(cls, dec: Decomposition, y, a: np.ndarray, Ve: np.ndarray) -> "BundlePoint":
        parts = split_coefficients(dec, a)
        return cls(y, parts["d1"], parts["d2"], parts["+"], parts["-"], Ve)

    @property
    def a(self) -> np.ndarray:
        return np.concatenate([self.a_d1, self.a_d2, self.a_plus, self.a_minus])

    def block(self, tag: str) -> np.ndarray:
        return {"d1": self.a_d1, "d2": self.a_d2, "+": self.a_plus, "-": self.a_minus}[tag]

    def shifted(self, space, z) -> "BundlePoint":
        z = np.atleast_1d(np.asarray(z, dtype=float))
        return replace(self, y=self.y + z, Ve=space.translate(self.Ve, z))

    def pack(self) -> np.ndarray:
        return np.concatenate([self.y, self.a, self.Ve])

    @classmethod
    def unpack(cls, dec: Decomposition, state: np.ndarray) -> "BundlePoint":
        nT = dec.n_translation
        k = dec.rank - nT
        if state.shape != (nT + k + dec.space.dim,):
            raise ShapeError(f"packed bundle state of shape {state.shape}")
        return cls.from_coefficients(dec, state[:nT], state[nT:nT + k], state[nT + k:])


def split_coefficients(dec: Decomposition, a: np.ndarray) -> Dict[str, np.ndarray]:
    a = np.atleast_1d(np.asarray(a, dtype=float))
    dims = dec.dims
    expected = sum(dims[t] for t in COEFFICIENT_TAGS)
    if a.shape != (expected,):
        raise ShapeError(f"coefficient vector of shape {a.shape}, expected ({expected},)")
    out, start = {}, 0
    for tag in COEFFICIENT_TAGS:
        out[tag] = a[start:start + dims[tag]]
        start += dims[tag]
    return out


def coefficient_slices(dec: Decomposition) -> Dict[str, slice]:
    """Slices of the non-translation blocks inside BundlePoint.a"""
    nT = dec.n_translation
    return {tag: slice(s.start - nT, s.stop - nT) for tag, s in dec.slices.items() if tag != "T"}


@dataclass(frozen=True)
class CutoffParams:
    """Cut-off scale delta, Lipschitz bound mu, anisotropy Q and rate margin eta"""
    delta: float = 1e-2
    mu: float = 0.1
    Q: float = 4.0
    eta: float = 0.25

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ParameterError(f"delta must lie in (0, 1), got {self.delta}")
        if not self.Q > 1:
            raise ParameterError(f"Q must exceed 1, got {self.Q}")
        if not 0 < self.mu < 0.2:
            raise ParameterError(f"mu must lie in (0, 1/5), got {self.mu}")
        if not 0 < self.eta < 1:
            raise ParameterError(f"eta must lie in (0, 1), got {self.eta}")

    @classmethod
    def for_decomposition(cls, dec: Decomposition, **overrides) -> "CutoffParams":
        if dec.lam <= 0 and "eta" not in overrides:
            raise ParameterError("decomposition has no unstable rate; pass eta explicitly")
        values = {"eta": min(0.5, dec.lam / 4.0)}
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def horizon(self, lam: float) -> float:
        """Default Lyapunov-Perron horizon 10 / (lambda - eta)"""
        return 10.0 / (lam - self.eta)


def embed(dec: Decomposition, p: BundlePoint) -> np.ndarray:
    """w = K_y^{-1}(sum a^alpha V^alpha(. + y) + Ve)"""
    return dec.model.apply_K_inv(_fiber_sum(dec, p.y, p.a, p.Ve), p.y)


def _fiber_sum(dec: Decomposition, y, a: np.ndarray, Ve: np.ndarray) -> np.ndarray:
    frame = dec.frame(y)
    nT = dec.n_translation
    if a.size == 0:
        return np.array(Ve, dtype=float)
    return a @ frame.V[nT:] + Ve


def chart(dec: Decomposition, p: BundlePoint) -> np.ndarray:
    """Physical state psi(w_c(. + y) + w)"""
    return dec.model.chart(p.y, embed(dec, p))


def transverse_magnitude(a: np.ndarray, v_norm: float) -> float:
    """|a^d1| + |a^d2| + |a^+| + |a^-| + ||V||_X1 with l1 block norms"""
    return float(np.sum(np.abs(a)) + v_norm)


def chart_inverse(dec: Decomposition, U: np.ndarray, y_guess=None, tol: float = 1e-10,
                  radius: Optional[float] = None) -> BundlePoint:
    """
    Solve <zeta^T(. + y), K_y(psi^{-1}(U) - w_c(. + y))> = 0 for y, then read
    the remaining coordinates through the projections.
    """
    model = dec.model
    nT = dec.n_translation
    y0 = np.zeros(nT) if y_guess is None else np.atleast_1d(np.asarray(y_guess, dtype=float))
    w_full = model.w_coordinates(U)
    t_rows = dec.slices["T"]

    def displacement(y):
        return model.apply_K(w_full - model.base_w(y), y)

    def gauge(y):
        return dec.space.pair_rows(dec.frame(y).Z[t_rows], displacement(y))

    def gauge_jacobian(y):
        # absolute step, independent of |y|
        columns = []
        for j in range(nT):
            step = np.zeros(nT)
            step[j] = GAUGE_STEP
            columns.append((gauge(y + step) - gauge(y - step)) / (2.0 * GAUGE_STEP))
        return np.column_stack(columns)

    if nT:
        solution = root(gauge, y0, jac=gauge_jacobian, method="hybr", options={"xtol": 1e-14})
        y, message = np.atleast_1d(solution.x), solution.message
        residual = float(np.max(np.abs(gauge(y))))
    else:
        y, message, residual = y0, "no translation directions", 0.0
    scale = max(1.0, dec.space.x1_norm(displacement(y)))
    if not np.all(np.isfinite(y)) or residual > tol * scale:
        raise OutOfChartError(f"translation gauge unresolved: residual {residual:.2e} ({message})")

    Z = displacement(y)
    coefficients = dec.coordinates(y, Z)
    Ve = Z - coefficients @ dec.frame(y).V
    p = BundlePoint.from_coefficients(dec, y, coefficients[nT:], Ve)
    if radius is not None:
        size = transverse_magnitude(p.a, dec.space.x1_norm(Ve))
        if size > radius:
            raise OutOfChartError(f"transverse magnitude {size:.3e} outside the chart ball {radius:.3e}")
    return p


def second_fundamental_form(dec: Decomposition, y, z, V: np.ndarray) -> np.ndarray:
    """F(y)(z, V) = D_y Pi^e(z)(Pi^e V - (I - Pi^e) V)"""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if not np.any(z):
        return np.zeros_like(V)
    ve = project(dec, y, "e", V)
    return d_y_project(dec, y, "e", z, 2.0 * ve - V)


def nonlinearity_G(dec: Decomposition, y, ydot, w: np.ndarray) -> np.ndarray:
    """Remainder G(y, ydot, w) of the w-equation, affine in ydot"""
    return dec.model.nonlinearity(np.atleast_1d(y), np.atleast_1d(ydot), w)


@dataclass
class ReducedPieces:
    ydot: np.ndarray
    adot: np.ndarray
    Vedot: np.ndarray
    residual: np.ndarray
    iterations: int


def _solve_ydot(r: np.ndarray, coupling: np.ndarray) -> Tuple[np.ndarray, int]:
    """Fixed point ydot = r - coupling ydot, direct solve as fallback"""
    ydot = np.array(r, dtype=float)
    for iteration in range(1, YDOT_MAX_ITER + 1):
        updated = r - coupling @ ydot
        change = float(np.max(np.abs(updated - ydot))) if ydot.size else 0.0
        ydot = updated
        if change <= YDOT_TOL * max(1.0, float(np.max(np.abs(ydot))) if ydot.size else 1.0):
            return ydot, iteration
    system = np.eye(r.size) + coupling
    if not np.all(np.isfinite(system)) or np.linalg.cond(system) > 1e12:
        raise ConvergenceError("implicit translation-speed equation is singular")
    logger.debug("Translation-speed fixed point stalled; using direct solve")
    return np.linalg.solve(system, r), YDOT_MAX_ITER


def reduced_pieces(dec: Decomposition, y, a: np.ndarray, Ve: np.ndarray) -> ReducedPieces:
    """
    Exact reduced right side at a fiber point. With Z = K_y w and
    R = JL_y Z + G(y, ydot, w):
      (I + B - C) ydot = <zeta^T, JL Z + G0>
      da/dt = <zeta, R - sum a^b ydot.grad V^b> + <ydot.grad zeta, Ve>
      dVe/dt = R - ydot.V^T - sum (da^b/dt V^b + a^b ydot.grad V^b)
    """
    model = dec.model
    space = dec.space
    frame = dec.frame(y)
    nT = dec.n_translation
    y = frame.y
    Vt, Vn = frame.V[:nT], frame.V[nT:]
    Zt, Zn = frame.Z[:nT], frame.Z[nT:]

    Z = _fiber_sum(dec, y, a, Ve)
    w = model.apply_K_inv(Z, y)
    g0, gj = model.nonlinearity_split(y, w)
    base = model.apply_JL(Z, y) + g0

    grad_sum = [a @ dv[nT:] if a.size else np.zeros(space.dim) for dv in frame.dV]
    r = space.pair_rows(Zt, base)
    coupling = np.zeros((nT, nT))
    for j in range(nT):
        coupling[:, j] = (space.pair_rows(Zt, grad_sum[j]) - space.pair_rows(frame.dZ[j][:nT], Ve)
                          - space.pair_rows(Zt, gj[j]))
    ydot, iterations = _solve_ydot(r, coupling)

    R = base + sum(yd * g for yd, g in zip(ydot, gj)) if nT else base
    moving = sum(yd * gs for yd, gs in zip(ydot, grad_sum)) if nT else np.zeros(space.dim)
    adot = space.pair_rows(Zn, R - moving)
    for j in range(nT):
        adot = adot + ydot[j] * space.pair_rows(frame.dZ[j][nT:], Ve)
    Vedot = R - (ydot @ Vt if nT else 0.0) - moving
    if adot.size:
        Vedot = Vedot - adot @ Vn
    return ReducedPieces(ydot=ydot, adot=adot, Vedot=Vedot, residual=R, iterations=iterations)


def reduced_rhs(dec: Decomposition, p: BundlePoint) -> BundlePoint:
    """Time derivative of the bundle coordinates along the exact flow"""
    pieces = reduced_pieces(dec, p.y, p.a, p.Ve)
    return BundlePoint.from_coefficients(dec, pieces.ydot, pieces.adot, pieces.Vedot)


def reduced_vector_field(dec: Decomposition):
    """Packed-state version of reduced_rhs for the integrators"""

    def rhs(state: np.ndarray) -> np.ndarray:
        return reduced_rhs(dec, BundlePoint.unpack(dec, state)).pack()

    return rhs


def gamma(x: float) -> float:
    """Quintic smoothstep: 1 on |x| <= 1, 0 on |x| >= 3"""
    x = abs(x)
    if x <= 1.0:
        return 1.0
    if x >= 3.0:
        return 0.0
    t = 0.5 * (x - 1.0)
    return 1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)


def branch_label(dec: Decomposition) -> str:
    dims = dec.dims
    return f"d1={dims['d1']},d2={dims['d2']},d={dims['+']},nT={dims['T']}"


@dataclass
class CutoffEvaluation:
    ydot: np.ndarray
    adot: np.ndarray
    Vdot: np.ndarray
    gamma: float
    magnitude: float
    hat_g: Dict[str, np.ndarray] = field(default_factory=dict)
    branch: str = ""

    def pack(self) -> np.ndarray:
        return np.concatenate([self.ydot, self.adot, self.Vdot])


class CutoffSystem:
    """
    Cut-off modified system on the extended space: y, every coefficient block
    and a V that need not lie in the fiber. Inside the delta/3 ball it agrees
    with the reduced flow; outside the 3 delta ball only the diagonal linear
    dynamics remain.
    """

    def __init__(self, dec: Decomposition, params: CutoffParams):
        self.dec = dec
        self.params = params
        self.slices = coefficient_slices(dec)
        self.branch = branch_label(dec)
        self.blocks = {tag: dec.block(tag, tag) for tag in COEFFICIENT_TAGS}
        self._Ae_cache: Dict[tuple, object] = {}
        logger.debug(f"Cut-off system on branch {self.branch} with delta {params.delta}")

    def A_e(self, y) -> callable:
        key = tuple(np.round(np.atleast_1d(y), 12))
        apply = self._Ae_cache.get(key)
        if apply is None:
            apply = assemble_Ae(self.dec, y, norm_estimate=False)[0]
            if len(self._Ae_cache) > 64:
                self._Ae_cache.clear()
            self._Ae_cache[key] = apply
        return apply

    def diagonal(self, a: np.ndarray) -> np.ndarray:
        out = np.zeros_like(a)
        for tag, sl in self.slices.items():
            if sl.stop > sl.start:
                out[sl] = self.blocks[tag] @ a[sl]
        return out

    def magnitude(self, a: np.ndarray, V: np.ndarray) -> float:
        return transverse_magnitude(a, self.dec.space.x1_norm(V))

    def evaluate(self, y, a: np.ndarray, V: np.ndarray) -> CutoffEvaluation:
        dec = self.dec
        y = np.atleast_1d(np.asarray(y, dtype=float))
        s = self.magnitude(a, V)
        g = gamma(3.0 * s / self.params.delta)
        linear_a = self.diagonal(a)
        A_e = self.A_e(y)
        linear_V = A_e(V)
        if g == 0.0:
            zeros_y = np.zeros(dec.n_translation)
            hat = {tag: np.zeros(sl.stop - sl.start) for tag, sl in self.slices.items()}
            hat["T"] = zeros_y
            return CutoffEvaluation(zeros_y, linear_a, linear_V, 0.0, s, hat, self.branch)

        Ve = project(dec, y, "e", V)
        pieces = reduced_pieces(dec, y, a, Ve)
        ydot = g * pieces.ydot
        hat_a = g * (pieces.adot - linear_a)
        correction = pieces.Vedot - A_e(Ve) - second_fundamental_form(dec, y, pieces.ydot, Ve)
        Vdot = linear_V + second_fundamental_form(dec, y, ydot, V) + g * correction
        hat = {tag: hat_a[sl] for tag, sl in self.slices.items()}
        hat["T"] = ydot
        return CutoffEvaluation(ydot, linear_a + hat_a, Vdot, g, s, hat, self.branch)

    def vector_field(self):
        """Packed (y, a, V) right side"""
        nT = self.dec.n_translation
        k = self.dec.rank - nT

        def rhs(state: np.ndarray) -> np.ndarray:
            return self.evaluate(state[:nT], state[nT:nT + k], state[nT + k:]).pack()

        return rhs


def cutoff_rhs(dec: Decomposition, params: CutoffParams, y, a: np.ndarray, V: np.ndarray) -> CutoffEvaluation:
    return CutoffSystem(dec, params).evaluate(y, a, V)


def q_distance(dec: Decomposition, params: CutoffParams, first: Tuple[np.ndarray, np.ndarray, np.ndarray],
               second: Tuple[np.ndarray, np.ndarray, np.ndarray]) -> float:
    """Q-weighted distance between two (y, a, V) triples"""
    sl = coefficient_slices(dec)
    dy = first[0] - second[0]
    da = first[1] - second[1]
    dv = dec.space.x1_norm(first[2] - second[2])
    return qweighted_norm(params.Q, dy, da[sl["d1"]], da[sl["d2"]], da[sl["+"]], da[sl["-"]], dv)


def measure_lipschitz(dec: Decomposition, params: CutoffParams, side: str = "cu", pairs: int = 20,
                      rng: Optional[np.random.Generator] = None, scale: float = 1.0) -> float:
    """
    Largest observed |hat-G(W1) - hat-G(W2)| / |W1 - W2|_Q over random nearby
    pairs inside the 3 delta ball. side selects hat-G^- (cu) or hat-G^+ (cs).
    """
    if side not in ("cu", "cs"):
        raise ParameterError(f"side must be 'cu' or 'cs', got {side}")
    rng = rng or np.random.default_rng(0)
    system = CutoffSystem(dec, params)
    tag = "-" if side == "cu" else "+"
    k = dec.rank - dec.n_translation
    space = dec.space
    worst = 0.0
    for _ in range(pairs):
        a = rng.uniform(-1.0, 1.0, k)
        V = project(dec, None, "e", space.random_vector(rng))
        size = transverse_magnitude(a, space.x1_norm(V))
        radius = rng.uniform(0.2, 2.0) * params.delta * scale
        a, V = a * radius / size, V * radius / size
        da = 1e-3 * radius * rng.uniform(-1.0, 1.0, k)
        dV = 1e-3 * radius * V / max(space.x1_norm(V), 1e-300)
        y = np.zeros(dec.n_translation)
        first = system.evaluate(y, a, V).hat_g[tag]
        second = system.evaluate(y, a + da, V + dV).hat_g[tag]
        distance = q_distance(dec, params, (y, a, V), (y, a + da, V + dV))
        if distance > 0:
            worst = max(worst, float(np.linalg.norm(first - second)) / distance)
    logger.info(f"Measured Lipschitz constant of hat-G ({side}): {worst:.4e}")
    return worst


def check_parameter_gates(params: CutoffParams, lam: float, d1: int, C: float = 1.0, k: int = 1) -> Dict[str, bool]:
    """
    Evaluate the smallness conditions on (delta, mu, Q, eta) with surrogate
    constant C. Gates 3-5 need lambda > 2 eta.
    """
    delta, mu, Q, eta = params.delta, params.mu, params.Q, params.eta
    gap1 = lam - eta
    gap2 = lam - 2.0 * eta
    gapk = lam - k * eta
    gates = {"P1": delta < 1.0 and Q > 1.0 and mu < 0.2}
    gates["P2"] = C * eta ** (-(1 + d1)) * (1.0 / Q + Q ** 3 * delta) < 1.0
    if gap1 <= 0 or gap2 <= 0 or gapk <= 0:
        gates.update({"P3": False, "P4": False, "P5": False, "P6": False})
        return gates
    gates["P3"] = (C * eta ** (-(d1 + 1)) * Q ** 3 * delta ** 2 / gap1 < 1.0
                   and C * delta * eta ** (-d1) / gap1 < mu)
    gates["P4"] = C * (eta ** (-(2 * d1 + 1)) * Q ** 6 * delta ** 2 + delta ** 2 / eta
                       + eta ** (-2 * (d1 + 1)) * Q ** 6 * delta ** 4 / gap2) < eta
    gates["P5"] = C * delta * eta ** (-d1) / gap2 < 1.0
    gates["P6"] = C * delta * eta ** (-k * d1) / gapk <= 1.0
    return gates


def contraction_bound(params: CutoffParams, lam: float, d1: int, C: float = 1.0) -> float:
    """Surrogate C delta eta^{-d1} / (lambda - eta) for the Lyapunov-Perron contraction ratio"""
    return C * params.delta * params.eta ** (-d1) / (lam - params.eta)
