#!/usr/bin/env python3
"""
Gross-Pitaevskii Model
Traveling-frame Gross-Pitaevskii equation: conserved functionals, the
coordinate map psi, gray-soliton seeds and the Newton-Krylov profile solver.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq
from scipy.sparse.linalg import LinearOperator, minres

from errors import ConvergenceError, ParameterError
from field_core import (
    Field, Grid, _tables, bump_symbol, fft, filter_array, ifft, read_snapshot,
    spectral_derivative, spectral_laplacian, directional_derivative, write_snapshot,
)

logger = logging.getLogger(__name__)

SOUND_SPEED = math.sqrt(2.0)


@dataclass(frozen=True)
class ModelParams:
    """Model constants: cut-off radius of chi and the frame velocity"""
    chi_radius: float = 1.0
    c: Tuple[float, ...] = (0.5,)

    def __post_init__(self):
        if not self.chi_radius > 0:
            raise ParameterError(f"chi_radius must be positive, got {self.chi_radius}")
        object.__setattr__(self, "c", tuple(float(x) for x in np.atleast_1d(self.c)))

    def chi(self, grid: Grid) -> np.ndarray:
        return _chi_table(grid, self.chi_radius)


_CHI_CACHE: Dict[Tuple[Grid, float], np.ndarray] = {}


def _chi_table(grid: Grid, radius: float) -> np.ndarray:
    key = (grid, radius)
    if key not in _CHI_CACHE:
        _CHI_CACHE[key] = bump_symbol(radius)(_tables(grid).k)
    return _CHI_CACHE[key]


@dataclass(frozen=True, eq=False)
class WaveProfile:
    """Traveling wave U_c with its velocity and (twGP) residual"""
    c: np.ndarray
    U_c: Field
    residual: float
    params: ModelParams
    translation_axes: Tuple[int, ...] = (0,)
    rho: float = 1.0
    info: Dict = field(default_factory=dict)

    @property
    def grid(self) -> Grid:
        return self.U_c.grid


def _velocity(c, grid: Grid) -> np.ndarray:
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if c.size == 1 and grid.spatial_dim > 1:
        c = np.concatenate([c, np.zeros(grid.spatial_dim - 1)])
    if c.shape != (grid.spatial_dim,):
        raise ParameterError(f"velocity {c} does not match a {grid.spatial_dim}D grid")
    return c


def energy(u: Field) -> float:
    """E(u) = 1/2 int |grad u|^2 + 1/4 int (1 - |u|^2)^2"""
    grid = u.grid
    kinetic = 0.0
    for j in range(grid.spatial_dim):
        kinetic += np.sum(spectral_derivative(u.re, grid, j) ** 2 + spectral_derivative(u.im, grid, j) ** 2)
    potential = np.sum((1.0 - u.re ** 2 - u.im ** 2) ** 2)
    return float(grid.cell_volume * (0.5 * kinetic + 0.25 * potential))


def momentum(u: Field) -> np.ndarray:
    """P_j(u) = -int (u1 - 1) d_j u2"""
    grid = u.grid
    return np.array([-grid.cell_volume * np.sum((u.re - 1.0) * spectral_derivative(u.im, grid, j))
                     for j in range(grid.spatial_dim)])


def extended_momentum(w: Field, params: ModelParams = ModelParams()) -> np.ndarray:
    """P~(w) = -int [w1 + (1 - chi(D)) w2^2 / 2] grad w2"""
    grid = w.grid
    sq = w.im ** 2
    density = w.re + 0.5 * (sq - filter_array(sq, params.chi(grid)))
    return np.array([-grid.cell_volume * np.sum(density * spectral_derivative(w.im, grid, j))
                     for j in range(grid.spatial_dim)])


def psi_forward(w: Field, params: ModelParams = ModelParams()) -> Field:
    """psi(w) = 1 + w - chi(D)((Im w)^2 / 2) in the real part"""
    chi = params.chi(w.grid)
    return Field(w.grid, 1.0 + w.re - 0.5 * filter_array(w.im ** 2, chi), w.im)


def psi_inverse(u: Field, params: ModelParams = ModelParams()) -> Field:
    chi = params.chi(u.grid)
    return Field(u.grid, u.re - 1.0 + 0.5 * filter_array(u.im ** 2, chi), u.im)


def traveling_frame_rhs(U: Field, c) -> Field:
    """Time derivative c.grad U + i Delta U + i (1 - |U|^2) U as a real pair"""
    grid = U.grid
    c = _velocity(c, grid)
    rho = 1.0 - U.re ** 2 - U.im ** 2
    d_re = directional_derivative(U.re, grid, c) - spectral_laplacian(U.im, grid) - rho * U.im
    d_im = directional_derivative(U.im, grid, c) + spectral_laplacian(U.re, grid) + rho * U.re
    return Field(grid, d_re, d_im)


def hamiltonian_gradient(U: Field, c) -> Field:
    """(E + c.P)'(U); the traveling-frame vector field is J applied to this"""
    grid = U.grid
    c = _velocity(c, grid)
    rho = 1.0 - U.re ** 2 - U.im ** 2
    g_re = -spectral_laplacian(U.re, grid) - rho * U.re - directional_derivative(U.im, grid, c)
    g_im = -spectral_laplacian(U.im, grid) - rho * U.im + directional_derivative(U.re, grid, c)
    return Field(grid, g_re, g_im)


def conserved_quantity(U: Field, c) -> float:
    c = _velocity(c, U.grid)
    return energy(U) + float(np.dot(c, momentum(U)))


def profile_residual(U: Field, c) -> float:
    g = hamiltonian_gradient(U, c)
    return float(max(np.max(np.abs(g.re)), np.max(np.abs(g.im))))


def hessian_coefficients(u: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pointwise entries of the second variation of E + c.P at u + iv"""
    return -1.0 + 3.0 * u ** 2 + v ** 2, 2.0 * u * v, -1.0 + u ** 2 + 3.0 * v ** 2


def apply_hessian(coefficients, grid: Grid, c: np.ndarray, f1: np.ndarray,
                  f2: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    a11, a12, a22 = coefficients
    out1 = -spectral_laplacian(f1, grid) + a11 * f1 - directional_derivative(f2, grid, c) + a12 * f2
    out2 = directional_derivative(f1, grid, c) + a12 * f1 - spectral_laplacian(f2, grid) + a22 * f2
    return out1, out2


def gray_soliton(x: np.ndarray, c: float) -> np.ndarray:
    """Gray soliton i c/sqrt2 + sqrt(1 - c^2/2) tanh(sqrt(1 - c^2/2) x / sqrt2) on the line"""
    if abs(c) >= SOUND_SPEED:
        raise ParameterError(f"no subsonic gray soliton for |c| = {abs(c)}")
    a = c / SOUND_SPEED
    b = math.sqrt(1.0 - a * a)
    return 1j * a + b * np.tanh(b * x / SOUND_SPEED)


def _twisted_parameters(c: float, length: float, count: int) -> Tuple[float, float, float]:
    """Background wavenumber q, modulus rho and rescaled speed so the train closes on the torus"""

    def rescaled(q):
        rho2 = 1.0 + c * q - q * q
        if rho2 <= 0:
            return None, None
        rho = math.sqrt(rho2)
        return rho, (c - 2.0 * q) / rho

    def closure(q):
        rho, c_tilde = rescaled(q)
        theta = math.asin(max(-1.0, min(1.0, c_tilde / SOUND_SPEED)))
        return q * length + count * (2.0 * theta - math.pi)

    q = brentq(closure, 0.0, 2.0 * math.pi * count / length, xtol=1e-15)
    rho, c_tilde = rescaled(q)
    if rho is None or abs(c_tilde) >= SOUND_SPEED:
        raise ParameterError(f"box length {length} too short for a closed soliton train at c = {c}")
    return q, rho, c_tilde


def soliton_seed(grid: Grid, c, positions: Sequence[float] = (0.0,)) -> Tuple[Field, Dict]:
    """
    Gray-soliton train rho e^{iqx} prod_j G(rho (x - x_j)) closed on the torus,
    gauged so the boundary value is real. Higher-dimensional grids get the
    profile extended along the transverse axes.
    """
    c = _velocity(c, grid)
    if np.any(c[1:] != 0.0):
        raise ParameterError("soliton seeds travel along axis 0")
    if np.linalg.norm(c) >= SOUND_SPEED:
        raise ParameterError(f"|c| = {np.linalg.norm(c)} is not subsonic")
    length = grid.lengths[0]
    q, rho, c_tilde = _twisted_parameters(float(c[0]), length, len(positions))
    x = grid.axis_coordinates(0)
    z = rho * np.exp(1j * q * x)
    for x0 in positions:
        z = z * gray_soliton(rho * _periodic_offset(x, x0, length), c_tilde)
    z = z * np.exp(-1j * np.angle(z[0]))
    z = np.broadcast_to(z.reshape((-1,) + (1,) * (grid.spatial_dim - 1)), grid.shape)
    meta = {"q": q, "rho": rho, "c_tilde": c_tilde, "positions": list(positions)}
    logger.debug(f"Soliton seed: q={q:.6f} rho={rho:.6f} c~={c_tilde:.6f}")
    return Field.from_complex(grid, z), meta


def _periodic_offset(x: np.ndarray, x0: float, length: float) -> np.ndarray:
    return (x - x0 + 0.5 * length) % length - 0.5 * length


class _NewtonOperators:
    """Projected Hessian and SPD preconditioner for one Newton step"""

    def __init__(self, U: Field, c: np.ndarray, translation_axes: Sequence[int]):
        self.grid = U.grid
        self.c = c
        self.n = U.grid.size
        self.coefficients = hessian_coefficients(U.re, U.im)
        directions = [np.concatenate([spectral_derivative(U.re, self.grid, j).ravel(),
                                      spectral_derivative(U.im, self.grid, j).ravel()])
                      for j in translation_axes]
        directions.append(np.concatenate([-U.im.ravel(), U.re.ravel()]))
        self.kernel, _ = np.linalg.qr(np.array(directions).T)
        tables = _tables(self.grid)
        k2 = tables.k_squared
        alpha = sum(cj * (g / 1j).real for cj, g in zip(c, tables.grad))
        self.det = (k2 + 2.0) * (k2 + 1.0) - alpha ** 2
        self.alpha = alpha
        self.k2 = k2

    def project(self, v: np.ndarray) -> np.ndarray:
        return v - self.kernel @ (self.kernel.T @ v)

    def hessian(self, v: np.ndarray) -> np.ndarray:
        f1 = v[:self.n].reshape(self.grid.shape)
        f2 = v[self.n:].reshape(self.grid.shape)
        o1, o2 = apply_hessian(self.coefficients, self.grid, self.c, f1, f2)
        return np.concatenate([o1.ravel(), o2.ravel()])

    def projected(self, v: np.ndarray) -> np.ndarray:
        return self.project(self.hessian(self.project(v)))

    def precondition(self, v: np.ndarray) -> np.ndarray:
        a = fft(v[:self.n].reshape(self.grid.shape))
        b = fft(v[self.n:].reshape(self.grid.shape))
        o1 = ((self.k2 + 1.0) * a + 1j * self.alpha * b) / self.det
        o2 = (-1j * self.alpha * a + (self.k2 + 2.0) * b) / self.det
        return np.concatenate([ifft(o1).real.ravel(), ifft(o2).real.ravel()])


def solve_traveling_wave(c, seed: Field, params: Optional[ModelParams] = None, tol: float = 1e-9,
                         max_iter: int = 25, translation_axes: Optional[Sequence[int]] = None) -> WaveProfile:
    """
    Newton iteration on the (twGP) residual. Linear solves use MINRES on the
    Hessian projected off the translation and phase directions, preconditioned
    by the constant-coefficient block.
    """
    grid = seed.grid
    c = _velocity(c, grid)
    speed = float(np.linalg.norm(c))
    if speed >= SOUND_SPEED:
        raise ParameterError(f"no subsonic traveling wave for |c| = {speed} >= sqrt(2)")
    if params is None:
        params = ModelParams(c=tuple(c))
    axes = tuple(range(grid.spatial_dim)) if translation_axes is None else tuple(translation_axes)

    U = seed
    history: List[float] = []
    gauge = 0.0
    polished = False
    for iteration in range(max_iter + 1):
        F = -hamiltonian_gradient(U, c).to_vector()
        residual = float(np.max(np.abs(F)))
        history.append(residual)
        logger.debug(f"Newton iteration {iteration}: residual {residual:.3e}")
        if not np.isfinite(residual) or residual > 1e3 * max(history[0], 1e-12):
            raise ConvergenceError(f"Newton iteration diverged at step {iteration}", history)
        if residual <= tol:
            if polished:
                break
            polished = True
        if iteration == max_iter:
            raise ConvergenceError(f"Newton did not reach {tol:.1e} in {max_iter} steps", history)
        ops = _NewtonOperators(U, c, axes)
        n = 2 * grid.size
        A = LinearOperator((n, n), matvec=ops.projected, dtype=float)
        M = LinearOperator((n, n), matvec=ops.precondition, dtype=float)
        delta, info = minres(A, ops.project(F), M=M, rtol=1e-12, maxiter=2000)
        if info < 0:
            raise ConvergenceError(f"MINRES breakdown (info={info})", history)
        delta = ops.project(delta)
        translation = ops.kernel[:, 0]
        gauge = abs(float(translation @ delta)) / max(float(np.linalg.norm(delta)), 1e-300)
        U = U + Field.from_vector(grid, delta)

    rho = float(np.mean(np.sqrt(U.re ** 2 + U.im ** 2).reshape(grid.dims[0], -1)[0]))
    final = profile_residual(U, c)
    logger.info(f"Traveling wave c={c.tolist()} converged: residual {final:.2e} in {len(history) - 1} steps")
    return WaveProfile(c=c, U_c=U, residual=final, params=params, translation_axes=axes, rho=rho,
                       info={"newton_history": history, "gauge": gauge})


def dip_amplitude(profile: WaveProfile) -> float:
    """Depth of the density dip relative to the background modulus"""
    modulus = np.sqrt(profile.U_c.re ** 2 + profile.U_c.im ** 2)
    return float(1.0 - np.min(modulus) / profile.rho)


def gray_wave(grid: Grid, c, params: Optional[ModelParams] = None, tol: float = 1e-9) -> WaveProfile:
    """Closed-form seed polished by Newton"""
    seed, meta = soliton_seed(grid, c)
    velocity = _velocity(c, grid)
    params = params or ModelParams(c=tuple(velocity))
    profile = solve_traveling_wave(velocity, seed, params, tol=tol, translation_axes=(0,))
    profile.info.update(meta)
    return profile


def transverse_extend(profile: WaveProfile, n_transverse: int, transverse_length: float) -> WaveProfile:
    """Extend a 1D profile trivially along a periodic transverse axis"""
    grid1 = profile.grid
    if grid1.spatial_dim != 1:
        raise ParameterError("only 1D profiles can be extended")
    grid2 = Grid((grid1.dims[0], n_transverse), (grid1.lengths[0], transverse_length))
    z = np.repeat(profile.U_c.to_complex()[:, None], n_transverse, axis=1)
    U = Field.from_complex(grid2, z)
    c = np.array([profile.c[0], 0.0])
    params = ModelParams(chi_radius=profile.params.chi_radius, c=tuple(c))
    return WaveProfile(c=c, U_c=U, residual=profile_residual(U, c), params=params,
                       translation_axes=(0,), rho=profile.rho, info=dict(profile.info))


def frame_linear_symbol(grid: Grid, c) -> np.ndarray:
    """Fourier symbol of c.grad + i Delta acting on complex U"""
    tables = _tables(grid)
    c = _velocity(c, grid)
    return sum(cj * g for cj, g in zip(c, tables.grad)) - 1j * tables.k_squared


def frame_nonlinearity(z: np.ndarray) -> np.ndarray:
    return 1j * (1.0 - np.abs(z) ** 2) * z


def save_profile(profile: WaveProfile, path: str):
    """Write the profile snapshot plus a JSON sidecar with its metadata"""
    write_snapshot(profile.U_c, path)
    meta = {
        "c": profile.c.tolist(),
        "residual": profile.residual,
        "rho": profile.rho,
        "chi_radius": profile.params.chi_radius,
        "translation_axes": list(profile.translation_axes),
        "grid": {"dims": list(profile.grid.dims), "lengths": list(profile.grid.lengths)},
        "info": {k: v for k, v in profile.info.items() if k != "newton_history"},
    }
    with open(path + ".json", "w") as fh:
        json.dump(meta, fh, indent=2)
    logger.info(f"Saved profile to {path}")


def load_profile(path: str) -> WaveProfile:
    U = read_snapshot(path)
    with open(path + ".json") as fh:
        meta = json.load(fh)
    c = np.array(meta["c"], dtype=float)
    params = ModelParams(chi_radius=meta["chi_radius"], c=tuple(c))
    return WaveProfile(c=c, U_c=U, residual=meta["residual"], params=params,
                       translation_axes=tuple(meta["translation_axes"]), rho=meta["rho"],
                       info=meta.get("info", {}))
