#!/usr/bin/env python3
"""
Spectral Decomposition
Invariant splitting X1 = X^T + X^d1 + X^e + X^d2 + X^+ + X^- of JL at a
traveling wave, its dual functionals and projections, the block matrices
M and empirical exponential-trichotomy measurements.
"""

import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import (ArpackError, ArpackNoConvergence, LinearOperator, eigs, eigsh,
                                expm_multiply, lsqr)
from scipy.stats import linregress

from errors import ConvergenceError, DegenerateSplittingError, ParameterError, ShapeError
from field_core import Field, FieldSpace, read_snapshot, write_snapshot
from linearization import LinearizedModel, estimate_operator_norm, materialize

logger = logging.getLogger(__name__)

TAGS = ("T", "d1", "d2", "+", "-")
DENSE_CAP = 16384
DUAL_CONDITION_LIMIT = 1e8
Y_KEY_DIGITS = 12
CHAIN_DEPTH = 4
CHAIN_CHOICE = "X1-orthogonal to ker L; d2 partners are minimal-norm solutions made isotropic"


@dataclass(frozen=True)
class Frame:
    """Bases, duals and their y-derivatives translated to base point y"""
    y: np.ndarray
    V: np.ndarray
    Z: np.ndarray
    dV: List[np.ndarray]
    dZ: List[np.ndarray]


@dataclass(frozen=True, eq=False)
class Decomposition:
    """Invariant-subspace package at the reference translation y = 0"""
    model: LinearizedModel
    bases: Dict[str, np.ndarray]
    duals: Dict[str, np.ndarray]
    M: np.ndarray
    lam: float
    eigenvalues: np.ndarray
    tol: float
    morse_index: int
    dim_ker: int
    near_zero: int = 0
    info: Dict = field(default_factory=dict)
    _frames: Dict = field(default_factory=dict, repr=False)
    _dense: Dict = field(default_factory=dict, repr=False)

    @property
    def space(self):
        return self.model.space

    @property
    def d(self) -> int:
        return self.bases["+"].shape[0]

    @property
    def d1(self) -> int:
        return self.bases["d1"].shape[0]

    @property
    def d2(self) -> int:
        return self.bases["d2"].shape[0]

    @property
    def n_translation(self) -> int:
        return self.bases["T"].shape[0]

    @property
    def dims(self) -> Dict[str, int]:
        return {tag: self.bases[tag].shape[0] for tag in TAGS}

    @property
    def slices(self) -> Dict[str, slice]:
        out, start = {}, 0
        for tag in TAGS:
            size = self.bases[tag].shape[0]
            out[tag] = slice(start, start + size)
            start += size
        return out

    @property
    def rank(self) -> int:
        return sum(self.dims.values())

    @property
    def V(self) -> np.ndarray:
        return np.vstack([self.bases[tag] for tag in TAGS])

    @property
    def Z(self) -> np.ndarray:
        return np.vstack([self.duals[tag] for tag in TAGS])

    def block(self, beta: str, alpha: str) -> np.ndarray:
        """M_{beta alpha} = <zeta^beta, JL V^alpha>"""
        sl = self.slices
        return self.M[sl[beta], sl[alpha]]

    @property
    def M_plus(self) -> np.ndarray:
        return self.block("+", "+")

    @property
    def M_minus(self) -> np.ndarray:
        return self.block("-", "-")

    def frame(self, y=None) -> Frame:
        nT = self.model.n_translation
        y = np.zeros(nT) if y is None else np.atleast_1d(np.asarray(y, dtype=float))
        if y.shape != (nT,):
            raise ShapeError(f"translation of shape {y.shape}, expected ({nT},)")
        key = tuple(np.round(y, Y_KEY_DIGITS))
        cached = self._frames.get(key)
        if cached is not None:
            return cached
        space = self.space
        V = np.array([space.translate(v, y) for v in self.V]).reshape(self.rank, space.dim)
        Z = np.array([space.translate(z, y) for z in self.Z]).reshape(self.rank, space.dim)
        dV = [np.array([space.gradient(v, j) for v in V]).reshape(V.shape) for j in range(nT)]
        dZ = [np.array([space.gradient(z, j) for z in Z]).reshape(Z.shape) for j in range(nT)]
        frame = Frame(y=y, V=V, Z=Z, dV=dV, dZ=dZ)
        if len(self._frames) > 64:
            self._frames.clear()
        self._frames[key] = frame
        return frame

    def coordinates(self, y, w: np.ndarray) -> np.ndarray:
        """All finite-rank coefficients <zeta_j(. + y), w> in TAGS order"""
        return self.space.pair_rows(self.frame(y).Z, w)

    def summary(self) -> dict:
        return {
            "dims": self.dims,
            "dim_ker": self.dim_ker,
            "lambda": self.lam,
            "morse_index": self.morse_index,
            "near_zero": self.near_zero,
            "tol": self.tol,
            "index_consistent": self.info.get("index_consistent"),
        }


def _check_tag(alpha: str):
    if alpha not in TAGS and alpha != "e":
        raise ParameterError(f"unknown subspace tag '{alpha}'")


def project(dec: Decomposition, y, alpha: str, w: np.ndarray) -> np.ndarray:
    """Coefficients for a finite block; the fiber component for alpha = 'e'"""
    _check_tag(alpha)
    frame = dec.frame(y)
    coefficients = dec.space.pair_rows(frame.Z, w)
    if alpha == "e":
        return w - coefficients @ frame.V
    return coefficients[dec.slices[alpha]]


def reconstruct(dec: Decomposition, y, alpha: str, coefficients: np.ndarray) -> np.ndarray:
    _check_tag(alpha)
    frame = dec.frame(y)
    rows = frame.V[dec.slices[alpha]]
    coefficients = np.atleast_1d(coefficients)
    if coefficients.shape != (rows.shape[0],):
        raise ShapeError(f"{alpha} coefficients of shape {coefficients.shape}, expected ({rows.shape[0]},)")
    if rows.shape[0] == 0:
        return np.zeros(dec.space.dim)
    return coefficients @ rows


def project_field(dec: Decomposition, y, alpha: str, w: np.ndarray) -> np.ndarray:
    """Pi^alpha_y w as a phase-space vector for every tag"""
    if alpha == "e":
        return project(dec, y, "e", w)
    return reconstruct(dec, y, alpha, project(dec, y, alpha, w))


def d_y_project(dec: Decomposition, y, alpha: str, z, w: np.ndarray) -> np.ndarray:
    """Analytic derivative D_y Pi^alpha_y (z) w"""
    _check_tag(alpha)
    frame = dec.frame(y)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if not np.any(z):
        return np.zeros_like(w)
    dZ = sum(zj * g for zj, g in zip(z, frame.dZ))
    dV = sum(zj * g for zj, g in zip(z, frame.dV))
    rows = slice(None) if alpha == "e" else dec.slices[alpha]
    space = dec.space
    out = space.pair_rows(dZ[rows], w) @ frame.V[rows] + space.pair_rows(frame.Z[rows], w) @ dV[rows]
    return -out if alpha == "e" else out


def _whitened(space, rows: np.ndarray) -> np.ndarray:
    return np.array([space.x1_whiten(r) for r in rows]).reshape(rows.shape[0], space.dim)


def _unwhitened(space, rows: np.ndarray) -> np.ndarray:
    return np.array([space.x1_unwhiten(r) for r in rows]).reshape(rows.shape[0], space.dim)


def _x1_complement(space, candidates: np.ndarray, against: np.ndarray, rank: int) -> np.ndarray:
    """X1-orthonormal basis (rows) of span(candidates) minus its X1 projection onto span(against)"""
    if rank <= 0 or candidates.shape[0] == 0:
        return np.zeros((0, space.dim))
    cw = _whitened(space, candidates)
    if against.shape[0]:
        aw, _ = np.linalg.qr(_whitened(space, against).T)
        cw = cw - (cw @ aw) @ aw.T
    u, s, _ = scipy.linalg.svd(cw.T, full_matrices=False)
    return _unwhitened(space, u[:, :rank].T)


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    return v if v[np.argmax(np.abs(v))] >= 0 else -v


def _hyperbolic_basis(values: np.ndarray, vectors: np.ndarray, tol_abs: float,
                      sign: int) -> Tuple[np.ndarray, np.ndarray]:
    """Real eigenvector basis of the eigenvalues with sign * Re > tol_abs"""
    rows, picked = [], []
    for mu, vec in sorted(zip(values, vectors.T), key=lambda t: (-sign * t[0].real, -t[0].imag)):
        if sign * mu.real <= tol_abs or mu.imag < -tol_abs:
            continue
        picked.append(mu)
        rows.append(_canonical_sign(vec.real / np.linalg.norm(vec.real)))
        if abs(mu.imag) > tol_abs:
            rows.append(_canonical_sign(vec.imag / np.linalg.norm(vec.imag)))
    return np.array(rows).reshape(len(rows), vectors.shape[0]), np.array(picked)


def _chain_ranks(T: np.ndarray, size: int, tol_abs: float) -> List[int]:
    """Ranks of (JL restricted to the zero cluster)^k, k = 1..4"""
    block = T[:size, :size]
    ranks, power = [], np.eye(size)
    for _ in range(4):
        power = power @ block
        if size == 0:
            ranks.append(0)
            continue
        s = scipy.linalg.svdvals(power)
        ranks.append(int(np.sum(s > math.sqrt(tol_abs))))
    return ranks


def _nonpositive_invariant(S: np.ndarray, B: np.ndarray, form_tol: float,
                           op_tol: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Maximal B-invariant subspace on which the form S is non-positive, for a
    nilpotent S-skew B. Returned as (isotropic columns, negative columns).
    """
    r = S.shape[0]
    if r == 0:
        return np.zeros((0, 0)), np.zeros((0, 0))
    _, s, vh = scipy.linalg.svd(B)
    ker = vh[s <= op_tol].T
    if ker.shape[1] == 0:
        raise DegenerateSplittingError(f"zero cluster is not nilpotent modulo ker L (smallest singular value "
                                       f"{s[-1]:.2e})")
    values, vectors = scipy.linalg.eigh(ker.T @ S @ ker)
    definite = np.abs(values) > form_tol
    if np.any(definite):
        # definite directions of ker B split off S-orthogonally
        P = ker @ vectors[:, definite]
        negative = ker @ vectors[:, definite & (values < 0)]
        W = scipy.linalg.null_space(P.T @ S, rcond=1e-10)
        iso, neg = _nonpositive_invariant(W.T @ S @ W, W.T @ B @ W, form_tol, op_tol)
        return W @ iso, np.hstack([negative, W @ neg])
    R = ker
    W = scipy.linalg.null_space(np.vstack([R.T @ S, R.T]), rcond=1e-10)
    if W.shape[1] != r - 2 * R.shape[1]:
        raise DegenerateSplittingError(f"isotropic chain directions without L-partners: {R.shape[1]} "
                                       f"isotropic in a block of {r}")
    reduced = np.linalg.lstsq(np.hstack([W, R]), B @ W, rcond=None)[0][:W.shape[1]]
    iso, neg = _nonpositive_invariant(W.T @ S @ W, reduced, form_tol, op_tol)
    return np.hstack([R, W @ iso]), W @ neg


def _split_zero_cluster(model: LinearizedModel, cluster_rows: np.ndarray, kernel: np.ndarray, tol: float,
                        l_norm: float, op_tol: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray, dict]:
    """
    Split the zero cluster modulo ker L into isotropic and negative chain
    vectors (X^d1) and their isotropic L-partners (X^d2). The rest of the
    cluster is L-positive and stays in X^e.
    """
    space = model.space
    n = space.dim
    zero = np.zeros(model.n_translation)
    empty = np.zeros((0, n))
    remainder = _x1_complement(space, cluster_rows, kernel, cluster_rows.shape[0] - kernel.shape[0])
    q = remainder.shape[0]
    if q == 0:
        return empty, empty, empty, {"chain_energies": [], "chain_split": {"isotropic": 0, "negative": 0}}
    L_rem = np.array([model.apply_L(r, zero) for r in remainder]).reshape(remainder.shape)
    S = space.gram(remainder, L_rem)
    S = 0.5 * (S + S.T)
    JL_rem = np.array([model.apply_JL(r, zero) for r in remainder]).reshape(remainder.shape)
    coeffs, *_ = np.linalg.lstsq(np.vstack([remainder, kernel]).T, JL_rem.T, rcond=None)
    B = coeffs[:q]
    leak = np.max(np.abs(np.vstack([remainder, kernel]).T @ coeffs - JL_rem.T))
    if leak > op_tol * max(1.0, float(np.max(np.abs(JL_rem)))):
        raise DegenerateSplittingError(f"zero cluster is not JL-invariant (defect {leak:.2e})",
                                       suggested_tol=tol * 10.0)

    iso, neg = _nonpositive_invariant(S, B, tol * l_norm, op_tol)
    k = iso.shape[1]
    partners = np.zeros((q, 0))
    if k:
        nonpositive = np.hstack([iso, neg])
        target = np.vstack([np.eye(k), np.zeros((neg.shape[1], k))])
        partners = np.linalg.lstsq(nonpositive.T @ S, target, rcond=None)[0]
        overlap = partners.T @ S @ partners
        partners = partners - 0.5 * iso @ (0.5 * (overlap + overlap.T))
        partners = partners / np.linalg.norm(partners, axis=0)
    split = {"isotropic": int(k), "negative": int(neg.shape[1])}
    info = {"chain_energies": [float(e) for e in scipy.linalg.eigvalsh(S)], "chain_split": split}
    return iso.T @ remainder, neg.T @ remainder, partners.T @ remainder, info


def _krein_negative(A_values: np.ndarray, A_vectors: np.ndarray, L: np.ndarray, tol_abs: float,
                    zero_tol: float, tol: float, l_norm: float) -> Tuple[np.ndarray, List[complex]]:
    """Real and imaginary parts of center eigenvectors with negative Krein signature"""
    center = [j for j, mu in enumerate(A_values)
              if abs(mu.real) <= tol_abs and mu.imag > zero_tol]
    used = set()
    rows, flagged = [], []
    for j in center:
        if j in used:
            continue
        group = [k for k in center if k not in used and abs(A_values[k] - A_values[j]) < zero_tol]
        used.update(group)
        Vg = A_vectors[:, group]
        H = Vg.conj().T @ L @ Vg
        G = Vg.conj().T @ Vg
        energies, coefficients = scipy.linalg.eigh(0.5 * (H + H.conj().T), G)
        if np.any(np.abs(energies) <= tol * l_norm):
            raise DegenerateSplittingError(
                f"zero Krein signature near eigenvalue {A_values[j]:.4g}", suggested_tol=tol / 10.0)
        for energy, x in zip(energies, coefficients.T):
            if energy < 0:
                v = Vg @ x
                rows.extend([v.real / np.linalg.norm(v.real), v.imag / np.linalg.norm(v.imag)])
                flagged.append(complex(A_values[j]))
    return np.array(rows).reshape(len(rows), A_vectors.shape[0]), flagged


def _dual_basis(model: LinearizedModel, bases: Dict[str, np.ndarray],
                kernel_count: Dict[str, int]) -> Dict[str, np.ndarray]:
    """Candidate duals (Riesz images on kernel vectors, L images elsewhere) biorthogonalized"""
    space = model.space
    zero = np.zeros(model.n_translation)
    candidates = []
    for tag in TAGS:
        for j, v in enumerate(bases[tag]):
            if j < kernel_count.get(tag, 0):
                candidates.append(space.riesz(v))
            else:
                candidates.append(model.apply_L(v, zero))
    V = np.vstack([bases[tag] for tag in TAGS])
    W = np.array(candidates).reshape(V.shape)
    if V.shape[0] == 0:
        return {tag: np.zeros((0, space.dim)) for tag in TAGS}
    G = space.gram(W, V)
    condition = np.linalg.cond(G)
    if not np.isfinite(condition) or condition > DUAL_CONDITION_LIMIT:
        raise DegenerateSplittingError(f"dual Gram matrix condition {condition:.2e} exceeds {DUAL_CONDITION_LIMIT:.0e}")
    Z = np.linalg.solve(G, W)
    duals, start = {}, 0
    for tag in TAGS:
        size = bases[tag].shape[0]
        duals[tag] = Z[start:start + size]
        start += size
    logger.debug(f"Dual Gram condition number {condition:.3e}")
    return duals


def _assemble(model: LinearizedModel, bases: Dict[str, np.ndarray], kernel_count: Dict[str, int],
              eigenvalues: np.ndarray, tol: float, morse: int, dim_ker: int, near_zero: int,
              info: dict, dense: Optional[dict] = None) -> Decomposition:
    space = model.space
    zero = np.zeros(model.n_translation)
    duals = _dual_basis(model, bases, kernel_count)
    V = np.vstack([bases[tag] for tag in TAGS])
    Z = np.vstack([duals[tag] for tag in TAGS])
    if V.shape[0]:
        AV = np.array([model.apply_JL(v, zero) for v in V])
        M = space.gram(Z, AV)
    else:
        M = np.zeros((0, 0))
    dec = Decomposition(model=model, bases=bases, duals=duals, M=M, lam=0.0, eigenvalues=eigenvalues,
                        tol=tol, morse_index=morse, dim_ker=dim_ker, near_zero=near_zero, info=info,
                        _dense=dense or {})
    lam = float(np.min(np.linalg.eigvals(dec.M_plus).real)) if dec.d else 0.0
    object.__setattr__(dec, "lam", lam)

    nT = model.n_translation
    expected_d1 = morse + dim_ker - nT - dec.d
    info["expected_d1"] = int(expected_d1)
    info["index_consistent"] = bool(expected_d1 == dec.d1)
    if expected_d1 != dec.d1:
        logger.warning(f"Index formula n- + dim ker - n_T - d = {expected_d1} but d1 = {dec.d1}")
    biorth = np.max(np.abs(space.gram(Z, V) - np.eye(V.shape[0]))) if V.shape[0] else 0.0
    info["biorthogonality_error"] = float(biorth)
    logger.info(f"Decomposition {model.name}: dims {dec.dims}, dim ker {dim_ker}, "
                f"lambda {lam:.6g}, Morse index {morse}")
    return dec


def decompose(model: LinearizedModel, tol: float = 1e-6, dense_cap: int = DENSE_CAP,
              n_eigs: int = 8) -> Decomposition:
    """
    Classify the spectrum of JL at y = 0 and build the splitting.

    Hyperbolic eigenvalues (|Re mu| > tol ||JL||) span X^+-. Modulo ker L the
    zero cluster splits into its largest JL-invariant L-non-positive part
    (isotropic and negative chain vectors, X^d1), isotropic L-partners of the
    isotropic vectors (X^d2) and an L-positive rest left in X^e. Kernel
    directions beyond translations and center eigenvectors of negative Krein
    signature join X^d1. X^e is the common annihilator of the duals.
    """
    if not tol > 0:
        raise ParameterError(f"tol must be positive, got {tol}")
    if model.dim > dense_cap:
        return _decompose_iterative(model, tol, n_eigs)

    space = model.space
    n = model.dim
    zero = np.zeros(model.n_translation)
    L = materialize(lambda v: model.apply_L(v, zero), n)
    L = 0.5 * (L + L.T)
    J = materialize(model.apply_J, n)
    A = J @ L
    a_norm = float(scipy.linalg.norm(A, 2))
    l_norm = float(scipy.linalg.norm(L, 2))
    tol_abs = tol * a_norm
    zero_tol = max(math.sqrt(tol_abs), 10.0 * tol_abs)
    logger.info(f"Dense decomposition: dim {n}, ||JL|| = {a_norm:.4g}, tol_abs = {tol_abs:.3e}")

    values, vectors = scipy.linalg.eig(A)
    plus, plus_values = _hyperbolic_basis(values, vectors, tol_abs, +1)
    minus, _ = _hyperbolic_basis(values, vectors, tol_abs, -1)

    T, Zs, cluster_dim = scipy.linalg.schur(A, output="real",
                                            sort=lambda re, im: math.hypot(re, im) < zero_tol)
    cluster = Zs[:, :cluster_dim]
    chain_ranks = _chain_ranks(T, cluster_dim, tol_abs)
    u, s, vh = scipy.linalg.svd(L @ cluster, full_matrices=False) if cluster_dim else (None, np.zeros(0), None)
    ker_mask = s <= tol * l_norm
    kernel = (cluster @ vh[ker_mask].T).T if cluster_dim else np.zeros((0, n))
    dim_ker = int(kernel.shape[0])

    translations = model.translation_modes(zero)
    nT = translations.shape[0]
    if dim_ker < nT:
        raise DegenerateSplittingError(f"kernel of dimension {dim_ker} misses translation modes",
                                       suggested_tol=tol * 10.0)
    extra_kernel = _x1_complement(space, kernel, translations, dim_ker - nT)
    isotropic, negative_chain, partners, chain_info = _split_zero_cluster(model, cluster.T, kernel, tol,
                                                                          l_norm, zero_tol)
    krein, krein_values = _krein_negative(values, vectors, L, tol_abs, zero_tol, tol, l_norm)

    d1_rows = [r for r in (extra_kernel, isotropic, negative_chain, krein) if r.shape[0]]
    bases = {
        "T": translations,
        "d1": np.vstack(d1_rows) if d1_rows else np.zeros((0, n)),
        "d2": partners,
        "+": plus,
        "-": minus,
    }
    if plus.shape[0] != minus.shape[0]:
        raise DegenerateSplittingError(f"unbalanced hyperbolic spectrum: {plus.shape[0]} unstable, "
                                       f"{minus.shape[0]} stable", suggested_tol=tol * 10.0)

    l_values = scipy.linalg.eigvalsh(L)
    morse = int(np.sum(l_values < -tol * l_norm))
    near_zero = int(np.sum(np.abs(l_values) <= tol * l_norm))
    if near_zero > dim_ker:
        logger.warning(f"{near_zero} near-zero eigenvalues of L but kernel dimension {dim_ker}")

    info = {
        "path": "dense",
        "a_norm": a_norm,
        "l_norm": l_norm,
        "zero_tol": zero_tol,
        "cluster_dim": int(cluster_dim),
        "chain_ranks": chain_ranks,
        **chain_info,
        "krein_negative": [[z.real, z.imag] for z in krein_values],
        "unstable_eigenvalues": [[complex(z).real, complex(z).imag] for z in plus_values],
        "chain_choice": CHAIN_CHOICE,
    }
    kernel_count = {"T": nT, "d1": extra_kernel.shape[0]}
    return _assemble(model, bases, kernel_count, values, tol, morse, dim_ker, near_zero, info,
                     dense={"A": A, "L": L})


def _power_norm(apply, n: int, rng: np.random.Generator, iters: int = 30) -> float:
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    estimate = 0.0
    for _ in range(iters):
        y = apply(x)
        estimate = float(np.linalg.norm(y))
        if estimate == 0.0:
            break
        x = y / estimate
    return estimate


def _arpack(solve, label: str):
    """Run an ARPACK call; keep the converged pairs when it runs out of iterations"""
    try:
        return solve()
    except ArpackNoConvergence as exc:
        logger.warning(f"ARPACK {label}: only {len(exc.eigenvalues)} eigenpairs converged")
        return exc.eigenvalues, exc.eigenvectors
    except ArpackError as exc:
        raise ConvergenceError(f"ARPACK {label} failed: {exc}") from exc


def _chain_levels(A: LinearOperator, kernel: np.ndarray) -> List[np.ndarray]:
    """Least-squares solutions of JL x = previous level, kept while consistent"""
    levels, front = [], kernel
    for _ in range(CHAIN_DEPTH - 1):
        found = []
        for mode in front:
            x = lsqr(A, mode, atol=1e-12, btol=1e-12, iter_lim=5000)[0]
            if np.linalg.norm(A.matvec(x) - mode) <= 1e-6 * np.linalg.norm(mode):
                found.append(x)
        if not found:
            break
        front = np.array(found)
        levels.append(front)
    return levels


def _decompose_iterative(model: LinearizedModel, tol: float, n_eigs: int) -> Decomposition:
    """ARPACK eigenpairs for the hyperbolic part, analytic kernel, least-squares Jordan chains"""
    space = model.space
    n = model.dim
    zero = np.zeros(model.n_translation)
    A = LinearOperator((n, n), matvec=lambda v: model.apply_JL(v, zero),
                       rmatvec=lambda v: -model.apply_L(model.apply_J(v), zero), dtype=float)
    L_op = LinearOperator((n, n), matvec=lambda v: model.apply_L(v, zero), dtype=float)
    rng = np.random.default_rng(0)
    a_norm = _power_norm(A.matvec, n, rng)
    l_norm = _power_norm(L_op.matvec, n, rng)
    tol_abs = tol * a_norm
    zero_tol = max(math.sqrt(tol_abs), 10.0 * tol_abs)
    k = max(1, min(n_eigs, n - 2))
    logger.info(f"Iterative decomposition: dim {n}, {k} eigenpairs per side")

    def side(which, sign):
        values, vectors = _arpack(lambda: eigs(A, k=k, which=which, tol=1e-10), which)
        rows, picked = [], []
        for mu, vec in sorted(zip(values, vectors.T), key=lambda t: (-sign * t[0].real, -t[0].imag)):
            if sign * mu.real <= tol_abs or mu.imag < -tol_abs:
                continue
            image = A.matvec(vec.real) + 1j * A.matvec(vec.imag)
            if np.linalg.norm(image - mu * vec) > 1e-6 * a_norm * np.linalg.norm(vec):
                continue
            picked.append(mu)
            parts = [vec.real] if abs(mu.imag) <= tol_abs else [vec.real, vec.imag]
            rows.extend(_canonical_sign(p / np.linalg.norm(p)) for p in parts)
        return np.array(rows).reshape(len(rows), n), np.array(picked, dtype=complex)

    plus, plus_values = side("LR", +1)
    minus, minus_values = side("SR", -1)
    if plus.shape[0] != minus.shape[0]:
        raise DegenerateSplittingError("unbalanced hyperbolic spectrum from ARPACK", suggested_tol=tol * 10.0)

    kernel = model.kernel_modes(zero)
    translations = model.translation_modes(zero)
    nT = translations.shape[0]
    dim_ker = kernel.shape[0]
    extra_kernel = _x1_complement(space, kernel, translations, dim_ker - nT)
    levels = _chain_levels(A, kernel)
    cluster_rows = np.vstack([kernel] + levels)
    isotropic, negative_chain, partners, chain_info = _split_zero_cluster(model, cluster_rows, kernel, tol,
                                                                          l_norm, zero_tol)
    logger.warning("Iterative path skips Krein-signature classification of embedded center eigenvalues")

    k_l = max(1, min(n_eigs, n - 1))
    l_values = _arpack(lambda: (eigsh(L_op, k=k_l, which="SA", return_eigenvectors=False, tol=1e-10), None),
                       "SA")[0]
    morse = int(np.sum(l_values < -tol * l_norm))
    near_zero = int(np.sum(np.abs(l_values) <= tol * l_norm))

    d1_rows = [r for r in (extra_kernel, isotropic, negative_chain) if r.shape[0]]
    bases = {
        "T": translations,
        "d1": np.vstack(d1_rows) if d1_rows else np.zeros((0, n)),
        "d2": partners,
        "+": plus,
        "-": minus,
    }
    info = {
        "path": "iterative",
        "a_norm": a_norm,
        "l_norm": l_norm,
        "zero_tol": zero_tol,
        "cluster_dim": int(cluster_rows.shape[0]),
        **chain_info,
        "unstable_eigenvalues": [[complex(z).real, complex(z).imag] for z in plus_values],
        "chain_choice": CHAIN_CHOICE,
    }
    eigenvalues = np.concatenate([plus_values, minus_values])
    return _assemble(model, bases, {"T": nT, "d1": extra_kernel.shape[0]}, eigenvalues, tol, morse,
                     dim_ker, near_zero, info)


def assemble_Ae(dec: Decomposition, y=None, norm_estimate: bool = True):
    """
    A_e(y) = Pi^e_y JL_y Pi^e_y as a vector function, plus an X1 estimate of
    ||A_e - JL_inf|| (dense below 4096 unknowns, power iteration above).
    """
    model = dec.model
    y = np.zeros(model.n_translation) if y is None else np.atleast_1d(np.asarray(y, dtype=float))

    def apply(v: np.ndarray) -> np.ndarray:
        return project(dec, y, "e", model.apply_JL(project(dec, y, "e", v), y))

    if not norm_estimate:
        return apply, None

    def difference(v: np.ndarray) -> np.ndarray:
        return apply(v) - model.stiff_apply(v)

    if model.dim <= 4096:
        estimate = estimate_operator_norm(model.space, difference)
    else:
        space = model.space
        estimate = _power_norm(lambda z: space.x1_whiten(difference(space.x1_unwhiten(z))),
                               model.dim, np.random.default_rng(1))
    return apply, estimate


def fiber_energy(dec: Decomposition, y, v: np.ndarray) -> float:
    """<L^e V, V> with L^e = (Pi^e)* L Pi^e"""
    ve = project(dec, y, "e", v)
    return dec.space.pairing(dec.model.apply_L(ve, y), ve)


def galerkin_modes(dec: Decomposition, m: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Lowest m modes of <L ., .> on X^e at y = 0, X1-orthonormal; returns
    (rows, energies).
    """
    space = dec.space
    n = space.dim
    if m <= 0:
        return np.zeros((0, n)), np.zeros(0)
    r = n - dec.rank
    if m > r:
        raise ParameterError(f"requested {m} Galerkin modes but X^e has dimension {r}")
    zero = np.zeros(dec.model.n_translation)
    P = materialize(lambda v: project(dec, zero, "e", v), n)
    u, _, _ = scipy.linalg.svd(P)
    basis = u[:, :r]
    L = dec._dense.get("L")
    if L is None:
        L = materialize(lambda v: dec.model.apply_L(v, zero), n)
    W = materialize(space.x1_whiten, n)
    Bw = W @ basis
    H = basis.T @ L @ basis
    energies, coefficients = scipy.linalg.eigh(0.5 * (H + H.T), Bw.T @ Bw, subset_by_index=[0, m - 1])
    modes = (basis @ coefficients).T
    modes = np.array([project(dec, zero, "e", _canonical_sign(v)) for v in modes])
    energies = np.array([space.pairing(dec.model.apply_L(v, zero), v) for v in modes])
    logger.info(f"Galerkin modes on X^e: energies {np.round(energies, 6).tolist()}")
    return modes, energies


def pseudospectrum(dec: Decomposition, points: Sequence[complex]) -> List[Tuple[complex, float]]:
    """Smallest singular value of JL - z at each sample point z"""
    A = dec._dense.get("A")
    if A is None:
        zero = np.zeros(dec.model.n_translation)
        A = materialize(lambda v: dec.model.apply_JL(v, zero), dec.space.dim)
    identity = np.eye(A.shape[0])
    return [(complex(z), float(scipy.linalg.svdvals(A - z * identity)[-1])) for z in points]


def nondegeneracy_report(dec: Decomposition) -> dict:
    """(H1) kernel spanned by translations, (H2) d equals the Morse index"""
    h1 = dec.dim_ker == dec.n_translation
    h2 = dec.d == dec.morse_index
    report = {
        "H1": bool(h1),
        "H2": bool(h2),
        "dim_ker": dec.dim_ker,
        "n_translation": dec.n_translation,
        "d": dec.d,
        "morse_index": dec.morse_index,
        "near_zero": dec.near_zero,
        "d1": dec.d1,
        "d2": dec.d2,
    }
    if dec.near_zero > dec.dim_ker:
        report["flag"] = "near-zero eigenvalues of L beyond the kernel; (H2) count not decided"
    return report


@dataclass
class TrichotomyReport:
    C: float
    lam: float
    lam_spectral: float
    d1_degree: float
    center_rate: float
    stable_rate: float
    stable_decay: float
    residuals: Dict[str, float] = field(default_factory=dict)
    eigenvalue_table: List[List[float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "C": self.C,
            "lambda": self.lam,
            "lambda_spectral": self.lam_spectral,
            "d1_degree": self.d1_degree,
            "center_rate": self.center_rate,
            "stable_rate": self.stable_rate,
            "stable_decay": self.stable_decay,
            "residuals": self.residuals,
            "eigenvalues": self.eigenvalue_table,
        }


def _linear_flow(dec: Decomposition, v0: np.ndarray, horizon: float, num: int) -> np.ndarray:
    A = dec._dense.get("A")
    if A is None:
        model = dec.model
        zero = np.zeros(model.n_translation)
        n = model.dim
        A = LinearOperator((n, n), matvec=lambda v: model.apply_JL(v, zero),
                           rmatvec=lambda v: -model.apply_L(model.apply_J(v), zero), dtype=float)
        return expm_multiply(A, v0, start=0.0, stop=horizon, num=num, endpoint=True, traceA=0.0)
    return expm_multiply(A, v0, start=0.0, stop=horizon, num=num, endpoint=True)


def measure_trichotomy(dec: Decomposition, horizon: float, rng: Optional[np.random.Generator] = None,
                       num: int = 201) -> TrichotomyReport:
    """
    Integrate e^{tJL} on random samples of X^+, X^- and X^c = X^T + X^d1 + X^e + X^d2
    and fit the growth laws.
    """
    if not horizon > 0:
        raise ParameterError(f"horizon must be positive, got {horizon}")
    rng = rng or np.random.default_rng(0)
    space = dec.space
    zero = np.zeros(dec.model.n_translation)
    times = np.linspace(0.0, horizon, num)
    residuals = {}
    lam_fit, C, stable_rate, stable_decay = 0.0, 1.0, 0.0, 0.0

    if dec.d:
        v0 = reconstruct(dec, zero, "+", rng.standard_normal(dec.d))
        norms = np.array([space.x1_norm(v) for v in _linear_flow(dec, v0, horizon, num)])
        window = times >= min(1.0 / max(dec.lam, 1e-12), 0.5 * horizon)
        fit = linregress(times[window], np.log(norms[window]))
        lam_fit = float(fit.slope)
        C = float(np.max(norms * np.exp(-lam_fit * times)) / norms[0])
        residuals["unstable"] = float(1.0 - fit.rvalue ** 2)

        stable_horizon = min(horizon, 6.0 / dec.lam)
        s_times = np.linspace(0.0, stable_horizon, num)
        v0 = reconstruct(dec, zero, "-", rng.standard_normal(dec.d))
        s_norms = np.array([space.x1_norm(v) for v in _linear_flow(dec, v0, stable_horizon, num)])
        window = s_times >= min(1.0 / dec.lam, 0.5 * stable_horizon)
        fit = linregress(s_times[window], np.log(s_norms[window]))
        stable_rate = float(fit.slope)
        stable_decay = float(s_norms[-1] / s_norms[0])
        residuals["stable"] = float(1.0 - fit.rvalue ** 2)

    w = space.random_vector(rng)
    vc = w - project_field(dec, zero, "+", w) - project_field(dec, zero, "-", w)
    c_norms = np.array([space.x1_norm(v) for v in _linear_flow(dec, vc, horizon, num)])
    design = np.column_stack([np.ones_like(times), times, np.log1p(times)])
    coefficients, residual, _, _ = np.linalg.lstsq(design, np.log(c_norms), rcond=None)
    center_rate, degree = float(coefficients[1]), float(coefficients[2])
    residuals["center"] = float(residual[0]) / num if residual.size else 0.0

    table = [[complex(z).real, complex(z).imag] for z in dec.eigenvalues
             if abs(complex(z).real) > dec.tol * dec.info.get("a_norm", 1.0)]
    report = TrichotomyReport(C=C, lam=lam_fit, lam_spectral=dec.lam, d1_degree=degree,
                              center_rate=center_rate, stable_rate=stable_rate, stable_decay=stable_decay,
                              residuals=residuals, eigenvalue_table=table)
    logger.info(f"Trichotomy: lambda fit {lam_fit:.6g} (spectral {dec.lam:.6g}), center rate "
                f"{center_rate:.3e}, degree {degree:.3f}")
    return report


def save_decomposition(dec: Decomposition, path: str):
    """JSON summary plus basis snapshots (fields) or inline rows (Euclidean models)"""
    stem = os.path.splitext(path)[0]
    space = dec.space

    def rows_out(kind: str, tag: str, rows: np.ndarray):
        if isinstance(space, FieldSpace):
            names = []
            for j, row in enumerate(rows):
                name = f"{stem}_{kind}_{TAGS.index(tag)}_{j}.imkf"
                write_snapshot(Field.from_vector(space.grid, row), name)
                names.append(os.path.basename(name))
            return names
        return rows.tolist()

    record = {
        "model": dec.model.describe(),
        "summary": dec.summary(),
        "lambda": dec.lam,
        "eigenvalues": [[complex(z).real, complex(z).imag] for z in dec.eigenvalues],
        "M": dec.M.tolist(),
        "blocks": {f"{b},{a}": dec.block(b, a).tolist() for b in TAGS for a in TAGS
                   if dec.block(b, a).size},
        "bases": {tag: rows_out("V", tag, dec.bases[tag]) for tag in TAGS},
        "duals": {tag: rows_out("Z", tag, dec.duals[tag]) for tag in TAGS},
        "info": {k: v for k, v in dec.info.items()},
    }
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2, default=float)
    logger.info(f"Saved decomposition to {path}")


def load_decomposition(path: str, model: LinearizedModel) -> Decomposition:
    with open(path) as fh:
        record = json.load(fh)
    folder = os.path.dirname(path)
    n = model.dim

    def rows_in(entries) -> np.ndarray:
        if entries and isinstance(entries[0], str):
            return np.array([read_snapshot(os.path.join(folder, e)).to_vector() for e in entries])
        return np.array(entries, dtype=float).reshape(len(entries), n)

    bases = {tag: rows_in(record["bases"][tag]) for tag in TAGS}
    duals = {tag: rows_in(record["duals"][tag]) for tag in TAGS}
    summary = record["summary"]
    eigenvalues = np.array([complex(re, im) for re, im in record["eigenvalues"]])
    rank = sum(b.shape[0] for b in bases.values())
    M = np.array(record["M"], dtype=float).reshape(rank, rank)
    return Decomposition(model=model, bases=bases, duals=duals, M=M, lam=float(record["lambda"]),
                         eigenvalues=eigenvalues, tol=summary["tol"], morse_index=summary["morse_index"],
                         dim_ker=summary["dim_ker"], near_zero=summary["near_zero"], info=record["info"])
