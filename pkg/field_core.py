#!/usr/bin/env python3
"""
Field Core
Periodic grids, complex fields stored as real pairs, Fourier multipliers,
spectral translations and the norms used throughout the toolkit.
"""

import logging
import math
import struct
from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.fft
from scipy.integrate import trapezoid
from PIL import Image

from errors import DomainError, ParameterError, ShapeError

logger = logging.getLogger(__name__)

# scipy.fft worker pool; -1 uses every core
FFT_WORKERS = -1

SNAPSHOT_MAGIC = b"IMKF"
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class Grid:
    """Periodic lattice with physical box lengths per axis"""
    dims: Tuple[int, ...]
    lengths: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
        object.__setattr__(self, "lengths", tuple(float(L) for L in self.lengths))
        if len(self.dims) not in (1, 2, 3):
            raise ShapeError(f"spatial dimension must be 1, 2 or 3, got {len(self.dims)}")
        if len(self.dims) != len(self.lengths):
            raise ShapeError(f"{len(self.dims)} lattice sizes but {len(self.lengths)} box lengths")
        for n in self.dims:
            if n < 8 or n % 2:
                raise ShapeError(f"lattice sizes must be even and >= 8, got {n}")
        for L in self.lengths:
            if not L > 0.0:
                raise ShapeError(f"box lengths must be positive, got {L}")

    @property
    def spatial_dim(self) -> int:
        return len(self.dims)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.dims

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    @property
    def spacing(self) -> Tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.lengths, self.dims))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def axis_coordinates(self, axis: int) -> np.ndarray:
        n, L = self.dims[axis], self.lengths[axis]
        return -0.5 * L + (L / n) * np.arange(n)

    def coordinates(self) -> List[np.ndarray]:
        axes = [self.axis_coordinates(j) for j in range(self.spatial_dim)]
        return list(np.meshgrid(*axes, indexing="ij"))

    def axis_wavenumbers(self, axis: int) -> np.ndarray:
        n, L = self.dims[axis], self.lengths[axis]
        return 2.0 * np.pi * scipy.fft.fftfreq(n, d=L / n)

    def wavevectors(self) -> List[np.ndarray]:
        return _tables(self).k


@dataclass(frozen=True)
class _SpectralTables:
    k: List[np.ndarray]
    k_squared: np.ndarray
    k_abs: np.ndarray
    grad: List[np.ndarray]
    x1_weight_re: np.ndarray
    x1_weight_im: np.ndarray
    whiten_im: np.ndarray


@lru_cache(maxsize=32)
def _tables(grid: Grid) -> _SpectralTables:
    axes = [grid.axis_wavenumbers(j) for j in range(grid.spatial_dim)]
    k = list(np.meshgrid(*axes, indexing="ij"))
    k_squared = sum(kj ** 2 for kj in k)
    grad = []
    for j, kj in enumerate(k):
        sym = 1j * kj
        # odd symbol: the Nyquist plane has no real representative
        nyq = [slice(None)] * grid.spatial_dim
        nyq[j] = grid.dims[j] // 2
        sym[tuple(nyq)] = 0.0
        grad.append(sym)
    whiten_im = k_squared.copy()
    whiten_im.flat[0] = 1.0
    return _SpectralTables(
        k=k,
        k_squared=k_squared,
        k_abs=np.sqrt(k_squared),
        grad=grad,
        x1_weight_re=1.0 + k_squared,
        x1_weight_im=k_squared,
        whiten_im=whiten_im,
    )


def fft(a: np.ndarray) -> np.ndarray:
    return scipy.fft.fftn(a, workers=FFT_WORKERS)


def ifft(a: np.ndarray) -> np.ndarray:
    return scipy.fft.ifftn(a, workers=FFT_WORKERS)


def filter_array(a: np.ndarray, symbol: np.ndarray) -> np.ndarray:
    """Apply a Fourier multiplier to one real array"""
    return ifft(symbol * fft(a)).real


def spectral_derivative(a: np.ndarray, grid: Grid, axis: int) -> np.ndarray:
    return filter_array(a, _tables(grid).grad[axis])


def spectral_laplacian(a: np.ndarray, grid: Grid) -> np.ndarray:
    return filter_array(a, -_tables(grid).k_squared)


def directional_derivative(a: np.ndarray, grid: Grid, direction: Sequence[float]) -> np.ndarray:
    """c . grad a for a constant vector c"""
    tables = _tables(grid)
    symbol = sum(float(cj) * g for cj, g in zip(direction, tables.grad))
    if np.isscalar(symbol):
        return np.zeros_like(a)
    return filter_array(a, symbol)


@dataclass(frozen=True, eq=False)
class Field:
    """Complex grid function stored as the real pair (w1, w2)"""
    grid: Grid
    re: np.ndarray
    im: np.ndarray

    def __post_init__(self):
        re = np.array(self.re, dtype=float)
        im = np.array(self.im, dtype=float)
        if re.shape != self.grid.shape or im.shape != self.grid.shape:
            raise ShapeError(f"arrays {re.shape}/{im.shape} do not conform to grid {self.grid.shape}")
        if not (np.all(np.isfinite(re)) and np.all(np.isfinite(im))):
            raise DomainError("field entries must be finite")
        re.setflags(write=False)
        im.setflags(write=False)
        object.__setattr__(self, "re", re)
        object.__setattr__(self, "im", im)

    @classmethod
    def zeros(cls, grid: Grid) -> "Field":
        return cls(grid, np.zeros(grid.shape), np.zeros(grid.shape))

    @classmethod
    def from_complex(cls, grid: Grid, z: np.ndarray) -> "Field":
        z = np.asarray(z)
        return cls(grid, z.real, z.imag)

    @classmethod
    def from_vector(cls, grid: Grid, v: np.ndarray) -> "Field":
        v = np.asarray(v, dtype=float)
        if v.shape != (2 * grid.size,):
            raise ShapeError(f"vector of length {v.shape} cannot hold a field on {grid.shape}")
        return cls(grid, v[:grid.size].reshape(grid.shape), v[grid.size:].reshape(grid.shape))

    def to_complex(self) -> np.ndarray:
        return self.re + 1j * self.im

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.re.ravel(), self.im.ravel()])

    def __add__(self, other: "Field") -> "Field":
        _check_same_grid(self, other)
        return Field(self.grid, self.re + other.re, self.im + other.im)

    def __sub__(self, other: "Field") -> "Field":
        _check_same_grid(self, other)
        return Field(self.grid, self.re - other.re, self.im - other.im)

    def __mul__(self, scalar: float) -> "Field":
        return Field(self.grid, scalar * self.re, scalar * self.im)

    __rmul__ = __mul__

    def __neg__(self) -> "Field":
        return Field(self.grid, -self.re, -self.im)


def _check_same_grid(f: Field, g: Field):
    if f.grid != g.grid:
        raise ShapeError("fields live on different grids")


def _symbol_array(grid: Grid, symbol) -> np.ndarray:
    if callable(symbol):
        sym = np.asarray(symbol(_tables(grid).k))
        sym = np.broadcast_to(sym, grid.shape)
    else:
        sym = np.asarray(symbol)
        if sym.shape != grid.shape:
            raise ShapeError(f"symbol of shape {sym.shape} does not match grid {grid.shape}")
    if not np.all(np.isfinite(sym)):
        raise ParameterError("multiplier symbol must be finite on every grid wavevector")
    return sym


def apply_multiplier(f: Field, symbol: Union[Callable, np.ndarray]) -> Field:
    """
    Apply the Fourier multiplier with the given symbol to each component of f.
    symbol is either an array on the grid spectrum or a callable taking the
    list of wavevector component arrays.
    """
    sym = _symbol_array(f.grid, symbol)
    return Field(f.grid, filter_array(f.re, sym), filter_array(f.im, sym))


def translation_phase(grid: Grid, y: Sequence[float]) -> np.ndarray:
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.shape != (grid.spatial_dim,):
        raise ShapeError(f"displacement of shape {y.shape} for a {grid.spatial_dim}D grid")
    k = _tables(grid).k
    return np.exp(1j * sum(kj * yj for kj, yj in zip(k, y)))


def translate_array(a: np.ndarray, grid: Grid, y: Sequence[float]) -> np.ndarray:
    if not np.any(y):
        return np.array(a, dtype=float)
    return filter_array(a, translation_phase(grid, y))


def translate(f: Field, y: Sequence[float]) -> Field:
    """Return f(. + y) by spectral phase shift"""
    if not np.any(y):
        translation_phase(f.grid, y)
        return f
    phase = translation_phase(f.grid, y)
    return Field(f.grid, filter_array(f.re, phase), filter_array(f.im, phase))


def gradient(f: Field, axis: int) -> Field:
    return Field(f.grid, spectral_derivative(f.re, f.grid, axis), spectral_derivative(f.im, f.grid, axis))


def laplacian(f: Field) -> Field:
    return Field(f.grid, spectral_laplacian(f.re, f.grid), spectral_laplacian(f.im, f.grid))


def bump_symbol(radius: float) -> Callable:
    """
    Smooth radial cut-off: 1 on |xi| <= radius/2, 0 on |xi| >= radius,
    with an exp-based C-infinity transition in between.
    """
    if not radius > 0:
        raise ParameterError(f"cut-off radius must be positive, got {radius}")

    def _smooth(x):
        out = np.zeros_like(x)
        pos = x > 0
        out[pos] = np.exp(-1.0 / x[pos])
        return out

    def symbol(k: List[np.ndarray]) -> np.ndarray:
        r = np.sqrt(sum(kj ** 2 for kj in k))
        t = np.clip((r - 0.5 * radius) / (0.5 * radius), 0.0, 1.0)
        a, b = _smooth(1.0 - t), _smooth(t)
        return a / (a + b)

    return symbol


def random_smooth_field(grid: Grid, rng: np.random.Generator, amplitude: float = 1.0,
                        k_cut: Optional[float] = None) -> Field:
    """Band-limited random field, Nyquist-free, with max modulus ~ amplitude"""
    tables = _tables(grid)
    if k_cut is None:
        k_cut = 0.25 * min(np.pi * n / L for n, L in zip(grid.dims, grid.lengths))
    taper = np.where(tables.k_abs < k_cut, (1.0 - tables.k_abs / k_cut) ** 2, 0.0)
    parts = []
    for _ in range(2):
        parts.append(filter_array(rng.standard_normal(grid.shape), taper))
    scale = max(np.max(np.abs(parts[0])), np.max(np.abs(parts[1])), 1e-300)
    return Field(grid, amplitude * parts[0] / scale, amplitude * parts[1] / scale)


@dataclass(frozen=True)
class NormKind:
    """Tag selecting one of the toolkit norms"""
    tag: str
    p: float = 2.0
    s: float = 0.0
    Q: float = 2.0

    def __post_init__(self):
        if self.tag not in ("X1", "L2", "Lp", "W1p", "BesovBlock", "Qweighted"):
            raise ParameterError(f"unknown norm kind '{self.tag}'")
        if not 1.0 <= self.p <= math.inf:
            raise ParameterError(f"exponent p must lie in [1, inf], got {self.p}")
        if self.tag == "Qweighted" and not self.Q > 1.0:
            raise ParameterError(f"Q must exceed 1, got {self.Q}")

    @classmethod
    def X1(cls) -> "NormKind":
        return cls("X1")

    @classmethod
    def L2(cls) -> "NormKind":
        return cls("L2")

    @classmethod
    def Lp(cls, p: float) -> "NormKind":
        return cls("Lp", p=p)

    @classmethod
    def W1p(cls, p: float) -> "NormKind":
        return cls("W1p", p=p)

    @classmethod
    def BesovBlock(cls, p: float, s: float) -> "NormKind":
        return cls("BesovBlock", p=p, s=s)

    @classmethod
    def Qweighted(cls, Q: float) -> "NormKind":
        return cls("Qweighted", Q=Q)


def _lp_of_modulus(modulus: np.ndarray, p: float, cell_volume: float) -> float:
    if math.isinf(p):
        return float(np.max(modulus)) if modulus.size else 0.0
    return float((cell_volume * np.sum(modulus ** p)) ** (1.0 / p))


def _x1_squared(f: Field) -> float:
    tables = _tables(f.grid)
    scale = f.grid.cell_volume / f.grid.size
    a, b = fft(f.re), fft(f.im)
    return float(scale * (np.sum(tables.x1_weight_re * np.abs(a) ** 2)
                          + np.sum(tables.x1_weight_im * np.abs(b) ** 2)))


def littlewood_paley_masks(grid: Grid, homogeneous: bool = False) -> List[Tuple[float, np.ndarray]]:
    """
    Dyadic shells 2^j <= |xi| < 2^(j+1) intersected with the grid spectrum,
    returned as (2^j, mask) pairs. The inhomogeneous family starts with the
    low block |xi| < 1 (weight 1); the homogeneous family resolves the shells
    below 1 and drops the zero mode.
    """
    k_abs = _tables(grid).k_abs
    k_top = float(np.max(k_abs))
    positive = k_abs[k_abs > 0]
    blocks = []
    if homogeneous:
        j = int(math.floor(math.log2(float(np.min(positive)))))
    else:
        blocks.append((1.0, k_abs < 1.0))
        j = 0
    while 2.0 ** j <= k_top:
        mask = (k_abs >= 2.0 ** j) & (k_abs < 2.0 ** (j + 1))
        if np.any(mask):
            blocks.append((2.0 ** j, mask))
        j += 1
    return blocks


def littlewood_paley_blocks(f: Field) -> List[Field]:
    """Split f into its inhomogeneous Littlewood-Paley blocks"""
    blocks = []
    for _, mask in littlewood_paley_masks(f.grid):
        sym = mask.astype(float)
        blocks.append(Field(f.grid, filter_array(f.re, sym), filter_array(f.im, sym)))
    return blocks


def _besov_arrays(arrays: Sequence[np.ndarray], grid: Grid, p: float, s: float,
                  homogeneous: bool) -> float:
    total = 0.0
    for scale, mask in littlewood_paley_masks(grid, homogeneous):
        sym = mask.astype(float)
        parts = [filter_array(a, sym) for a in arrays]
        modulus = np.sqrt(sum(q ** 2 for q in parts))
        total += (scale ** s * _lp_of_modulus(modulus, p, grid.cell_volume)) ** 2
    return math.sqrt(total)


def besov_pair_norm(f: Field, q: float) -> float:
    """||w1||_{B^1_{q,2}} + ||w2||_{homogeneous B^1_{q,2}}"""
    return (_besov_arrays([f.re], f.grid, q, 1.0, False)
            + _besov_arrays([f.im], f.grid, q, 1.0, True))


def norm(f: Field, kind: NormKind) -> float:
    """Evaluate the named norm of f by quadrature or Parseval"""
    grid = f.grid
    if kind.tag == "L2":
        return math.sqrt(grid.cell_volume * float(np.sum(f.re ** 2 + f.im ** 2)))
    if kind.tag == "X1":
        return math.sqrt(max(_x1_squared(f), 0.0))
    if kind.tag == "Qweighted":
        return kind.Q ** 2 * math.sqrt(max(_x1_squared(f), 0.0))
    if kind.tag == "Lp":
        return _lp_of_modulus(np.sqrt(f.re ** 2 + f.im ** 2), kind.p, grid.cell_volume)
    if kind.tag == "W1p":
        pieces = [np.sqrt(f.re ** 2 + f.im ** 2)]
        for j in range(grid.spatial_dim):
            g = gradient(f, j)
            pieces.append(np.sqrt(g.re ** 2 + g.im ** 2))
        if math.isinf(kind.p):
            return max(float(np.max(q)) for q in pieces)
        return float(sum(_lp_of_modulus(q, kind.p, grid.cell_volume) ** kind.p
                         for q in pieces) ** (1.0 / kind.p))
    return _besov_arrays([f.re, f.im], grid, kind.p, kind.s, False)


def qweighted_norm(Q: float, y=None, a_d1=None, a_d2=None, a_plus=None, a_minus=None,
                   v_norm: float = 0.0) -> float:
    """|y| + Q|a_d1| + Q^3|a_d2| + |a_plus| + |a_minus| + Q^2 ||V||_X1"""
    if not Q > 1.0:
        raise ParameterError(f"Q must exceed 1, got {Q}")

    def _abs(a):
        return 0.0 if a is None else float(np.linalg.norm(np.atleast_1d(a)))

    return (_abs(y) + Q * _abs(a_d1) + Q ** 3 * _abs(a_d2) + _abs(a_plus) + _abs(a_minus)
            + Q ** 2 * float(v_norm))


def spacetime_norm(samples: Sequence, times: Sequence[float], exponents: Tuple[float, float],
                   eta: float = 0.0, pivot: float = 0.0,
                   spatial: Optional[Callable] = None) -> float:
    """
    Weighted space-time norm (int (e^{eta|t - pivot|} ||f(t)||)^p dt)^{1/p}.
    The spatial norm defaults to the Besov pair norm with exponent q.
    """
    if len(samples) == 0:
        raise DomainError("space-time norm of an empty sample list")
    p, q = exponents
    for e in (p, q):
        if not 1.0 <= e <= math.inf:
            raise ParameterError(f"exponents must lie in [1, inf], got {exponents}")
    admissible = 2.0 <= p and 2.0 <= q and abs(2.0 / p + 3.0 / q - 1.5) < 1e-12
    if not admissible:
        logger.warning(f"exponent pair ({p}, {q}) is not a Strichartz pair")
    times = np.asarray(times, dtype=float)
    if times.shape != (len(samples),):
        raise ShapeError(f"{len(samples)} samples but {times.shape} times")
    if len(times) > 2 and not np.allclose(np.diff(times), times[1] - times[0], rtol=1e-8, atol=1e-12):
        raise DomainError("samples must be uniformly spaced in time")
    if spatial is None:
        def spatial(f):
            if isinstance(f, Field):
                return besov_pair_norm(f, q)
            return float(np.linalg.norm(f))
    values = np.array([spatial(f) for f in samples]) * np.exp(eta * np.abs(times - pivot))
    if math.isinf(p):
        return float(np.max(values))
    if len(values) == 1:
        return 0.0
    return float(trapezoid(values ** p, times) ** (1.0 / p))


class PhaseSpace(ABC):
    """
    Real phase space with the L2 pairing, the X1 inner product and the
    translation action. States are flat float vectors of length dim.
    """

    dim: int
    n_translation: int

    @abstractmethod
    def pair_rows(self, rows: np.ndarray, v: np.ndarray) -> np.ndarray:
        """L2 pairings of each row of rows with v"""

    @abstractmethod
    def riesz(self, v: np.ndarray) -> np.ndarray:
        """Riesz image R v with pairing(R v, w) = <v, w>_X1"""

    @abstractmethod
    def translate(self, v: np.ndarray, y: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def gradient(self, v: np.ndarray, axis: int) -> np.ndarray:
        pass

    @abstractmethod
    def x1_whiten(self, v: np.ndarray) -> np.ndarray:
        """Coordinates whose Euclidean norm is the X1 norm"""

    @abstractmethod
    def x1_unwhiten(self, z: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def random_vector(self, rng: np.random.Generator, amplitude: float = 1.0) -> np.ndarray:
        pass

    def pairing(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(self.pair_rows(np.atleast_2d(a), b)[0])

    def gram(self, rows_a: np.ndarray, rows_b: np.ndarray) -> np.ndarray:
        return np.array([self.pair_rows(rows_a, b) for b in np.atleast_2d(rows_b)]).T

    def x1_inner(self, a: np.ndarray, b: np.ndarray) -> float:
        return self.pairing(self.riesz(a), b)

    def x1_norm(self, v: np.ndarray) -> float:
        return math.sqrt(max(self.x1_inner(v, v), 0.0))

    def x1_gram(self, rows_a: np.ndarray, rows_b: np.ndarray) -> np.ndarray:
        riesz_rows = np.array([self.riesz(a) for a in np.atleast_2d(rows_a)])
        return self.gram(riesz_rows, rows_b)

    def directional_gradient(self, v: np.ndarray, z: np.ndarray) -> np.ndarray:
        out = np.zeros_like(v)
        for j, zj in enumerate(np.atleast_1d(z)):
            if zj != 0.0:
                out = out + zj * self.gradient(v, j)
        return out


class FieldSpace(PhaseSpace):
    """Phase space of fields on a periodic grid (X1 = H^1 x homogeneous H^1)"""

    def __init__(self, grid: Grid, translation_axes: Optional[Sequence[int]] = None):
        self.grid = grid
        self.dim = 2 * grid.size
        self.translation_axes = tuple(range(grid.spatial_dim) if translation_axes is None
                                      else translation_axes)
        self.n_translation = len(self.translation_axes)

    def _split(self, v: np.ndarray):
        n = self.grid.size
        return v[:n].reshape(self.grid.shape), v[n:].reshape(self.grid.shape)

    def _join(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return np.concatenate([a.ravel(), b.ravel()])

    def to_field(self, v: np.ndarray) -> Field:
        return Field.from_vector(self.grid, v)

    def pair_rows(self, rows: np.ndarray, v: np.ndarray) -> np.ndarray:
        return self.grid.cell_volume * (np.atleast_2d(rows) @ v)

    def riesz(self, v: np.ndarray) -> np.ndarray:
        tables = _tables(self.grid)
        a, b = self._split(v)
        return self._join(filter_array(a, tables.x1_weight_re), filter_array(b, tables.x1_weight_im))

    def translate(self, v: np.ndarray, y: np.ndarray) -> np.ndarray:
        y_full = np.zeros(self.grid.spatial_dim)
        y_full[list(self.translation_axes)] = np.atleast_1d(y)
        if not np.any(y_full):
            return np.array(v, dtype=float)
        phase = translation_phase(self.grid, y_full)
        a, b = self._split(v)
        return self._join(filter_array(a, phase), filter_array(b, phase))

    def gradient(self, v: np.ndarray, axis: int) -> np.ndarray:
        real_axis = self.translation_axes[axis]
        a, b = self._split(v)
        return self._join(spectral_derivative(a, self.grid, real_axis),
                          spectral_derivative(b, self.grid, real_axis))

    def x1_whiten(self, v: np.ndarray) -> np.ndarray:
        tables = _tables(self.grid)
        a, b = self._split(v)
        scale = math.sqrt(self.grid.cell_volume)
        return scale * self._join(filter_array(a, np.sqrt(tables.x1_weight_re)),
                                  filter_array(b, np.sqrt(tables.whiten_im)))

    def x1_unwhiten(self, z: np.ndarray) -> np.ndarray:
        tables = _tables(self.grid)
        a, b = self._split(z)
        scale = 1.0 / math.sqrt(self.grid.cell_volume)
        return scale * self._join(filter_array(a, 1.0 / np.sqrt(tables.x1_weight_re)),
                                  filter_array(b, 1.0 / np.sqrt(tables.whiten_im)))

    def random_vector(self, rng: np.random.Generator, amplitude: float = 1.0) -> np.ndarray:
        return random_smooth_field(self.grid, rng, amplitude).to_vector()


def write_snapshot(f: Field, path: str):
    """Write f in the little-endian IMKF snapshot format"""
    grid = f.grid
    header = SNAPSHOT_MAGIC + struct.pack("<II", SNAPSHOT_VERSION, grid.spatial_dim)
    header += struct.pack(f"<{grid.spatial_dim}I", *grid.dims)
    header += struct.pack(f"<{grid.spatial_dim}d", *grid.lengths)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(f.re, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(f.im, dtype="<f8").tobytes())
    logger.debug(f"Wrote snapshot {path} ({grid.dims})")


def read_snapshot(path: str) -> Field:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != SNAPSHOT_MAGIC:
        raise DomainError(f"{path} is not an IMKF snapshot")
    version, dim = struct.unpack_from("<II", data, 4)
    if version != SNAPSHOT_VERSION:
        raise DomainError(f"unsupported snapshot version {version}")
    offset = 12
    dims = struct.unpack_from(f"<{dim}I", data, offset)
    offset += 4 * dim
    lengths = struct.unpack_from(f"<{dim}d", data, offset)
    offset += 8 * dim
    grid = Grid(dims, lengths)
    count = grid.size
    arrays = np.frombuffer(data, dtype="<f8", count=2 * count, offset=offset)
    return Field(grid, arrays[:count].reshape(grid.shape), arrays[count:].reshape(grid.shape))


def save_density_png(f: Field, path: str, pixel_scale: int = 4):
    """Render |U|^2 as a grayscale PNG (1D fields become a horizontal strip)"""
    density = f.re ** 2 + f.im ** 2
    if density.ndim == 1:
        density = np.tile(density, (16, 1))
    elif density.ndim == 3:
        density = density[:, :, density.shape[2] // 2]
    else:
        density = density.T
    top = float(np.max(density))
    pixels = np.uint8(np.clip(255.0 * density / (top if top > 0 else 1.0), 0, 255))
    image = Image.fromarray(pixels)
    image = image.resize((image.width * pixel_scale, image.height * pixel_scale),
                         Image.Resampling.NEAREST)
    image.save(path)
    logger.info(f"Saved density image {path}")
