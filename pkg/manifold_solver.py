#!/usr/bin/env python3
"""
Manifold Solver
Lyapunov-Perron construction of the center-unstable and center-stable graphs
of the cut-off system, the center graph as their simultaneous fixed point,
and the first-order jet through the variational equation.

A graph is sampled on a tensor grid over the finite coordinates it depends on
(the d1, d2 and + or - coefficient blocks) crossed with m Galerkin
coordinates of V^e, and interpolated with scipy's RegularGridInterpolator.
Values depend on y only through translating V^e back to the reference fiber.
"""

import json
import logging
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import spsolve

from bundle_reduction import (
    BundlePoint, CutoffParams, CutoffSystem, check_parameter_gates, coefficient_slices, contraction_bound,
)
from errors import ConvergenceError, ParameterError, ParameterRegimeError, ShapeError
from propagator import IntegratorConfig, integrate
from spectral_decomposition import Decomposition, galerkin_modes, project

logger = logging.getLogger(__name__)

SIDES = ("cu", "cs", "c")
INPUT_TAGS = {"cu": ("d1", "d2", "+"), "cs": ("d1", "d2", "-"), "c": ("d1", "d2")}
OUTPUT_TAGS = {"cu": ("-",), "cs": ("+",), "c": ("+", "-")}
AXIS_WEIGHT_POWER = {"d1": 1, "d2": 3, "+": 0, "-": 0, "xi": 2}

GRAPH_MAGIC = b"IMGF"
GRAPH_VERSION = 1
NON_CONTRACTION_LIMIT = 3


@dataclass(frozen=True)
class GraphDesign:
    """Sampling design of a graph: half-width box * delta, points per axis, Galerkin slice size"""
    side: str = "cu"
    box: float = 0.3
    points: int = 9
    galerkin: int = 2
    interp: str = "cubic"
    horizon: Optional[float] = None
    dt: float = 0.05
    scheme: str = "splitting"
    workers: int = 4

    def __post_init__(self):
        if self.side not in SIDES:
            raise ParameterError(f"side must be one of {SIDES}, got '{self.side}'")
        if not 0 < self.box <= 1.0:
            raise ParameterError(f"box must lie in (0, 1], got {self.box}")
        if self.points < 3 or self.points % 2 == 0:
            raise ParameterError(f"points per axis must be odd and >= 3, got {self.points}")
        if self.interp not in ("linear", "cubic"):
            raise ParameterError(f"interp must be 'linear' or 'cubic', got '{self.interp}'")
        if self.interp == "cubic" and self.points < 5:
            raise ParameterError("cubic interpolation needs at least 5 points per axis")
        if self.galerkin < 0:
            raise ParameterError(f"galerkin must be non-negative, got {self.galerkin}")

    def integrator(self) -> IntegratorConfig:
        return IntegratorConfig(dt=self.dt, scheme=self.scheme)


def _layout(dec: Decomposition, side: str, m: int) -> Tuple[List[int], List[int], List[str]]:
    """Indices into BundlePoint.a of the graph inputs and outputs, with axis labels"""
    sl = coefficient_slices(dec)
    inputs, labels = [], []
    for tag in INPUT_TAGS[side]:
        for i in range(sl[tag].start, sl[tag].stop):
            inputs.append(i)
            labels.append(f"{tag}[{i - sl[tag].start}]")
    labels += [f"xi[{j}]" for j in range(m)]
    outputs = [i for tag in OUTPUT_TAGS[side] for i in range(sl[tag].start, sl[tag].stop)]
    return inputs, outputs, labels


class GraphFn:
    """
    Sampled graph h over the chart ball. Samples live on a tensor grid;
    evaluation clips queries to the sampled box.
    """

    def __init__(self, side: str, axes: Sequence[np.ndarray], labels: Sequence[str], values: np.ndarray,
                 modes: np.ndarray, inputs: Sequence[int], outputs: Sequence[int], params: CutoffParams,
                 design: GraphDesign, jet1: Optional[np.ndarray] = None, diagnostics: Optional[dict] = None,
                 discarded: float = 0.0):
        self.side = side
        self.axes = [np.asarray(a, dtype=float) for a in axes]
        self.labels = list(labels)
        self.values = np.asarray(values, dtype=float)
        self.modes = np.asarray(modes, dtype=float)
        self.inputs = list(inputs)
        self.outputs = list(outputs)
        self.params = params
        self.design = design
        self.jet1 = None if jet1 is None else np.asarray(jet1, dtype=float)
        self.diagnostics = dict(diagnostics or {})
        expected = tuple(len(a) for a in self.axes) + (len(self.outputs),)
        if self.values.shape != expected:
            raise ShapeError(f"graph values of shape {self.values.shape}, expected {expected}")
        if len(self.labels) != len(self.axes):
            raise ShapeError("one label per axis required")
        self._interp = None
        self._jet_interp = None
        self._discarded = float(discarded)

    @classmethod
    def zeros(cls, dec: Decomposition, params: CutoffParams, design: GraphDesign,
              modes: Optional[np.ndarray] = None) -> "GraphFn":
        if modes is None:
            modes, _ = galerkin_modes(dec, design.galerkin)
        inputs, outputs, labels = _layout(dec, design.side, modes.shape[0])
        half = design.box * params.delta
        axes = [np.linspace(-half, half, design.points) for _ in labels]
        values = np.zeros(tuple(len(a) for a in axes) + (len(outputs),))
        return cls(design.side, axes, labels, values, modes, inputs, outputs, params, design)

    def with_values(self, values: np.ndarray, jet1: Optional[np.ndarray] = None,
                    diagnostics: Optional[dict] = None, discarded: float = 0.0) -> "GraphFn":
        return GraphFn(self.side, self.axes, self.labels, values, self.modes, self.inputs, self.outputs,
                       self.params, self.design, jet1=jet1, diagnostics=diagnostics, discarded=discarded)

    @property
    def naxes(self) -> int:
        return len(self.axes)

    @property
    def out_dim(self) -> int:
        return len(self.outputs)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(len(a) for a in self.axes)

    @property
    def discarded_energy(self) -> float:
        """Largest X1 norm of V^e left outside the Galerkin span along the orbits that produced this graph"""
        return self._discarded

    def sample_points(self) -> np.ndarray:
        if self.naxes == 0:
            return np.zeros((1, 0))
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def _clip(self, coords: np.ndarray) -> np.ndarray:
        lo = np.array([a[0] for a in self.axes])
        hi = np.array([a[-1] for a in self.axes])
        return np.clip(coords, lo, hi)

    def __call__(self, coords) -> np.ndarray:
        coords = np.asarray(coords, dtype=float)
        if self.naxes == 0 or self.out_dim == 0:
            return np.broadcast_to(self.values.reshape(-1)[:self.out_dim] if self.naxes else self.values,
                                   coords.shape[:-1] + (self.out_dim,)).copy()
        if self._interp is None:
            # one scalar interpolant per output component; cubic splines use a direct sparse solve
            options = {"solver": spsolve} if self.design.interp == "cubic" else {}
            self._interp = [RegularGridInterpolator(self.axes, self.values[..., j], method=self.design.interp,
                                                    **options)
                            for j in range(self.out_dim)]
        clipped = self._clip(coords)
        return np.stack([np.asarray(interp(clipped)) for interp in self._interp], axis=-1)

    def jet(self, coords) -> np.ndarray:
        """Interpolated Dh (out_dim x naxes) at domain coordinates"""
        if self.jet1 is None:
            raise ParameterError("graph carries no first-order jet")
        coords = np.asarray(coords, dtype=float)
        if self.naxes == 0:
            return np.zeros(coords.shape[:-1] + (self.out_dim, 0))
        if self._jet_interp is None:
            self._jet_interp = RegularGridInterpolator(self.axes, self.jet1, method="linear")
        return self._jet_interp(self._clip(coords))

    def coordinates_from(self, a: np.ndarray, xi: np.ndarray) -> np.ndarray:
        return np.concatenate([np.asarray(a)[self.inputs], xi])

    def galerkin_split(self, dec: Decomposition, y, V: np.ndarray) -> Tuple[np.ndarray, float]:
        """X1 coordinates of Pi^e V translated back to y = 0 on the mode slice, and the X1 norm left over"""
        space = dec.space
        y = np.atleast_1d(np.asarray(y, dtype=float))
        reference = space.translate(V, -y) if np.any(y) else V
        ve = project(dec, None, "e", reference)
        if self.modes.shape[0] == 0:
            return np.zeros(0), space.x1_norm(ve)
        xi = np.array([space.x1_inner(mode, ve) for mode in self.modes])
        return xi, space.x1_norm(ve - xi @ self.modes)

    def galerkin_coordinates(self, dec: Decomposition, y, V: np.ndarray) -> np.ndarray:
        return self.galerkin_split(dec, y, V)[0]

    def coordinates(self, dec: Decomposition, y, a: np.ndarray, V: np.ndarray) -> np.ndarray:
        return self.coordinates_from(a, self.galerkin_coordinates(dec, y, V))

    def evaluate(self, dec: Decomposition, y, a: np.ndarray, V: np.ndarray) -> np.ndarray:
        return self(self.coordinates(dec, y, a, V))

    def point(self, dec: Decomposition, coords: np.ndarray, y=None) -> BundlePoint:
        """Bundle point on the graph over the given domain coordinates"""
        k = dec.rank - dec.n_translation
        coords = np.asarray(coords, dtype=float)
        a = np.zeros(k)
        a[self.inputs] = coords[:len(self.inputs)]
        a[self.outputs] = self(coords)
        xi = coords[len(self.inputs):]
        Ve = xi @ self.modes if self.modes.shape[0] else np.zeros(dec.space.dim)
        y = np.zeros(dec.n_translation) if y is None else np.atleast_1d(np.asarray(y, dtype=float))
        if np.any(y):
            Ve = dec.space.translate(Ve, y)
        return BundlePoint.from_coefficients(dec, y, a, Ve)

    def closure(self, dec: Decomposition, tracker: Optional[dict] = None):
        """
        (y, a, V) -> h value, for closing the cut-off system through the graph.
        tracker, owned by one orbit, keeps the largest discarded X1 norm.
        """
        def close(y, a, V):
            xi, left = self.galerkin_split(dec, y, V)
            if tracker is not None:
                tracker["discarded"] = max(tracker.get("discarded", 0.0), left)
            return self(self.coordinates_from(a, xi))

        return close

    def sup(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def distance(self, other: "GraphFn") -> float:
        if other.values.shape != self.values.shape:
            raise ShapeError("graphs sampled on different designs")
        return float(np.max(np.abs(self.values - other.values))) if self.values.size else 0.0

    def axis_weights(self) -> np.ndarray:
        """Q-metric weight of every axis"""
        Q = self.params.Q
        return np.array([Q ** AXIS_WEIGHT_POWER[label.split("[")[0]] for label in self.labels])


def graph_diagnostics(h: GraphFn) -> dict:
    """Sup bound delta/15, sampled Q-Lipschitz constant against mu and h at the base point"""
    params = h.params
    lip = 0.0
    weights = h.axis_weights()
    for axis, coordinate in enumerate(h.axes):
        step = np.diff(coordinate)
        if step.size == 0:
            continue
        jumps = np.linalg.norm(np.diff(h.values, axis=axis), axis=-1) if h.out_dim else np.zeros(1)
        shape = [1] * h.naxes
        shape[axis] = step.size
        ratio = jumps / (weights[axis] * step.reshape(shape))
        lip = max(lip, float(np.max(ratio)))
    base = float(np.max(np.abs(h(np.zeros(h.naxes))))) if h.out_dim else 0.0
    report = {
        "sup": h.sup(),
        "sup_bound": params.delta / 15.0,
        "lipschitz": lip,
        "mu": params.mu,
        "base_value": base,
        "discarded_energy": h.discarded_energy,
    }
    report["in_gamma"] = bool(report["sup"] <= report["sup_bound"] and lip <= params.mu and base <= 1e-12)
    return report


def translation_defect(dec: Decomposition, h: GraphFn, rng: Optional[np.random.Generator] = None,
                       samples: int = 5) -> float:
    """max |h(y + z, a, V(. - z)) - h(y, a, V)| over random samples and shifts"""
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    points = h.sample_points()
    for _ in range(samples):
        coords = points[rng.integers(len(points))]
        p = h.point(dec, coords)
        z = rng.uniform(-1.0, 1.0, dec.n_translation)
        moved = p.shifted(dec.space, z)
        first = h.evaluate(dec, p.y, p.a, p.Ve)
        second = h.evaluate(dec, moved.y, moved.a, moved.Ve)
        worst = max(worst, float(np.max(np.abs(first - second))) if h.out_dim else 0.0)
    return worst


def save_graph(h: GraphFn, path: str):
    """IMGF container: magic, u32 header length, JSON header, f64 values, modes, optional jet"""
    header = {
        "version": GRAPH_VERSION,
        "side": h.side,
        "labels": h.labels,
        "axes": [a.tolist() for a in h.axes],
        "inputs": h.inputs,
        "outputs": h.outputs,
        "modes_shape": list(h.modes.shape),
        "params": asdict(h.params),
        "design": asdict(h.design),
        "has_jet": h.jet1 is not None,
        "diagnostics": {k: v for k, v in h.diagnostics.items() if isinstance(v, (int, float, bool, str))},
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(GRAPH_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(h.values.astype("<f8").tobytes())
        fh.write(h.modes.astype("<f8").tobytes())
        if h.jet1 is not None:
            fh.write(h.jet1.astype("<f8").tobytes())
    logger.info(f"Saved {h.side} graph to {path} ({h.values.size} samples)")


def load_graph(path: str) -> GraphFn:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != GRAPH_MAGIC:
        raise ShapeError(f"{path} is not a graph file")
    (length,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8:8 + length].decode("utf-8"))
    if header.get("version") != GRAPH_VERSION:
        raise ShapeError(f"unsupported graph version {header.get('version')}")
    axes = [np.asarray(a) for a in header["axes"]]
    shape = tuple(len(a) for a in axes) + (len(header["outputs"]),)
    offset = 8 + length
    count = int(np.prod(shape))
    values = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
    offset += 8 * count
    modes_shape = tuple(header["modes_shape"])
    m_count = int(np.prod(modes_shape))
    modes = np.frombuffer(data, dtype="<f8", count=m_count, offset=offset).reshape(modes_shape).copy()
    offset += 8 * m_count
    jet1 = None
    if header["has_jet"]:
        jet_shape = shape + (len(axes),)
        jet1 = np.frombuffer(data, dtype="<f8", count=int(np.prod(jet_shape)), offset=offset)
        jet1 = jet1.reshape(jet_shape).copy()
    return GraphFn(header["side"], axes, header["labels"], values, modes, header["inputs"], header["outputs"],
                   CutoffParams(**header["params"]), GraphDesign(**header["design"]), jet1=jet1,
                   diagnostics=header.get("diagnostics"))


class _OrbitLayout:
    """Index bookkeeping for packed (y, a, V) states with appended accumulators"""

    def __init__(self, dec: Decomposition, h: GraphFn):
        self.nT = dec.n_translation
        self.k = dec.rank - self.nT
        self.n = dec.space.dim
        self.N = self.nT + self.k + self.n
        self.closed = np.array([self.nT + i for i in h.outputs], dtype=int)
        self.v_slice = slice(self.nT + self.k, self.N)

    def split(self, state: np.ndarray):
        return state[:self.nT], state[self.nT:self.nT + self.k], state[self.nT + self.k:self.N]


def _side_tag(side: str) -> str:
    return "-" if side == "cu" else "+"


def _side_matrix(dec: Decomposition, side: str) -> np.ndarray:
    return dec.M_minus if side == "cu" else dec.M_plus


def _horizon(dec: Decomposition, params: CutoffParams, design: GraphDesign) -> float:
    if design.horizon is not None:
        return design.horizon
    if dec.lam <= params.eta:
        raise ParameterError(f"lambda = {dec.lam} must exceed eta = {params.eta}")
    return params.horizon(dec.lam)


def graph_orbit(dec: Decomposition, system: CutoffSystem, h: GraphFn, p0: BundlePoint, t_end: float,
                config: IntegratorConfig, extra: int = 0, extra_rhs=None, extra0=None,
                record_every: int = 10 ** 9, should_stop=None, tracker: Optional[dict] = None):
    """
    Integrate the cut-off system from p0 to t_end with the closed block set
    to h(W) after every stage. extra_rhs(t, state, evaluation) adds
    accumulators stepped alongside.
    """
    layout = _OrbitLayout(dec, h)
    model = dec.model
    split = config.scheme == "splitting"
    closure = h.closure(dec, tracker)

    def close(state):
        out = np.array(state, dtype=float)
        y, a, V = layout.split(out)
        out[layout.closed] = closure(y, a, V)
        return out

    def f(t, x):
        state = close(x[:layout.N])
        y, a, V = layout.split(state)
        evaluation = system.evaluate(y, a, V)
        d_state = evaluation.pack()
        d_state[layout.closed] = 0.0
        if split:
            d_state[layout.v_slice] -= model.stiff_apply(V)
        if extra_rhs is None:
            return d_state
        return np.concatenate([d_state, extra_rhs(t, state, evaluation)])

    def stiff_exp(x, step):
        out = np.array(x, dtype=float)
        out[layout.v_slice] = model.stiff_exp(x[layout.v_slice], step)
        return out

    def after_step(t, x):
        out = np.array(x, dtype=float)
        out[:layout.N] = close(x[:layout.N])
        return out

    x0 = p0.pack() if extra == 0 else np.concatenate([p0.pack(), extra0])
    return integrate(f, x0, 0.0, t_end, config, stiff_exp=stiff_exp if split else None,
                     after_step=after_step, record_every=record_every, should_stop=should_stop)


def _lp_value(dec: Decomposition, system: CutoffSystem, h: GraphFn, coords: np.ndarray, horizon: float,
              config: IntegratorConfig) -> Tuple[np.ndarray, float]:
    side = h.side
    tag = _side_tag(side)
    M = _side_matrix(dec, side)
    t_end = -horizon if side == "cu" else horizon

    def accumulate(t, state, evaluation):
        return scipy.linalg.expm(-t * M) @ evaluation.hat_g[tag]

    tracker = {"discarded": 0.0}
    trajectory = graph_orbit(dec, system, h, h.point(dec, coords), t_end, config,
                             extra=h.out_dim, extra_rhs=accumulate, extra0=np.zeros(h.out_dim), tracker=tracker)
    return -trajectory.final[-h.out_dim:], tracker["discarded"]


def lp_apply(dec: Decomposition, params: CutoffParams, h: GraphFn) -> GraphFn:
    """
    One Lyapunov-Perron step h -> h~ at every sample:
      cu: h~(W) = int_{-T}^0 e^{-t M_-} hat-G^-(W(t), h(W(t))) dt along the backward orbit
      cs: h~(W) = -int_0^T e^{-t M_+} hat-G^+(W(t), h(W(t))) dt along the forward orbit
    The closure uses the frozen input graph.
    """
    if h.side not in ("cu", "cs"):
        raise ParameterError(f"lp_apply acts on 'cu' or 'cs' graphs, got '{h.side}'")
    design = h.design
    system = CutoffSystem(dec, params)
    horizon = _horizon(dec, params, design)
    config = design.integrator()
    points = h.sample_points()

    def evaluate(coords):
        return _lp_value(dec, system, h, coords, horizon, config)

    if design.workers > 1 and len(points) > 1:
        with ThreadPoolExecutor(max_workers=design.workers) as pool:
            rows = list(pool.map(evaluate, points))
    else:
        rows = [evaluate(c) for c in points]
    values = np.array([row[0] for row in rows]).reshape(h.values.shape)
    tail = params.delta ** 2 * math.exp(-(dec.lam - params.eta) * horizon) / (dec.lam - params.eta)
    updated = h.with_values(values, discarded=max((row[1] for row in rows), default=0.0))
    diagnostics = graph_diagnostics(updated)
    diagnostics["tail_bound"] = tail
    diagnostics["horizon"] = horizon
    updated.diagnostics = diagnostics
    if not diagnostics["in_gamma"]:
        logger.warning(f"Graph left the admissible class: sup {diagnostics['sup']:.3e} "
                       f"(bound {diagnostics['sup_bound']:.3e}), Lip {diagnostics['lipschitz']:.3e} "
                       f"(mu {params.mu})")
    return updated


@dataclass
class FixedPointReport:
    iterations: int = 0
    distances: List[float] = field(default_factory=list)
    ratios: List[float] = field(default_factory=list)
    contraction: float = 0.0
    surrogate: float = 0.0
    gates: Dict[str, bool] = field(default_factory=dict)
    invariance: Optional[dict] = None
    converged: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def _fit_contraction(ratios: Sequence[float]) -> float:
    usable = [r for r in ratios if r > 0 and np.isfinite(r)]
    if not usable:
        return 0.0
    return float(np.exp(np.mean(np.log(usable))))


def solve_graph(dec: Decomposition, params: CutoffParams, design: GraphDesign, max_iter: int = 25,
                tol: float = 1e-10, h0: Optional[GraphFn] = None,
                check_invariance: bool = True) -> Tuple[GraphFn, FixedPointReport]:
    """
    Picard iteration of lp_apply from h = 0 until the sup distance between
    iterates drops below tol. Three consecutive ratios >= 1 abort.
    """
    if design.side not in ("cu", "cs"):
        raise ParameterError("solve_graph builds 'cu' or 'cs' graphs; use center_graph for 'c'")
    report = FixedPointReport(surrogate=contraction_bound(params, dec.lam, dec.d1))
    report.gates = check_parameter_gates(params, dec.lam, dec.d1)
    if not all(report.gates.values()):
        failed = [k for k, v in report.gates.items() if not v]
        logger.warning(f"Parameter gates {failed} fail with surrogate C = 1; monitoring contraction instead")
    h = h0 or GraphFn.zeros(dec, params, design)
    logger.info(f"Solving {design.side} graph: {h.values.shape[:-1]} samples, delta {params.delta}")
    streak = 0
    for iteration in range(1, max_iter + 1):
        updated = lp_apply(dec, params, h)
        distance = updated.distance(h)
        report.distances.append(distance)
        if len(report.distances) > 1 and report.distances[-2] > 0:
            ratio = distance / report.distances[-2]
            report.ratios.append(ratio)
            streak = streak + 1 if ratio >= 1.0 else 0
        logger.debug(f"Picard iteration {iteration}: distance {distance:.3e}")
        h = updated
        report.iterations = iteration
        if distance < tol:
            report.converged = True
            break
        if streak >= NON_CONTRACTION_LIMIT:
            raise ParameterRegimeError(f"no contraction over {streak} iterations; decrease delta", report.ratios)
    if not report.converged:
        raise ConvergenceError(f"graph iteration did not reach {tol:.1e} in {max_iter} iterations",
                               report.distances)
    report.contraction = _fit_contraction(report.ratios)
    if check_invariance:
        report.invariance = invariance_residual(dec, params, h, samples=5)
    logger.info(f"{design.side} graph converged in {report.iterations} iterations "
                f"(contraction {report.contraction:.3e}, sup {h.sup():.3e})")
    return h, report


def invariance_residual(dec: Decomposition, params: CutoffParams, h: GraphFn, samples: Optional[int] = None,
                        tau: float = 0.1, dt: float = 0.01, rng: Optional[np.random.Generator] = None) -> dict:
    """
    Launch on graph(h), integrate the cut-off system freely for tau (backward
    for cu graphs) and measure |closed block - h(W(tau))| / tau.
    """
    rng = rng or np.random.default_rng(0)
    points = h.sample_points()
    if samples is not None and samples < len(points):
        points = points[rng.choice(len(points), samples, replace=False)]
    system = CutoffSystem(dec, params)
    config = IntegratorConfig(dt=dt, scheme=h.design.scheme)
    layout = _OrbitLayout(dec, h)
    model = dec.model
    split = config.scheme == "splitting"
    rhs = system.vector_field()

    def f(t, x):
        out = rhs(x)
        if split:
            out[layout.v_slice] -= model.stiff_apply(x[layout.v_slice])
        return out

    def stiff_exp(x, step):
        out = np.array(x, dtype=float)
        out[layout.v_slice] = model.stiff_exp(x[layout.v_slice], step)
        return out

    residuals = []
    for coords in points:
        p = h.point(dec, coords)
        t_end = -tau if h.side == "cu" else tau
        final = integrate(f, p.pack(), 0.0, t_end, config, stiff_exp=stiff_exp if split else None,
                          record_every=10 ** 9).final
        y, a, V = layout.split(final)
        gap = a[h.outputs] - h.evaluate(dec, y, a, V)
        residuals.append(float(np.max(np.abs(gap))) / tau if h.out_dim else 0.0)
    residuals = np.asarray(residuals)
    return {"max": float(residuals.max()), "mean": float(residuals.mean()), "tau": tau, "samples": len(residuals)}


def _center_sweeps(h_cu: GraphFn, h_cs: GraphFn, center: np.ndarray, a_size: int, steps: int,
                   tol: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray, float]:
    n_center = len(center) - h_cu.modes.shape[0]
    xi = center[n_center:]
    center_inputs = [i for i in h_cu.inputs if i in h_cs.inputs]
    a = np.zeros(a_size)
    a[center_inputs] = center[:n_center]
    change = math.inf
    for _ in range(steps):
        new_plus = h_cs(h_cs.coordinates_from(a, xi))
        new_minus = h_cu(h_cu.coordinates_from(a, xi))
        change = max(float(np.max(np.abs(new_plus - a[h_cs.outputs]), initial=0.0)),
                     float(np.max(np.abs(new_minus - a[h_cu.outputs]), initial=0.0)))
        a[h_cs.outputs] = new_plus
        a[h_cu.outputs] = new_minus
        if tol is not None and change <= tol:
            break
    return a[h_cs.outputs], a[h_cu.outputs], change


def center_iterate(h_cu: GraphFn, h_cs: GraphFn, center: np.ndarray, steps: int,
                   a_size: int) -> Tuple[np.ndarray, np.ndarray]:
    """Jacobi sweeps (a+, a-) <- (h^cs(., a-, .), h^cu(., a+, .)) at one center sample"""
    plus, minus, _ = _center_sweeps(h_cu, h_cs, center, a_size, steps)
    return plus, minus


def center_graph(dec: Decomposition, h_cu: GraphFn, h_cs: GraphFn, params: Optional[CutoffParams] = None,
                 max_steps: int = 200, tol: float = 1e-14) -> GraphFn:
    """
    Center graph h^c(y, a^d1, a^d2, V^e) = (a+, a-) from the simultaneous
    fixed point of the two graphs; contraction ratio mu when both are mu-Lipschitz.
    """
    params = params or h_cu.params
    if h_cu.side != "cu" or h_cs.side != "cs":
        raise ParameterError("center_graph needs a 'cu' graph and a 'cs' graph")
    if h_cu.modes.shape != h_cs.modes.shape or not np.allclose(h_cu.modes, h_cs.modes):
        raise ParameterError("cu and cs graphs use different Galerkin slices")
    if h_cu.design.points != h_cs.design.points or h_cu.design.box != h_cs.design.box:
        raise ParameterError("cu and cs graphs use different sampling designs")
    design = GraphDesign(side="c", box=h_cu.design.box, points=h_cu.design.points,
                         galerkin=h_cu.modes.shape[0], interp=h_cu.design.interp, dt=h_cu.design.dt,
                         scheme=h_cu.design.scheme, workers=h_cu.design.workers)
    h_c = GraphFn.zeros(dec, params, design, modes=h_cu.modes)
    a_size = dec.rank - dec.n_translation
    rows = []
    for center in h_c.sample_points():
        plus, minus, change = _center_sweeps(h_cu, h_cs, center, a_size, max_steps, tol)
        if change > tol:
            raise ConvergenceError(f"center fixed point stalled at change {change:.3e}; graphs not mu-Lipschitz")
        rows.append(np.concatenate([plus, minus]))
    values = np.array(rows).reshape(h_c.values.shape)
    result = h_c.with_values(values)
    result.diagnostics = graph_diagnostics(result)
    result.diagnostics["lipschitz_bound"] = params.mu / (1.0 - params.mu)
    logger.info(f"Center graph: sup {result.sup():.3e} over {len(rows)} samples")
    return result


def _jvp(fn, x: np.ndarray, direction: np.ndarray, eps: float) -> np.ndarray:
    size = float(np.max(np.abs(direction)))
    if size == 0.0:
        return np.zeros_like(fn(x))
    step = eps / size
    return (fn(x + step * direction) - fn(x - step * direction)) / (2.0 * step)


def _jet_sample(dec: Decomposition, system: CutoffSystem, h: GraphFn, candidate: GraphFn, coords: np.ndarray,
                horizon: float, config: IntegratorConfig, eps: float) -> np.ndarray:
    """
    T_1 at one sample: integrate the first variation of the closed cut-off
    orbit along every domain direction and evaluate the jet integral.
    """
    layout = _OrbitLayout(dec, h)
    N, r, d = layout.N, h.naxes, h.out_dim
    side = h.side
    tag = _side_tag(side)
    M = _side_matrix(dec, side)
    model = dec.model
    split = config.scheme == "splitting"
    n_inputs = len(h.inputs)

    def coordinates(state):
        y, a, V = layout.split(state)
        return h.coordinates(dec, y, a, V)

    def close(state):
        out = np.array(state, dtype=float)
        y, a, V = layout.split(out)
        out[layout.closed] = h.evaluate(dec, y, a, V)
        return out

    def close_direction(state, psi):
        out = np.array(psi, dtype=float)
        out[layout.closed] = 0.0
        dcoords = _jvp(coordinates, state, out, eps)
        out[layout.closed] = candidate.jet(coordinates(state)) @ dcoords
        return out

    def field(state):
        y, a, V = layout.split(state)
        evaluation = system.evaluate(y, a, V)
        d_state = evaluation.pack()
        d_state[layout.closed] = 0.0
        return np.concatenate([d_state, evaluation.hat_g[tag]])

    def f(t, X):
        state = close(X[:N])
        base = field(state)
        E = scipy.linalg.expm(-t * M)
        parts = [base[:N], E @ base[N:]]
        offset = N + d
        for i in range(r):
            psi = close_direction(state, X[offset + i * (N + d):offset + i * (N + d) + N])
            jvp = _jvp(field, state, psi, eps)
            parts.extend([jvp[:N], E @ jvp[N:]])
        out = np.concatenate(parts)
        if split:
            for start in [0] + [offset + i * (N + d) for i in range(r)]:
                v = slice(start + layout.nT + layout.k, start + N)
                out[v] -= model.stiff_apply(X[v])
        return out

    def stiff_exp(X, step):
        out = np.array(X, dtype=float)
        for start in [0] + [N + d + i * (N + d) for i in range(r)]:
            v = slice(start + layout.nT + layout.k, start + N)
            out[v] = model.stiff_exp(X[v], step)
        return out

    def after_step(t, X):
        out = np.array(X, dtype=float)
        out[:N] = close(X[:N])
        for i in range(r):
            start = N + d + i * (N + d)
            out[start:start + N] = close_direction(out[:N], X[start:start + N])
        return out

    p0 = h.point(dec, coords)
    pieces = [p0.pack(), np.zeros(d)]
    for i in range(r):
        psi = np.zeros(N)
        if i < n_inputs:
            psi[layout.nT + h.inputs[i]] = 1.0
        else:
            psi[layout.v_slice] = h.modes[i - n_inputs]
        pieces.extend([close_direction(p0.pack(), psi), np.zeros(d)])
    X0 = np.concatenate(pieces)
    t_end = -horizon if side == "cu" else horizon
    final = integrate(f, X0, 0.0, t_end, config, stiff_exp=stiff_exp if split else None,
                      after_step=after_step, record_every=10 ** 9).final
    jet = np.zeros((d, r))
    for i in range(r):
        start = N + d + i * (N + d) + N
        jet[:, i] = -final[start:start + d]
    return jet


def jet1_solve(dec: Decomposition, params: CutoffParams, h: GraphFn, max_iter: int = 8, tol: float = 1e-8,
               eps: float = 1e-6) -> GraphFn:
    """
    Fixed point of the linear jet operator T_1 over the samples of a
    converged graph; returns h with jet1 (out_dim x naxes per sample).
    Raises ConvergenceError when max_iter passes without a change below tol.
    """
    if h.side not in ("cu", "cs"):
        raise ParameterError("jet1_solve needs a 'cu' or 'cs' graph")
    design = h.design
    system = CutoffSystem(dec, params)
    horizon = _horizon(dec, params, design)
    config = design.integrator()
    points = h.sample_points()
    jet = np.zeros(h.values.shape + (h.naxes,))
    candidate = h.with_values(h.values, jet1=jet)
    changes, streak, converged = [], 0, False
    for iteration in range(1, max_iter + 1):
        def evaluate(coords, current=candidate):
            return _jet_sample(dec, system, h, current, coords, horizon, config, eps)

        if design.workers > 1 and len(points) > 1:
            with ThreadPoolExecutor(max_workers=design.workers) as pool:
                rows = list(pool.map(evaluate, points))
        else:
            rows = [evaluate(c) for c in points]
        updated = np.array(rows).reshape(jet.shape)
        change = float(np.max(np.abs(updated - candidate.jet1))) if updated.size else 0.0
        changes.append(change)
        if len(changes) > 1 and changes[-2] > 0:
            streak = streak + 1 if change >= changes[-2] else 0
        candidate = h.with_values(h.values, jet1=updated)
        logger.debug(f"Jet iteration {iteration}: change {change:.3e}")
        if change < tol:
            converged = True
            break
        if streak >= NON_CONTRACTION_LIMIT:
            raise ParameterRegimeError("jet operator is not contracting; gate P5 is violated", changes)
    if not converged:
        raise ConvergenceError(f"jet iteration did not reach {tol:.1e} in {max_iter} iterations", changes)
    result = h.with_values(h.values, jet1=candidate.jet1, diagnostics=dict(h.diagnostics),
                           discarded=h.discarded_energy)
    result.diagnostics["jet_changes"] = changes[-1] if changes else 0.0
    logger.info(f"First-order jet after {len(changes)} iterations (last change {changes[-1]:.3e})")
    return result


def smoothness_diagnostic(h: GraphFn) -> Dict[str, List[float]]:
    """Largest divided differences of orders 1-3 along each axis"""
    out = {}
    for axis, (label, coordinate) in enumerate(zip(h.labels, h.axes)):
        step = float(coordinate[1] - coordinate[0])
        diffs, values = [], h.values
        for order in range(1, 4):
            values = np.diff(values, axis=axis)
            if values.shape[axis] == 0:
                diffs.append(0.0)
                continue
            diffs.append(float(np.max(np.abs(values))) / (math.factorial(order) * step ** order))
        out[label] = diffs
    return out
