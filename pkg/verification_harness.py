#!/usr/bin/env python3
"""
Verification Harness
Dynamic experiments around a traveling-wave manifold: attraction to the
center-unstable graph, ejection off the center-stable graph, the tube
criterion, neighboring waves and the non-degenerate stability checks.
Reports are JSON; distance histories go to CSV sidecars.
"""

import configparser
import csv
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from scipy.stats import linregress

from bundle_reduction import BundlePoint, CutoffParams, CutoffSystem, chart, chart_inverse, transverse_magnitude
from errors import ParameterError, PreconditionError
from field_core import Grid
from gp_model import ModelParams, WaveProfile, gray_wave, transverse_extend
from linearization import GPLinearization, LinearizedModel
from manifold_solver import GraphDesign, GraphFn, center_graph, graph_orbit, solve_graph
from propagator import IntegratorConfig, Trajectory, direct_trajectory, integrate_reduced
from spectral_decomposition import Decomposition, decompose, fiber_energy, nondegeneracy_report, project
from synthetic_models import MODEL_FACTORIES, build_synthetic

logger = logging.getLogger(__name__)

SUITES = ("attraction", "ejection", "tube", "neighbor", "nondeg", "all")
FIT_FLOOR = 1e-10


@dataclass
class RateFit:
    """Log-linear fit d(t) ~ C e^{+-rate t} on the usable window"""
    rate: float
    intercept: float
    residual: float
    r_squared: float
    window: Tuple[float, float]
    points: int


def fit_rate(times: Sequence[float], distances: Sequence[float], growth: bool = False,
             floor: float = FIT_FLOOR, ceiling: Optional[float] = None) -> RateFit:
    """
    Fit after the first e-folding and before the floor (decay) or the
    ceiling (growth); falls back to every sample above the floor.
    """
    t = np.asarray(times, dtype=float)
    d = np.asarray(distances, dtype=float)
    if t.shape != d.shape or t.size < 3:
        raise ParameterError("need at least three (time, distance) samples of equal length")
    d0 = d[0]
    if not d0 > floor:
        raise ParameterError(f"initial distance {d0:.3e} is below the fit floor {floor:.1e}")
    if growth:
        mask = d >= d0 * math.e
        if ceiling is not None:
            mask &= d <= ceiling
    else:
        mask = (d <= d0 / math.e) & (d >= floor)
    if np.count_nonzero(mask) < 3:
        mask = d > floor
    fit = linregress(t[mask], np.log(d[mask]))
    predicted = fit.intercept + fit.slope * t[mask]
    residual = float(np.sqrt(np.mean((np.log(d[mask]) - predicted) ** 2)))
    rate = float(fit.slope if growth else -fit.slope)
    return RateFit(rate=rate, intercept=float(fit.intercept), residual=residual,
                   r_squared=float(fit.rvalue ** 2), window=(float(t[mask][0]), float(t[mask][-1])),
                   points=int(np.count_nonzero(mask)))


@dataclass
class ExperimentReport:
    scenario: str
    status: str = "pass"
    tolerance: float = 0.0
    rates: Dict[str, float] = field(default_factory=dict)
    fit_residual: Optional[float] = None
    details: Dict = field(default_factory=dict)
    artifacts: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_dict(self) -> dict:
        return asdict(self)


def _graph_distance(dec: Decomposition, h: GraphFn, state: np.ndarray) -> float:
    p = BundlePoint.unpack(dec, state)
    if h.out_dim == 0:
        return 0.0
    return float(np.max(np.abs(p.a[h.outputs] - h.evaluate(dec, p.y, p.a, p.Ve))))


def _distance_history(dec: Decomposition, h: GraphFn, trajectory: Trajectory) -> np.ndarray:
    return np.array([_graph_distance(dec, h, s) for s in trajectory.states])


def graph_ensemble(dec: Decomposition, h: GraphFn, rng: np.random.Generator, count: int,
                   base: float = 1e-9, offset: float = 1e-3) -> List[BundlePoint]:
    """Points with inputs of size ~base and outputs displaced by offset off graph(h)"""
    points = []
    for _ in range(count):
        coords = np.zeros(h.naxes)
        coords[:len(h.inputs)] = base * rng.choice([-1.0, 1.0], len(h.inputs))
        p = h.point(dec, coords)
        a = p.a.copy()
        a[h.outputs] += offset * rng.choice([-1.0, 1.0], h.out_dim)
        points.append(BundlePoint.from_coefficients(dec, p.y, a, p.Ve))
    return points


def _run_ensemble(fn, members: Sequence, workers: int = 4) -> list:
    if workers > 1 and len(members) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, members))
    return [fn(m) for m in members]


def _write_history(path: str, times: Sequence[float], histories: Sequence[Sequence[float]]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time"] + [f"orbit_{j}" for j in range(len(histories))])
        for i, t in enumerate(times):
            writer.writerow([t] + [h[i] if i < len(h) else "" for h in histories])
    logger.info(f"Wrote distance history {path}")


def _rate_experiment(dec: Decomposition, params: CutoffParams, h: GraphFn, ensemble: Sequence[BundlePoint],
                     T: float, config: IntegratorConfig, growth: bool, scenario: str, fit_tol: float,
                     out_dir: Optional[str], workers: int) -> ExperimentReport:
    target = dec.lam - 2.0 * params.eta
    tube = params.delta / 3.0
    ceiling = tube / 3.0

    def run(p0):
        trajectory = integrate_reduced(dec, p0, config, mode="cutoff-cu", params=params, t1=T,
                                       log_energy=False, exit_radius=tube)
        return trajectory, _distance_history(dec, h, trajectory)

    results = _run_ensemble(run, ensemble, workers)
    report = ExperimentReport(scenario=scenario, tolerance=fit_tol)
    rates, residuals, exits = [], [], []
    for trajectory, distances in results:
        if "stop_time" in trajectory.notes:
            exits.append(trajectory.notes["stop_time"])
        fit = fit_rate(trajectory.times, distances, growth=growth, ceiling=ceiling if growth else None)
        rates.append(fit.rate)
        residuals.append(fit.residual)
    report.rates = {"min": float(min(rates)), "max": float(max(rates)), "mean": float(np.mean(rates)),
                    "target": target}
    report.fit_residual = float(max(residuals))
    report.details = {"samples": len(results), "exits": exits, "horizon": T, "lambda": dec.lam}
    report.status = "pass" if min(rates) >= target * (1.0 - fit_tol) else "fail"
    if out_dir:
        path = os.path.join(out_dir, f"{scenario}_distance.csv")
        longest = max((t for t, _ in results), key=lambda t: len(t.times))
        _write_history(path, longest.times, [d for _, d in results])
        report.artifacts.append(path)
    logger.info(f"{scenario}: rates {report.rates} -> {report.status}")
    return report


def measure_attraction_cu(dec: Decomposition, params: CutoffParams, h_cu: GraphFn,
                          ensemble: Optional[Sequence[BundlePoint]] = None, T: Optional[float] = None,
                          config: Optional[IntegratorConfig] = None, rng: Optional[np.random.Generator] = None,
                          samples: int = 4, fit_tol: float = 0.1, out_dir: Optional[str] = None,
                          workers: int = 4) -> ExperimentReport:
    """Decay rate of |a^- - h^cu(W)| along forward cut-off orbits, against lambda - 2 eta"""
    rng = rng or np.random.default_rng(0)
    config = config or IntegratorConfig(dt=0.01, scheme="rk4")
    T = T if T is not None else 14.0 / dec.lam
    ensemble = ensemble or graph_ensemble(dec, h_cu, rng, samples, base=1e-9, offset=1e-3)
    return _rate_experiment(dec, params, h_cu, ensemble, T, config, False, "attraction", fit_tol, out_dir, workers)


def measure_ejection_cs(dec: Decomposition, params: CutoffParams, h_cs: GraphFn,
                        ensemble: Optional[Sequence[BundlePoint]] = None, T: Optional[float] = None,
                        config: Optional[IntegratorConfig] = None, rng: Optional[np.random.Generator] = None,
                        samples: int = 4, fit_tol: float = 0.1, out_dir: Optional[str] = None,
                        workers: int = 4) -> ExperimentReport:
    """Growth rate of |a^+ - h^cs(W)| until the orbit leaves the tube"""
    rng = rng or np.random.default_rng(0)
    config = config or IntegratorConfig(dt=0.01, scheme="rk4")
    T = T if T is not None else 14.0 / dec.lam
    ensemble = ensemble or graph_ensemble(dec, h_cs, rng, samples, base=1e-9, offset=1e-6)
    return _rate_experiment(dec, params, h_cs, ensemble, T, config, True, "ejection", fit_tol, out_dir, workers)


def stays_in_tube(dec: Decomposition, params: CutoffParams, p0: BundlePoint, T: float,
                  config: IntegratorConfig, radius: float) -> bool:
    """Whether the free cut-off orbit over [0, T] (T < 0 runs backward) keeps magnitude <= radius"""
    trajectory = integrate_reduced(dec, p0, config, mode="cutoff-cu", params=params, t1=T,
                                   log_energy=False, exit_radius=radius, record_every=10 ** 9)
    return "stop_time" not in trajectory.notes


def tube_characterization(dec: Decomposition, params: CutoffParams, graphs: Dict[str, GraphFn],
                          candidates: Sequence[BundlePoint], T: float, config: Optional[IntegratorConfig] = None,
                          graph_tol: float = 1e-8, radius: Optional[float] = None,
                          workers: int = 4) -> ExperimentReport:
    """
    Classify every candidate by whether its backward (cu) and forward (cs)
    orbits stay in the tube, and cross-check against |a^-+ - h(W)| <= graph_tol.
    """
    config = config or IntegratorConfig(dt=0.01, scheme="rk4")
    radius = radius if radius is not None else params.delta / 3.0

    def classify(p0):
        dynamic = {"cu": stays_in_tube(dec, params, p0, -T, config, radius),
                   "cs": stays_in_tube(dec, params, p0, T, config, radius)}
        by_graph = {side: _graph_distance(dec, graphs[side], p0.pack()) <= graph_tol for side in ("cu", "cs")}
        dynamic["c"] = dynamic["cu"] and dynamic["cs"]
        by_graph["c"] = by_graph["cu"] and by_graph["cs"]
        return dynamic, by_graph

    rows = _run_ensemble(classify, candidates, workers)
    disagreements = sum(1 for dynamic, by_graph in rows if dynamic != by_graph)
    counts = {side: sum(1 for dynamic, _ in rows if dynamic[side]) for side in ("cu", "cs", "c")}
    report = ExperimentReport(scenario="tube", tolerance=graph_tol)
    report.details = {"samples": len(rows), "disagreements": disagreements, "members": counts,
                      "classifications": [d for d, _ in rows], "horizon": T, "radius": radius}
    report.status = "pass" if disagreements == 0 else "fail"
    logger.info(f"Tube characterization: {counts} members, {disagreements} disagreements")
    return report


def tube_candidates(dec: Decomposition, graphs: Dict[str, GraphFn], rng: np.random.Generator, count: int = 50,
                    low: float = 1e-5, high: float = 1e-4, offset: float = 1e-3) -> List[BundlePoint]:
    """Mix of base points, cu-graph points, cs-graph points and off-graph points"""
    h_cu, h_cs = graphs["cu"], graphs["cs"]
    out = []
    for j in range(count):
        kind = j % 4
        size = rng.uniform(low, high) * rng.choice([-1.0, 1.0])
        if kind == 0:
            out.append(BundlePoint.origin(dec))
            continue
        h = h_cu if kind in (1, 3) else h_cs
        coords = np.zeros(h.naxes)
        if len(h.inputs):
            coords[0] = size
        p = h.point(dec, coords)
        if kind == 3:
            a = p.a.copy()
            a[h.outputs] += offset
            p = BundlePoint.from_coefficients(dec, p.y, a, p.Ve)
        out.append(p)
    return out


def neighboring_wave_membership(profile_c: WaveProfile, profile_c2: WaveProfile, dec: Decomposition,
                                params: CutoffParams, graphs: Optional[Dict[str, GraphFn]] = None,
                                T: float = 10.0, delta0: Optional[float] = None, dt: float = 0.05,
                                graph_tol: float = 1e-6) -> ExperimentReport:
    """
    The neighbor U_{c'} moves at c' - c in the frame of c. Its orbit is
    followed with the direct integrator, read in bundle coordinates, and
    checked to stay in the tube and on both graphs.
    """
    delta0 = params.delta if delta0 is None else delta0
    model = dec.model
    space = dec.space
    c, c2 = np.asarray(profile_c.c, dtype=float), np.asarray(profile_c2.c, dtype=float)
    cross = np.linalg.norm(c) * np.linalg.norm(c2) - abs(float(c @ c2))
    if cross > 1e-12 * max(1.0, np.linalg.norm(c) * np.linalg.norm(c2)):
        raise PreconditionError("velocities are not parallel")
    U2 = profile_c2.U_c.to_vector()
    gap = space.x1_norm(model.w_coordinates(U2) - model.base_w(None))
    if gap >= delta0:
        raise PreconditionError(f"waves too far apart: |w_c' - w_c|_X1 = {gap:.3e} >= {delta0:.3e}")

    trajectory = direct_trajectory(model, U2, IntegratorConfig(dt=dt, scheme="splitting", horizon=T),
                                   record_every=max(1, int(round(1.0 / dt))))
    magnitudes, distances, y_guess = [], {"cu": [], "cs": []}, None
    for U in trajectory.states:
        p = chart_inverse(dec, U, y_guess=y_guess)
        y_guess = p.y
        magnitudes.append(transverse_magnitude(p.a, space.x1_norm(p.Ve)))
        for side in ("cu", "cs"):
            h = (graphs or {}).get(side)
            distances[side].append(_graph_distance(dec, h, p.pack()) if h is not None else 0.0)
    tube = params.delta
    in_tube = max(magnitudes) <= tube
    on_graphs = all(max(distances[side]) <= graph_tol for side in ("cu", "cs"))
    report = ExperimentReport(scenario="neighbor", tolerance=graph_tol)
    report.details = {"x1_gap": gap, "max_magnitude": max(magnitudes), "tube": tube,
                      "graph_distance": {s: max(v) for s, v in distances.items()},
                      "drift": float(np.linalg.norm(y_guess)), "classified": "c" if in_tube and on_graphs else "none"}
    report.status = "pass" if in_tube and on_graphs else "fail"
    logger.info(f"Neighboring wave |c' - c| = {np.linalg.norm(c2 - c):.2e}: {report.details['classified']}")
    return report


def energy_expansion_residual(dec: Decomposition, direction: BundlePoint, amplitude: float) -> Tuple[float, float]:
    """
    E~ = H(chart(W)) - H(U_c) against its quadratic part
    1/2 <L V^e, V^e> + <L~_{+-} a^-, a^+>; returns (E~, |E~ - quadratic|).
    """
    model = dec.model
    space = dec.space
    p = BundlePoint(direction.y * 0.0, amplitude * direction.a_d1, amplitude * direction.a_d2,
                    amplitude * direction.a_plus, amplitude * direction.a_minus, amplitude * direction.Ve)
    base = model.conserved(model.base_state(None))
    value = model.conserved(chart(dec, p)) - base
    frame = dec.frame(None)
    sl = dec.slices
    L_minus = np.array([model.apply_L(v, None) for v in frame.V[sl["-"]]]).reshape(dec.d, space.dim)
    coupling = space.gram(frame.V[sl["+"]], L_minus) if dec.d else np.zeros((0, 0))
    quadratic = 0.5 * fiber_energy(dec, None, p.Ve)
    if dec.d:
        quadratic += float(p.a_plus @ (coupling @ p.a_minus))
    return value, abs(value - quadratic)


def morse_check(dec: Decomposition) -> dict:
    """(H2) d = n^-(L) with near-zero eigenvalues flagged rather than decided"""
    report = nondegeneracy_report(dec)
    report["status"] = "flagged" if "flag" in report else ("pass" if report["H2"] else "fail")
    return report


def nondegenerate_stability(dec: Decomposition, params: CutoffParams, graphs: Dict[str, GraphFn],
                            amplitudes: Optional[Sequence[float]] = None, T: Optional[float] = None,
                            rng: Optional[np.random.Generator] = None, orbit_amplitude: Optional[float] = None,
                            config: Optional[IntegratorConfig] = None) -> ExperimentReport:
    """
    With d1 = d2 = 0 and ker L spanned by translations: cubic scaling of the
    energy expansion residual, and a long center-manifold orbit confined to
    the delta/15 tube.
    """
    report = ExperimentReport(scenario="nondeg", tolerance=0.2)
    if dec.d1 or dec.d2 or dec.dim_ker != dec.n_translation:
        report.status = "skipped"
        report.details = {"reason": f"d1 = {dec.d1}, d2 = {dec.d2}, dim ker = {dec.dim_ker}, "
                                    f"n_T = {dec.n_translation}"}
        logger.info(f"Non-degenerate stability skipped: {report.details['reason']}")
        return report
    rng = rng or np.random.default_rng(0)
    amplitudes = np.logspace(-4, -2, 7) if amplitudes is None else np.asarray(amplitudes, dtype=float)
    k = dec.rank - dec.n_translation
    Ve = project(dec, None, "e", dec.space.random_vector(rng))
    a = rng.uniform(-1.0, 1.0, k)
    size = transverse_magnitude(a, dec.space.x1_norm(Ve))
    direction = BundlePoint.from_coefficients(dec, np.zeros(dec.n_translation), a / size, Ve / size)
    residuals = np.array([energy_expansion_residual(dec, direction, s)[1] for s in amplitudes])
    fit = linregress(np.log(amplitudes), np.log(residuals))
    slope_ok = abs(fit.slope - 3.0) <= 0.2

    h_c = graphs.get("c")
    if h_c is None:
        h_c = center_graph(dec, graphs["cu"], graphs["cs"], params)
    T = T if T is not None else 100.0 / dec.lam
    amplitude = orbit_amplitude if orbit_amplitude is not None else params.delta / 20.0
    coords = np.zeros(h_c.naxes)
    if h_c.naxes:
        coords[-1] = amplitude
    p0 = h_c.point(dec, coords)
    config = config or IntegratorConfig(dt=0.05, scheme="rk4")
    system = CutoffSystem(dec, params)
    trajectory = graph_orbit(dec, system, h_c, p0, T, config, record_every=20)
    ve_norms = [dec.space.x1_norm(BundlePoint.unpack(dec, s).Ve) for s in trajectory.states]
    confined = max(ve_norms) < params.delta / 15.0

    report.rates = {"expansion_slope": float(fit.slope)}
    report.fit_residual = float(1.0 - fit.rvalue ** 2)
    report.details = {"amplitudes": amplitudes.tolist(), "residuals": residuals.tolist(),
                      "orbit_horizon": T, "orbit_amplitude": amplitude, "max_ve": max(ve_norms),
                      "tube": params.delta / 15.0, "morse": morse_check(dec)}
    report.status = "pass" if slope_ok and confined else "fail"
    logger.info(f"Energy expansion slope {fit.slope:.3f}; center orbit max |V^e| {max(ve_norms):.3e}")
    return report


def measure_center_attraction(dec: Decomposition, params: CutoffParams, h_c: GraphFn, h_cs: GraphFn,
                              T: Optional[float] = None, offset: float = 1e-3, amplitude: Optional[float] = None,
                              config: Optional[IntegratorConfig] = None, fit_tol: float = 0.1) -> ExperimentReport:
    """Orbits launched on W^cs approach the center graph at rate >= lambda - 2 eta"""
    config = config or IntegratorConfig(dt=0.01, scheme="rk4")
    T = T if T is not None else 14.0 / dec.lam
    amplitude = amplitude if amplitude is not None else params.delta / 20.0
    coords = np.zeros(h_cs.naxes)
    if h_cs.modes.shape[0]:
        coords[-1] = amplitude
    p = h_cs.point(dec, coords)
    a = p.a.copy()
    a[h_cs.inputs] += offset
    p0 = BundlePoint.from_coefficients(dec, p.y, a, p.Ve)
    system = CutoffSystem(dec, params)
    trajectory = graph_orbit(dec, system, h_cs, p0, T, config, record_every=1)
    distances = []
    for state in trajectory.states:
        q = BundlePoint.unpack(dec, state)
        distances.append(float(np.max(np.abs(q.a[h_c.outputs] - h_c.evaluate(dec, q.y, q.a, q.Ve)))))
    fit = fit_rate(trajectory.times, distances)
    target = dec.lam - 2.0 * params.eta
    report = ExperimentReport(scenario="center-attraction", tolerance=fit_tol,
                              rates={"rate": fit.rate, "target": target}, fit_residual=fit.residual)
    report.status = "pass" if fit.rate >= target * (1.0 - fit_tol) else "fail"
    return report


class _RunSection(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSection(_RunSection):
    """[model]: model kinds plus the options forwarded to the model factory"""
    kind: str = Field(default="lp-test", description="Model for attraction, ejection and tube runs")
    nondeg_kind: str = Field(default="center-test", description="Model for the nondegenerate-stability run")
    lam: Optional[float] = Field(default=None, gt=0.0, description="Unstable rate of a synthetic saddle")
    omega: Optional[float] = Field(default=None, gt=0.0, description="Rotation frequency of the planted system")
    beta: Optional[float] = Field(default=None, description="Cubic coupling of the planted system")
    kappa: Optional[float] = Field(default=None, description="Center-saddle coupling of center-test")
    n: Optional[int] = Field(default=None, gt=0, description="Grid points along the wave axis")
    length: Optional[float] = Field(default=None, gt=0.0, description="Box length along the wave axis")
    c: Optional[float] = Field(default=None, description="Wave speed")
    chi_radius: Optional[float] = Field(default=None, gt=0.0, description="Radius of the far-field cut-off")
    n_transverse: Optional[int] = Field(default=None, ge=0, description="Transverse grid points")
    transverse_length: Optional[float] = Field(default=None, gt=0.0, description="Transverse box length")

    @field_validator("kind", "nondeg_kind")
    @classmethod
    def validate_kind(cls, v: str) -> str:
        if v not in MODEL_FACTORIES and v != "gp":
            raise ValueError(f"unknown model '{v}'")
        return v

    def options(self) -> Dict[str, float]:
        return self.model_dump(exclude_none=True, exclude={"kind", "nondeg_kind"})


class CutoffSection(_RunSection):
    delta: float = 0.1
    mu: float = 0.1
    Q: float = 4.0
    eta: float = 0.25


class IntegratorSection(_RunSection):
    dt: float = Field(default=0.01, gt=0.0)
    scheme: str = "rk4"
    horizon: float = Field(default=1.0, gt=0.0)


class GraphSection(_RunSection):
    box: float = 0.3
    points: int = 9
    galerkin: int = 0
    interp: str = "cubic"
    horizon: Optional[float] = None
    dt: float = 0.02
    scheme: str = "rk4"
    workers: int = Field(default=4, ge=1)


class SuiteSection(_RunSection):
    seed: int = Field(default=0, ge=0)
    samples: int = Field(default=4, ge=1, description="Random initial data per rate experiment")
    tube_samples: int = Field(default=50, ge=1, description="Candidates tested for tube membership")


class NeighborSection(_RunSection):
    c: float = 0.5
    c_prime: float = 0.501
    n: int = Field(default=128, gt=0)
    length: float = Field(default=32.0, gt=0.0)
    delta: float = 0.05


RUN_SECTIONS = {
    "model": ModelSection,
    "cutoff": CutoffSection,
    "integrator": IntegratorSection,
    "graph": GraphSection,
    "suite": SuiteSection,
    "neighbor": NeighborSection,
}


@dataclass
class RunConfig:
    """Structured run file contents; every section falls back to its defaults"""
    model: str = "lp-test"
    model_options: Dict[str, float] = field(default_factory=dict)
    nondeg_model: str = "center-test"
    cutoff: Dict[str, float] = field(default_factory=lambda: CutoffSection().model_dump())
    integrator: IntegratorConfig = field(default_factory=lambda: IntegratorConfig(**IntegratorSection().model_dump()))
    graph: Dict[str, object] = field(default_factory=lambda: GraphSection().model_dump(exclude_none=True))
    seed: int = 0
    samples: int = 4
    tube_samples: int = 50
    neighbor: Dict[str, float] = field(default_factory=lambda: NeighborSection().model_dump())

    def cutoff_params(self) -> CutoffParams:
        return CutoffParams(**self.cutoff)

    def design(self, side: str) -> GraphDesign:
        return GraphDesign(side=side, **self.graph)


GP_KEYS = ("n", "length", "c", "chi_radius", "n_transverse", "transverse_length")


def _section(parser: configparser.ConfigParser, name: str) -> Dict[str, str]:
    return dict(parser[name]) if parser.has_section(name) else {}


def _read_section(parser: configparser.ConfigParser, name: str) -> BaseModel:
    try:
        return RUN_SECTIONS[name](**_section(parser, name))
    except ValidationError as exc:
        error = exc.errors()[0]
        where = ".".join(str(part) for part in error["loc"])
        raise ParameterError(f"[{name}] {where}: {error['msg']}") from exc


def load_run_config(path: str) -> RunConfig:
    """Read an INI run file with sections [model], [cutoff], [integrator], [graph], [suite], [neighbor]"""
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        found = parser.read(path)
    except configparser.Error as exc:
        raise ParameterError(f"malformed run configuration {path}: {exc}") from exc
    if not found:
        raise ParameterError(f"cannot read run configuration {path}")
    unknown = set(parser.sections()) - set(RUN_SECTIONS)
    if unknown:
        raise ParameterError(f"unknown sections {sorted(unknown)} in {path}")
    sections = {name: _read_section(parser, name) for name in RUN_SECTIONS}
    model, suite = sections["model"], sections["suite"]
    config = RunConfig(
        model=model.kind,
        model_options=model.options(),
        nondeg_model=model.nondeg_kind,
        cutoff=sections["cutoff"].model_dump(),
        integrator=IntegratorConfig(**sections["integrator"].model_dump()),
        graph=sections["graph"].model_dump(exclude_none=True),
        seed=suite.seed,
        samples=suite.samples,
        tube_samples=suite.tube_samples,
        neighbor=sections["neighbor"].model_dump(),
    )
    logger.info(f"Loaded run configuration {path}: model {config.model}")
    return config


def build_model(kind: str, options: Optional[Dict[str, float]] = None) -> LinearizedModel:
    """Synthetic model by name, or 'gp' for the gray wave (optionally extended transversally)"""
    options = dict(options or {})
    if kind != "gp":
        return build_synthetic(kind, **options)
    unknown = set(options) - set(GP_KEYS)
    if unknown:
        raise ParameterError(f"unknown gp options {sorted(unknown)}")
    grid = Grid((int(options.get("n", 128)),), (float(options.get("length", 32.0)),))
    c = float(options.get("c", 0.5))
    profile = gray_wave(grid, c, ModelParams(chi_radius=float(options.get("chi_radius", 1.0)), c=(c,)))
    if options.get("n_transverse"):
        profile = transverse_extend(profile, int(options["n_transverse"]),
                                    float(options.get("transverse_length", 8.0)))
    return GPLinearization(profile)


def _graphs(dec: Decomposition, config: RunConfig) -> Dict[str, GraphFn]:
    params = config.cutoff_params()
    graphs = {}
    for side in ("cu", "cs"):
        graphs[side], _ = solve_graph(dec, params, config.design(side), check_invariance=False)
    return graphs


def run_suite(config: RunConfig, suite: str = "all", out_dir: Optional[str] = None) -> Dict[str, dict]:
    """Run the selected experiments; returns report dicts keyed by scenario"""
    if suite not in SUITES:
        raise ParameterError(f"suite must be one of {SUITES}, got '{suite}'")
    wanted = SUITES[:-1] if suite == "all" else (suite,)
    rng = np.random.default_rng(config.seed)
    params = config.cutoff_params()
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    reports: Dict[str, dict] = {}

    if any(s in wanted for s in ("attraction", "ejection", "tube")):
        dec = decompose(build_model(config.model, config.model_options))
        graphs = _graphs(dec, config)
        if "attraction" in wanted:
            reports["attraction"] = measure_attraction_cu(dec, params, graphs["cu"], rng=rng,
                                                          samples=config.samples, config=config.integrator,
                                                          out_dir=out_dir).to_dict()
        if "ejection" in wanted:
            reports["ejection"] = measure_ejection_cs(dec, params, graphs["cs"], rng=rng, samples=config.samples,
                                                      config=config.integrator, out_dir=out_dir).to_dict()
        if "tube" in wanted:
            candidates = tube_candidates(dec, graphs, rng, config.tube_samples)
            reports["tube"] = tube_characterization(dec, params, graphs, candidates, T=10.0 / dec.lam,
                                                    config=config.integrator).to_dict()
    if "nondeg" in wanted:
        nd_config = replace(config, graph={**config.graph, "box": 0.15, "points": 5, "galerkin": 1})
        dec = decompose(build_model(config.nondeg_model))
        graphs = _graphs(dec, nd_config)
        reports["nondeg"] = nondegenerate_stability(dec, params, graphs, rng=rng).to_dict()
    if "neighbor" in wanted:
        nb = config.neighbor
        grid = Grid((int(nb["n"]),), (float(nb["length"]),))
        profile = gray_wave(grid, float(nb["c"]))
        neighbor = gray_wave(grid, float(nb["c_prime"]))
        model = GPLinearization(profile)
        dec = decompose(model)
        nb_params = CutoffParams(delta=float(nb["delta"]), eta=params.eta, mu=params.mu, Q=params.Q)
        reports["neighbor"] = neighboring_wave_membership(profile, neighbor, dec, nb_params).to_dict()

    if out_dir:
        path = os.path.join(out_dir, "report.json")
        with open(path, "w") as fh:
            json.dump(reports, fh, indent=2, default=float)
        logger.info(f"Wrote verification report {path}")
    return reports
