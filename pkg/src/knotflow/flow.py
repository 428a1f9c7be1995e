"""Gradient flows of the total energy: explicit Hilbert steps and minimizing movements.

Both schemes work on plain state arrays through a small problem interface
(``value``, ``parts``, ``gradient``, ``diagnostics``) so the same stepping
code runs knot flows and linear model problems.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import CurveFormatError, GeometryError, KnotFlowError, MonitorTripped, ParameterError, StepFailure
from .geometry import ClosedCurve, bilipschitz_constant, node_speeds
from .sobolev import (
    SobolevNorm,
    SpectralMetric,
    TotalEnergyConfig,
    conjugate_exponent,
    duality_map_hilbert_inverse,
    l2_pairing,
    total_energy_gradient,
    total_energy_parts,
)

SCHEMES = ("hilbert_explicit", "minimizing_movement")


@dataclass(frozen=True)
class InnerSolverConfig:
    max_iters: int = 100
    tol: float = 1e-6
    shrink: float = 0.5
    armijo: float = 1e-4
    stall_window: int = 10


@dataclass(frozen=True)
class MonitorConfig:
    bilip_floor_fraction: float = 0.1
    speed_floor_fraction: float = 0.1


@dataclass(frozen=True)
class FlowConfig:
    theta: float = 2.0
    tau: float = 1e-3
    scheme: str = "hilbert_explicit"
    max_steps: int = 100
    stop_grad_tol: float = 1e-10
    armijo: float = 0.1
    max_halvings: int = 40
    inner: InnerSolverConfig = field(default_factory=InnerSolverConfig)
    monitors: MonitorConfig = field(default_factory=MonitorConfig)

    def __post_init__(self):
        conjugate_exponent(self.theta)
        if self.scheme not in SCHEMES:
            raise ParameterError(f"scheme must be one of {SCHEMES} (got {self.scheme!r})")
        if not self.tau > 0:
            raise ParameterError(f"tau > 0 violated (tau = {self.tau:g})")
        if self.max_steps < 0:
            raise ParameterError("max_steps >= 0 violated")

    @property
    def beta(self) -> float:
        return conjugate_exponent(self.theta)


# -- problems -----------------------------------------------------------------


class CurveProblem:
    """phi = E + penalty on node arrays, +inf off the regular embedded curves."""

    def __init__(self, cfg: TotalEnergyConfig):
        self.cfg = cfg

    def curve(self, x) -> ClosedCurve:
        return ClosedCurve(x)

    def parts(self, x) -> tuple[float, float]:
        try:
            curve = self.curve(x)
        except CurveFormatError:
            return math.inf, math.inf
        p = total_energy_parts(curve, self.cfg)
        return p.energy, p.penalty

    def value(self, x) -> float:
        return sum(self.parts(x))

    def gradient(self, x) -> np.ndarray:
        return total_energy_gradient(self.curve(x), self.cfg)

    def diagnostics(self, x) -> tuple[float, float]:
        """(bilip, min_speed)."""
        curve = self.curve(x)
        return bilipschitz_constant(curve), float(np.min(node_speeds(curve, floor=0.0)))


class QuadraticModel:
    """phi(u) = <A u, u>_L2 / 2 for a symmetric positive semidefinite A; gradient A u."""

    def __init__(self, matrix):
        a = np.asarray(matrix, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or not np.allclose(a, a.T):
            raise ParameterError("quadratic model needs a symmetric square matrix")
        self.matrix = a

    def parts(self, x) -> tuple[float, float]:
        return self.value(x), 0.0

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return 0.5 * l2_pairing(self.matrix @ x, x)

    def gradient(self, x) -> np.ndarray:
        return self.matrix @ np.asarray(x, dtype=float)

    def diagnostics(self, x) -> tuple[float, float]:
        return math.nan, math.nan

    def exact_flow(self, x0, t: float) -> np.ndarray:
        """Solution of u' = -A u (the theta = 2, L2-metric gradient flow)."""
        return expm(-t * self.matrix) @ np.asarray(x0, dtype=float)


# -- trajectory records -------------------------------------------------------


@dataclass(frozen=True)
class TrajectorySample:
    t: float
    nodes: np.ndarray
    phi: float
    energy: float
    penalty: float
    slope_dual_norm: float
    metric_speed: float
    bilip: float
    min_speed: float
    step_accepted: bool
    inner_iterations: int = 0
    inner_stall: bool = False

    @property
    def curve(self) -> ClosedCurve:
        return ClosedCurve(self.nodes)

    def to_record(self, include_nodes: bool = False) -> dict:
        rec = {
            "t": self.t,
            "phi": self.phi,
            "energy": self.energy,
            "penalty": self.penalty,
            "slope_dual_norm": self.slope_dual_norm,
            "metric_speed": self.metric_speed,
            "bilip": self.bilip,
            "min_speed": self.min_speed,
            "step_accepted": self.step_accepted,
            "inner_iterations": self.inner_iterations,
            "inner_stall": self.inner_stall,
        }
        if include_nodes:
            rec["nodes"] = self.nodes.tolist()
        return rec


@dataclass(frozen=True)
class LedgerRecord:
    t_start: float
    t_end: float
    dphi: float
    int_g_beta: float
    int_speed_theta: float
    residual: float
    ratio: float


@dataclass
class DissipationLedger:
    records: list[LedgerRecord] = field(default_factory=list)

    @property
    def cumulative_residual(self) -> float:
        return math.fsum(r.residual for r in self.records)

    @property
    def cumulative_abs_residual(self) -> float:
        return math.fsum(abs(r.residual) for r in self.records)

    def rows(self) -> list[tuple]:
        return [(r.t_start, r.t_end, r.dphi, r.int_g_beta, r.int_speed_theta, r.residual) for r in self.records]


def dissipation_report(samples: list[TrajectorySample], cfg: FlowConfig) -> DissipationLedger:
    """Per-interval balance dphi + (1/beta) int g^beta + (1/theta) int |u'|^theta.

    Rectangle rules: the slope is taken from the left sample, the metric
    speed from the right one (it describes the step that produced it).
    """
    theta, beta = cfg.theta, cfg.beta
    ledger = DissipationLedger()
    for left, right in zip(samples, samples[1:]):
        dt = right.t - left.t
        dphi = right.phi - left.phi
        gb = left.slope_dual_norm**beta
        st = right.metric_speed**theta
        int_g = dt * gb / beta
        int_s = dt * st / theta
        ratio = gb / st if st > 0 else (1.0 if gb == 0 else math.inf)
        ledger.records.append(LedgerRecord(left.t, right.t, dphi, int_g, int_s, dphi + int_g + int_s, ratio))
    return ledger


# -- single steps -------------------------------------------------------------


@dataclass(frozen=True)
class StepOutcome:
    state: np.ndarray
    dt: float
    phi: float
    parts: tuple[float, float]
    metric_speed: float
    inner_iterations: int = 0
    inner_stall: bool = False


def hilbert_flow_step(problem, x, cfg: FlowConfig, metric: SpectralMetric, grad=None) -> StepOutcome:
    """Explicit step u+ = u - tau J^{-1}(D phi(u)) with Armijo halving of tau."""
    x = np.asarray(x, dtype=float)
    if grad is None:
        grad = problem.gradient(x)
    beta = cfg.beta
    slope = metric.dual_norm(grad)
    phi0 = problem.value(x)
    direction = duality_map_hilbert_inverse(grad, cfg.theta, metric)
    tau = cfg.tau
    for _ in range(cfg.max_halvings + 1):
        trial = x - tau * direction
        parts = problem.parts(trial)
        phi1 = sum(parts)
        if phi1 <= phi0 - cfg.armijo * tau * slope**beta:
            return StepOutcome(trial, tau, phi1, parts, metric.norm(direction))
        tau *= 0.5
    raise StepFailure(f"no admissible step after {cfg.max_halvings} halvings (tau = {tau:.3e})")


def _proximal_descent(problem, u, cfg: FlowConfig, norm, precond: SpectralMetric) -> StepOutcome:
    inner = cfg.inner
    theta = cfg.theta
    c = cfg.tau ** (1.0 - theta) / theta

    def psi(v):
        parts = problem.parts(v)
        phi = sum(parts)
        if not math.isfinite(phi):
            return math.inf, parts
        return phi + c * norm(v - u) ** theta, parts

    def grad(v):
        return problem.gradient(v) + c * norm.grad_power(v - u, theta)

    v = u.copy()
    f, parts = psi(v)
    g = grad(v)
    d = -precond.solve(g)
    gd = l2_pairing(g, d)
    target = inner.tol * math.sqrt(max(-gd, 0.0))
    alpha = cfg.tau
    stalled = 0
    stall = False
    it = 0
    while it < inner.max_iters and math.sqrt(max(-gd, 0.0)) > target:
        it += 1
        while True:
            trial = v + alpha * d
            f_new, parts_new = psi(trial)
            if f_new <= f + inner.armijo * alpha * gd:
                break
            alpha *= inner.shrink
            if alpha < 1e-30:
                break
        if not f_new <= f:
            stall = True
            break
        stalled = stalled + 1 if f - f_new <= 1e-15 * max(1.0, abs(f)) else 0
        g_new = grad(trial)
        s = trial - v
        y = g_new - g
        v, f, parts, g = trial, f_new, parts_new, g_new
        if stalled >= inner.stall_window:
            stall = True
            break
        d = -precond.solve(g)
        gd = l2_pairing(g, d)
        sy = l2_pairing(s, y)
        alpha = precond.inner(s, s) / sy if sy > 0 else 2.0 * alpha
    move = norm(v - u)
    return StepOutcome(v, cfg.tau, sum(parts), parts, move / cfg.tau, it, stall)


def minimizing_movement_step(problem, x, cfg: FlowConfig, norm, precond: SpectralMetric | None = None) -> StepOutcome:
    """u_{k+1} = argmin_v phi(v) + tau^{1-theta} ||v - u_k||^theta / theta, by preconditioned descent.

    The descent starts at v = u_k and only accepts decreasing iterates, so
    phi(u_{k+1}) never exceeds phi(u_k).
    """
    x = np.asarray(x, dtype=float)
    if precond is None:
        if isinstance(norm, SpectralMetric):
            precond = norm
        else:
            precond = SpectralMetric.bessel(norm.spec.order, x.shape[0])
    return _proximal_descent(problem, x, cfg, norm, precond)


# -- driver -------------------------------------------------------------------


@dataclass
class FlowResult:
    samples: list[TrajectorySample]
    ledger: DissipationLedger
    termination: str
    steps: int
    error: str | None = None

    @property
    def phi_start(self) -> float:
        return self.samples[0].phi

    @property
    def phi_end(self) -> float:
        return self.samples[-1].phi

    @property
    def final_state(self) -> np.ndarray:
        return self.samples[-1].nodes


def flow_norm(energy_cfg: TotalEnergyConfig, flow_cfg: FlowConfig, n: int):
    """The metric of C_eps used by each scheme: spectral for Hilbert steps, Gagliardo otherwise."""
    spec = energy_cfg.flow_spec
    if flow_cfg.scheme == "hilbert_explicit":
        if energy_cfg.rho != 2.0:
            raise ParameterError(f"hilbert_explicit requires rho = 2 (rho = {energy_cfg.rho:g})")
        if not energy_cfg.differentiable:
            raise ParameterError("kappa > 1 required: kappa = 1 is a non-differentiable penalty; minimizing movements only")
        return SpectralMetric.bessel(spec.order, n)
    return SobolevNorm(spec)


def _dual(norm, grad) -> float:
    return norm.dual_norm(grad)


def _sample(problem, norm, x, t, parts, speed, accepted, grad=None, inner_iterations=0, stall=False):
    if grad is None:
        grad = problem.gradient(x)
    bilip, vmin = problem.diagnostics(x)
    sample = TrajectorySample(
        t=t,
        nodes=np.array(x, dtype=float),
        phi=sum(parts),
        energy=parts[0],
        penalty=parts[1],
        slope_dual_norm=_dual(norm, grad),
        metric_speed=speed,
        bilip=bilip,
        min_speed=vmin,
        step_accepted=accepted,
        inner_iterations=inner_iterations,
        inner_stall=stall,
    )
    return sample, grad


def _check_monitors(sample: TrajectorySample, floors: dict) -> None:
    for name, value in (("bilip", sample.bilip), ("min_speed", sample.min_speed)):
        floor = floors.get(name)
        if floor is not None and math.isfinite(value) and value < floor:
            raise MonitorTripped(f"{name} = {value:.4g} fell below floor {floor:.4g}", name=name, value=value, floor=floor)


def run_problem_flow(problem, x0, cfg: FlowConfig, norm, precond=None, monitors: bool = True) -> FlowResult:
    """Iterate the configured scheme from x0 until convergence, max_steps, or a failure.

    Failures (monitor trips, step failures, geometry errors) end the run;
    the trajectory recorded up to that point is always returned.
    """
    x = np.array(x0, dtype=float)
    parts = problem.parts(x)
    if not math.isfinite(sum(parts)):
        raise GeometryError("initial state has infinite total energy")
    sample, grad = _sample(problem, norm, x, 0.0, parts, 0.0, True)
    samples = [sample]
    floors = {}
    if monitors:
        floors = {
            "bilip": cfg.monitors.bilip_floor_fraction * sample.bilip,
            "min_speed": cfg.monitors.speed_floor_fraction * sample.min_speed,
        }
    termination = "max_steps"
    error = None
    steps = 0
    try:
        _check_monitors(sample, floors)
        while steps < cfg.max_steps:
            if samples[-1].slope_dual_norm <= cfg.stop_grad_tol:
                termination = "converged"
                break
            if cfg.scheme == "hilbert_explicit":
                out = hilbert_flow_step(problem, x, cfg, norm, grad=grad)
            else:
                out = minimizing_movement_step(problem, x, cfg, norm, precond)
            steps += 1
            x = out.state
            sample, grad = _sample(
                problem, norm, x, samples[-1].t + out.dt, out.parts, out.metric_speed, True,
                inner_iterations=out.inner_iterations, stall=out.inner_stall,
            )
            samples.append(sample)
            _check_monitors(sample, floors)
        else:
            if samples[-1].slope_dual_norm <= cfg.stop_grad_tol:
                termination = "converged"
    except MonitorTripped as exc:
        termination = f"monitor:{exc.name}"
        error = str(exc)
    except StepFailure as exc:
        termination = "step_failure"
        error = str(exc)
    except GeometryError as exc:
        termination = "geometry"
        error = str(exc)
    return FlowResult(samples, dissipation_report(samples, cfg), termination, steps, error)


def run_flow(initial: ClosedCurve, energy_cfg: TotalEnergyConfig, flow_cfg: FlowConfig) -> FlowResult:
    problem = CurveProblem(energy_cfg)
    norm = flow_norm(energy_cfg, flow_cfg, initial.n_nodes)
    return run_problem_flow(problem, initial.nodes, flow_cfg, norm)


# -- epsilon sweep ------------------------------------------------------------


def _interpolate(samples: list[TrajectorySample], times: np.ndarray) -> list[np.ndarray]:
    ts = np.array([s.t for s in samples])
    out = []
    for t in times:
        k = int(np.searchsorted(ts, t, side="right")) - 1
        k = min(max(k, 0), len(samples) - 1)
        if k == len(samples) - 1 or ts[k + 1] == ts[k]:
            out.append(samples[k].nodes)
        else:
            w = (t - ts[k]) / (ts[k + 1] - ts[k])
            out.append((1 - w) * samples[k].nodes + w * samples[k + 1].nodes)
    return out


@dataclass
class SweepReport:
    eps: list[float]
    phi0: float
    results: list[FlowResult | None]
    errors: list[str | None]
    times: list[float]
    distances: dict[tuple[int, int], list[float]]
    tolerance: float

    @property
    def phi_bound_ok(self) -> bool:
        return all(r is not None for r in self.results) and self.max_phi_excess <= self.tolerance

    @property
    def max_phi_excess(self) -> float:
        excess = [s.phi - self.phi0 for r in self.results if r is not None for s in r.samples]
        return max(excess) if excess else -math.inf

    def to_dict(self) -> dict:
        return {
            "eps": self.eps,
            "phi0": self.phi0,
            "tolerance": self.tolerance,
            "phi_bound_ok": self.phi_bound_ok,
            "max_phi_excess": self.max_phi_excess,
            "runs": [
                {
                    "eps": e,
                    "error": err,
                    "termination": None if r is None else r.termination,
                    "steps": None if r is None else r.steps,
                    "phi_end": None if r is None else r.phi_end,
                    "max_phi": None if r is None else max(s.phi for s in r.samples),
                }
                for e, r, err in zip(self.eps, self.results, self.errors)
            ],
            "times": self.times,
            "distances": [
                {"i": i, "j": j, "eps_i": self.eps[i], "eps_j": self.eps[j], "b_norm": d}
                for (i, j), d in sorted(self.distances.items())
            ],
        }


def eps_sweep(
    initial: ClosedCurve,
    energy_cfg: TotalEnergyConfig,
    eps_list,
    flow_cfg: FlowConfig,
    tolerance: float = 1e-8,
    grid_points: int = 21,
) -> SweepReport:
    """Run the flow for each epsilon from the same initial curve and compare the runs.

    phi does not involve epsilon (only the metric does), so every recorded
    phi is checked against phi(initial).  Pairwise distances are measured in
    the ambient norm B on a shared uniform time grid.
    """
    eps = [float(e) for e in eps_list]
    if not eps:
        raise ParameterError("eps list must be nonempty")
    if any(e <= 0 for e in eps):
        raise ParameterError("eps > 0 violated")
    if any(b > a for a, b in zip(eps, eps[1:])):
        raise ParameterError("eps list must be nonincreasing")
    phi0 = total_energy_parts(initial, energy_cfg).phi
    results: list[FlowResult | None] = []
    errors: list[str | None] = []
    for e in eps:
        try:
            res = run_flow(initial, energy_cfg.with_epsilon(e), flow_cfg)
            results.append(res)
            errors.append(res.error)
        except KnotFlowError as exc:
            results.append(None)
            errors.append(f"{type(exc).__name__}: {exc}")
    done = [r for r in results if r is not None]
    t_end = min((r.samples[-1].t for r in done), default=0.0)
    times = np.linspace(0.0, t_end, grid_points) if t_end > 0 else np.array([0.0])
    b_norm = SobolevNorm(energy_cfg.ambient_spec)
    tracks = {i: _interpolate(r.samples, times) for i, r in enumerate(results) if r is not None}
    distances = {}
    for i in tracks:
        for j in tracks:
            if i < j:
                distances[(i, j)] = [b_norm(a - b) for a, b in zip(tracks[i], tracks[j])]
    return SweepReport(eps, phi0, results, errors, times.tolist(), distances, tolerance)


__all__ = [
    "CurveProblem",
    "DissipationLedger",
    "FlowConfig",
    "FlowResult",
    "InnerSolverConfig",
    "MonitorConfig",
    "QuadraticModel",
    "SweepReport",
    "TrajectorySample",
    "dissipation_report",
    "eps_sweep",
    "flow_norm",
    "hilbert_flow_step",
    "minimizing_movement_step",
    "run_flow",
    "run_problem_flow",
]
