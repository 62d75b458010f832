import time
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from loguru import logger
from tqdm import tqdm

from fj_intervention.equilibrium import LinearSolveConfig, SolverError
from fj_intervention.feasible import FeasibleSet, ProjectionError, check_membership, project
from fj_intervention.graph import DecisionVector, FloatArray, NetworkTopology
from fj_intervention.hypergradient import HypergradientResult, hypergradient
from fj_intervention.objectives import ObjectiveSpec

StepSchedule = Callable[[int], float]


def auto_step_size(count: int) -> float:
    """alpha = count / 100, count being the number of governed weights (n users or m slots)."""
    if count < 1:
        raise ValueError(f"variable count must be positive, got {count}")
    return count / 100


def zeta(phi_prev: float, phi_curr: float) -> tuple[float, str]:
    """
    Relative decrease |phi_prev - phi_curr| / |phi_prev| used as the stopping criterion.

    Falls back to the absolute difference when phi_prev is 0; the second item names the mode.
    """
    if not (np.isfinite(phi_prev) and np.isfinite(phi_curr)):
        raise ValueError(f"objective values must be finite, got {phi_prev} and {phi_curr}")
    change = abs(phi_prev - phi_curr)
    if phi_prev == 0:
        return change, "absolute"
    return change / abs(phi_prev), "relative"


@dataclass(frozen=True)
class OptimizerConfig:
    """
    Hyperparameters of projected gradient descent with momentum.

    `alpha` is a constant or a schedule k -> alpha(k); leave it unset with `auto_step` to use
    `auto_step_size` over `step_basis` (defaults to the number of governed slots).
    The automatic step is meant for networks with many variables; with only a handful it is
    tiny and the run stops on `epsilon` after one short step, so pass `alpha` explicitly there.
    """

    alpha: float | StepSchedule | None = None
    gamma: float = 0.95
    epsilon: float = 1e-3
    max_outer_iters: int = 10_000
    auto_step: bool = True
    step_basis: int | None = None
    strict: bool = False
    solver: LinearSolveConfig = field(default_factory=LinearSolveConfig)

    def __post_init__(self) -> None:
        if not 0 <= self.gamma < 1:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.max_outer_iters < 1:
            raise ValueError(f"max_outer_iters must be at least 1, got {self.max_outer_iters}")
        if self.alpha is None and not self.auto_step:
            raise ValueError("alpha is required when auto_step is disabled")
        if isinstance(self.alpha, int | float) and self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")

    def step_size(self, k: int, decision: DecisionVector) -> float:
        if self.alpha is None:
            return auto_step_size(self.step_basis or decision.num_slots)
        if callable(self.alpha):
            return float(self.alpha(k))
        return float(self.alpha)


@dataclass
class SolveReport:
    """Traces and outcome of one optimization run; `phi_trace` has one entry more than `iterations`."""

    algorithm: str
    objective: str
    iterations: int = 0
    converged: bool = False
    phi_trace: list[float] = field(default_factory=list)
    zeta_trace: list[float] = field(default_factory=list)
    zeta_modes: list[str] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    max_violations: list[float] = field(default_factory=list)
    forward_residuals: list[float] = field(default_factory=list)
    adjoint_residuals: list[float] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    weights: FloatArray | None = None
    opinions: FloatArray | None = None
    step_size: float | None = None
    initial_projection_distance: float = 0.0
    failure: str | None = None
    metrics: dict[str, float] = field(default_factory=dict)

    def add_time(self, phase: str, seconds: float) -> None:
        self.timings[phase] = self.timings.get(phase, 0.0) + seconds

    def trace_rows(self) -> list[list[Any]]:
        rows: list[list[Any]] = []
        for k, phi in enumerate(self.phi_trace):
            rows.append(
                [
                    k,
                    phi,
                    self.zeta_trace[k - 1] if k > 0 else "",
                    self.zeta_modes[k - 1] if k > 0 else "",
                    self.grad_norms[k] if k < len(self.grad_norms) else "",
                    self.max_violations[k] if k < len(self.max_violations) else "",
                    self.forward_residuals[k] if k < len(self.forward_residuals) else "",
                    self.adjoint_residuals[k] if k < len(self.adjoint_residuals) else "",
                ]
            )
        return rows

    def summary(self) -> dict[str, Any]:
        return {
            "algorithm": self.algorithm,
            "objective": self.objective,
            "iterations": self.iterations,
            "converged": self.converged,
            "initial_phi": self.phi_trace[0] if self.phi_trace else None,
            "final_phi": self.phi_trace[-1] if self.phi_trace else None,
            "final_zeta": self.zeta_trace[-1] if self.zeta_trace else None,
            "absolute_zeta_used": "absolute" in self.zeta_modes,
            "step_size": self.step_size,
            "initial_projection_distance": self.initial_projection_distance,
            "max_forward_residual": max(self.forward_residuals, default=None),
            "max_adjoint_residual": max(self.adjoint_residuals, default=None),
            "timings": dict(self.timings),
            "failure": self.failure,
            "metrics": dict(self.metrics),
        }


TRACE_HEADER = ["iteration", "phi", "zeta", "zeta_mode", "grad_norm", "max_violation", "forward_residual", "adjoint_residual"]


def _record(report: SolveReport, result: HypergradientResult, feasible: FeasibleSet, x: FloatArray) -> None:
    report.phi_trace.append(result.value)
    report.grad_norms.append(float(np.linalg.norm(result.gradient)))
    report.max_violations.append(max(check_membership(feasible, x).values(), default=0.0))
    report.forward_residuals.append(result.forward_residual)
    report.adjoint_residuals.append(result.adjoint_residual)
    for phase, seconds in result.timings.items():
        report.add_time(phase, seconds)


def _without_variables(
    report: SolveReport,
    decision: DecisionVector,
    topology: NetworkTopology,
    s: object,
    objective: ObjectiveSpec,
    feasible: FeasibleSet,
    cfg: OptimizerConfig,
    started: float,
) -> SolveReport:
    # nothing to move: phi(0) is the terminal value
    logger.info(f"No decision variables for {objective.name}, returning the initial equilibrium")
    try:
        result = hypergradient(decision, topology, s, objective, cfg.solver)
    except SolverError as exc:
        report.failure = str(exc)
        return report
    _record(report, result, feasible, decision.values)
    report.converged = True
    report.weights = decision.values
    report.opinions = result.y
    report.add_time("total", time.perf_counter() - started)
    return report


def optimize(
    topology: NetworkTopology,
    s: object,
    decision0: DecisionVector,
    objective: ObjectiveSpec,
    feasible: FeasibleSet,
    config: OptimizerConfig | None = None,
    *,
    progress: bool = False,
) -> SolveReport:
    """
    Minimize phi(w, y*(w)) over the feasible set by projected gradient descent with momentum.

        m(k+1) = gamma m(k) + grad phi(w(k))
        w(k+1) = Proj[w(k) - alpha(k) m(k+1)]

    The equilibrium and the objective are evaluated at each projected iterate; the run stops once
    `zeta` drops to `epsilon`. A linear-solver or projection failure ends the run with a partial
    report whose `failure` field holds the diagnostic.
    """
    cfg = config or OptimizerConfig()
    if cfg.strict and not objective.checked:
        raise ValueError(f"objective {objective.name!r} has not passed the gradient check")
    report = SolveReport(algorithm="beers", objective=objective.name)
    started = time.perf_counter()

    try:
        x = project(feasible, decision0.values)
    except ProjectionError as exc:
        report.failure = str(exc)
        return report
    report.initial_projection_distance = float(np.linalg.norm(x - decision0.values))
    if report.initial_projection_distance > feasible.projection_tol:
        logger.warning(f"Initial weights were infeasible, projected by distance {report.initial_projection_distance:.3e}")
    decision = decision0.with_values(x)
    if decision.m == 0:
        return _without_variables(report, decision, topology, s, objective, feasible, cfg, started)
    report.step_size = cfg.step_size(1, decision)
    logger.info(
        f"Starting BeeRS on {objective.name} with m={decision.m}, alpha={report.step_size}, gamma={cfg.gamma}, epsilon={cfg.epsilon}"
    )

    try:
        result = hypergradient(decision, topology, s, objective, cfg.solver)
    except SolverError as exc:
        report.failure = str(exc)
        return report
    _record(report, result, feasible, x)

    momentum = np.zeros(decision.m)
    for k in tqdm(range(1, cfg.max_outer_iters + 1), disable=not progress, desc="BeeRS"):
        momentum = cfg.gamma * momentum + result.gradient
        step_start = time.perf_counter()
        try:
            x = project(feasible, x - cfg.step_size(k, decision) * momentum)
        except ProjectionError as exc:
            report.failure = str(exc)
            break
        report.add_time("projection", time.perf_counter() - step_start)
        decision = decision.with_values(x)

        phi_prev = result.value
        try:
            result = hypergradient(decision, topology, s, objective, cfg.solver, y0=result.y, v0=result.adjoint.v)
        except SolverError as exc:
            report.failure = str(exc)
            break
        _record(report, result, feasible, x)
        report.iterations = k

        value, mode = zeta(phi_prev, result.value)
        report.zeta_trace.append(value)
        report.zeta_modes.append(mode)
        logger.debug(f"Iteration {k}: phi={result.value:.6e}, zeta={value:.3e} ({mode})")
        if value <= cfg.epsilon:
            report.converged = True
            break

    report.weights = x
    report.opinions = result.y
    report.add_time("total", time.perf_counter() - started)
    if report.failure:
        logger.error(f"BeeRS stopped after {report.iterations} iterations: {report.failure}")
    else:
        logger.info(f"BeeRS finished after {report.iterations} iterations, converged={report.converged}, phi={result.value:.6e}")
    return report
