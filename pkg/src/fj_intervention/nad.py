import time
from dataclasses import dataclass, field

import numpy as np
from loguru import logger
from tqdm import tqdm

from fj_intervention.equilibrium import LinearSolveConfig, SolverError, build_system, solve_equilibrium
from fj_intervention.feasible import (
    FeasibleSet,
    FrobeniusBall,
    NonNegative,
    Primitive,
    ProjectionError,
    check_membership,
    degree_equality,
    frobenius_ball,
    project,
)
from fj_intervention.graph import DecisionVector, FloatArray, NetworkTopology, assemble_weights
from fj_intervention.objectives import compare_metrics, opinion_metrics
from fj_intervention.optimizer import SolveReport


@dataclass(frozen=True)
class NadConfig:
    """
    Network Administrator Dynamics settings.

    `lam` = 0 gives plain NAD, `lam` > 0 the regularized variant. Dropping `degree_constraint` leaves
    only the Frobenius ball and non-negativity.
    """

    delta: float = 0.2
    lam: float = 0.0
    inner_tol: float = 1e-9
    outer_tol: float = 1e-5
    max_outer_iters: int = 200
    max_inner_iters: int = 5_000
    degree_constraint: bool = True
    solver: LinearSolveConfig = field(default_factory=LinearSolveConfig)

    def __post_init__(self) -> None:
        if self.delta <= 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.lam < 0:
            raise ValueError(f"lam must be non-negative, got {self.lam}")
        if self.inner_tol <= 0 or self.outer_tol <= 0:
            raise ValueError("inner_tol and outer_tol must be positive")
        if self.max_outer_iters < 1 or self.max_inner_iters < 1:
            raise ValueError("iteration limits must be at least 1")

    @property
    def label(self) -> str:
        return "nad" if self.lam == 0 else "nad-star"


def nad_feasible_set(topology: NetworkTopology, decision0: DecisionVector, config: NadConfig) -> FeasibleSet:
    """Out-degree preservation (optional), ||W - W(0)||_F <= delta ||W(0)||_F and w >= 0."""
    primitives: list[Primitive] = []
    if config.degree_constraint:
        primitives.append(degree_equality(decision0, assemble_weights(topology, decision0)))
    primitives += [frobenius_ball(decision0, config.delta), NonNegative()]
    return FeasibleSet(tuple(primitives), initial=decision0.values)


def nad_inner_step(
    y_fixed: FloatArray,
    decision0: DecisionVector,
    decision: DecisionVector,
    config: NadConfig,
    feasible: FeasibleSet | None = None,
) -> FloatArray:
    """
    Minimize 1/2 sum w_ij (y_i - y_j)^2 + lam sum w_ij^2 with the opinions held fixed.

    Projected gradient descent on the convex program: step 1/L for lam > 0, and for the linear
    lam = 0 case a step that moves twice the ball radius along the normalized gradient.
    """
    if feasible is None:
        feasible = nad_feasible_set(NetworkTopology.from_edges(len(y_fixed), [], []), decision0, config)
    gap = y_fixed[decision.slot_rows] - y_fixed[decision.slot_cols]
    linear = np.bincount(decision.slot_index, weights=0.5 * gap * gap, minlength=decision.m)
    weights = decision.multiplicity

    x = project(feasible, decision.values)
    if config.lam > 0:
        step = 1.0 / (2.0 * config.lam * weights.max())
    else:
        norm = float(np.linalg.norm(linear))
        if norm == 0:
            return x
        balls = [p for p in feasible.primitives if isinstance(p, FrobeniusBall)]
        scale = 2.0 * balls[0].radius if balls and balls[0].radius > 0 else 1.0
        step = scale / norm

    for _ in range(config.max_inner_iters):
        grad = linear + 2.0 * config.lam * weights * x
        x_next = project(feasible, x - step * grad)
        moved = float(np.linalg.norm(x_next - x))
        x = x_next
        if moved <= config.inner_tol * max(1.0, float(np.linalg.norm(x))):
            break
    else:
        logger.warning(f"NAD inner step hit {config.max_inner_iters} iterations")
    return x


def nad_run(
    topology: NetworkTopology,
    s: object,
    decision0: DecisionVector,
    config: NadConfig | None = None,
    *,
    progress: bool = False,
) -> SolveReport:
    """
    Alternate equilibrium computation and disagreement minimization under frozen opinions.

    Stops when ||w(k+1) - w(k)|| / max(1, ||w(k)||) <= `outer_tol`. `zeta_trace` holds these relative
    steps and `phi_trace` the disagreement at each equilibrium. Metrics compare P and D before and
    after the intervention.
    """
    cfg = config or NadConfig()
    report = SolveReport(algorithm=cfg.label, objective="disagreement")
    started = time.perf_counter()
    s_arr = np.asarray(s, dtype=np.float64).ravel()

    try:
        feasible = nad_feasible_set(topology, decision0, cfg)
    except ProjectionError as exc:
        report.failure = str(exc)
        return report
    reference = assemble_weights(topology, decision0)
    try:
        y = solve_equilibrium(build_system(reference, s_arr), cfg.solver)
    except SolverError as exc:
        report.failure = str(exc)
        return report
    before = opinion_metrics(reference, y)
    report.phi_trace.append(before["disagreement"])
    report.max_violations.append(max(check_membership(feasible, decision0.values).values(), default=0.0))
    logger.info(f"Starting {cfg.label} with m={decision0.m}, delta={cfg.delta}, lam={cfg.lam}")

    decision = decision0
    assembled = reference
    for k in tqdm(range(1, cfg.max_outer_iters + 1), disable=not progress, desc=cfg.label):
        inner_start = time.perf_counter()
        try:
            x = nad_inner_step(y, decision0, decision, cfg, feasible)
        except ProjectionError as exc:
            report.failure = str(exc)
            break
        report.add_time("inner_step", time.perf_counter() - inner_start)
        change = float(np.linalg.norm(x - decision.values)) / max(1.0, float(np.linalg.norm(decision.values)))
        decision = decision.with_values(x)
        assembled = assemble_weights(topology, decision)

        solve_start = time.perf_counter()
        try:
            y = solve_equilibrium(build_system(assembled, s_arr), cfg.solver, x0=y)
        except SolverError as exc:
            report.failure = str(exc)
            break
        report.add_time("forward_solve", time.perf_counter() - solve_start)

        report.iterations = k
        report.phi_trace.append(opinion_metrics(assembled, y)["disagreement"])
        report.zeta_trace.append(change)
        report.zeta_modes.append("step")
        report.max_violations.append(max(check_membership(feasible, x).values(), default=0.0))
        logger.debug(f"{cfg.label} iteration {k}: D={report.phi_trace[-1]:.6e}, relative step {change:.3e}")
        if change <= cfg.outer_tol:
            report.converged = True
            break

    report.weights = decision.values
    report.opinions = y
    report.metrics = compare_metrics(before, opinion_metrics(assembled, y))
    report.add_time("total", time.perf_counter() - started)
    logger.info(f"{cfg.label} finished after {report.iterations} iterations, converged={report.converged}")
    return report
