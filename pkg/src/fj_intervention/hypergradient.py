import time
from dataclasses import dataclass, field

import numpy as np

from fj_intervention.equilibrium import (
    EquilibriumSystem,
    LinearSolveConfig,
    build_system,
    equilibrium_residual,
    solve_equilibrium,
    solve_linear,
)
from fj_intervention.graph import DecisionVector, FloatArray, NetworkTopology, assemble_weights
from fj_intervention.objectives import ObjectiveSpec


@dataclass(frozen=True)
class AdjointState:
    v: FloatArray
    hypergrad: FloatArray


@dataclass(frozen=True)
class HypergradientResult:
    """Total gradient of phi(w, y*(w)) plus the quantities computed on the way."""

    gradient: FloatArray
    y: FloatArray
    value: float
    adjoint: AdjointState
    topology: NetworkTopology
    forward_residual: float
    adjoint_residual: float
    timings: dict[str, float] = field(default_factory=dict)


def _relative(residual: float, reference: FloatArray) -> float:
    norm = float(np.linalg.norm(reference))
    return residual / norm if norm > 0 else residual


def solve_adjoint(
    system: EquilibriumSystem,
    grad_y: object,
    config: LinearSolveConfig | None = None,
    *,
    x0: FloatArray | None = None,
) -> FloatArray:
    """Adjoint vector v with A(w)^T v = grad_y phi (J_2 F = A(w))."""
    g = np.asarray(grad_y, dtype=np.float64).ravel()
    if not np.all(np.isfinite(g)):
        raise ValueError("grad_y must be finite")
    return solve_linear(system, g, config, transpose=True, x0=x0)


def j1f_vjp(decision: DecisionVector, y: FloatArray, v: FloatArray) -> FloatArray:
    """
    J_1F(w, y)^T v without forming J_1F.

    Row i of J_1F holds y_i - y_j in the column of w_ij, so the slot (i, j) contributes
    v_i (y_i - y_j); tied slots add up in their shared decision variable.
    """
    if len(y) != len(v):
        raise ValueError(f"y and v must have equal length, got {len(y)} and {len(v)}")
    rows, cols = decision.slot_rows, decision.slot_cols
    if len(rows) and max(rows.max(), cols.max()) >= len(y):
        raise ValueError(f"decision slots reference nodes beyond n={len(y)}")
    return np.bincount(decision.slot_index, weights=v[rows] * (y[rows] - y[cols]), minlength=decision.m)


def hypergradient(
    decision: DecisionVector,
    topology: NetworkTopology,
    s: object,
    objective: ObjectiveSpec,
    config: LinearSolveConfig | None = None,
    *,
    y0: FloatArray | None = None,
    v0: FloatArray | None = None,
) -> HypergradientResult:
    """
    grad_w phi(w, y*(w)) = grad_1 phi - J_1F^T v, with A(w)^T v = grad_2 phi.

    One forward and one transposed solve replace the m solves an explicit sensitivity would need.
    `y0` and `v0` warm-start the iterative solvers.
    """
    s_arr = np.asarray(s, dtype=np.float64).ravel()

    start = time.perf_counter()
    assembled = assemble_weights(topology, decision)
    system = build_system(assembled, s_arr)
    y = solve_equilibrium(system, config, x0=y0)
    forward_done = time.perf_counter()

    value = objective.evaluate(decision, assembled, y)
    grad_w = objective.grad_w(decision, assembled, y)
    grad_y = objective.grad_y(decision, assembled, y)
    objective_done = time.perf_counter()

    v = solve_adjoint(system, grad_y, config, x0=v0)
    gradient = grad_w - j1f_vjp(decision, y, v)
    adjoint_done = time.perf_counter()

    adjoint_residual = float(np.linalg.norm(system.matrix.T @ v - grad_y))
    return HypergradientResult(
        gradient=gradient,
        y=y,
        value=value,
        adjoint=AdjointState(v=v, hypergrad=gradient),
        topology=assembled,
        forward_residual=_relative(equilibrium_residual(system, y), s_arr),
        adjoint_residual=_relative(adjoint_residual, grad_y),
        timings={
            "forward_solve": forward_done - start,
            "objective": objective_done - forward_done,
            "adjoint_solve": adjoint_done - objective_done,
        },
    )


def objective_at(
    decision: DecisionVector,
    topology: NetworkTopology,
    s: object,
    objective: ObjectiveSpec,
    config: LinearSolveConfig | None = None,
) -> float:
    """phi(w, y*(w)) with the equilibrium recomputed for `decision`."""
    assembled = assemble_weights(topology, decision)
    y = solve_equilibrium(build_system(assembled, np.asarray(s, dtype=np.float64).ravel()), config)
    return objective.evaluate(decision, assembled, y)


def finite_difference_hypergradient(
    decision: DecisionVector,
    topology: NetworkTopology,
    s: object,
    objective: ObjectiveSpec,
    config: LinearSolveConfig | None = None,
    *,
    step: float = 1e-6,
) -> FloatArray:
    """Central differences of `objective_at`, one pair of equilibrium solves per decision variable."""
    grad = np.zeros(decision.m)
    for k in range(decision.m):
        plus, minus = decision.values.copy(), decision.values.copy()
        plus[k] += step
        minus[k] -= step
        grad[k] = (
            objective_at(decision.with_values(plus), topology, s, objective, config)
            - objective_at(decision.with_values(minus), topology, s, objective, config)
        ) / (2 * step)
    return grad


def explicit_hypergradient(
    decision: DecisionVector,
    topology: NetworkTopology,
    s: object,
    objective: ObjectiveSpec,
) -> FloatArray:
    """
    Dense reference: grad_1 phi + J y*(w)^T grad_2 phi with J y* = -A(w)^{-1} J_1F formed explicitly.

    Costs m dense solves; meant for checking `hypergradient` on small networks.
    """
    s_arr = np.asarray(s, dtype=np.float64).ravel()
    assembled = assemble_weights(topology, decision)
    a = build_system(assembled, s_arr).matrix.toarray()
    y = np.linalg.solve(a, s_arr)

    j1f = np.zeros((len(y), decision.m))
    np.add.at(j1f, (decision.slot_rows, decision.slot_index), y[decision.slot_rows] - y[decision.slot_cols])
    sensitivity = -np.linalg.solve(a, j1f)
    return objective.grad_w(decision, assembled, y) + sensitivity.T @ objective.grad_y(decision, assembled, y)
