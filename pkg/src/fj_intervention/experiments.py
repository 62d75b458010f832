import time
from collections.abc import Callable
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from itertools import product
from pathlib import Path
from typing import Any, ClassVar

import numpy as np
from loguru import logger
from tqdm import tqdm

from fj_intervention.config import ExperimentConfig, load_config, with_overrides
from fj_intervention.equilibrium import LinearSolveConfig, build_system, solve_equilibrium
from fj_intervention.feasible import (
    BudgetHalfspace,
    FeasibleSet,
    NonNegative,
    check_membership,
    degree_equality,
    frobenius_ball,
    project,
)
from fj_intervention.graph import (
    DecisionVector,
    FloatArray,
    IntArray,
    NetworkTopology,
    append_neutral_node,
    assemble_weights,
    column_decision,
    edge_decision,
    load_edge_list,
    load_opinions,
    synthesize_bimodal,
    synthesize_polarized,
)
from fj_intervention.hypergradient import (
    explicit_hypergradient,
    finite_difference_hypergradient,
    hypergradient,
    objective_at,
)
from fj_intervention.nad import nad_run
from fj_intervention.objectives import (
    ObjectiveSpec,
    compare_metrics,
    disagreement,
    frobenius_regularizer,
    get_objective,
    opinion_metrics,
    percent_change,
    polarization_mean_square,
    polarization_variance,
    relative_error,
    weighted_sum,
)
from fj_intervention.optimizer import TRACE_HEADER, SolveReport, auto_step_size, optimize
from fj_intervention.results import ResultsWriter

# the toy run needs a step that reaches the ball boundary; count / 100 stalls on one variable
TOY_ALPHA = 1.0
_BUDGET_DEFAULT_N = 1000
_COMPARE_DEFAULT_N = 150
_FD_TOLERANCE = 1e-5
_EXPLICIT_TOLERANCE = 1e-8


class ExperimentFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class InterventionScatter:
    """
    Weight change of each decision variable against the opinions before the intervention, ordered by |delta|.

    A tied undirected pair is one row, reported at its (i < j) slot; the change applies to both directions.
    """

    HEADER: ClassVar[tuple[str, ...]] = ("tail", "head", "tail_opinion", "head_opinion", "delta")

    tails: IntArray
    heads: IntArray
    tail_opinion: FloatArray
    head_opinion: FloatArray
    delta: FloatArray

    @classmethod
    def from_decision(cls, decision0: DecisionVector, weights: FloatArray, y_before: FloatArray) -> "InterventionScatter":
        variables, first_slot = np.unique(decision0.slot_index, return_index=True)
        change = (np.asarray(weights) - decision0.values)[variables]
        order = np.argsort(np.abs(change), kind="stable")
        rows, cols = decision0.slot_rows[first_slot[order]], decision0.slot_cols[first_slot[order]]
        return cls(tails=rows, heads=cols, tail_opinion=y_before[rows], head_opinion=y_before[cols], delta=change[order])

    def __len__(self) -> int:
        return len(self.delta)

    def rows(self) -> list[tuple[int, int, float, float, float]]:
        return [
            (int(i), int(j), float(a), float(b), float(d))
            for i, j, a, b, d in zip(self.tails, self.heads, self.tail_opinion, self.head_opinion, self.delta, strict=True)
        ]

    def camp_changes(self, threshold: float) -> dict[str, float]:
        """Summed delta over decision variables joining opinions on opposite sides of `threshold` and on the same side."""
        cross = (self.tail_opinion - threshold) * (self.head_opinion - threshold) < 0
        return {"cross_delta_sum": float(self.delta[cross].sum()), "within_delta_sum": float(self.delta[~cross].sum())}


@dataclass(frozen=True)
class BudgetProblem:
    """Users plus a neutral agency node; the decision is the column of weights from users to the agency."""

    topology: NetworkTopology
    s: FloatArray
    decision: DecisionVector
    objective: ObjectiveSpec
    feasible: FeasibleSet
    budget: float

    @property
    def users(self) -> int:
        return self.topology.n - 1


def budget_problem(topology: NetworkTopology, s: object, budget: float) -> BudgetProblem:
    extended, s_ext = append_neutral_node(topology, s)
    decision = column_decision(extended, topology.n, initial=0.0)
    feasible = FeasibleSet((NonNegative(), BudgetHalfspace(np.arange(decision.m), float(budget))), initial=decision.values)
    return BudgetProblem(
        topology=extended,
        s=s_ext,
        decision=decision,
        objective=polarization_mean_square(nodes=np.arange(topology.n)),
        feasible=feasible,
        budget=float(budget),
    )


def toy_network() -> tuple[NetworkTopology, FloatArray, DecisionVector]:
    """Two nodes with s = (1, 0) joined by one undirected edge of weight 1."""
    topology = NetworkTopology.from_edges(2, [0, 1], [1, 0])
    return topology, np.array([1.0, 0.0]), edge_decision(topology, undirected=True)


def recover_internal_opinions(topology: NetworkTopology, y: object) -> FloatArray:
    """s = A(w) y, the internal opinions that make `y` the equilibrium; values outside [0, 1] are kept."""
    y_arr = np.asarray(y, dtype=np.float64).ravel()
    s = np.asarray(build_system(topology, y_arr).matrix @ y_arr, dtype=np.float64)
    outside = int(np.count_nonzero((s < 0) | (s > 1)))
    if outside:
        logger.warning(f"{outside} recovered internal opinions lie outside [0, 1] (range {s.min():.3f} to {s.max():.3f})")
    return s


def load_budget_network(config: ExperimentConfig) -> tuple[NetworkTopology, FloatArray]:
    """Directed network and internal opinions; file datasets without opinions get s in {-1, 1} from the seed."""
    data = config.dataset
    if data.source == "synthetic":
        topology, state = synthesize_polarized(data.n or _BUDGET_DEFAULT_N, data.edge_density, data.opinion_split, seed=config.seed)
        return topology, state.s
    assert data.edges_path is not None
    topology = load_edge_list(data.edges_path, directed=data.directed, n=data.truncate_n)
    if data.opinions_path is not None:
        return topology, load_opinions(data.opinions_path, topology.n)
    rng = np.random.default_rng(config.seed)
    s = -np.ones(topology.n)
    s[rng.permutation(topology.n)[: int(round(data.opinion_split * topology.n))]] = 1.0
    return topology, s


def load_opinion_network(config: ExperimentConfig) -> tuple[NetworkTopology, FloatArray, FloatArray]:
    """Undirected network with internal opinions s and equilibrium opinions y."""
    data = config.dataset
    if data.source == "synthetic":
        topology, state = synthesize_bimodal(
            data.n or _COMPARE_DEFAULT_N, p_within=data.p_within, p_across=data.p_across, spread=data.spread, seed=config.seed
        )
        y = solve_equilibrium(build_system(topology, state.s), config.solver)
        return topology, state.s, y
    assert data.edges_path is not None and data.opinions_path is not None
    topology = load_edge_list(data.edges_path, directed=False, n=data.truncate_n)
    y = load_opinions(data.opinions_path, topology.n)
    return topology, recover_internal_opinions(topology, y), y


def _summary(config: ExperimentConfig, **payload: Any) -> dict[str, Any]:
    return {"experiment": config.experiment, "seed": config.seed, "config": config.to_dict(), **payload}


def run_toy(config: ExperimentConfig) -> dict[str, Any]:
    """D(w) over w in [0, 2] on the two-node network, with the terminal weights of BeeRS and NAD."""
    writer = ResultsWriter(config.output_dir)
    topology, s, decision0 = toy_network()
    objective = disagreement()
    delta = config.problem.delta

    ball = frobenius_ball(decision0, delta)
    feasible = FeasibleSet((ball, NonNegative()), initial=decision0.values)
    half_width = ball.radius / float(np.sqrt(ball.weights[0]))
    bounds = (max(0.0, 1.0 - half_width), 1.0 + half_width)

    grid = np.linspace(0.0, 2.0, config.study.grid_points)
    curve = []
    for w in grid:
        decision = decision0.with_values([w])
        assembled = assemble_weights(topology, decision)
        y = solve_equilibrium(build_system(assembled, s), config.solver)
        curve.append((float(w), float(y[0]), float(y[1]), objective.evaluate(decision, assembled, y)))
    y_initial = solve_equilibrium(build_system(topology, s), config.solver)
    writer.write_csv("toy_curve.csv", ("w", "y0", "y1", "disagreement"), curve)

    alpha = config.optimizer.alpha if config.optimizer.alpha is not None else TOY_ALPHA
    beers = optimize(topology, s, decision0, objective, feasible, replace(config.optimizer, alpha=alpha, solver=config.solver))
    nad = nad_run(topology, s, decision0, replace(config.nad, delta=delta, lam=0.0, degree_constraint=False, solver=config.solver))
    reports = {"beers": beers, "nad": nad}
    for name, report in reports.items():
        writer.write_csv(f"toy_{name}_trace.csv", TRACE_HEADER, report.trace_rows())

    terminal = {}
    for name, report in reports.items():
        if report.weights is None:
            continue
        w = float(report.weights[0])
        terminal[f"{name}_w"] = w
        terminal[f"{name}_disagreement"] = objective_at(decision0.with_values([w]), topology, s, objective, config.solver)

    summary = _summary(
        config,
        feasible_bounds=list(bounds),
        initial_opinions=y_initial.tolist(),
        initial_disagreement=objective_at(decision0, topology, s, objective, config.solver),
        grid_points=len(grid),
        reports={name: r.summary() for name, r in reports.items()},
        failed=any(r.failure for r in reports.values()),
        **terminal,
    )
    writer.write_summary("toy_summary.json", summary)
    logger.info(f"Toy run: BeeRS w={terminal.get('beers_w')}, NAD w={terminal.get('nad_w')}, region {bounds}")
    return summary


def run_budget(config: ExperimentConfig) -> dict[str, Any]:
    """Minimize the users' mean-square polarization by connecting them to a neutral node under a budget."""
    writer = ResultsWriter(config.output_dir)
    topology, s = load_budget_network(config)
    budget = config.problem.budget if config.problem.budget is not None else topology.n / 10
    problem = budget_problem(topology, s, budget)
    logger.info(f"Budget problem: {problem.users} users, {topology.num_edges} edges, budget {budget}")

    report = optimize(
        problem.topology, problem.s, problem.decision, problem.objective, problem.feasible, replace(config.optimizer, solver=config.solver)
    )
    writer.write_csv("budget_trace.csv", TRACE_HEADER, report.trace_rows())
    initial = report.phi_trace[0] if report.phi_trace else float("nan")
    final = report.phi_trace[-1] if report.phi_trace else float("nan")
    used = float(report.weights.sum()) if report.weights is not None else float("nan")
    if report.weights is not None:
        writer.write_csv("budget_weights.csv", ("user", "weight"), enumerate(report.weights.tolist()))

    summary = _summary(
        config,
        users=problem.users,
        edges=topology.num_edges,
        budget=budget,
        budget_used=used,
        budget_slack=budget - used,
        initial_polarization=initial,
        final_polarization=final,
        reduction_pct=-percent_change(initial, final),
        report=report.summary(),
        failed=report.failure is not None,
    )
    writer.write_summary("budget_summary.json", summary)
    logger.info(f"Polarization {initial:.6f} -> {final:.6f} ({summary['reduction_pct']:.2f}% reduction)")
    return summary


def _compare_one(
    algorithm: str,
    config: ExperimentConfig,
    topology: NetworkTopology,
    s: FloatArray,
    decision0: DecisionVector,
    before: dict[str, float],
) -> SolveReport:
    delta = config.problem.delta
    if algorithm == "beers":
        feasible = FeasibleSet(
            (degree_equality(decision0, topology), frobenius_ball(decision0, delta), NonNegative()),
            initial=decision0.values,
        )
        report = optimize(
            topology, s, decision0, get_objective(config.problem.objective), feasible, replace(config.optimizer, solver=config.solver)
        )
        if report.weights is not None and report.opinions is not None:
            after = opinion_metrics(assemble_weights(topology, decision0.with_values(report.weights)), report.opinions)
            report.metrics = compare_metrics(before, after)
        return report
    lam = 0.0 if algorithm == "nad" else config.problem.lam
    return nad_run(topology, s, decision0, replace(config.nad, delta=delta, lam=lam, solver=config.solver))


def run_nad_compare(config: ExperimentConfig) -> dict[str, Any]:
    """BeeRS against NAD and NAD* on an undirected network: change in P and D, runtimes, and intervention scatters."""
    writer = ResultsWriter(config.output_dir)
    topology, s, y_before = load_opinion_network(config)
    decision0 = edge_decision(topology, undirected=True, complete=config.problem.complete)
    before = opinion_metrics(topology, y_before)
    logger.info(f"Comparing {', '.join(config.algorithms)} on n={topology.n}, m={decision0.m}, delta={config.problem.delta}")

    table = []
    results: dict[str, Any] = {}
    failed = False
    for algorithm in config.algorithms:
        report = _compare_one(algorithm, config, topology, s, decision0, before)
        writer.write_csv(f"{algorithm}_trace.csv", TRACE_HEADER, report.trace_rows())
        entry = report.summary()
        if report.weights is not None:
            scatter = InterventionScatter.from_decision(decision0, report.weights, y_before)
            writer.write_csv(f"scatter_{algorithm}.csv", InterventionScatter.HEADER, scatter.rows())
            entry.update(scatter.camp_changes(float(y_before.mean())))
        results[algorithm] = entry
        failed = failed or report.failure is not None
        table.append(
            (
                algorithm,
                report.metrics.get("polarization_change_pct", float("nan")),
                report.metrics.get("disagreement_change_pct", float("nan")),
                report.timings.get("total", float("nan")),
                report.iterations,
                report.converged,
                report.failure or "",
            )
        )
    writer.write_csv(
        "comparison.csv",
        ("algorithm", "polarization_change_pct", "disagreement_change_pct", "runtime_s", "iterations", "converged", "failure"),
        table,
    )

    summary = _summary(config, n=topology.n, m=decision0.m, before=before, results=results, failed=failed)
    writer.write_summary("nad_compare_summary.json", summary)
    return summary


def time_iteration(problem: BudgetProblem, alpha: float, solver: LinearSolveConfig | None = None) -> tuple[FloatArray, dict[str, float]]:
    """One BeeRS iteration from the problem's starting point: hypergradient, step, projection."""
    start = time.perf_counter()
    result = hypergradient(problem.decision, problem.topology, problem.s, problem.objective, solver)
    projection_start = time.perf_counter()
    x = project(problem.feasible, problem.decision.values - alpha * result.gradient)
    end = time.perf_counter()
    return x, {**result.timings, "projection": end - projection_start, "total": end - start}


def _synthetic_budget(config: ExperimentConfig, n: int, seed: int) -> BudgetProblem:
    density = min(1.0, config.study.avg_degree / (n - 1))
    topology, state = synthesize_polarized(n, density, config.dataset.opinion_split, seed=seed)
    budget = config.problem.budget if config.problem.budget is not None else n / 10
    return budget_problem(topology, state.s, budget)


def run_scalability(config: ExperimentConfig) -> dict[str, Any]:
    """Time R single iterations per network size; mean and standard deviation plus phase means."""
    writer = ResultsWriter(config.output_dir)
    phases = ("forward_solve", "objective", "adjoint_solve", "projection")
    rows = []
    for n in tqdm(config.study.sizes, desc="sizes"):
        problem = _synthetic_budget(config, n, config.seed)
        alpha = config.optimizer.alpha if isinstance(config.optimizer.alpha, int | float) else auto_step_size(n)
        samples = [time_iteration(problem, float(alpha), config.solver)[1] for _ in range(config.study.repeats)]
        totals = np.array([t["total"] for t in samples])
        rows.append(
            (
                n,
                problem.topology.num_edges,
                config.study.repeats,
                float(totals.mean()),
                float(totals.std()),
                *(float(np.mean([t[p] for t in samples])) for p in phases),
            )
        )
        logger.info(f"n={n}: {totals.mean() * 1e3:.2f} ms per iteration over {config.study.repeats} runs")
    header = ("n", "edges", "repeats", "mean_s", "std_s", *(f"{p}_mean_s" for p in phases))
    writer.write_csv("scalability.csv", header, rows)
    summary = _summary(config, sizes=list(config.study.sizes), failed=False)
    writer.write_summary("scalability_summary.json", summary)
    return summary


def run_ablation(config: ExperimentConfig) -> dict[str, Any]:
    """Iterations to converge and terminal objective over the (alpha, gamma) grid on one budget problem."""
    writer = ResultsWriter(config.output_dir)
    topology, s = load_budget_network(config)
    budget = config.problem.budget if config.problem.budget is not None else topology.n / 10
    problem = budget_problem(topology, s, budget)

    rows = []
    failed = False
    grid = list(product(config.study.alphas, config.study.gammas))
    for alpha, gamma in tqdm(grid, desc="ablation"):
        report = optimize(
            problem.topology,
            problem.s,
            problem.decision,
            problem.objective,
            problem.feasible,
            replace(config.optimizer, alpha=alpha, gamma=gamma, solver=config.solver),
        )
        if not report.converged:
            logger.warning(f"alpha={alpha}, gamma={gamma} did not converge in {report.iterations} iterations")
        failed = failed or report.failure is not None
        final = report.phi_trace[-1] if report.phi_trace else float("nan")
        rows.append((alpha, gamma, report.iterations, report.converged, final, report.failure or ""))
    writer.write_csv("ablation.csv", ("alpha", "gamma", "iterations", "converged", "final_phi", "failure"), rows)
    summary = _summary(config, grid_points=len(grid), failed=failed)
    writer.write_summary("ablation_summary.json", summary)
    return summary


def emit_hypergradient_norm_study(config: ExperimentConfig) -> dict[str, Any]:
    """
    Norm of the hypergradient at the starting point for each size and seed.

    With `study.with_iterations` each row also carries the iterations to converge for alpha = n / 100
    and for the constant `study.constant_alpha`.
    """
    writer = ResultsWriter(config.output_dir)
    header = ["n", "seed", "grad_norm"]
    if config.study.with_iterations:
        header += ["iterations_scaled", "converged_scaled", "iterations_constant", "converged_constant"]

    rows: list[list[Any]] = []
    failed = False
    for n, seed in tqdm(list(product(config.study.sizes, config.study.seeds)), desc="hypergradient norm"):
        problem = _synthetic_budget(config, n, seed)
        result = hypergradient(problem.decision, problem.topology, problem.s, problem.objective, config.solver)
        row: list[Any] = [n, seed, float(np.linalg.norm(result.gradient))]
        if config.study.with_iterations:
            for alpha in (auto_step_size(n), config.study.constant_alpha):
                report = optimize(
                    problem.topology,
                    problem.s,
                    problem.decision,
                    problem.objective,
                    problem.feasible,
                    replace(config.optimizer, alpha=alpha, solver=config.solver),
                )
                failed = failed or report.failure is not None
                row += [report.iterations, report.converged]
        rows.append(row)
    writer.write_csv("hypergradient_norm.csv", header, rows)
    summary = _summary(config, rows=len(rows), failed=failed)
    writer.write_summary("hypergradient_norm_summary.json", summary)
    return summary


def random_instance(rng: np.random.Generator, max_n: int, density: float = 0.6) -> tuple[NetworkTopology, FloatArray, DecisionVector]:
    """Small directed network with weights in [0.1, 1.5] and internal opinions in [-1, 1]."""
    n = int(rng.integers(3, max_n + 1))
    mask = rng.random((n, n)) < density
    np.fill_diagonal(mask, False)
    # keep at least one edge per row so every node has a decision variable
    for i in np.flatnonzero(~mask.any(axis=1)):
        mask[i, (i + 1) % n] = True
    rows, cols = np.nonzero(mask)
    topology = NetworkTopology.from_edges(n, rows, cols, rng.uniform(0.1, 1.5, size=len(rows)))
    return topology, rng.uniform(-1.0, 1.0, size=n), edge_decision(topology)


def builtin_objectives() -> list[ObjectiveSpec]:
    return [
        polarization_mean_square(),
        disagreement(),
        polarization_variance(),
        frobenius_regularizer(0.1),
        weighted_sum([(1.0, polarization_variance()), (0.5, disagreement())], name="variance+disagreement"),
    ]


def run_gradcheck(config: ExperimentConfig) -> dict[str, Any]:
    """Hypergradients against central finite differences and the dense explicit sensitivity."""
    writer = ResultsWriter(config.output_dir)
    rng = np.random.default_rng(config.seed)
    dense = LinearSolveConfig(method="dense")
    rows = []
    for k in tqdm(range(config.study.instances), desc="gradcheck"):
        topology, s, decision = random_instance(rng, config.study.max_n)
        for spec in builtin_objectives():
            adjoint = hypergradient(decision, topology, s, spec, dense).gradient
            fd = finite_difference_hypergradient(decision, topology, s, spec, dense)
            explicit = explicit_hypergradient(decision, topology, s, spec)
            explicit_gap = float(np.max(np.abs(adjoint - explicit))) if decision.m else 0.0
            rows.append((k, topology.n, decision.m, spec.name, relative_error(fd, adjoint), explicit_gap))
    writer.write_csv("gradcheck.csv", ("instance", "n", "m", "objective", "fd_relative_error", "explicit_abs_error"), rows)

    worst_fd = max((r[4] for r in rows), default=0.0)
    worst_explicit = max((r[5] for r in rows), default=0.0)
    failed = worst_fd > _FD_TOLERANCE or worst_explicit > _EXPLICIT_TOLERANCE
    if failed:
        logger.error(f"Gradient check failed: finite differences {worst_fd:.2e}, explicit sensitivity {worst_explicit:.2e}")
    summary = _summary(config, instances=config.study.instances, worst_fd_error=worst_fd, worst_explicit_error=worst_explicit, failed=failed)
    writer.write_summary("gradcheck_summary.json", summary)
    return summary


def random_feasible_set(family: str, rng: np.random.Generator, max_n: int) -> tuple[FeasibleSet, int]:
    """
    One random instance of a feasible-set family and its dimension.

    `budget`: w >= 0 with a budget on a random subset. `degree-ball`: row sums fixed, Frobenius ball
    of radius 0.3 ||W(0)|| and w >= 0 on a random directed network.
    """
    if family == "budget":
        m = int(rng.integers(2, 31))
        subset = np.sort(rng.choice(m, size=int(rng.integers(1, m + 1)), replace=False))
        return FeasibleSet((NonNegative(), BudgetHalfspace(subset, float(rng.uniform(0.0, 3.0))))), m
    if family == "degree-ball":
        topology, _, decision = random_instance(rng, min(max_n, 6))
        primitives = (degree_equality(decision, topology), frobenius_ball(decision, 0.3), NonNegative())
        return FeasibleSet(primitives, initial=decision.values), decision.m
    raise ValueError(f"unknown feasible-set family {family!r}")


PROJECTION_FAMILIES = ("budget", "degree-ball")


def run_project_check(config: ExperimentConfig) -> dict[str, Any]:
    """Membership, idempotence and non-expansiveness of `project` on random instances of each family."""
    writer = ResultsWriter(config.output_dir)
    rng = np.random.default_rng(config.seed)
    rows = []
    for family in PROJECTION_FAMILIES:
        for k in tqdm(range(config.study.instances), desc=family):
            feasible, m = random_feasible_set(family, rng, config.study.max_n)
            x, z = rng.normal(0.5, 1.5, size=m), rng.normal(0.5, 1.5, size=m)
            px, pz = project(feasible, x), project(feasible, z)
            violation = max(check_membership(feasible, px).values(), default=0.0)
            idempotence = float(np.max(np.abs(project(feasible, px) - px)))
            expansion = float(np.linalg.norm(px - pz) - np.linalg.norm(x - z))
            rows.append((family, k, m, violation, idempotence, expansion))
    writer.write_csv("project_check.csv", ("family", "instance", "m", "max_violation", "idempotence_gap", "expansion"), rows)

    tol = 1e-7
    failed = any(r[3] > tol or r[4] > tol or r[5] > tol for r in rows)
    if failed:
        logger.error("Projection check failed on at least one instance")
    summary = _summary(config, instances=len(rows), failed=failed)
    writer.write_summary("project_check_summary.json", summary)
    return summary


EXPERIMENTS: dict[str, Callable[[ExperimentConfig], dict[str, Any]]] = {
    "toy": run_toy,
    "budget": run_budget,
    "nad-compare": run_nad_compare,
    "scalability": run_scalability,
    "ablation": run_ablation,
    "gradcheck": run_gradcheck,
    "project-check": run_project_check,
    "hypergrad-norm": emit_hypergradient_norm_study,
}


def run_experiment(config: ExperimentConfig) -> dict[str, Any]:
    logger.info(f"Starting {config.experiment} (seed {config.seed}), writing to {config.output_dir}")
    start_time = time.time()
    summary = EXPERIMENTS[config.experiment](config)
    logger.info(f"Time taken: {time.time() - start_time} seconds")
    return summary


def _run_config_file(path: str, output_dir: str | None) -> dict[str, Any]:
    config = load_config(path)
    if output_dir is not None:
        config = with_overrides(config, output_dir=str(Path(output_dir) / Path(path).stem))
    return run_experiment(config)


def run_batch(paths: list[str], *, parallel: bool = False, n_process: int = 2, output_dir: str | None = None) -> list[dict[str, Any]]:
    """
    Run several config files, one after another or in a process pool.

    With `output_dir` each config writes to its own subdirectory named after the file. Parallel runs
    need distinct output directories.
    """
    configs = [load_config(p) for p in paths]
    if output_dir is None:
        outputs = [c.output_dir for c in configs]
        if parallel and len(set(outputs)) != len(outputs):
            raise ValueError("parallel batch runs need a distinct output_dir per config")
    if not parallel:
        return [_run_config_file(p, output_dir) for p in paths]
    logger.info(f"Running {len(paths)} configs with {n_process} processes")
    with ProcessPoolExecutor(max_workers=n_process) as pool:
        return list(pool.map(_run_config_file, paths, [output_dir] * len(paths)))
