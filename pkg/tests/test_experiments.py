import csv
import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from pytest_mock import MockerFixture

from fj_intervention.config import DatasetConfig, ExperimentConfig, ProblemConfig, StudyConfig
from fj_intervention.equilibrium import build_system, solve_equilibrium
from fj_intervention.experiments import (
    InterventionScatter,
    budget_problem,
    emit_hypergradient_norm_study,
    recover_internal_opinions,
    run_ablation,
    run_batch,
    run_budget,
    run_gradcheck,
    run_nad_compare,
    run_project_check,
    run_scalability,
    run_toy,
    time_iteration,
)
from fj_intervention.graph import NetworkTopology, edge_decision, synthesize_bimodal, synthesize_polarized
from fj_intervention.optimizer import OptimizerConfig


def read_csv(path: Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def test_toy_run(tmp_path: Path) -> None:
    """Test the two-node comparison: curve, feasible region and both terminal weights."""
    summary = run_toy(ExperimentConfig(experiment="toy", output_dir=str(tmp_path)))

    curve = read_csv(tmp_path / "toy_curve.csv")
    assert len(curve) >= 200
    by_w = {float(row["w"]): float(row["disagreement"]) for row in curve}
    assert by_w[0.0] == 0.0
    assert by_w[1.0] == pytest.approx(1 / 9, abs=1e-10)

    assert summary["feasible_bounds"] == pytest.approx([0.8, 1.2])
    np.testing.assert_allclose(summary["initial_opinions"], [2 / 3, 1 / 3], atol=1e-10)
    assert summary["initial_disagreement"] == pytest.approx(1 / 9, abs=1e-10)
    assert summary["beers_w"] == pytest.approx(1.2, abs=1e-3)
    assert summary["nad_w"] == pytest.approx(0.8, abs=1e-3)
    assert summary["beers_disagreement"] < summary["nad_disagreement"]
    assert not summary["failed"]
    assert json.loads((tmp_path / "toy_summary.json").read_text())["seed"] == 0


def test_intervention_scatter_ordering() -> None:
    """Test that rows are ordered by |delta| and a tied pair yields a single row."""
    topology = NetworkTopology.from_edges(3, [0, 1, 1, 2], [1, 0, 2, 1], [1.0, 1.0, 2.0, 2.0])
    decision = edge_decision(topology, undirected=True)
    y = np.array([0.9, 0.5, 0.1])

    scatter = InterventionScatter.from_decision(decision, np.array([0.7, 2.1]), y)

    assert len(scatter) == decision.m == 2
    assert list(np.abs(scatter.delta)) == sorted(np.abs(scatter.delta))
    first = scatter.rows()[0]
    assert first[4] == pytest.approx(0.1)
    assert (first[0], first[1]) == (1, 2)
    assert first[2] == y[first[0]]
    changes = scatter.camp_changes(threshold=0.6)
    assert changes["cross_delta_sum"] == pytest.approx(-0.3)
    assert changes["within_delta_sum"] == pytest.approx(0.1)


def test_recover_internal_opinions_round_trip(mocker: MockerFixture) -> None:
    """Test that s = A y reproduces y at equilibrium and warns outside [0, 1]."""
    topology, _ = synthesize_bimodal(40, seed=1)
    y = np.random.default_rng(0).uniform(0, 1, size=40)
    mock_logger = mocker.patch("fj_intervention.experiments.logger")

    s = recover_internal_opinions(topology, y)

    np.testing.assert_allclose(solve_equilibrium(build_system(topology, s)), y, atol=1e-8)
    if np.any((s < 0) | (s > 1)):
        mock_logger.warning.assert_called_once()
    else:
        mock_logger.warning.assert_not_called()


def test_recover_internal_opinions_warns() -> None:
    """Test that extreme neighbors push recovered opinions outside [0, 1] without clipping."""
    topology = NetworkTopology.from_edges(2, [0, 1], [1, 0], [3.0, 3.0])

    s = recover_internal_opinions(topology, [1.0, 0.0])

    np.testing.assert_allclose(s, [4.0, -3.0])


def test_budget_problem_layout() -> None:
    """Test the agency node, the column decision and the budget set."""
    topology, state = synthesize_polarized(30, 0.1, seed=0)

    problem = budget_problem(topology, state.s, 3.0)

    assert problem.users == 30
    assert problem.topology.n == 31
    assert problem.s[-1] == 0.0
    assert problem.decision.m == 30
    np.testing.assert_array_equal(problem.decision.values, np.zeros(30))
    assert problem.decision.num_slots == 30


def test_budget_zero_is_a_no_op(tmp_path: Path) -> None:
    """Test that b = 0 keeps every weight at 0 and the polarization unchanged."""
    config = ExperimentConfig(
        output_dir=str(tmp_path),
        dataset=DatasetConfig(n=40, edge_density=0.1),
        problem=ProblemConfig(budget=0.0),
    )

    summary = run_budget(config)

    assert summary["reduction_pct"] == 0.0
    assert summary["budget_used"] == 0.0
    weights = read_csv(tmp_path / "budget_weights.csv")
    assert all(float(row["weight"]) == 0.0 for row in weights)


def test_budget_reduces_polarization(tmp_path: Path) -> None:
    """Test a small budget run: strictly lower polarization and the budget respected."""
    config = ExperimentConfig(output_dir=str(tmp_path), dataset=DatasetConfig(n=200, edge_density=0.05))

    summary = run_budget(config)

    assert summary["budget"] == pytest.approx(20.0)
    assert summary["final_polarization"] < summary["initial_polarization"]
    assert summary["reduction_pct"] > 0
    assert summary["budget_slack"] >= -1e-8
    trace = read_csv(tmp_path / "budget_trace.csv")
    assert len(trace) == summary["report"]["iterations"] + 1


@pytest.mark.slow
def test_budget_desk_scale(tmp_path: Path) -> None:
    """Test n = 1000, b = n / 10 with default hyperparameters."""
    summary = run_budget(ExperimentConfig(output_dir=str(tmp_path)))

    assert summary["users"] == 1000
    assert summary["final_polarization"] < summary["initial_polarization"]
    assert summary["budget_used"] <= 100.0 + 1e-8
    assert summary["report"]["converged"]
    assert 1 < summary["report"]["iterations"] <= 500
    assert summary["budget_used"] > 50.0
    assert summary["reduction_pct"] > 10.0


def test_nad_compare_algorithm_filter(tmp_path: Path) -> None:
    """Test that only the requested algorithms run and write scatter files."""
    config = ExperimentConfig(
        experiment="nad-compare",
        output_dir=str(tmp_path),
        algorithms=("nad",),
        dataset=DatasetConfig(n=30, p_within=0.3, p_across=0.05),
    )

    summary = run_nad_compare(config)

    assert set(summary["results"]) == {"nad"}
    assert (tmp_path / "scatter_nad.csv").exists()
    assert not (tmp_path / "scatter_beers.csv").exists()
    rows = read_csv(tmp_path / "comparison.csv")
    assert [row["algorithm"] for row in rows] == ["nad"]


def test_nad_compare_scatter_preserves_degrees(tmp_path: Path) -> None:
    """Test that each node's degree change sums to 0 over the pairs it belongs to, one row per pair."""
    config = ExperimentConfig(
        experiment="nad-compare",
        output_dir=str(tmp_path),
        algorithms=("beers", "nad"),
        dataset=DatasetConfig(n=24, p_within=0.4, p_across=0.1),
    )

    summary = run_nad_compare(config)

    for algorithm in ("beers", "nad"):
        rows = read_csv(tmp_path / f"scatter_{algorithm}.csv")
        assert len(rows) == summary["m"]
        per_node = np.zeros(24)
        for row in rows:
            # a tied pair changes the degree of both endpoints
            per_node[int(row["tail"])] += float(row["delta"])
            per_node[int(row["head"])] += float(row["delta"])
        np.testing.assert_allclose(per_node, 0.0, atol=1e-6)
        deltas = [abs(float(row["delta"])) for row in rows]
        assert deltas == sorted(deltas)

    # percentages recomputed from the raw metrics
    for entry in summary["results"].values():
        metrics = entry["metrics"]
        for key in ("polarization", "disagreement"):
            before, after = metrics[f"{key}_before"], metrics[f"{key}_after"]
            assert metrics[f"{key}_change_pct"] == pytest.approx((after - before) / before * 100, abs=1e-9)


def test_nad_compare_from_files(tmp_path: Path) -> None:
    """Test the two-file dataset: undirected edges plus external opinions."""
    (tmp_path / "edges.txt").write_text("0 1\n1 2\n2 3\n3 0\n0 2\n")
    (tmp_path / "opinions.txt").write_text("0.9\n0.6\n0.2\n0.4\n")
    config = ExperimentConfig(
        experiment="nad-compare",
        output_dir=str(tmp_path / "out"),
        algorithms=("nad-star",),
        dataset=DatasetConfig(source="file", edges_path=str(tmp_path / "edges.txt"), opinions_path=str(tmp_path / "opinions.txt")),
    )

    summary = run_nad_compare(config)

    assert summary["n"] == 4
    assert summary["m"] == 5


def test_nad_compare_complete_governs_every_pair(tmp_path: Path) -> None:
    """Test that `complete = True` adds absent pairs as decision variables starting at 0."""
    (tmp_path / "edges.txt").write_text("0 1\n1 2\n2 3\n3 0\n0 2\n")
    (tmp_path / "opinions.txt").write_text("0.9\n0.6\n0.2\n0.4\n")
    config = ExperimentConfig(
        experiment="nad-compare",
        output_dir=str(tmp_path / "out"),
        algorithms=("nad",),
        dataset=DatasetConfig(source="file", edges_path=str(tmp_path / "edges.txt"), opinions_path=str(tmp_path / "opinions.txt")),
        problem=ProblemConfig(complete=True),
    )

    summary = run_nad_compare(config)

    assert summary["m"] == 6
    assert len(read_csv(tmp_path / "out" / "scatter_nad.csv")) == 6
    assert summary["before"]["disagreement"] > 0


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1])
def test_nad_compare_reproduces_sign_pattern(tmp_path: Path, seed: int) -> None:
    """Test BeeRS lowering P and D while NAD raises both and NAD* moves them less than NAD."""
    config = ExperimentConfig(experiment="nad-compare", seed=seed, output_dir=str(tmp_path), dataset=DatasetConfig(n=150))

    results = run_nad_compare(config)["results"]
    beers, nad, star = (results[a]["metrics"] for a in ("beers", "nad", "nad-star"))

    assert beers["disagreement_change_pct"] < 0
    assert beers["polarization_change_pct"] < 0
    assert nad["disagreement_change_pct"] > 0
    assert nad["polarization_change_pct"] > 0
    assert abs(star["disagreement_change_pct"]) < abs(nad["disagreement_change_pct"])
    assert abs(star["polarization_change_pct"]) < abs(nad["polarization_change_pct"])
    # BeeRS strengthens cross-camp ties, NAD within-camp ties
    assert results["beers"]["cross_delta_sum"] > 0
    assert results["nad"]["within_delta_sum"] > 0


def test_scalability_single_repeat(tmp_path: Path) -> None:
    """Test one row per size, zero spread for R = 1 and phase columns."""
    config = ExperimentConfig(experiment="scalability", output_dir=str(tmp_path), study=StudyConfig(sizes=(50, 100), repeats=1))

    run_scalability(config)

    rows = read_csv(tmp_path / "scalability.csv")
    assert [int(row["n"]) for row in rows] == [50, 100]
    assert all(float(row["std_s"]) == 0.0 for row in rows)
    assert all(float(row["forward_solve_mean_s"]) > 0 for row in rows)


def test_time_iteration_is_deterministic() -> None:
    """Test that repeated timing runs produce the same iterate."""
    topology, state = synthesize_polarized(60, 0.1, seed=3)
    problem = budget_problem(topology, state.s, 6.0)

    first, _ = time_iteration(problem, 0.6)
    second, timings = time_iteration(problem, 0.6)

    np.testing.assert_array_equal(first, second)
    assert timings["total"] >= timings["projection"]


def test_ablation_grid(tmp_path: Path) -> None:
    """Test one row per grid point and a flagged non-convergent step size."""
    config = ExperimentConfig(
        experiment="ablation",
        output_dir=str(tmp_path),
        dataset=DatasetConfig(n=60, edge_density=0.1),
        optimizer=OptimizerConfig(max_outer_iters=5),
        study=StudyConfig(alphas=(1e6,), gammas=(0.9,)),
    )

    summary = run_ablation(config)

    rows = read_csv(tmp_path / "ablation.csv")
    assert len(rows) == 1
    assert rows[0]["alpha"] == "1000000.0"
    assert int(rows[0]["iterations"]) <= 5
    assert not summary["failed"]


@pytest.mark.slow
def test_momentum_converges_no_slower(tmp_path: Path) -> None:
    """Test that gamma = 0.95 needs no more iterations than gamma = 0 at alpha = 10."""
    config = ExperimentConfig(experiment="ablation", output_dir=str(tmp_path), study=StudyConfig(alphas=(10.0,), gammas=(0.0, 0.95)))

    run_ablation(config)

    rows = {float(row["gamma"]): row for row in read_csv(tmp_path / "ablation.csv")}
    assert int(rows[0.0]["iterations"]) > 1
    assert int(rows[0.95]["iterations"]) <= int(rows[0.0]["iterations"])


def test_hypergradient_norm_empty_sizes(tmp_path: Path) -> None:
    """Test that no sizes give a header-only CSV."""
    config = ExperimentConfig(experiment="hypergrad-norm", output_dir=str(tmp_path), study=StudyConfig(sizes=()))

    emit_hypergradient_norm_study(config)

    assert (tmp_path / "hypergradient_norm.csv").read_text().strip() == "n,seed,grad_norm"


def test_hypergradient_norm_two_seeds(tmp_path: Path) -> None:
    """Test that a fixed n with two seeds gives two distinct rows."""
    config = ExperimentConfig(experiment="hypergrad-norm", output_dir=str(tmp_path), study=StudyConfig(sizes=(80,), seeds=(0, 1)))

    emit_hypergradient_norm_study(config)

    rows = read_csv(tmp_path / "hypergradient_norm.csv")
    assert len(rows) == 2
    assert rows[0]["grad_norm"] != rows[1]["grad_norm"]


def test_hypergradient_norm_decreases_with_n(tmp_path: Path) -> None:
    """Test that the starting hypergradient norm does not grow with n."""
    config = ExperimentConfig(experiment="hypergrad-norm", output_dir=str(tmp_path), study=StudyConfig(sizes=(500, 1000, 2000)))

    emit_hypergradient_norm_study(config)

    norms = [float(row["grad_norm"]) for row in read_csv(tmp_path / "hypergradient_norm.csv")]
    assert norms == sorted(norms, reverse=True)


@pytest.mark.slow
def test_scaled_step_keeps_iterations_flat(tmp_path: Path) -> None:
    """Test that alpha = n / 100 keeps iteration counts within 3x across sizes."""
    config = ExperimentConfig(
        experiment="hypergrad-norm",
        output_dir=str(tmp_path),
        study=StudyConfig(sizes=(500, 1000, 2000), with_iterations=True),
    )

    emit_hypergradient_norm_study(config)

    rows = read_csv(tmp_path / "hypergradient_norm.csv")
    scaled = [int(row["iterations_scaled"]) for row in rows]
    constant = [int(row["iterations_constant"]) for row in rows]
    assert min(scaled) > 1
    assert max(scaled) < 3 * min(scaled)
    assert constant[-1] >= constant[0]


def test_gradcheck_passes(tmp_path: Path) -> None:
    """Test the command-line gradient check on a few random instances."""
    config = ExperimentConfig(experiment="gradcheck", output_dir=str(tmp_path), study=StudyConfig(instances=4, max_n=8))

    summary = run_gradcheck(config)

    assert not summary["failed"]
    assert summary["worst_fd_error"] <= 1e-5
    assert len(read_csv(tmp_path / "gradcheck.csv")) == 4 * 5


def test_project_check_passes(tmp_path: Path) -> None:
    """Test membership, idempotence and non-expansiveness on random feasible sets."""
    config = ExperimentConfig(experiment="project-check", output_dir=str(tmp_path), study=StudyConfig(instances=5))

    summary = run_project_check(config)

    assert not summary["failed"]
    assert {row["family"] for row in read_csv(tmp_path / "project_check.csv")} == {"budget", "degree-ball"}


def test_batch_runs_each_config(tmp_path: Path) -> None:
    """Test a sequential batch writing into per-config subdirectories."""
    for name in ("first", "second"):
        (tmp_path / f"{name}.toml").write_text('experiment = "toy"\n')

    summaries = run_batch([str(tmp_path / "first.toml"), str(tmp_path / "second.toml")], output_dir=str(tmp_path / "out"))

    assert len(summaries) == 2
    assert (tmp_path / "out" / "first" / "toy_summary.json").exists()
    assert (tmp_path / "out" / "second" / "toy_summary.json").exists()


def test_reproducible_outputs(tmp_path: Path) -> None:
    """Test that the same config and seed give identical traces apart from timing."""
    config = ExperimentConfig(output_dir=str(tmp_path / "a"), dataset=DatasetConfig(n=50, edge_density=0.1), seed=5)

    run_budget(config)
    run_budget(replace(config, output_dir=str(tmp_path / "b")))

    assert (tmp_path / "a" / "budget_trace.csv").read_text() == (tmp_path / "b" / "budget_trace.csv").read_text()
