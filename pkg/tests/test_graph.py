from pathlib import Path

import numpy as np
import pytest

from fj_intervention.graph import (
    DecisionVector,
    GraphFormatError,
    NetworkTopology,
    OpinionState,
    append_neutral_node,
    assemble_weights,
    column_decision,
    edge_decision,
    load_edge_list,
    load_opinions,
    save_edge_list,
    synthesize_bimodal,
    synthesize_polarized,
)


@pytest.fixture
def triangle() -> NetworkTopology:
    """Directed 3-cycle plus one chord, weights 1..4."""
    return NetworkTopology.from_edges(3, [0, 1, 2, 0], [1, 2, 0, 2], [1.0, 2.0, 3.0, 4.0])


@pytest.fixture
def undirected_path() -> NetworkTopology:
    """Path 0 - 1 - 2 stored as both directions."""
    return NetworkTopology.from_edges(3, [0, 1, 1, 2], [1, 0, 2, 1], [0.5, 0.5, 2.0, 2.0])


def test_from_edges_sums_duplicates() -> None:
    """Test that repeated (tail, head) pairs collapse into one summed entry."""
    topology = NetworkTopology.from_edges(2, [0, 0], [1, 1], [1.5, 2.5])

    assert topology.num_edges == 1
    assert topology.matrix[0, 1] == pytest.approx(4.0)


@pytest.mark.parametrize(
    "tails,heads,weights,message",
    [
        ([0], [0], [1.0], "self-loop"),
        ([0], [3], [1.0], "out of range"),
        ([0], [1], [-1.0], "negative"),
        ([0], [1], [np.inf], "non-finite"),
    ],
)
def test_from_edges_rejects_invalid_input(tails: list[int], heads: list[int], weights: list[float], message: str) -> None:
    """Test that invalid edges are rejected with a descriptive error."""
    with pytest.raises(ValueError, match=message):
        NetworkTopology.from_edges(3, tails, heads, weights)


def test_degree_helpers(triangle: NetworkTopology) -> None:
    """Test row sums, column sums and the Frobenius norm."""
    np.testing.assert_allclose(triangle.out_weight(), [5.0, 2.0, 3.0])
    np.testing.assert_allclose(triangle.in_weight(), [3.0, 1.0, 6.0])
    assert triangle.frobenius_norm() == pytest.approx(np.sqrt(30.0))
    assert not triangle.is_symmetric()


def test_decision_vector_rejects_double_governed_slot() -> None:
    """Test that a slot cannot be both governed and frozen."""
    with pytest.raises(ValueError, match="exactly one"):
        DecisionVector(
            values=np.array([1.0]),
            slot_rows=np.array([0]),
            slot_cols=np.array([1]),
            slot_index=np.array([0]),
            frozen_rows=np.array([0]),
            frozen_cols=np.array([1]),
            frozen_values=np.array([2.0]),
        )


def test_decision_vector_rejects_unused_variable() -> None:
    """Test that every decision variable must map to a slot."""
    with pytest.raises(ValueError, match="at least one slot"):
        DecisionVector(values=np.array([1.0, 2.0]), slot_rows=np.array([0]), slot_cols=np.array([1]), slot_index=np.array([0]))


def test_decision_vector_rejects_self_loop_slot() -> None:
    """Test that the diagonal can never be mapped."""
    with pytest.raises(ValueError, match="self-loop"):
        DecisionVector(values=np.array([1.0]), slot_rows=np.array([1]), slot_cols=np.array([1]), slot_index=np.array([0]))


def test_edge_decision_round_trips_weights(triangle: NetworkTopology) -> None:
    """Test that assembling the initial decision reproduces the topology."""
    decision = edge_decision(triangle)

    assert decision.m == triangle.num_edges
    np.testing.assert_allclose(assemble_weights(triangle, decision).matrix.toarray(), triangle.matrix.toarray())


def test_edge_decision_undirected_ties_pairs(undirected_path: NetworkTopology) -> None:
    """Test that both directions of an undirected edge share one variable."""
    decision = edge_decision(undirected_path, undirected=True)

    assert decision.m == 2
    np.testing.assert_allclose(decision.multiplicity, [2.0, 2.0])
    assert decision.index_of(0, 1) == decision.index_of(1, 0)
    assert sorted(decision.slots_of(decision.index_of(1, 2) or 0)) == [(1, 2), (2, 1)]

    moved = assemble_weights(undirected_path, decision.with_values([3.0, 1.0]))
    assert moved.is_symmetric()


def test_edge_decision_undirected_requires_symmetry(triangle: NetworkTopology) -> None:
    """Test that tying pairs of a directed network is refused."""
    with pytest.raises(ValueError, match="symmetric"):
        edge_decision(triangle, undirected=True)


def test_edge_decision_complete_governs_every_pair(undirected_path: NetworkTopology) -> None:
    """Test that complete mode covers all n(n-1) slots, absent edges starting at 0."""
    directed = edge_decision(undirected_path, complete=True)
    tied = edge_decision(undirected_path, undirected=True, complete=True)

    assert directed.m == 6
    assert directed.values[directed.index_of(0, 2) or 0] == 0.0
    assert tied.m == 3
    assert tied.num_slots == 6


def test_column_decision_freezes_other_edges(triangle: NetworkTopology) -> None:
    """Test that only the chosen column is free and the rest of W is preserved."""
    decision = column_decision(triangle, 2)

    np.testing.assert_array_equal(decision.slot_cols, [2, 2])
    np.testing.assert_allclose(decision.values, [4.0, 2.0])
    np.testing.assert_allclose(assemble_weights(triangle, decision).matrix.toarray(), triangle.matrix.toarray())

    cleared = assemble_weights(triangle, decision.with_values([0.0, 0.0]))
    assert cleared.matrix[0, 2] == 0.0
    assert cleared.matrix[2, 0] == 3.0


def test_column_decision_initial_value(triangle: NetworkTopology) -> None:
    """Test that an explicit initial value overrides the current column weights."""
    decision = column_decision(triangle, 1, initial=0.0)

    np.testing.assert_allclose(decision.values, [0.0, 0.0])
    np.testing.assert_array_equal(decision.slot_rows, [0, 2])


def test_assemble_rejects_negative_values(triangle: NetworkTopology) -> None:
    """Test that negative decision values never reach the adjacency matrix."""
    decision = edge_decision(triangle)
    values = decision.values.copy()
    values[1] = -0.5

    with pytest.raises(ValueError, match="negative decision value"):
        assemble_weights(triangle, decision.with_values(values))


def test_append_neutral_node(triangle: NetworkTopology) -> None:
    """Test that the agency node is appended with s = 0 and no edges."""
    extended, s = append_neutral_node(triangle, [1.0, -1.0, 1.0])

    assert extended.n == 4
    assert extended.num_edges == triangle.num_edges
    np.testing.assert_allclose(s, [1.0, -1.0, 1.0, 0.0])
    assert extended.out_weight()[3] == 0.0


def test_opinion_state_freezes_internal_opinions() -> None:
    """Test that s cannot be modified in place."""
    state = OpinionState(s=np.array([1.0, 0.0]), y=np.array([0.5, 0.5]))

    with pytest.raises(ValueError):
        state.s[0] = 2.0
    assert state.n == 2


def test_load_edge_list_parses_comments_and_weights(tmp_path: Path) -> None:
    """Test comments, blank lines and the default weight."""
    path = tmp_path / "edges.txt"
    path.write_text("# header\n0 1\n\n1 2 0.5\n2 0 2\n")

    topology = load_edge_list(path)

    assert topology.n == 3
    assert topology.matrix[0, 1] == 1.0
    assert topology.matrix[1, 2] == 0.5
    assert topology.matrix[2, 0] == 2.0


def test_load_edge_list_undirected_mirrors(tmp_path: Path) -> None:
    """Test that undirected mode stores both directions."""
    path = tmp_path / "edges.txt"
    path.write_text("0 1 1.5\n1 2\n")

    topology = load_edge_list(path, directed=False)

    assert topology.is_symmetric()
    assert topology.num_edges == 4


@pytest.mark.parametrize(
    "content,line,message",
    [
        ("0 1\n1 x\n", 2, "cannot parse"),
        ("0 1\n2 2\n", 2, "self-loop"),
        ("0 1 2 3\n", 1, "expected"),
        ("0 1 -1\n", 1, "non-negative"),
    ],
)
def test_load_edge_list_reports_line(tmp_path: Path, content: str, line: int, message: str) -> None:
    """Test that parse failures carry the path and line number."""
    path = tmp_path / "bad.txt"
    path.write_text(content)

    with pytest.raises(GraphFormatError, match=message) as info:
        load_edge_list(path)
    assert info.value.line == line
    assert info.value.path == str(path)


def test_load_edge_list_truncates(tmp_path: Path) -> None:
    """Test that edges touching a node >= n are dropped."""
    path = tmp_path / "edges.txt"
    path.write_text("0 1\n1 2\n2 3\n3 0\n")

    topology = load_edge_list(path, n=3)

    assert topology.n == 3
    assert topology.num_edges == 2


def test_save_edge_list_round_trip(tmp_path: Path, undirected_path: NetworkTopology) -> None:
    """Test that a saved network loads back unchanged."""
    path = tmp_path / "saved.txt"
    save_edge_list(undirected_path, path, undirected=True)

    loaded = load_edge_list(path, directed=False, n=undirected_path.n)

    np.testing.assert_array_equal(loaded.matrix.toarray(), undirected_path.matrix.toarray())
    assert len(path.read_text().splitlines()) == 2


def test_load_opinions(tmp_path: Path) -> None:
    """Test opinion parsing, truncation and error reporting."""
    path = tmp_path / "opinions.txt"
    path.write_text("0.1\n# note\n0.9\n0.5\n")

    np.testing.assert_allclose(load_opinions(path), [0.1, 0.9, 0.5])
    np.testing.assert_allclose(load_opinions(path, n=2), [0.1, 0.9])
    with pytest.raises(GraphFormatError, match="expected 5"):
        load_opinions(path, n=5)

    path.write_text("0.1\nnope\n")
    with pytest.raises(GraphFormatError) as info:
        load_opinions(path)
    assert info.value.line == 2


def test_synthesize_polarized_is_reproducible() -> None:
    """Test that the generator is deterministic per seed and produces +-1 opinions."""
    a, state_a = synthesize_polarized(200, 0.05, seed=7)
    b, state_b = synthesize_polarized(200, 0.05, seed=7)

    np.testing.assert_array_equal(a.matrix.toarray(), b.matrix.toarray())
    np.testing.assert_array_equal(state_a.s, state_b.s)
    assert set(np.unique(state_a.s)) == {-1.0, 1.0}
    assert int((state_a.s == 1).sum()) == 100
    assert a.matrix.diagonal().sum() == 0


def test_synthesize_polarized_sparse_sampling() -> None:
    """Test the edge-list sampler used above the dense limit."""
    topology, _ = synthesize_polarized(2500, 4 / 2499, seed=1)
    rows, cols, _ = topology.edges()

    assert not np.any(rows == cols)
    assert 0.5 * 4 * 2500 < topology.num_edges < 1.5 * 4 * 2500


def test_synthesize_polarized_complete() -> None:
    """Test that density 1 gives the complete directed graph."""
    topology, _ = synthesize_polarized(5, 1.0)

    assert topology.num_edges == 20


def test_synthesize_bimodal() -> None:
    """Test that the two-camp generator is undirected with opinions in [0, 1]."""
    topology, state = synthesize_bimodal(60, seed=3)

    assert topology.is_symmetric()
    assert np.all((state.s >= 0) & (state.s <= 1))
    high = state.s >= 0.7
    assert int(high.sum()) == 30
    assert np.all(state.s[~high] <= 0.3)


@pytest.mark.parametrize("n,density", [(1, 0.5), (10, 0.0), (10, 1.5)])
def test_synthesize_polarized_rejects_bad_arguments(n: int, density: float) -> None:
    """Test argument validation of the polarized generator."""
    with pytest.raises(ValueError):
        synthesize_polarized(n, density)
