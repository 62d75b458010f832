from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from loguru import logger
from numpy.typing import NDArray

FloatArray = NDArray[np.float64]
IntArray = NDArray[np.int64]

# above this node count the generators sample edge lists instead of an n x n mask
_DENSE_SAMPLING_LIMIT = 2000


class GraphFormatError(ValueError):
    def __init__(self, message: str, *, path: str | None = None, line: int | None = None) -> None:
        location = f"{path}:{line}: " if path is not None and line is not None else ""
        super().__init__(f"{location}{message}")
        self.path = path
        self.line = line


def _int_array(values: object) -> IntArray:
    return np.asarray(values, dtype=np.int64).ravel()


def _float_array(values: object) -> FloatArray:
    return np.asarray(values, dtype=np.float64).ravel()


@dataclass(frozen=True)
class NetworkTopology:
    """
    Directed weighted graph as an n x n CSR adjacency matrix.

    Row i holds the tail, column j the head: w_ij is the influence node j exerts on node i.
    Self-loops are structurally absent and all stored weights are finite and non-negative.
    """

    matrix: sp.csr_array

    def __post_init__(self) -> None:
        shape = self.matrix.shape
        if len(shape) != 2 or shape[0] != shape[1]:
            raise ValueError(f"adjacency matrix must be square, got shape {shape}")
        data = self.matrix.data
        if not np.all(np.isfinite(data)):
            raise ValueError("adjacency matrix contains non-finite weights")
        if np.any(data < 0):
            raise ValueError("adjacency matrix contains negative weights")
        rows = np.repeat(np.arange(shape[0]), np.diff(self.matrix.indptr))
        loops = rows == self.matrix.indices
        if np.any(loops):
            raise ValueError(f"self-loop at node {int(rows[loops][0])}")

    @classmethod
    def from_edges(
        cls,
        n: int,
        tails: object,
        heads: object,
        weights: object | None = None,
    ) -> "NetworkTopology":
        """Build a topology from edge arrays; duplicate (tail, head) pairs are summed."""
        t = _int_array(tails)
        h = _int_array(heads)
        w = np.ones(len(t)) if weights is None else _float_array(weights)
        if not (len(t) == len(h) == len(w)):
            raise ValueError("tails, heads and weights must have equal length")
        if n < 0:
            raise ValueError(f"node count must be non-negative, got {n}")
        if len(t) and (t.min() < 0 or h.min() < 0 or t.max() >= n or h.max() >= n):
            raise ValueError(f"edge endpoint out of range [0, {n})")
        if np.any(t == h):
            raise ValueError(f"self-loop at node {int(t[t == h][0])}")
        matrix = sp.coo_array((w, (t, h)), shape=(n, n)).tocsr()
        matrix.sum_duplicates()
        matrix.sort_indices()
        return cls(matrix)

    @property
    def n(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def num_edges(self) -> int:
        return int(self.matrix.nnz)

    def edges(self) -> tuple[IntArray, IntArray, FloatArray]:
        coo = self.matrix.tocoo()
        return coo.row.astype(np.int64), coo.col.astype(np.int64), coo.data.astype(np.float64)

    def out_weight(self) -> FloatArray:
        """Row sums sum_j w_ij."""
        return np.asarray(self.matrix.sum(axis=1), dtype=np.float64).ravel()

    def in_weight(self) -> FloatArray:
        return np.asarray(self.matrix.sum(axis=0), dtype=np.float64).ravel()

    def frobenius_norm(self) -> float:
        return float(np.linalg.norm(self.matrix.data))

    def is_symmetric(self, atol: float = 1e-12) -> bool:
        diff = (self.matrix - self.matrix.T).tocsr()
        return diff.nnz == 0 or float(np.abs(diff.data).max()) <= atol


@dataclass(frozen=True)
class DecisionVector:
    """
    Free weights w in R^m and their map onto adjacency slots.

    `slot_index[k]` names the decision variable that governs slot (`slot_rows[k]`, `slot_cols[k]`).
    Several slots sharing one index form a tied group (an undirected pair w_ij = w_ji).
    Slots listed in `frozen_*` keep a constant weight; every other slot is zero.
    """

    values: FloatArray
    slot_rows: IntArray
    slot_cols: IntArray
    slot_index: IntArray
    frozen_rows: IntArray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    frozen_cols: IntArray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    frozen_values: FloatArray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self) -> None:
        for name in ("slot_rows", "slot_cols", "slot_index", "frozen_rows", "frozen_cols"):
            object.__setattr__(self, name, _int_array(getattr(self, name)))
        for name in ("values", "frozen_values"):
            object.__setattr__(self, name, _float_array(getattr(self, name)))

        if not (len(self.slot_rows) == len(self.slot_cols) == len(self.slot_index)):
            raise ValueError("slot_rows, slot_cols and slot_index must have equal length")
        if not (len(self.frozen_rows) == len(self.frozen_cols) == len(self.frozen_values)):
            raise ValueError("frozen_rows, frozen_cols and frozen_values must have equal length")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("decision values must be finite")
        m = len(self.values)
        if len(self.slot_index) and (self.slot_index.min() < 0 or self.slot_index.max() >= m):
            raise ValueError(f"slot_index out of range [0, {m})")
        if np.any(np.bincount(self.slot_index, minlength=m) == 0):
            raise ValueError("every decision variable must govern at least one slot")
        if np.any(self.slot_rows == self.slot_cols) or np.any(self.frozen_rows == self.frozen_cols):
            raise ValueError("self-loop slots cannot be mapped")
        if np.any(self.frozen_values < 0) or not np.all(np.isfinite(self.frozen_values)):
            raise ValueError("frozen weights must be finite and non-negative")

        rows = np.concatenate([self.slot_rows, self.frozen_rows])
        cols = np.concatenate([self.slot_cols, self.frozen_cols])
        if len(rows) and (rows.min() < 0 or cols.min() < 0):
            raise ValueError("slot indices must be non-negative")
        keys = np.stack([rows, cols], axis=1)
        if len(np.unique(keys, axis=0)) != len(keys):
            raise ValueError("each adjacency slot must be governed by exactly one decision index or frozen constant")

    @property
    def m(self) -> int:
        return len(self.values)

    @property
    def num_slots(self) -> int:
        return len(self.slot_index)

    @cached_property
    def multiplicity(self) -> FloatArray:
        """Number of adjacency slots behind each decision variable."""
        return np.bincount(self.slot_index, minlength=self.m).astype(np.float64)

    @cached_property
    def _slot_lookup(self) -> dict[tuple[int, int], int]:
        return {(int(i), int(j)): int(k) for i, j, k in zip(self.slot_rows, self.slot_cols, self.slot_index, strict=True)}

    def index_of(self, i: int, j: int) -> int | None:
        return self._slot_lookup.get((i, j))

    def slots_of(self, k: int) -> list[tuple[int, int]]:
        mask = self.slot_index == k
        return [(int(i), int(j)) for i, j in zip(self.slot_rows[mask], self.slot_cols[mask], strict=True)]

    def slot_values(self) -> FloatArray:
        return self.values[self.slot_index]

    def with_values(self, values: object) -> "DecisionVector":
        new_values = _float_array(values)
        if len(new_values) != self.m:
            raise ValueError(f"expected {self.m} decision values, got {len(new_values)}")
        return replace(self, values=new_values)


@dataclass(frozen=True)
class OpinionState:
    """Internal opinions s (fixed for a run) and external opinions y."""

    s: FloatArray
    y: FloatArray

    def __post_init__(self) -> None:
        s = _float_array(self.s).copy()
        y = _float_array(self.y).copy()
        if len(s) != len(y):
            raise ValueError(f"s and y must have equal length, got {len(s)} and {len(y)}")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(y))):
            raise ValueError("opinions must be finite")
        s.flags.writeable = False
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return len(self.s)


def assemble_weights(topology: NetworkTopology, decision: DecisionVector) -> NetworkTopology:
    """Materialize W from the decision values and the frozen slots of `decision`."""
    n = topology.n
    rows = np.concatenate([decision.slot_rows, decision.frozen_rows])
    cols = np.concatenate([decision.slot_cols, decision.frozen_cols])
    if len(rows) and (rows.max() >= n or cols.max() >= n):
        raise ValueError(f"decision slot index out of range for n={n}")
    if np.any(decision.values < 0):
        k = int(np.argmin(decision.values))
        raise ValueError(f"negative decision value {decision.values[k]} at index {k}")
    data = np.concatenate([decision.slot_values(), decision.frozen_values])
    matrix = sp.coo_array((data, (rows, cols)), shape=(n, n)).tocsr()
    matrix.eliminate_zeros()
    matrix.sort_indices()
    return NetworkTopology(matrix)


def edge_decision(topology: NetworkTopology, *, undirected: bool = False, complete: bool = False) -> DecisionVector:
    """
    Make every edge of `topology` a decision variable, initialized to its current weight.

    Args:
        topology: Network providing the initial weights W(0).
        undirected: Tie w_ij and w_ji into a single variable; requires a symmetric topology.
        complete: Govern all n(n-1) off-diagonal slots, not only the existing edges.
    """
    if complete:
        dense = topology.matrix.toarray()
        rows, cols = np.nonzero(~np.eye(topology.n, dtype=bool))
        init = dense[rows, cols]
    else:
        rows, cols, init = topology.edges()

    if not undirected:
        return DecisionVector(values=init, slot_rows=rows, slot_cols=cols, slot_index=np.arange(len(rows)))

    if not topology.is_symmetric():
        raise ValueError("undirected decision requires a symmetric topology")
    upper = rows < cols
    pair_rows, pair_cols, pair_init = rows[upper], cols[upper], init[upper]
    k = np.arange(len(pair_rows))
    return DecisionVector(
        values=pair_init,
        slot_rows=np.concatenate([pair_rows, pair_cols]),
        slot_cols=np.concatenate([pair_cols, pair_rows]),
        slot_index=np.concatenate([k, k]),
    )


def column_decision(
    topology: NetworkTopology,
    column: int,
    *,
    rows: object | None = None,
    initial: float | None = None,
) -> DecisionVector:
    """
    Govern only the slots (i, column); every other edge of `topology` is frozen at its weight.

    `initial=None` starts from the current column weights.
    """
    n = topology.n
    if not 0 <= column < n:
        raise ValueError(f"column {column} out of range [0, {n})")
    governed = np.array([i for i in range(n) if i != column], dtype=np.int64) if rows is None else _int_array(rows)
    if np.any(governed == column):
        raise ValueError("column node cannot govern a slot to itself")

    edge_rows, edge_cols, weights = topology.edges()
    in_column = edge_cols == column
    current = np.zeros(n)
    current[edge_rows[in_column]] = weights[in_column]
    values = current[governed] if initial is None else np.full(len(governed), float(initial))

    is_governed = np.zeros(n, dtype=bool)
    is_governed[governed] = True
    frozen = ~(in_column & is_governed[edge_rows])
    return DecisionVector(
        values=values,
        slot_rows=governed,
        slot_cols=np.full(len(governed), column, dtype=np.int64),
        slot_index=np.arange(len(governed)),
        frozen_rows=edge_rows[frozen],
        frozen_cols=edge_cols[frozen],
        frozen_values=weights[frozen],
    )


def append_neutral_node(topology: NetworkTopology, s: object) -> tuple[NetworkTopology, FloatArray]:
    """Add a node with internal opinion 0 and no outgoing edges; it gets index n."""
    s_arr = _float_array(s)
    if len(s_arr) != topology.n:
        raise ValueError(f"expected {topology.n} internal opinions, got {len(s_arr)}")
    rows, cols, weights = topology.edges()
    extended = NetworkTopology.from_edges(topology.n + 1, rows, cols, weights)
    return extended, np.append(s_arr, 0.0)


def load_edge_list(path: str | Path, *, directed: bool = True, n: int | None = None) -> NetworkTopology:
    """
    Read a whitespace-separated "i j [w]" edge list with 0-based indices.

    Lines starting with '#' are comments and the weight defaults to 1.0. Duplicate edges are summed;
    in undirected mode every line is mirrored. When `n` is given, edges touching a node >= n are dropped.
    """
    tails: list[int] = []
    heads: list[int] = []
    weights: list[float] = []
    path_str = str(path)
    with open(path, encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) not in (2, 3):
                raise GraphFormatError(f"expected 'i j [w]', got {line!r}", path=path_str, line=line_no)
            try:
                i, j = int(parts[0]), int(parts[1])
                w = float(parts[2]) if len(parts) == 3 else 1.0
            except ValueError as exc:
                raise GraphFormatError(f"cannot parse {line!r}", path=path_str, line=line_no) from exc
            if i < 0 or j < 0:
                raise GraphFormatError("negative node index", path=path_str, line=line_no)
            if i == j:
                raise GraphFormatError(f"self-loop at node {i}", path=path_str, line=line_no)
            if not np.isfinite(w) or w < 0:
                raise GraphFormatError(f"weight must be finite and non-negative, got {w}", path=path_str, line=line_no)
            tails.append(i)
            heads.append(j)
            weights.append(w)

    t = np.asarray(tails, dtype=np.int64)
    h = np.asarray(heads, dtype=np.int64)
    w_arr = np.asarray(weights, dtype=np.float64)
    if n is None:
        n = int(max(t.max(), h.max())) + 1 if len(t) else 0
    else:
        keep = (t < n) & (h < n)
        if not np.all(keep):
            logger.info(f"Dropped {int((~keep).sum())} edges with an endpoint >= {n}")
        t, h, w_arr = t[keep], h[keep], w_arr[keep]
    if not directed:
        t, h, w_arr = np.concatenate([t, h]), np.concatenate([h, t]), np.concatenate([w_arr, w_arr])

    topology = NetworkTopology.from_edges(n, t, h, w_arr)
    logger.info(f"Loaded {topology.num_edges} directed edges over {n} nodes from {path_str}")
    return topology


def save_edge_list(topology: NetworkTopology, path: str | Path, *, undirected: bool = False) -> None:
    """Write the topology in the format read by `load_edge_list`; undirected mode writes each pair once."""
    rows, cols, weights = topology.edges()
    if undirected:
        upper = rows < cols
        rows, cols, weights = rows[upper], cols[upper], weights[upper]
    with open(path, "w", encoding="utf-8") as f:
        for i, j, w in zip(rows, cols, weights, strict=True):
            f.write(f"{i} {j} {float(w)!r}\n")


def load_opinions(path: str | Path, n: int | None = None) -> FloatArray:
    """Read one opinion value per line; blank and '#' lines are skipped."""
    values: list[float] = []
    path_str = str(path)
    with open(path, encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                value = float(line)
            except ValueError as exc:
                raise GraphFormatError(f"cannot parse opinion {line!r}", path=path_str, line=line_no) from exc
            if not np.isfinite(value):
                raise GraphFormatError("opinion must be finite", path=path_str, line=line_no)
            values.append(value)
    if n is not None:
        if len(values) < n:
            raise GraphFormatError(f"expected {n} opinions, found {len(values)}", path=path_str)
        values = values[:n]
    return np.asarray(values, dtype=np.float64)


def synthesize_polarized(
    n: int,
    edge_density: float,
    opinion_split: float = 0.5,
    seed: int = 0,
) -> tuple[NetworkTopology, OpinionState]:
    """
    Directed Erdos-Renyi network with unit weights and internal opinions in {-1, 1}.

    A fraction `opinion_split` of the nodes (rounded) gets s = +1, the rest s = -1.
    External opinions are returned equal to s; solve the equilibrium to update them.
    """
    if n < 2:
        raise ValueError(f"n must be at least 2, got {n}")
    if not 0 < edge_density <= 1:
        raise ValueError(f"edge_density must be in (0, 1], got {edge_density}")
    if not 0 <= opinion_split <= 1:
        raise ValueError(f"opinion_split must be in [0, 1], got {opinion_split}")

    rng = np.random.default_rng(seed)
    if edge_density == 1:
        tails, heads = np.nonzero(~np.eye(n, dtype=bool))
    elif n <= _DENSE_SAMPLING_LIMIT:
        mask = rng.random((n, n)) < edge_density
        np.fill_diagonal(mask, False)
        tails, heads = np.nonzero(mask)
    else:
        count = int(rng.binomial(n * (n - 1), edge_density))
        tails = rng.integers(0, n, size=count)
        # offset in [1, n) can never map a node onto itself
        heads = (tails + rng.integers(1, n, size=count)) % n
        keys = np.unique(tails * n + heads)
        tails, heads = keys // n, keys % n
    topology = NetworkTopology.from_edges(n, tails, heads)

    s = -np.ones(n)
    s[rng.permutation(n)[: int(round(opinion_split * n))]] = 1.0
    return topology, OpinionState(s=s, y=s)


def synthesize_bimodal(
    n: int,
    p_within: float = 0.15,
    p_across: float = 0.02,
    spread: float = 0.3,
    seed: int = 0,
) -> tuple[NetworkTopology, OpinionState]:
    """
    Undirected two-camp network with internal opinions in [0, 1].

    Half of the nodes hold s ~ U(1 - spread, 1), the other half s ~ U(0, spread). Pairs inside a camp
    connect with probability `p_within`, pairs across camps with `p_across`, all with unit weight.
    """
    if n < 2:
        raise ValueError(f"n must be at least 2, got {n}")
    for name, p in (("p_within", p_within), ("p_across", p_across)):
        if not 0 <= p <= 1:
            raise ValueError(f"{name} must be in [0, 1], got {p}")
    if not 0 < spread <= 0.5:
        raise ValueError(f"spread must be in (0, 0.5], got {spread}")

    rng = np.random.default_rng(seed)
    camp = np.zeros(n, dtype=bool)
    camp[rng.permutation(n)[: n // 2]] = True
    same = camp[:, None] == camp[None, :]
    mask = rng.random((n, n)) < np.where(same, p_within, p_across)
    mask = np.triu(mask, k=1)
    tails, heads = np.nonzero(mask)
    topology = NetworkTopology.from_edges(n, np.concatenate([tails, heads]), np.concatenate([heads, tails]))

    s = np.where(camp, rng.uniform(1 - spread, 1, size=n), rng.uniform(0, spread, size=n))
    return topology, OpinionState(s=s, y=s)
