from dataclasses import dataclass
from typing import Literal, get_args

import numpy as np
import scipy.sparse as sp
from loguru import logger
from scipy.sparse.linalg import LinearOperator, gmres

from fj_intervention.graph import FloatArray, NetworkTopology

SolveMethod = Literal["auto", "gmres", "dense", "fixed-point"]

_GMRES_ATTEMPTS = 3


class SolverError(RuntimeError):
    def __init__(self, message: str, *, residual: float, method: str) -> None:
        super().__init__(f"{message} (method={method}, relative residual={residual:.3e})")
        self.residual = residual
        self.method = method


@dataclass(frozen=True)
class LinearSolveConfig:
    """
    Settings shared by the forward (A y = s) and adjoint (A^T v = g) solves.

    `auto` picks a dense direct solve up to `dense_threshold` nodes and restarted GMRES above it.
    `fixed-point` iterates the Friedkin-Johnsen update itself.
    """

    method: SolveMethod = "auto"
    residual_tol: float = 1e-8
    max_inner_iters: int = 10_000
    dense_threshold: int = 500
    precondition: bool = False
    restart: int = 50

    def __post_init__(self) -> None:
        if self.method not in get_args(SolveMethod):
            raise ValueError(f"unknown solve method {self.method!r}, expected one of {get_args(SolveMethod)}")
        if self.residual_tol <= 0:
            raise ValueError(f"residual_tol must be positive, got {self.residual_tol}")
        if self.max_inner_iters < 1:
            raise ValueError(f"max_inner_iters must be at least 1, got {self.max_inner_iters}")
        if self.restart < 1:
            raise ValueError(f"restart must be at least 1, got {self.restart}")

    def resolve(self, n: int) -> str:
        if self.method != "auto":
            return self.method
        return "dense" if n <= self.dense_threshold else "gmres"


@dataclass(frozen=True)
class EquilibriumSystem:
    """A(w) = I + diag(W 1) - W together with the right-hand side s."""

    matrix: sp.csr_array
    rhs: FloatArray
    adjacency: sp.csr_array

    def __post_init__(self) -> None:
        shape = self.matrix.shape
        if shape[0] != shape[1]:
            raise ValueError(f"system matrix must be square, got {shape}")
        if len(self.rhs) != shape[0]:
            raise ValueError(f"rhs has length {len(self.rhs)}, expected {shape[0]}")

    @property
    def n(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def diagonal(self) -> FloatArray:
        return np.asarray(self.matrix.diagonal(), dtype=np.float64)


def build_system(topology: NetworkTopology, s: object) -> EquilibriumSystem:
    s_arr = np.asarray(s, dtype=np.float64).ravel()
    if len(s_arr) != topology.n:
        raise ValueError(f"expected {topology.n} internal opinions, got {len(s_arr)}")
    adjacency = topology.matrix
    if np.any(adjacency.data < 0):
        raise ValueError("negative weight in adjacency matrix")
    matrix = (sp.diags_array(1.0 + topology.out_weight(), format="csr") - adjacency).tocsr()
    return EquilibriumSystem(matrix=matrix, rhs=s_arr, adjacency=adjacency)


def equilibrium_residual(system: EquilibriumSystem, y: object) -> float:
    """Absolute residual ||A y - s||_2."""
    y_arr = np.asarray(y, dtype=np.float64).ravel()
    if len(y_arr) != system.n:
        raise ValueError(f"expected {system.n} opinions, got {len(y_arr)}")
    return float(np.linalg.norm(system.matrix @ y_arr - system.rhs))


def solve_equilibrium(
    system: EquilibriumSystem,
    config: LinearSolveConfig | None = None,
    *,
    x0: FloatArray | None = None,
) -> FloatArray:
    """Unique equilibrium y* of the FJ dynamics, i.e. the solution of A(w) y = s."""
    return solve_linear(system, system.rhs, config, x0=x0)


def solve_linear(
    system: EquilibriumSystem,
    rhs: object,
    config: LinearSolveConfig | None = None,
    *,
    transpose: bool = False,
    x0: FloatArray | None = None,
) -> FloatArray:
    """
    Solve A x = rhs, or A^T x = rhs when `transpose` is set.

    The transpose is a CSC view of A; it is never copied. `x0` warm-starts the iterative methods.

    Raises:
        SolverError: the relative residual ||A x - rhs|| / ||rhs|| stays above `residual_tol`.
    """
    cfg = config or LinearSolveConfig()
    b = np.asarray(rhs, dtype=np.float64).ravel()
    n = system.n
    if len(b) != n:
        raise ValueError(f"rhs has length {len(b)}, expected {n}")
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0:
        return np.zeros(n)

    method = cfg.resolve(n)
    matrix = system.matrix.T if transpose else system.matrix
    start = None if x0 is None else np.asarray(x0, dtype=np.float64).ravel()

    if method == "dense":
        x = np.linalg.solve(matrix.toarray(), b)
    elif method == "gmres":
        x = _gmres(matrix, b, b_norm, system.diagonal, cfg, start)
    else:
        x = _fixed_point(system, b, b_norm, cfg, start, transpose)

    residual = float(np.linalg.norm(matrix @ x - b)) / b_norm
    if not residual <= cfg.residual_tol:
        raise SolverError("linear solve did not reach tolerance", residual=residual, method=method)
    logger.debug(f"Solved n={n} system with {method}, relative residual {residual:.2e}")
    return np.asarray(x, dtype=np.float64)


def _gmres(
    matrix: sp.sparray,
    b: FloatArray,
    b_norm: float,
    diagonal: FloatArray,
    cfg: LinearSolveConfig,
    x0: FloatArray | None,
) -> FloatArray:
    n = len(b)
    preconditioner = None
    if cfg.precondition:
        inverse = 1.0 / diagonal
        preconditioner = LinearOperator((n, n), matvec=lambda v: inverse * v, dtype=np.float64)

    x = np.zeros(n) if x0 is None else x0.copy()
    for _ in range(_GMRES_ATTEMPTS):
        # restart from the current iterate if the preconditioned residual met rtol but the true one did not
        x, _info = gmres(
            matrix,
            b,
            x0=x,
            rtol=0.5 * cfg.residual_tol,
            atol=0.0,
            restart=min(cfg.restart, n),
            maxiter=cfg.max_inner_iters,
            M=preconditioner,
        )
        if np.linalg.norm(matrix @ x - b) <= cfg.residual_tol * b_norm:
            break
    return np.asarray(x, dtype=np.float64)


def _fixed_point(
    system: EquilibriumSystem,
    b: FloatArray,
    b_norm: float,
    cfg: LinearSolveConfig,
    x0: FloatArray | None,
    transpose: bool,
) -> FloatArray:
    """y <- (b + W y) / (1 + sum_j w_ij); for b = s this is the FJ update rule."""
    adjacency = system.adjacency.T if transpose else system.adjacency
    denominator = system.diagonal
    x = b / denominator if x0 is None else x0.copy()
    wx = adjacency @ x
    for _ in range(cfg.max_inner_iters):
        if np.linalg.norm(denominator * x - wx - b) <= cfg.residual_tol * b_norm:
            break
        x = (b + wx) / denominator
        wx = adjacency @ x
    return x
