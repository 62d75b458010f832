from abc import ABC, abstractmethod
from collections.abc import Callable, Sequence
from dataclasses import InitVar, dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from loguru import logger
from scipy.optimize import brentq
from scipy.sparse.linalg import lsqr

from fj_intervention.graph import DecisionVector, FloatArray, IntArray, NetworkTopology

# affine projections factor the Gram matrix densely up to this many constraints
_DENSE_GRAM_LIMIT = 3000

Projector = Callable[[FloatArray], FloatArray]


class ProjectionError(RuntimeError):
    def __init__(self, message: str, *, violation: float) -> None:
        super().__init__(f"{message} (worst violation {violation:.3e})")
        self.violation = violation


class Primitive(ABC):
    """A closed convex set in decision space with its Euclidean projection."""

    name: str = "primitive"

    @abstractmethod
    def project(self, x: FloatArray) -> FloatArray: ...

    @abstractmethod
    def violation(self, x: FloatArray) -> float: ...


@dataclass(frozen=True)
class NonNegative(Primitive):
    name: str = "nonneg"

    def project(self, x: FloatArray) -> FloatArray:
        return np.maximum(x, 0.0)

    def violation(self, x: FloatArray) -> float:
        return float(max(0.0, -x.min())) if len(x) else 0.0


@dataclass(frozen=True)
class BoxLower(Primitive):
    lower: FloatArray
    name: str = "box_lower"

    def project(self, x: FloatArray) -> FloatArray:
        return np.maximum(x, self.lower)

    def violation(self, x: FloatArray) -> float:
        return float(max(0.0, (self.lower - x).max())) if len(x) else 0.0


@dataclass(frozen=True)
class BudgetHalfspace(Primitive):
    """sum_{k in subset} x_k <= bound."""

    subset: IntArray
    bound: float
    name: str = "budget"

    def project(self, x: FloatArray) -> FloatArray:
        excess = x[self.subset].sum() - self.bound
        if excess <= 0 or len(self.subset) == 0:
            return x.copy()
        out = x.copy()
        out[self.subset] -= excess / len(self.subset)
        return out

    def violation(self, x: FloatArray) -> float:
        return float(max(0.0, x[self.subset].sum() - self.bound))


class _AffineProjector:
    """Projection onto {x : C x = d} as x - C^+ (C x - d)."""

    def __init__(self, matrix: sp.csr_array, rhs: FloatArray) -> None:
        self.matrix = matrix
        self.rhs = rhs
        gram = (matrix @ matrix.T).tocsr()
        self._diagonal: FloatArray | None = None
        self._pinv: FloatArray | None = None
        if gram.nnz == np.count_nonzero(gram.diagonal()):
            self._diagonal = np.asarray(gram.diagonal(), dtype=np.float64)
        elif gram.shape[0] <= _DENSE_GRAM_LIMIT:
            self._pinv = np.linalg.pinv(gram.toarray(), hermitian=True)

    def residual(self, x: FloatArray) -> FloatArray:
        return np.asarray(self.matrix @ x - self.rhs, dtype=np.float64)

    def __call__(self, x: FloatArray) -> FloatArray:
        r = self.residual(x)
        if self._diagonal is not None:
            # rows touch disjoint variables: spread each row's violation evenly over its slots
            scale = np.divide(r, self._diagonal, out=np.zeros_like(r), where=self._diagonal > 0)
            return x - self.matrix.T @ scale
        if self._pinv is not None:
            return x - self.matrix.T @ (self._pinv @ r)
        delta = lsqr(self.matrix, r, atol=1e-14, btol=1e-14, iter_lim=10 * self.matrix.shape[1])[0]
        return x - delta


@dataclass(frozen=True)
class DegreeEquality(Primitive):
    """
    Row sums of W fixed: C x = d where C[i, k] counts the slots of row i governed by variable k.

    The targets already have the frozen slots of each row subtracted.
    """

    matrix: sp.csr_array
    targets: FloatArray
    name: str = "degree"

    @cached_property
    def projector(self) -> _AffineProjector:
        return _AffineProjector(self.matrix, self.targets)

    def project(self, x: FloatArray) -> FloatArray:
        return self.projector(x)

    def violation(self, x: FloatArray) -> float:
        r = self.matrix @ x - self.targets
        return float(np.abs(r).max()) if len(r) else 0.0


@dataclass(frozen=True)
class FrobeniusBall(Primitive):
    """
    ||W - W(0)||_F <= radius expressed in decision space.

    A decision variable governing c slots enters the norm with weight c. Uniform weights reduce the
    projection to a radial shrink; mixed weights need a scalar root find for the multiplier.
    """

    center: FloatArray
    radius: float
    weights: FloatArray
    name: str = "frobenius_ball"

    def norm(self, x: FloatArray) -> float:
        d = x - self.center
        return float(np.sqrt(self.weights @ (d * d)))

    def project(self, x: FloatArray) -> FloatArray:
        d = x - self.center
        dist = self.norm(x)
        if dist <= self.radius:
            return x.copy()
        if self.radius == 0:
            return self.center.copy()
        if np.ptp(self.weights) == 0:
            return self.center + d * (self.radius / dist)

        def excess(mu: float) -> float:
            scaled = d / (1.0 + mu * self.weights)
            return float(self.weights @ (scaled * scaled)) - self.radius**2

        upper = 1.0
        while excess(upper) > 0:
            upper *= 2.0
        mu = brentq(excess, 0.0, upper, xtol=1e-15, rtol=1e-15)
        return self.center + d / (1.0 + mu * self.weights)

    def violation(self, x: FloatArray) -> float:
        return max(0.0, self.norm(x) - self.radius)


@dataclass(frozen=True)
class TieGroups(Primitive):
    """Equality classes of decision variables; projection replaces each class by its mean."""

    groups: tuple[IntArray, ...]
    size: int
    name: str = "ties"

    @cached_property
    def labels(self) -> IntArray:
        labels = np.full(self.size, -1, dtype=np.int64)
        for g, members in enumerate(self.groups):
            labels[members] = g
        return labels

    def project(self, x: FloatArray) -> FloatArray:
        tied = self.labels >= 0
        if not np.any(tied):
            return x.copy()
        count = np.bincount(self.labels[tied], minlength=len(self.groups))
        mean = np.bincount(self.labels[tied], weights=x[tied], minlength=len(self.groups)) / np.maximum(count, 1)
        out = x.copy()
        out[tied] = mean[self.labels[tied]]
        return out

    def violation(self, x: FloatArray) -> float:
        return float(np.abs(self.project(x) - x).max()) if len(x) else 0.0

    def as_affine(self) -> tuple[sp.csr_array, FloatArray]:
        rows: list[int] = []
        cols: list[int] = []
        vals: list[float] = []
        r = 0
        for members in self.groups:
            for a, b in zip(members[:-1], members[1:], strict=True):
                rows += [r, r]
                cols += [int(a), int(b)]
                vals += [1.0, -1.0]
                r += 1
        matrix = sp.coo_array((vals, (rows, cols)), shape=(r, self.size)).tocsr()
        return matrix, np.zeros(r)


def _project_simplex(v: FloatArray, z: float) -> FloatArray:
    """Projection onto {x >= 0, sum x = z} by the sorted-threshold rule."""
    if z == 0:
        return np.zeros_like(v)
    u = np.sort(v)[::-1]
    cssv = np.cumsum(u) - z
    ind = np.arange(1, len(v) + 1)
    rho = np.count_nonzero(u - cssv / ind > 0)
    theta = cssv[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


def project_budget_nonneg(w: object, subset: object, b: float) -> FloatArray:
    """
    Exact projection onto {x >= 0, sum_{k in subset} x_k <= b}.

    If the orthant clip already meets the budget it is the answer; otherwise the subset lands on the
    simplex face sum = b.
    """
    if b < 0:
        raise ValueError(f"budget must be non-negative, got {b}")
    x = np.asarray(w, dtype=np.float64).ravel()
    idx = np.asarray(subset, dtype=np.int64).ravel()
    out = np.maximum(x, 0.0)
    if out[idx].sum() <= b:
        return out
    out[idx] = _project_simplex(x[idx], b)
    return out


def degree_equality(decision: DecisionVector, reference: NetworkTopology) -> DegreeEquality:
    """Keep each row sum of W at its value in `reference` (the out-degree constraint of NAD)."""
    n = reference.n
    m = decision.m
    targets = reference.out_weight() - np.bincount(decision.frozen_rows, weights=decision.frozen_values, minlength=n)
    matrix = sp.coo_array((np.ones(decision.num_slots), (decision.slot_rows, decision.slot_index)), shape=(n, m)).tocsr()
    matrix.sum_duplicates()

    governed = np.diff(matrix.indptr) > 0
    if np.any(np.abs(targets[~governed]) > 1e-12):
        raise ValueError("degree constraint is infeasible: a row without decision slots has a different row sum")
    return DegreeEquality(matrix=matrix[governed], targets=targets[governed])


def frobenius_ball(decision: DecisionVector, delta: float) -> FrobeniusBall:
    """||W - W(0)||_F <= delta ||W(0)||_F with W(0) the network assembled from `decision`."""
    if delta < 0:
        raise ValueError(f"delta must be non-negative, got {delta}")
    reference_norm = np.sqrt(decision.multiplicity @ decision.values**2 + decision.frozen_values @ decision.frozen_values)
    return FrobeniusBall(center=decision.values.copy(), radius=float(delta * reference_norm), weights=decision.multiplicity)


def _plan(primitives: Sequence[Primitive]) -> list[Projector]:
    """Merge primitives with joint closed forms and order the rest for Dykstra's sweep."""
    nonneg = [p for p in primitives if isinstance(p, NonNegative)]
    budgets = [p for p in primitives if isinstance(p, BudgetHalfspace)]
    degrees = [p for p in primitives if isinstance(p, DegreeEquality)]
    ties = [p for p in primitives if isinstance(p, TieGroups)]
    boxes = [p for p in primitives if isinstance(p, BoxLower)]
    rest = [p for p in primitives if not isinstance(p, NonNegative | BudgetHalfspace | DegreeEquality | TieGroups | BoxLower)]

    projectors: list[Projector] = []
    if len(degrees) + len(ties) == 1:
        projectors.append([*degrees, *ties][0].project)
    elif degrees or ties:
        blocks = [(d.matrix, d.targets) for d in degrees] + [t.as_affine() for t in ties]
        projectors.append(_AffineProjector(sp.vstack([b[0] for b in blocks]).tocsr(), np.concatenate([b[1] for b in blocks])))
    projectors.extend(p.project for p in rest)
    if nonneg and len(budgets) == 1:
        budget = budgets[0]
        projectors.append(lambda x: project_budget_nonneg(x, budget.subset, budget.bound))
    else:
        projectors.extend(p.project for p in budgets)
        projectors.extend(p.project for p in nonneg)
    # orthant-type sets go last so every returned point is exactly non-negative
    projectors.extend(p.project for p in boxes)
    return projectors


@dataclass(frozen=True)
class FeasibleSet:
    """
    The feasible weights as an intersection of convex primitives.

    Passing `initial` checks non-emptiness at construction: its projection must satisfy every
    primitive to `projection_tol`.
    """

    primitives: tuple[Primitive, ...]
    projection_tol: float = 1e-8
    max_dykstra_iters: int = 10_000
    initial: InitVar[FloatArray | None] = None
    projectors: tuple[Projector, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self, initial: FloatArray | None) -> None:
        object.__setattr__(self, "primitives", tuple(self.primitives))
        if self.projection_tol <= 0:
            raise ValueError(f"projection_tol must be positive, got {self.projection_tol}")
        if self.max_dykstra_iters < 1:
            raise ValueError(f"max_dykstra_iters must be at least 1, got {self.max_dykstra_iters}")
        object.__setattr__(self, "projectors", tuple(_plan(self.primitives)))
        if initial is not None:
            point = project(self, initial)
            worst = max(check_membership(self, point).values(), default=0.0)
            if worst > self.projection_tol:
                raise ProjectionError("feasible set appears to be empty", violation=worst)


def project(feasible: FeasibleSet, w: object) -> FloatArray:
    """
    Euclidean projection onto the feasible set.

    A single (possibly merged) projector is applied exactly; several are combined with Dykstra's
    algorithm, which converges to the projection rather than to an arbitrary feasible point.

    Raises:
        ProjectionError: Dykstra did not converge within `max_dykstra_iters` sweeps.
    """
    x = np.asarray(w, dtype=np.float64).ravel().copy()
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot project a non-finite point")
    projectors = feasible.projectors
    if not projectors:
        return x
    if len(projectors) == 1:
        return projectors[0](x)

    tol = feasible.projection_tol
    increments = [np.zeros_like(x) for _ in projectors]
    for sweep in range(feasible.max_dykstra_iters):
        previous = x
        for i, projector in enumerate(projectors):
            shifted = x + increments[i]
            x = projector(shifted)
            increments[i] = shifted - x
        if np.linalg.norm(x - previous) <= tol * max(1.0, float(np.linalg.norm(x))):
            worst = max(check_membership(feasible, x).values(), default=0.0)
            if worst <= tol:
                logger.debug(f"Dykstra converged after {sweep + 1} sweeps")
                return x
    worst = max(check_membership(feasible, x).values(), default=0.0)
    raise ProjectionError(f"Dykstra did not converge in {feasible.max_dykstra_iters} sweeps", violation=worst)


def check_membership(feasible: FeasibleSet, w: object) -> dict[str, float]:
    """Worst violation of each primitive; 0 means satisfied. Repeated names get an index suffix."""
    x = np.asarray(w, dtype=np.float64).ravel()
    report: dict[str, float] = {}
    for i, primitive in enumerate(feasible.primitives):
        key = primitive.name if primitive.name not in report else f"{primitive.name}_{i}"
        report[key] = primitive.violation(x)
    return report
