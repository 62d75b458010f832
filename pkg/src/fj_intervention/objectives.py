from collections.abc import Callable, Sequence
from dataclasses import dataclass, replace

import numpy as np
from loguru import logger

from fj_intervention.graph import DecisionVector, FloatArray, NetworkTopology, assemble_weights, edge_decision

# Every procedure takes the decision vector, the topology assembled from it, and the opinions y.
ObjectiveFn = Callable[[DecisionVector, NetworkTopology, FloatArray], float]
GradFn = Callable[[DecisionVector, NetworkTopology, FloatArray], FloatArray]


class GradientCheckError(RuntimeError):
    def __init__(self, name: str, error: float) -> None:
        super().__init__(f"objective {name!r} failed the finite-difference check, worst relative error {error:.3e}")
        self.name = name
        self.error = error


@dataclass(frozen=True)
class ObjectiveSpec:
    """An upper-level objective phi(w, y) with its closed-form partial gradients."""

    name: str
    evaluate: ObjectiveFn
    grad_w: GradFn
    grad_y: GradFn
    checked: bool = False


_REGISTRY: dict[str, Callable[..., ObjectiveSpec]] = {}


def register_objective(name: str) -> Callable[[Callable[..., ObjectiveSpec]], Callable[..., ObjectiveSpec]]:
    def decorator(factory: Callable[..., ObjectiveSpec]) -> Callable[..., ObjectiveSpec]:
        if name in _REGISTRY:
            raise ValueError(f"objective {name!r} is already registered")
        _REGISTRY[name] = factory
        return factory

    return decorator


def get_objective(name: str, **kwargs: object) -> ObjectiveSpec:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown objective {name!r}, available: {sorted(_REGISTRY)}") from None
    return factory(**kwargs)


def available_objectives() -> list[str]:
    return sorted(_REGISTRY)


def _zeros_w(decision: DecisionVector, topology: NetworkTopology, y: FloatArray) -> FloatArray:
    return np.zeros(decision.m)


def _zeros_y(decision: DecisionVector, topology: NetworkTopology, y: FloatArray) -> FloatArray:
    return np.zeros(len(y))


@register_objective("polarization")
def polarization_mean_square(nodes: Sequence[int] | None = None) -> ObjectiveSpec:
    """
    (1/n) ||y||^2, optionally restricted to the nodes in `nodes`.

    The budget problem passes the user nodes so the neutral agency does not dilute the mean.
    """
    index = None if nodes is None else np.asarray(nodes, dtype=np.int64)

    def evaluate(decision: DecisionVector, topology: NetworkTopology, y: FloatArray) -> float:
        sub = y if index is None else y[index]
        return float(sub @ sub) / len(sub)

    def grad_y(decision: DecisionVector, topology: NetworkTopology, y: FloatArray) -> FloatArray:
        if index is None:
            return 2.0 * y / len(y)
        grad = np.zeros(len(y))
        grad[index] = 2.0 * y[index] / len(index)
        return grad

    return ObjectiveSpec(name="polarization", evaluate=evaluate, grad_w=_zeros_w, grad_y=grad_y, checked=True)


@register_objective("disagreement")
def disagreement() -> ObjectiveSpec:
    """
    D = 1/2 sum_ij w_ij (y_i - y_j)^2 over every slot of the assembled network.

    Frozen slots add to the value and to grad_y but have no entry in grad_w. A tied undirected pair
    collects the contributions of both directed slots.
    """

    def evaluate(decision: DecisionVector, topology: NetworkTopology, y: FloatArray) -> float:
        rows, cols, weights = topology.edges()
        gap = y[rows] - y[cols]
        return 0.5 * float(weights @ (gap * gap))

    def grad_w(decision: DecisionVector, topology: NetworkTopology, y: FloatArray) -> FloatArray:
        gap = y[decision.slot_rows] - y[decision.slot_cols]
        return np.bincount(decision.slot_index, weights=0.5 * gap * gap, minlength=decision.m)

    def grad_y(decision: DecisionVector, topology: NetworkTopology, y: FloatArray) -> FloatArray:
        w = topology.matrix
        return (topology.out_weight() + topology.in_weight()) * y - w @ y - w.T @ y

    return ObjectiveSpec(name="disagreement", evaluate=evaluate, grad_w=grad_w, grad_y=grad_y, checked=True)


@register_objective("polarization_variance")
def polarization_variance() -> ObjectiveSpec:
    """P = sum_i (y_i - mean(y))^2, the mean recomputed from each y."""

    def evaluate(decision: DecisionVector, topology: NetworkTopology, y: FloatArray) -> float:
        centered = y - y.mean()
        return float(centered @ centered)

    def grad_y(decision: DecisionVector, topology: NetworkTopology, y: FloatArray) -> FloatArray:
        return 2.0 * (y - y.mean())

    return ObjectiveSpec(name="polarization_variance", evaluate=evaluate, grad_w=_zeros_w, grad_y=grad_y, checked=True)


@register_objective("frobenius")
def frobenius_regularizer(lam: float) -> ObjectiveSpec:
    """lam * sum of squared weights over the decision-governed slots."""
    if lam < 0:
        raise ValueError(f"lam must be non-negative, got {lam}")

    def evaluate(decision: DecisionVector, topology: NetworkTopology, y: FloatArray) -> float:
        return lam * float(decision.multiplicity @ (decision.values * decision.values))

    def grad_w(decision: DecisionVector, topology: NetworkTopology, y: FloatArray) -> FloatArray:
        return 2.0 * lam * decision.multiplicity * decision.values

    return ObjectiveSpec(name=f"frobenius({lam})", evaluate=evaluate, grad_w=grad_w, grad_y=_zeros_y, checked=True)


def weighted_sum(terms: Sequence[tuple[float, ObjectiveSpec]], name: str | None = None) -> ObjectiveSpec:
    """Compose objectives additively: sum_k c_k phi_k."""
    if not terms:
        raise ValueError("weighted_sum needs at least one term")
    parts = list(terms)

    def evaluate(decision: DecisionVector, topology: NetworkTopology, y: FloatArray) -> float:
        return sum(c * spec.evaluate(decision, topology, y) for c, spec in parts)

    def grad_w(decision: DecisionVector, topology: NetworkTopology, y: FloatArray) -> FloatArray:
        return np.sum([c * spec.grad_w(decision, topology, y) for c, spec in parts], axis=0)

    def grad_y(decision: DecisionVector, topology: NetworkTopology, y: FloatArray) -> FloatArray:
        return np.sum([c * spec.grad_y(decision, topology, y) for c, spec in parts], axis=0)

    label = name or " + ".join(f"{c}*{spec.name}" for c, spec in parts)
    checked = all(spec.checked for _, spec in parts)
    return ObjectiveSpec(name=label, evaluate=evaluate, grad_w=grad_w, grad_y=grad_y, checked=checked)


def opinion_metrics(topology: NetworkTopology, y: FloatArray) -> dict[str, float]:
    """Polarization P, mean-square polarization and disagreement D of opinions y on `topology`."""
    rows, cols, weights = topology.edges()
    gap = y[rows] - y[cols]
    centered = y - y.mean()
    return {
        "polarization": float(centered @ centered),
        "mean_square": float(y @ y) / len(y),
        "disagreement": 0.5 * float(weights @ (gap * gap)),
    }


def percent_change(before: float, after: float) -> float:
    """(after - before) / before * 100; NaN when before is 0."""
    if before == 0:
        return float("nan")
    return (after - before) / before * 100.0


def compare_metrics(before: dict[str, float], after: dict[str, float]) -> dict[str, float]:
    """Flatten two `opinion_metrics` results into *_before, *_after and *_change_pct entries."""
    out: dict[str, float] = {}
    for key, value in before.items():
        out[f"{key}_before"] = value
        out[f"{key}_after"] = after[key]
        out[f"{key}_change_pct"] = percent_change(value, after[key])
    return out


def relative_error(estimate: FloatArray, exact: FloatArray, floor: float = 1e-3) -> float:
    """Worst per-coordinate |estimate - exact| / max(|estimate|, |exact|, floor)."""
    if len(exact) == 0:
        return 0.0
    scale = np.maximum(np.maximum(np.abs(estimate), np.abs(exact)), floor)
    return float(np.max(np.abs(estimate - exact) / scale))


def finite_difference_errors(
    spec: ObjectiveSpec,
    decision: DecisionVector,
    topology: NetworkTopology,
    y: FloatArray,
    *,
    step: float = 1e-6,
    floor: float = 1e-3,
) -> tuple[float, float]:
    """
    Worst relative error of grad_w and grad_y against central finite differences.

    `topology` supplies n; the perturbed networks are reassembled from `decision`. Entries smaller than
    `floor` are compared on the absolute scale `floor`.
    """
    base = assemble_weights(topology, decision)
    fd_w = np.zeros(decision.m)
    for k in range(decision.m):
        shifted = []
        for sign in (1.0, -1.0):
            values = decision.values.copy()
            values[k] += sign * step
            perturbed = decision.with_values(values)
            shifted.append(spec.evaluate(perturbed, assemble_weights(topology, perturbed), y))
        fd_w[k] = (shifted[0] - shifted[1]) / (2 * step)

    fd_y = np.zeros(len(y))
    for i in range(len(y)):
        plus, minus = y.copy(), y.copy()
        plus[i] += step
        minus[i] -= step
        fd_y[i] = (spec.evaluate(decision, base, plus) - spec.evaluate(decision, base, minus)) / (2 * step)

    err_w = relative_error(fd_w, spec.grad_w(decision, base, y), floor)
    err_y = relative_error(fd_y, spec.grad_y(decision, base, y), floor)
    return err_w, err_y


def check_objective(spec: ObjectiveSpec, *, n: int = 6, seed: int = 0, rtol: float = 1e-5) -> ObjectiveSpec:
    """
    Run the gradient-consistency check on a random complete network and return `spec` marked checked.

    Raises:
        GradientCheckError: either partial gradient disagrees with finite differences beyond `rtol`.
    """
    rng = np.random.default_rng(seed)
    rows, cols = np.nonzero(~np.eye(n, dtype=bool))
    topology = NetworkTopology.from_edges(n, rows, cols, rng.uniform(0.5, 1.5, size=len(rows)))
    decision = edge_decision(topology)
    y = rng.uniform(-1.0, 1.0, size=n)
    err_w, err_y = finite_difference_errors(spec, decision, topology, y)
    worst = max(err_w, err_y)
    logger.info(f"Gradient check for {spec.name}: grad_w error {err_w:.2e}, grad_y error {err_y:.2e}")
    if worst > rtol:
        raise GradientCheckError(spec.name, worst)
    return replace(spec, checked=True)
