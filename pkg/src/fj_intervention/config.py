import tomllib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Literal, get_args

from fj_intervention.equilibrium import LinearSolveConfig
from fj_intervention.nad import NadConfig
from fj_intervention.objectives import available_objectives
from fj_intervention.optimizer import OptimizerConfig

Experiment = Literal["toy", "budget", "nad-compare", "scalability", "ablation", "gradcheck", "project-check", "hypergrad-norm"]
Algorithm = Literal["beers", "nad", "nad-star"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetConfig:
    """
    Where the network comes from.

    `source = "file"` reads `edges_path` (and `opinions_path` when given); `synthetic` draws a
    polarized directed network for the budget studies or a two-camp undirected one for nad-compare.
    `n` defaults to 1000 nodes for the budget studies and 150 for nad-compare.
    """

    source: Literal["synthetic", "file"] = "synthetic"
    edges_path: str | None = None
    opinions_path: str | None = None
    directed: bool = True
    truncate_n: int | None = None
    n: int | None = None
    # about two edges per node at n = 1000; much denser networks start close to consensus
    edge_density: float = 0.002
    opinion_split: float = 0.5
    p_within: float = 0.15
    p_across: float = 0.02
    spread: float = 0.3


@dataclass(frozen=True)
class ProblemConfig:
    budget: float | None = None
    delta: float = 0.2
    lam: float = 0.2
    objective: str = "disagreement"
    # govern only existing edges; True makes every node pair a decision variable
    complete: bool = False


@dataclass(frozen=True)
class StudyConfig:
    sizes: tuple[int, ...] = (500, 1000, 2000)
    repeats: int = 5
    avg_degree: float = 2.0
    alphas: tuple[float, ...] = (10.0,)
    gammas: tuple[float, ...] = (0.0, 0.95)
    seeds: tuple[int, ...] = (0,)
    constant_alpha: float = 10.0
    with_iterations: bool = False
    grid_points: int = 201
    instances: int = 50
    max_n: int = 12


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: Experiment = "budget"
    seed: int = 0
    output_dir: str = "results"
    algorithms: tuple[Algorithm, ...] = ("beers", "nad", "nad-star")
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    nad: NadConfig = field(default_factory=NadConfig)
    solver: LinearSolveConfig = field(default_factory=LinearSolveConfig)
    study: StudyConfig = field(default_factory=StudyConfig)

    def __post_init__(self) -> None:
        validate(self)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def validate(config: ExperimentConfig) -> None:
    """Check ranges and referenced files before anything is computed."""
    if config.experiment not in get_args(Experiment):
        raise ConfigError(f"unknown experiment {config.experiment!r}, expected one of {get_args(Experiment)}")
    unknown = [a for a in config.algorithms if a not in get_args(Algorithm)]
    if unknown or not config.algorithms:
        raise ConfigError(f"algorithms must be a non-empty subset of {get_args(Algorithm)}, got {config.algorithms}")

    data = config.dataset
    if data.source not in ("synthetic", "file"):
        raise ConfigError(f"dataset.source must be 'synthetic' or 'file', got {data.source!r}")
    if data.source == "file":
        if data.edges_path is None:
            raise ConfigError("dataset.edges_path is required when dataset.source = 'file'")
        for key in ("edges_path", "opinions_path"):
            value = getattr(data, key)
            if value is not None and not Path(value).is_file():
                raise ConfigError(f"dataset.{key} does not exist: {value}")
        if config.experiment == "nad-compare" and data.opinions_path is None:
            raise ConfigError("nad-compare on a file dataset needs dataset.opinions_path")
    if data.n is not None and data.n < 2:
        raise ConfigError(f"dataset.n must be at least 2, got {data.n}")
    if data.truncate_n is not None and data.truncate_n < 2:
        raise ConfigError(f"dataset.truncate_n must be at least 2, got {data.truncate_n}")
    if not 0 < data.edge_density <= 1:
        raise ConfigError(f"dataset.edge_density must be in (0, 1], got {data.edge_density}")

    problem = config.problem
    if problem.budget is not None and problem.budget < 0:
        raise ConfigError(f"problem.budget must be non-negative, got {problem.budget}")
    if problem.delta <= 0:
        raise ConfigError(f"problem.delta must be positive, got {problem.delta}")
    if problem.lam <= 0:
        raise ConfigError(f"problem.lam must be positive for the regularized baseline, got {problem.lam}")
    if problem.objective not in available_objectives():
        raise ConfigError(f"unknown objective {problem.objective!r}, available: {available_objectives()}")
    if problem.objective == "frobenius":
        raise ConfigError("the frobenius regularizer takes a weight and cannot be the experiment objective on its own")

    study = config.study
    if any(n < 2 for n in study.sizes):
        raise ConfigError(f"study.sizes must all be at least 2, got {study.sizes}")
    if study.repeats < 1:
        raise ConfigError(f"study.repeats must be at least 1, got {study.repeats}")
    if study.grid_points < 200:
        raise ConfigError(f"study.grid_points must be at least 200, got {study.grid_points}")
    if any(a <= 0 for a in study.alphas) or any(not 0 <= g < 1 for g in study.gammas):
        raise ConfigError("study.alphas must be positive and study.gammas in [0, 1)")
    if study.instances < 1 or study.max_n < 3:
        raise ConfigError("study.instances must be at least 1 and study.max_n at least 3")


def _build(cls: type[Any], table: dict[str, Any], section: str) -> Any:
    known = {f.name for f in fields(cls)}
    extra = sorted(set(table) - known)
    if extra:
        raise ConfigError(f"unknown keys in [{section}]: {extra}")
    values = {k: tuple(v) if isinstance(v, list) else v for k, v in table.items()}
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{section}]: {exc}") from exc


_SECTIONS: dict[str, type[Any]] = {
    "dataset": DatasetConfig,
    "problem": ProblemConfig,
    "nad": NadConfig,
    "solver": LinearSolveConfig,
    "study": StudyConfig,
}


def load_config(path: str | Path) -> ExperimentConfig:
    """
    Read an experiment from a TOML file.

    Top-level keys are `experiment`, `seed`, `output_dir` and `algorithms`; each nested table maps
    onto the dataclass of the same name. The `[solver]` table is shared by the optimizer and NAD.
    Relative dataset paths resolve against the config file's directory.

    Raises:
        ConfigError: the file is missing, unparsable, or holds an invalid value.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file does not exist: {path}")
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc

    sections: dict[str, Any] = {}
    for name, cls in _SECTIONS.items():
        table = dict(raw.pop(name, {}))
        if name == "dataset":
            for key in ("edges_path", "opinions_path"):
                if table.get(key) is not None and not Path(table[key]).is_absolute():
                    table[key] = str(path.parent / table[key])
        sections[name] = _build(cls, table, name)

    solver = sections["solver"]
    sections["nad"] = replace(sections["nad"], solver=solver)
    sections["optimizer"] = _build(OptimizerConfig, {**raw.pop("optimizer", {}), "solver": solver}, "optimizer")

    top = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
    extra = sorted(set(top) - {"experiment", "seed", "output_dir", "algorithms"})
    if extra:
        raise ConfigError(f"unknown top-level keys: {extra}")
    return ExperimentConfig(**top, **sections)


def with_overrides(
    config: ExperimentConfig,
    *,
    experiment: str | None = None,
    seed: int | None = None,
    output_dir: str | None = None,
    algorithm: str | None = None,
) -> ExperimentConfig:
    """Apply command-line flags on top of a loaded config."""
    changes: dict[str, Any] = {}
    if experiment is not None:
        changes["experiment"] = experiment
    if seed is not None:
        changes["seed"] = int(seed)
    if output_dir is not None:
        changes["output_dir"] = str(output_dir)
    if algorithm is not None:
        changes["algorithms"] = tuple(a.strip() for a in str(algorithm).split(","))
    return replace(config, **changes) if changes else config
