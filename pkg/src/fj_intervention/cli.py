import sys
from typing import Any

import fire
from loguru import logger

from fj_intervention.config import ConfigError, ExperimentConfig, load_config, with_overrides
from fj_intervention.equilibrium import SolverError
from fj_intervention.experiments import ExperimentFailed, run_batch, run_experiment
from fj_intervention.feasible import ProjectionError
from fj_intervention.graph import GraphFormatError
from fj_intervention.objectives import GradientCheckError


def run(
    experiment: str,
    config: str | None = None,
    *,
    algorithm: str | None = None,
    seed: int | None = None,
    out: str | None = None,
) -> dict[str, Any]:
    """Load `config` (or the built-in defaults), apply the flags and run `experiment`."""
    base = load_config(config) if config is not None else ExperimentConfig()
    settings = with_overrides(base, experiment=experiment, seed=seed, output_dir=out, algorithm=algorithm)
    summary = run_experiment(settings)
    if summary.get("failed"):
        raise ExperimentFailed(f"{experiment} finished with a failed run, see {settings.output_dir}")
    return summary


def toy(config: str | None = None, *, seed: int | None = None, out: str | None = None) -> None:
    run("toy", config, seed=seed, out=out)


def budget(config: str | None = None, *, seed: int | None = None, out: str | None = None) -> None:
    run("budget", config, seed=seed, out=out)


def nad_compare(config: str | None = None, *, algorithm: str | None = None, seed: int | None = None, out: str | None = None) -> None:
    """`--algorithm` takes a comma-separated subset of beers, nad and nad-star."""
    run("nad-compare", config, algorithm=algorithm, seed=seed, out=out)


def scalability(config: str | None = None, *, seed: int | None = None, out: str | None = None) -> None:
    run("scalability", config, seed=seed, out=out)


def ablation(config: str | None = None, *, seed: int | None = None, out: str | None = None) -> None:
    run("ablation", config, seed=seed, out=out)


def gradcheck(config: str | None = None, *, seed: int | None = None, out: str | None = None) -> None:
    run("gradcheck", config, seed=seed, out=out)


def project_check(config: str | None = None, *, seed: int | None = None, out: str | None = None) -> None:
    run("project-check", config, seed=seed, out=out)


def hypergrad_norm(config: str | None = None, *, seed: int | None = None, out: str | None = None) -> None:
    run("hypergrad-norm", config, seed=seed, out=out)


def batch(*configs: str, parallel: bool = False, n_process: int = 2, out: str | None = None) -> None:
    if not configs:
        raise ValueError("batch needs at least one config file")
    summaries = run_batch(list(configs), parallel=parallel, n_process=n_process, output_dir=out)
    failed = [path for path, summary in zip(configs, summaries, strict=True) if summary.get("failed")]
    if failed:
        raise ExperimentFailed(f"failed runs: {', '.join(failed)}")


COMMANDS = {
    "toy": toy,
    "budget": budget,
    "nad-compare": nad_compare,
    "scalability": scalability,
    "ablation": ablation,
    "gradcheck": gradcheck,
    "project-check": project_check,
    "hypergrad-norm": hypergrad_norm,
    "batch": batch,
}


def main() -> None:
    try:
        fire.Fire(COMMANDS)
    except (ConfigError, GraphFormatError, SolverError, ProjectionError, GradientCheckError, ExperimentFailed) as exc:
        logger.error(f"{type(exc).__name__}: {exc}")
        sys.exit(1)


if __name__ == "__main__":
    main()
