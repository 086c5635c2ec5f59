"""Meta-exploration for cooperative multi-agent learning."""

from ._core import (
    MesaError,
    classify_equilibria,
    criterion_holds,
    densify,
    min_exploration_steps,
    parse_config,
    run,
    stage_reward,
    uniform_lambda_threshold,
)

__all__ = [
    "MesaError",
    "classify_equilibria",
    "criterion_holds",
    "densify",
    "min_exploration_steps",
    "parse_config",
    "run",
    "stage_reward",
    "uniform_lambda_threshold",
]
