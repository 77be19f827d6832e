"""Python bindings for the latentplan C++ core."""

from latentplan._core import (
    ChainMdp,
    ContinuousBandit,
    DiscreteBandit,
    VisualMatch,
    categorical_to_scalar,
    contract,
    evaluate_checkpoint,
    expand,
    oracle_search,
    resolve_config,
    run_experiment,
    scalar_to_categorical,
    simnorm,
)

__all__ = [
    "ChainMdp",
    "ContinuousBandit",
    "DiscreteBandit",
    "VisualMatch",
    "categorical_to_scalar",
    "contract",
    "evaluate_checkpoint",
    "expand",
    "oracle_search",
    "resolve_config",
    "run_experiment",
    "scalar_to_categorical",
    "simnorm",
]
