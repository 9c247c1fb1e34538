"""Python access to the promptdoor backdoor-attack lab."""

from ._promptdoor import (
    PromptdoorError,
    RunConfig,
    __version__,
    config_keys,
    gumbel_relax,
    parse_config,
    run_pipeline,
    softmax,
    sweep_csv,
)

__all__ = [
    "PromptdoorError",
    "RunConfig",
    "__version__",
    "config_keys",
    "gumbel_relax",
    "parse_config",
    "run_pipeline",
    "softmax",
    "sweep_csv",
]
