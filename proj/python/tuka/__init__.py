# SPDX-License-Identifier: Apache-2.0
"""Tucker adapters for lifelong navigation, with the DKIL training recipe.

The heavy lifting lives in the compiled ``_tuka`` module. Arrays are float64
NumPy arrays; experiment settings use the configuration-file keys, e.g.
``run_stream({"tasks": 4, "adapter": "lora"})``.
"""

from ._tuka import (
    ConfigError,
    DimensionError,
    IndexError,
    ParseError,
    config_hash,
    config_text,
    contract_adapter,
    cosine_sim,
    episode_scores,
    forgetting_rate,
    gradcheck,
    loss_consistency,
    loss_ewc,
    loss_orthogonal,
    low_light,
    orthogonality_penalty,
    overexpose,
    param_count,
    param_count_task_lora,
    run_stream,
    scatter,
    train,
    tucker_reconstruct,
)

__version__ = "1.0.0"

__all__ = [name for name in dir() if not name.startswith("_")]
