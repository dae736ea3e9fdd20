"""Desk-scale laboratory for slate recommendation with reinforcement learning.

Pipeline: a seeded user simulator produces logged slates and clicks; a
variational auto-encoder learns a latent action space over slates; a soft
actor-critic agent plans in that latent space on top of a GRU belief encoder,
and is compared against classical rankers under a fixed evaluation protocol.
"""

from .autodiff import NonFiniteError, Tensor, backward
from .optim import AdamConfig, ParameterStore, adam_step, polyak_update

__all__ = [
    "NonFiniteError",
    "Tensor",
    "backward",
    "AdamConfig",
    "ParameterStore",
    "adam_step",
    "polyak_update",
]
