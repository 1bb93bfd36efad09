"""Pixel decoder: shared-weight flow-matching transformer and Euler sampling."""

from .dit import DiT, dit_forward, grow_resolution
from .flow import FlowSample, GaussianMixture, VelocityMLP, cfm_loss, euler_integrate, euler_sample
from .patches import patchify, unpatchify

__all__ = [
    "DiT",
    "FlowSample",
    "GaussianMixture",
    "VelocityMLP",
    "cfm_loss",
    "dit_forward",
    "euler_integrate",
    "euler_sample",
    "grow_resolution",
    "patchify",
    "unpatchify",
]
