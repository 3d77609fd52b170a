"""Simulated environments with injected novelties."""

from .base import (
    EnvSpec,
    SamplerError,
    TaskSampler,
    interactable_objects,
    sample_task,
    step,
)
from . import coffee, doorknobs, light_switch_door

_REGISTRY = {
    light_switch_door.ENV.name: light_switch_door.ENV,
    doorknobs.ENV.name: doorknobs.ENV,
    coffee.ENV.name: coffee.ENV,
}

ENV_NAMES = tuple(sorted(_REGISTRY))


def get_env(name: str) -> EnvSpec:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown environment {name!r}; known: {ENV_NAMES}") from None


__all__ = [
    "ENV_NAMES",
    "EnvSpec",
    "SamplerError",
    "TaskSampler",
    "get_env",
    "interactable_objects",
    "sample_task",
    "step",
]
