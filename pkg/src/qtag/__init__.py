"""Simulation of location tagging with one-of-four key release and light-cone adversaries."""

from .config import ScenarioConfig, load_config, parse_config
from .engine.runner import replay, run
from .errors import (
    CapabilityViolation,
    CausalityViolation,
    ConfigurationError,
    KeyDepletionError,
    QtagError,
    ReleaseRefused,
)
from .spacetime import Geometry, SpacetimeEvent

__all__ = [
    "CapabilityViolation",
    "CausalityViolation",
    "ConfigurationError",
    "Geometry",
    "KeyDepletionError",
    "QtagError",
    "ReleaseRefused",
    "ScenarioConfig",
    "SpacetimeEvent",
    "load_config",
    "parse_config",
    "replay",
    "run",
]
