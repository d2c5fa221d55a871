"""Latent guided diffusion toy core (C++ extension)."""

from ._lgd import *  # noqa: F401,F403
from ._lgd import (  # noqa: F401
    ConfigError,
    DomainError,
    Error,
    InputError,
    LoadError,
    NumericError,
    RangeError,
    ShapeError,
    UsageError,
)
