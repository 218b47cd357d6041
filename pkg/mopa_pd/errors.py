#!/usr/bin/env python3
"""
Exception types shared across the workbench.
"""


class ContractViolation(ValueError):
    """A caller broke an operation's precondition (shape, dimension, bound)."""


class ConfigurationError(ValueError):
    """A configuration is invalid or cannot be realized."""


class TrainingDiverged(RuntimeError):
    """A parameter or activation became NaN/Inf during an update."""


class ExpertBufferEmpty(RuntimeError):
    """The BC policy produced no successful trajectory within the retry budget."""


class MissingArtifact(FileNotFoundError):
    """An input artifact named on the command line does not exist."""
