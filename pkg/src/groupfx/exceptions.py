"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration/parse problems exit with 1,
degenerate designs with 2, anything else with 3.
"""

from __future__ import annotations


class GroupfxError(Exception):
    """Base class for all library errors."""


class InvalidInputError(GroupfxError):
    """Non-finite values, mismatched shapes, or otherwise malformed inputs."""


class EmptyGroupError(InvalidInputError):
    """A group with zero units where at least one is required."""


class InvalidProbabilityError(InvalidInputError):
    """A probability outside its admissible range."""


class InvalidDesignError(GroupfxError):
    """A second-stage design that fails its structural requirements."""


class DesignDeficientError(GroupfxError):
    """A design that is valid in structure but not identified on this data."""


class NoDataError(DesignDeficientError):
    """No usable groups remain after selection."""


class DegenerateScenarioError(GroupfxError):
    """A discrete scenario whose population system cannot be solved."""


class UnsupportedScenarioError(GroupfxError):
    """A scenario shape an operation does not handle."""


class ConfigError(GroupfxError):
    """Invalid run configuration."""


class ParseError(GroupfxError):
    """Malformed input file; message carries file/row/column context."""
