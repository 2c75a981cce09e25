"""Exception types shared across the package.

Grouped by how the CLI maps them to exit codes: configuration problems
(exit 2), data/ingestion problems (exit 3), numeric failures (exit 4).
"""


class WmcError(Exception):
    """Base class for all package errors."""


class DimensionError(WmcError, ValueError):
    """Tensor shapes incompatible with the requested operation."""


class NumericError(WmcError, ArithmeticError):
    """A computation produced NaN/Inf or an unsolvable system."""


class DomainError(WmcError, ValueError):
    """Input outside an operation's domain (empty sequence, empty key set)."""


class ConfigError(WmcError, ValueError):
    """Invalid configuration: unknown keys, bad values, mismatched class sets."""


class DataError(WmcError, ValueError):
    """Dataset-level problem: unreadable files, bad rows, unknown labels."""


class ManifestError(DataError):
    """Aggregate manifest validation failure; carries every bad row."""

    def __init__(self, problems):
        # problems: list of (row_number, reason)
        self.problems = list(problems)
        lines = "; ".join(f"row {n}: {reason}" for n, reason in self.problems)
        super().__init__(f"{len(self.problems)} invalid manifest row(s): {lines}")


class FormatError(DataError):
    """Binary file format violation (bad magic, truncation); names the offset."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
