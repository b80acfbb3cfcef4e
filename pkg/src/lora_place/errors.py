"""Exception types shared across the package.

The CLI maps these onto stable exit codes: validation problems (bad config,
bad scene) exit 2, file/format problems exit 3, and computation problems
(grid mismatches, oversized enumerations, degenerate geometry) exit 4.
"""


class ValidationError(ValueError):
    """A scene, config, or argument violates a documented invariant."""


class FormatError(RuntimeError):
    """A data file is malformed: bad magic, wrong dimensions, short read."""
