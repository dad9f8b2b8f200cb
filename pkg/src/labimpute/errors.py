"""Exception taxonomy shared across the package.

DataError covers everything caused by the input data or configuration
(parse failures, schema violations, shape mismatches, degenerate inputs).
InvariantError marks violated internal guarantees, e.g. a verified
algebraic identity failing beyond tolerance.  The CLI maps DataError to
exit code 2 and InvariantError to exit code 3.
"""


class DataError(Exception):
    """Invalid or degenerate input data, configuration, or file contents."""


class SchemaError(DataError):
    """Column schema violated: unknown category, name/width mismatch."""


class InvariantError(Exception):
    """An internal guarantee did not hold; indicates a bug, not bad input."""
