"""Exception hierarchy shared by all qem_mix modules.

The CLI maps these onto exit codes: data/parse problems exit 2,
numerical/degenerate-model problems exit 3, bad parameter combinations
exit 1.
"""


class QemError(Exception):
    """Base class for all qem_mix errors."""


class DimensionError(QemError):
    """Bit-string lengths disagree (between strings, or with a dataset's n)."""


class ParseError(QemError):
    """Malformed input file content."""


class EmptyDatasetError(QemError):
    """A dataset with zero shots was requested or read."""


class InfeasibleError(QemError):
    """Parameter combination cannot be satisfied (e.g. K > 2**n)."""


class AllFilteredError(QemError):
    """The depolarization filter removed every shot."""


class DegenerateModelError(QemError):
    """Every mixture component was annihilated; no model survives."""


class InvalidModelError(QemError):
    """A mixture model violates its own invariants (e.g. all-zero weights)."""


class NormalizationError(QemError):
    """A probability distribution is not normalized or has negative mass."""
