"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericalError -> 3.
"""


class ConfigError(ValueError):
    """Bad configuration or usage: unknown keys, invalid values, mismatched resume."""


class DataError(ValueError):
    """Malformed or unusable input data (corpus, word vectors, TSV files)."""


class NumericalError(ArithmeticError):
    """Numerical failure: non-finite values, zero norms, degenerate representations."""


class CollapseError(NumericalError):
    """A representation became (numerically) parallel to the removed component.

    Carries enough context to locate the failure: the row that collapsed and,
    when raised from the training loop, the step at which it happened.
    """

    def __init__(self, message, row=None, step=None):
        super().__init__(message)
        self.row = row
        self.step = step
