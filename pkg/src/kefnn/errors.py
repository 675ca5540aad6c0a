"""Exception types shared across the package."""


class InputError(ValueError):
    """Rejected input: wrong shapes, invalid parameters, inconsistent data."""


class NumericalError(RuntimeError):
    """A numerical routine failed (non-finite loss, breakdown of a solver).

    ``record`` carries a JSON-serialisable diagnostic dictionary.
    """

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = dict(record or {})
