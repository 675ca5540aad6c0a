"""Kernel-embedded functional neural networks for scalar-on-function regression."""

__version__ = "0.1.0"

from .errors import InputError, NumericalError  # noqa: E402

__all__ = ["InputError", "NumericalError", "__version__"]
