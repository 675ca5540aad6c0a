"""Small dense linear-algebra helpers."""

import numpy as np
from scipy import linalg

RIDGE_SCALE = 1e-10
COND_MAX = 1e12


def spd_factor(a: np.ndarray):
    """Cholesky factor of a symmetric PSD matrix, ridged when ill-conditioned.

    Returns ``(factor, ridge)``; ``ridge`` is 0 unless the condition number
    exceeds ``COND_MAX``, in which case ``RIDGE_SCALE * trace(a)`` is added
    to the diagonal.
    """
    ev = np.linalg.eigvalsh(a)
    ridge = 0.0
    if ev[0] <= 0 or ev[-1] / ev[0] > COND_MAX:
        ridge = RIDGE_SCALE * float(np.trace(a))
        a = a + ridge * np.eye(len(a))
    return linalg.cho_factor(a, lower=True), ridge
