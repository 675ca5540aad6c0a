"""Projection of an embedded function onto leading eigenfunctions.

Both routes of the projection step are here: numerical integration of
``<L_K f, phi_l>_mu`` on a weighted grid, and least squares on test points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from ._linalg import spd_factor
from .embedding import EmbeddingEstimate, embed_eval, trapezoid_weights
from .errors import InputError
from .kernels import (
    EigenSystem,
    GaussianKernel,
    GaussianMixtureKernel,
    Kernel,
    MaternProductKernel,
    as_points,
)

__all__ = [
    "FeatureVector",
    "default_grid",
    "project_numint",
    "project_lsq",
    "lsq_residual",
    "ProjectionOperator",
]


@dataclass
class FeatureVector:
    coefficients: np.ndarray
    basis_id: str
    diagnostics: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.coefficients)


def _reach(kernel: Kernel) -> float:
    """Distance beyond which the kernel is negligible, in units used for padding."""
    if isinstance(kernel, GaussianKernel):
        return kernel.gamma
    if isinstance(kernel, GaussianMixtureKernel):
        return max(g for _, g in kernel.terms)
    if isinstance(kernel, MaternProductKernel):
        return 3.0 / kernel.ell
    return 1.0


def default_grid(
    kernel: Kernel,
    sys: EigenSystem,
    n_points: int = 4096,
    domain: tuple[float, float] = (0.0, 1.0),
    pad: float = 6.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Integration grid and weights (measure density included) for ``project_numint``.

    The grid spans the region where both the embedded function (the input
    domain widened by ``pad`` kernel bandwidths) and the measure carry
    mass; weights are trapezoidal times the measure density.
    """
    d = kernel.domain_dim
    reach = pad * _reach(kernel)
    mlo, mhi = sys.measure.support()
    lo, hi = max(domain[0] - reach, mlo), min(domain[1] + reach, mhi)
    per_axis = n_points if d == 1 else max(8, int(round(n_points ** (1.0 / d))))
    axis = np.linspace(lo, hi, per_axis)
    w1 = trapezoid_weights(axis)
    if d == 1:
        pts = axis[:, None]
        w = w1
    else:
        mesh = np.meshgrid(*([axis] * d), indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        wm = np.meshgrid(*([w1] * d), indexing="ij")
        w = np.prod(np.stack([m.ravel() for m in wm], axis=1), axis=1)
    return pts, w * sys.measure.density(pts)


def _check_d1(sys: EigenSystem, d1: int):
    if d1 < 1 or d1 > len(sys):
        raise InputError(f"d1={d1} but the eigensystem has {len(sys)} eigenpairs")


def project_numint(est: EmbeddingEstimate, sys: EigenSystem, d1: int, grid, grid_weights) -> FeatureVector:
    """Entries ``sum_k w_k (L_K f)(s_k) phi_l(s_k)``; ``w_k`` must include the measure density."""
    _check_d1(sys, d1)
    grid = as_points(grid, sys.kernel.domain_dim)
    w = np.asarray(grid_weights, dtype=float).reshape(-1)
    if len(w) != len(grid):
        raise InputError("one weight per grid node required")
    values = embed_eval(est, grid)
    coeffs = (w * values) @ sys.evaluate(grid, d1)
    return FeatureVector(coeffs, sys.truncated(d1).basis_id, {"path": "numint"})


def project_lsq(est: EmbeddingEstimate, sys: EigenSystem, d1: int, test_points) -> FeatureVector:
    """Coefficients minimising ``sum_k (L_K f(u_k) - sum_l a_l phi_l(u_k))^2``."""
    _check_d1(sys, d1)
    u = as_points(test_points, sys.kernel.domain_dim)
    if len(u) < d1:
        raise InputError(f"{len(u)} test points cannot determine {d1} coefficients")
    phi = sys.evaluate(u, d1)
    factor, ridge = spd_factor(phi.T @ phi)
    coeffs = linalg.cho_solve(factor, phi.T @ embed_eval(est, u))
    diag = {"path": "lsq", "ridge": ridge, "ridge_fallback": ridge > 0}
    return FeatureVector(coeffs, sys.truncated(d1).basis_id, diag)


def lsq_residual(est: EmbeddingEstimate, sys: EigenSystem, coefficients, test_points) -> float:
    """Sum of squared residuals of a coefficient vector on the test points."""
    coefficients = np.asarray(coefficients, dtype=float)
    u = as_points(test_points, sys.kernel.domain_dim)
    r = embed_eval(est, u) - sys.evaluate(u, len(coefficients)) @ coefficients
    return float(r @ r)


class ProjectionOperator:
    """Linear map from embedding weights to features.

    Features of an estimate with nodes ``t_j`` and weights ``theta_j`` are
    ``theta @ rows(t)`` where ``rows(t)[j] = K(points, t_j) @ basis``; for the
    numerical-integration route ``basis = W Phi`` on the grid, for least
    squares ``basis = Phi (Phi' Phi)^-1`` on the test points.  Each row is
    computed on its own so results never depend on which other nodes are
    processed together.
    """

    def __init__(self, kernel: Kernel, sys: EigenSystem, d1: int, path: str = "numint", points=None, weights=None):
        _check_d1(sys, d1)
        self.kernel = kernel
        self.d1 = d1
        self.path = path
        self.diagnostics: dict = {"path": path}
        if path == "numint":
            if points is None:
                points, weights = default_grid(kernel, sys)
            points = as_points(points, kernel.domain_dim)
            phi = sys.evaluate(points, d1)
            self.basis = np.ascontiguousarray(np.asarray(weights, dtype=float)[:, None] * phi)
        elif path == "lsq":
            if points is None:
                points, _ = default_grid(kernel, sys)
            points = as_points(points, kernel.domain_dim)
            if len(points) < d1:
                raise InputError(f"{len(points)} test points cannot determine {d1} coefficients")
            phi = sys.evaluate(points, d1)
            factor, ridge = spd_factor(phi.T @ phi)
            self.basis = np.ascontiguousarray(linalg.cho_solve(factor, phi.T).T)
            self.diagnostics.update(ridge=ridge, ridge_fallback=ridge > 0)
        else:
            raise InputError(f"unknown projection path {path!r}")
        self.points = points
        self.basis_id = sys.truncated(d1).basis_id

    def rows(self, nodes) -> np.ndarray:
        nodes = as_points(nodes, self.kernel.domain_dim)
        out = np.empty((len(nodes), self.d1))
        for j in range(len(nodes)):
            out[j] = self.kernel.gram(nodes[j : j + 1], self.points)[0] @ self.basis
        return out

    def project(self, est: EmbeddingEstimate) -> FeatureVector:
        return FeatureVector(est.weights @ self.rows(est.nodes), self.basis_id, dict(self.diagnostics))
