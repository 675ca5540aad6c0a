"""Comparison dimension reducers: raw grid values, B-spline coefficients, FPCA scores."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.interpolate import BSpline

from ._linalg import spd_factor
from .embedding import SampledFunction, trapezoid_weights
from .errors import InputError
from .projection import FeatureVector

__all__ = [
    "BSplineBasis",
    "FpcaModel",
    "common_grid",
    "raw_features",
    "bspline_features",
    "bspline_operator",
    "fpca_fit",
    "fpca_features",
    "fpca_reconstruct",
]


def common_grid(samples) -> tuple[np.ndarray, np.ndarray]:
    """Shared 1-d grid and the ``(m, n)`` value matrix; rejects heterogeneous grids."""
    samples = list(samples)
    if not samples:
        raise InputError("no samples")
    grid = samples[0].nodes
    for s in samples[1:]:
        if s.nodes.shape != grid.shape or not np.array_equal(s.nodes, grid):
            raise InputError("samples are observed on different grids; this baseline needs a common grid")
    if grid.shape[1] != 1:
        raise InputError("grid baselines are implemented for 1-d inputs")
    return grid[:, 0], np.stack([s.values for s in samples])


def raw_features(obs: SampledFunction) -> FeatureVector:
    """The observed values themselves."""
    return FeatureVector(obs.values.copy(), "raw", {"n": len(obs)})


@dataclass(frozen=True)
class BSplineBasis:
    """Open uniform B-spline basis on [0, 1]."""

    n_basis: int
    degree: int = 3

    def __post_init__(self):
        if self.degree < 0 or self.n_basis < self.degree + 1:
            raise InputError(f"{self.n_basis} basis functions is too few for degree {self.degree}")

    @property
    def knots(self) -> np.ndarray:
        k = self.degree
        interior = np.linspace(0.0, 1.0, self.n_basis - k + 1)[1:-1]
        return np.concatenate([np.zeros(k + 1), interior, np.ones(k + 1)])

    def design(self, t) -> np.ndarray:
        """Matrix ``B_b(t_i)``."""
        t = np.asarray(t, dtype=float).reshape(-1)
        if np.any(t < 0) or np.any(t > 1):
            raise InputError("B-spline basis is defined on [0, 1]")
        return BSpline.design_matrix(t, self.knots, self.degree).toarray()


def bspline_operator(grid, basis: BSplineBasis) -> tuple[np.ndarray, float]:
    """Matrix ``P`` with coefficients ``= values @ P`` for a fixed grid, and the ridge used."""
    b = basis.design(grid)
    if len(b) < basis.n_basis:
        raise InputError(f"{len(b)} nodes cannot determine {basis.n_basis} spline coefficients")
    factor, ridge = spd_factor(b.T @ b)
    return linalg.cho_solve(factor, b.T).T, ridge


def bspline_features(obs: SampledFunction, basis: BSplineBasis) -> FeatureVector:
    """Least-squares spline coefficients of the observations."""
    op, ridge = bspline_operator(obs.nodes[:, 0], basis)
    return FeatureVector(obs.values @ op, f"bspline{basis.n_basis}", {"ridge": ridge, "ridge_fallback": ridge > 0})


@dataclass
class FpcaModel:
    grid: np.ndarray
    weights: np.ndarray
    mean: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray
    total_variance: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_components(self) -> int:
        return self.components.shape[1]

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.tolist(),
            "weights": self.weights.tolist(),
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "total_variance": self.total_variance,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FpcaModel":
        return cls(
            np.array(doc["grid"], float),
            np.array(doc["weights"], float),
            np.array(doc["mean"], float),
            np.array(doc["components"], float).reshape(len(doc["grid"]), -1),
            np.array(doc["eigenvalues"], float),
            float(doc["total_variance"]),
        )


def fpca_fit(values, grid, k: int) -> FpcaModel:
    """Principal components of curves sampled on a common grid.

    The empirical covariance (divisor ``m``) is made symmetric under the
    trapezoidal inner product, ``W^1/2 C W^1/2``, and diagonalised;
    components are returned as grid values orthonormal under ``W``.
    """
    x = np.asarray(values, dtype=float)
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if x.ndim != 2 or x.shape[1] != len(grid):
        raise InputError("values must be an (m, n_grid) matrix")
    m, n = x.shape
    if m < 2:
        raise InputError("FPCA needs at least two curves")
    if not 1 <= k <= n:
        raise InputError(f"k={k} components requested from a grid of {n} points")
    w = trapezoid_weights(grid)
    sw = np.sqrt(w)
    mean = x.mean(axis=0)
    xc = (x - mean) * sw
    a = xc.T @ xc / m
    ev, vec = np.linalg.eigh(0.5 * (a + a.T))
    order = np.argsort(ev)[::-1]
    ev, vec = np.clip(ev[order], 0.0, None), vec[:, order]
    comps = np.ascontiguousarray(vec[:, :k] / sw[:, None])
    pivot = np.argmax(np.abs(comps), axis=0)
    comps = comps * np.sign(comps[pivot, np.arange(k)])[None, :]
    return FpcaModel(grid, w, mean, comps, ev[:k], float(np.sum(w * ((x - mean) ** 2).mean(axis=0))))


def _check_grid(model: FpcaModel, obs: SampledFunction):
    if len(obs) != len(model.grid) or not np.array_equal(obs.nodes[:, 0], model.grid):
        raise InputError("observation grid differs from the FPCA model grid")


def fpca_features(model: FpcaModel, obs: SampledFunction) -> FeatureVector:
    """Scores ``<f - mean, component_k>_W``."""
    _check_grid(model, obs)
    scores = ((obs.values - model.mean) * model.weights) @ model.components
    return FeatureVector(scores, f"fpca{model.n_components}", {})


def fpca_reconstruct(model: FpcaModel, scores) -> np.ndarray:
    scores = np.asarray(scores, dtype=float)
    return model.mean + model.components[:, : len(scores)] @ scores
