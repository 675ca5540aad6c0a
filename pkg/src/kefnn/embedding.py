"""Kernel embedding ``L_K f = int K(., t) f(t) dt`` from discrete observations.

Two quadrature rules are provided: Monte-Carlo weights ``f(t_j) / n`` and the
optimal kernel quadrature, whose nodes are drawn from a leverage-score
density and whose weights solve a ball-constrained quadratic program.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


from .errors import InputError
from .kernels import EigenSystem, Kernel, UniformMeasure, as_points

__all__ = [
    "SampledFunction",
    "EmbeddingEstimate",
    "QuadratureDensity",
    "monte_carlo_embed",
    "quadrature_density",
    "sample_optimal_nodes",
    "optimal_embed",
    "reference_embedding",
    "reference_linear_term",
    "monte_carlo_linear_term",
    "rkhs_error",
    "rkhs_norm",
    "embed_eval",
    "trapezoid_weights",
]

_CHUNK = 2048


@dataclass
class SampledFunction:
    """A function known at ``nodes`` only.

    ``nodes`` is ``(n, d)`` (a 1-d array is read as ``n`` scalar nodes);
    ``node_weights`` are optional quadrature weights for the observation grid.
    """

    nodes: np.ndarray
    values: np.ndarray
    node_weights: np.ndarray | None = None
    domain: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if nodes.ndim != 2 or len(nodes) != len(values):
            raise InputError(f"{len(values)} values for {len(nodes)} nodes")
        if not np.all(np.isfinite(values)):
            raise InputError("observed values must be finite")
        lo, hi = self.domain
        if np.any(nodes < lo) or np.any(nodes > hi):
            raise InputError(f"nodes outside the domain [{lo}, {hi}]")
        self.nodes = nodes
        self.values = values
        if self.node_weights is not None:
            w = np.asarray(self.node_weights, dtype=float).reshape(-1)
            if len(w) != len(values) or np.any(w < 0):
                raise InputError("node_weights must be non-negative, one per node")
            self.node_weights = w

    def __len__(self):
        return len(self.values)

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]


@dataclass
class EmbeddingEstimate:
    """``x -> sum_j weights[j] K(x, nodes[j])``."""

    kernel: Kernel
    nodes: np.ndarray
    weights: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.nodes = as_points(self.nodes, self.kernel.domain_dim)
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(self.nodes) != len(self.weights):
            raise InputError("one weight per node required")

    def __call__(self, xs) -> np.ndarray:
        return embed_eval(self, xs)

    def scaled(self, a: float) -> "EmbeddingEstimate":
        return EmbeddingEstimate(self.kernel, self.nodes, a * self.weights)


def trapezoid_weights(t) -> np.ndarray:
    """Trapezoidal weights of a sorted 1-d grid (any order accepted)."""
    t = np.asarray(t, dtype=float).reshape(-1)
    order = np.argsort(t, kind="stable")
    ts = t[order]
    w = np.zeros_like(ts)
    if len(ts) > 1:
        h = np.diff(ts)
        w[:-1] += 0.5 * h
        w[1:] += 0.5 * h
    else:
        w[:] = 1.0
    out = np.empty_like(w)
    out[order] = w
    return out


def embed_eval(est: EmbeddingEstimate, xs) -> np.ndarray:
    xs = as_points(xs, est.kernel.domain_dim)
    out = np.empty(len(xs))
    for i in range(0, len(xs), _CHUNK):
        out[i : i + _CHUNK] = est.kernel.gram(xs[i : i + _CHUNK], est.nodes) @ est.weights
    return out


def monte_carlo_embed(obs: SampledFunction, kernel: Kernel) -> EmbeddingEstimate:
    """Weights ``f(t_j) / n``, or ``w_j f(t_j)`` when the observation carries weights."""
    if len(obs) == 0:
        raise InputError("no observations")
    if obs.node_weights is not None:
        theta = obs.node_weights * obs.values
        rule = "weighted"
    else:
        theta = obs.values / len(obs)
        rule = "monte_carlo"
    return EmbeddingEstimate(kernel, obs.nodes, theta, {"rule": rule})


# --------------------------------------------------------------------------
# optimal quadrature
# --------------------------------------------------------------------------


@dataclass
class QuadratureDensity:
    """Leverage-score density ``tau(x) * base(x)`` tabulated on a grid.

    ``tau(x) = sum_k lambda_k / (lambda_k + epsilon) phi_k(x)^2``, taken
    relative to the eigensystem's measure; ``values`` integrate to one on
    the grid (trapezoidal rule per axis).
    """

    eigen: EigenSystem
    epsilon: float
    axes: list
    values: np.ndarray
    normalizer: float

    @property
    def dim(self) -> int:
        return len(self.axes)

    def __call__(self, x) -> np.ndarray:
        """Normalised density at arbitrary points (through the eigensystem, not the table)."""
        return _unnormalised_density(self.eigen, self.epsilon, as_points(x, self.dim)) / self.normalizer


def _unnormalised_density(eigen: EigenSystem, epsilon: float, pts: np.ndarray) -> np.ndarray:
    lam = eigen.eigenvalues
    phi = eigen.evaluate(pts)
    lev = (phi**2) @ (lam / (lam + epsilon))
    return lev * eigen.measure.density(pts)


def quadrature_density(
    eigen: EigenSystem,
    epsilon: float | None = None,
    n: int | None = None,
    grid_size: int = 4096,
) -> QuadratureDensity:
    """Tabulate the optimal sampling density.

    ``epsilon`` defaults to ``lambda_n`` (clipped to the last available
    eigenvalue) when the node count ``n`` is given.  The table covers the
    measure's support: ``[0, 1]`` for the uniform measure, ``+-6/beta`` for
    the Gaussian one.
    """
    if epsilon is None:
        if n is None:
            raise InputError("give epsilon or the node count n")
        epsilon = float(eigen.eigenvalues[min(n, len(eigen)) - 1])
    if not epsilon > 0:
        raise InputError("epsilon must be positive")
    d = eigen.kernel.domain_dim
    lo, hi = eigen.measure.support()
    per_axis = grid_size if d == 1 else max(16, int(round(grid_size ** (1.0 / d))))
    axis = np.linspace(lo, hi, per_axis)
    axes = [axis] * d
    if d == 1:
        pts = axis[:, None]
    else:
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
    raw = _unnormalised_density(eigen, epsilon, pts).reshape([per_axis] * d)
    w = trapezoid_weights(axis)
    total = raw
    for _ in range(d):
        total = np.tensordot(total, w, axes=([0], [0]))
    total = float(total)
    if not total > 0:
        raise InputError("density vanishes on the tabulation grid")
    return QuadratureDensity(eigen, float(epsilon), axes, raw / total, total)


def sample_optimal_nodes(density: QuadratureDensity, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` i.i.d. nodes from the tabulated density.

    1-d draws use the inverse of the piecewise-linear CDF.  In higher
    dimensions a grid cell is drawn with probability proportional to its
    table value and the point is placed uniformly inside the cell.
    """
    if n < 1:
        raise InputError("n must be >= 1")
    rng = np.random.default_rng(seed)
    if density.dim == 1:
        x = density.axes[0]
        p = density.values
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (p[1:] + p[:-1]) * np.diff(x))])
        cdf /= cdf[-1]
        u = rng.uniform(0.0, 1.0, size=n)
        return np.interp(u, cdf, x)[:, None]
    probs = density.values.ravel()
    probs = probs / probs.sum()
    cells = rng.choice(probs.size, size=n, p=probs)
    idx = np.stack(np.unravel_index(cells, density.values.shape), axis=1)
    out = np.empty((n, density.dim))
    for j, axis in enumerate(density.axes):
        h = axis[1] - axis[0]
        centre = axis[idx[:, j]]
        out[:, j] = np.clip(centre + rng.uniform(-0.5 * h, 0.5 * h, size=n), axis[0], axis[-1])
    return out


def _gl_grid(d: int, n_per_axis: int) -> tuple[np.ndarray, np.ndarray]:
    return UniformMeasure(d).quadrature(n_per_axis)


def reference_linear_term(kernel: Kernel, nodes, f: Callable, n_ref: int = 2000) -> np.ndarray:
    """``b_j = int_{[0,1]^d} K(t, t_j) f(t) dt`` by Gauss-Legendre quadrature of the true ``f``."""
    nodes = as_points(nodes, kernel.domain_dim)
    per_axis = n_ref if kernel.domain_dim == 1 else max(8, int(round(n_ref ** (1.0 / kernel.domain_dim))))
    s, w = _gl_grid(kernel.domain_dim, per_axis)
    fw = w * np.asarray(f(s), dtype=float).reshape(-1)
    out = np.empty(len(nodes))
    for i in range(0, len(nodes), _CHUNK):
        out[i : i + _CHUNK] = kernel.gram(nodes[i : i + _CHUNK], s) @ fw
    return out


def reference_embedding(kernel: Kernel, f: Callable, n_ref: int = 2000, d: int = 1) -> EmbeddingEstimate:
    """High-accuracy embedding of a known ``f`` (Gauss-Legendre nodes on the unit cube)."""
    per_axis = n_ref if d == 1 else max(8, int(round(n_ref ** (1.0 / d))))
    s, w = _gl_grid(d, per_axis)
    return EmbeddingEstimate(kernel, s, w * np.asarray(f(s), dtype=float).reshape(-1), {"rule": "reference"})


def monte_carlo_linear_term(obs: SampledFunction, kernel: Kernel) -> np.ndarray:
    """Surrogate ``b_j = (1/n) sum_k K(t_k, t_j) f(t_k)`` usable without the true ``f``."""
    return kernel.gram(obs.nodes, obs.nodes) @ (obs.values / len(obs))


def optimal_embed(
    obs: SampledFunction,
    kernel: Kernel,
    linear_term,
    cond_max: float = 1e12,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> EmbeddingEstimate:
    """Weights minimising ``theta' G theta - 2 b' theta`` over ``||theta||^2 <= 4/n``.

    The minimiser is ``(G + eta I)^-1 b``; ``eta = 0`` unless the constraint
    binds (then ``eta`` is found by bisection, the returned point always on
    the feasible side) or ``G`` is too ill-conditioned, in which case ``eta``
    starts at the smallest value giving condition number ``cond_max``.
    """
    n = len(obs)
    if n == 0:
        raise InputError("no observations")
    b = np.asarray(linear_term, dtype=float).reshape(-1)
    if len(b) != n:
        raise InputError(f"linear term has {len(b)} entries for {n} nodes")
    g = kernel.gram(obs.nodes, obs.nodes)
    evals, q = np.linalg.eigh(0.5 * (g + g.T))
    c = q.T @ b
    lmax, lmin = float(evals[-1]), float(evals[0])
    if lmin > 0 and lmax / lmin <= cond_max:
        eta_min = 0.0
    else:
        eta_min = (lmax - cond_max * lmin) / (cond_max - 1.0)
    radius2 = 4.0 / n

    def norm2(eta):
        return float(np.sum((c / (evals + eta)) ** 2))

    eta = eta_min
    iterations = 0
    active = norm2(eta_min) > radius2
    if active:
        lo = eta_min
        hi = eta_min + math.sqrt(float(c @ c) / radius2)
        while iterations < max_iter:
            iterations += 1
            mid = 0.5 * (lo + hi)
            if norm2(mid) > radius2:
                lo = mid
            else:
                hi = mid
            if radius2 - norm2(hi) <= tol or hi - lo <= 1e-16 * max(hi, 1e-300):
                break
        eta = hi
    theta = q @ (c / (evals + eta))
    diag = {
        "rule": "optimal",
        "eta": eta,
        "eta_min": eta_min,
        "regularised": eta_min > 0,
        "constraint_active": bool(active),
        "iterations": iterations,
        "condition": (lmax + eta) / (lmin + eta) if lmin + eta > 0 else math.inf,
    }
    return EmbeddingEstimate(kernel, obs.nodes, theta, diag)


# --------------------------------------------------------------------------
# RKHS distances
# --------------------------------------------------------------------------


def _quad_form(kernel: Kernel, x, a, t, b) -> float:
    total = 0.0
    for i in range(0, len(x), _CHUNK):
        total += float(a[i : i + _CHUNK] @ (kernel.gram(x[i : i + _CHUNK], t) @ b))
    return total


def rkhs_norm(est: EmbeddingEstimate) -> float:
    v = _quad_form(est.kernel, est.nodes, est.weights, est.nodes, est.weights)
    return math.sqrt(max(v, 0.0))


def rkhs_error(est: EmbeddingEstimate, reference: EmbeddingEstimate) -> float:
    """RKHS norm of ``est - reference`` from the closed-form Gram expansion."""
    if est.kernel != reference.kernel:
        raise InputError("estimates use different kernels")
    k = est.kernel
    aa = _quad_form(k, est.nodes, est.weights, est.nodes, est.weights)
    ab = _quad_form(k, est.nodes, est.weights, reference.nodes, reference.weights)
    bb = _quad_form(k, reference.nodes, reference.weights, reference.nodes, reference.weights)
    return math.sqrt(max(aa - 2.0 * ab + bb, 0.0))
