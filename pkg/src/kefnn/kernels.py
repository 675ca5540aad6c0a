"""Kernels, reference measures and Mercer eigensystems.

Conventions
-----------
Gaussian kernel with bandwidth ``gamma``::

    k_gamma(x, t) = exp(-||x - t||^2 / gamma^2)

Gaussian measure with bandwidth ``beta`` (a probability measure centred at 0)::

    rho(x) = (beta / sqrt(pi))^d * exp(-beta^2 ||x||^2)

so ``beta`` acts as an inverse length: small ``beta`` gives a wide, nearly
flat measure.  Under this pair of conventions the 1-d eigenvalues of the
integral operator are::

    lambda_n = beta / (gamma^(2n) * (beta^2/2 * (1 + sqrt(1 + (2/(beta*gamma))^2)) + 1/gamma^2)^(n + 1/2))

for ``n = 0, 1, 2, ...`` which simplifies to ``2/(1+q) * ((q-1)/(q+1))^n``
with ``q = sqrt(1 + (2/(beta*gamma))^2)``.  The eigen-identity tests in the
suite are the arbiter that this pairing is consistent.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

from .errors import InputError

EIGENVALUE_FLOOR = 1e-300

__all__ = [
    "EIGENVALUE_FLOOR",
    "Kernel",
    "GaussianKernel",
    "MaternProductKernel",
    "GaussianMixtureKernel",
    "multi_gaussian_kernel",
    "Measure",
    "GaussianMeasure",
    "UniformMeasure",
    "EigenSystem",
    "GaussianEigenSystem",
    "NystromEigenSystem",
    "eval_kernel",
    "gaussian_eigenvalues_1d",
    "gaussian_eigensystem",
    "nystrom_eigensystem",
    "mercer_truncation_error",
    "kernel_from_dict",
    "measure_from_dict",
    "eigensystem_from_dict",
]


def as_points(x, dim: int) -> np.ndarray:
    """Coerce ``x`` to an ``(n, dim)`` float array.

    A 1-d array is read as ``n`` scalar points when ``dim == 1`` and as a
    single point otherwise.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x[:, None] if dim == 1 else x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise InputError(f"expected points of dimension {dim}, got array of shape {x.shape}")
    return x


def _sq_dist(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    # direct differences keep the value symmetric and exact at zero distance
    if x.shape[1] == 1:
        return (x[:, 0, None] - t[None, :, 0]) ** 2
    return ((x[:, None, :] - t[None, :, :]) ** 2).sum(axis=-1)


# --------------------------------------------------------------------------
# kernels
# --------------------------------------------------------------------------


class Kernel:
    """Base class for symmetric positive-definite kernels on R^d."""

    domain_dim: int

    def gram(self, x, t) -> np.ndarray:
        """Matrix ``K(x_i, t_j)`` for point sets ``x`` and ``t``."""
        x = as_points(x, self.domain_dim)
        t = as_points(t, self.domain_dim)
        return self._gram(x, t)

    def pairwise(self, x, t) -> np.ndarray:
        """Elementwise ``K(x_i, t_i)`` for equally long point sets."""
        x = as_points(x, self.domain_dim)
        t = as_points(t, self.domain_dim)
        if x.shape != t.shape:
            raise InputError("pairwise evaluation needs equally many points")
        return np.array([self._gram(x[i : i + 1], t[i : i + 1])[0, 0] for i in range(len(x))])

    def diag(self, x) -> np.ndarray:
        x = as_points(x, self.domain_dim)
        return np.full(len(x), self.value_at_zero())

    def value_at_zero(self) -> float:
        raise NotImplementedError

    def _gram(self, x: np.ndarray, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x, t) -> float:
        return eval_kernel(self, x, t)

    def to_dict(self) -> dict:
        raise NotImplementedError

    def projection_kernel(self) -> "Kernel":
        """Mercer kernel whose RKHS contains the embedded functions."""
        return self


@dataclass(frozen=True)
class GaussianKernel(Kernel):
    gamma: float
    domain_dim: int = 1

    def __post_init__(self):
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise InputError(f"Gaussian bandwidth must be positive, got {self.gamma}")
        if self.domain_dim < 1:
            raise InputError("domain_dim must be >= 1")

    def value_at_zero(self) -> float:
        return 1.0

    def _gram(self, x, t):
        return np.exp(-_sq_dist(x, t) / self.gamma**2)

    def pairwise(self, x, t):
        x = as_points(x, self.domain_dim)
        t = as_points(t, self.domain_dim)
        if x.shape != t.shape:
            raise InputError("pairwise evaluation needs equally many points")
        return np.exp(-((x - t) ** 2).sum(axis=1) / self.gamma**2)

    def to_dict(self):
        return {"type": "gaussian", "gamma": self.gamma, "domain_dim": self.domain_dim}


def _matern_1d(r: np.ndarray, nu: float, ell: float) -> np.ndarray:
    z = math.sqrt(2.0 * nu) * ell * np.abs(r)
    out = np.ones_like(z)
    pos = z > 0
    zp = z[pos]
    # z^nu K_nu(z) computed through the exponentially scaled Bessel function
    out[pos] = (2.0 ** (1.0 - nu) / special.gamma(nu)) * zp**nu * special.kve(nu, zp) * np.exp(-zp)
    return out


@dataclass(frozen=True)
class MaternProductKernel(Kernel):
    """Product over coordinates of 1-d Matern kernels.

    The 1-d factor is ``2^(1-nu)/Gamma(nu) (sqrt(2 nu) ell r)^nu K_nu(sqrt(2 nu) ell r)``;
    ``ell`` multiplies the distance.  Its RKHS is the Sobolev space of order
    ``nu + 1/2`` and the product kernel reproduces the mixed-smooth space.
    """

    nu: float
    ell: float
    domain_dim: int = 1

    def __post_init__(self):
        if not (self.nu > 0 and self.ell > 0):
            raise InputError("Matern smoothness and scale must be positive")
        if self.domain_dim < 1:
            raise InputError("domain_dim must be >= 1")

    @property
    def smoothness(self) -> float:
        return self.nu + 0.5

    def value_at_zero(self) -> float:
        return 1.0

    def _gram(self, x, t):
        out = np.ones((len(x), len(t)))
        for j in range(self.domain_dim):
            out *= _matern_1d(x[:, j, None] - t[None, :, j], self.nu, self.ell)
        return out

    def pairwise(self, x, t):
        x = as_points(x, self.domain_dim)
        t = as_points(t, self.domain_dim)
        if x.shape != t.shape:
            raise InputError("pairwise evaluation needs equally many points")
        out = np.ones(len(x))
        for j in range(self.domain_dim):
            out *= _matern_1d(x[:, j] - t[:, j], self.nu, self.ell)
        return out

    def to_dict(self):
        return {"type": "matern_product", "nu": self.nu, "ell": self.ell, "domain_dim": self.domain_dim}


@dataclass(frozen=True)
class GaussianMixtureKernel(Kernel):
    """Linear combination ``sum_i c_i k_{gamma_i}`` of Gaussian kernels.

    ``terms`` is a tuple of ``(coefficient, bandwidth)`` pairs.  Coefficients
    may be negative, so the mixture need not be positive definite; embedded
    functions still lie in the RKHS of the narrowest component, which is what
    :meth:`projection_kernel` returns.
    """

    terms: tuple
    domain_dim: int = 1

    def __post_init__(self):
        terms = tuple((float(c), float(g)) for c, g in self.terms)
        if not terms:
            raise InputError("a Gaussian mixture needs at least one term")
        if any(g <= 0 for _, g in terms):
            raise InputError("mixture bandwidths must be positive")
        object.__setattr__(self, "terms", terms)

    def value_at_zero(self) -> float:
        return float(sum(c for c, _ in self.terms))

    def _gram(self, x, t):
        d2 = _sq_dist(x, t)
        out = np.zeros_like(d2)
        for c, g in self.terms:
            out += c * np.exp(-d2 / g**2)
        return out

    def pairwise(self, x, t):
        x = as_points(x, self.domain_dim)
        t = as_points(t, self.domain_dim)
        if x.shape != t.shape:
            raise InputError("pairwise evaluation needs equally many points")
        d2 = ((x - t) ** 2).sum(axis=1)
        return sum(c * np.exp(-d2 / g**2) for c, g in self.terms)

    def components(self):
        return [(c, GaussianKernel(g, self.domain_dim)) for c, g in self.terms]

    def projection_kernel(self) -> GaussianKernel:
        return GaussianKernel(min(g for _, g in self.terms), self.domain_dim)

    def to_dict(self):
        return {"type": "gaussian_mixture", "terms": [list(t) for t in self.terms], "domain_dim": self.domain_dim}


def multi_gaussian_kernel(r: int, gamma: float, d: int = 1) -> GaussianMixtureKernel:
    """Mixture ``sum_{j=1}^r C(r,j) (-1)^(1-j) j^-d (gamma^2 pi)^(-d/2) k_{j gamma}``.

    The alternating binomial weights make the embedding reproduce
    polynomials up to order ``r - 1`` locally (an r-th order smoothing
    operator).
    """
    if r < 1:
        raise InputError("r must be >= 1")
    norm = (gamma**2 * math.pi) ** (-d / 2.0)
    terms = tuple(
        (math.comb(r, j) * (-1.0) ** (1 - j) * j ** (-d) * norm, j * gamma) for j in range(1, r + 1)
    )
    return GaussianMixtureKernel(terms, d)


def eval_kernel(spec: Kernel, x, t) -> float:
    """Evaluate ``K(x, t)`` for two single points."""
    xp = as_points(x, spec.domain_dim)
    tp = as_points(t, spec.domain_dim)
    if len(xp) != 1 or len(tp) != 1:
        raise InputError("eval_kernel takes single points; use Kernel.gram for sets")
    return float(spec.pairwise(xp, tp)[0])


def kernel_from_dict(doc: dict) -> Kernel:
    kind = doc.get("type")
    if kind == "gaussian":
        return GaussianKernel(float(doc["gamma"]), int(doc.get("domain_dim", 1)))
    if kind == "matern_product":
        return MaternProductKernel(float(doc["nu"]), float(doc["ell"]), int(doc.get("domain_dim", 1)))
    if kind == "gaussian_mixture":
        return GaussianMixtureKernel(tuple(tuple(t) for t in doc["terms"]), int(doc.get("domain_dim", 1)))
    raise InputError(f"unknown kernel type {kind!r}")


# --------------------------------------------------------------------------
# measures
# --------------------------------------------------------------------------


class Measure:
    domain_dim: int

    def density(self, x) -> np.ndarray:
        raise NotImplementedError

    def quadrature(self, n_per_axis: int) -> tuple[np.ndarray, np.ndarray]:
        """Tensor quadrature ``(nodes (N, d), weights (N,))`` integrating against the measure."""
        nodes_1d, weights_1d = self._quadrature_1d(n_per_axis)
        if self.domain_dim == 1:
            return nodes_1d[:, None], weights_1d
        grids = np.meshgrid(*([nodes_1d] * self.domain_dim), indexing="ij")
        wgrids = np.meshgrid(*([weights_1d] * self.domain_dim), indexing="ij")
        nodes = np.stack([g.ravel() for g in grids], axis=1)
        weights = np.prod(np.stack([w.ravel() for w in wgrids], axis=1), axis=1)
        return nodes, weights

    def support(self) -> tuple[float, float]:
        """Per-coordinate interval carrying all but a negligible part of the mass."""
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def _quadrature_1d(self, n):
        raise NotImplementedError


@dataclass(frozen=True)
class GaussianMeasure(Measure):
    beta: float
    domain_dim: int = 1

    def __post_init__(self):
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise InputError(f"measure bandwidth must be positive, got {self.beta}")

    @property
    def std(self) -> float:
        return 1.0 / (self.beta * math.sqrt(2.0))

    def density(self, x):
        x = as_points(x, self.domain_dim)
        c = (self.beta / math.sqrt(math.pi)) ** self.domain_dim
        return c * np.exp(-(self.beta**2) * (x**2).sum(axis=1))

    def _quadrature_1d(self, n):
        u, w = special.roots_hermite(n)
        return u / self.beta, w / math.sqrt(math.pi)

    def support(self):
        half = 6.0 / self.beta
        return (-half, half)

    def sample(self, rng, n):
        return rng.normal(0.0, self.std, size=(n, self.domain_dim))

    def to_dict(self):
        return {"type": "gaussian", "beta": self.beta, "domain_dim": self.domain_dim}


@dataclass(frozen=True)
class UniformMeasure(Measure):
    """Uniform probability measure on the unit cube."""

    domain_dim: int = 1

    def density(self, x):
        x = as_points(x, self.domain_dim)
        inside = np.all((x >= 0.0) & (x <= 1.0), axis=1)
        return inside.astype(float)

    def _quadrature_1d(self, n):
        u, w = special.roots_legendre(n)
        return 0.5 * (u + 1.0), 0.5 * w

    def support(self):
        return (0.0, 1.0)

    def sample(self, rng, n):
        return rng.uniform(0.0, 1.0, size=(n, self.domain_dim))

    def to_dict(self):
        return {"type": "uniform", "domain_dim": self.domain_dim}


def measure_from_dict(doc: dict) -> Measure:
    kind = doc.get("type")
    if kind == "gaussian":
        return GaussianMeasure(float(doc["beta"]), int(doc.get("domain_dim", 1)))
    if kind == "uniform":
        return UniformMeasure(int(doc.get("domain_dim", 1)))
    raise InputError(f"unknown measure type {kind!r}")


# --------------------------------------------------------------------------
# eigensystems
# --------------------------------------------------------------------------


class EigenSystem:
    """Eigenvalues and eigenfunctions of ``f -> int K(., t) f(t) dmu(t)``.

    Instances are treated as immutable; arrays are flagged read-only.
    """

    kernel: Kernel
    measure: Measure
    eigenvalues: np.ndarray

    def __len__(self) -> int:
        return len(self.eigenvalues)

    def evaluate(self, x, count: int | None = None) -> np.ndarray:
        """Matrix ``phi_i(x_k)`` of shape ``(n_points, count)``."""
        raise NotImplementedError

    def truncated(self, count: int) -> "EigenSystem":
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    @property
    def basis_id(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha1(blob).hexdigest()[:16]

    def _check_count(self, count):
        if count is None:
            return len(self)
        if count < 1 or count > len(self):
            raise InputError(f"requested {count} eigenfunctions, {len(self)} available")
        return count


def _gaussian_q(gamma: float, beta: float) -> tuple[float, float]:
    # returns q and q - 1 computed without cancellation
    s = (2.0 / (beta * gamma)) ** 2
    q = math.sqrt(1.0 + s)
    return q, s / (q + 1.0)


def gaussian_eigenvalues_1d(gamma: float, beta: float, count: int) -> np.ndarray:
    """First ``count`` eigenvalues (possibly underflowing to 0) in 1-d."""
    q, qm1 = _gaussian_q(gamma, beta)
    n = np.arange(count)
    log_lam = math.log(2.0 / (1.0 + q)) + n * (math.log(qm1) - math.log(q + 1.0))
    return np.exp(log_lam)


def _hermite_eigenfunctions_1d(x: np.ndarray, gamma: float, beta: float, nmax: int) -> np.ndarray:
    """``phi_n(x)`` for ``n < nmax``; rows are points.

    phi_n(x) = sqrt(bf) pi^(1/4) g_n(beta bf x) exp(-delta^2 x^2) where g_n is
    the orthonormal Hermite function stripped of its Gaussian factor,
    bf = q^(1/2) and delta^2 = beta^2 (q - 1) / 2.  The three-term recurrence
    is run with a running log-scale so large indices and arguments neither
    overflow nor lose the sign pattern.
    """
    q, qm1 = _gaussian_q(gamma, beta)
    bf = math.sqrt(q)
    u = beta * bf * x
    expo = 0.5 * math.log(bf) + 0.25 * math.log(math.pi) - 0.5 * beta**2 * qm1 * x**2
    out = np.empty((x.size, nmax))
    log_scale = np.zeros_like(x)
    big = 1e150
    g_prev = np.zeros_like(x)
    g_cur = np.full_like(x, math.pi**-0.25)
    with np.errstate(divide="ignore", over="ignore", under="ignore"):
        for n in range(nmax):
            out[:, n] = np.sign(g_cur) * np.exp(np.log(np.abs(g_cur)) + log_scale + expo)
            if n + 1 == nmax:
                break
            g_next = math.sqrt(2.0 / (n + 1)) * u * g_cur - math.sqrt(n / (n + 1)) * g_prev
            g_prev, g_cur = g_cur, g_next
            hot = np.abs(g_cur) > big
            if hot.any():
                g_cur[hot] /= big
                g_prev[hot] /= big
                log_scale[hot] += math.log(big)
    return out


def _multi_indices(d: int, count: int) -> np.ndarray:
    """First ``count`` multi-indices ordered by total degree, then lexicographically."""
    out = []
    total = 0
    while len(out) < count:
        level = sorted(m for m in itertools.product(range(total + 1), repeat=d) if sum(m) == total)
        out.extend(level)
        total += 1
    return np.array(out[:count], dtype=int)


class GaussianEigenSystem(EigenSystem):
    """Analytic Hermite eigensystem of ``k_gamma`` under ``GaussianMeasure(beta)``."""

    def __init__(self, gamma: float, beta: float, domain_dim: int, multi_indices: np.ndarray):
        self.kernel = GaussianKernel(gamma, domain_dim)
        self.measure = GaussianMeasure(beta, domain_dim)
        self.gamma = float(gamma)
        self.beta = float(beta)
        self.multi_indices = np.array(multi_indices, dtype=int).reshape(-1, domain_dim)
        self.multi_indices.setflags(write=False)
        lam1 = gaussian_eigenvalues_1d(gamma, beta, int(self.multi_indices.max()) + 1)
        lam = np.prod(lam1[self.multi_indices], axis=1)
        lam.setflags(write=False)
        self.eigenvalues = lam

    def evaluate(self, x, count=None):
        count = self._check_count(count)
        x = as_points(x, self.kernel.domain_dim)
        idx = self.multi_indices[:count]
        nmax = int(idx.max()) + 1
        out = np.ones((len(x), count))
        for j in range(self.kernel.domain_dim):
            table = _hermite_eigenfunctions_1d(x[:, j], self.gamma, self.beta, nmax)
            out *= table[:, idx[:, j]]
        return out

    def truncated(self, count):
        count = self._check_count(count)
        return GaussianEigenSystem(self.gamma, self.beta, self.kernel.domain_dim, self.multi_indices[:count])

    def to_dict(self):
        return {
            "provenance": "analytic",
            "kernel": self.kernel.to_dict(),
            "measure": self.measure.to_dict(),
            "count": len(self),
        }


def gaussian_eigensystem(gamma: float, beta: float, d: int = 1, count: int = 150) -> GaussianEigenSystem:
    """Analytic eigenpairs of the Gaussian kernel under the Gaussian measure.

    For ``d > 1`` eigenfunctions are tensor products of 1-d ones; the product
    eigenvalue only depends on the total degree, so ordering is by degree and
    lexicographic within a degree.  Pairs whose eigenvalue falls below
    ``EIGENVALUE_FLOOR`` are dropped with a warning.
    """
    if not (gamma > 0 and beta > 0):
        raise InputError("gamma and beta must be positive")
    if count < 1:
        raise InputError("count must be >= 1")
    idx = _multi_indices(d, count)
    sys = GaussianEigenSystem(gamma, beta, d, idx)
    keep = int(np.sum(sys.eigenvalues >= EIGENVALUE_FLOOR))
    if keep == 0:
        raise InputError("all eigenvalues underflow; bandwidths are out of range")
    if keep < count:
        warnings.warn(
            f"eigenvalues underflow after index {keep}; returning {keep} of {count} eigenpairs",
            RuntimeWarning,
            stacklevel=2,
        )
        sys = sys.truncated(keep)
    return sys


class NystromEigenSystem(EigenSystem):
    """Eigensystem from a measure-weighted Gram matrix on a quadrature grid.

    Off-grid evaluation uses the Nystrom extension
    ``phi_i(x) = (1/lambda_i) sum_k w_k K(x, s_k) phi_i(s_k)``.
    """

    def __init__(self, kernel: Kernel, measure: Measure, nodes, node_weights, eigenvalues, node_values):
        self.kernel = kernel
        self.measure = measure
        self.nodes = as_points(nodes, kernel.domain_dim).copy()
        self.node_weights = np.asarray(node_weights, dtype=float).copy()
        self.eigenvalues = np.asarray(eigenvalues, dtype=float).copy()
        self.node_values = np.asarray(node_values, dtype=float).reshape(len(self.nodes), -1).copy()
        for a in (self.nodes, self.node_weights, self.eigenvalues, self.node_values):
            a.setflags(write=False)
        # extension matrix W phi / lambda, formed once
        self._ext = (self.node_weights[:, None] * self.node_values) / self.eigenvalues[None, :]

    def evaluate(self, x, count=None):
        count = self._check_count(count)
        x = as_points(x, self.kernel.domain_dim)
        return self.kernel.gram(x, self.nodes) @ self._ext[:, :count]

    def truncated(self, count):
        count = self._check_count(count)
        return NystromEigenSystem(
            self.kernel,
            self.measure,
            self.nodes,
            self.node_weights,
            self.eigenvalues[:count],
            self.node_values[:, :count],
        )

    def to_dict(self):
        return {
            "provenance": "nystrom",
            "kernel": self.kernel.to_dict(),
            "measure": self.measure.to_dict(),
            "count": len(self),
            "nodes": self.nodes.tolist(),
            "node_weights": self.node_weights.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "node_values": self.node_values.tolist(),
        }


def nystrom_eigensystem(
    spec: Kernel,
    measure: Measure,
    grid_size: int,
    count: int,
    rel_floor: float | None = None,
) -> NystromEigenSystem:
    """Numerical eigenpairs of the kernel's integral operator.

    The measure's quadrature rule (Gauss-Hermite or Gauss-Legendre, tensorised
    for ``d > 1`` with ``round(grid_size ** (1/d))`` nodes per axis) supplies
    nodes ``s_k`` and weights ``w_k``; the eigenpairs of ``W^1/2 K W^1/2`` give
    ``lambda_i`` and ``phi_i(s_k) = v_ik / sqrt(w_k)``.

    Eigenvalues not above ``max(EIGENVALUE_FLOOR, rel_floor * lambda_1)`` are
    excluded.  ``rel_floor`` defaults to ``N * machine epsilon``, the noise
    level of the symmetric eigensolver.  Nodes whose quadrature weight
    underflows to zero do not act on the operator and are dropped.
    """
    d = spec.domain_dim
    if measure.domain_dim != d:
        raise InputError("kernel and measure dimensions differ")
    per_axis = max(1, int(round(grid_size ** (1.0 / d))))
    nodes, weights = measure.quadrature(per_axis)
    live = weights > 0
    nodes, weights = nodes[live], weights[live]
    n_nodes = len(nodes)
    if n_nodes < count:
        raise InputError(f"grid of {n_nodes} nodes cannot give {count} eigenpairs")
    sw = np.sqrt(weights)
    a = sw[:, None] * spec.gram(nodes, nodes) * sw[None, :]
    a = 0.5 * (a + a.T)
    lam, vec = np.linalg.eigh(a)
    order = np.argsort(lam)[::-1]
    lam, vec = lam[order], vec[:, order]
    if rel_floor is None:
        rel_floor = n_nodes * np.finfo(float).eps
    floor = max(EIGENVALUE_FLOOR, rel_floor * max(lam[0], 0.0))
    keep = int(np.sum(lam[:count] > floor))
    if keep == 0:
        raise InputError("no eigenvalue above the floor")
    if keep < count:
        warnings.warn(
            f"only {keep} of {count} Nystrom eigenvalues exceed the floor {floor:.3g}",
            RuntimeWarning,
            stacklevel=2,
        )
    lam, vec = lam[:keep], vec[:, :keep]
    # fix signs so the largest-magnitude node value is positive (deterministic basis)
    pivot = np.argmax(np.abs(vec), axis=0)
    vec = vec * np.sign(vec[pivot, np.arange(keep)])[None, :]
    values = vec / sw[:, None]
    return NystromEigenSystem(spec, measure, nodes, weights, lam, values)


def eigensystem_from_dict(doc: dict) -> EigenSystem:
    kernel = kernel_from_dict(doc["kernel"])
    measure = measure_from_dict(doc["measure"])
    prov = doc.get("provenance")
    if prov == "analytic":
        if not isinstance(kernel, GaussianKernel) or not isinstance(measure, GaussianMeasure):
            raise InputError("analytic eigensystems need a Gaussian kernel and measure")
        idx = _multi_indices(kernel.domain_dim, int(doc["count"]))
        return GaussianEigenSystem(kernel.gamma, measure.beta, kernel.domain_dim, idx)
    if prov == "nystrom":
        count = int(doc["count"])
        sys = NystromEigenSystem(
            kernel, measure, doc["nodes"], doc["node_weights"], doc["eigenvalues"], doc["node_values"]
        )
        if len(sys) != count or sys.node_values.shape[1] != count:
            raise InputError("Nystrom eigensystem tables are inconsistent with its count")
        return sys
    raise InputError(f"unknown eigensystem provenance {prov!r}")


def mercer_truncation_error(sys: EigenSystem, k: int, probes: Sequence) -> float:
    """Max over probe pairs of ``|K(x,t) - sum_{i<=k} lambda_i phi_i(x) phi_i(t)|``."""
    k = sys._check_count(k)
    d = sys.kernel.domain_dim
    pairs = [(np.asarray(x, float).reshape(d), np.asarray(t, float).reshape(d)) for x, t in probes]
    if not pairs:
        return 0.0
    xs = np.array([p[0] for p in pairs])
    ts = np.array([p[1] for p in pairs])
    exact = sys.kernel.pairwise(xs, ts)
    fx = sys.evaluate(xs, k)
    ft = sys.evaluate(ts, k)
    approx = (fx * ft) @ sys.eigenvalues[:k]
    return float(np.max(np.abs(exact - approx)))
