"""Simulated two-stage functional regression data (cases 1-4).

Input curves are ``f(t) = sum_{k=1}^{50} c_k phi_k(t)`` with ``phi_1 = 1``,
``phi_k = sqrt(2) cos((k-1) pi t)`` and ``c_k = z_k r_k``, ``r_k`` uniform on
``[-sqrt(3), sqrt(3)]`` (unit variance).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import special

from .embedding import SampledFunction, trapezoid_weights
from .errors import InputError

__all__ = [
    "N_COEFFS",
    "CASE_NOISE",
    "ProcessSpec",
    "TwoStageDataset",
    "Standardizer",
    "fourier_basis",
    "beta1",
    "beta2",
    "basis_inner_products",
    "true_response",
    "assign_splits",
    "gen_dataset",
    "standardize",
    "subsample_second_stage",
]

N_COEFFS = 50
CASE_NOISE = {1: (0.0, 0.0), 2: (11.4, 0.3), 3: (5.0, 0.1), 4: (5.0, 0.2)}
SPLITS = ("train", "validation", "test")
STD_FLOOR = 1e-12


def fourier_basis(t, n_coeffs: int = N_COEFFS) -> np.ndarray:
    """Matrix ``phi_k(t_i)``, shape ``(len(t), n_coeffs)``."""
    t = np.asarray(t, dtype=float).reshape(-1)
    k = np.arange(n_coeffs)
    out = math.sqrt(2.0) * np.cos(np.pi * np.outer(t, k))
    out[:, 0] = 1.0
    return out


def beta1(t):
    t = np.asarray(t, dtype=float)
    return np.where((t >= 0.0) & (t <= 0.25), 4.0 - 16.0 * t, 0.0)


def beta2(t):
    t = np.asarray(t, dtype=float)
    return np.where((t >= 0.25) & (t <= 0.75), 4.0 - 16.0 * np.abs(0.5 - t), 0.0)


_KINKS = (0.0, 0.25, 0.5, 0.75, 1.0)
_INNER_CACHE: dict = {}


def basis_inner_products(fn, n_nodes: int = 10_000, n_coeffs: int = N_COEFFS) -> np.ndarray:
    """``<phi_k, fn>`` on [0, 1] by composite Gauss-Legendre split at the kinks of the beta functions."""
    key = (fn.__name__, n_nodes, n_coeffs)
    if key not in _INNER_CACHE:
        pieces = len(_KINKS) - 1
        u, w = special.roots_legendre(n_nodes // pieces)
        total = np.zeros(n_coeffs)
        for a, b in zip(_KINKS[:-1], _KINKS[1:]):
            t = 0.5 * (b - a) * (u + 1.0) + a
            total += (0.5 * (b - a) * w * fn(t)) @ fourier_basis(t, n_coeffs)
        _INNER_CACHE[key] = total
    return _INNER_CACHE[key].copy()


@dataclass(frozen=True)
class ProcessSpec:
    """Coefficient scales and response rule of one simulation case."""

    case: int
    scales: tuple = ()
    swap_betas: bool = False

    def __post_init__(self):
        if self.case not in CASE_NOISE:
            raise InputError(f"unknown case id {self.case!r}; expected one of {sorted(CASE_NOISE)}")
        if not self.scales:
            z = np.ones(N_COEFFS)
            if self.case in (1, 2):
                z[[0, 2]] = 5.0
                z[[4, 9]] = 3.0
            object.__setattr__(self, "scales", tuple(float(v) for v in z))
        if len(self.scales) != N_COEFFS:
            raise InputError(f"need {N_COEFFS} coefficient scales")

    @property
    def noise(self) -> tuple[float, float]:
        return CASE_NOISE[self.case]

    def draw_coefficients(self, rng: np.random.Generator, m: int) -> np.ndarray:
        r = rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), size=(m, N_COEFFS))
        return r * np.asarray(self.scales)

    def curve(self, coefficients):
        """Callable ``t -> f(t)`` for one coefficient vector."""
        c = np.asarray(coefficients, dtype=float)
        return lambda t: fourier_basis(np.asarray(t).reshape(-1), len(c)) @ c

    def response(self, coefficients) -> np.ndarray:
        return true_response(coefficients, self.case, self.swap_betas)


def true_response(coefficients, case: int, swap_betas: bool = False):
    """Noise-free response.

    Cases 1-2: ``<f, phi_5>^2 = c_5^2``.  Cases 3-4:
    ``<f, beta_2> + <f, beta_1>^2`` (``swap_betas`` exchanges the two).
    Accepts one coefficient vector or an ``(m, 50)`` matrix.
    """
    c = np.asarray(coefficients, dtype=float)
    if c.shape[-1] != N_COEFFS:
        raise InputError(f"expected {N_COEFFS} coefficients")
    if case in (1, 2):
        y = c[..., 4] ** 2
    elif case in (3, 4):
        p1, p2 = basis_inner_products(beta1), basis_inner_products(beta2)
        if swap_betas:
            p1, p2 = p2, p1
        y = c @ p2 + (c @ p1) ** 2
    else:
        raise InputError(f"unknown case id {case!r}")
    return float(y) if np.ndim(y) == 0 else y


@dataclass
class TwoStageDataset:
    """``m`` curves observed at discrete nodes, with scalar responses and splits."""

    samples: list
    responses: np.ndarray
    split: np.ndarray
    coefficients: np.ndarray | None = None
    true_responses: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.responses = np.asarray(self.responses, dtype=float).reshape(-1)
        self.split = np.asarray(self.split, dtype=object).reshape(-1)
        if len(self.samples) != len(self.responses) or len(self.split) != len(self.responses):
            raise InputError("samples, responses and split labels must have equal length")
        if not np.all(np.isfinite(self.responses)):
            raise InputError("responses must be finite")
        bad = set(self.split) - set(SPLITS)
        if bad:
            raise InputError(f"unknown split labels {sorted(bad)}")

    def __len__(self):
        return len(self.responses)

    def indices(self, name: str) -> np.ndarray:
        return np.flatnonzero(self.split == name)

    def subset(self, name: str) -> "TwoStageDataset":
        idx = self.indices(name)
        return self.take(idx)

    def take(self, idx) -> "TwoStageDataset":
        idx = np.asarray(idx, dtype=int)
        return TwoStageDataset(
            [self.samples[i] for i in idx],
            self.responses[idx],
            self.split[idx],
            None if self.coefficients is None else self.coefficients[idx],
            None if self.true_responses is None else self.true_responses[idx],
            dict(self.metadata),
        )

    def has_common_grid(self) -> bool:
        first = self.samples[0].nodes
        return all(s.nodes is first or np.array_equal(s.nodes, first) for s in self.samples)


def assign_splits(m: int, rng: np.random.Generator, fractions=(0.64, 0.16, 0.20)) -> np.ndarray:
    """Random split labels; test and validation counts are floored, train takes the rest."""
    n_test = int(math.floor(fractions[2] * m))
    n_val = int(math.floor(fractions[1] * m))
    labels = np.array(["train"] * (m - n_val - n_test) + ["validation"] * n_val + ["test"] * n_test, dtype=object)
    return labels[rng.permutation(m)]


def gen_dataset(
    spec: ProcessSpec | int,
    m: int = 4000,
    n_grid: int = 51,
    sigma1_sq: float | None = None,
    sigma2_sq: float | None = None,
    seed: int = 0,
) -> TwoStageDataset:
    """Draw a dataset on an equally spaced grid of ``n_grid`` points on [0, 1].

    Noise variances default to the case's values.  Independent random
    streams are spawned from ``seed`` for coefficients, observation noise,
    response noise and the split, so the curves and responses do not depend
    on ``n_grid``.
    """
    if isinstance(spec, int):
        spec = ProcessSpec(spec)
    if m < 1 or n_grid < 2:
        raise InputError("need m >= 1 and n_grid >= 2")
    s1, s2 = spec.noise
    s1 = s1 if sigma1_sq is None else float(sigma1_sq)
    s2 = s2 if sigma2_sq is None else float(sigma2_sq)
    if s1 < 0 or s2 < 0:
        raise InputError("noise variances must be non-negative")
    coef_rng, obs_rng, resp_rng, split_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4))
    coefs = spec.draw_coefficients(coef_rng, m)
    t = np.linspace(0.0, 1.0, n_grid)
    values = coefs @ fourier_basis(t).T
    if s1 > 0:
        values = values + obs_rng.normal(0.0, math.sqrt(s1), size=values.shape)
    y_true = spec.response(coefs)
    y = y_true + resp_rng.normal(0.0, math.sqrt(s2), size=m) if s2 > 0 else y_true.copy()
    nodes = t[:, None]
    weights = trapezoid_weights(t)
    samples = [SampledFunction(nodes, values[i], weights) for i in range(m)]
    meta = {
        "case": spec.case,
        "m": m,
        "n": n_grid,
        "sigma1_sq": s1,
        "sigma2_sq": s2,
        "seed": seed,
        "swap_betas": spec.swap_betas,
        "grid": "equispaced",
    }
    return TwoStageDataset(samples, y, assign_splits(m, split_rng), coefs, y_true, meta)


# --------------------------------------------------------------------------
# standardisation
# --------------------------------------------------------------------------


@dataclass
class Standardizer:
    """Column-wise affine standardisation fitted on training rows."""

    mean: np.ndarray
    std: np.ndarray
    floored: np.ndarray

    @classmethod
    def fit(cls, x) -> "Standardizer":
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        floored = std < STD_FLOOR
        return cls(mean, np.where(floored, STD_FLOOR, std), floored)

    def transform(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def inverse_transform(self, z):
        return np.asarray(z, dtype=float) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "floored": self.floored.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "Standardizer":
        return cls(np.array(doc["mean"], float), np.array(doc["std"], float), np.array(doc["floored"], bool))


def standardize(dataset: TwoStageDataset):
    """Entry-wise standardisation of curve values and responses using training statistics.

    Returns ``(standardised dataset, (value_stats, response_stats))``; each
    stats object has ``inverse_transform``.
    """
    if not dataset.has_common_grid():
        raise InputError("entry-wise standardisation needs a common grid")
    tr = dataset.indices("train")
    if len(tr) == 0:
        raise InputError("no training samples")
    values = np.stack([s.values for s in dataset.samples])
    vstats = Standardizer.fit(values[tr])
    ystats = Standardizer.fit(dataset.responses[tr])
    z = vstats.transform(values)
    samples = [SampledFunction(s.nodes, z[i], s.node_weights) for i, s in enumerate(dataset.samples)]
    yz = ystats.transform(dataset.responses[:, None])[:, 0]
    meta = dict(dataset.metadata, standardized=True, floored_entries=int(vstats.floored.sum()))
    out = TwoStageDataset(samples, yz, dataset.split.copy(), dataset.coefficients, dataset.true_responses, meta)
    return out, (vstats, ystats)


def subsample_second_stage(dataset: TwoStageDataset, n: int, seed: int, density=None) -> TwoStageDataset:
    """Keep ``n`` of each curve's nodes, drawn without replacement.

    Nodes are drawn uniformly, or with probabilities proportional to
    ``density(node)`` when a density callable is given.  Kept nodes stay in
    their original order and carry no quadrature weights.
    """
    rng = np.random.default_rng(seed)
    samples = []
    for s in dataset.samples:
        if n > len(s) or n < 1:
            raise InputError(f"cannot keep {n} of {len(s)} nodes")
        p = None
        if density is not None:
            p = np.asarray(density(s.nodes), dtype=float).reshape(-1)
            p = p / p.sum()
        keep = np.sort(rng.choice(len(s), size=n, replace=False, p=p))
        samples.append(SampledFunction(s.nodes[keep], s.values[keep]))
    meta = dict(dataset.metadata, n=n, grid="subsampled", subsample_seed=seed, fine_n=dataset.metadata.get("n"))
    return TwoStageDataset(
        samples, dataset.responses.copy(), dataset.split.copy(), dataset.coefficients, dataset.true_responses, meta
    )
