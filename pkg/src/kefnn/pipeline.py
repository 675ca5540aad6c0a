"""End-to-end estimators: KEFNN (embed, project, standardise, train) and the baseline reducers.

All estimators share the same network training and the same per-sample
prediction path, so logged predictions are reproduced exactly by
:func:`predict`.
"""

from __future__ import annotations

import hashlib
import itertools
import logging
import math
import platform
import time
import warnings
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
import scipy

from . import __version__
from .baselines import BSplineBasis, FpcaModel, bspline_operator, common_grid, fpca_fit
from .deepnet import ReluNetwork, TrainConfig, TruncationBound, forward, init_network, predict_truncated, train
from .embedding import SampledFunction, monte_carlo_embed, monte_carlo_linear_term, optimal_embed
from .errors import InputError, NumericalError
from .kernels import (
    EigenSystem,
    GaussianKernel,
    UniformMeasure,
    eigensystem_from_dict,
    gaussian_eigensystem,
    multi_gaussian_kernel,
    nystrom_eigensystem,
)
from .projection import ProjectionOperator, default_grid
from .simgen import Standardizer, TwoStageDataset, gen_dataset, subsample_second_stage

__all__ = [
    "KefnnHyperparams",
    "ModelBundle",
    "KefnnFeaturizer",
    "RawFeaturizer",
    "BSplineFeaturizer",
    "FpcaFeaturizer",
    "SweepConfig",
    "fit_kefnn",
    "fit_baseline",
    "select_baseline",
    "predict",
    "predict_many",
    "evaluate",
    "cross_validate",
    "run_sweep",
    "summarize_sweep",
    "dataset_hash",
    "BASELINE_CANDIDATES",
]

log = logging.getLogger(__name__)

BASELINE_CANDIDATES = {"raw": (None,), "bspline": (5, 9, 15, 25), "fpca": (3, 5, 10, 20)}


def _train_config_from(doc) -> TrainConfig:
    if isinstance(doc, TrainConfig):
        return doc
    names = {f.name for f in fields(TrainConfig)}
    bad = set(doc) - names
    if bad:
        raise InputError(f"unknown training keys {sorted(bad)}")
    return TrainConfig(**doc)


@dataclass(frozen=True)
class KefnnHyperparams:
    """Everything that defines a KEFNN fit besides the data.

    ``kernel`` is ``"gaussian"`` (bandwidth ``gamma``) or ``"multi_gaussian"``
    (order ``kernel_order`` combination of bandwidths ``j * gamma``).  The
    projection basis is the analytic Hermite system under the Gaussian
    measure with parameter ``beta`` or, with ``basis="nystrom"``, numerical
    eigenpairs under the uniform measure on [0, 1].  With ``cap_d1`` a
    too-short eigensystem lowers ``d1`` (logged); otherwise it is an error.
    """

    gamma: float = 0.033
    beta: float = 0.008
    d1: int = 150
    kernel: str = "gaussian"
    kernel_order: int = 2
    basis: str = "analytic"
    projection: str = "numint"
    quadrature: str = "monte_carlo"
    hidden: tuple = (128, 128, 128)
    train: TrainConfig = field(default_factory=TrainConfig)
    truncation: float | None = None
    grid_points: int = 4096
    nystrom_nodes: int = 2000
    cap_d1: bool = True

    def __post_init__(self):
        if not (self.gamma > 0 and self.beta > 0):
            raise InputError("gamma and beta must be positive")
        if self.d1 < 1:
            raise InputError("d1 must be >= 1")
        if self.kernel not in ("gaussian", "multi_gaussian"):
            raise InputError(f"unknown kernel {self.kernel!r}")
        if self.basis not in ("analytic", "nystrom"):
            raise InputError(f"unknown basis {self.basis!r}")
        if self.projection not in ("numint", "lsq"):
            raise InputError(f"unknown projection path {self.projection!r}")
        if self.quadrature not in ("monte_carlo", "optimal"):
            raise InputError(f"unknown quadrature rule {self.quadrature!r}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.hidden or min(self.hidden) < 1:
            raise InputError("need at least one hidden layer of positive width")
        object.__setattr__(self, "train", _train_config_from(self.train))
        if self.truncation is not None:
            TruncationBound(self.truncation)

    def feature_key(self) -> tuple:
        return (self.gamma, self.beta, self.d1, self.kernel, self.kernel_order, self.basis,
                self.projection, self.quadrature, self.grid_points, self.nystrom_nodes, self.cap_d1)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["hidden"] = list(self.hidden)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "KefnnHyperparams":
        names = {f.name for f in fields(cls)}
        bad = set(doc) - names
        if bad:
            raise InputError(f"unknown hyperparameter keys {sorted(bad)}")
        return cls(**doc)


# --------------------------------------------------------------------------
# featurizers
# --------------------------------------------------------------------------

_POOL_LIMIT = 200_000
_ROW_CACHE_LIMIT = 50_000


def _embedding_kernel(hp: KefnnHyperparams):
    if hp.kernel == "gaussian":
        return GaussianKernel(hp.gamma)
    return multi_gaussian_kernel(hp.kernel_order, hp.gamma)


def _eigensystem(hp: KefnnHyperparams, projection_kernel) -> EigenSystem:
    if hp.basis == "analytic":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return gaussian_eigensystem(projection_kernel.gamma, hp.beta, 1, hp.d1)
    count = min(hp.d1, hp.nystrom_nodes)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return nystrom_eigensystem(projection_kernel, UniformMeasure(1), hp.nystrom_nodes, count)


class KefnnFeaturizer:
    """Embedding plus projection, ``f -> theta(f) @ rows(nodes)``.

    Rows of the projection operator are cached per node, so curves sharing
    a grid (or drawn from a common fine grid) cost one row evaluation per
    distinct node.
    """

    method = "kefnn"

    def __init__(self, hp: KefnnHyperparams, eigensystem: EigenSystem | None = None):
        self.hp = hp
        self.kernel = _embedding_kernel(hp)
        proj_kernel = self.kernel.projection_kernel()
        if eigensystem is None:
            eigensystem = _eigensystem(hp, proj_kernel)
            available = len(eigensystem)
            if available < hp.d1:
                if not hp.cap_d1:
                    raise InputError(f"eigensystem has only {available} usable eigenpairs; d1={hp.d1} requested")
                log.warning("d1 capped from %d to %d (eigenvalue floor)", hp.d1, available)
            eigensystem = eigensystem.truncated(min(hp.d1, available))
        self.eigensystem = eigensystem
        self.d1 = len(eigensystem)
        points, weights = default_grid(self.kernel, eigensystem, hp.grid_points)
        self.operator = ProjectionOperator(self.kernel, eigensystem, self.d1, hp.projection, points, weights)
        self._rows: dict = {}

    @property
    def dim(self) -> int:
        return self.d1

    @property
    def d1_capped(self) -> bool:
        return self.d1 < self.hp.d1

    def embed(self, obs: SampledFunction):
        if self.hp.quadrature == "monte_carlo":
            return monte_carlo_embed(obs, self.kernel)
        return optimal_embed(obs, self.kernel, monte_carlo_linear_term(obs, self.kernel))

    def _rows_for(self, nodes: np.ndarray) -> np.ndarray:
        keys = [n.tobytes() for n in nodes]
        missing = [i for i, k in enumerate(keys) if k not in self._rows]
        if missing:
            if len(self._rows) + len(missing) > _ROW_CACHE_LIMIT:
                self._rows.clear()
                missing = list(range(len(keys)))
            new = self.operator.rows(nodes[missing])
            for i, r in zip(missing, new):
                self._rows[keys[i]] = r
        return np.stack([self._rows[k] for k in keys])

    def features(self, obs: SampledFunction) -> np.ndarray:
        est = self.embed(obs)
        return est.weights @ self._rows_for(obs.nodes)

    def matrix(self, samples) -> np.ndarray:
        samples = list(samples)
        out = np.empty((len(samples), self.d1))
        block: list[int] = []
        size = 0
        for i, s in enumerate(samples):
            block.append(i)
            size += len(s)
            if size >= _POOL_LIMIT:
                self._fill(samples, block, out)
                block, size = [], 0
        if block:
            self._fill(samples, block, out)
        return out

    def _fill(self, samples, block, out):
        nodes = np.concatenate([samples[i].nodes for i in block])
        uniq, inv = np.unique(nodes, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        table = self._rows_for(uniq)
        pos = 0
        for i in block:
            n = len(samples[i])
            est = self.embed(samples[i])
            out[i] = est.weights @ table[inv[pos : pos + n]]
            pos += n

    def to_dict(self) -> dict:
        return {"method": "kefnn", "d1": self.d1, "eigensystem": self.eigensystem.to_dict()}


class RawFeaturizer:
    """Observed values on a fixed grid."""

    method = "raw"

    def __init__(self, grid):
        self.grid = np.asarray(grid, dtype=float).reshape(-1)

    @property
    def dim(self) -> int:
        return len(self.grid)

    def _check(self, obs):
        if len(obs) != len(self.grid) or not np.array_equal(obs.nodes[:, 0], self.grid):
            raise InputError("observation grid differs from the fitted grid")

    def features(self, obs):
        self._check(obs)
        return obs.values.copy()

    def matrix(self, samples):
        return np.stack([self.features(s) for s in samples])

    def to_dict(self):
        return {"method": "raw", "grid": self.grid.tolist()}


class BSplineFeaturizer:
    """Least-squares cubic B-spline coefficients on a fixed grid."""

    method = "bspline"

    def __init__(self, grid, n_basis: int, degree: int = 3):
        self.grid = np.asarray(grid, dtype=float).reshape(-1)
        self.basis = BSplineBasis(n_basis, degree)
        self.op, self.ridge = bspline_operator(self.grid, self.basis)

    @property
    def dim(self) -> int:
        return self.basis.n_basis

    def features(self, obs):
        if len(obs) != len(self.grid) or not np.array_equal(obs.nodes[:, 0], self.grid):
            raise InputError("observation grid differs from the fitted grid")
        return obs.values @ self.op

    def matrix(self, samples):
        return np.stack([self.features(s) for s in samples])

    def to_dict(self):
        return {"method": "bspline", "grid": self.grid.tolist(), "n_basis": self.basis.n_basis,
                "degree": self.basis.degree}


class FpcaFeaturizer:
    """FPCA scores under a model fitted on the training curves."""

    method = "fpca"

    def __init__(self, model: FpcaModel):
        self.model = model

    @property
    def dim(self) -> int:
        return self.model.n_components

    def features(self, obs):
        m = self.model
        if len(obs) != len(m.grid) or not np.array_equal(obs.nodes[:, 0], m.grid):
            raise InputError("observation grid differs from the FPCA model grid")
        return ((obs.values - m.mean) * m.weights) @ m.components

    def matrix(self, samples):
        return np.stack([self.features(s) for s in samples])

    def to_dict(self):
        return {"method": "fpca", "model": self.model.to_dict()}


def featurizer_from_dict(doc: dict, hp: KefnnHyperparams | None = None):
    method = doc.get("method")
    if method == "kefnn":
        if hp is None:
            raise InputError("KEFNN featurizer needs its hyperparameters")
        sys = eigensystem_from_dict(doc["eigensystem"])
        if len(sys) != doc["d1"]:
            raise InputError(f"eigensystem has {len(sys)} pairs, descriptor says d1={doc['d1']}")
        return KefnnFeaturizer(hp, sys)
    if method == "raw":
        return RawFeaturizer(doc["grid"])
    if method == "bspline":
        return BSplineFeaturizer(doc["grid"], int(doc["n_basis"]), int(doc["degree"]))
    if method == "fpca":
        return FpcaFeaturizer(FpcaModel.from_dict(doc["model"]))
    raise InputError(f"unknown featurizer method {method!r}")


# --------------------------------------------------------------------------
# bundle, fitting and prediction
# --------------------------------------------------------------------------


@dataclass
class ModelBundle:
    """A trained estimator with everything needed to predict and to audit it."""

    method: str
    hyperparams: dict
    featurizer: object
    feature_stats: Standardizer
    response_stats: Standardizer
    network: ReluNetwork
    history: list
    truncation: float | None = None
    best_epoch: int = 0
    metrics: dict = field(default_factory=dict)
    predictions: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.network.input_dim != self.featurizer.dim:
            raise InputError(f"network expects {self.network.input_dim} features, featurizer gives {self.featurizer.dim}")
        if not self.history:
            raise InputError("bundle needs a non-empty training history")

    @property
    def eigensystem(self) -> EigenSystem | None:
        return getattr(self.featurizer, "eigensystem", None)

    @property
    def d1(self) -> int:
        return self.featurizer.dim


def dataset_hash(dataset: TwoStageDataset) -> str:
    h = hashlib.sha1()
    for s in dataset.samples:
        h.update(s.nodes.tobytes())
        h.update(s.values.tobytes())
    h.update(dataset.responses.tobytes())
    h.update("".join(dataset.split).encode())
    return h.hexdigest()


def _versions() -> dict:
    return {"kefnn": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _standardized_output(bundle: ModelBundle, z: np.ndarray) -> float:
    if bundle.truncation is None:
        return forward(bundle.network, z)
    return predict_truncated(bundle.network, z, TruncationBound(bundle.truncation))


def _predict_features(bundle: ModelBundle, feats: np.ndarray) -> float:
    z = bundle.feature_stats.transform(feats)
    out = _standardized_output(bundle, z)
    return float(bundle.response_stats.inverse_transform(out)[0])


def predict(bundle: ModelBundle, obs: SampledFunction) -> float:
    """Prediction on the response's original scale."""
    return _predict_features(bundle, bundle.featurizer.features(obs))


def predict_many(bundle: ModelBundle, samples) -> np.ndarray:
    """Same values as calling :func:`predict` on each sample, with shared feature work."""
    feats = bundle.featurizer.matrix(list(samples))
    return np.array([_predict_features(bundle, f) for f in feats])


def _split_metrics(pred, y, y_true, ystats: Standardizer) -> dict:
    scale = float(ystats.std[0])
    r = pred - y
    mse_raw = float(np.mean(r * r))
    mse = mse_raw / scale**2
    out = {"n": int(len(y)), "mse": mse, "rmse": math.sqrt(mse), "mse_raw": mse_raw, "rmse_raw": math.sqrt(mse_raw)}
    if y_true is not None:
        rt = pred - y_true
        out["mse_true_raw"] = float(np.mean(rt * rt))
        out["mse_true"] = out["mse_true_raw"] / scale**2
    return out


def evaluate(bundle: ModelBundle, dataset: TwoStageDataset, predictions=None) -> dict:
    """Per-split MSE and RMSE on the standardised and raw response scales.

    The standardised scale uses the bundle's training response statistics.
    """
    pred = predict_many(bundle, dataset.samples) if predictions is None else np.asarray(predictions)
    out = {}
    for name in ("train", "validation", "test"):
        idx = dataset.indices(name)
        if len(idx) == 0:
            continue
        yt = None if dataset.true_responses is None else dataset.true_responses[idx]
        out[name] = _split_metrics(pred[idx], dataset.responses[idx], yt, bundle.response_stats)
    return out


def _check_splits(dataset: TwoStageDataset):
    if len(dataset.indices("train")) == 0 or len(dataset.indices("validation")) == 0:
        raise InputError("dataset needs non-empty train and validation splits")


def _fit_on_features(
    dataset: TwoStageDataset,
    featurizer,
    feats: np.ndarray,
    hidden,
    config: TrainConfig,
    truncation: float | None,
    method: str,
    hp_doc: dict,
    started: float,
) -> ModelBundle:
    tr, va = dataset.indices("train"), dataset.indices("validation")
    fstats = Standardizer.fit(feats[tr])
    ystats = Standardizer.fit(dataset.responses[tr])
    z = fstats.transform(feats)
    yz = (dataset.responses - ystats.mean[0]) / ystats.std[0]
    net = init_network([feats.shape[1], *hidden, 1], config.seed, config.init)
    result = train(net, (z[tr], yz[tr]), (z[va], yz[va]), config)
    bundle = ModelBundle(
        method=method,
        hyperparams=hp_doc,
        featurizer=featurizer,
        feature_stats=fstats,
        response_stats=ystats,
        network=result.network,
        history=result.history,
        truncation=truncation,
        best_epoch=result.best_epoch,
    )
    pred = np.array([_predict_features(bundle, f) for f in feats])
    bundle.predictions = {name: pred[dataset.indices(name)].tolist() for name in ("train", "validation", "test")}
    bundle.metrics = evaluate(bundle, dataset, pred)
    bundle.metrics["runtime_s"] = time.perf_counter() - started
    bundle.metrics["best_epoch"] = result.best_epoch
    bundle.provenance = {
        "dataset_hash": dataset_hash(dataset),
        "dataset_meta": dict(dataset.metadata),
        "seed": config.seed,
        "versions": _versions(),
    }
    return bundle


_FEATURIZERS: dict = {}


def _kefnn_featurizer(hp: KefnnHyperparams) -> KefnnFeaturizer:
    # featurizers are deterministic functions of their key, so reuse is safe
    key = hp.feature_key()
    if key not in _FEATURIZERS:
        if len(_FEATURIZERS) >= 8:
            _FEATURIZERS.pop(next(iter(_FEATURIZERS)))
        _FEATURIZERS[key] = KefnnFeaturizer(hp)
    return _FEATURIZERS[key]


def fit_kefnn(dataset: TwoStageDataset, hp: KefnnHyperparams) -> ModelBundle:
    """Embed, project to ``d1`` features, standardise on training statistics and train."""
    _check_splits(dataset)
    started = time.perf_counter()
    fz = _kefnn_featurizer(hp)
    feats = fz.matrix(dataset.samples)
    if not np.all(np.isfinite(feats)):
        raise NumericalError("non-finite projected features", {"stage": "projection"})
    bundle = _fit_on_features(dataset, fz, feats, hp.hidden, hp.train, hp.truncation, "kefnn", hp.to_dict(), started)
    bundle.provenance["d1_effective"] = fz.d1
    bundle.provenance["d1_capped"] = fz.d1_capped
    bundle.provenance["basis_id"] = fz.operator.basis_id
    return bundle


def fit_baseline(
    dataset: TwoStageDataset,
    method: str,
    size: int | None = None,
    hidden=(128, 128, 128),
    config: TrainConfig | None = None,
) -> ModelBundle:
    """Train the shared network on raw values, B-spline coefficients (``size`` basis
    functions) or FPCA scores (``size`` components, fitted on training curves)."""
    _check_splits(dataset)
    config = config or TrainConfig()
    started = time.perf_counter()
    grid, values = common_grid(dataset.samples)
    if method == "raw":
        fz = RawFeaturizer(grid)
    elif method == "bspline":
        fz = BSplineFeaturizer(grid, int(size))
    elif method == "fpca":
        fz = FpcaFeaturizer(fpca_fit(values[dataset.indices("train")], grid, int(size)))
    else:
        raise InputError(f"unknown baseline {method!r}")
    feats = fz.matrix(dataset.samples)
    doc = {"method": method, "size": size, "hidden": list(hidden), "train": asdict(config)}
    return _fit_on_features(dataset, fz, feats, tuple(hidden), config, None, method, doc, started)


def select_baseline(dataset: TwoStageDataset, method: str, candidates=None, hidden=(128, 128, 128), config=None):
    """Fit every candidate size and keep the best by validation MSE.

    Returns ``(best bundle, table)``; ties go to the smaller size.
    """
    candidates = BASELINE_CANDIDATES[method] if candidates is None else tuple(candidates)
    table = []
    best = None
    for size in candidates:
        try:
            b = fit_baseline(dataset, method, size, hidden, config)
            score = b.metrics["validation"]["mse"]
        except (InputError, NumericalError) as exc:
            b, score = None, math.inf
            log.warning("baseline %s(%s) failed: %s", method, size, exc)
        table.append({"method": method, "size": size, "val_mse": score,
                      "test_mse": b.metrics["test"]["mse"] if b and "test" in b.metrics else math.nan})
        if b is not None and (best is None or score < best[0]):
            best = (score, b)
    if best is None:
        raise NumericalError(f"every {method} candidate failed", {"method": method})
    return best[1], table


def cross_validate(dataset: TwoStageDataset, grid, base_hp: KefnnHyperparams | None = None):
    """Grid search over ``(gamma, beta, d1)`` scored by validation MSE.

    ``grid`` is a sequence of triples or a mapping with ``gamma``, ``beta``
    and ``d1`` lists (their product is searched).  A failing fit scores
    ``inf``.  Ties are broken lexicographically on ``(gamma, beta, d1)``.
    Returns ``(best hyperparameters, score table)``.
    """
    base_hp = base_hp or KefnnHyperparams()
    if isinstance(grid, dict):
        points = list(itertools.product(grid["gamma"], grid["beta"], grid["d1"]))
    else:
        points = [tuple(p) for p in grid]
    if not points:
        raise InputError("empty hyperparameter grid")
    table = []
    for gamma, beta, d1 in points:
        row = {"gamma": float(gamma), "beta": float(beta), "d1": int(d1)}
        try:
            hp = replace(base_hp, gamma=float(gamma), beta=float(beta), d1=int(d1))
            b = fit_kefnn(dataset, hp)
            row.update(val_mse=b.metrics["validation"]["mse"], test_mse=b.metrics.get("test", {}).get("mse", math.nan),
                       d1_effective=b.d1, status="ok")
        except (InputError, NumericalError) as exc:
            row.update(val_mse=math.inf, test_mse=math.nan, d1_effective=None, status=f"failed: {exc}")
        table.append(row)
    best = min(table, key=lambda r: (r["val_mse"], r["gamma"], r["beta"], r["d1"]))
    return replace(base_hp, gamma=best["gamma"], beta=best["beta"], d1=best["d1"]), table


# --------------------------------------------------------------------------
# sweeps
# --------------------------------------------------------------------------

SWEEP_KINDS = ("n_sweep", "m_sweep", "depth_sweep", "noise_sweep")
DEFAULT_SWEEP_VALUES = {
    "n_sweep": (50, 100, 250, 500, 1000, 2000),
    "m_sweep": (500, 1000, 2000, 4000, 8000),
    "depth_sweep": (1, 2, 3, 4, 5, 6, 7, 8),
    "noise_sweep": None,
}
DEFAULT_NOISE_VALUES = {"sigma1_sq": (0.0, 5.0, 10.0, 15.0, 20.0), "sigma2_sq": (0.0, 0.25, 0.5, 0.75, 1.0)}


@dataclass(frozen=True)
class SweepConfig:
    """Settings of one sweep; the swept quantity overrides its base value.

    For ``noise_sweep`` the swept variance is ``noise_parameter`` and the
    other variance is set to 0.  ``depth_sweep`` uses hidden layers of width
    ``width``; the other kinds use ``hp.hidden``.  ``m`` defaults to 5000
    for ``depth_sweep`` and 4000 otherwise.
    """

    kind: str
    values: tuple | None = None
    case: int = 3
    m: int | None = None
    n: int = 500
    fine_grid: int = 4000
    sigma1_sq: float = 3.0
    sigma2_sq: float = 0.05
    noise_parameter: str = "sigma1_sq"
    width: int = 16
    replicates: int = 3
    hp: KefnnHyperparams = field(default_factory=lambda: KefnnHyperparams(gamma=0.02, beta=0.008, d1=150))

    def __post_init__(self):
        if self.kind not in SWEEP_KINDS:
            raise InputError(f"unknown sweep kind {self.kind!r}; expected one of {SWEEP_KINDS}")
        if self.noise_parameter not in DEFAULT_NOISE_VALUES:
            raise InputError(f"noise_parameter must be one of {sorted(DEFAULT_NOISE_VALUES)}")
        if self.replicates < 1:
            raise InputError("replicates must be >= 1")
        if self.m is None:
            object.__setattr__(self, "m", 5000 if self.kind == "depth_sweep" else 4000)
        if isinstance(self.hp, dict):
            object.__setattr__(self, "hp", KefnnHyperparams.from_dict(self.hp))
        vals = self.values
        if vals is None:
            vals = DEFAULT_SWEEP_VALUES[self.kind] or DEFAULT_NOISE_VALUES[self.noise_parameter]
        object.__setattr__(self, "values", tuple(vals))
        if not self.values:
            raise InputError("sweep needs at least one value")

    def setting(self, value) -> dict:
        s = {"m": self.m, "n": self.n, "sigma1_sq": self.sigma1_sq, "sigma2_sq": self.sigma2_sq,
             "hidden": self.hp.hidden}
        if self.kind == "n_sweep":
            s["n"] = int(value)
        elif self.kind == "m_sweep":
            s["m"] = int(value)
        elif self.kind == "depth_sweep":
            s["hidden"] = (self.width,) * int(value)
        else:
            other = "sigma2_sq" if self.noise_parameter == "sigma1_sq" else "sigma1_sq"
            s[self.noise_parameter] = float(value)
            s[other] = 0.0
        return s

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["values"] = list(self.values)
        doc["hp"] = self.hp.to_dict()
        return doc


def _sweep_run(config: SweepConfig, index: int, replicate: int) -> dict:
    value = config.values[index]
    s = config.setting(value)
    seed = index * 1000 + replicate
    started = time.perf_counter()
    if s["n"] > config.fine_grid:
        raise InputError(f"n={s['n']} exceeds the fine grid of {config.fine_grid} points")
    fine = gen_dataset(config.case, s["m"], config.fine_grid, s["sigma1_sq"], s["sigma2_sq"], seed)
    data = subsample_second_stage(fine, s["n"], seed) if s["n"] < config.fine_grid else fine
    del fine
    hp = replace(config.hp, hidden=s["hidden"], train=replace(config.hp.train, seed=seed))
    row = {"kind": config.kind, "value": value, "replicate": replicate, "seed": seed,
           "m": s["m"], "n": s["n"], "sigma1_sq": s["sigma1_sq"], "sigma2_sq": s["sigma2_sq"],
           "depth": len(s["hidden"])}
    try:
        b = fit_kefnn(data, hp)
        row.update(test_mse=b.metrics["test"]["mse"], val_mse=b.metrics["validation"]["mse"],
                   test_mse_raw=b.metrics["test"]["mse_raw"], test_mse_true=b.metrics["test"].get("mse_true"),
                   status="ok")
    except NumericalError as exc:
        row.update(test_mse=math.nan, val_mse=math.nan, test_mse_raw=math.nan, test_mse_true=math.nan,
                   status=f"failed: {exc}")
    row["runtime_s"] = time.perf_counter() - started
    return row


def _sweep_task(args):
    return _sweep_run(*args)


def run_sweep(kind: str | SweepConfig, config: SweepConfig | dict | None = None, workers: int = 1, progress=None):
    """One row per (setting, replicate) with test MSE, seed and runtime.

    Seeds are ``setting_index * 1000 + replicate`` and drive data generation,
    node subsampling, initialisation and shuffling.  ``workers > 1`` runs
    settings in separate processes; results do not depend on it.
    """
    if isinstance(kind, SweepConfig):
        config = kind
    elif isinstance(config, SweepConfig):
        if config.kind != kind:
            raise InputError(f"sweep kind {kind!r} differs from config kind {config.kind!r}")
    else:
        config = SweepConfig(kind=kind, **(config or {}))
    tasks = [(config, i, r) for i in range(len(config.values)) for r in range(config.replicates)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_task, tasks))
    else:
        rows = []
        for t in tasks:
            rows.append(_sweep_task(t))
            if progress is not None:
                progress(rows[-1])
    return rows


def summarize_sweep(rows) -> list[dict]:
    """Mean and standard deviation of test MSE per swept value, in sweep order."""
    out: dict = {}
    for r in rows:
        out.setdefault(r["value"], []).append(r["test_mse"])
    return [
        {"value": v, "mean_test_mse": float(np.mean(ms)), "std_test_mse": float(np.std(ms)), "replicates": len(ms)}
        for v, ms in out.items()
    ]
