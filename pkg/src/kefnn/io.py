"""Dataset and model persistence, metrics records and atomic file writes.

Datasets are directories holding ``observations.csv`` (long format,
``sample_id,t,value``), ``responses.csv`` (``sample_id,y,split``),
``meta.json`` and, for simulated data, ``truth.csv`` with the noiseless
responses and coefficients.  Models are single JSON documents.
"""

from __future__ import annotations

import csv
import io
import json
import os
import subprocess
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .deepnet import ReluNetwork
from .embedding import SampledFunction, trapezoid_weights
from .errors import InputError
from .pipeline import KefnnHyperparams, ModelBundle, featurizer_from_dict
from .simgen import Standardizer, TwoStageDataset

__all__ = [
    "DATASET_SCHEMA_VERSION",
    "MODEL_SCHEMA_VERSION",
    "METRICS_SCHEMA_VERSION",
    "atomic_write_text",
    "write_json",
    "write_csv",
    "write_dataset",
    "read_dataset",
    "save_model",
    "load_model",
    "metrics_record",
    "provenance_string",
]

DATASET_SCHEMA_VERSION = 1
MODEL_SCHEMA_VERSION = 1
METRICS_SCHEMA_VERSION = 1
_FMT = "%.17g"


def atomic_write_text(path, text: str):
    """Write ``text`` to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, doc):
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def write_csv(path, rows, columns=None):
    """Rows of dicts to CSV; floats use 17 significant digits."""
    rows = list(rows)
    if columns is None:
        columns = []
        for r in rows:
            columns.extend(k for k in r if k not in columns)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])
    atomic_write_text(path, buf.getvalue())


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return _FMT % v
    return v


# --------------------------------------------------------------------------
# datasets
# --------------------------------------------------------------------------


def _weight_scheme(dataset: TwoStageDataset) -> str:
    ws = [s.node_weights for s in dataset.samples]
    if all(w is None for w in ws):
        return "none"
    if all(w is not None and np.array_equal(w, trapezoid_weights(s.nodes[:, 0])) for w, s in zip(ws, dataset.samples)):
        return "trapezoid"
    raise InputError("only trapezoidal or absent node weights can be serialised")


def write_dataset(dataset: TwoStageDataset, path) -> Path:
    """Write the dataset directory; every file is replaced atomically."""
    path = Path(path)
    if any(s.dim != 1 for s in dataset.samples):
        raise InputError("the CSV format stores one-dimensional grids only")
    scheme = _weight_scheme(dataset)
    buf = io.StringIO()
    buf.write("sample_id,t,value\n")
    for i, s in enumerate(dataset.samples):
        block = np.column_stack([np.full(len(s), i), s.nodes[:, 0], s.values])
        np.savetxt(buf, block, fmt=["%d", _FMT, _FMT], delimiter=",")
    atomic_write_text(path / "observations.csv", buf.getvalue())
    buf = io.StringIO()
    buf.write("sample_id,y,split\n")
    for i, (y, sp) in enumerate(zip(dataset.responses, dataset.split)):
        buf.write(f"{i},{_FMT % y},{sp}\n")
    atomic_write_text(path / "responses.csv", buf.getvalue())
    if dataset.true_responses is not None and dataset.coefficients is not None:
        c = np.asarray(dataset.coefficients)
        buf = io.StringIO()
        buf.write("sample_id,y_true," + ",".join(f"c{k + 1}" for k in range(c.shape[1])) + "\n")
        block = np.column_stack([np.arange(len(c)), dataset.true_responses, c])
        np.savetxt(buf, block, fmt=["%d"] + [_FMT] * (c.shape[1] + 1), delimiter=",")
        atomic_write_text(path / "truth.csv", buf.getvalue())
    meta = dict(dataset.metadata)
    meta.update(schema_version=DATASET_SCHEMA_VERSION, node_weights=scheme, m=len(dataset))
    write_json(path / "meta.json", meta)
    return path


def _read_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise InputError(f"missing file {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def _check_header(path: Path, expected: list[str]) -> list[str]:
    if not path.exists():
        raise InputError(f"missing file {path}")
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), None)
    if header is None or header[: len(expected)] != expected:
        raise InputError(f"{path.name}: header {header} does not start with {expected}")
    return header


def read_dataset(path) -> TwoStageDataset:
    """Load a dataset directory written by :func:`write_dataset` or by hand in the same schema.

    ``meta.json`` needs ``schema_version``; all other metadata is optional.
    Samples may have different numbers of nodes.
    """
    path = Path(path)
    meta = _read_json(path / "meta.json")
    found = meta.get("schema_version")
    if found != DATASET_SCHEMA_VERSION:
        raise InputError(f"dataset schema version mismatch: expected {DATASET_SCHEMA_VERSION}, found {found}")
    _check_header(path / "observations.csv", ["sample_id", "t", "value"])
    try:
        obs = np.loadtxt(path / "observations.csv", delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise InputError(f"observations.csv: {exc}") from None
    if obs.shape[1] != 3:
        raise InputError("observations.csv must have three columns")
    _check_header(path / "responses.csv", ["sample_id", "y", "split"])
    ids, ys, splits = [], [], []
    with open(path / "responses.csv", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise InputError(f"responses.csv line {lineno}: expected 3 fields, got {len(row)}")
            try:
                ids.append(int(row[0]))
                ys.append(float(row[1]))
            except ValueError:
                raise InputError(f"responses.csv line {lineno}: bad number") from None
            splits.append(row[2])
    ids = np.array(ids)
    sid = obs[:, 0].astype(np.int64)
    if not np.array_equal(sid, obs[:, 0]):
        raise InputError("observations.csv: sample_id must be integer")
    scheme = meta.get("node_weights", "none")
    if scheme not in ("none", "trapezoid"):
        raise InputError(f"unknown node_weights scheme {scheme!r}")
    order = np.argsort(sid, kind="stable")
    sid, obs = sid[order], obs[order]
    bounds = np.flatnonzero(np.diff(sid)) + 1
    starts = np.concatenate([[0], bounds])
    stops = np.concatenate([bounds, [len(sid)]])
    by_id = {}
    for a, b in zip(starts, stops):
        t = obs[a:b, 1]
        w = trapezoid_weights(t) if scheme == "trapezoid" else None
        by_id[int(sid[a])] = SampledFunction(t[:, None], obs[a:b, 2], w)
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise InputError(f"responses for samples without observations: {missing[:5]}")
    extra = sorted(set(by_id) - set(ids.tolist()))
    if extra:
        raise InputError(f"observations for samples without responses: {extra[:5]}")
    # identical grids share one node array
    samples = [by_id[i] for i in ids]
    first = samples[0].nodes if samples else None
    for s in samples[1:]:
        if s.nodes.shape == first.shape and np.array_equal(s.nodes, first):
            s.nodes = first
    coefs = y_true = None
    truth = path / "truth.csv"
    if truth.exists():
        tab = np.loadtxt(truth, delimiter=",", skiprows=1, ndmin=2)
        pos = {int(i): k for k, i in enumerate(tab[:, 0])}
        rows = tab[[pos[i] for i in ids]]
        y_true, coefs = rows[:, 1], rows[:, 2:]
    meta = {k: v for k, v in meta.items() if k not in ("schema_version", "node_weights")}
    return TwoStageDataset(samples, np.array(ys), np.array(splits, dtype=object), coefs, y_true, meta)


# --------------------------------------------------------------------------
# models
# --------------------------------------------------------------------------


def save_model(bundle: ModelBundle, path) -> Path:
    doc = {
        "schema": "kefnn-model",
        "schema_version": MODEL_SCHEMA_VERSION,
        "method": bundle.method,
        "hyperparams": bundle.hyperparams,
        "featurizer": bundle.featurizer.to_dict(),
        "feature_stats": bundle.feature_stats.to_dict(),
        "response_stats": bundle.response_stats.to_dict(),
        "truncation": bundle.truncation,
        "network": bundle.network.to_dict(),
        "history": bundle.history,
        "best_epoch": bundle.best_epoch,
        "metrics": bundle.metrics,
        "predictions": bundle.predictions,
        "provenance": bundle.provenance,
    }
    path = Path(path)
    write_json(path, doc)
    return path


def load_model(path) -> ModelBundle:
    """Rebuild a bundle; predictions match the saved model bit for bit."""
    path = Path(path)
    doc = _read_json(path)
    if doc.get("schema") != "kefnn-model":
        raise InputError(f"{path} is not a model document")
    found = doc.get("schema_version")
    if found != MODEL_SCHEMA_VERSION:
        raise InputError(f"model schema version mismatch: expected {MODEL_SCHEMA_VERSION}, found {found}")
    try:
        hp = KefnnHyperparams.from_dict(doc["hyperparams"]) if doc["method"] == "kefnn" else None
        featurizer = featurizer_from_dict(doc["featurizer"], hp)
        fstats = Standardizer.from_dict(doc["feature_stats"])
        ystats = Standardizer.from_dict(doc["response_stats"])
        net = ReluNetwork.from_dict(doc["network"])
        if fstats.mean.shape != (featurizer.dim,):
            raise InputError(f"feature statistics have {fstats.mean.shape[0]} entries for {featurizer.dim} features")
        return ModelBundle(
            method=doc["method"],
            hyperparams=doc["hyperparams"],
            featurizer=featurizer,
            feature_stats=fstats,
            response_stats=ystats,
            network=net,
            history=doc["history"],
            truncation=doc.get("truncation"),
            best_epoch=doc.get("best_epoch", 0),
            metrics=doc.get("metrics", {}),
            predictions=doc.get("predictions", {}),
            provenance=doc.get("provenance", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: inconsistent model document ({type(exc).__name__}: {exc})") from None


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------


def provenance_string() -> str:
    """``kefnn <version>`` plus the source checkout's short commit when available."""
    here = Path(__file__).resolve().parent
    try:
        rev = subprocess.run(
            ["git", "-C", str(here), "rev-parse", "--short", "HEAD"],
            capture_output=True, text=True, timeout=5, check=False,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"kefnn {__version__}" + (f" ({rev})" if rev else "")


def metrics_record(command: str, splits: dict, seed=None, runtime_s=None, **extra) -> dict:
    for name, m in splits.items():
        if isinstance(m, dict) and m.get("mse", 0.0) < 0:
            raise InputError(f"negative MSE in split {name}")
    rec = {
        "schema_version": METRICS_SCHEMA_VERSION,
        "command": command,
        "seed": seed,
        "runtime_s": runtime_s,
        "provenance": provenance_string(),
        "splits": splits,
    }
    rec.update(extra)
    return rec
