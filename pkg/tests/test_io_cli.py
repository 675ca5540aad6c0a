import hashlib
import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from kefnn.cli import cli
from kefnn.config import ConfigError, load_config_file, resolve_config
from kefnn.deepnet import TrainConfig
from kefnn.embedding import SampledFunction
from kefnn.errors import InputError
from kefnn.io import (
    DATASET_SCHEMA_VERSION,
    MODEL_SCHEMA_VERSION,
    load_model,
    metrics_record,
    read_dataset,
    save_model,
    write_dataset,
)
from kefnn.pipeline import KefnnHyperparams, evaluate, fit_baseline, fit_kefnn, predict_many
from kefnn.simgen import TwoStageDataset, gen_dataset

SMALL = KefnnHyperparams(d1=20, hidden=(16,), train=TrainConfig(epochs=5, batch_size=32))


def tree_digest(path: Path) -> dict:
    return {str(p.relative_to(path)): hashlib.sha1(p.read_bytes()).hexdigest() for p in sorted(path.rglob("*"))
            if p.is_file()}


@pytest.fixture(scope="module")
def small_data():
    return gen_dataset(2, m=80, seed=5)


@pytest.fixture(scope="module")
def small_bundle(small_data):
    return fit_kefnn(small_data, SMALL)


# --------------------------------------------------------------------------
# datasets
# --------------------------------------------------------------------------


def test_dataset_round_trip_is_lossless(tmp_path, small_data):
    write_dataset(small_data, tmp_path / "d")
    back = read_dataset(tmp_path / "d")
    assert len(back) == len(small_data)
    for a, b in zip(small_data.samples, back.samples):
        assert np.array_equal(a.nodes, b.nodes) and np.array_equal(a.values, b.values)
        assert np.array_equal(a.node_weights, b.node_weights)
    assert np.array_equal(back.responses, small_data.responses)
    assert list(back.split) == list(small_data.split)
    assert np.array_equal(back.true_responses, small_data.true_responses)
    assert np.array_equal(back.coefficients, small_data.coefficients)
    assert back.metadata == small_data.metadata


def test_dataset_files_and_headers(tmp_path, small_data):
    write_dataset(small_data, tmp_path)
    assert (tmp_path / "observations.csv").read_text().splitlines()[0] == "sample_id,t,value"
    assert (tmp_path / "responses.csv").read_text().splitlines()[0] == "sample_id,y,split"
    meta = json.loads((tmp_path / "meta.json").read_text())
    assert meta["schema_version"] == DATASET_SCHEMA_VERSION
    assert {"case", "sigma1_sq", "sigma2_sq", "seed"} <= set(meta)


def test_heterogeneous_grids_round_trip(tmp_path):
    r = np.random.default_rng(1)
    samples = [SampledFunction(np.sort(r.uniform(size=k)), r.normal(size=k)) for k in (3, 17, 9, 40)]
    data = TwoStageDataset(samples, r.normal(size=4), np.array(["train", "train", "validation", "test"]))
    write_dataset(data, tmp_path)
    back = read_dataset(tmp_path)
    assert [len(s) for s in back.samples] == [3, 17, 9, 40]
    for a, b in zip(samples, back.samples):
        assert np.array_equal(a.nodes, b.nodes) and np.array_equal(a.values, b.values)
        assert b.node_weights is None


def test_hand_built_external_dataset(tmp_path):
    (tmp_path / "observations.csv").write_text(
        "sample_id,t,value\n"
        "10,0.0,1.0\n10,0.5,2.0\n10,1.0,3.0\n"
        "2,0.0,0.0\n2,0.25,0.5\n2,0.75,0.25\n2,1.0,0.0\n"
        "7,0.1,-1.0\n7,0.9,1.0\n")
    (tmp_path / "responses.csv").write_text("sample_id,y,split\n10,1.5,train\n2,-0.5,validation\n7,0.0,test\n")
    (tmp_path / "meta.json").write_text(json.dumps({"schema_version": 1, "source": "hand"}))
    data = read_dataset(tmp_path)
    assert [len(s) for s in data.samples] == [3, 4, 2]
    assert data.responses.tolist() == [1.5, -0.5, 0.0]
    assert list(data.split) == ["train", "validation", "test"]
    assert data.samples[1].values.tolist() == [0.0, 0.5, 0.25, 0.0]
    assert data.true_responses is None and data.metadata == {"source": "hand"}


def test_dataset_schema_mismatch_reports_versions(tmp_path, small_data):
    write_dataset(small_data, tmp_path)
    meta = json.loads((tmp_path / "meta.json").read_text())
    meta["schema_version"] = 99
    (tmp_path / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(InputError, match="expected 1, found 99"):
        read_dataset(tmp_path)


def test_dataset_inconsistent_files_rejected(tmp_path, small_data):
    write_dataset(small_data, tmp_path)
    lines = (tmp_path / "responses.csv").read_text().splitlines()
    (tmp_path / "responses.csv").write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(InputError, match="without responses"):
        read_dataset(tmp_path)
    (tmp_path / "responses.csv").write_text("id,y,split\n")
    with pytest.raises(InputError, match="header"):
        read_dataset(tmp_path)
    with pytest.raises(InputError, match="missing"):
        read_dataset(tmp_path / "nowhere")


def test_interrupted_write_leaves_previous_file(tmp_path, small_data, monkeypatch):
    write_dataset(small_data, tmp_path)
    before = tree_digest(tmp_path)
    import kefnn.io as kio

    def boom(src, dst):
        raise OSError("disk full")

    monkeypatch.setattr(kio.os, "replace", boom)
    with pytest.raises(OSError):
        write_dataset(gen_dataset(1, m=10, seed=9), tmp_path)
    assert tree_digest(tmp_path) == before


# --------------------------------------------------------------------------
# models
# --------------------------------------------------------------------------


def probes(n=100, seed=0):
    d = gen_dataset(2, m=n, seed=seed + 100)
    return d.samples


def test_model_round_trip_predictions_bitwise(tmp_path, small_bundle):
    save_model(small_bundle, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    p = probes()
    assert np.array_equal(predict_many(back, p), predict_many(small_bundle, p))
    assert back.history == small_bundle.history and back.d1 == small_bundle.d1
    doc = json.loads((tmp_path / "m.json").read_text())
    assert doc["schema_version"] == MODEL_SCHEMA_VERSION
    assert doc["featurizer"]["eigensystem"]["count"] == 20
    assert {"kernel", "measure", "provenance"} <= set(doc["featurizer"]["eigensystem"])
    assert doc["network"]["layer_dims"] == [20, 16, 1]


@pytest.mark.parametrize("method,size", [("raw", None), ("bspline", 9), ("fpca", 5)])
def test_baseline_model_round_trip(tmp_path, small_data, method, size):
    b = fit_baseline(small_data, method, size, (8,), TrainConfig(epochs=3, batch_size=16))
    save_model(b, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert np.array_equal(predict_many(back, small_data.samples), predict_many(b, small_data.samples))


def test_nystrom_model_round_trip(tmp_path, small_data):
    hp = replace(SMALL, basis="nystrom", nystrom_nodes=200, truncation=3.0)
    b = fit_kefnn(small_data, hp)
    save_model(b, tmp_path / "m.json")
    assert "node_values" in json.loads((tmp_path / "m.json").read_text())["featurizer"]["eigensystem"]
    back = load_model(tmp_path / "m.json")
    p = probes(30)
    assert np.array_equal(predict_many(back, p), predict_many(b, p))


def test_truncated_model_file_rejected(tmp_path, small_bundle):
    save_model(small_bundle, tmp_path / "m.json")
    text = (tmp_path / "m.json").read_text()
    (tmp_path / "cut.json").write_text(text[: len(text) // 2])
    with pytest.raises(InputError, match="malformed"):
        load_model(tmp_path / "cut.json")


def test_model_version_and_shape_checks(tmp_path, small_bundle):
    save_model(small_bundle, tmp_path / "m.json")
    doc = json.loads((tmp_path / "m.json").read_text())
    bad = dict(doc, schema_version=7)
    (tmp_path / "v.json").write_text(json.dumps(bad))
    with pytest.raises(InputError, match="expected 1, found 7"):
        load_model(tmp_path / "v.json")
    shaped = json.loads(json.dumps(doc))
    shaped["feature_stats"]["mean"] = shaped["feature_stats"]["mean"][:-1]
    shaped["feature_stats"]["std"] = shaped["feature_stats"]["std"][:-1]
    shaped["feature_stats"]["floored"] = shaped["feature_stats"]["floored"][:-1]
    (tmp_path / "s.json").write_text(json.dumps(shaped))
    with pytest.raises(InputError):
        load_model(tmp_path / "s.json")
    (tmp_path / "o.json").write_text(json.dumps({"schema": "other"}))
    with pytest.raises(InputError):
        load_model(tmp_path / "o.json")


@pytest.mark.slow
def test_case1_default_bundle_reproduces_logged_test_mse(tmp_path):
    # case-1 hyperparameters, shortened training: the chain under test does not depend on the epoch count
    hp = KefnnHyperparams(train=TrainConfig(epochs=10))
    bundle = fit_kefnn(gen_dataset(1, m=4000, seed=3), hp)
    save_model(bundle, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    again = evaluate(back, gen_dataset(1, m=4000, seed=3))
    assert again["test"]["mse"] == back.metrics["test"]["mse"] == bundle.metrics["test"]["mse"]


# --------------------------------------------------------------------------
# metrics and config
# --------------------------------------------------------------------------


def test_metrics_record_schema():
    rec = metrics_record("fit", {"test": {"mse": 0.5}}, seed=1, runtime_s=2.0, method="kefnn")
    assert rec["schema_version"] == 1 and rec["command"] == "fit" and rec["seed"] == 1
    assert isinstance(rec["provenance"], str) and rec["provenance"]
    with pytest.raises(InputError):
        metrics_record("fit", {"test": {"mse": -1.0}})


def test_config_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="bogus"):
        resolve_config("gen", {"bogus": 1})
    with pytest.raises(ConfigError, match="hp.gama"):
        resolve_config("fit", {"hp": {"gama": 0.1}})
    with pytest.raises(ConfigError, match="hp.train.lr"):
        resolve_config("fit", {"hp": {"train": {"lr": 0.1}}})
    cfg = resolve_config("fit", {"hp": {"gamma": 0.1}}, {"out": "x"})
    assert cfg["hp"]["gamma"] == 0.1 and cfg["hp"]["beta"] == 0.008 and cfg["out"] == "x"


def test_config_parse_error_has_line_and_column(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{\n  "m": 10,\n  "case": ,\n}')
    with pytest.raises(ConfigError, match="line 3, column 11"):
        load_config_file(p)


# --------------------------------------------------------------------------
# command line
# --------------------------------------------------------------------------


def test_gen_command(tmp_path):
    out = tmp_path / "d"
    assert cli(["gen", "--case", "1", "--m", "40", "--seed", "7", "--out", str(out)]) == 0
    for name in ("observations.csv", "responses.csv", "meta.json", "truth.csv", "config.resolved.json",
                 "metrics.json"):
        assert (out / name).exists()
    cfg = json.loads((out / "config.resolved.json").read_text())
    assert cfg == resolve_config("gen", {}, {"case": 1, "m": 40, "seed": 7, "out": str(out)})
    data = read_dataset(out)
    ref = gen_dataset(1, m=40, seed=7)
    assert np.array_equal(data.responses, ref.responses)
    rec = json.loads((out / "metrics.json").read_text())
    assert rec["splits"]["test"]["n"] == 8 and rec["schema_version"] == 1


def test_unknown_flag_exits_2_without_files(tmp_path, capsys):
    assert cli(["gen", "--case", "1", "--bogus", "--out", str(tmp_path / "d")]) == 2
    assert not (tmp_path / "d").exists() and list(tmp_path.iterdir()) == []
    assert cli(["frobnicate"]) == 2


def test_config_error_exits_2(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text('{"m": 10, "cses": 2}')
    assert cli(["gen", "--config", str(p), "--out", str(tmp_path / "d")]) == 2
    assert "cses" in capsys.readouterr().err
    p.write_text('{"m": 10,\n "case": }')
    assert cli(["gen", "--config", str(p), "--out", str(tmp_path / "d")]) == 2
    assert "line 2" in capsys.readouterr().err
    assert not (tmp_path / "d").exists()


def test_fit_eval_chain_and_inputs_untouched(tmp_path):
    data_dir, fit_dir, eval_dir = tmp_path / "d", tmp_path / "f", tmp_path / "e"
    assert cli(["gen", "--case", "2", "--m", "60", "--out", str(data_dir)]) == 0
    cfg = tmp_path / "fit.json"
    cfg.write_text(json.dumps({"hp": {"d1": 10, "hidden": [8], "train": {"batch_size": 16}}}))
    before = tree_digest(data_dir)
    assert cli(["fit", "--config", str(cfg), "--data", str(data_dir), "--epochs", "3", "--out", str(fit_dir)]) == 0
    assert tree_digest(data_dir) == before
    fit_metrics = json.loads((fit_dir / "metrics.json").read_text())
    resolved = json.loads((fit_dir / "config.resolved.json").read_text())
    assert resolved["hp"]["train"]["epochs"] == 3 and resolved["hp"]["d1"] == 10
    model_before = tree_digest(fit_dir)
    assert cli(["eval", "--model", str(fit_dir / "model.json"), "--data", str(data_dir), "--out", str(eval_dir)]) == 0
    assert tree_digest(fit_dir) == model_before and tree_digest(data_dir) == before
    ev = json.loads((eval_dir / "metrics.json").read_text())
    assert ev["splits"]["test"]["mse"] == fit_metrics["splits"]["test"]["mse"]
    assert ev["provenance"] and ev["schema_version"] == 1


def test_baseline_and_cv_commands(tmp_path):
    data_dir = tmp_path / "d"
    assert cli(["gen", "--case", "1", "--m", "60", "--out", str(data_dir)]) == 0
    cfg = tmp_path / "b.json"
    cfg.write_text(json.dumps({"hidden": [8], "train": {"batch_size": 16}}))
    out = tmp_path / "b"
    assert cli(["baseline", "--config", str(cfg), "--data", str(data_dir), "--method", "fpca", "--sizes", "3", "5",
                "--epochs", "2", "--out", str(out)]) == 0
    assert (out / "selection.csv").read_text().count("\n") == 3
    cv_cfg = tmp_path / "cv.json"
    cv_cfg.write_text(json.dumps({"grid": {"gamma": [0.05], "beta": [0.01], "d1": [5, 8]},
                                  "hp": {"hidden": [8], "train": {"batch_size": 16}}}))
    out = tmp_path / "cv"
    assert cli(["cv", "--config", str(cv_cfg), "--data", str(data_dir), "--epochs", "2", "--out", str(out)]) == 0
    assert (out / "cv_table.csv").read_text().count("\n") == 3
    best = json.loads((out / "best_hyperparams.json").read_text())
    assert best["d1"] in (5, 8)


def test_sweep_command(tmp_path):
    cfg = tmp_path / "s.json"
    cfg.write_text(json.dumps({"m": 60, "fine_grid": 100, "hp": {"d1": 8, "hidden": [8],
                                                                 "train": {"batch_size": 16}}}))
    out = tmp_path / "s"
    assert cli(["sweep", "--config", str(cfg), "--kind", "n_sweep", "--values", "20", "40", "--replicates", "1",
                "--epochs", "2", "--out", str(out)]) == 0
    rows = (out / "sweep.csv").read_text().splitlines()
    assert len(rows) == 3 and rows[0].startswith("kind,value")
    assert json.loads((out / "config.resolved.json").read_text())["values"] == [20, 40]


def test_numerical_failure_exits_3_with_record(tmp_path, monkeypatch):
    import kefnn.cli as kcli
    from kefnn.errors import NumericalError

    data_dir = tmp_path / "d"
    assert cli(["gen", "--case", "1", "--m", "30", "--out", str(data_dir)]) == 0

    def fail(*a, **k):
        raise NumericalError("loss became NaN", {"epoch": 4, "batch": 2})

    monkeypatch.setattr(kcli, "fit_kefnn", fail)
    out = tmp_path / "f"
    assert cli(["fit", "--data", str(data_dir), "--out", str(out)]) == 3
    rec = json.loads((out / "failure.json").read_text())
    assert rec["record"] == {"epoch": 4, "batch": 2} and rec["command"] == "fit"


def test_missing_required_input_exits_2(tmp_path):
    assert cli(["fit", "--out", str(tmp_path / "f")]) == 2
    assert cli(["gen"]) == 2
