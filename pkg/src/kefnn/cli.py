"""Command-line interface.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, load_config_file, resolve_config
from .deepnet import TrainConfig
from .errors import InputError, NumericalError
from .io import metrics_record, read_dataset, save_model, load_model, write_csv, write_dataset, write_json
from .pipeline import (
    BASELINE_CANDIDATES,
    KefnnHyperparams,
    SweepConfig,
    cross_validate,
    evaluate,
    fit_kefnn,
    run_sweep,
    select_baseline,
    summarize_sweep,
)
from .simgen import ProcessSpec, gen_dataset

__all__ = ["cli", "main", "build_parser"]

log = logging.getLogger("kefnn")

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 2, 3

TABLE1_REFERENCE = {
    "raw": (0.038, 0.275, 0.334, 0.339),
    "bspline": (0.019, 0.206, 0.251, 0.257),
    "fpca": (0.023, 0.134, 0.667, 0.693),
    "kefnn": (0.001, 0.100, 0.142, 0.191),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kefnn", description="Kernel-embedded functional neural networks.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=False):
        sp.add_argument("--config", help="JSON config file; command-line flags override it")
        sp.add_argument("--out", help="output directory")
        if data:
            sp.add_argument("--data", help="dataset directory")
        return sp

    g = common(sub.add_parser("gen", help="simulate a dataset"))
    g.add_argument("--case", type=int)
    g.add_argument("--m", type=int)
    g.add_argument("--n", type=int, help="grid points per curve")
    g.add_argument("--sigma1-sq", type=float, dest="sigma1_sq")
    g.add_argument("--sigma2-sq", type=float, dest="sigma2_sq")
    g.add_argument("--seed", type=int)
    g.add_argument("--swap-betas", action="store_true", default=None, dest="swap_betas")

    f = common(sub.add_parser("fit", help="train a KEFNN model"), data=True)
    _hp_flags(f)

    e = common(sub.add_parser("eval", help="score a saved model on a dataset"), data=True)
    e.add_argument("--model", help="model JSON file")

    c = common(sub.add_parser("cv", help="grid search over (gamma, beta, d1)"), data=True)
    c.add_argument("--epochs", type=int)

    s = common(sub.add_parser("sweep", help="run a sweep experiment"))
    s.add_argument("--kind", choices=("n_sweep", "m_sweep", "depth_sweep", "noise_sweep"))
    s.add_argument("--values", type=float, nargs="+")
    s.add_argument("--noise-parameter", choices=("sigma1_sq", "sigma2_sq"), dest="noise_parameter")
    s.add_argument("--replicates", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--epochs", type=int)

    b = common(sub.add_parser("baseline", help="train a baseline reducer plus network"), data=True)
    b.add_argument("--method", choices=("raw", "bspline", "fpca"))
    b.add_argument("--sizes", type=int, nargs="+", help="candidate basis sizes / component counts")
    b.add_argument("--epochs", type=int)

    r = common(sub.add_parser("replicate-table1", help="four cases x four methods test MSE table"))
    r.add_argument("--m", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--epochs", type=int)
    r.add_argument("--cases", type=int, nargs="+")
    return p


def _hp_flags(sp):
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--beta", type=float)
    sp.add_argument("--d1", type=int)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--seed", type=int)


def _split_metrics(metrics: dict) -> dict:
    return {k: v for k, v in metrics.items() if isinstance(v, dict)}


def _out_dir(cfg) -> Path:
    if not cfg.get("out"):
        raise ConfigError("an output directory is required (--out or config key 'out')")
    return Path(cfg["out"])


def _need(cfg, key):
    if not cfg.get(key):
        raise ConfigError(f"config key '{key}' is required (--{key})")
    return cfg[key]


def _with_epochs(hp_doc: dict, epochs, seed=None) -> dict:
    doc = dict(hp_doc)
    tr = dict(doc.get("train", {}))
    if epochs is not None:
        tr["epochs"] = epochs
    if seed is not None:
        tr["seed"] = seed
    doc["train"] = tr
    return doc


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def _cmd_gen(cfg):
    out = _out_dir(cfg)
    started = time.perf_counter()
    spec = ProcessSpec(int(cfg["case"]), swap_betas=bool(cfg["swap_betas"]))
    data = gen_dataset(spec, int(cfg["m"]), int(cfg["n"]), cfg["sigma1_sq"], cfg["sigma2_sq"], int(cfg["seed"]))
    write_dataset(data, out)
    counts = {name: {"n": int(len(data.indices(name)))} for name in ("train", "validation", "test")}
    write_json(out / "metrics.json", metrics_record("gen", counts, seed=int(cfg["seed"]),
                                                     runtime_s=time.perf_counter() - started))
    write_json(out / "config.resolved.json", cfg)
    return EXIT_OK


def _cmd_fit(cfg, args):
    out = _out_dir(cfg)
    data = read_dataset(_need(cfg, "data"))
    hp_doc = dict(cfg["hp"])
    for key in ("gamma", "beta", "d1"):
        if getattr(args, key, None) is not None:
            hp_doc[key] = getattr(args, key)
    hp_doc = _with_epochs(hp_doc, getattr(args, "epochs", None), getattr(args, "seed", None))
    cfg["hp"] = hp_doc
    hp = KefnnHyperparams.from_dict(hp_doc)
    bundle = fit_kefnn(data, hp)
    save_model(bundle, out / "model.json")
    rec = metrics_record("fit", _split_metrics(bundle.metrics), seed=hp.train.seed,
                         runtime_s=bundle.metrics["runtime_s"], method="kefnn", d1=bundle.d1)
    write_json(out / "metrics.json", rec)
    write_json(out / "config.resolved.json", cfg)
    return EXIT_OK


def _cmd_eval(cfg):
    out = _out_dir(cfg)
    started = time.perf_counter()
    bundle = load_model(_need(cfg, "model"))
    data = read_dataset(_need(cfg, "data"))
    metrics = evaluate(bundle, data)
    rec = metrics_record("eval", metrics, seed=bundle.provenance.get("seed"),
                         runtime_s=time.perf_counter() - started, method=bundle.method)
    write_json(out / "metrics.json", rec)
    write_json(out / "config.resolved.json", cfg)
    return EXIT_OK


def _cmd_cv(cfg, args):
    out = _out_dir(cfg)
    data = read_dataset(_need(cfg, "data"))
    cfg["hp"] = _with_epochs(cfg["hp"], getattr(args, "epochs", None))
    started = time.perf_counter()
    best, table = cross_validate(data, cfg["grid"], KefnnHyperparams.from_dict(cfg["hp"]))
    write_csv(out / "cv_table.csv", table)
    write_json(out / "best_hyperparams.json", best.to_dict())
    write_json(out / "metrics.json", metrics_record("cv", {}, runtime_s=time.perf_counter() - started,
                                                     best={"gamma": best.gamma, "beta": best.beta, "d1": best.d1}))
    write_json(out / "config.resolved.json", cfg)
    return EXIT_OK


def _cmd_sweep(cfg, args):
    out = _out_dir(cfg)
    cfg["hp"] = _with_epochs(cfg["hp"], getattr(args, "epochs", None))
    keys = ("kind", "values", "case", "m", "n", "fine_grid", "sigma1_sq", "sigma2_sq", "noise_parameter", "width",
            "replicates")
    sc = SweepConfig(**{k: cfg[k] for k in keys}, hp=KefnnHyperparams.from_dict(cfg["hp"]))
    cfg["values"], cfg["m"] = list(sc.values), sc.m
    started = time.perf_counter()

    def progress(row):
        log.info("%s value=%s replicate=%d test_mse=%.5g (%.1fs)", row["kind"], row["value"], row["replicate"],
                 row["test_mse"], row["runtime_s"])

    rows = run_sweep(sc, workers=int(cfg["workers"]), progress=progress)
    write_csv(out / "sweep.csv", rows)
    write_csv(out / "sweep_summary.csv", summarize_sweep(rows))
    write_json(out / "metrics.json", metrics_record("sweep", {}, runtime_s=time.perf_counter() - started,
                                                     kind=sc.kind, summary=summarize_sweep(rows)))
    write_json(out / "config.resolved.json", cfg)
    return EXIT_OK


def _cmd_baseline(cfg, args):
    out = _out_dir(cfg)
    data = read_dataset(_need(cfg, "data"))
    train_doc = dict(cfg["train"])
    if getattr(args, "epochs", None) is not None:
        train_doc["epochs"] = args.epochs
    cfg["train"] = train_doc
    method = cfg["method"]
    if method not in BASELINE_CANDIDATES:
        raise ConfigError(f"unknown baseline method {method!r}")
    bundle, table = select_baseline(data, method, cfg["sizes"], tuple(cfg["hidden"]), TrainConfig(**train_doc))
    save_model(bundle, out / "model.json")
    write_csv(out / "selection.csv", table)
    rec = metrics_record("baseline", _split_metrics(bundle.metrics), seed=train_doc.get("seed"),
                         runtime_s=bundle.metrics["runtime_s"], method=method,
                         size=bundle.hyperparams.get("size"))
    write_json(out / "metrics.json", rec)
    write_json(out / "config.resolved.json", cfg)
    return EXIT_OK


def replicate_table1(cfg: dict, out: Path | None = None) -> list[dict]:
    """Fit every method on every case; returns long-format rows (one per case and method)."""
    rows = []
    train = TrainConfig(epochs=int(cfg["epochs"]), seed=int(cfg["seed"]))
    for case in cfg["cases"]:
        data = gen_dataset(int(case), int(cfg["m"]), int(cfg["n"]), seed=int(cfg["seed"]))
        for method in cfg["methods"]:
            started = time.perf_counter()
            if method == "kefnn":
                over = dict(cfg["hp"].get(str(case), {}))
                hp = KefnnHyperparams(beta=float(cfg["beta"]), d1=int(cfg["d1"]), train=train)
                hp = replace(hp, **over) if over else hp
                bundle = fit_kefnn(data, hp)
                size = None
                extra = {"gamma": hp.gamma, "beta": hp.beta, "d1": bundle.d1}
            else:
                bundle, _ = select_baseline(data, method, None, (128, 128, 128), train)
                size = bundle.hyperparams.get("size")
                extra = {}
            t = bundle.metrics["test"]
            row = {"case": int(case), "method": method, "test_mse": t["mse"], "val_mse": bundle.metrics["validation"]["mse"],
                   "test_mse_raw": t["mse_raw"], "test_mse_true": t.get("mse_true"), "size": size,
                   "reference_mse": TABLE1_REFERENCE[method][int(case) - 1],
                   "runtime_s": time.perf_counter() - started, **extra}
            log.info("case %s %s: test MSE %.4g (%.0fs)", case, method, t["mse"], row["runtime_s"])
            rows.append(row)
            if out is not None:
                write_json(out / f"case{case}_{method}_metrics.json",
                           metrics_record("replicate-table1", _split_metrics(bundle.metrics), seed=train.seed,
                                          runtime_s=row["runtime_s"], method=method, case=int(case), size=size))
    return rows


def table1_wide(rows) -> list[dict]:
    cases = sorted({r["case"] for r in rows})
    out = []
    for method in ("raw", "bspline", "fpca", "kefnn"):
        sel = {r["case"]: r["test_mse"] for r in rows if r["method"] == method}
        if sel:
            out.append({"method": method, **{f"case{c}": sel.get(c) for c in cases}})
    return out


def _cmd_table1(cfg):
    out = _out_dir(cfg)
    bad = [m for m in cfg["methods"] if m not in TABLE1_REFERENCE]
    if bad:
        raise ConfigError(f"unknown methods {bad}")
    started = time.perf_counter()
    rows = replicate_table1(cfg, out)
    write_csv(out / "table1_long.csv", rows)
    write_csv(out / "table1.csv", table1_wide(rows))
    write_json(out / "metrics.json", metrics_record("replicate-table1", {}, seed=cfg["seed"],
                                                     runtime_s=time.perf_counter() - started, rows=rows))
    write_json(out / "config.resolved.json", cfg)
    return EXIT_OK


_DIRECT = {"m", "n", "case", "seed", "sigma1_sq", "sigma2_sq", "swap_betas", "out", "data", "model", "kind", "values",
           "noise_parameter", "replicates", "workers", "method", "sizes", "cases"}


def cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    if not logging.getLogger().handlers:
        logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    out = None
    try:
        file_doc = load_config_file(args.config) if args.config else {}
        overrides = {k: v for k, v in vars(args).items() if k in _DIRECT and v is not None}
        if args.command == "replicate-table1" and args.epochs is not None:
            overrides["epochs"] = args.epochs
        if args.command in ("gen", "replicate-table1"):
            overrides = {k: v for k, v in overrides.items() if k != "data"}
        if args.command == "fit":
            overrides.pop("seed", None)
        if args.command == "sweep" and args.values is not None:
            overrides["values"] = [int(v) if float(v).is_integer() and args.kind != "noise_sweep" else v
                                   for v in args.values]
        cfg = resolve_config(args.command, file_doc, overrides)
        out = cfg.get("out")
        handler = {
            "gen": lambda: _cmd_gen(cfg),
            "fit": lambda: _cmd_fit(cfg, args),
            "eval": lambda: _cmd_eval(cfg),
            "cv": lambda: _cmd_cv(cfg, args),
            "sweep": lambda: _cmd_sweep(cfg, args),
            "baseline": lambda: _cmd_baseline(cfg, args),
            "replicate-table1": lambda: _cmd_table1(cfg),
        }[args.command]
        return handler()
    except NumericalError as exc:
        record = {"error": str(exc), "record": getattr(exc, "record", {}), "command": args.command}
        where = Path(out) if out else Path(".")
        path = where / "failure.json"
        write_json(path, record)
        print(f"numerical failure: {exc}; diagnostics in {path}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main():
    sys.exit(cli())
