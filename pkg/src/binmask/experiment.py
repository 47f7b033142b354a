"""Experiment configuration, multi-trial orchestration, and report files.

A single JSON config file describes one experiment: the task, the dataset
(synthetic generator or CSV), the network, the training protocol, and the
task-specific settings. Trial i splits the data with seed+i and draws
initialization/batching randomness from seed+10000+i, so reruns with the
same config and seed write bit-identical CSV files. Trials can run in
parallel worker processes; results are collected and written in a fixed
order.

Output layout per run directory: ``trial_<i>.csv`` files with per-epoch
metrics (grouped into subdirectories when an experiment spans several
penalty values or methods), ``summary.json`` with per-metric trial
aggregates, ``selection.json`` for feature-selection tasks, and PNG
figures rendered next to the delimited output.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import figures
from .data import (
    Dataset,
    SplitSpec,
    duplicate_to_min_batches,
    load_csv,
    normalize,
    split_dataset,
    synth_overfit_prone,
    synth_planted_features,
)
from .errors import BinMaskError, ConfigError
from .fselect import (
    SearchError,
    SelectionProtocol,
    retrain_eval,
    select_exact_k,
    selection_training_run,
)
from .mask import MaskState, mask_converged
from .masking import MaskSpec
from .nn import LayerSpec, LossKind, Mode, Network, finite_diff_grad, loss_and_grad, predict_scores
from .report import aggregate, auc, metrics_to_csv, write_json
from .train import ClassifierSpec, TrainConfig, loss_kind_for, train, weight_norm_report

TASKS = ("sparsify", "select_features", "regularize_compare")
_MISSING = object()


# --------------------------------------------------------------------------
# config loading and validation
# --------------------------------------------------------------------------


def _field(d, key, types, path, default=_MISSING):
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected an object")
    if key not in d:
        if default is _MISSING:
            raise ConfigError(f"{path}.{key}: required")
        return default
    value = d[key]
    if types is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}.{key}: expected a boolean")
        return value
    if types is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}.{key}: expected an integer")
        return value
    if types is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}.{key}: expected a number")
        return float(value)
    if types is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}.{key}: expected a string")
        return value
    if types is list:
        if not isinstance(value, list):
            raise ConfigError(f"{path}.{key}: expected a list")
        return value
    if types is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{path}.{key}: expected an object")
        return value
    raise AssertionError(types)


def _float_list(d, key, path, default=_MISSING):
    raw = _field(d, key, list, path, default)
    if raw is default and default is not _MISSING:
        return raw
    out = []
    for i, v in enumerate(raw):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{path}.{key}[{i}]: expected a number")
        out.append(float(v))
    return out


def validate_config(cfg: dict) -> dict:
    """Fill defaults and type-check; raises ConfigError naming the bad field."""
    if not isinstance(cfg, dict):
        raise ConfigError("config: expected a JSON object")
    out: dict = {}
    task = _field(cfg, "task", str, "config")
    if task not in TASKS:
        raise ConfigError(f"config.task: must be one of {', '.join(TASKS)}")
    out["task"] = task
    out["seed"] = _field(cfg, "seed", int, "config", 0)
    default_trials = 4 if task == "sparsify" else 8
    out["trials"] = _field(cfg, "trials", int, "config", default_trials)
    if out["trials"] < 1:
        raise ConfigError("config.trials: must be >= 1")
    out["out"] = _field(cfg, "out", str, "config", "")

    dcfg = _field(cfg, "dataset", dict, "config")
    kind = _field(dcfg, "kind", str, "config.dataset")
    dout = {"kind": kind, "seed": _field(dcfg, "seed", int, "config.dataset", out["seed"])}
    if kind == "planted":
        dout["n"] = _field(dcfg, "n", int, "config.dataset")
        dout["d"] = _field(dcfg, "d", int, "config.dataset")
        dout["informative"] = _field(dcfg, "informative", int, "config.dataset")
        dout["noise"] = _field(dcfg, "noise", float, "config.dataset", 0.0)
    elif kind == "overfit":
        dout["n"] = _field(dcfg, "n", int, "config.dataset")
        dout["d"] = _field(dcfg, "d", int, "config.dataset")
        dout["sparse_rate"] = _field(dcfg, "sparse_rate", float, "config.dataset", 0.94)
    elif kind == "csv":
        dout["path"] = _field(dcfg, "path", str, "config.dataset")
        dout["label_col"] = _field(dcfg, "label_col", int, "config.dataset", -1)
        dout["header"] = _field(dcfg, "header", bool, "config.dataset", False)
    else:
        raise ConfigError("config.dataset.kind: must be planted, overfit, or csv")
    default_test = 0.15 if task == "regularize_compare" else 0.2
    default_val = 0.10 if task == "regularize_compare" else 0.0
    dout["test_fraction"] = _field(dcfg, "test_fraction", float, "config.dataset", default_test)
    dout["validation_fraction"] = _field(
        dcfg, "validation_fraction", float, "config.dataset", default_val
    )
    out["dataset"] = dout

    ncfg = _field(cfg, "network", dict, "config", {})
    hidden = _field(ncfg, "hidden", list, "config.network", [64, 20])
    for i, width in enumerate(hidden):
        if isinstance(width, bool) or not isinstance(width, int) or width < 1:
            raise ConfigError(f"config.network.hidden[{i}]: expected a positive integer")
    out["network"] = {
        "hidden": list(hidden),
        "activation": _field(ncfg, "activation", str, "config.network", "tanh"),
        "batchnorm": _field(ncfg, "batchnorm", bool, "config.network", False),
        "dropout": _field(ncfg, "dropout", float, "config.network", 0.0),
    }
    if out["network"]["activation"] not in ("tanh", "relu"):
        raise ConfigError("config.network.activation: must be tanh or relu")

    tcfg = _field(cfg, "train", dict, "config")
    sgd_defaults = task != "regularize_compare"
    out["train"] = {
        "epochs": _field(tcfg, "epochs", int, "config.train"),
        "batch_size": _field(tcfg, "batch_size", int, "config.train", 256),
        "optimizer": _field(tcfg, "optimizer", str, "config.train", "sgd" if sgd_defaults else "adamw"),
        "lr": _field(tcfg, "lr", float, "config.train", 0.1 if sgd_defaults else 0.002),
        "lr_end": _field(tcfg, "lr_end", float, "config.train", 1e-5 if sgd_defaults else 5e-5),
        "momentum": _field(tcfg, "momentum", float, "config.train", 0.9),
        "weight_decay": _field(tcfg, "weight_decay", float, "config.train", 5e-4 if sgd_defaults else 0.01),
        "min_batches": _field(tcfg, "min_batches", int, "config.train", 30),
        "early_stopping": _field(
            tcfg, "early_stopping", bool, "config.train", task == "regularize_compare"
        ),
    }
    if out["train"]["epochs"] < 1:
        raise ConfigError("config.train.epochs: must be >= 1")
    if out["train"]["optimizer"] not in ("sgd", "adamw"):
        raise ConfigError("config.train.optimizer: must be sgd or adamw")

    mcfg = _field(cfg, "mask", dict, "config", {})
    out["mask"] = {
        "alpha0": _field(mcfg, "alpha0", float, "config.mask", 0.02 if task == "select_features" else 0.3),
        "alpha1": _field(mcfg, "alpha1", float, "config.mask", 1.0),
        "eta0": _field(mcfg, "eta0", float, "config.mask", 1e-3),
        "eta1": _field(mcfg, "eta1", float, "config.mask", 1e-5),
        "warmup_fraction": _field(mcfg, "warmup_fraction", float, "config.mask", 0.1),
        "gamma": _field(mcfg, "gamma", float, "config.mask", 0.9),
    }

    if task == "sparsify":
        scfg = _field(cfg, "sparsify", dict, "config")
        out["sparsify"] = {
            "lambdas": _float_list(scfg, "lambdas", "config.sparsify"),
            "dense_baseline": _field(scfg, "dense_baseline", bool, "config.sparsify", False),
        }
        if not out["sparsify"]["lambdas"] and not out["sparsify"]["dense_baseline"]:
            raise ConfigError("config.sparsify.lambdas: need at least one penalty value")
    elif task == "select_features":
        scfg = _field(cfg, "select", dict, "config")
        # "mode" marks an already-normalized record; re-validation must not
        # reinterpret it (sweep mode would degrade to lambda mode otherwise)
        if "mode" in scfg:
            mode = _field(scfg, "mode", str, "config.select")
            if mode not in ("lambda", "k", "sweep"):
                raise ConfigError("config.select.mode: must be lambda, k, or sweep")
        elif _field(scfg, "sweep", bool, "config.select", False):
            mode = "sweep"
        elif "k" in scfg:
            mode = "k"
        elif "lambda" in scfg:
            mode = "lambda"
        else:
            raise ConfigError("config.select: need lambda, k, or sweep")
        if mode == "k":
            out["select"] = {"mode": "k", "k": _field(scfg, "k", int, "config.select")}
            if out["select"]["k"] < 1:
                raise ConfigError("config.select.k: must be >= 1")
        elif mode == "sweep":
            out["select"] = {
                "mode": "sweep",
                "lambda": _field(scfg, "lambda", float, "config.select", 1e-3),
            }
        else:
            out["select"] = {"mode": "lambda", "lambda": _field(scfg, "lambda", float, "config.select")}
        out["select"]["budget"] = _field(scfg, "budget", int, "config.select", 12)
        out["select"]["lambda0"] = _field(scfg, "lambda0", float, "config.select", 1e-3)
        out["select"]["retrain_trials"] = _field(scfg, "retrain_trials", int, "config.select", 1)
    else:
        ccfg = _field(cfg, "compare", dict, "config")
        methods = []
        if "methods" in ccfg:
            # already-normalized record: validate the (method, coeff) pairs
            for i, entry in enumerate(_field(ccfg, "methods", list, "config.compare")):
                if not isinstance(entry, (list, tuple)) or len(entry) != 2:
                    raise ConfigError(f"config.compare.methods[{i}]: expected [method, coefficient]")
                method, coeff = entry
                if method in ("binmask", "l1", "l2", "dropout"):
                    if isinstance(coeff, bool) or not isinstance(coeff, (int, float)):
                        raise ConfigError(f"config.compare.methods[{i}]: expected a numeric coefficient")
                    methods.append((method, float(coeff)))
                elif method in ("none", "logistic"):
                    methods.append((method, None))
                else:
                    raise ConfigError(f"config.compare.methods[{i}]: unknown method '{method}'")
        else:
            for method in ("binmask", "l1", "l2", "dropout"):
                for coeff in _float_list(ccfg, method, "config.compare", []):
                    methods.append((method, coeff))
            for base in _field(ccfg, "baselines", list, "config.compare", ["none"]):
                if base not in ("none", "logistic"):
                    raise ConfigError("config.compare.baselines: entries must be none or logistic")
                methods.append((base, None))
        if not methods:
            raise ConfigError("config.compare: no methods configured")
        out["compare"] = {"methods": methods}
    return out


def load_config(path) -> dict:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return validate_config(raw)


# --------------------------------------------------------------------------
# shared builders
# --------------------------------------------------------------------------


def build_dataset(dcfg: dict) -> tuple[Dataset, np.ndarray | None]:
    kind = dcfg["kind"]
    if kind == "planted":
        ds, planted = synth_planted_features(
            dcfg["n"], dcfg["d"], dcfg["informative"], dcfg.get("noise", 0.0), dcfg["seed"]
        )
        return ds, planted
    if kind == "overfit":
        return synth_overfit_prone(dcfg["n"], dcfg["d"], dcfg["sparse_rate"], dcfg["seed"]), None
    return load_csv(dcfg["path"], dcfg["label_col"], dcfg["header"]), None


def _classifier(cfg: dict) -> ClassifierSpec:
    ncfg = cfg["network"]
    return ClassifierSpec(
        hidden=tuple(ncfg["hidden"]),
        activation=ncfg["activation"],
        batchnorm=ncfg["batchnorm"],
        dropout=ncfg["dropout"],
    )


def _train_config(cfg: dict) -> TrainConfig:
    tcfg = cfg["train"]
    return TrainConfig(
        epochs=tcfg["epochs"],
        batch_size=tcfg["batch_size"],
        lr=tcfg["lr"],
        lr_end=tcfg["lr_end"],
        momentum=tcfg["momentum"],
        weight_decay=tcfg["weight_decay"],
        optimizer=tcfg["optimizer"],
        early_stopping=tcfg["early_stopping"],
    )


def _protocol(cfg: dict) -> SelectionProtocol:
    mcfg = cfg["mask"]
    return SelectionProtocol(
        classifier=_classifier(cfg),
        train=replace(_train_config(cfg), early_stopping=False),
        alpha0=mcfg["alpha0"],
        alpha1=mcfg["alpha1"],
        eta0=mcfg["eta0"],
        eta1=mcfg["eta1"],
        warmup_fraction=mcfg["warmup_fraction"],
        gamma=mcfg["gamma"],
        test_fraction=cfg["dataset"]["test_fraction"],
        min_batches=cfg["train"]["min_batches"],
    )


def _mask_state(cfg: dict, size: int, penalty: float) -> MaskState:
    mcfg = cfg["mask"]
    return MaskState(
        size,
        penalty=penalty,
        alpha0=mcfg["alpha0"],
        alpha1=mcfg["alpha1"],
        gamma=mcfg["gamma"],
        eta0=mcfg["eta0"],
        eta1=mcfg["eta1"],
        warmup_fraction=mcfg["warmup_fraction"],
    )


def _prepare_splits(cfg: dict, trial: int):
    ds, planted = build_dataset(cfg["dataset"])
    spec = SplitSpec(
        test_fraction=cfg["dataset"]["test_fraction"],
        validation_fraction=cfg["dataset"]["validation_fraction"],
        seed=cfg["seed"] + trial,
    )
    train_raw, val_raw, test_raw = split_dataset(ds, spec)
    others = [test_raw] if val_raw is None else [val_raw, test_raw]
    train_ds, normed = normalize(train_raw, others)
    val_ds = None if val_raw is None else normed[0]
    test_ds = normed[-1]
    full_train = train_ds
    train_ds = duplicate_to_min_batches(train_ds, cfg["train"]["batch_size"], cfg["train"]["min_batches"])
    return ds, planted, train_ds, full_train, val_ds, test_ds


# --------------------------------------------------------------------------
# task workers (module level so they can run in worker processes)
# --------------------------------------------------------------------------


def _sparsify_trial(cfg: dict, penalty: float | None, trial: int) -> dict:
    try:
        ds, _, train_ds, _, _, test_ds = _prepare_splits(cfg, trial)
        rng = np.random.default_rng(cfg["seed"] + 10000 + trial)
        net = _classifier(cfg).build(ds.d, ds.n_classes, rng)
        mask = spec = None
        if penalty is not None:
            spec = MaskSpec.all_weights(net)
            mask = _mask_state(cfg, spec.k, penalty)
        result = train(
            net, train_ds, _train_config(cfg), rng, mask=mask, mask_spec=spec, test_ds=test_ds
        )
        last = result.metrics[-1]
        return {
            "trial": trial,
            "penalty": penalty,
            "metrics": result.metrics,
            "final_sparsity": last.sparsity,
            "final_train_loss": last.train_loss,
            "final_test_acc": last.test_accuracy,
        }
    except BinMaskError as exc:
        return {"trial": trial, "penalty": penalty, "error": str(exc)}


def _select_trial(cfg: dict, trial: int, k_override: int | None = None) -> dict:
    scfg = cfg["select"]
    seed = cfg["seed"] + trial
    protocol = _protocol(cfg)
    try:
        ds, planted = build_dataset(cfg["dataset"])
        if k_override is not None:
            mode = "k"
        else:
            # the sweep base run is a plain direct-lambda selection
            mode = "lambda" if scfg["mode"] in ("lambda", "sweep") else "k"
        if mode == "lambda":
            mask, result = selection_training_run(
                ds, protocol, scfg["lambda"], seed, seed + 10000
            )
            v = mask.v_smooth.copy()
            selection = {
                "selected": [int(i) for i in np.flatnonzero(v >= 0.5)],
                "lambda_star": scfg["lambda"],
                "cutoff": 0.5,
                "v_smooth": [float(x) for x in v],
                "converged": bool(mask_converged(v)),
                "search_steps": 1,
            }
            metrics = result.metrics
        else:
            k = k_override if k_override is not None else scfg["k"]
            captured = {}

            def on_run(run_index, mask, result):
                captured["metrics"] = result.metrics

            sel = select_exact_k(
                ds, protocol, k, seed=seed, lambda0=scfg["lambda0"], budget=scfg["budget"],
                on_run=on_run,
            )
            selection = sel.to_json_dict()
            metrics = captured.get("metrics", [])
        row = {"trial": trial, "selection": selection, "metrics": metrics}
        if selection["selected"]:
            ev = retrain_eval(
                ds, selection["selected"], protocol, trials=scfg["retrain_trials"], seed=seed
            )
            row["retrain_accuracy"] = ev.mean_accuracy
        if planted is not None and selection["selected"]:
            hits = len(set(selection["selected"]) & set(int(i) for i in planted))
            row["planted_recall"] = hits / len(planted) if len(planted) else None
        return row
    except SearchError as exc:
        return {
            "trial": trial,
            "error": str(exc),
            "closest_count": exc.closest_count,
            "attempts": [[lam, int(c)] for lam, c in exc.attempts],
        }
    except BinMaskError as exc:
        return {"trial": trial, "error": str(exc)}


def _compare_cell(cfg: dict, method: str, coeff: float | None, trial: int) -> dict:
    try:
        ds, _, train_ds, full_train, val_ds, test_ds = _prepare_splits(cfg, trial)
        rng = np.random.default_rng(cfg["seed"] + 10000 + trial)
        classifier = _classifier(cfg)
        if method == "dropout":
            classifier = replace(classifier, dropout=coeff)
        elif method == "logistic":
            classifier = replace(classifier, hidden=(), dropout=0.0)
        net = classifier.build(ds.d, ds.n_classes, rng)
        tc = _train_config(cfg)
        mask = spec = None
        if method == "l2":
            tc = replace(tc, weight_decay=coeff)
        elif method == "l1":
            tc = replace(tc, l1=coeff)
        elif method == "binmask":
            spec = MaskSpec.all_weights(net)
            mask = _mask_state(cfg, spec.k, coeff)
        result = train(
            net, train_ds, tc, rng, mask=mask, mask_spec=spec, test_ds=test_ds, val_ds=val_ds
        )
        loss_kind = loss_kind_for(net)
        train_scores = predict_scores(net.forward(full_train.features, Mode.EVAL), loss_kind)
        test_scores = predict_scores(net.forward(test_ds.features, Mode.EVAL), loss_kind)
        l0, l1n, l2n = weight_norm_report(net, result.mask_bits, spec)
        return {
            "method": method,
            "coefficient": coeff,
            "trial": trial,
            "metrics": result.metrics,
            "train_auc": auc(train_scores, full_train.labels),
            "test_auc": auc(test_scores, test_ds.labels),
            "weight_l0": l0,
            "weight_l1": l1n,
            "weight_l2": l2n,
            "best_epoch": result.best_epoch,
            "sparsity": result.metrics[-1].sparsity,
        }
    except BinMaskError as exc:
        return {"method": method, "coefficient": coeff, "trial": trial, "error": str(exc)}


def _run_units(fn, units, jobs: int):
    if jobs <= 1:
        return [fn(*unit) for unit in units]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(fn, *unit) for unit in units]
        return [f.result() for f in futures]


# --------------------------------------------------------------------------
# task drivers
# --------------------------------------------------------------------------


def _method_dir(method: str, coeff: float | None) -> str:
    return method if coeff is None else f"{method}_{coeff:g}"


def _run_sparsify(cfg: dict, out_dir: Path, jobs: int) -> dict:
    lambdas: list[float | None] = list(cfg["sparsify"]["lambdas"])
    if cfg["sparsify"]["dense_baseline"]:
        lambdas.append(None)
    units = [(cfg, lam, trial) for lam in lambdas for trial in range(cfg["trials"])]
    results = _run_units(_sparsify_trial, units, jobs)
    groups: dict = {}
    for row in results:
        groups.setdefault(row["penalty"], []).append(row)
    single = len(lambdas) == 1
    summary_groups = []
    partial = False
    for lam in lambdas:
        rows = sorted(groups[lam], key=lambda r: r["trial"])
        name = "dense" if lam is None else f"lambda_{lam:g}"
        group_dir = out_dir if single else out_dir / name
        group_dir.mkdir(parents=True, exist_ok=True)
        good = [r for r in rows if "error" not in r]
        for row in good:
            metrics_to_csv(row["metrics"], group_dir / f"trial_{row['trial']}.csv")
        errors = [{"trial": r["trial"], "error": r["error"]} for r in rows if "error" in r]
        partial = partial or bool(errors)
        entry = {"penalty": lam, "errors": errors, "aggregates": []}
        if good:
            if lam is not None:
                entry["aggregates"].append(
                    aggregate("final_sparsity", [r["final_sparsity"] for r in good]).to_json_dict()
                )
            entry["aggregates"].append(
                aggregate("final_train_loss", [r["final_train_loss"] for r in good]).to_json_dict()
            )
            if good[0]["final_test_acc"] is not None:
                entry["aggregates"].append(
                    aggregate("final_test_acc", [r["final_test_acc"] for r in good]).to_json_dict()
                )
            figures.save_dynamics_figure(
                [r["metrics"] for r in good],
                group_dir / "dynamics.png",
                title=name.replace("_", " = "),
            )
        summary_groups.append(entry)
    return {"groups": summary_groups, "partial": partial}


def _select_summary_rows(results) -> tuple[list, list, bool]:
    rows = sorted(results, key=lambda r: r["trial"])
    good = [r for r in rows if "error" not in r]
    partial = len(good) < len(rows)
    return rows, good, partial


def _run_select(cfg: dict, out_dir: Path, jobs: int) -> dict:
    mode = cfg["select"]["mode"]
    if mode == "sweep":
        return _run_select_sweep(cfg, out_dir, jobs)
    units = [(cfg, trial) for trial in range(cfg["trials"])]
    results = _run_units(_select_trial, units, jobs)
    rows, good, partial = _select_summary_rows(results)
    for row in good:
        if row["metrics"]:
            metrics_to_csv(row["metrics"], out_dir / f"trial_{row['trial']}.csv")
    selection_record = {
        "mode": mode,
        "trials": [
            {key: value for key, value in row.items() if key != "metrics"} for row in rows
        ],
    }
    write_json(selection_record, out_dir / "selection.json")
    aggregates = []
    if good:
        aggregates.append(
            aggregate("selected_count", [len(r["selection"]["selected"]) for r in good]).to_json_dict()
        )
        aggregates.append(
            aggregate("search_steps", [r["selection"]["search_steps"] for r in good]).to_json_dict()
        )
        accs = [r["retrain_accuracy"] for r in good if "retrain_accuracy" in r]
        if accs:
            aggregates.append(aggregate("retrain_accuracy", accs).to_json_dict())
        recalls = [r["planted_recall"] for r in good if r.get("planted_recall") is not None]
        if recalls:
            aggregates.append(aggregate("planted_recall", recalls).to_json_dict())
        converged = [float(r["selection"]["converged"]) for r in good]
        aggregates.append(
            {"name": "converged_fraction", "values": converged, "mean": float(np.mean(converged)), "ci95_halfwidth": None}
        )
        figures.save_selection_figure(
            [r["selection"]["v_smooth"] for r in good],
            [len(r["selection"]["selected"]) for r in good],
            out_dir / "feature_selection.png",
        )
    return {"aggregates": aggregates, "partial": partial}


def _run_select_sweep(cfg: dict, out_dir: Path, jobs: int) -> dict:
    base = _select_trial(cfg, 0)
    if "error" in base:
        write_json({"mode": "sweep", "base": base, "points": []}, out_dir / "selection.json")
        return {"partial": True, "aggregates": []}
    n_t = len(base["selection"]["selected"])
    if n_t < 1:
        raise ConfigError("sweep base selection is empty; raise config.select.lambda")
    step = n_t // 5
    counts = []
    for i in range(5):
        c = n_t - i * step
        if c >= 1 and c not in counts:
            counts.append(c)
    units = [(cfg, trial, count) for count in counts for trial in range(cfg["trials"])]
    results = _run_units(_select_trial, units, jobs)
    by_count: dict[int, list] = {c: [] for c in counts}
    for (unit, row) in zip(units, results):
        by_count[unit[2]].append(row)
    points = []
    partial = False
    means, halfwidths = [], []
    for count in counts:
        rows, good, point_partial = _select_summary_rows(by_count[count])
        partial = partial or point_partial
        accs = [r["retrain_accuracy"] for r in good if "retrain_accuracy" in r]
        agg = aggregate(f"retrain_accuracy_k{count}", accs).to_json_dict() if accs else None
        points.append(
            {
                "count": count,
                "accuracy": agg,
                "trials": [
                    {key: value for key, value in row.items() if key != "metrics"} for row in rows
                ],
            }
        )
        means.append(agg["mean"] if agg else np.nan)
        halfwidths.append(agg["ci95_halfwidth"] if agg else None)
    write_json(
        {
            "mode": "sweep",
            "base": {key: value for key, value in base.items() if key != "metrics"},
            "counts": counts,
            "points": points,
        },
        out_dir / "selection.json",
    )
    figures.save_sweep_figure(counts, means, halfwidths, out_dir / "feature_sweep.png")
    aggregates = [p["accuracy"] for p in points if p["accuracy"] is not None]
    return {"aggregates": aggregates, "partial": partial, "base_count": n_t}


def _run_compare(cfg: dict, out_dir: Path, jobs: int) -> dict:
    methods = cfg["compare"]["methods"]
    units = [
        (cfg, method, coeff, trial)
        for method, coeff in methods
        for trial in range(cfg["trials"])
    ]
    results = _run_units(_compare_cell, units, jobs)
    grouped: dict = {}
    for row in results:
        grouped.setdefault((row["method"], row["coefficient"]), []).append(row)
    partial = False
    table = []
    figure_rows = []
    for method, coeff in methods:
        rows = sorted(grouped[(method, coeff)], key=lambda r: r["trial"])
        good = [r for r in rows if "error" not in r]
        errors = [{"trial": r["trial"], "error": r["error"]} for r in rows if "error" in r]
        partial = partial or bool(errors)
        group_dir = out_dir / _method_dir(method, coeff)
        group_dir.mkdir(parents=True, exist_ok=True)
        for row in good:
            metrics_to_csv(row["metrics"], group_dir / f"trial_{row['trial']}.csv")
        entry = {"method": method, "coefficient": coeff, "errors": errors, "aggregates": []}
        if good:
            for key in ("train_auc", "test_auc", "weight_l0", "weight_l1", "weight_l2"):
                entry["aggregates"].append(aggregate(key, [r[key] for r in good]).to_json_dict())
            test_agg = aggregate("test_auc", [r["test_auc"] for r in good])
            l0_agg = aggregate("weight_l0", [r["weight_l0"] for r in good])
            figure_rows.append(
                {
                    "method": method,
                    "coefficient": coeff if coeff is not None else 0.0,
                    "test_auc": test_agg.mean,
                    "test_auc_ci": test_agg.ci95_halfwidth,
                    "weight_l0": l0_agg.mean,
                }
            )
        table.append(entry)
    if figure_rows:
        figures.save_compare_figure(figure_rows, out_dir / "regularization.png")
    return {"methods": table, "partial": partial}


def run_experiment(cfg: dict, out=None, jobs: int = 1, seed: int | None = None) -> dict:
    """Run a validated experiment config; returns the summary written to disk."""
    cfg = validate_config(cfg)
    if seed is not None:
        cfg["seed"] = seed
        cfg["dataset"]["seed"] = seed
    out_dir = Path(out) if out else Path(cfg["out"] or f"binmask_{cfg['task']}")
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg["task"] == "sparsify":
        body = _run_sparsify(cfg, out_dir, jobs)
    elif cfg["task"] == "select_features":
        body = _run_select(cfg, out_dir, jobs)
    else:
        body = _run_compare(cfg, out_dir, jobs)
    summary = {
        "task": cfg["task"],
        "seed": cfg["seed"],
        "trials": cfg["trials"],
        "partial": body.pop("partial", False),
    }
    summary.update(body)
    write_json(summary, out_dir / "summary.json")
    return summary


# --------------------------------------------------------------------------
# gradient check
# --------------------------------------------------------------------------


def _gradcheck_specs(index: int, rng) -> tuple[list[LayerSpec], LossKind]:
    depth = 1 + index % 3
    in_dim = int(rng.integers(2, 17))
    widths = [int(rng.integers(2, 17)) for _ in range(depth)]
    activation = "tanh" if index % 2 == 0 else "relu"
    use_bn = index % 2 == 1
    use_dropout = index % 3 == 2
    specs = []
    prev = in_dim
    for w in widths:
        specs.append(LayerSpec("linear", in_dim=prev, out_dim=w))
        specs.append(LayerSpec(activation))
        if use_bn:
            specs.append(LayerSpec("batchnorm", dim=w))
        if use_dropout:
            specs.append(LayerSpec("dropout", p=float(rng.uniform(0.1, 0.5))))
        prev = w
    if index % 4 < 2:
        loss_kind = LossKind.SIGMOID_BCE
        specs.append(LayerSpec("linear", in_dim=prev, out_dim=1))
    else:
        loss_kind = LossKind.SOFTMAX_CE
        specs.append(LayerSpec("linear", in_dim=prev, out_dim=int(rng.integers(2, 5))))
    return specs, loss_kind


def _min_relu_preactivation(net: Network, x: np.ndarray) -> float:
    """Smallest |pre-activation| feeding a ReLU; inf when there is none."""
    h = np.asarray(x, dtype=np.float64)
    closest = np.inf
    for spec, layer in zip(net.specs, net.layers):
        if spec.kind == "relu":
            closest = min(closest, float(np.min(np.abs(h))))
        h = layer.forward(h, Mode.REPLAY)
    return closest


def run_gradcheck(
    nets: int = 50,
    batch: int = 8,
    step: float = 1e-5,
    rtol: float = 1e-4,
    atol: float = 1e-8,
    seed: int = 0,
    out=None,
) -> tuple[bool, list[dict]]:
    """Compare backprop against central finite differences on random MLPs.

    Cycles through tanh/ReLU, batchnorm, and dropout combinations so every
    layer kind is exercised. Biases are randomized so the check runs at a
    generic point, and batches whose ReLU pre-activations sit within the
    finite-difference step of the kink are redrawn (central differences
    straddle the kink there and measure the wrong slope). Writes
    gradcheck.csv and a histogram when ``out`` is given. Returns
    (all passed, per-net rows).
    """
    rows = []
    for i in range(nets):
        rng = np.random.default_rng(seed + i)
        specs, loss_kind = _gradcheck_specs(i, rng)
        net = Network(specs, rng)
        for p in net.params:
            if p.kind == "bias":
                p.value[...] = rng.normal(scale=0.1, size=p.value.shape)
        x = rng.standard_normal((batch, net.input_dim))
        for _ in range(20):
            if _min_relu_preactivation(net, x) > 50 * step:
                break
            x = rng.standard_normal((batch, net.input_dim))
        n_out = net.output_dim if loss_kind is LossKind.SOFTMAX_CE else 2
        labels = rng.integers(0, n_out, batch)
        logits = net.forward(x, Mode.TRAIN)
        _, dlogits = loss_and_grad(logits, labels, loss_kind)
        net.backward(dlogits)
        analytic = [p.grad.copy() for p in net.params]
        numeric = finite_diff_grad(net, x, labels, loss_kind, step)
        ok = all(
            np.allclose(a, f, rtol=rtol, atol=atol) for a, f in zip(analytic, numeric)
        )
        max_err = max(
            float(np.max(np.abs(a - f) / np.maximum(np.abs(f), atol / rtol)))
            for a, f in zip(analytic, numeric)
        )
        rows.append(
            {
                "net": i,
                "params": int(sum(p.size for p in net.params)),
                "loss": loss_kind.value,
                "max_rel_err": max_err,
                "ok": ok,
            }
        )
    passed = all(r["ok"] for r in rows)
    if out is not None:
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        with (out_dir / "gradcheck.csv").open("w") as fh:
            fh.write("net,params,loss,max_rel_err,ok\n")
            for r in rows:
                fh.write(f"{r['net']},{r['params']},{r['loss']},{r['max_rel_err']!r},{int(r['ok'])}\n")
        figures.save_gradcheck_figure([r["max_rel_err"] for r in rows], out_dir / "gradcheck.png")
    return passed, rows
