"""Command-line entry point.

Subcommands: generate, train, predict, evaluate, explain, experiment. Every run
writes its outputs and the fully resolved config into a fresh run directory
``<base>/<subcommand>-<timestamp>-seed<seed>`` where ``<base>`` comes from
``--run-dir``, then ``$AAUPOWER_RUN_DIR``, then ``./runs``. ``--out`` names the
run directory exactly instead.

Failures print one JSON line on stderr and exit with 1 (usage), 2 (config),
3 (data) or 4 (numeric failure).
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import os
import re
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np
import yaml

from . import dataset as dsm
from .dataset import DatasetFormatError, SplitError
from .evaluation import evaluate, scatter_rows, write_scatter_csv, z_for_level
from .experiments import EXPERIMENTS, ExperimentConfig, default_config, run_experiment
from .explain import (
    default_groups, global_importance, shapley, write_attribution_csv, write_instance_csv,
)
from .features import EncodingError, encode_batch, fit_encoder
from .nn import (
    LayerDims, ModelFileError, TrainConfig, TrainingError, load_model, predict, save_model, train,
)
from .teacher import FleetError, generate_dataset, sample_fleet

ENV_RUN_DIR = "AAUPOWER_RUN_DIR"

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4

DEFAULTS: dict = {
    "seed": 0,
    "fleet": {"n_types": 5, "aaus_per_type": 50, "c_max": 6, "sigma0": None, "sigma1": None},
    "data": {"n_days": 12},
    "split": {"n_test_days": 2, "val_fraction": 0.2},
    "model": {"dims_policy": "fixed", "c": 1.0},
    "train": asdict(TrainConfig()),
    "predict": {"level": 0.9},
    "explain": {"n_background": 100, "n_rows": 50, "n_permutations": 200, "row": None},
    "experiment": {},
}


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads ``1e-3`` style floats (YAML 1.1 wants a dot)."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
                   |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
                   |\.[0-9_]+(?:[eE][-+][0-9]+)?
                   |[-+]?\.(?:inf|Inf|INF)
                   |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."))


def _yaml_load(text: str):
    return yaml.load(text, Loader=_Loader)


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code, self.kind = code, kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_USAGE, "usage", f"{self.prog}: {message}")


# ── config ─────────────────────────────────────────────────────────────


def _merge(base: dict, over: dict, path: str = "", strict: bool = True) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        key = f"{path}{k}"
        if strict and k not in out:
            raise CliError(EXIT_CONFIG, "config", f"unknown config key {key!r}")
        if isinstance(out.get(k), dict):
            if not isinstance(v, dict):
                raise CliError(EXIT_CONFIG, "config", f"config key {key!r} must be a mapping")
            # the experiment section is checked later against ExperimentConfig
            out[k] = _merge(out[k], v, key + ".", strict and key != "experiment")
        else:
            out[k] = v
    return out


def _set_dotted(cfg: dict, assignment: str) -> dict:
    if "=" not in assignment:
        raise CliError(EXIT_CONFIG, "config", f"override {assignment!r} is not KEY=VALUE")
    key, raw = assignment.split("=", 1)
    try:
        value = _yaml_load(raw)
    except yaml.YAMLError as exc:
        raise CliError(EXIT_CONFIG, "config", f"override {key}: {exc}") from None
    nested: dict = value
    for part in reversed(key.strip().split(".")):
        nested = {part: nested}
    return _merge(cfg, nested)


def resolve_config(path: str | None, overrides: list[str], seed: int | None) -> dict:
    """Defaults, then the YAML file, then ``--set`` overrides, then ``--seed``."""
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise CliError(EXIT_CONFIG, "config", f"cannot read config {path}: {exc.strerror}") from None
        try:
            loaded = _yaml_load(text) or {}
        except yaml.YAMLError as exc:
            raise CliError(EXIT_CONFIG, "config", f"bad YAML in {path}: {exc}".replace("\n", " ")) from None
        if not isinstance(loaded, dict):
            raise CliError(EXIT_CONFIG, "config", f"config {path} must be a mapping")
        cfg = _merge(cfg, loaded)
    for a in overrides:
        cfg = _set_dotted(cfg, a)
    if seed is not None:
        cfg["seed"] = seed
    if not isinstance(cfg["seed"], int):
        raise CliError(EXIT_CONFIG, "config", "seed must be an integer")
    return cfg


def _train_config(cfg: dict) -> TrainConfig:
    try:
        return TrainConfig(**{**cfg["train"], "seed": cfg["seed"]})
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, "config", f"train: {exc}") from None


def _experiment_config(name: str, cfg: dict) -> ExperimentConfig:
    section = dict(cfg["experiment"])
    try:
        if "train" in section:
            section["train"] = TrainConfig(**section["train"])
        known = {f.name for f in fields(ExperimentConfig)}
        unknown = set(section) - known
        if unknown:
            raise ValueError(f"unknown experiment keys: {sorted(unknown)}")
        return default_config(name, **{**section, "seed": cfg["seed"]})
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, "config", f"experiment: {exc}") from None


# ── run directory ──────────────────────────────────────────────────────


def make_run_dir(args, cfg: dict) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        base = Path(args.run_dir or os.environ.get(ENV_RUN_DIR) or "runs")
        stamp = time.strftime("%Y%m%d-%H%M%S")
        out = base / f"{args.command}-{stamp}-seed{cfg['seed']}"
        k = 1
        while out.exists():
            out = base / f"{args.command}-{stamp}-seed{cfg['seed']}-{k}"
            k += 1
    out.mkdir(parents=True, exist_ok=True)
    resolved = {"command": args.command, **cfg}
    for key in ("data_path", "model_path", "name"):
        if getattr(args, key, None) is not None:
            resolved[key] = str(getattr(args, key))
    (out / "config.yaml").write_text(yaml.safe_dump(resolved, sort_keys=True), encoding="utf-8")
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_dataset(path) -> dsm.Dataset:
    try:
        return dsm.read_csv(path)
    except OSError as exc:
        raise CliError(EXIT_DATA, "data", f"cannot read dataset {path}: {exc.strerror}") from None


def _load_model(path):
    try:
        return load_model(path)
    except OSError as exc:
        raise CliError(EXIT_DATA, "data", f"cannot read model {path}: {exc.strerror}") from None


# ── subcommands ────────────────────────────────────────────────────────


def cmd_generate(args, cfg: dict, out: Path) -> None:
    f = cfg["fleet"]
    noise = {k: f[k] for k in ("sigma0", "sigma1") if f[k] is not None}
    try:
        fleet = sample_fleet(f["n_types"], f["aaus_per_type"], f["c_max"], cfg["seed"], **noise)
    except (FleetError, TypeError) as exc:
        raise CliError(EXIT_CONFIG, "config", f"fleet: {exc}") from None
    ds = generate_dataset(fleet, cfg["data"]["n_days"], cfg["seed"] + 1)
    dsm.write_csv(ds, out / "dataset.csv")
    _write_json(out / "fleet.json", fleet.to_dict())
    print(out / "dataset.csv")


def _split(cfg: dict, ds: dsm.Dataset):
    days = sorted(np.unique(ds.day).tolist())
    n_test = cfg["split"]["n_test_days"]
    if not 0 < n_test < len(days):
        raise CliError(EXIT_DATA, "data",
                       f"dataset has {len(days)} days, cannot hold out {n_test} for test")
    spec = dsm.SplitSpec(days[:-n_test], days[-n_test:], cfg["split"]["val_fraction"])
    return dsm.split(ds, spec, cfg["seed"] + 2)


def cmd_train(args, cfg: dict, out: Path) -> None:
    ds = _read_dataset(args.data_path)
    tr, va, te = _split(cfg, ds)
    tcfg = _train_config(cfg)
    enc = fit_encoder(tr, ds.c_max)
    m = cfg["model"]
    if m["dims_policy"] == "fixed":
        dims = LayerDims.default(enc.n_inputs)
    elif m["dims_policy"] == "scaled":
        dims = LayerDims.scaled(enc.n_inputs, float(m["c"]))
    else:
        raise CliError(EXIT_CONFIG, "config", "model.dims_policy must be 'fixed' or 'scaled'")
    model, report = train(tr, va, dims, tcfg, encoder=enc)
    save_model(model, out / "model.json")
    _write_json(out / "train_report.json", report.to_dict())
    _write_json(out / "test_metrics.json", evaluate(model, te).to_dict())
    print(out / "model.json")


def cmd_predict(args, cfg: dict, out: Path) -> None:
    model = _load_model(args.model_path)
    ds = _read_dataset(args.data_path)
    try:
        z = z_for_level(float(cfg["predict"]["level"]))
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, "config", f"predict.level: {exc}") from None
    pred = predict(model, ds)
    lo, hi = pred.ci(z)
    with open(out / "predictions.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["aau_id", "day", "hour", "mu_w", "sigma_w", "ci_lo_w", "ci_hi_w"])
        for i in range(len(ds)):
            w.writerow([int(ds.aau_id[i]), int(ds.day[i]), int(ds.hour[i])]
                       + [format(float(v[i]), ".17g") for v in (pred.mu_w, pred.sigma_w, lo, hi)])
    print(out / "predictions.csv")


def cmd_evaluate(args, cfg: dict, out: Path) -> None:
    model = _load_model(args.model_path)
    ds = _read_dataset(args.data_path)
    if args.test_only:
        ds = _split(cfg, ds)[2]
    report = evaluate(model, ds)
    _write_json(out / "metrics.json", report.to_dict())
    write_scatter_csv(scatter_rows(model, ds, group_by=args.group_by), out / "scatter.csv")
    print(json.dumps({"mae_w": report.mae_w, "mape_pct": report.mape_pct, "n": report.n}))


def cmd_explain(args, cfg: dict, out: Path) -> None:
    model = _load_model(args.model_path)
    ds = _read_dataset(args.data_path)
    e = cfg["explain"]
    X = encode_batch(ds, model.encoder)
    rng = np.random.default_rng(cfg["seed"])
    bg = X[np.sort(rng.choice(len(X), size=min(e["n_background"], len(X)), replace=False))]
    groups = default_groups(model.encoder)
    imp = global_importance(model, X, bg, groups, n_rows=e["n_rows"],
                            n_permutations=e["n_permutations"], seed=cfg["seed"])
    att = None
    if e["row"] is not None:
        if not 0 <= e["row"] < len(X):
            raise CliError(EXIT_CONFIG, "config", f"explain.row {e['row']} out of range")
        att = shapley(model, X[e["row"]], bg, groups, n_permutations=e["n_permutations"],
                      seed=cfg["seed"])
        write_instance_csv(out / "instance.csv", att, X[e["row"]], groups)
    write_attribution_csv(out / "attribution.csv", att, imp)
    print(out / "attribution.csv")


def cmd_experiment(args, cfg: dict, out: Path) -> None:
    ecfg = _experiment_config(args.name, cfg)
    report = run_experiment(args.name, ecfg)
    report.write(out)
    print(json.dumps(report.summary, sort_keys=True))


COMMANDS = {
    "generate": cmd_generate, "train": cmd_train, "predict": cmd_predict,
    "evaluate": cmd_evaluate, "explain": cmd_explain, "experiment": cmd_experiment,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted config override, e.g. train.max_epochs=50 (repeatable)")
    common.add_argument("--seed", type=int, help="overrides the config seed everywhere")
    common.add_argument("--run-dir", help=f"base directory for runs (default ${ENV_RUN_DIR} or ./runs)")
    common.add_argument("--out", help="exact output directory instead of a timestamped one")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="aaupower", description="AAU power model toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("generate", parents=[common], help="sample a synthetic fleet and dataset")
    t = sub.add_parser("train", parents=[common], help="train a model on a dataset CSV")
    t.add_argument("data_path")
    pr = sub.add_parser("predict", parents=[common], help="predict power with intervals")
    pr.add_argument("model_path")
    pr.add_argument("data_path")
    pr.add_argument("--level", type=float, help="CI level, overrides predict.level")
    ev = sub.add_parser("evaluate", parents=[common], help="MAE, MAPE and interval coverage")
    ev.add_argument("model_path")
    ev.add_argument("data_path")
    ev.add_argument("--test-only", action="store_true", help="score only the held-out test days")
    ev.add_argument("--group-by", choices=("p_max", "type_id"), default="p_max")
    ex = sub.add_parser("explain", parents=[common], help="Shapley attribution per feature group")
    ex.add_argument("model_path")
    ex.add_argument("data_path")
    ex.add_argument("--row", type=int, help="also explain this row, overrides explain.row")
    xp = sub.add_parser("experiment", parents=[common], help="run one reproduction experiment")
    xp.add_argument("name", choices=EXPERIMENTS)
    return p


def _fail(code: int, kind: str, message: str) -> int:
    print(json.dumps({"error": kind, "exit_code": code, "message": " ".join(str(message).split())}),
          file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except CliError as exc:
        return _fail(exc.code, exc.kind, str(exc))
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = list(args.overrides)
        if getattr(args, "level", None) is not None:
            overrides.append(f"predict.level={args.level}")
        if getattr(args, "row", None) is not None:
            overrides.append(f"explain.row={args.row}")
        cfg = resolve_config(args.config, overrides, args.seed)
        out = make_run_dir(args, cfg)
        COMMANDS[args.command](args, cfg, out)
    except CliError as exc:
        return _fail(exc.code, exc.kind, str(exc))
    except (DatasetFormatError, EncodingError, ModelFileError, SplitError) as exc:
        return _fail(EXIT_DATA, "data", str(exc))
    except (TrainingError, FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, "numeric", str(exc))
    except (KeyError, TypeError, ValueError) as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
