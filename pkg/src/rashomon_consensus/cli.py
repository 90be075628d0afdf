"""Command line front end.

Every subcommand reads options from flags or from a JSON ``--config`` file
(keys are option names, dashes or underscores), writes its artifacts under
``--out`` and prints a one-line JSON report. Errors go to stderr as JSON with
exit code 2 (configuration or parse), 3 (empty Rashomon set) or 4 (numerics).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import additive, consensus, kernel
from .data import Dataset, ingest, train_test_split
from .errors import (ConfigError, ConsensusError, EmptyRashomon, NotPositiveDefinite, ParseError,
                     TransitivityViolation)
from .forest import (CLASSIFICATION, REGRESSION, FeatureGroups, ForestFamily, epsilon_plus, forest_from_dict,
                     forest_to_dict, train_forest)
from .providers import additive_provider, forest_provider, kernel_provider

EXIT_CONFIG, EXIT_EMPTY, EXIT_NUMERIC = 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


# ----------------------------------------------------------------- helpers

def _ints(text) -> list[int]:
    if isinstance(text, list):
        return [int(v) for v in text]
    return [int(v) for v in str(text).split(",") if v.strip()]


def _floats(text) -> list[float]:
    if isinstance(text, list):
        return [float(v) for v in text]
    return [float(v) for v in str(text).split(",") if v.strip()]


def _require(args, *names):
    for n in names:
        if getattr(args, n, None) is None:
            raise ConfigError(f"--{n.replace('_', '-')} is required")


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str) -> None:
    path.write_text(text)


def _dump(doc, compact: bool = False) -> str:
    if compact:
        return json.dumps(doc, separators=(",", ":")) + "\n"
    return json.dumps(doc, indent=2) + "\n"


def _load_data(args) -> Dataset:
    _require(args, "data", "target")
    categorical = args.categorical or []
    if isinstance(categorical, str):
        categorical = [c for c in categorical.split(",") if c]
    return ingest(args.data, args.target, categorical)


def _load_model(args) -> dict:
    _require(args, "model")
    try:
        return json.loads(Path(args.model).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"model file is not valid JSON: {exc}") from None


def _resolve_epsilon(args, min_loss: float) -> float:
    given = [(k, getattr(args, k)) for k in ("epsilon", "epsilon_excess", "epsilon_mult") if getattr(args, k) is not None]
    if len(given) > 1:
        raise ConfigError("give at most one of --epsilon, --epsilon-excess, --epsilon-mult")
    if not given:
        return float(min_loss)
    kind, value = given[0]
    value = float(value)
    if kind == "epsilon":
        eps = value
    elif kind == "epsilon_excess":
        eps = min_loss + value
    else:
        eps = value * min_loss
    if eps < min_loss:
        raise EmptyRashomon(f"epsilon={eps!r} is below the minimum loss {min_loss!r}")
    return eps


def _background_rows(spec: str, n: int) -> np.ndarray:
    """Row indices selected by ``full``, ``sample:B:seed`` or ``row:idx``."""
    parts = spec.split(":")
    try:
        if parts[0] == "full" and len(parts) == 1:
            return np.arange(n)
        if parts[0] == "sample" and len(parts) == 3:
            size, seed = int(parts[1]), int(parts[2])
            if size >= n:
                return np.arange(n)
            return np.sort(np.random.default_rng(seed).choice(n, size=size, replace=False))
        if parts[0] == "row" and len(parts) == 2:
            idx = int(parts[1])
            if not 0 <= idx < n:
                raise ConfigError(f"background row {idx} out of range")
            return np.array([idx])
    except ValueError:
        pass
    raise ConfigError(f"bad background spec {spec!r}; use full, sample:B:seed or row:idx")


def _instances(args, n: int) -> list[int]:
    if args.instances is None:
        return list(range(n))
    idx = _ints(args.instances)
    bad = [i for i in idx if not 0 <= i < n]
    if bad:
        raise ConfigError(f"instance indices out of range: {bad}")
    return idx


def _check_columns(doc: dict, ds: Dataset) -> None:
    if tuple(doc["column_names"]) != ds.column_names:
        raise ConfigError("dataset columns do not match the model's column names")


# ----------------------------------------------------------------- providers from model files

def _provider(doc: dict, ds: Dataset, args):
    """Provider for a saved model at the requested tolerance, and the family's minimum loss."""
    family = doc.get("family")
    _check_columns(doc, ds)
    if family == "additive":
        fit = additive.AdditiveFit.from_dict(doc)
        rows = _background_rows(args.background or "full", ds.n_rows)
        fit = fit.with_background(ds.X[rows])
        eps = _resolve_epsilon(args, fit.train_loss)
        return additive_provider(fit, ds.X, eps, args.jitter or 0.0), fit.train_loss
    if family == "kernel":
        fit = kernel.KrrFit.from_dict(doc)
        rows = _background_rows(args.background or "full", ds.n_rows)
        baseline = ds.X[rows].mean(axis=0)
        eps = _resolve_epsilon(args, fit.reg_loss)
        return kernel_provider(fit, baseline, eps, int(args.steps or 1000), args.jitter or 0.0), fit.reg_loss
    if family == "forest":
        trees, task, names, groups = forest_from_dict(doc)
        if "epsilon_plus" not in doc:
            raise ConfigError("forest model has no epsilon_plus curve; run import-forest first")
        curve = np.asarray(doc["epsilon_plus"], dtype=np.float64)
        fam = ForestFamily(tuple(trees), len(trees), task).with_curve(curve)
        eps = _resolve_epsilon(args, fam.min_loss)
        fam = fam.at_epsilon(eps)
        train = np.asarray(doc.get("split", {}).get("train_rows", range(ds.n_rows)), dtype=np.int64)
        rows = train[_background_rows(args.background or "sample:500:0", len(train))]
        return forest_provider(fam, ds.X[rows], groups, names, eps), fam.min_loss
    raise ConfigError(f"unknown model family {family!r}")


# ----------------------------------------------------------------- subcommands

def cmd_fit_additive(args) -> dict:
    ds = _load_data(args)
    if args.basis is not None:
        basis = args.basis if isinstance(args.basis, list) else json.loads(args.basis)
        spec = additive.BasisSpec.from_dict(basis)
    else:
        spec = additive.BasisSpec.splines(len(ds.column_names), _ints(args.splines or ""), int(args.degree or 2),
                                          int(args.knots or 4))
    fit = additive.fit(ds.X, ds.y, spec, ds.column_names)
    out = _out_dir(args) / "model.json"
    _write(out, _dump(fit.to_dict()))
    return {"model": str(out), "min_loss": fit.train_loss}


def _kernel_spec(kind: str, gamma: float, degree: int) -> kernel.KernelSpec:
    if kind == "gaussian":
        return kernel.Gaussian(gamma)
    if kind == "polynomial":
        return kernel.Polynomial(gamma, degree)
    raise ConfigError(f"unknown kernel {kind!r}")


def cmd_fit_kernel(args) -> dict:
    ds = _load_data(args)
    kind = args.kernel or "gaussian"
    degree = int(args.degree or 3)
    out_dir = _out_dir(args)
    report = {}
    X, y = ds.X, ds.y
    if args.dictionary_size is not None and int(args.dictionary_size) < ds.n_rows:
        rows = np.sort(np.random.default_rng(int(args.seed or 0)).choice(ds.n_rows, int(args.dictionary_size), replace=False))
        X, y = X[rows], y[rows]
    if args.grid_gamma is not None or args.grid_lambda is not None:
        gammas = _floats(args.grid_gamma if args.grid_gamma is not None else [args.gamma])
        lambdas = _floats(args.grid_lambda if args.grid_lambda is not None else [args.lam])
        specs = [_kernel_spec(kind, g, degree) for g in gammas]
        rows = kernel.kfold_grid_search(X, y, specs, lambdas, int(args.folds or 5), int(args.seed or 0))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kernel", "gamma", "degree", "lambda", "cv_mse"])
        for spec, lam, mse in rows:
            w.writerow([kind, repr(spec.gamma), degree if kind == "polynomial" else "", repr(lam), repr(mse)])
        _write(out_dir / "grid.csv", buf.getvalue())
        spec, lam, _ = min(rows, key=lambda r: r[2])
        report["grid"] = str(out_dir / "grid.csv")
    else:
        _require(args, "gamma", "lam")
        spec, lam = _kernel_spec(kind, float(args.gamma), degree), float(args.lam)
    fit = kernel.fit_krr(X, y, spec, lam, ds.column_names)
    out = out_dir / "model.json"
    _write(out, _dump(fit.to_dict()))
    report.update({"model": str(out), "min_loss": fit.reg_loss, "gamma": spec.gamma, "lambda": lam})
    return report


def _forest_loss(task: str) -> str:
    return "zero-one" if task == CLASSIFICATION else "squared"


def _attach_curve(doc: dict, trees, ds: Dataset, split: dict) -> dict:
    rows = np.asarray(split["test_rows"] if split["test_rows"] else split["train_rows"], dtype=np.int64)
    preds = np.vstack([t.predict(ds.X[rows]) for t in trees])
    loss = _forest_loss(doc["task"])
    doc["split"] = split
    doc["loss"] = loss
    doc["epsilon_plus"] = epsilon_plus(preds, ds.y[rows], loss).tolist()
    return doc


def _split(args, n: int) -> dict:
    frac = 0.8 if args.train_fraction is None else float(args.train_fraction)
    if not 0 < frac <= 1:
        raise ConfigError("--train-fraction must lie in (0, 1]")
    seed = int(args.seed or 0)
    train, test = train_test_split(n, frac, seed)
    return {"train_fraction": frac, "seed": seed, "train_rows": train.tolist(), "test_rows": test.tolist()}


def _groups(args, ds: Dataset) -> FeatureGroups:
    if args.groups is None:
        return ds.groups
    items = args.groups
    if isinstance(items, str):
        text = Path(items).read_text() if Path(items).exists() else items
        items = json.loads(text)
    return FeatureGroups.from_dict(items)


def cmd_fit_forest(args) -> dict:
    ds = _load_data(args)
    task = args.task or REGRESSION
    if task not in (REGRESSION, CLASSIFICATION):
        raise ConfigError(f"unknown task {task!r}")
    split = _split(args, ds.n_rows)
    train = np.asarray(split["train_rows"], dtype=np.int64)
    trees = train_forest(ds.X[train], ds.y[train], int(args.trees or 1000), int(args.seed or 0), task,
                         None if args.max_features is None else int(args.max_features),
                         None if args.max_depth is None else int(args.max_depth), int(args.min_leaf or 1))
    doc = forest_to_dict(trees, task, ds.column_names, _groups(args, ds))
    doc = _attach_curve(doc, trees, ds, split)
    out = _out_dir(args) / "model.json"
    _write(out, _dump(doc, compact=True))
    return {"model": str(out), "min_loss": doc["epsilon_plus"][-1], "trees": len(trees)}


def cmd_import_forest(args) -> dict:
    ds = _load_data(args)
    doc = _load_model(args)
    try:
        trees, task, names, groups = forest_from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid forest file: {exc}") from None
    _check_columns(doc, ds)
    split = doc.get("split") or _split(args, ds.n_rows)
    out_doc = _attach_curve(forest_to_dict(trees, task, names, groups), trees, ds, split)
    out = _out_dir(args) / "model.json"
    _write(out, _dump(out_doc, compact=True))
    return {"model": str(out), "min_loss": out_doc["epsilon_plus"][-1], "trees": len(trees)}


def cmd_curve_epsilon_plus(args) -> dict:
    ds = _load_data(args)
    doc = _load_model(args)
    trees, task, _, _ = forest_from_dict(doc)
    _check_columns(doc, ds)
    which = args.split or "test"
    split = doc.get("split")
    if which == "all" or split is None:
        rows = np.arange(ds.n_rows)
    elif which in ("train", "test"):
        rows = np.asarray(split[f"{which}_rows"], dtype=np.int64)
    else:
        raise ConfigError(f"unknown split {which!r}")
    preds = np.vstack([t.predict(ds.X[rows]) for t in trees])
    curve = epsilon_plus(preds, ds.y[rows], _forest_loss(task))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["m", "epsilon_plus"])
    for m, e in enumerate(curve, start=1):
        w.writerow([m, repr(float(e))])
    out = _out_dir(args) / "epsilon_plus.csv"
    _write(out, buf.getvalue())
    return {"curve": str(out), "min_loss": float(curve[-1])}


def cmd_utility_curve(args) -> dict:
    ds = _load_data(args)
    doc = _load_model(args)
    _require(args, "grid")
    provider, min_loss = _provider(doc, ds, args)
    values = _floats(args.grid)
    kind = args.grid_kind or "excess"
    if kind == "absolute":
        grid = values
    elif kind == "excess":
        grid = [min_loss + v for v in values]
    elif kind == "mult":
        grid = [min_loss * v for v in values]
    else:
        raise ConfigError(f"unknown grid kind {kind!r}")
    X = ds.X[_instances(args, ds.n_rows)]
    rows = consensus.epsilon_linesearch(provider, X, grid, float(args.margin or 0.0))
    out = _out_dir(args) / "utility.csv"
    _write(out, consensus.curve_csv(rows))
    return {"curve": str(out), "min_loss": min_loss, "points": len(rows)}


def _bars_csv(expl: consensus.InstanceExplanation) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["feature", "sign", "lo", "hi", "center"])
    for label, sign, lo, hi, center in expl.bar_rows():
        w.writerow([label, sign, repr(lo), repr(hi), repr(center)])
    return buf.getvalue()


def cmd_explain(args) -> dict:
    ds = _load_data(args)
    doc = _load_model(args)
    provider, min_loss = _provider(doc, ds, args)
    out_dir = _out_dir(args)
    margin = float(args.margin or 0.0)
    expls = []
    for i in _instances(args, ds.n_rows):
        e = consensus.explain_instance(provider, ds.X[i], i, margin)
        expls.append(e)
        _write(out_dir / f"hasse_{i}.dot", e.order.to_dot())
        _write(out_dir / f"bars_{i}.csv", _bars_csv(e))
    _write(out_dir / "statements.json", consensus.statements_json(expls) + "\n")
    return {"statements": str(out_dir / "statements.json"), "epsilon": provider.epsilon, "min_loss": min_loss,
            "instances": len(expls)}


COMMANDS = {
    "fit-additive": cmd_fit_additive,
    "fit-kernel": cmd_fit_kernel,
    "fit-forest": cmd_fit_forest,
    "import-forest": cmd_import_forest,
    "utility-curve": cmd_utility_curve,
    "explain": cmd_explain,
    "curve-epsilon-plus": cmd_curve_epsilon_plus,
}

_COMMON = ["config", "data", "target", "categorical", "out", "seed"]
_OPTIONS = {
    "fit-additive": ["basis", "splines", "degree", "knots"],
    "fit-kernel": ["kernel", "gamma", "degree", "lam", "grid_gamma", "grid_lambda", "folds", "dictionary_size"],
    "fit-forest": ["trees", "task", "max_depth", "min_leaf", "max_features", "train_fraction", "groups"],
    "import-forest": ["model", "train_fraction"],
    "curve-epsilon-plus": ["model", "split"],
    "utility-curve": ["model", "grid", "grid_kind", "epsilon", "epsilon_excess", "epsilon_mult", "instances",
                      "background", "steps", "jitter", "margin"],
    "explain": ["model", "epsilon", "epsilon_excess", "epsilon_mult", "instances", "background", "steps", "jitter",
                "margin"],
}
_HELP = {
    "config": "JSON file of option values; flags override it",
    "data": "CSV file with a header row",
    "target": "name of the target column",
    "categorical": "comma-separated columns to one-hot encode",
    "out": "output directory",
    "seed": "random seed",
    "basis": "JSON list of per-column basis entries",
    "splines": "comma-separated column indices that get spline bases",
    "degree": "spline or polynomial-kernel degree",
    "knots": "number of spline knots",
    "kernel": "gaussian or polynomial",
    "lam": "ridge penalty",
    "grid_gamma": "comma-separated gammas for k-fold grid search",
    "grid_lambda": "comma-separated lambdas for k-fold grid search",
    "dictionary_size": "number of rows kept as kernel dictionary",
    "trees": "number of trees in the pool",
    "task": "regression or classification",
    "min_leaf": "minimum samples per leaf",
    "train_fraction": "training share of the seeded split",
    "groups": "JSON (file or literal) list of {name, columns} feature groups",
    "model": "model JSON file",
    "split": "rows for the curve: test, train or all",
    "grid": "comma-separated tolerance grid",
    "grid_kind": "absolute, excess (over the minimum loss) or mult",
    "epsilon": "absolute loss tolerance",
    "epsilon_excess": "tolerance above the minimum loss",
    "epsilon_mult": "tolerance as a multiple of the minimum loss",
    "instances": "comma-separated row indices",
    "background": "full, sample:B:seed or row:idx",
    "steps": "integrated-gradient quadrature steps",
    "jitter": "ridge added to the Rashomon shape matrix",
    "margin": "numerical margin required by sign and importance statements",
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rashomon-consensus", description="Consensus explanations over Rashomon sets.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        for opt in _COMMON + _OPTIONS[name]:
            p.add_argument("--" + opt.replace("_", "-"), dest=opt, default=None, help=_HELP.get(opt))
    return parser


def _apply_config(args) -> argparse.Namespace:
    try:
        cfg = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    allowed = set(_COMMON) | set(_OPTIONS[args.command])
    values = {}
    for key, value in cfg.items():
        k = key.replace("-", "_")
        if k not in allowed:
            raise ConfigError(f"unknown config key {key!r} for {args.command}")
        values[k] = value
    for k, v in values.items():
        if getattr(args, k) is None:
            setattr(args, k, v)
    return args


def _error_json(exc: BaseException, code: int) -> str:
    doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if isinstance(exc, ParseError):
        doc.update(row=exc.row, column=exc.column)
    if isinstance(exc, NotPositiveDefinite):
        doc["pivot"] = exc.pivot
    return json.dumps(doc)


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise ConfigError("missing subcommand; choose one of " + ", ".join(COMMANDS))
        if args.config is not None:
            args = _apply_config(args)
        report = COMMANDS[args.command](args)
    except EmptyRashomon as exc:
        print(_error_json(exc, EXIT_EMPTY), file=sys.stderr)
        return EXIT_EMPTY
    except (NotPositiveDefinite, TransitivityViolation, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(_error_json(exc, EXIT_NUMERIC), file=sys.stderr)
        return EXIT_NUMERIC
    except (ConsensusError, OSError, ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        print(_error_json(exc, EXIT_CONFIG), file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(report))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
