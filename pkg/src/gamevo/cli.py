"""Command-line orchestration: search runs, evaluation, forecasting, synth.

Commands: ``search``, ``evaluate``, ``forecast``, ``synth``. Exit codes:
0 ok, 1 usage error, 2 data error, 3 numeric failure. ``GAMEVO_SEED`` is
the seed fallback when ``--seed`` is absent. All outputs are written
atomically (temp file + rename) and inputs are never mutated.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import fields, replace

import numpy as np
import pandas as pd

from . import dsl
from .adapt import kalman_forecast
from .data import ReplaySpec, SplitSpec, load_csv, metrics, split, synth_generate, weekly_replay
from .fit import fit, fitted_from_dict, fitted_to_dict, predict_fixed
from .formula import AdaptiveModel
from .presets import PRESETS, sota_registry, synth_benchmark_spec
from .search import SearchConfig, evolve, random_search

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _parse_hours(text):
    hours = []
    for part in text.split(","):
        if "-" in part:
            lo, hi = part.split("-", 1)
            hours.extend(range(int(lo), int(hi) + 1))
        else:
            hours.append(int(part))
    if any(not 0 <= h <= 23 for h in hours):
        raise _UsageError(f"hours outside 0..23: {text}")
    return hours


def _resolve_seed(args):
    if args.seed is not None:
        return args.seed
    env = os.environ.get("GAMEVO_SEED")
    return int(env) if env else 0


def _load_config(path, registry):
    values = {}
    if path:
        with open(path, "rb") as fh:
            values = tomllib.load(fh)
    known = {f.name for f in fields(SearchConfig)} - {"registry"}
    unknown = set(values) - known
    if unknown:
        raise _UsageError(f"unknown config keys: {sorted(unknown)}")
    for key in ("l_var", "l_sp", "l_te", "smooth_covariates",
                "day_covariates", "lag_covariates"):
        if key in values:
            values[key] = tuple(values[key])
    for key in ("l_day", "l_os"):
        if key in values:
            values[key] = tuple(tuple(v) for v in values[key])
    return SearchConfig(registry=registry, **values)


def _hour_seed(base, hour):
    return int(np.random.SeedSequence([base, hour]).generate_state(1)[0])


def _search_one_hour(algo, config, dataset, splitspec, hour, seed_models):
    subset = dataset.filter_hour(hour)
    train, valid, _ = split(subset, splitspec)
    if algo == "random":
        return random_search(config, train, valid)
    return evolve(algo, config, train, valid, seed_models=seed_models)


def _write_audit(path, audit):
    lines = [json.dumps(entry, sort_keys=True) for entry in audit]
    _atomic_write(path, "\n".join(lines) + "\n")


def cmd_search(args):
    dataset = load_csv(args.data, args.schema)
    config = _load_config(args.config, dataset.registry)
    overrides = {}
    for flag, key in (("budget", "budget"), ("population", "population"),
                      ("tournament", "tournament"), ("eta", "eta")):
        value = getattr(args, flag)
        if value is not None:
            overrides[key] = value
    if overrides:
        config = replace(config, **overrides)
    base_seed = _resolve_seed(args)
    splitspec = SplitSpec(pd.Timestamp(args.train_end),
                          pd.Timestamp(args.valid_end))
    hours = _parse_hours(args.hours)
    os.makedirs(args.out, exist_ok=True)

    def run(hour):
        cfg = replace(config, seed=_hour_seed(base_seed, hour))
        seeds = ()
        if args.seed_preset:
            factory = PRESETS[args.seed_preset]
            seeds = (AdaptiveModel(factory(hour)),)
        return hour, _search_one_hour(args.algo, cfg, dataset, splitspec,
                                      hour, seeds)

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(run, hours))
    else:
        results = [run(h) for h in hours]

    summary = []
    for hour, result in results:
        best = result.best
        model_doc = {
            "registry": dsl.registry_to_dict(dataset.registry),
            "model": dsl.model_to_dict(best.model),
            "formula_text": dsl.serialize(best.model),
            "hour": hour,
            "loss": best.loss,
            "rmse_valid": best.rmse_valid,
            "edf": best.edf,
            "split": {"train_end": str(args.train_end),
                      "valid_end": str(args.valid_end)},
            "target": dataset.target,
            "fitted": fitted_to_dict(best.fitted) if best.fitted else None,
        }
        _atomic_write(os.path.join(args.out, f"model_h{hour:02d}.json"),
                      json.dumps(model_doc, sort_keys=True))
        _write_audit(os.path.join(args.out, f"audit_h{hour:02d}.ndjson"),
                     result.audit)
        summary.append({"hour": hour, "loss": best.loss,
                        "rmse_valid": best.rmse_valid, "edf": best.edf,
                        "model": dsl.serialize(best.model)})
    frame = pd.DataFrame(summary)
    _atomic_write(os.path.join(args.out, "summary.csv"),
                  frame.to_csv(index=False))
    print(frame.to_string(index=False))
    return EXIT_OK


def _load_model_doc(path):
    with open(path) as fh:
        doc = json.load(fh)
    model = dsl.model_from_dict(doc["model"])
    fitted = fitted_from_dict(doc["fitted"]) if doc.get("fitted") else None
    return doc, model, fitted


def _restrict_to_model_hour(dataset, doc):
    hour = doc.get("hour")
    return dataset.filter_hour(hour) if hour is not None else dataset


def cmd_evaluate(args):
    doc, model, fitted = _load_model_doc(args.model)
    dataset = load_csv(args.data, args.schema)
    dataset = _restrict_to_model_hour(dataset, doc)
    splitspec = SplitSpec(
        pd.Timestamp(args.train_end or doc["split"]["train_end"]),
        pd.Timestamp(args.valid_end or doc["split"]["valid_end"]))
    parts = dict(zip(("train", "valid", "test"), split(dataset, splitspec)))
    if fitted is None:
        fitted = fit(model.formula, parts["train"])

    rows = []
    hourly_pred = {}
    for split_name, part in parts.items():
        preds, _ = predict_fixed(fitted, part)
        rmse, mape = metrics(part.y, preds)
        rows.append({"mode": "fixed", "split": split_name,
                     "rmse": rmse, "mape": mape})
        hourly_pred.setdefault("fixed", []).append((part, preds))
        if model.q_diag is not None:
            forecasts, _ = kalman_forecast(fitted,
                                           np.asarray(model.q_diag), part)
            rmse, mape = metrics(part.y, forecasts)
            rows.append({"mode": "adaptive", "split": split_name,
                         "rmse": rmse, "mape": mape})
            hourly_pred.setdefault("adaptive", []).append((part, forecasts))
    table = pd.DataFrame(rows)
    print(table.to_string(index=False))

    os.makedirs(args.out, exist_ok=True)
    _atomic_write(os.path.join(args.out, "metrics.csv"),
                  table.to_csv(index=False))
    mode = "adaptive" if model.q_diag is not None else "fixed"
    test_part, test_pred = hourly_pred[mode][-1]
    hourly = _per_hour_table(test_part, test_pred)
    _atomic_write(os.path.join(args.out, "per_hour_rmse.csv"),
                  hourly.to_csv(index=False))
    _write_hour_chart(os.path.join(args.out, "per_hour_rmse.svg"), hourly)
    return EXIT_OK


def _per_hour_table(part, preds):
    from .data import _per_hour_rmse

    return _per_hour_rmse(part.index, part.y, np.asarray(preds))


def _write_hour_chart(path, hourly):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 3))
    ax.bar(hourly["hour"], hourly["rmse"])
    ax.set_xlabel("hour of day")
    ax.set_ylabel("test RMSE")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def cmd_forecast(args):
    doc, model, fitted = _load_model_doc(args.model)
    dataset = load_csv(args.data, args.schema)
    dataset = _restrict_to_model_hour(dataset, doc)
    if fitted is None:
        raise ValueError("model file carries no fitted state; run search first")
    q = np.asarray(model.q_diag) if model.q_diag is not None else None
    table, weekly, hourly = weekly_replay(fitted, q, dataset, ReplaySpec())
    _atomic_write(args.out, table.to_csv(index=False))
    print(weekly.to_string(index=False))
    return EXIT_OK


def cmd_synth(args):
    seed = _resolve_seed(args)
    drift = None
    if args.drift != 1.0:
        # linear drift of the first effect weight over the final third
        def drift_schedule(n):
            theta = np.ones((n, 3))
            start = 2 * n // 3
            theta[start:, 0] = np.linspace(1.0, args.drift, n - start)
            return theta
        drift = drift_schedule(args.n)
    spec = synth_benchmark_spec(theta_schedule=drift)
    dataset = synth_generate(spec, args.n, np.random.default_rng(seed))
    frame = dataset.frame.copy()
    frame.insert(0, "timestamp", frame.index.strftime("%Y-%m-%dT%H:%M:%S%z"))
    _atomic_write(args.out, frame.to_csv(index=False))
    schema = {"target": "load",
              "covariates": dsl.registry_to_dict(spec.registry)}
    _atomic_write(args.out + ".schema.json", json.dumps(schema, indent=2))
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="gamevo",
                     description="Adaptive additive-model selection")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("search", help="run a model search per hour")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--config", default=None, help="TOML search configuration")
    p.add_argument("--algo", default="ea-fq",
                   choices=("ea-fq", "ea-f-qigs", "random"))
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--population", type=int, default=None)
    p.add_argument("--tournament", type=int, default=None)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--train-end", required=True)
    p.add_argument("--valid-end", required=True)
    p.add_argument("--hours", default="0-23")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--seed-preset", default=None, choices=sorted(PRESETS))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("evaluate", help="score a model file on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--train-end", default=None)
    p.add_argument("--valid-end", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("forecast", help="operational weekly replay")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("synth", help="generate a synthetic benchmark dataset")
    p.add_argument("--n", type=int, default=4000)
    p.add_argument("--drift", type=float, default=1.0,
                   help="final weight of the first effect (1.0 = no drift)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
