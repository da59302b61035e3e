"""Time-indexed datasets: loading, splitting, synthesis, metrics, replay.

A TimeDataset is a view (a set of row positions) over a full underlying
frame. Views created by :func:`split` share the frame, so history-aware
engineering (smoothing, lags) always sees the complete past even when
fitting or predicting on a slice.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .formula import CovariateRegistry, Formula

__all__ = ["TimeDataset", "SplitSpec", "ReplaySpec", "SynthSpec",
           "load_csv", "split", "synth_generate", "metrics", "weekly_replay"]


class TimeDataset:
    """Target + covariate columns over a strictly increasing uniform index."""

    def __init__(self, frame: pd.DataFrame, target: str,
                 registry: CovariateRegistry | None = None, positions=None):
        if not isinstance(frame.index, pd.DatetimeIndex):
            raise ValueError("frame must have a DatetimeIndex")
        if target not in frame.columns:
            raise ValueError(f"missing target column {target!r}")
        if len(frame) >= 2:
            steps = np.unique(np.diff(frame.index.asi8))
            if (steps <= 0).any():
                raise ValueError("timestamps must be strictly increasing")
        self.frame = frame
        self.target = target
        self.registry = registry
        if positions is None:
            positions = np.arange(len(frame))
        self.positions = np.asarray(positions, dtype=int)

    def __len__(self):
        return len(self.positions)

    @property
    def index(self) -> pd.DatetimeIndex:
        return self.frame.index[self.positions]

    @property
    def y(self) -> np.ndarray:
        return self.frame[self.target].to_numpy(dtype=float)[self.positions]

    def full_column(self, name) -> np.ndarray:
        """Entire history of a column (engineering runs on full history)."""
        if name not in self.frame.columns:
            raise ValueError(f"missing covariate column {name!r}")
        return self.frame[name].to_numpy()

    def view(self, positions) -> "TimeDataset":
        return TimeDataset(self.frame, self.target, self.registry, positions)

    def restrict(self, mask_or_index) -> "TimeDataset":
        """View of the rows of this dataset selected by a boolean mask."""
        mask = np.asarray(mask_or_index)
        return self.view(self.positions[mask])

    def filter_hour(self, hour: int) -> "TimeDataset":
        return self.restrict(self.index.hour == hour)


@dataclass(frozen=True)
class SplitSpec:
    """Train/validation boundaries plus training exclusion windows."""

    train_end: pd.Timestamp           # tau1: last training instant (inclusive)
    valid_end: pd.Timestamp           # tau2: last validation instant (inclusive)
    exclusions: tuple = ()            # [(start, end)] removed from train only


@dataclass(frozen=True)
class ReplaySpec:
    """Operational weekly update protocol with delayed data release."""

    update_weekday: int = 0           # Monday
    update_hour: int = 8
    release_lag_start_days: int = 9   # first batch starts Saturday 9 days back
    release_end_weekday: int = 4      # Friday
    release_end_hour: int = 23
    horizon_hours: int = 24 * 7 - 1   # Monday 08:00 -> next Monday 07:00


def load_csv(path, schema) -> TimeDataset:
    """Load a dataset CSV against a schema.

    The schema (dict or JSON file path) declares::

        {"target": "load",
         "covariates": [{"name": "Temp", "kind": "numeric"},
                        {"name": "Day", "kind": "categorical", "modalities": 7},
                        ...]}

    The CSV needs a `timestamp` column (ISO-8601 with offset), the target,
    and every declared covariate. Gaps, duplicates and out-of-range
    categorical cells are hard errors.
    """
    from .dsl import registry_from_dict

    if isinstance(schema, (str, bytes)):
        with open(schema) as fh:
            schema = json.load(fh)
    table = pd.read_csv(path)
    if "timestamp" not in table.columns:
        raise ValueError("missing column 'timestamp'")
    stamps = pd.to_datetime(table["timestamp"], utc=True)
    dup = stamps[stamps.duplicated()]
    if len(dup):
        raise ValueError(f"duplicated timestamp {dup.iloc[0]}")
    table = table.drop(columns=["timestamp"])
    table.index = pd.DatetimeIndex(stamps)
    if len(table) >= 2:
        steps = np.unique(np.diff(table.index.asi8))
        if (steps <= 0).any():
            raise ValueError("timestamps not strictly increasing")
        if steps.size != 1:
            raise ValueError("timestamp gap or irregular step detected")
    target = schema.get("target", "load")
    if target not in table.columns:
        raise ValueError(f"missing column {target!r}")
    registry = registry_from_dict(schema.get("covariates", []))
    for cov in registry:
        if cov.name not in table.columns:
            raise ValueError(f"missing column {cov.name!r}")
        col = table[cov.name]
        if cov.is_categorical:
            vals = col.to_numpy()
            bad = (vals < 0) | (vals > cov.modalities)
            if bad.any():
                row = int(np.argmax(bad))
                raise ValueError(
                    f"categorical cell outside 0..{cov.modalities} "
                    f"at row {row}, column {cov.name!r}")
        else:
            if not np.isfinite(col.to_numpy(dtype=float)).all():
                row = int(np.argmax(~np.isfinite(col.to_numpy(dtype=float))))
                raise ValueError(f"unparseable cell at row {row}, "
                                 f"column {cov.name!r}")
    if not np.isfinite(table[target].to_numpy(dtype=float)).all():
        raise ValueError(f"missing values in target column {target!r}")
    return TimeDataset(table, target, registry)


def split(dataset: TimeDataset, spec: SplitSpec):
    """Partition into (train, valid, test) views by the split boundaries.

    Exclusion windows are removed from the training part only; the test
    part is everything after the validation end.
    """
    idx = dataset.index
    tau1 = pd.Timestamp(spec.train_end)
    tau2 = pd.Timestamp(spec.valid_end)
    if tau1.tzinfo is None and idx.tz is not None:
        tau1 = tau1.tz_localize(idx.tz)
        tau2 = tau2.tz_localize(idx.tz)
    if not tau1 < tau2:
        raise ValueError("need train_end < valid_end")
    train_mask = idx <= tau1
    for start, end in spec.exclusions:
        start, end = pd.Timestamp(start), pd.Timestamp(end)
        if start.tzinfo is None and idx.tz is not None:
            start = start.tz_localize(idx.tz)
            end = end.tz_localize(idx.tz)
        train_mask &= ~((idx >= start) & (idx <= end))
    valid_mask = (idx > tau1) & (idx <= tau2)
    test_mask = idx > tau2
    parts = tuple(dataset.restrict(m) for m in (train_mask, valid_mask, test_mask))
    for name, part in zip(("train", "valid", "test"), parts):
        if len(part) == 0:
            raise ValueError(f"empty partition: {name}")
    return parts


@dataclass
class SynthSpec:
    """Generating process for synthetic benchmarks.

    ``effect_functions[k]`` maps the k-th effect's engineered column(s) to
    its contribution. ``theta_schedule`` (optional, shape (n, K) or a
    callable t -> K-vector) drifts the effect weights over time.
    ``processes`` overrides covariate generation per name with a callable
    ``(n, rng) -> values``.
    """

    formula: Formula
    registry: CovariateRegistry
    effect_functions: tuple
    noise_sigma: float = 1.0
    intercept: float = 0.0
    theta_schedule: object = None
    processes: dict = field(default_factory=dict)
    start: str = "2021-01-04T00:00:00+00:00"
    freq: str = "h"


def _default_process(cov, n, rng, step_hours=1.0):
    if cov.kind == "numeric":
        # smooth AR(1), temperature-like scale
        eps = rng.normal(0.0, 1.0, n)
        x = np.empty(n)
        x[0] = eps[0]
        for t in range(1, n):
            x[t] = 0.98 * x[t - 1] + eps[t]
        x = x / max(x.std(), 1e-12)
        return 12.0 + 6.0 * x
    if cov.kind == "cyclic":
        cycle = max(int(round(24 * 365 / step_hours)), 2)
        return (np.arange(n) % cycle) / cycle * cov.period
    # categorical: daily cycle over the modalities
    stride = max(int(round(24 / step_hours)), 1)
    return 1 + (np.arange(n) // stride) % cov.modalities


def synth_generate(spec: SynthSpec, n: int, rng) -> TimeDataset:
    """Draw a synthetic dataset from a known generating formula.

    Y_t = intercept + sum_k theta_{k,t} g_k(psi_k(X)) + N(0, sigma^2).
    The generating truth stays available through ``spec`` for oracle use.
    """
    from .fit import engineer_effect

    rng = np.random.default_rng(rng)
    index = pd.date_range(spec.start, periods=n, freq=spec.freq)
    step_hours = ((index[1] - index[0]).total_seconds() / 3600.0
                  if n >= 2 else 1.0)
    frame = pd.DataFrame(index=index)
    for cov in spec.registry:
        proc = spec.processes.get(cov.name)
        values = (proc(n, rng) if proc is not None
                  else _default_process(cov, n, rng, step_hours))
        frame[cov.name] = values
    frame["load"] = 0.0
    dataset = TimeDataset(frame, "load", spec.registry)

    k_count = len(spec.formula)
    if spec.theta_schedule is None:
        theta = np.ones((n, k_count))
    elif callable(spec.theta_schedule):
        theta = np.array([spec.theta_schedule(t) for t in range(n)])
    else:
        theta = np.asarray(spec.theta_schedule, dtype=float)
    y = np.full(n, float(spec.intercept))
    for k, (effect, g) in enumerate(zip(spec.formula, spec.effect_functions)):
        cols = engineer_effect(effect, dataset)
        value = cols[0] if len(cols) == 1 else cols
        y += theta[:, k] * np.asarray(g(value), dtype=float)
    y += rng.normal(0.0, spec.noise_sigma, n)
    frame["load"] = y
    return dataset


def metrics(y, yhat):
    """(RMSE, MAPE in percent). MAPE skips zero targets with a warning."""
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {yhat.shape}")
    rmse = float(np.sqrt(np.mean((y - yhat) ** 2)))
    nonzero = y != 0
    if not nonzero.all():
        warnings.warn(f"MAPE: {int((~nonzero).sum())} zero target values "
                      "skipped", RuntimeWarning)
    if nonzero.any():
        mape = float(np.mean(np.abs((y - yhat)[nonzero] / y[nonzero])) * 100.0)
    else:
        mape = float("nan")
    return rmse, mape


def _per_hour_rmse(index, y, yhat):
    table = []
    hours = index.hour
    for h in range(24):
        sel = hours == h
        if sel.any():
            rmse, mape = np.sqrt(np.mean((y[sel] - yhat[sel]) ** 2)), None
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                _, mape = metrics(y[sel], yhat[sel])
            table.append({"hour": h, "n": int(sel.sum()),
                          "rmse": float(rmse), "mape": mape})
        else:
            table.append({"hour": h, "n": 0, "rmse": float("nan"),
                          "mape": float("nan")})
    return pd.DataFrame(table)


def weekly_replay(fitted, q_diag, dataset: TimeDataset,
                  replayspec: ReplaySpec = ReplaySpec()):
    """Run the operational protocol: weekly delayed updates, 7-day forecasts.

    At every update instant the filter consumes exactly the newly released
    observations, then the horizon is forecast with the weights frozen at
    the update instant. Returns (forecast table, per-week metrics,
    per-hour metrics); a final partial horizon is dropped with a notice.
    """
    from .adapt import KalmanState, kalman_step
    from .fit import predict_fixed

    idx = dataset.index
    y = dataset.y
    preds, contrib = predict_fixed(fitted, dataset)
    k_count = contrib.values.shape[1]
    fixed_mode = q_diag is None
    state = KalmanState.initial(k_count, q_diag if not fixed_mode else None)

    # update instants: every configured weekday/hour inside the dataset
    upd_mask = ((idx.dayofweek == replayspec.update_weekday)
                & (idx.hour == replayspec.update_hour))
    updates = idx[upd_mask]
    if len(updates) == 0:
        raise ValueError("dataset does not span one full replay cycle")

    rows = []
    week_rows = []
    released_until = None
    dropped = 0
    for upd in updates:
        # data released at this update: up to previous Friday 23:00 ...
        release_end = upd.normalize() + pd.Timedelta(hours=replayspec.release_end_hour)
        days_back = (upd.dayofweek - replayspec.release_end_weekday) % 7
        release_end -= pd.Timedelta(days=days_back)
        # ... starting where the previous release stopped (first release:
        # Saturday 00:00 nine days earlier)
        if released_until is None:
            release_start = (upd.normalize()
                             - pd.Timedelta(days=replayspec.release_lag_start_days))
        else:
            release_start = released_until
        batch = (idx > release_start) & (idx <= release_end) if released_until is not None \
            else (idx >= release_start) & (idx <= release_end)
        released_until = release_end

        if not fixed_mode:
            for pos in np.flatnonzero(batch):
                state, _ = kalman_step(state, contrib.values[pos],
                                       y[pos] - contrib.intercept)

        horizon_end = upd + pd.Timedelta(hours=replayspec.horizon_hours)
        hmask = (idx >= upd) & (idx <= horizon_end)
        if idx[-1] < horizon_end:
            dropped += 1
            continue
        hpos = np.flatnonzero(hmask)
        if fixed_mode:
            fc = preds[hpos]
            theta = np.ones((len(hpos), k_count))
        else:
            fc = contrib.values[hpos] @ state.theta + contrib.intercept
            theta = np.tile(state.theta, (len(hpos), 1))
        for row, f, th in zip(hpos, fc, theta):
            rows.append((idx[row], y[row], float(f), *th))
        w_rmse, w_mape = metrics(y[hpos], fc)
        week_rows.append({"update": upd, "n": len(hpos),
                          "rmse": w_rmse, "mape": w_mape})
    if dropped:
        warnings.warn(f"dropped {dropped} partial final horizon(s)",
                      RuntimeWarning)
    if not rows:
        raise ValueError("horizon extends past dataset end for every update")
    cols = ["timestamp", "actual", "forecast"] + \
        [f"theta_{k + 1}" for k in range(k_count)]
    table = pd.DataFrame(rows, columns=cols)
    hourly = _per_hour_rmse(pd.DatetimeIndex(table["timestamp"]),
                            table["actual"].to_numpy(),
                            table["forecast"].to_numpy())
    return table, pd.DataFrame(week_rows), hourly
