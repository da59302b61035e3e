"""Feature engineering: smoothing, category selection, calendar columns.

All functions are pure and operate on full column histories so that
engineered values at time t only ever depend on observations up to t.
"""

from __future__ import annotations

import numpy as np
import pandas as pd
from scipy.signal import lfilter

__all__ = ["exp_smooth", "select_categories", "select_days", "lag_columns",
           "derive_calendar"]


def exp_smooth(series, alpha: float, init=None) -> np.ndarray:
    """Exponentially smoothed series: out[t] = a*out[t-1] + (1-a)*x[t].

    Without ``init`` the recursion starts at out[0] = x[0]; with ``init``
    (a carried-over smoothing state) out[0] = a*init + (1-a)*x[0].
    alpha=0 returns the series unchanged; alpha=1 holds the start value.
    """
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        raise ValueError("exp_smooth: empty series")
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"exp_smooth: alpha={alpha} outside [0, 1]")
    seed = x[0] if init is None else float(init)
    # IIR recursion; zi seeds the filter state before the first sample
    out, _ = lfilter([1.0 - alpha], [1.0, -alpha], x,
                     zi=np.array([alpha * seed]))
    return out


def select_categories(series, v) -> np.ndarray:
    """Keep the modalities whose bit is set; everything else maps to 0.

    ``series`` takes integer values in {0..m} (0 = default), ``v`` is a
    bit vector of length m indexed by modality 1..m.
    """
    x = np.asarray(series, dtype=int)
    v = np.asarray(v, dtype=int)
    m = v.size
    if x.size and x.max() > m:
        raise ValueError(f"select_categories: value {x.max()} > m={m}")
    if x.size and x.min() < 0:
        raise ValueError("select_categories: negative category value")
    keep = np.concatenate(([0], v))  # index 0 = default, never kept
    return np.where(keep[x] == 1, x, 0)


def select_days(series, days) -> np.ndarray:
    """Keep only the listed weekday codes (1..7); others map to 0."""
    v = np.zeros(7, dtype=int)
    for d in days:
        if not 1 <= d <= 7:
            raise ValueError(f"select_days: weekday code {d} outside 1..7")
        v[d - 1] = 1
    return select_categories(series, v)


def lag_columns(series, offsets) -> np.ndarray:
    """Shift a column by each offset (one output column per offset).

    Positions before the first observation take the first observed value,
    so every output is total.
    """
    x = np.asarray(series, dtype=float)
    out = np.empty((x.size, len(offsets)))
    for j, off in enumerate(offsets):
        if off == 0:
            out[:, j] = x
        else:
            out[off:, j] = x[:-off]
            out[:off, j] = x[0]
    return out


def _year_position(index: pd.DatetimeIndex) -> np.ndarray:
    """Linear position in the civil year: 0 at Jan 1 00:00, 1 at Dec 31 23:59.

    The denominator is the number of seconds between those two instants in
    that civil year, so leap years are handled exactly.
    """
    out = np.empty(len(index))
    tz = index.tz
    for year in np.unique(index.year):
        sel = index.year == year
        start = pd.Timestamp(year=year, month=1, day=1, tz=tz)
        end = pd.Timestamp(year=year, month=12, day=31, hour=23, minute=59, tz=tz)
        span = (end - start).total_seconds()
        out[sel] = (index[sel] - start).total_seconds() / span
    return np.clip(out, 0.0, 1.0)


def _load_label_map(calendar):
    """Calendar input: mapping date->label, or a CSV path with date,label."""
    if calendar is None:
        return {}
    if isinstance(calendar, (str, bytes)) or hasattr(calendar, "read"):
        table = pd.read_csv(calendar)
        if not {"date", "label"} <= set(table.columns):
            raise ValueError("calendar CSV needs columns date,label")
        return {pd.Timestamp(d).date(): str(lab)
                for d, lab in zip(table["date"], table["label"])}
    return {pd.Timestamp(d).date(): str(lab) for d, lab in calendar.items()}


BREAK_LABELS = ("winter-time", "summer-time", "august", "christmas",
                "other-school-holiday")


def derive_calendar(index: pd.DatetimeIndex, holiday_calendar=None,
                    break_calendar=None, daily_extrema_of=None,
                    break_labels=BREAK_LABELS) -> pd.DataFrame:
    """Derive calendar covariates from a uniform, increasing time index.

    Returns Hour (0-23), Day (weekday 1-7, Monday=1), PosYear in [0,1],
    Month (1-12), Weekend (0/1), Break (categorical code over
    ``break_labels``, 0 = none), Holiday (0/1), and for each named column
    in ``daily_extrema_of`` (a mapping name -> values) the daily max and
    min columns ``<name>Max``/``<name>Min``.
    """
    if len(index) >= 2:
        steps = np.diff(index.asi8)
        if (steps <= 0).any():
            raise ValueError("timestamps must be strictly increasing")
        if len(set(steps)) != 1:
            raise ValueError("timestamps must have a uniform step")
    out = pd.DataFrame(index=index)
    out["Hour"] = index.hour
    out["Day"] = index.dayofweek + 1
    out["PosYear"] = _year_position(index)
    out["Month"] = index.month
    out["Weekend"] = (index.dayofweek >= 5).astype(int)

    holidays = _load_label_map(holiday_calendar)
    dates = index.date
    out["Holiday"] = np.array([1 if d in holidays else 0 for d in dates])

    breaks = _load_label_map(break_calendar)
    code = {label: i + 1 for i, label in enumerate(break_labels)}
    out["Break"] = np.array([code.get(breaks.get(d, ""), 0) for d in dates])

    if daily_extrema_of:
        days = pd.Series(dates, index=index)
        for name, values in daily_extrema_of.items():
            col = pd.Series(np.asarray(values, dtype=float), index=index)
            grouped = col.groupby(days.values)
            out[f"{name}Max"] = grouped.transform("max").to_numpy()
            out[f"{name}Min"] = grouped.transform("min").to_numpy()
    return out
