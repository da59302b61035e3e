"""Shared builders for the test suite."""

import numpy as np
import pandas as pd
import pytest

from gamevo.data import TimeDataset
from gamevo.formula import Covariate, CovariateRegistry


def make_dataset(n, columns, y=None, start="2022-01-03T00:00:00+00:00",
                 freq="h", registry=None, target="load"):
    """A TimeDataset over an hourly UTC index with the given columns."""
    index = pd.date_range(start, periods=n, freq=freq)
    frame = pd.DataFrame({k: np.asarray(v) for k, v in columns.items()},
                         index=index)
    frame[target] = np.zeros(n) if y is None else np.asarray(y, dtype=float)
    return TimeDataset(frame, target, registry)


@pytest.fixture
def numeric_registry():
    return CovariateRegistry([Covariate("X")])


@pytest.fixture
def mixed_registry():
    return CovariateRegistry([
        Covariate("Temp"),
        Covariate("Wind"),
        Covariate("Day", "categorical", modalities=7),
        Covariate("PosYear", "cyclic", period=1.0),
    ])
