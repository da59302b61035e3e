"""Datasets: loading, splitting, synthesis, metrics, and the weekly replay."""

import numpy as np
import pandas as pd
import pytest

from gamevo.data import (
    ReplaySpec,
    SplitSpec,
    SynthSpec,
    TimeDataset,
    load_csv,
    metrics,
    split,
    synth_generate,
    weekly_replay,
)
from gamevo.fit import fit, predict_fixed
from gamevo.presets import synth_benchmark_spec

from conftest import make_dataset

SCHEMA = {
    "target": "load",
    "covariates": [
        {"name": "Temp", "kind": "numeric"},
        {"name": "Day", "kind": "categorical", "modalities": 7},
    ],
}


def write_csv(path, n=48, corrupt=None):
    index = pd.date_range("2022-01-03T00:00:00+00:00", periods=n, freq="h")
    frame = pd.DataFrame({
        "timestamp": index.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "load": np.arange(n, dtype=float),
        "Temp": np.linspace(0, 10, n),
        "Day": 1 + np.arange(n) // 24 % 7,
    })
    if corrupt:
        corrupt(frame)
    frame.to_csv(path, index=False)
    return path


class TestLoadCsv:
    def test_round_trip(self, tmp_path):
        path = write_csv(tmp_path / "d.csv")
        data = load_csv(path, SCHEMA)
        assert len(data) == 48
        assert data.target == "load"
        assert data.registry["Day"].modalities == 7
        assert np.array_equal(data.y, np.arange(48.0))

    def test_schema_from_file(self, tmp_path):
        import json
        path = write_csv(tmp_path / "d.csv")
        schema_path = tmp_path / "schema.json"
        schema_path.write_text(json.dumps(SCHEMA))
        data = load_csv(path, str(schema_path))
        assert "Temp" in data.registry

    def test_missing_timestamp_column(self, tmp_path):
        path = write_csv(tmp_path / "d.csv",
                         corrupt=lambda f: f.drop(columns=["timestamp"],
                                                  inplace=True))
        with pytest.raises(ValueError, match="timestamp"):
            load_csv(path, SCHEMA)

    def test_duplicate_timestamp(self, tmp_path):
        def dup(frame):
            frame.loc[5, "timestamp"] = frame.loc[4, "timestamp"]
        with pytest.raises(ValueError, match="duplicated"):
            load_csv(write_csv(tmp_path / "d.csv", corrupt=dup), SCHEMA)

    def test_gap_detected(self, tmp_path):
        def gap(frame):
            frame.drop(index=10, inplace=True)
        with pytest.raises(ValueError, match="gap"):
            load_csv(write_csv(tmp_path / "d.csv", corrupt=gap), SCHEMA)

    def test_categorical_out_of_range(self, tmp_path):
        def bad(frame):
            frame.loc[3, "Day"] = 9
        with pytest.raises(ValueError, match="row 3.*'Day'"):
            load_csv(write_csv(tmp_path / "d.csv", corrupt=bad), SCHEMA)

    def test_non_finite_covariate(self, tmp_path):
        def bad(frame):
            frame.loc[7, "Temp"] = np.nan
        with pytest.raises(ValueError, match="row 7.*'Temp'"):
            load_csv(write_csv(tmp_path / "d.csv", corrupt=bad), SCHEMA)

    def test_missing_target_values(self, tmp_path):
        def bad(frame):
            frame.loc[2, "load"] = np.nan
        with pytest.raises(ValueError, match="target"):
            load_csv(write_csv(tmp_path / "d.csv", corrupt=bad), SCHEMA)


class TestViews:
    def test_views_share_the_frame(self):
        data = make_dataset(100, {"X": np.arange(100.0)})
        view = data.view(np.arange(50, 100))
        assert len(view) == 50
        assert np.array_equal(view.full_column("X"), np.arange(100.0))
        assert view.index[0] == data.index[50]

    def test_filter_hour(self):
        data = make_dataset(72, {"X": np.arange(72.0)})
        sub = data.filter_hour(5)
        assert len(sub) == 3
        assert set(sub.index.hour) == {5}


class TestSplit:
    def make(self):
        return make_dataset(240, {"X": np.arange(240.0)})

    def test_lossless_partition(self):
        data = self.make()
        spec = SplitSpec(data.index[99], data.index[179])
        train, valid, test = split(data, spec)
        assert len(train) == 100 and len(valid) == 80 and len(test) == 60
        merged = np.sort(np.concatenate([train.positions, valid.positions,
                                         test.positions]))
        assert np.array_equal(merged, np.arange(240))

    def test_exclusions_affect_train_only(self):
        data = self.make()
        spec = SplitSpec(data.index[99], data.index[179],
                         exclusions=((data.index[10], data.index[19]),))
        train, valid, test = split(data, spec)
        assert len(train) == 90
        assert len(valid) == 80 and len(test) == 60
        assert not np.isin(np.arange(10, 20), train.positions).any()

    def test_boundary_ordering(self):
        data = self.make()
        with pytest.raises(ValueError, match="train_end < valid_end"):
            split(data, SplitSpec(data.index[50], data.index[50]))

    def test_empty_partition(self):
        data = self.make()
        with pytest.raises(ValueError, match="empty partition: test"):
            split(data, SplitSpec(data.index[99], data.index[239]))


class TestSynth:
    def test_deterministic_per_seed(self):
        spec = synth_benchmark_spec()
        a = synth_generate(spec, 300, np.random.default_rng(5))
        b = synth_generate(spec, 300, np.random.default_rng(5))
        c = synth_generate(spec, 300, np.random.default_rng(6))
        assert a.frame.equals(b.frame)
        assert not a.frame.equals(c.frame)

    def test_generating_truth_is_recoverable(self):
        spec = synth_benchmark_spec(noise_sigma=0.0)
        data = synth_generate(spec, 500, np.random.default_rng(7))
        truth = np.full(500, spec.intercept)
        truth += spec.effect_functions[0](data.frame["Temp"].to_numpy())
        truth += spec.effect_functions[1](data.frame["Day"].to_numpy())
        truth += spec.effect_functions[2](data.frame["PosYear"].to_numpy())
        assert np.allclose(data.y, truth)

    def test_theta_schedule_applies(self):
        base = synth_benchmark_spec(noise_sigma=0.0)
        doubled = synth_benchmark_spec(
            noise_sigma=0.0, theta_schedule=lambda t: [2.0, 1.0, 1.0])
        a = synth_generate(base, 200, np.random.default_rng(8))
        b = synth_generate(doubled, 200, np.random.default_rng(8))
        extra = base.effect_functions[0](a.frame["Temp"].to_numpy())
        assert np.allclose(b.y - a.y, extra)


class TestMetrics:
    def test_hand_oracle(self):
        y = np.array([10.0, 20.0, 40.0])
        yhat = np.array([12.0, 18.0, 44.0])
        rmse, mape = metrics(y, yhat)
        assert rmse == pytest.approx(np.sqrt((4 + 4 + 16) / 3))
        assert mape == pytest.approx((0.2 + 0.1 + 0.1) / 3 * 100)

    def test_zero_targets_skipped_with_warning(self):
        with pytest.warns(RuntimeWarning, match="zero target"):
            rmse, mape = metrics(np.array([0.0, 10.0]), np.array([1.0, 11.0]))
        assert mape == pytest.approx(10.0)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            metrics(np.zeros(3), np.zeros(4))

    def test_per_hour_pools_back_to_total(self):
        from gamevo.data import _per_hour_rmse
        rng = np.random.default_rng(9)
        index = pd.date_range("2022-01-03T00:00:00+00:00", periods=480,
                              freq="h")
        y = rng.normal(size=480)
        yhat = y + rng.normal(0, 0.5, 480)
        table = _per_hour_rmse(index, y, yhat)
        pooled = np.sqrt((table["rmse"] ** 2 * table["n"]).sum()
                         / table["n"].sum())
        total, _ = metrics(y, yhat)
        assert pooled == pytest.approx(total, rel=1e-12)


class TestWeeklyReplay:
    def fitted_on_benchmark(self, n=24 * 7 * 6, seed=12):
        spec = synth_benchmark_spec()
        data = synth_generate(spec, n, np.random.default_rng(seed))
        return data, fit(spec.formula, data)

    def test_structure_and_frozen_weights(self):
        data, fitted = self.fitted_on_benchmark()
        with pytest.warns(RuntimeWarning, match="partial"):
            table, weekly, hourly = weekly_replay(fitted, np.full(3, 1e-6),
                                                  data)
        # every produced horizon is a complete Monday-08 -> Monday-07 week
        assert set(weekly["n"]) == {168}
        stamps = pd.DatetimeIndex(table["timestamp"])
        assert len(table) == 168 * len(weekly)
        assert len(hourly) == 24
        # weights are frozen over each forecast week
        for upd in weekly["update"]:
            block = table[(stamps >= upd)
                          & (stamps <= upd + pd.Timedelta(hours=167))]
            for col in ("theta_1", "theta_2", "theta_3"):
                assert block[col].nunique() == 1

    def test_zero_noise_replay_equals_fixed(self):
        data, fitted = self.fitted_on_benchmark()
        preds, _ = predict_fixed(fitted, data)
        with pytest.warns(RuntimeWarning):
            t_fixed, _, _ = weekly_replay(fitted, None, data)
        with pytest.warns(RuntimeWarning):
            t_zero, _, _ = weekly_replay(fitted, np.zeros(3), data)
        assert np.array_equal(t_fixed["forecast"], t_zero["forecast"])
        stamps = pd.DatetimeIndex(t_fixed["timestamp"])
        positions = data.index.get_indexer(stamps)
        assert np.array_equal(t_fixed["forecast"].to_numpy(),
                              preds[positions])

    def test_unreleased_observations_never_leak(self):
        data, fitted = self.fitted_on_benchmark()
        # corrupt everything after the last release cutoff: the final
        # Monday-08:00 update only sees data through the previous Friday 23:00
        idx = data.index
        mondays = idx[(idx.dayofweek == 0) & (idx.hour == 8)]
        last_cutoff = (mondays[-1].normalize() - pd.Timedelta(days=3)
                       + pd.Timedelta(hours=23))
        corrupted_frame = data.frame.copy()
        corrupted_frame.loc[idx > last_cutoff, "load"] += 1e6
        corrupted = TimeDataset(corrupted_frame, data.target, data.registry)
        with pytest.warns(RuntimeWarning):
            clean_table, _, _ = weekly_replay(fitted, np.full(3, 1e-5), data)
        with pytest.warns(RuntimeWarning):
            dirty_table, _, _ = weekly_replay(fitted, np.full(3, 1e-5),
                                              corrupted)
        assert np.array_equal(clean_table["forecast"],
                              dirty_table["forecast"])

    def test_too_short_dataset(self):
        data, fitted = self.fitted_on_benchmark(n=48)
        with pytest.raises(ValueError):
            weekly_replay(fitted, None, data)
