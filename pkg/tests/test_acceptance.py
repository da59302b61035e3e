"""Acceptance gate: the core behavioral guarantees, with pinned tolerances.

Each test prints one PASS/FAIL line for its criterion and enforces the
stated runtime budget.
"""

import contextlib
import itertools
import json
import time

import numpy as np
import pytest

from gamevo.adapt import KalmanState, kalman_forecast, kalman_step, q_igs, _training_rmse
from gamevo.basis import flatten_index
from gamevo.cli import main
from gamevo.data import load_csv, split, SplitSpec, synth_generate
from gamevo.features import exp_smooth
from gamevo.fit import PenalizedDesign, design_matrix, edf, fit, gcv_score, predict_fixed
from gamevo.formula import AdaptiveModel, Covariate, CovariateRegistry, validate
from gamevo.presets import synth_benchmark_spec
from gamevo.search import (
    SearchConfig,
    crossover,
    default_eta,
    evaluate,
    evolve,
    generate_model,
    mutate,
    random_search,
)

from test_fit import sin_dataset, spline_formula


@contextlib.contextmanager
def criterion(name, budget_seconds):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"[FAIL] {name}")
        raise
    elapsed = time.perf_counter() - start
    print(f"[PASS] {name} ({elapsed:.1f}s, budget {budget_seconds}s)")
    assert elapsed < budget_seconds, \
        f"{name}: {elapsed:.1f}s over the {budget_seconds}s budget"


def registry_eight():
    return CovariateRegistry([
        Covariate("Temp"),
        Covariate("Day", "categorical", modalities=7),
        Covariate("PosYear", "cyclic", period=1.0),
        *(Covariate(f"X{i}") for i in range(1, 6)),
    ])


def test_edf_exactness():
    with criterion("edf-exactness", 1.0):
        train, _ = sin_dataset(n=1000)
        info = design_matrix(spline_formula(q=10), train)
        decomp = PenalizedDesign(info, train.y)
        p = info.X.shape[1]
        # unpenalized full-rank design: edf equals the column count
        assert abs(edf(decomp, (0.0,)) - p) < 1e-8
        # infinite smoothing: edf equals the penalty nullspace dimension
        nullity = p - np.linalg.matrix_rank(info.penalties[0])
        assert abs(edf(decomp, (1e10,)) - nullity) < 1e-6


def test_gcv_oracle():
    with criterion("gcv-oracle", 10.0):
        train, valid = sin_dataset(n=1000, noise=0.1)
        assert len(train) == 500
        info = design_matrix(spline_formula(q=20), train)
        decomp = PenalizedDesign(info, train.y)
        X, S = info.X, info.penalties[0]
        n = X.shape[0]
        rng = np.random.default_rng(101)
        for lam in 10.0 ** rng.uniform(-4, 4, 10):
            H = X @ np.linalg.solve(X.T @ X + lam * S, X.T)
            resid = train.y - H @ train.y
            brute = n * float(resid @ resid) / (n - np.trace(H)) ** 2
            assert abs(gcv_score((lam,), decomp) - brute) <= 1e-8 * brute
        fitted = fit(spline_formula(q=20), train)
        preds, _ = predict_fixed(fitted, valid)
        assert float(np.sqrt(np.mean((valid.y - preds) ** 2))) <= 0.12


def test_tensor_flatten():
    with criterion("tensor-flatten", 1.0):
        dims_list = [(q,) for q in range(1, 201)]
        for a in range(1, 201):
            for b in range(1, 200 // a + 1):
                dims_list.append((a, b))
                for c in range(1, 200 // (a * b) + 1):
                    dims_list.append((a, b, c))
        for dims in dims_list:
            want = list(itertools.product(*(range(1, q + 1) for q in dims)))
            got = [flatten_index(i, dims) for i in range(1, len(want) + 1)]
            assert got == want


def test_exponential_smoothing():
    with criterion("exponential-smoothing", 1.0):
        rng = np.random.default_rng(102)
        for _ in range(100):
            n = int(rng.integers(2, 300))
            x = rng.uniform(0.5, 2.0, n)
            alpha = float(rng.uniform(0.0, 1.0))
            got = exp_smooth(x, alpha)
            # closed form: geometric sum over the history plus the
            # geometrically discounted start value
            want = np.empty(n)
            for t in range(n):
                powers = alpha ** np.arange(t)
                want[t] = ((1 - alpha) * np.sum(powers * x[t:0:-1][: t])
                           + alpha ** t * x[0])
            assert np.allclose(got, want, rtol=1e-10, atol=0.0)


def test_kalman_degeneracy():
    with criterion("kalman-degeneracy", 5.0):
        spec = synth_benchmark_spec()
        data = synth_generate(spec, 10_000, np.random.default_rng(103))
        fitted = fit(spec.formula, data.view(np.arange(2000)))
        preds, _ = predict_fixed(fitted, data)
        forecasts, theta = kalman_forecast(fitted, np.zeros(3), data)
        assert np.array_equal(forecasts, preds)          # bit-identical
        assert np.array_equal(theta, np.ones_like(theta))
        # K=1, constant feature: the filter equals the batch regularized
        # least-squares posterior mean at every step
        c, theta0, p0 = 1.7, 0.3, 4.0
        rng = np.random.default_rng(104)
        y = rng.normal(2.0, 0.5, 500)
        state = KalmanState(np.array([theta0]), np.array([[p0]]), np.zeros(1))
        for t in range(500):
            state, _ = kalman_step(state, [c], y[t])
            closed = ((theta0 / p0 + c * y[: t + 1].sum())
                      / (1.0 / p0 + (t + 1) * c * c))
            assert abs(state.theta[0] - closed) <= 1e-6


def test_qigs_monotonicity():
    with criterion("qigs-monotonicity", 60.0):
        spec = synth_benchmark_spec()
        config = SearchConfig(registry=spec.registry, population=4, budget=8,
                              tournament=3, k_max_effects=3, p_bivar=0.0,
                              seed=0)
        rng = np.random.default_rng(105)
        checked = 0
        while checked < 10:
            data = synth_generate(spec, 300,
                                  np.random.default_rng(checked + 200))
            model = generate_model(config, rng)
            try:
                fitted = fit(model.formula, data)
            except Exception:
                continue
            _, contrib = predict_fixed(fitted, data)
            values = [
                _training_rmse(fitted,
                               q_igs(fitted, data, iterations=iters),
                               data, contrib, data.y)
                for iters in (1, 2, 3)
            ]
            assert all(b <= a for a, b in zip(values, values[1:]))
            checked += 1


def test_operator_closure():
    with criterion("operator-closure", 30.0):
        registry = registry_eight()
        config = SearchConfig(registry=registry, population=6, budget=20,
                              tournament=3,
                              smooth_covariates=("Temp",),
                              day_covariates=("Day",),
                              l_day=((6, 7), (1, 2, 3, 4, 5)),
                              lag_covariates=("X1",),
                              l_os=((1, 2), (1, 24)),
                              kalman=True, seed=0)
        rng = np.random.default_rng(106)
        pool = [generate_model(config, rng) for _ in range(10)]
        for step in range(10_000):
            i, j = rng.choice(len(pool), size=2, replace=False)
            if step % 2 == 0:
                child, _ = crossover(pool[i], pool[j], rng, config)
            else:
                child = mutate(pool[i], rng, config)
            assert validate(child, registry) == []
            assert len(child.q_diag) == len(child.formula)
            pool[int(rng.integers(len(pool)))] = child


def test_ea_recovery():
    with criterion("ea-recovery", 300.0):
        registry = registry_eight()
        spec = synth_benchmark_spec(registry=registry)
        wins_rmse = wins_pair = 0
        for seed in range(10):
            data = synth_generate(spec, 2000,
                                  np.random.default_rng(100 + seed))
            train = data.view(np.arange(1400))
            valid = data.view(np.arange(1400, 2000))
            eta = default_eta(valid.y)
            reference = evaluate(AdaptiveModel(spec.formula), train, valid,
                                 eta)
            config = SearchConfig(registry=registry, population=10,
                                  budget=100, tournament=5, k_max_effects=4,
                                  p_bivar=0.0, k_min=4, k_max=8, seed=seed)
            result = evolve("ea-f-qigs", config, train, valid)
            ea_best = min(result.population, key=lambda e: e.loss)
            baseline = random_search(config, train, valid)
            if ea_best.rmse_valid <= 1.05 * reference.rmse_valid:
                wins_rmse += 1
            if ea_best.loss <= baseline.best.loss:
                wins_pair += 1
        assert wins_rmse >= 8, f"recovered in only {wins_rmse}/10 seeds"
        assert wins_pair >= 8, f"beat random search in only {wins_pair}/10"


def test_adaptation_lift():
    with criterion("adaptation-lift", 300.0):
        n = 3000
        theta = np.ones((n, 3))
        theta[1500:, 0] = np.linspace(1.0, 3.0, n - 1500)
        spec = synth_benchmark_spec(theta_schedule=theta)
        data = synth_generate(spec, n, np.random.default_rng(77))
        train = data.view(np.arange(1400))
        valid = data.view(np.arange(1400, 2200))
        test = data.view(np.arange(2200, 3000))
        config = SearchConfig(registry=spec.registry, population=10,
                              budget=60, tournament=5, k_max_effects=3,
                              p_bivar=0.0, k_min=4, k_max=8, seed=3)
        best = evolve("ea-fq", config, train, valid).best
        fixed_preds, _ = predict_fixed(best.fitted, test)
        adaptive, _ = kalman_forecast(best.fitted,
                                      np.asarray(best.model.q_diag), test)
        rmse_fixed = float(np.sqrt(np.mean((test.y - fixed_preds) ** 2)))
        rmse_adaptive = float(np.sqrt(np.mean((test.y - adaptive) ** 2)))
        assert rmse_adaptive <= 0.8 * rmse_fixed, \
            f"adaptive {rmse_adaptive:.1f} vs fixed {rmse_fixed:.1f}"


TRAIN_END = "2021-02-20T23:00:00+00:00"
VALID_END = "2021-03-10T23:00:00+00:00"
SEARCH_TOML = ("population = 4\nbudget = 10\ntournament = 3\n"
               "k_min = 4\nk_max = 6\nk_max_effects = 2\n")


@pytest.fixture(scope="module")
def search_runs(tmp_path_factory):
    """One dataset, three finished search runs (rerun + parallel rerun)."""
    root = tmp_path_factory.mktemp("acceptance")
    data = root / "bench.csv"
    assert main(["synth", "--n", "2000", "--seed", "19",
                 "--out", str(data)]) == 0
    config = root / "search.toml"
    config.write_text(SEARCH_TOML)
    outs = []
    for name, jobs in (("a", "1"), ("b", "1"), ("c", "3")):
        out = root / name
        assert main(["search", "--data", str(data),
                     "--schema", str(data) + ".schema.json",
                     "--config", str(config), "--hours", "7-9",
                     "--jobs", jobs,
                     "--train-end", TRAIN_END, "--valid-end", VALID_END,
                     "--seed", "9", "--out", str(out)]) == 0
        outs.append(out)
    return data, outs


def test_loss_reconstruction(search_runs):
    with criterion("loss-reconstruction", 60.0):
        data_path, outs = search_runs
        data = load_csv(data_path, str(data_path) + ".schema.json")
        checked = 0
        for hour in (7, 8, 9):
            subset = data.filter_hour(hour)
            _, valid, _ = split(subset, SplitSpec(TRAIN_END, VALID_END))
            eta = default_eta(valid.y)
            lines = (outs[0] / f"audit_h{hour:02d}.ndjson") \
                .read_text().splitlines()
            assert lines
            for line in lines:
                entry = json.loads(line)
                assert entry["eta"] == pytest.approx(eta, rel=1e-12)
                if np.isfinite(entry["loss"]):
                    want = entry["rmse_valid"] + entry["eta"] * entry["edf"]
                    assert abs(entry["loss"] - want) <= 1e-10
                    checked += 1
        assert checked > 0


def test_search_determinism(search_runs):
    with criterion("search-determinism", 60.0):
        _, (a, b, c) = search_runs
        for hour in (7, 8, 9):
            name = f"audit_h{hour:02d}.ndjson"
            reference = (a / name).read_bytes()
            assert (b / name).read_bytes() == reference   # plain rerun
            assert (c / name).read_bytes() == reference   # parallel rerun
