"""State-space adaptation of a trained additive model.

Effect weights follow a random walk tracked by a variance-normalized
Kalman filter; the process-noise diagonal is the adaptation speed knob,
tuned offline by a coordinate-wise grid search on training one-step
error. Weights start at one with zero covariance, so zero process noise
reproduces the fixed model exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fit import FittedGam, predict_fixed

__all__ = ["KalmanState", "kalman_step", "kalman_forecast", "q_igs"]

IGS_MULTIPLIERS = (1e-2, 1e-1, 1.0, 10.0, 100.0)
DEFAULT_Q0 = 1e-6


@dataclass
class KalmanState:
    """Current weight estimate, its covariance, and the process noise."""

    theta: np.ndarray    # K
    P: np.ndarray        # K x K, symmetric PSD (sigma^2-normalized)
    q_diag: np.ndarray   # K, >= 0

    @classmethod
    def initial(cls, k, q_diag=None):
        """Weights at one, zero covariance: the fixed model as starting point."""
        q = np.zeros(k) if q_diag is None else np.asarray(q_diag, dtype=float)
        if q.shape != (k,):
            raise ValueError(f"q_diag must have length {k}")
        if (q < 0).any():
            raise ValueError("q_diag entries must be >= 0")
        return cls(np.ones(k), np.zeros((k, k)), q)


def kalman_step(state: KalmanState, f_vec, y):
    """One filter update; returns (new state, one-step-ahead forecast).

    The forecast is theta^T f, computed before y enters the update, so the
    returned prediction never uses its own observation.
    """
    f = np.asarray(f_vec, dtype=float)
    if not (np.isfinite(f).all() and np.isfinite(y)):
        raise ValueError("non-finite filter inputs")
    p_pred = state.P + np.diag(state.q_diag)
    forecast = float(state.theta @ f)
    innovation = float(y) - forecast
    pf = p_pred @ f
    s = float(f @ pf) + 1.0
    gain = pf / s
    theta = state.theta + gain * innovation
    p_new = p_pred - np.outer(pf, pf) / s
    p_new = 0.5 * (p_new + p_new.T)  # keep symmetry under rounding
    return KalmanState(theta, p_new, state.q_diag), forecast


def kalman_forecast(fitted: FittedGam, q_diag, dataset, init=None):
    """One-step-ahead forecasts over a dataset, plus the weight trajectory.

    ``q_diag=None`` is fixed mode: forecasts equal the fixed prediction
    and the weights stay at one. The intercept is held fixed (not
    reweighted): the filter sees the intercept-corrected observation.
    """
    preds, contrib = predict_fixed(fitted, dataset)
    k = contrib.values.shape[1]
    if q_diag is None:
        return preds, np.ones((len(dataset), k))
    state = init if init is not None else KalmanState.initial(k, q_diag)
    y = dataset.y
    n = len(dataset)
    forecasts = np.empty(n)
    trajectory = np.empty((n, k))
    for t in range(n):
        trajectory[t] = state.theta
        state, raw = kalman_step(state, contrib.values[t],
                                 y[t] - contrib.intercept)
        forecasts[t] = raw + contrib.intercept
    return forecasts, trajectory


def _training_rmse(fitted, q_diag, dataset, contrib, y):
    state = KalmanState.initial(contrib.values.shape[1], q_diag)
    sq = 0.0
    for t in range(len(y)):
        state, raw = kalman_step(state, contrib.values[t],
                                 y[t] - contrib.intercept)
        sq += (y[t] - (raw + contrib.intercept)) ** 2
    return np.sqrt(sq / len(y))


def q_igs(fitted: FittedGam, dataset, q0=None, iterations=20,
          multipliers=IGS_MULTIPLIERS):
    """Coordinate-wise grid search on the process-noise diagonal.

    Each pass tries, per coordinate, the current value times each
    multiplier and keeps the best training one-step RMSE; a move is
    accepted only when it strictly improves, so the objective is
    non-increasing across passes. Stops early when a full pass changes
    nothing.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    k = len(fitted.formula)
    q = (np.full(k, DEFAULT_Q0) if q0 is None
         else np.asarray(q0, dtype=float).copy())
    if q.shape != (k,):
        raise ValueError(f"q0 must have length {k}")
    if (q <= 0).any():
        raise ValueError("q0 entries must be > 0")
    _, contrib = predict_fixed(fitted, dataset)
    y = dataset.y
    best = _training_rmse(fitted, q, dataset, contrib, y)
    for _ in range(iterations):
        moved = False
        for j in range(k):
            best_val = q[j]
            for mult in multipliers:
                if mult == 1.0:
                    continue
                trial = q.copy()
                trial[j] = q[j] * mult
                rmse = _training_rmse(fitted, trial, dataset, contrib, y)
                if rmse < best:
                    best, best_val = rmse, trial[j]
            if best_val != q[j]:
                q[j] = best_val
                moved = True
        if not moved:
            break
    return q
