"""Penalized least-squares training of a formula on a time dataset.

The design is intercept-first, then one centered block per effect.
Smoothing parameters are chosen by generalized cross-validation via
coordinate descent on a log grid; model complexity is the trace of the
influence matrix (intercept included).
"""

from __future__ import annotations

import base64
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigvalsh

from . import features
from .basis import BasisBlock, build_categorical, build_univariate, tensor_product
from .formula import Effect, Formula

__all__ = ["FittedGam", "EffectContributions", "DesignInfo",
           "PenalizedDesign", "SingularModelError", "engineer_effect",
           "design_matrix", "fit", "gcv_score", "edf", "predict_fixed"]

LAMBDA_LOG_GRID = np.arange(-6.0, 6.0 + 1e-9, 0.5)
MAX_PASSES = 3


class SingularModelError(np.linalg.LinAlgError):
    pass


def _covariate(dataset, name):
    if dataset.registry is not None and name in dataset.registry:
        return dataset.registry[name]
    return None


def engineer_effect(effect: Effect, dataset, carry=None) -> list[np.ndarray]:
    """Engineered column(s) of one effect, aligned to the dataset view.

    History-aware steps (smoothing, lags) run over the full underlying
    frame before slicing; ``carry`` optionally seeds the smoothing
    recursion when the frame does not include the training history.
    """
    cols = []
    for name, eng in zip(effect.covariates, effect.engineering):
        full = dataset.full_column(name)
        if eng.variant == "identity":
            cols.append(np.asarray(full)[dataset.positions])
        elif eng.variant == "exp-smooth":
            init = None
            if carry:
                entry = carry.get((name, eng.alpha))
                if entry is not None:
                    last_ts, last_val = entry
                    if dataset.frame.index[0] > last_ts:
                        init = last_val
            smoothed = features.exp_smooth(full, eng.alpha, init=init)
            cols.append(smoothed[dataset.positions])
        elif eng.variant == "category-select":
            cols.append(features.select_categories(full, eng.select)
                        [dataset.positions])
        elif eng.variant == "day-set":
            cols.append(features.select_days(full, eng.days)
                        [dataset.positions])
        elif eng.variant == "lag-set":
            lagged = features.lag_columns(full, eng.offsets)
            for j in range(lagged.shape[1]):
                cols.append(lagged[dataset.positions, j])
        else:
            raise ValueError(f"unknown engineering variant {eng.variant!r}")
    return cols


def _is_categorical_value(effect, i, dataset):
    cov = _covariate(dataset, effect.covariates[i])
    return (cov is not None and cov.is_categorical
            and effect.engineering[i].variant in
            ("identity", "category-select", "day-set"))


def _blocks_for_effect(effect: Effect, cols, dataset):
    """(blocks, penalty parts) for one effect.

    Penalty parts are (local column offset, matrix) pairs, each getting
    its own smoothing parameter. A lag-set effect shares one parameter
    across its per-offset sub-blocks.
    """
    basis = effect.basis
    if effect.is_bivariate:
        marginals = []
        for i in range(2):
            if _is_categorical_value(effect, i, dataset):
                cov = _covariate(dataset, effect.covariates[i])
                marginals.append(build_categorical(cov.modalities, cols[i]))
            else:
                fam = basis.marginal_families[i]
                cov = _covariate(dataset, effect.covariates[i])
                period = cov.period if (cov and cov.kind == "cyclic") else None
                marginals.append(build_univariate(
                    fam, basis.marginal_sizes[i], cols[i],
                    center=False, period=period))
        block = tensor_product(marginals[0], marginals[1])
        parts = [(0, s) for s in block.penalty_parts if np.any(s)]
        return [block], parts
    if basis.family == "categorical-indicator":
        cov = _covariate(dataset, effect.covariates[0])
        m = cov.modalities if cov else int(np.max(cols[0]))
        block = build_categorical(m, cols[0])
        return [block], []
    cov = _covariate(dataset, effect.covariates[0])
    period = cov.period if (cov and cov.kind == "cyclic") else None
    blocks = [build_univariate(basis.family, basis.size, c, period=period)
              for c in cols]
    if basis.family == "linear":
        return blocks, []
    if len(blocks) == 1:
        return blocks, [(0, blocks[0].penalty)]
    # lag-set: block-diagonal penalty, one shared smoothing parameter
    sizes = [b.ncols for b in blocks]
    total = sum(sizes)
    big = np.zeros((total, total))
    off = 0
    for b in blocks:
        big[off:off + b.ncols, off:off + b.ncols] = b.penalty
        off += b.ncols
    return blocks, [(0, big)]


@dataclass
class DesignInfo:
    """Assembled design: intercept-first matrix plus per-effect layout."""

    X: np.ndarray
    spans: list            # per effect: (start, stop) column span
    blocks: list           # per effect: list of BasisBlock
    penalties: list        # full p x p embedded penalty matrices
    penalty_effects: list  # effect index owning each penalty
    formula: Formula


def design_matrix(formula: Formula, dataset) -> DesignInfo:
    """Build the full design for a formula on a dataset view."""
    n = len(dataset)
    if n == 0:
        raise ValueError("empty dataset")
    columns = [np.ones((n, 1))]
    spans, all_blocks, penalties, penalty_effects = [], [], [], []
    start = 1
    for k, effect in enumerate(formula):
        for name in effect.covariates:
            if name not in dataset.frame.columns:
                raise ValueError(f"missing covariate {name!r}")
        cols = engineer_effect(effect, dataset)
        blocks, parts = _blocks_for_effect(effect, cols, dataset)
        width = sum(b.ncols for b in blocks)
        for off, s in parts:
            penalties.append((start + off, s))
            penalty_effects.append(k)
        for b in blocks:
            columns.append(b.design)
        spans.append((start, start + width))
        all_blocks.append(blocks)
        start += width
    X = np.hstack(columns)
    p = X.shape[1]
    full = []
    for off, s in penalties:
        S = np.zeros((p, p))
        S[off:off + s.shape[0], off:off + s.shape[0]] = s
        full.append(S)
    return DesignInfo(X, spans, all_blocks, full, penalty_effects, formula)


class PenalizedDesign:
    """Cached normal-equation quantities for repeated smoothing solves."""

    def __init__(self, info: DesignInfo, y):
        y = np.asarray(y, dtype=float)
        self.info = info
        self.n, self.p = info.X.shape
        self.XtX = info.X.T @ info.X
        self.Xty = info.X.T @ y
        self.yty = float(y @ y)
        self.mean_diag = float(np.mean(np.diag(self.XtX)))

    def _penalty_total(self, lambdas):
        S = np.zeros((self.p, self.p))
        for lam, Sj in zip(lambdas, self.info.penalties):
            S += lam * Sj
        return S

    def _factor(self, A):
        try:
            return cho_factor(A, lower=True)
        except np.linalg.LinAlgError:
            pass
        jitter = 1e-10 * max(self.mean_diag, 1e-300)
        for _ in range(5):
            try:
                return cho_factor(A + jitter * np.eye(self.p), lower=True)
            except np.linalg.LinAlgError:
                jitter *= 10.0
        raise SingularModelError("normal equations not factorizable")

    def solve(self, lambdas):
        """(beta, edf, rss) at the given smoothing parameters."""
        A = self.XtX + self._penalty_total(lambdas)
        factor = self._factor(A)
        beta = cho_solve(factor, self.Xty)
        edf_val = float(np.trace(cho_solve(factor, self.XtX)))
        rss = max(self.yty - 2.0 * beta @ self.Xty + beta @ self.XtX @ beta, 0.0)
        return beta, edf_val, rss

    def gcv(self, lambdas):
        _, edf_val, rss = self.solve(lambdas)
        denom = self.n - edf_val
        if denom <= 0:
            raise ValueError(f"degenerate GCV: n={self.n} <= tr(A)={edf_val}")
        return self.n * rss / denom ** 2

    def check_rank(self, lambdas):
        """Raise SingularModelError when the system is rank deficient."""
        A = self.XtX + self._penalty_total(lambdas)
        evals, vecs = np.linalg.eigh(A)
        if evals[0] < 1e-12 * max(self.mean_diag, 1e-300):
            null_vec = np.abs(vecs[:, 0])
            col = int(np.argmax(null_vec))
            effect = next((k for k, (a, b) in enumerate(self.info.spans)
                           if a <= col < b), None)
            where = (f"effect {effect} (columns "
                     f"{self.info.spans[effect][0]}..{self.info.spans[effect][1] - 1})"
                     if effect is not None else "intercept")
            raise SingularModelError(f"singular system at {where}")


def gcv_score(lambdas, decomp: PenalizedDesign) -> float:
    """GCV criterion n * RSS / (n - tr(A))^2 at the given parameters."""
    return decomp.gcv(lambdas)


def _select_lambdas(decomp: PenalizedDesign):
    m = len(decomp.info.penalties)
    if m == 0:
        return ()
    logs = np.zeros(m)
    best = decomp.gcv(10.0 ** logs)
    for _ in range(MAX_PASSES):
        moved = False
        for j in range(m):
            best_log = logs[j]
            for g in LAMBDA_LOG_GRID:
                trial = logs.copy()
                trial[j] = g
                try:
                    v = decomp.gcv(10.0 ** trial)
                except (ValueError, SingularModelError):
                    continue
                # <= breaks ties toward the larger (smoother) lambda
                if v <= best:
                    best, best_log = v, g
            if best_log != logs[j]:
                logs[j] = best_log
                moved = True
        if not moved:
            break
    return tuple(10.0 ** logs)


@dataclass
class EffectContributions:
    """Per-effect fitted values; intercept + row sums = total prediction."""

    values: np.ndarray   # n x K
    intercept: float
    unseen: int = 0      # categorical values mapped to the default row

    def totals(self):
        return self.intercept + self.values.sum(axis=1)


@dataclass
class FittedGam:
    """A trained formula: coefficients, smoothing, and evaluation state."""

    formula: Formula
    beta: np.ndarray
    lambdas: tuple
    edf: float
    gcv: float
    spans: list
    blocks: list
    penalty_effects: list
    carry: dict            # (covariate, alpha) -> (last timestamp, value)
    n_train: int

    @property
    def intercept(self):
        return float(self.beta[0])


def _smoothing_carry(formula, dataset):
    carry = {}
    for effect in formula:
        for name, eng in zip(effect.covariates, effect.engineering):
            if eng.variant == "exp-smooth":
                smoothed = features.exp_smooth(dataset.full_column(name),
                                               eng.alpha)
                carry[(name, eng.alpha)] = (dataset.frame.index[-1],
                                            float(smoothed[-1]))
    return carry


def fit(formula: Formula, dataset) -> FittedGam:
    """Train by penalized least squares at the GCV-optimal smoothing."""
    info = design_matrix(formula, dataset)
    y = dataset.y
    if info.X.shape[0] <= info.X.shape[1]:
        warnings.warn(f"n={info.X.shape[0]} <= p={info.X.shape[1]}: "
                      "under-determined fit", RuntimeWarning)
    decomp = PenalizedDesign(info, y)
    lambdas = _select_lambdas(decomp)
    decomp.check_rank(lambdas)
    beta, edf_val, _ = decomp.solve(lambdas)
    score = decomp.gcv(lambdas) if decomp.n > edf_val else float("nan")
    return FittedGam(formula, beta, lambdas, edf_val, score,
                     info.spans, info.blocks, info.penalty_effects,
                     _smoothing_carry(formula, dataset), len(dataset))


def edf(target, lambdas=None) -> float:
    """Effective degrees of freedom: trace of the influence matrix.

    ``target`` is a FittedGam (stored value) or a PenalizedDesign
    evaluated at ``lambdas``.
    """
    if isinstance(target, FittedGam):
        return target.edf
    _, edf_val, _ = target.solve(lambdas)
    return edf_val


def predict_fixed(fitted: FittedGam, dataset):
    """(predictions, per-effect contributions) on a dataset view.

    Unseen categorical modalities map to the default (zero) row and are
    counted, not raised.
    """
    n = len(dataset)
    k_count = len(fitted.formula)
    values = np.zeros((n, k_count))
    unseen = 0
    for k, (effect, blocks) in enumerate(zip(fitted.formula, fitted.blocks)):
        cols = engineer_effect(effect, dataset, carry=fitted.carry)
        start, stop = fitted.spans[k]
        off = start
        contrib = np.zeros(n)
        if effect.is_bivariate:
            design, miss = blocks[0].evaluate((cols[0], cols[1]), strict=False)
            contrib += design @ fitted.beta[off:off + blocks[0].ncols]
            unseen += miss
        else:
            for block, col in zip(blocks, cols):
                design, miss = block.evaluate(col, strict=False)
                contrib += design @ fitted.beta[off:off + block.ncols]
                off += block.ncols
                unseen += miss
        values[:, k] = contrib
    if unseen:
        warnings.warn(f"{unseen} unseen categorical values mapped to default",
                      RuntimeWarning)
    result = EffectContributions(values, fitted.intercept, unseen)
    return result.totals(), result


# ---- persistence ----

def _b64(arr):
    arr = np.ascontiguousarray(arr, dtype=float)
    return {"shape": list(arr.shape),
            "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def _unb64(d):
    arr = np.frombuffer(base64.b64decode(d["data"]), dtype=float)
    return arr.reshape(d["shape"]).copy()


def _block_to_dict(b: BasisBlock):
    d = {"kind": b.kind, "centered": b.centered}
    for name in ("mean", "degree", "xmin", "xmax", "period", "wrap",
                 "reference"):
        v = getattr(b, name)
        if v is not None:
            d[name] = v
    if b.knots is not None:
        d["knots"] = _b64(b.knots)
    if b.levels is not None:
        d["levels"] = list(b.levels)
    if b.constraint is not None:
        d["constraint"] = _b64(b.constraint)
    if b.penalty is not None:
        d["penalty"] = _b64(b.penalty)
    if b.marginals is not None:
        d["marginals"] = [_block_to_dict(m) for m in b.marginals]
    return d


def _block_from_dict(d):
    b = BasisBlock(
        design=None, penalty=_unb64(d["penalty"]) if "penalty" in d else None,
        kind=d["kind"], centered=d.get("centered", False),
        mean=d.get("mean"), degree=d.get("degree"),
        xmin=d.get("xmin"), xmax=d.get("xmax"), period=d.get("period"),
        wrap=d.get("wrap"), reference=d.get("reference"),
        knots=_unb64(d["knots"]) if "knots" in d else None,
        levels=tuple(d["levels"]) if "levels" in d else None,
        constraint=_unb64(d["constraint"]) if "constraint" in d else None,
        marginals=tuple(_block_from_dict(m) for m in d["marginals"])
        if "marginals" in d else None,
    )
    return b


def fitted_to_dict(fitted: FittedGam) -> dict:
    from .dsl import model_to_dict
    from .formula import AdaptiveModel

    return {
        "formula": model_to_dict(AdaptiveModel(fitted.formula)),
        "beta": _b64(fitted.beta),
        "lambdas": list(fitted.lambdas),
        "edf": fitted.edf,
        "gcv": fitted.gcv,
        "spans": [list(s) for s in fitted.spans],
        "blocks": [[_block_to_dict(b) for b in bl] for bl in fitted.blocks],
        "penalty_effects": list(fitted.penalty_effects),
        "carry": [
            {"covariate": name, "alpha": alpha,
             "timestamp": ts.isoformat(), "value": val}
            for (name, alpha), (ts, val) in fitted.carry.items()
        ],
        "n_train": fitted.n_train,
    }


def fitted_from_dict(d: dict) -> FittedGam:
    import pandas as pd

    from .dsl import model_from_dict

    carry = {(c["covariate"], c["alpha"]):
             (pd.Timestamp(c["timestamp"]), c["value"])
             for c in d["carry"]}
    return FittedGam(
        formula=model_from_dict(d["formula"]).formula,
        beta=_unb64(d["beta"]),
        lambdas=tuple(d["lambdas"]),
        edf=d["edf"],
        gcv=d["gcv"],
        spans=[tuple(s) for s in d["spans"]],
        blocks=[[_block_from_dict(b) for b in bl] for bl in d["blocks"]],
        penalty_effects=list(d["penalty_effects"]),
        carry=carry,
        n_train=d["n_train"],
    )
