"""Automated model selection over formulae and adaptation parameters.

Candidates are random at first, then bred by two-point crossover and
multi-site mutation inside a steady-state loop: each new child replaces
the current worst population member iff it strictly improves on it.
Evaluation = train on the training split, forecast the validation split
(adaptively when the candidate carries a process-noise diagonal), and
score forecast RMSE plus a complexity charge on the effective degrees of
freedom.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .adapt import kalman_forecast, q_igs
from .dsl import serialize
from .fit import FittedGam, SingularModelError, fit, predict_fixed
from .formula import (
    AdaptiveModel,
    BasisSpec,
    CovariateRegistry,
    Effect,
    FeatureEngineering,
    Formula,
    IDENTITY,
    canonical_signature,
    validate,
)

__all__ = ["SearchConfig", "EvaluatedModel", "SearchResult", "default_eta",
           "evaluate", "generate_model", "mutate", "crossover",
           "tournament_select", "evolve", "random_search"]

VARIANTS = ("ea-fq", "ea-f-qigs")


@dataclass
class SearchConfig:
    """Knobs of the search space and of the evolutionary loop."""

    registry: CovariateRegistry
    population: int = 20
    budget: int = 200
    tournament: int = 5
    p_bivar: float = 0.2
    p_smooth: float = 0.5
    p_select: float = 0.3
    k_max_effects: int | None = None     # None -> number of covariates
    k_min: int = 4
    k_max: int = 12
    alpha_min: float = 0.8
    alpha_max: float = 0.999
    q_min: float = 1e-8
    q_max: float = 1e-2
    sigma_min: float = 0.1
    sigma_max: float = 2.0
    l_var: tuple = ()                    # () -> all registry names
    l_sp: tuple = ("linear", "cubic-spline")
    l_te: tuple = ("tensor-product",)
    l_day: tuple = ()                    # candidate weekday subsets
    l_os: tuple = ()                     # candidate lag-offset lists
    smooth_covariates: tuple = ()        # may receive exponential smoothing
    day_covariates: tuple = ()           # draw a subset from l_day
    lag_covariates: tuple = ()           # draw offsets from l_os
    kalman: bool = False
    eta: float | None = None             # None -> sqrt(Var[Y_valid]) / 5000
    qigs_iterations: int = 0             # in-loop refinement passes (ea-fq)
    seed: int = 0

    def __post_init__(self):
        if not self.l_var:
            self.l_var = tuple(self.registry.names())
        if self.k_max_effects is None:
            self.k_max_effects = len(self.l_var)
        if not (1 <= self.tournament <= self.population - 1):
            raise ValueError("need 1 <= tournament <= population - 1")
        if self.budget < self.population:
            raise ValueError("budget must be >= population")
        if self.k_max_effects < 1:
            raise ValueError("k_max_effects must be >= 1")
        for lo, hi, name in ((self.k_min, self.k_max, "k"),
                             (self.alpha_min, self.alpha_max, "alpha"),
                             (self.q_min, self.q_max, "q"),
                             (self.sigma_min, self.sigma_max, "sigma")):
            if lo > hi:
                raise ValueError(f"{name} bounds out of order")

    @property
    def l_cat_var(self):
        return tuple(n for n in self.l_var if self.registry[n].is_categorical)


def default_eta(y_valid) -> float:
    """Complexity weight: sqrt of the empirical validation variance / 5000."""
    return float(np.sqrt(np.var(np.asarray(y_valid, dtype=float))) / 5000.0)


@dataclass
class EvaluatedModel:
    model: AdaptiveModel
    fitted: FittedGam | None
    loss: float
    rmse_valid: float
    edf: float
    lineage: tuple = ()
    diagnostic: str | None = None


def evaluate(model: AdaptiveModel, train, valid, eta,
             lineage=()) -> EvaluatedModel:
    """Fit on train, forecast valid, score rmse + eta * edf.

    Numerically degenerate candidates come back with infinite loss and a
    diagnostic instead of raising: the search must survive them.
    """
    problems = validate(model, train.registry)
    if problems:
        return EvaluatedModel(model, None, float("inf"), float("inf"), 0.0,
                              lineage, "; ".join(problems))
    try:
        fitted = fit(model.formula, train)
        if model.q_diag is not None:
            forecasts, _ = kalman_forecast(fitted, np.asarray(model.q_diag),
                                           valid)
        else:
            forecasts, _ = predict_fixed(fitted, valid)
        rmse = float(np.sqrt(np.mean((valid.y - forecasts) ** 2)))
        if not math.isfinite(rmse):
            raise FloatingPointError("non-finite validation forecasts")
        loss = rmse + eta * fitted.edf
        return EvaluatedModel(model, fitted, loss, rmse, fitted.edf, lineage)
    except (SingularModelError, np.linalg.LinAlgError, ValueError,
            FloatingPointError, ZeroDivisionError) as exc:
        return EvaluatedModel(model, None, float("inf"), float("inf"), 0.0,
                              lineage, str(exc))


# ---- random generation ----

def _log_uniform(rng, lo, hi):
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def _sample_engineering(config, rng, name):
    cov = config.registry[name]
    if cov.is_categorical:
        if name in config.day_covariates and config.l_day:
            days = config.l_day[rng.integers(len(config.l_day))]
            return FeatureEngineering("day-set", days=tuple(days))
        if rng.random() < config.p_select:
            bits = rng.integers(0, 2, cov.modalities)
            if not bits.any():
                bits[rng.integers(cov.modalities)] = 1
            return FeatureEngineering("category-select", select=tuple(int(b) for b in bits))
        return IDENTITY
    if name in config.smooth_covariates and rng.random() < config.p_smooth:
        alpha = float(rng.uniform(config.alpha_min, config.alpha_max))
        return FeatureEngineering("exp-smooth", alpha=alpha)
    if name in config.lag_covariates and config.l_os:
        offsets = config.l_os[rng.integers(len(config.l_os))]
        return FeatureEngineering("lag-set", offsets=tuple(offsets))
    return IDENTITY


def _numeric_family(config, rng, name):
    cov = config.registry[name]
    if cov.kind == "cyclic":
        return "cyclic-cubic-spline"
    families = [f for f in config.l_sp if f != "cyclic-cubic-spline"]
    return families[rng.integers(len(families))]


def _sample_size(config, rng):
    return int(rng.integers(config.k_min, config.k_max + 1))


def _sample_effect(config, rng):
    bivar = (rng.random() < config.p_bivar) and len(config.l_var) >= 2
    if bivar:
        cats = set(config.l_cat_var)
        for _ in range(50):
            pair = rng.choice(len(config.l_var), size=2, replace=False)
            a, b = config.l_var[pair[0]], config.l_var[pair[1]]
            if not (a in cats and b in cats):
                break
        else:
            bivar = False
        if bivar:
            eng = tuple(_sample_engineering(config, rng, n) for n in (a, b))
            # lag-set cannot feed a bi-variate basis
            eng = tuple(IDENTITY if e.variant == "lag-set" else e for e in eng)
            fams, sizes = [], []
            for n, e in zip((a, b), eng):
                cov = config.registry[n]
                if cov.is_categorical and e.variant in ("identity",
                                                        "category-select",
                                                        "day-set"):
                    fams.append("categorical-indicator")
                    sizes.append(cov.modalities)
                else:
                    fam = _numeric_family(config, rng, n)
                    fams.append("cubic-spline" if fam == "linear" else fam)
                    sizes.append(_sample_size(config, rng))
            basis = BasisSpec("tensor-product", marginal_families=tuple(fams),
                              marginal_sizes=tuple(sizes))
            return Effect((a, b), eng, basis)
    name = config.l_var[rng.integers(len(config.l_var))]
    eng = _sample_engineering(config, rng, name)
    cov = config.registry[name]
    if cov.is_categorical and eng.variant in ("identity", "category-select",
                                              "day-set"):
        return Effect((name,), (eng,),
                      BasisSpec("categorical-indicator"))
    family = _numeric_family(config, rng, name)
    size = 1 if family == "linear" else _sample_size(config, rng)
    return Effect((name,), (eng,), BasisSpec(family, size=size))


def _sample_q(config, rng, k):
    return tuple(_log_uniform(rng, config.q_min, config.q_max)
                 for _ in range(k))


def generate_model(config: SearchConfig, rng) -> AdaptiveModel:
    """Draw a random valid model from the configured search space."""
    k_target = int(rng.integers(1, config.k_max_effects + 1))
    effects, sigs = [], set()
    attempts = 0
    while len(effects) < k_target:
        effect = _sample_effect(config, rng)
        sig = canonical_signature(effect)
        if sig not in sigs:
            effects.append(effect)
            sigs.add(sig)
            attempts = 0
        else:
            attempts += 1
            if attempts >= 100:
                break  # registry too small for K distinct effects: shrink
    q_diag = None
    if config.kalman:
        rng.uniform(config.sigma_min, config.sigma_max)  # drawn, not stored
        q_diag = _sample_q(config, rng, len(effects))
    model = AdaptiveModel(Formula(tuple(effects)), q_diag)
    assert not validate(model, config.registry)
    return model


# ---- mutation ----

def _mutate_effect_params(effect, config, rng):
    """New basis size/family or engineering parameters for one effect."""
    basis = effect.basis
    choice = rng.random()
    if effect.is_bivariate:
        sizes = list(basis.marginal_sizes)
        for i, fam in enumerate(basis.marginal_families):
            if fam != "categorical-indicator":
                sizes[i] = _sample_size(config, rng)
        return replace(effect, basis=replace(basis, marginal_sizes=tuple(sizes)))
    eng = effect.engineering[0]
    if choice < 0.5 and eng.variant != "identity":
        # engineering-parameter move
        if eng.variant == "exp-smooth":
            alpha = float(rng.uniform(config.alpha_min, config.alpha_max))
            return replace(effect, engineering=(replace(eng, alpha=alpha),))
        if eng.variant == "category-select":
            bits = list(eng.select)
            flip = rng.integers(len(bits))
            bits[flip] = 1 - bits[flip]
            if not any(bits):
                bits[flip] = 1
            return replace(effect,
                           engineering=(replace(eng, select=tuple(bits)),))
        if eng.variant == "day-set" and config.l_day:
            days = config.l_day[rng.integers(len(config.l_day))]
            return replace(effect, engineering=(replace(eng, days=tuple(days)),))
        if eng.variant == "lag-set" and config.l_os:
            offs = config.l_os[rng.integers(len(config.l_os))]
            return replace(effect, engineering=(replace(eng, offsets=tuple(offs)),))
    if basis.family in ("cubic-spline", "cyclic-cubic-spline"):
        return replace(effect, basis=replace(basis, size=_sample_size(config, rng)))
    return effect


def _mutation_sites(model, config):
    sites = ["covariate", "params", "add", "delete"]
    if len(model.formula) <= 1:
        sites.remove("delete")
    if len(model.formula) >= config.k_max_effects:
        sites.remove("add")
    if model.q_diag is not None:
        sites.append("q")
    return sites


def mutate(model: AdaptiveModel, rng, config: SearchConfig) -> AdaptiveModel:
    """Apply one or more random site edits; always returns a valid model."""
    n_sites = 1 + int(rng.binomial(3, 0.2))
    current = model
    for _ in range(100):
        candidate = current
        for _ in range(n_sites):
            candidate = _apply_one_site(candidate, rng, config)
        if not validate(candidate, config.registry) and candidate != model:
            return candidate
    return generate_model(config, rng)


def _apply_one_site(model, rng, config):
    sites = _mutation_sites(model, config)
    site = sites[rng.integers(len(sites))]
    effects = list(model.formula.effects)
    q = list(model.q_diag) if model.q_diag is not None else None
    sigs = {canonical_signature(e) for e in effects}

    if site == "q":
        j = int(rng.integers(len(q)))
        step = float(np.exp(rng.normal(0.0, 1.0)))
        q[j] = float(np.clip(q[j] * step, config.q_min, config.q_max))
    elif site == "delete" and len(effects) > 1:
        j = int(rng.integers(len(effects)))
        effects.pop(j)
        if q is not None:
            q.pop(j)
    elif site == "add":
        for _ in range(50):
            new = _sample_effect(config, rng)
            if canonical_signature(new) not in sigs:
                effects.append(new)
                if q is not None:
                    q.append(_log_uniform(rng, config.q_min, config.q_max))
                break
    else:
        j = int(rng.integers(len(effects)))
        old = effects[j]
        if site == "covariate":
            for _ in range(50):
                new = _sample_effect(config, rng)
                sig = canonical_signature(new)
                if sig not in sigs - {canonical_signature(old)}:
                    effects[j] = new
                    break
        else:  # params
            effects[j] = _mutate_effect_params(old, config, rng)
            if canonical_signature(effects[j]) in \
                    {canonical_signature(e) for i, e in enumerate(effects) if i != j}:
                effects[j] = old
    return AdaptiveModel(Formula(tuple(effects)),
                         tuple(q) if q is not None else None)


# ---- crossover ----

def _dedup(effects):
    seen, out = set(), []
    for e in effects:
        sig = canonical_signature(e)
        if sig not in seen:
            seen.add(sig)
            out.append(e)
    return out


def _resync_q(q, k, config, rng):
    if q is None:
        return None
    q = list(q[:k])
    while len(q) < k:
        q.append(_log_uniform(rng, config.q_min, config.q_max))
    return tuple(q)


def crossover(parent_a: AdaptiveModel, parent_b: AdaptiveModel, rng,
              config: SearchConfig):
    """Two-point crossover: swap the [a, b) middle segments of the effect
    lists, and the same segments of the adaptation diagonals.

    Later duplicate signatures are dropped; an empty child receives one
    random parent effect; diagonals are truncated or padded back to K.
    """
    ea, eb = list(parent_a.formula.effects), list(parent_b.formula.effects)
    cmax = min(len(ea), len(eb))
    cuts = sorted((int(rng.integers(0, cmax + 1)),
                   int(rng.integers(0, cmax + 1))))
    a, b = cuts

    def mix(head, mid):
        return _dedup(head[:a] + mid[a:b] + head[b:])

    child_ab = mix(ea, eb)
    child_ba = mix(eb, ea)
    pool = ea + eb
    if not child_ab:
        child_ab = [pool[rng.integers(len(pool))]]
    if not child_ba:
        child_ba = [pool[rng.integers(len(pool))]]

    def mix_q(qh, qm):
        if qh is None and qm is None:
            return None
        if qh is None or qm is None:
            return qh if qh is not None else qm
        return list(qh[:a]) + list(qm[a:b]) + list(qh[b:])

    qa, qb = parent_a.q_diag, parent_b.q_diag
    out = []
    for effects, q in ((child_ab, mix_q(qa, qb)), (child_ba, mix_q(qb, qa))):
        out.append(AdaptiveModel(
            Formula(tuple(effects)),
            _resync_q(q, len(effects), config, rng)))
    return out[0], out[1]


def tournament_select(losses, m, rng, excluded=None) -> int:
    """Loss-argmin over a uniform m-subset; lowest index breaks ties."""
    indices = [i for i in range(len(losses)) if i != excluded]
    if m > len(indices):
        raise ValueError(f"tournament size {m} > {len(indices)} available")
    picked = rng.choice(len(indices), size=m, replace=False)
    chosen = sorted(indices[i] for i in picked)
    return min(chosen, key=lambda i: (losses[i], i))


# ---- search drivers ----

@dataclass
class SearchResult:
    best: EvaluatedModel
    audit: list = field(default_factory=list)
    population: list = field(default_factory=list)


def _audit_entry(iteration, slot, operators, parents, evaluated, eta):
    return {
        "iteration": iteration,
        "slot": slot,
        "operators": list(operators),
        "parents": list(parents),
        "model": serialize(evaluated.model),
        "loss": evaluated.loss,
        "rmse_valid": evaluated.rmse_valid,
        "edf": evaluated.edf,
        "eta": eta,
        "diagnostic": evaluated.diagnostic,
    }


def evolve(variant: str, config: SearchConfig, train, valid,
           seed_models=()) -> SearchResult:
    """Steady-state evolutionary search, in either variant.

    ``ea-fq`` evolves formula and adaptation diagonal together (with
    optional in-loop grid-search refinement); ``ea-f-qigs`` evolves fixed
    formulae only and runs the grid search to convergence on the winner.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    rng = np.random.default_rng(config.seed)
    kalman = variant == "ea-fq"
    cfg = replace(config, kalman=kalman)
    eta = (config.eta if config.eta is not None else default_eta(valid.y))

    population = []
    audit = []
    for i in range(cfg.population):
        if i < len(seed_models):
            model = seed_models[i]
            if kalman and model.q_diag is None:
                model = AdaptiveModel(model.formula,
                                      _sample_q(cfg, rng, len(model.formula)))
            if not kalman:
                model = AdaptiveModel(model.formula, None)
            ops = ("seed",)
        else:
            model = generate_model(cfg, rng)
            ops = ("generate",)
        ev = evaluate(model, train, valid, eta, lineage=ops)
        population.append(ev)
        audit.append(_audit_entry(0, i, ops, [], ev, eta))

    losses = [e.loss for e in population]
    iterations = (cfg.budget - cfg.population) // 2
    for it in range(1, iterations + 1):
        ja = tournament_select(losses, cfg.tournament, rng)
        jb = tournament_select(losses, cfg.tournament, rng, excluded=ja)
        children = crossover(population[ja].model, population[jb].model,
                             rng, cfg)
        for slot, child in enumerate(children):
            child = mutate(child, rng, cfg)
            if kalman and cfg.qigs_iterations > 0:
                child = _refine_q(child, train, cfg)
            ev = evaluate(child, train, valid, eta, lineage=(ja, jb))
            audit.append(_audit_entry(it, slot,
                                      ("crossover", "mutate"), [ja, jb],
                                      ev, eta))
            worst = max(range(len(losses)), key=lambda i: (losses[i], -i))
            if ev.loss < losses[worst]:
                population[worst] = ev
                losses[worst] = ev.loss

    best_idx = min(range(len(losses)), key=lambda i: (losses[i], i))
    best = population[best_idx]
    if variant == "ea-f-qigs" and best.fitted is not None:
        q0 = np.full(len(best.model.formula), 1e-6)
        q = q_igs(best.fitted, train, q0=q0, iterations=20)
        adaptive = AdaptiveModel(best.model.formula, tuple(q))
        best = evaluate(adaptive, train, valid, eta, lineage=("qigs",))
    return SearchResult(best, audit, population)


def _refine_q(model, train, config):
    try:
        fitted = fit(model.formula, train)
        q = q_igs(fitted, train, q0=np.asarray(model.q_diag),
                  iterations=config.qigs_iterations)
        return AdaptiveModel(model.formula, tuple(q))
    except (SingularModelError, np.linalg.LinAlgError, ValueError):
        return model


def random_search(config: SearchConfig, train, valid) -> SearchResult:
    """Budget-matched baseline: independent draws, best by loss."""
    rng = np.random.default_rng(config.seed)
    eta = (config.eta if config.eta is not None else default_eta(valid.y))
    audit, best = [], None
    for i in range(config.budget):
        model = generate_model(config, rng)
        ev = evaluate(model, train, valid, eta, lineage=("generate",))
        audit.append(_audit_entry(0, i, ("generate",), [], ev, eta))
        if best is None or ev.loss < best.loss:
            best = ev
    return SearchResult(best, audit)
