"""GAM formulae and adaptive models: the genome of the search.

A model is an ordered list of additive effects, each pairing one or two
covariates with a feature-engineering step and a basis, plus an optional
diagonal adaptation matrix. All values are immutable after construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

__all__ = [
    "Covariate",
    "CovariateRegistry",
    "FeatureEngineering",
    "BasisSpec",
    "Effect",
    "Formula",
    "AdaptiveModel",
    "canonical_signature",
    "validate",
]

SPLINE_FAMILIES = ("cubic-spline", "cyclic-cubic-spline")
FAMILIES = ("linear", "cubic-spline", "cyclic-cubic-spline",
            "categorical-indicator", "tensor-product")
FE_VARIANTS = ("identity", "exp-smooth", "category-select", "lag-set",
               "day-set")


@dataclass(frozen=True)
class Covariate:
    """A named input column: numeric, cyclic numeric, or categorical."""

    name: str
    kind: str = "numeric"           # numeric | cyclic | categorical
    period: float | None = None     # cyclic only
    modalities: int | None = None   # categorical only: values in {0..m}

    def __post_init__(self):
        if self.kind not in ("numeric", "cyclic", "categorical"):
            raise ValueError(f"unknown covariate kind {self.kind!r}")
        if self.kind == "cyclic" and not (self.period and self.period > 0):
            raise ValueError(f"cyclic covariate {self.name!r} needs period > 0")
        if self.kind == "categorical" and (self.modalities is None
                                           or self.modalities < 2):
            raise ValueError(f"categorical covariate {self.name!r} needs m >= 2")

    @property
    def is_categorical(self):
        return self.kind == "categorical"


class CovariateRegistry:
    """Immutable name -> Covariate mapping with unique names."""

    def __init__(self, covariates):
        names = [c.name for c in covariates]
        if len(set(names)) != len(names):
            raise ValueError("duplicate covariate names in registry")
        self._by_name = {c.name: c for c in covariates}

    def __getitem__(self, name) -> Covariate:
        return self._by_name[name]

    def __contains__(self, name):
        return name in self._by_name

    def __iter__(self):
        return iter(self._by_name.values())

    def __len__(self):
        return len(self._by_name)

    def names(self):
        return list(self._by_name)


@dataclass(frozen=True)
class FeatureEngineering:
    """One engineering step applied to a covariate before the basis."""

    variant: str = "identity"
    alpha: float | None = None            # exp-smooth
    select: tuple[int, ...] | None = None  # category-select bit vector
    offsets: tuple[int, ...] | None = None  # lag-set
    days: tuple[int, ...] | None = None    # day-set, weekday codes 1..7

    def __post_init__(self):
        if self.variant not in FE_VARIANTS:
            raise ValueError(f"unknown engineering variant {self.variant!r}")
        if self.variant == "exp-smooth":
            if self.alpha is None or not (0.0 <= self.alpha <= 1.0):
                raise ValueError("exp-smooth alpha must lie in [0, 1]")
        if self.variant == "category-select":
            if not self.select or not any(self.select):
                raise ValueError("category-select needs at least one set bit")
        if self.variant == "lag-set":
            offs = self.offsets
            if not offs or any(o < 0 for o in offs) or len(set(offs)) != len(offs):
                raise ValueError("lag offsets must be non-empty, >= 0, distinct")
        if self.variant == "day-set":
            if not self.days:
                raise ValueError("day-set needs at least one day")

    def identity_key(self):
        """Hashable identity of the engineering, parameters included."""
        return (self.variant, self.alpha, self.select, self.offsets, self.days)


IDENTITY = FeatureEngineering()


@dataclass(frozen=True)
class BasisSpec:
    """Basis family and size(s) for one effect."""

    family: str
    size: int | None = None                     # univariate q_k
    marginal_families: tuple[str, str] | None = None  # tensor only
    marginal_sizes: tuple[int, int] | None = None     # tensor only

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown basis family {self.family!r}")


@dataclass(frozen=True)
class Effect:
    """One additive term: covariate name(s) + engineering + basis."""

    covariates: tuple[str, ...]
    engineering: tuple[FeatureEngineering, ...]
    basis: BasisSpec

    def __post_init__(self):
        if len(self.covariates) not in (1, 2):
            raise ValueError("an effect takes one or two covariates")
        if len(self.engineering) != len(self.covariates):
            raise ValueError("one engineering step per covariate")

    @property
    def is_bivariate(self):
        return len(self.covariates) == 2


@dataclass(frozen=True)
class Formula:
    """Ordered list of effects; a global intercept is implicit."""

    effects: tuple[Effect, ...]

    def __post_init__(self):
        object.__setattr__(self, "effects", tuple(self.effects))

    def __len__(self):
        return len(self.effects)

    def __iter__(self):
        return iter(self.effects)


@dataclass(frozen=True)
class AdaptiveModel:
    """A formula plus an optional diagonal adaptation matrix.

    ``q_diag is None`` is the fixed-mode sentinel: no adaptation, the
    effect weights stay at one.
    """

    formula: Formula
    q_diag: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.q_diag is not None:
            object.__setattr__(self, "q_diag", tuple(float(q) for q in self.q_diag))

    @property
    def is_fixed(self):
        return self.q_diag is None

    def with_formula(self, formula, new_q=1e-6):
        """Return a copy with ``formula``, q_diag resized to match.

        Kept entries keep their value; extra entries take ``new_q``.
        """
        if self.q_diag is None:
            return AdaptiveModel(formula, None)
        k = len(formula)
        q = list(self.q_diag[:k])
        q += [new_q] * (k - len(q))
        return AdaptiveModel(formula, tuple(q))


def canonical_signature(effect: Effect) -> str:
    """Identity of the engineered covariate tuple of an effect.

    Two effects with the same signature model the same engineered feature,
    whatever their basis family or size; they are redundant in one formula.
    Covariate order within a bi-variate effect does not matter.
    """
    pairs = sorted(
        (name, repr(eng.identity_key()))
        for name, eng in zip(effect.covariates, effect.engineering)
    )
    return ";".join(f"{n}|{k}" for n, k in pairs)


def _check_effect(idx, effect, registry, violations):
    names = effect.covariates
    for name in names:
        if registry is not None and name not in registry:
            violations.append(f"effect {idx}: unknown covariate {name!r}")
            return
    cats = []
    if registry is not None:
        cats = [registry[n].is_categorical for n in names]
        if len(names) == 2 and all(cats):
            violations.append(f"effect {idx}: two categorical covariates")
    b = effect.basis
    if b.family == "tensor-product":
        if len(names) != 2:
            violations.append(f"effect {idx}: tensor-product needs two covariates")
        elif b.marginal_sizes is not None and b.marginal_families is not None:
            for fam, sz in zip(b.marginal_families, b.marginal_sizes):
                if fam in SPLINE_FAMILIES and sz < 3:
                    violations.append(
                        f"effect {idx}: tensor marginal size {sz} < 3")
    else:
        if len(names) == 2:
            violations.append(
                f"effect {idx}: bi-variate effect needs a tensor-product basis")
        if b.family in SPLINE_FAMILIES and (b.size is None or b.size < 3):
            violations.append(f"effect {idx}: spline size q must be >= 3")
    # basis/engineered-type compatibility (registry-dependent)
    if registry is not None and len(names) == 1:
        eng = effect.engineering[0]
        is_cat_value = (cats[0] and eng.variant in
                        ("identity", "category-select", "day-set"))
        if b.family == "categorical-indicator" and not is_cat_value:
            violations.append(
                f"effect {idx}: categorical-indicator basis on non-categorical value")
        if b.family != "categorical-indicator" and is_cat_value:
            violations.append(
                f"effect {idx}: categorical value needs categorical-indicator basis")
        if b.family == "categorical-indicator" and cats[0]:
            m = registry[names[0]].modalities
            if b.size is not None and b.size != m:
                violations.append(
                    f"effect {idx}: categorical basis size {b.size} != m={m}")
        if eng.variant == "category-select" and cats[0]:
            m = registry[names[0]].modalities
            if len(eng.select) != m:
                violations.append(
                    f"effect {idx}: select bit vector length != m={m}")
    if len(names) == 2 and any(e.variant == "lag-set" for e in effect.engineering):
        violations.append(f"effect {idx}: lag-set not allowed in bi-variate effects")


def validate(model, registry: CovariateRegistry | None = None) -> list[str]:
    """Check every invariant; return the list of violations (empty = ok).

    Violations are data, not faults: an invalid candidate is a normal
    occurrence during search. Pass ``registry`` to additionally check
    covariate existence, kinds and modalities.
    """
    if isinstance(model, Formula):
        model = AdaptiveModel(model)
    violations: list[str] = []
    formula = model.formula
    if len(formula) < 1:
        violations.append("K >= 1: formula must contain at least one effect")
        return violations
    sigs: dict[str, int] = {}
    for idx, effect in enumerate(formula):
        _check_effect(idx, effect, registry, violations)
        sig = canonical_signature(effect)
        if sig in sigs:
            violations.append(
                f"duplicate signature at indices {sigs[sig]},{idx}")
        else:
            sigs[sig] = idx
    if model.q_diag is not None:
        if len(model.q_diag) != len(formula):
            violations.append(
                f"Q dimension: len(q_diag)={len(model.q_diag)} != K={len(formula)}")
        for i, q in enumerate(model.q_diag):
            if not (q >= 0) or not math.isfinite(q):
                violations.append(f"q_diag[{i}] must be finite and >= 0")
    return violations
