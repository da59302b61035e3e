"""Built-in reference formulae and synthetic benchmark generators."""

from __future__ import annotations

import numpy as np

from .data import SynthSpec
from .formula import (
    AdaptiveModel,
    BasisSpec,
    Covariate,
    CovariateRegistry,
    Effect,
    FeatureEngineering,
    Formula,
    IDENTITY,
)

__all__ = ["sota_registry", "sota_formula", "seed_population_with",
           "synth_benchmark_spec", "PRESETS"]

DEFAULT_SMOOTH_ALPHA = 0.95
DEFAULT_SPLINE_SIZE = 10
BREAK_MODALITIES = 6


def sota_registry() -> CovariateRegistry:
    """Covariates the handcrafted reference formula expects."""
    return CovariateRegistry([
        Covariate("Temp"),
        Covariate("Cloud"),
        Covariate("Wind"),
        Covariate("Day", "categorical", modalities=7),
        Covariate("Break", "categorical", modalities=BREAK_MODALITIES),
        Covariate("PosYear", "cyclic", period=1.0),
    ])


def sota_formula(h: int, alpha=DEFAULT_SMOOTH_ALPHA,
                 q=DEFAULT_SPLINE_SIZE) -> Formula:
    """The handcrafted seven-effect reference model for hour ``h``.

    Cubic-spline effects for temperature, smoothed temperature, cloud
    cover and wind; indicator effects for weekday and break period; a
    cyclic effect for the position in the year. The structure is the same
    for every hour; the hour enters through dataset filtering.
    """
    if not 0 <= h <= 23:
        raise ValueError(f"hour {h} outside 0..23")
    spline = lambda name: Effect((name,), (IDENTITY,),
                                 BasisSpec("cubic-spline", size=q))
    return Formula((
        spline("Temp"),
        Effect(("Temp",),
               (FeatureEngineering("exp-smooth", alpha=alpha),),
               BasisSpec("cubic-spline", size=q)),
        spline("Cloud"),
        spline("Wind"),
        Effect(("Day",), (IDENTITY,), BasisSpec("categorical-indicator")),
        Effect(("Break",), (IDENTITY,),
               BasisSpec("categorical-indicator")),
        Effect(("PosYear",), (IDENTITY,),
               BasisSpec("cyclic-cubic-spline", size=q)),
    ))


def seed_population_with(preset, population, rng):
    """Replace one random initial member with the preset model."""
    if len(population) < 1:
        raise ValueError("population must contain at least one member")
    if isinstance(preset, Formula):
        preset = AdaptiveModel(preset)
    population = list(population)
    population[int(rng.integers(len(population)))] = preset
    return population


def synth_benchmark_spec(noise_sigma=200.0, theta_schedule=None,
                         registry=None) -> SynthSpec:
    """A known three-effect generating process for recovery benchmarks.

    Load-like scale: a smooth nonlinear temperature response, a weekday
    step pattern, and a yearly cycle.
    """
    if registry is None:
        registry = CovariateRegistry([
            Covariate("Temp"),
            Covariate("Day", "categorical", modalities=7),
            Covariate("PosYear", "cyclic", period=1.0),
        ])
    formula = Formula((
        Effect(("Temp",), (IDENTITY,), BasisSpec("cubic-spline", size=8)),
        Effect(("Day",), (IDENTITY,),
               BasisSpec("categorical-indicator")),
        Effect(("PosYear",), (IDENTITY,),
               BasisSpec("cyclic-cubic-spline", size=6)),
    ))
    day_levels = np.array([0.0, 300.0, 250.0, 240.0, 230.0, 220.0,
                           -400.0, -500.0])

    def temp_effect(x):
        return 120.0 * (15.0 - np.asarray(x)) * (np.asarray(x) < 15.0)

    def day_effect(d):
        return day_levels[np.asarray(d, dtype=int)]

    def year_effect(p):
        return 800.0 * np.cos(2.0 * np.pi * np.asarray(p))

    return SynthSpec(
        formula=formula,
        registry=registry,
        effect_functions=(temp_effect, day_effect, year_effect),
        noise_sigma=noise_sigma,
        intercept=50_000.0,
        theta_schedule=theta_schedule,
    )


PRESETS = {"sota": sota_formula}
