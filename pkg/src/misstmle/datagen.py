"""Synthetic cohort generator.

Complete data: a continuous auxiliary A, five binary confounders Z1-Z5, a
binary exposure X and a continuous outcome Y, drawn from logistic/linear
models. The `simple` flavour uses main effects only; `complex` adds
confounder-confounder interactions (never involving Z2). Missingness is then
imposed on Z2, Z3, Z4, X, Y through sequential logistic indicator models; the
two mechanisms (A, B) differ only in whether Y drives missingness elsewhere.

Published coefficient tables for this design are not available, so slope
magnitudes are fixed constants and every intercept is calibrated by Monte
Carlo bisection against the published marginal rates.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .core import Dataset, RngStream, logit_inv, study_dataset

SIMPLE = "simple"
COMPLEX = "complex"
SCENARIOS = (SIMPLE, COMPLEX)

MDAG_A = "A"
MDAG_B = "B"
MDAG_NONE = "none"

TRUE_EFFECT = 0.2
DEFAULT_MAIN_COEF = 0.4
DEFAULT_INTERACTION_COEF = 0.5
DEFAULT_COVARIATE_COEF = 0.9
# Missingness-indicator-on-indicator slope. Not pinned by any published
# value; chosen so the calibrated mechanism reproduces the published
# any-missing rate (~50%) alongside the per-variable marginals.
DEFAULT_INDICATOR_COEF = 1.25

# Marginal targets for calibration: prevalence of 1s (binary variables) and
# per-variable missingness rates.
PREVALENCE_TARGETS = {"Z1": 0.21, "Z2": 0.14, "Z3": 0.59, "Z4": 0.37, "Z5": 0.38, "X": 0.15}
MISSING_TARGETS = {"Z2": 0.30, "Z3": 0.15, "Z4": 0.20, "X": 0.30, "Y": 0.20}

# Confounder-confounder interaction structure (Z2 never appears).
PAIRWISE_TERMS = (("Z1", "Z3"), ("Z1", "Z4"), ("Z1", "Z5"), ("Z3", "Z4"), ("Z3", "Z5"), ("Z4", "Z5"))
THREEWAY_TERMS = (("Z1", "Z3", "Z4"), ("Z1", "Z3", "Z5"), ("Z1", "Z4", "Z5"), ("Z3", "Z4", "Z5"))
FOURWAY_TERM = ("Z1", "Z3", "Z4", "Z5")

_CALIBRATION_SEED = 761903
_CALIBRATION_DRAWS = 1_000_000


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class CompleteDataModel:
    """Coefficients of the six generation equations."""

    scenario: str
    z1_intercept: float
    z2_intercept: float
    z2_on_aux: float
    z3_intercept: float
    z3_on_aux: float
    z4_intercept: float
    z4_on_aux: float
    z5_intercept: float
    exposure_intercept: float
    exposure_main: tuple[float, ...]  # on (Z1..Z5, A)
    exposure_pairwise: tuple[float, ...]  # on PAIRWISE_TERMS (complex only)
    outcome_intercept: float
    exposure_effect: float  # true ACE
    outcome_main: tuple[float, ...]  # on (Z1..Z5)
    outcome_pairwise: tuple[float, ...]
    outcome_threeway: tuple[float, ...]
    outcome_fourway: float
    residual_sd: float = 1.0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.residual_sd != 1.0:
            raise ValueError("residual_sd is fixed at 1.0 in this design")


@dataclass(frozen=True)
class MissingnessModel:
    """Sequential logistic models for the indicators M_Z2..M_Y.

    Slopes on the fully observed confounders (Z1, Z5), the variable's own
    value, the other incomplete confounders (for M_X, M_Y) and the exposure
    share `covariate_coef`; the outcome slope is 0 under mechanism A and 0.1
    under mechanism B; earlier indicators enter later models with
    `indicator_coef`.
    """

    mdag: str
    intercepts: tuple[float, float, float, float, float]  # M_Z2, M_Z3, M_Z4, M_X, M_Y
    outcome_coef: float
    covariate_coef: float = DEFAULT_COVARIATE_COEF
    indicator_coef: float = DEFAULT_INDICATOR_COEF

    def __post_init__(self):
        if self.mdag not in (MDAG_A, MDAG_B):
            raise ValueError(f"unknown missingness mechanism {self.mdag!r}")


def calibrate_intercept(target, sampler, tolerance=0.005, draws=_CALIBRATION_DRAWS, rng=None, name="variable"):
    """Intercept c with Monte Carlo mean of logit_inv(c + LP) at `target`.

    `sampler(generator, size)` draws the linear predictor without intercept.
    The draws are frozen once and c is found by bisection on [-20, 20], so
    the result is deterministic given the stream.
    """
    if not 0.0 < target < 1.0:
        raise ValueError("target prevalence must be in (0, 1)")
    if rng is None:
        rng = RngStream(_CALIBRATION_SEED, (0,))
    lp = np.asarray(sampler(rng.generator(), draws), dtype=float)
    if not np.all(np.isfinite(lp)):
        raise CalibrationError(f"{name}: sampler produced non-finite linear predictors")

    def prevalence(c):
        return float(np.mean(logit_inv(c + lp)))

    lo, hi = -20.0, 20.0
    if not prevalence(lo) <= target <= prevalence(hi):
        raise CalibrationError(f"{name}: target prevalence {target} not reachable on [-20, 20]")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if prevalence(mid) < target:
            lo = mid
        else:
            hi = mid
    c = 0.5 * (lo + hi)
    if abs(prevalence(c) - target) > tolerance:
        raise CalibrationError(f"{name}: calibration missed target {target} beyond tolerance {tolerance}")
    return c


def _exposure_linpred(model: CompleteDataModel, z: dict[str, np.ndarray], a: np.ndarray) -> np.ndarray:
    lp = model.exposure_intercept + model.exposure_main[5] * a
    for coef, name in zip(model.exposure_main[:5], ("Z1", "Z2", "Z3", "Z4", "Z5")):
        lp = lp + coef * z[name]
    if model.scenario == COMPLEX:
        for coef, (u, v) in zip(model.exposure_pairwise, PAIRWISE_TERMS):
            lp = lp + coef * z[u] * z[v]
    return lp


def outcome_mean(model: CompleteDataModel, x, z: dict[str, np.ndarray]) -> np.ndarray:
    """E[Y | X=x, Z]; the exposure enters additively so this is also the
    potential-outcome mean."""
    mu = model.outcome_intercept + model.exposure_effect * np.asarray(x, dtype=float)
    for coef, name in zip(model.outcome_main, ("Z1", "Z2", "Z3", "Z4", "Z5")):
        mu = mu + coef * z[name]
    if model.scenario == COMPLEX:
        for coef, (u, v) in zip(model.outcome_pairwise, PAIRWISE_TERMS):
            mu = mu + coef * z[u] * z[v]
        for coef, (u, v, w) in zip(model.outcome_threeway, THREEWAY_TERMS):
            mu = mu + coef * z[u] * z[v] * z[w]
        u, v, w, s = FOURWAY_TERM
        mu = mu + model.outcome_fourway * z[u] * z[v] * z[w] * z[s]
    return mu


def _draw_covariates(model: CompleteDataModel, n: int, gen: np.random.Generator):
    a = gen.standard_normal(n)
    z = {}
    z["Z1"] = (gen.random(n) < logit_inv(model.z1_intercept)).astype(float)
    z["Z2"] = (gen.random(n) < logit_inv(model.z2_intercept + model.z2_on_aux * a)).astype(float)
    z["Z3"] = (gen.random(n) < logit_inv(model.z3_intercept + model.z3_on_aux * a)).astype(float)
    z["Z4"] = (gen.random(n) < logit_inv(model.z4_intercept + model.z4_on_aux * a)).astype(float)
    z["Z5"] = (gen.random(n) < logit_inv(model.z5_intercept)).astype(float)
    return a, z


def _draw_exposure(model: CompleteDataModel, z, a, gen: np.random.Generator):
    return (gen.random(a.shape[0]) < logit_inv(_exposure_linpred(model, z, a))).astype(float)


@dataclass(frozen=True)
class PotentialOutcomes:
    """Per-record potential outcomes, kept for oracle checks only."""

    y_exposed: np.ndarray
    y_unexposed: np.ndarray
    true_effect: float


def generate_complete_with_potentials(model: CompleteDataModel, n: int, rng: RngStream):
    if n < 1:
        raise ValueError("n must be >= 1")
    gen = rng.generator()
    a, z = _draw_covariates(model, n, gen)
    x = _draw_exposure(model, z, a, gen)
    noise = gen.standard_normal(n) * model.residual_sd
    y1 = outcome_mean(model, 1.0, z) + noise
    y0 = outcome_mean(model, 0.0, z) + noise
    y = np.where(x == 1.0, y1, y0)
    values = np.column_stack([a, z["Z1"], z["Z2"], z["Z3"], z["Z4"], z["Z5"], x, y])
    pot = PotentialOutcomes(y1, y0, model.exposure_effect)
    return study_dataset(values), pot


def generate_complete(model: CompleteDataModel, n: int, rng: RngStream) -> Dataset:
    d, _ = generate_complete_with_potentials(model, n, rng)
    return d


# Indicator model structure: covariate-slope columns, then optional earlier
# indicators. Order of imposition is fixed: Z2, Z3, Z4, X, Y.
_INDICATOR_ORDER = ("Z2", "Z3", "Z4", "X", "Y")
_INDICATOR_COVARIATES = {
    "Z2": ("Z1", "Z5", "Z2", "X"),
    "Z3": ("Z1", "Z5", "Z3", "X"),
    "Z4": ("Z1", "Z5", "Z4", "X"),
    "X": ("Z1", "Z5", "Z2", "Z3", "Z4", "X"),
    "Y": ("Z1", "Z5", "Z2", "Z3", "Z4", "X"),
}
_INDICATOR_PARENTS = {
    "Z2": (),
    "Z3": ("Z2",),
    "Z4": ("Z2", "Z3"),
    "X": ("Z2", "Z3", "Z4"),
    "Y": ("Z2", "Z3", "Z4", "X"),
}


def _indicator_linpred(model: MissingnessModel, target: str, cols: dict[str, np.ndarray],
                       indicators: dict[str, np.ndarray], intercept: float) -> np.ndarray:
    lp = np.full(cols["Y"].shape[0], intercept)
    for name in _INDICATOR_COVARIATES[target]:
        lp = lp + model.covariate_coef * cols[name]
    lp = lp + model.outcome_coef * cols["Y"]
    for parent in _INDICATOR_PARENTS[target]:
        lp = lp + model.indicator_coef * indicators[parent]
    return lp


def impose_missingness(d: Dataset, model: MissingnessModel, rng: RngStream) -> Dataset:
    """Mask Z2, Z3, Z4, X, Y per the sequential indicator models.

    The input must be complete. Underlying values stay in the matrix (for
    oracle checks); estimators only ever see the masked view.
    """
    if d.mask.any():
        raise ValueError("impose_missingness expects complete data")
    gen = rng.generator()
    cols = {name: d.raw_column(name) for name in d.names}
    indicators: dict[str, np.ndarray] = {}
    for target, intercept in zip(_INDICATOR_ORDER, model.intercepts):
        p = logit_inv(_indicator_linpred(model, target, cols, indicators, intercept))
        indicators[target] = (gen.random(d.n) < p).astype(float)
    mask = np.zeros_like(d.mask)
    for target in _INDICATOR_ORDER:
        mask[:, d.index(target)] = indicators[target] == 1.0
    return d.with_values(d.values, mask)


def _build_model(scenario: str, main_coef: float, interaction_coef: float, effect: float) -> CompleteDataModel:
    inter = interaction_coef if scenario == COMPLEX else 0.0
    model = CompleteDataModel(
        scenario=scenario,
        z1_intercept=0.0,
        z2_intercept=0.0, z2_on_aux=main_coef,
        z3_intercept=0.0, z3_on_aux=main_coef,
        z4_intercept=0.0, z4_on_aux=main_coef,
        z5_intercept=0.0,
        exposure_intercept=0.0,
        exposure_main=(main_coef,) * 6,
        exposure_pairwise=(inter,) * len(PAIRWISE_TERMS),
        outcome_intercept=0.0,
        exposure_effect=effect,
        outcome_main=(main_coef,) * 5,
        outcome_pairwise=(inter,) * len(PAIRWISE_TERMS),
        outcome_threeway=(inter,) * len(THREEWAY_TERMS),
        outcome_fourway=inter,
    )
    stream = RngStream(_CALIBRATION_SEED, (hash_scenario(scenario),))

    model = replace(model, z1_intercept=calibrate_intercept(
        PREVALENCE_TARGETS["Z1"], lambda g, k: np.zeros(k), rng=stream.child(1), name="Z1"))
    model = replace(model, z5_intercept=calibrate_intercept(
        PREVALENCE_TARGETS["Z5"], lambda g, k: np.zeros(k), rng=stream.child(2), name="Z5"))
    model = replace(model, z2_intercept=calibrate_intercept(
        PREVALENCE_TARGETS["Z2"], lambda g, k: main_coef * g.standard_normal(k), rng=stream.child(3), name="Z2"))
    model = replace(model, z3_intercept=calibrate_intercept(
        PREVALENCE_TARGETS["Z3"], lambda g, k: main_coef * g.standard_normal(k), rng=stream.child(4), name="Z3"))
    model = replace(model, z4_intercept=calibrate_intercept(
        PREVALENCE_TARGETS["Z4"], lambda g, k: main_coef * g.standard_normal(k), rng=stream.child(5), name="Z4"))

    def exposure_lp(g, k):
        a, z = _draw_covariates(model, k, g)
        return _exposure_linpred(model, z, a) - model.exposure_intercept

    model = replace(model, exposure_intercept=calibrate_intercept(
        PREVALENCE_TARGETS["X"], exposure_lp, rng=stream.child(6), name="X"))

    # Outcome intercept centres E[Y] at zero; direct Monte Carlo, no bisection.
    gen = stream.child(7).generator()
    a, z = _draw_covariates(model, _CALIBRATION_DRAWS, gen)
    x = _draw_exposure(model, z, a, gen)
    mean_wo_intercept = float(np.mean(outcome_mean(model, x, z)))
    return replace(model, outcome_intercept=-mean_wo_intercept)


def hash_scenario(scenario: str) -> int:
    return SCENARIOS.index(scenario)


@lru_cache(maxsize=None)
def default_complete_model(scenario: str) -> CompleteDataModel:
    """Calibrated model with the library's default slope magnitudes."""
    return _build_model(scenario, DEFAULT_MAIN_COEF, DEFAULT_INTERACTION_COEF, TRUE_EFFECT)


def _build_missingness(complete: CompleteDataModel, mdag: str,
                       covariate_coef: float, indicator_coef: float) -> MissingnessModel:
    outcome_coef = 0.0 if mdag == MDAG_A else 0.1
    stream = RngStream(_CALIBRATION_SEED, (100 + hash_scenario(complete.scenario), 0 if mdag == MDAG_A else 1))
    d = generate_complete(complete, _CALIBRATION_DRAWS, stream.child(0))
    cols = {name: d.raw_column(name) for name in d.names}
    model = MissingnessModel(mdag=mdag, intercepts=(0.0,) * 5, outcome_coef=outcome_coef,
                             covariate_coef=covariate_coef, indicator_coef=indicator_coef)
    gen = stream.child(1).generator()
    indicators: dict[str, np.ndarray] = {}
    intercepts = []
    for target in _INDICATOR_ORDER:
        lp = _indicator_linpred(model, target, cols, indicators, 0.0)
        c = calibrate_intercept(MISSING_TARGETS[target], lambda g, k: lp, rng=stream.child(2),
                                name=f"M_{target}")
        intercepts.append(c)
        indicators[target] = (gen.random(d.n) < logit_inv(c + lp)).astype(float)
    return replace(model, intercepts=tuple(intercepts))


@lru_cache(maxsize=None)
def default_missingness_model(scenario: str, mdag: str) -> MissingnessModel:
    return _build_missingness(default_complete_model(scenario), mdag,
                              DEFAULT_COVARIATE_COEF, DEFAULT_INDICATOR_COEF)
