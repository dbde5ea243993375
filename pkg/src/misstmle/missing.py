"""The eight missing-data strategies around the TMLE analysis.

Non-MI routes: complete-case analysis, extended TMLE on the
complete-exposure-and-confounder subset, and the missing-covariate
missing-indicator transform feeding the extended TMLE. MI routes: chained
univariate imputation (logistic draws and predictive mean matching for the
parametric flavours, leaf-donor draws for CART and random forest), analysis
of each completed dataset, and Rubin's-rules pooling.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import glm, trees
from .core import ANALYSIS_COLUMNS, BINARY, CONFOUNDERS, Dataset, RngStream, complete_cases, logit_inv, rows_complete
from .tmle import Z_95, EstimateResult, EstimationError, TmleConfig, tmle_ate, tmle_ate_extended

CCA = "cca"
EXT_TMLE = "ext-tmle"
EXT_TMLE_MCMI = "ext-tmle-mcmi"
MI_NOINT = "mi-noint"
MI_TWOWAY = "mi-2way"
MI_HIGHER = "mi-higher"
MI_CART = "mi-cart"
MI_RF = "mi-rf"

METHODS = (CCA, EXT_TMLE, EXT_TMLE_MCMI, MI_NOINT, MI_TWOWAY, MI_HIGHER, MI_CART, MI_RF)

METHOD_LABELS = {
    CCA: "Complete-case",
    EXT_TMLE: "Ext-TMLE",
    EXT_TMLE_MCMI: "Ext-TMLE+MCMI",
    MI_NOINT: "MI-no int",
    MI_TWOWAY: "MI-2-way int",
    MI_HIGHER: "MI-higher int",
    MI_CART: "MI-CART",
    MI_RF: "MI-RF",
}

# Imputation-model flavours (ImputationSpec.method).
NOINT = "noint"
TWOWAY = "twoway"
HIGHER = "higher"
CART_IMP = "cart"
RF_IMP = "rf"

MI_FLAVOUR = {MI_NOINT: NOINT, MI_TWOWAY: TWOWAY, MI_HIGHER: HIGHER, MI_CART: CART_IMP, MI_RF: RF_IMP}

# Interaction universe of the two-way imputation models: exposure-outcome,
# exposure-confounder, confounder-outcome and confounder-confounder products;
# Z2 and the auxiliary never appear in interaction terms.
TWOWAY_UNIVERSE = (
    ("X", "Y"),
    ("X", "Z1"), ("Y", "Z1"),
    ("X", "Z3"), ("Y", "Z3"),
    ("X", "Z4"), ("Y", "Z4"),
    ("X", "Z5"), ("Y", "Z5"),
    ("Z1", "Z3"), ("Z1", "Z4"), ("Z1", "Z5"),
    ("Z3", "Z4"), ("Z3", "Z5"), ("Z4", "Z5"),
)
HIGHER_UNIVERSE = TWOWAY_UNIVERSE + (
    ("Z1", "Z3", "Z4"), ("Z1", "Z3", "Z5"), ("Z1", "Z4", "Z5"), ("Z3", "Z4", "Z5"),
    ("Z1", "Z3", "Z4", "Z5"),
)

IMPUTABLE = ("Z2", "Z3", "Z4", "X", "Y")
_MIN_OBSERVED = 30


@dataclass(frozen=True)
class ImputationSpec:
    method: str
    m: int = 5
    cycles: int = 10
    pmm_donors: int = 5
    rf_trees: int = 10
    outcome_linear: bool = False  # stochastic-regression outcome draws instead of PMM

    def __post_init__(self):
        if self.method not in (NOINT, TWOWAY, HIGHER, CART_IMP, RF_IMP):
            raise ValueError(f"unknown imputation flavour {self.method!r}")
        if self.m < 1:
            raise ValueError("need at least one imputation")
        if self.cycles < 1:
            raise ValueError("need at least one cycle")


@dataclass(frozen=True)
class PooledResult:
    qbar: float
    within: float
    between: float
    total: float
    m: int


def imputation_predictors(spec: ImputationSpec, target: str, auxiliaries=("A",)):
    """(main-effect names, interaction terms) for one univariate model.

    The target's own main effect and every product containing it are
    excluded; everything else in the relevant universe is included.
    """
    mains = tuple(nm for nm in tuple(auxiliaries) + ANALYSIS_COLUMNS if nm != target)
    if spec.method == TWOWAY:
        universe = TWOWAY_UNIVERSE
    elif spec.method == HIGHER:
        universe = HIGHER_UNIVERSE
    else:
        universe = ()
    terms = tuple(t for t in universe if target not in t)
    return mains, terms


def _assert_inclusion_discipline(target: str, mains, terms) -> None:
    if target in mains:
        raise AssertionError(f"imputation model for {target} contains its own main effect")
    for t in terms:
        if target in t:
            raise AssertionError(f"imputation model for {target} contains the product {t}")


def impute_logreg(x_obs, y_obs, x_mis, names, gen) -> np.ndarray:
    """Bernoulli draws from a logistic fit with posterior-sampled
    coefficients."""
    fit = glm.fit_binomial(x_obs, names, y_obs)
    beta, _ = glm.posterior_draw(fit, gen)
    p = glm.glm_predict(replace(fit, coef=beta), x_mis, names)
    return (gen.random(x_mis.shape[0]) < p).astype(float)


def impute_pmm(x_obs, y_obs, x_mis, names, gen, donors=5, match=True) -> np.ndarray:
    """Predictive mean matching for a continuous target.

    Missing-row predictions use posterior-drawn coefficients, observed-row
    predictions the MLE; each missing row copies a uniformly chosen value
    among the `donors` observed rows with nearest predictions. With
    match=False the draw is plain stochastic regression (used by the
    'MI-no int (linear)' variant).
    """
    fit = glm.fit_gaussian(x_obs, names, y_obs)
    beta, sigma_star = glm.posterior_draw(fit, gen)
    pred_mis = glm.glm_predict(replace(fit, coef=beta), x_mis, names)
    if not match:
        return pred_mis + sigma_star * gen.standard_normal(x_mis.shape[0])
    pred_obs = glm.glm_predict(fit, x_obs, names)
    k = min(donors, len(y_obs))
    out = np.empty(x_mis.shape[0])
    dist = np.abs(pred_mis[:, None] - pred_obs[None, :])
    # stable ordering by (distance, observed index) keeps donor sets unique
    ranks = np.argsort(dist, axis=1, kind="stable")
    picks = gen.integers(0, k, size=x_mis.shape[0])
    for i in range(x_mis.shape[0]):
        out[i] = y_obs[ranks[i, picks[i]]]
    return out


def impute_cart(x_obs, y_obs, x_mis, gen, min_leaf=5, cp=1e-4, max_depth=trees.DEFAULT_MAX_DEPTH) -> np.ndarray:
    """Leaf-donor draws from a single tree fitted to the observed rows."""
    tree = trees.fit_cart(x_obs, y_obs, min_leaf=min_leaf, cp=cp, max_depth=max_depth)
    donors = tree.donor_rows(x_mis)
    out = np.empty(x_mis.shape[0])
    for i, cand in enumerate(donors):
        out[i] = y_obs[cand[gen.integers(0, len(cand))]]
    return out


def impute_rf(x_obs, y_obs, x_mis, gen, n_trees=10, min_leaf=5, cp=1e-4,
              max_depth=trees.DEFAULT_MAX_DEPTH) -> np.ndarray:
    """Leaf-donor draws pooled over every tree of a small forest."""
    forest = trees.fit_forest(x_obs, y_obs, n_trees, gen, min_leaf=min_leaf, cp=cp, max_depth=max_depth)
    donors = forest.donor_rows(x_mis)
    out = np.empty(x_mis.shape[0])
    for i, cand in enumerate(donors):
        out[i] = y_obs[cand[gen.integers(0, len(cand))]]
    return out


def _passive_design(values: dict[str, np.ndarray], mains, terms):
    names = list(mains)
    cols = [values[nm] for nm in mains]
    for term in terms:
        prod = np.ones_like(values[term[0]])
        for nm in term:
            prod = prod * values[nm]
        names.append("*".join(term))
        cols.append(prod)
    return np.column_stack(cols), tuple(names)


def mice_impute(d: Dataset, spec: ImputationSpec, rng: RngStream,
                auxiliaries=("A",)) -> list[Dataset]:
    """Chained-equation imputation: m completed copies of `d`.

    Missing cells start as resamples of the observed values; each cycle
    revisits the incomplete variables in column order, rebuilding interaction
    columns passively from current values. Chains run on split streams, so
    the result is reproducible and chain-order independent.
    """
    incomplete = [nm for nm in d.names if d.mask[:, d.index(nm)].any()]
    for nm in incomplete:
        if nm not in IMPUTABLE:
            raise EstimationError(f"column {nm} has missing values but only {IMPUTABLE} are imputable")
        if int(d.observed(nm).sum()) < _MIN_OBSERVED:
            raise EstimationError(f"column {nm} has fewer than {_MIN_OBSERVED} observed rows")
    targets = [nm for nm in IMPUTABLE if nm in incomplete]

    completed: list[Dataset] = []
    for chain in range(spec.m):
        gen = rng.child(chain).generator()
        values = {nm: d.raw_column(nm) for nm in d.names}
        observed = {nm: d.observed(nm) for nm in targets}
        for nm in targets:
            obs_vals = values[nm][observed[nm]]
            miss = ~observed[nm]
            values[nm][miss] = obs_vals[gen.integers(0, len(obs_vals), size=int(miss.sum()))]

        for _ in range(spec.cycles):
            for nm in targets:
                mains, terms = imputation_predictors(spec, nm, auxiliaries)
                _assert_inclusion_discipline(nm, mains, terms)
                design, names = _passive_design(values, mains, terms)
                obs = observed[nm]
                miss = ~obs
                y_obs = values[nm][obs]
                try:
                    values[nm][miss] = _impute_once(spec, d.kind(nm), design[obs], y_obs,
                                                    design[miss], names, gen)
                except (np.linalg.LinAlgError, ValueError):
                    # degenerate model this cycle: resample observed values
                    values[nm][miss] = y_obs[gen.integers(0, len(y_obs), size=int(miss.sum()))]

        matrix = np.column_stack([values[nm] for nm in d.names])
        completed.append(Dataset(d.names, d.kinds, matrix, np.zeros_like(d.mask)))
    return completed


def _impute_once(spec: ImputationSpec, kind: str, x_obs, y_obs, x_mis, names, gen) -> np.ndarray:
    if spec.method in (NOINT, TWOWAY, HIGHER):
        if kind == BINARY:
            return impute_logreg(x_obs, y_obs, x_mis, names, gen)
        return impute_pmm(x_obs, y_obs, x_mis, names, gen,
                          donors=spec.pmm_donors, match=not spec.outcome_linear)
    if spec.method == CART_IMP:
        return impute_cart(x_obs, y_obs, x_mis, gen)
    return impute_rf(x_obs, y_obs, x_mis, gen, n_trees=spec.rf_trees)


def rubin_pool(estimates, ses) -> PooledResult:
    """Rubin's rules: qbar, W, B and T = W + (1+1/m)B."""
    estimates = np.asarray(estimates, dtype=float)
    ses = np.asarray(ses, dtype=float)
    m = estimates.shape[0]
    if m < 2:
        raise ValueError("pooling needs at least two imputations")
    if np.any(ses < 0):
        raise ValueError("standard errors must be non-negative")
    qbar = float(np.mean(estimates))
    within = float(np.mean(ses**2))
    # identical estimates have exactly zero spread; np.var's mean-first pass
    # would otherwise leave ~1e-33 of roundoff
    between = float(np.var(estimates, ddof=1)) if np.ptp(estimates) > 0 else 0.0
    total = within + (1.0 + 1.0 / m) * between
    return PooledResult(qbar, within, between, total, m)


def cca_estimate(d: Dataset, config: TmleConfig, rng: RngStream) -> EstimateResult:
    """Complete-case analysis over the analysis variables (A is auxiliary)."""
    cc = complete_cases(d, ANALYSIS_COLUMNS)
    if cc.n == 0:
        raise EstimationError("no complete cases")
    res = tmle_ate(cc, config, rng, method=CCA)
    return _with_n(res, cc.n)


def ext_tmle_cec(d: Dataset, config: TmleConfig, rng: RngStream) -> EstimateResult:
    """Extended TMLE on rows with complete exposure and confounders."""
    kept = complete_cases(d, CONFOUNDERS + ("X",))
    if kept.n == 0:
        raise EstimationError("no rows with complete exposure and confounders")
    res = tmle_ate_extended(kept, config, rng, method=EXT_TMLE)
    return _with_n(res, kept.n)


def mcmi_transform(d: Dataset) -> tuple[Dataset, tuple[str, ...]]:
    """Zero-fill incomplete confounders, add their missingness indicators,
    and drop rows with missing exposure.

    Returns the transformed dataset and the augmented adjustment set.
    Indicators that would be constant (fully observed confounder) are not
    added. Outcome missingness is left for the extended TMLE.
    """
    keep = np.flatnonzero(rows_complete(d, ("X",)))
    out = d.take(keep)
    adjustment = list(CONFOUNDERS)
    values = out.values.copy()
    mask = out.mask.copy()
    extra = []
    for nm in CONFOUNDERS:
        j = out.index(nm)
        miss = mask[:, j].copy()
        if not miss.any():
            continue
        values[miss, j] = 0.0
        mask[:, j] = False
        extra.append((f"M_{nm}", miss.astype(float)))
        adjustment.append(f"M_{nm}")
    out = Dataset(out.names, out.kinds, values, mask)
    for nm, col in extra:
        out = out.append_column(nm, BINARY, col)
    return out, tuple(adjustment)


def ext_tmle_mcmi(d: Dataset, config: TmleConfig, rng: RngStream) -> EstimateResult:
    transformed, adjustment = mcmi_transform(d)
    if transformed.n == 0:
        raise EstimationError("no rows with observed exposure")
    cfg = replace(config, adjustment=adjustment)
    res = tmle_ate_extended(transformed, cfg, rng, method=EXT_TMLE_MCMI)
    return _with_n(res, transformed.n)


def mi_estimate(d: Dataset, spec: ImputationSpec, config: TmleConfig, rng: RngStream,
                method: str | None = None) -> EstimateResult:
    """Impute, analyse each completed dataset, pool with Rubin's rules.

    The analysis stream is shared across imputations (paired folds), so on
    fully observed data the pooled result collapses to the single-dataset
    TMLE with zero between-imputation variance.
    """
    if method is None:
        method = {v: k for k, v in MI_FLAVOUR.items()}[spec.method]
    completed = mice_impute(d, spec, rng.child(0))
    analysis_rng = rng.child(1)
    warnings: tuple[str, ...] = ()
    psis, ses = [], []
    for imp in completed:
        res = tmle_ate(imp, config, analysis_rng, method=method)
        psis.append(res.psi)
        ses.append(res.se)
        warnings = warnings + res.warnings
    if spec.m == 1:
        return EstimateResult(psis[0], ses[0], psis[0] - Z_95 * ses[0], psis[0] + Z_95 * ses[0],
                              d.n, method, warnings)
    pooled = rubin_pool(psis, ses)
    se = float(np.sqrt(pooled.total))
    return EstimateResult(pooled.qbar, se, pooled.qbar - Z_95 * se, pooled.qbar + Z_95 * se,
                          d.n, method, warnings)


def estimate(d: Dataset, method: str, config: TmleConfig, rng: RngStream,
             m: int = 5, cycles: int = 10) -> EstimateResult:
    """Dispatch one of the eight strategies."""
    if method == CCA:
        return cca_estimate(d, config, rng)
    if method == EXT_TMLE:
        return ext_tmle_cec(d, config, rng)
    if method == EXT_TMLE_MCMI:
        return ext_tmle_mcmi(d, config, rng)
    if method in MI_FLAVOUR:
        spec = ImputationSpec(MI_FLAVOUR[method], m=m, cycles=cycles)
        return mi_estimate(d, spec, config, rng, method=method)
    raise ValueError(f"unknown method {method!r}")


def _with_n(res: EstimateResult, n_used: int) -> EstimateResult:
    return EstimateResult(res.psi, res.se, res.ci_lo, res.ci_hi, n_used, res.method, res.warnings)
