"""Base prediction algorithms for the ensemble and the imputers.

Library kinds: mean, glm, glm_interaction (all pairwise products), ridge
(lambda by internal 10-fold CV), cart, rf. A cell_means learner (empirical
mean per covariate pattern) is provided for saturated-fit oracle checks; it
is not part of the default library.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import glm, trees
from .core import RngStream, logit_inv

GAUSSIAN = "gaussian"
BINOMIAL = "binomial"

PROB_CLAMP = 1e-6

MEAN = "mean"
GLM = "glm"
GLM_INTERACTION = "glm_interaction"
RIDGE = "ridge"
CART = "cart"
RF = "rf"
CELL_MEANS = "cell_means"

RIDGE_GRID = tuple(np.logspace(-4.0, 3.0, 20))


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class DesignMatrix:
    """Complete numeric predictor matrix with named columns."""

    values: np.ndarray
    names: tuple[str, ...]
    family: str

    def __post_init__(self):
        values = np.ascontiguousarray(np.asarray(self.values, dtype=float))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", tuple(self.names))
        if values.ndim != 2:
            raise SchemaError("design must be 2-d")
        if values.shape[1] != len(self.names):
            raise SchemaError("name count does not match column count")
        if len(set(self.names)) != len(self.names):
            raise SchemaError("duplicate design column names")
        if values.shape[1] < 1:
            raise SchemaError("design needs at least one column")
        if not np.all(np.isfinite(values)):
            raise SchemaError("design contains non-finite entries")
        if self.family not in (GAUSSIAN, BINOMIAL):
            raise SchemaError(f"unknown family {self.family!r}")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def k(self) -> int:
        return self.values.shape[1]

    def take(self, rows) -> "DesignMatrix":
        return DesignMatrix(self.values[rows], self.names, self.family)


def pairwise_terms(names) -> list[tuple[str, str]]:
    return list(itertools.combinations(names, 2))


def expand_interactions(x: DesignMatrix, terms) -> DesignMatrix:
    """Append product columns for each tuple of existing column names."""
    terms = [tuple(t) for t in terms]
    if len(set(terms)) != len(terms):
        raise SchemaError("duplicate interaction term requested")
    if not terms:
        return x
    cols = {nm: x.values[:, j] for j, nm in enumerate(x.names)}
    added = []
    added_names = []
    for term in terms:
        prod = np.ones(x.n)
        for nm in term:
            if nm not in cols:
                raise SchemaError(f"interaction term references unknown column {nm}")
            prod = prod * cols[nm]
        added.append(prod)
        added_names.append("*".join(term))
    values = np.column_stack([x.values] + added)
    return DesignMatrix(values, x.names + tuple(added_names), x.family)


@dataclass(frozen=True)
class LearnerSpec:
    """Recipe for one library member; unused knobs are ignored by kind."""

    kind: str
    n_trees: int = 100
    mtry: int | None = None
    min_leaf: int = trees.DEFAULT_MIN_LEAF
    cp: float = trees.DEFAULT_CP
    max_depth: int = trees.DEFAULT_MAX_DEPTH
    bootstrap: bool = True
    ridge_grid: tuple[float, ...] = RIDGE_GRID
    ridge_folds: int = 10

    @property
    def name(self) -> str:
        return self.kind


def default_library() -> tuple[LearnerSpec, ...]:
    return (
        LearnerSpec(MEAN),
        LearnerSpec(GLM),
        LearnerSpec(GLM_INTERACTION),
        LearnerSpec(RIDGE),
        LearnerSpec(CART),
        LearnerSpec(RF, n_trees=100),
    )


class FittedLearner:
    """Deterministic predictor; binomial outputs are clamped."""

    kind: str = "?"

    def __init__(self, names: tuple[str, ...], family: str):
        self.names = names
        self.family = family

    def _check(self, x: DesignMatrix) -> None:
        if x.names != self.names:
            for got, want in itertools.zip_longest(x.names, self.names, fillvalue="<absent>"):
                if got != want:
                    raise SchemaError(f"prediction design column {got!r} does not match training column {want!r}")

    def _finalize(self, pred: np.ndarray) -> np.ndarray:
        if self.family == BINOMIAL:
            return np.clip(pred, PROB_CLAMP, 1.0 - PROB_CLAMP)
        return pred

    def predict(self, x: DesignMatrix) -> np.ndarray:
        self._check(x)
        return self._finalize(self._predict(x))

    def _predict(self, x: DesignMatrix) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError


class FittedMean(FittedLearner):
    kind = MEAN

    def __init__(self, names, family, value: float):
        super().__init__(names, family)
        self.value = value

    def _predict(self, x):
        return np.full(x.n, self.value)


class FittedGlm(FittedLearner):
    kind = GLM

    def __init__(self, names, family, fit: glm.GlmFit, terms=()):
        super().__init__(names, family)
        self.fit = fit
        self.terms = tuple(terms)
        if self.terms:
            self.kind = GLM_INTERACTION

    def _predict(self, x):
        if self.terms:
            x = expand_interactions(x, self.terms)
        return glm.glm_predict(self.fit, x.values, x.names)


class FittedRidge(FittedLearner):
    kind = RIDGE

    def __init__(self, names, family, center, scale, fit: glm.GlmFit, lam: float):
        super().__init__(names, family)
        self.center = center
        self.scale = scale
        self.fit = fit
        self.lam = lam

    def _predict(self, x):
        xs = (x.values - self.center) / self.scale
        return glm.glm_predict(self.fit, xs, x.names)


class FittedTreeLearner(FittedLearner):
    kind = CART

    def __init__(self, names, family, tree: trees.Tree):
        super().__init__(names, family)
        self.tree = tree

    def _predict(self, x):
        return self.tree.predict(x.values)


class FittedForestLearner(FittedLearner):
    kind = RF

    def __init__(self, names, family, forest: trees.Forest):
        super().__init__(names, family)
        self.forest = forest

    def _predict(self, x):
        return self.forest.predict(x.values)


class FittedCellMeans(FittedLearner):
    kind = CELL_MEANS

    def __init__(self, names, family, table: dict, fallback: float):
        super().__init__(names, family)
        self.table = table
        self.fallback = fallback

    def _predict(self, x):
        out = np.empty(x.n)
        for i in range(x.n):
            out[i] = self.table.get(tuple(x.values[i]), self.fallback)
        return out


def _ridge_path_gaussian(xm: np.ndarray, y: np.ndarray, grid, pen_mask: np.ndarray,
                         beta0: np.ndarray | None = None) -> np.ndarray:
    """Penalized LS coefficients for every grid value from one Gram matrix."""
    k = xm.shape[1]
    gram = xm.T @ xm
    c = xm.T @ y
    grid = np.asarray(grid, dtype=float)
    h = np.tile(gram, (grid.shape[0], 1, 1))
    diag = np.arange(k)
    h[:, diag, diag] += grid[:, None] * pen_mask[None, :] + 1e-12
    return np.linalg.solve(h, np.tile(c, (grid.shape[0], 1))[:, :, None])[:, :, 0]


def _ridge_path_binomial(xm: np.ndarray, y: np.ndarray, grid, pen_mask: np.ndarray,
                         beta0: np.ndarray | None = None) -> np.ndarray:
    """Penalized IRLS for every grid value at once (batched Newton steps).

    The per-step Hessians come from one gemm against the precomputed
    row-wise outer products, so the whole path costs a handful of BLAS calls
    per iteration.
    """
    n, k = xm.shape
    grid = np.asarray(grid, dtype=float)
    g = grid.shape[0]
    pen = grid[:, None] * pen_mask[None, :]  # (g, k)
    betas = np.zeros((g, k)) if beta0 is None else beta0.copy()
    pairs = (xm[:, :, None] * xm[:, None, :]).reshape(n, k * k)
    diag = np.arange(k)
    for _ in range(40):
        eta = np.clip(betas @ xm.T, -30.0, 30.0)  # (g, n)
        p = 1.0 / (1.0 + np.exp(-eta))
        score = (y[None, :] - p) @ xm - pen * betas  # (g, k)
        if np.max(np.abs(score)) < 1e-7:
            break
        w = np.maximum(p * (1.0 - p), 1e-10)
        h = (w @ pairs).reshape(g, k, k)
        h[:, diag, diag] += pen + 1e-12
        step = np.linalg.solve(h, score[:, :, None])[:, :, 0]
        big = np.maximum(np.max(np.abs(step), axis=1, keepdims=True), 1e-300)
        step = np.where(big > 5.0, step * (5.0 / big), step)
        betas = betas + step
    return betas


def _fit_ridge(spec: LearnerSpec, x: DesignMatrix, y: np.ndarray, gen: np.random.Generator) -> FittedRidge:
    center = x.values.mean(axis=0)
    scale = x.values.std(axis=0)
    scale[scale < 1e-12] = 1.0
    xs = (x.values - center) / scale
    n = x.n
    xm = np.hstack([np.ones((n, 1)), xs])
    pen_mask = np.ones(x.k + 1)
    pen_mask[0] = 0.0  # intercept unpenalized
    path = _ridge_path_binomial if x.family == BINOMIAL else _ridge_path_gaussian

    folds = min(spec.ridge_folds, n)
    assign = np.repeat(np.arange(folds), np.diff(np.linspace(0, n, folds + 1).astype(int)))
    assign = assign[gen.permutation(n)]

    risks = np.zeros(len(spec.ridge_grid))
    warm = None
    if folds >= 2:
        for v in range(folds):
            tr = assign != v
            va = ~tr
            betas = path(xm[tr], y[tr], spec.ridge_grid, pen_mask, warm)
            warm = betas  # folds are similar; warm starts cut Newton steps
            eta = betas @ xm[va].T  # (g, n_val)
            pred = logit_inv(np.clip(eta, -700, 700)) if x.family == BINOMIAL else eta
            risks += np.sum((y[va][None, :] - pred) ** 2, axis=1)
        # ties resolve toward the heavier penalty
        best = len(risks) - 1 - int(np.argmin(risks[::-1]))
    else:
        best = len(spec.ridge_grid) - 1
    lam = spec.ridge_grid[best]
    coef = path(xm, y, (lam,), pen_mask)[0]
    resid = y - xm @ coef
    df = max(n - x.k - 1, 1)
    sigma2 = float(resid @ resid) / df if x.family == GAUSSIAN else 1.0
    fit = glm.GlmFit(x.family, (glm.INTERCEPT,) + x.names, coef, np.eye(x.k + 1),
                     (), True, sigma2, df)
    return FittedRidge(x.names, x.family, center, scale, fit, lam)


def fit_glm(x: DesignMatrix, y: np.ndarray) -> FittedGlm:
    """Exact least squares (gaussian) or IRLS logistic (binomial)."""
    if x.family == BINOMIAL:
        _check_binary_response(y)
        fit = glm.fit_binomial(x.values, x.names, y)
    else:
        fit = glm.fit_gaussian(x.values, x.names, y)
    return FittedGlm(x.names, x.family, fit)


def fit_glm_interaction(x: DesignMatrix, y: np.ndarray) -> FittedGlm:
    terms = pairwise_terms(x.names)
    expanded = expand_interactions(x, terms)
    if x.family == BINOMIAL:
        _check_binary_response(y)
        fit = glm.fit_binomial(expanded.values, expanded.names, y)
    else:
        fit = glm.fit_gaussian(expanded.values, expanded.names, y)
    return FittedGlm(x.names, x.family, fit, terms=terms)


def fit_cart(x: DesignMatrix, y: np.ndarray, min_leaf: int = trees.DEFAULT_MIN_LEAF,
             cp: float = trees.DEFAULT_CP, max_depth: int = trees.DEFAULT_MAX_DEPTH) -> FittedTreeLearner:
    tree = trees.fit_cart(x.values, y, min_leaf=min_leaf, cp=cp, max_depth=max_depth)
    return FittedTreeLearner(x.names, x.family, tree)


def fit_random_forest(x: DesignMatrix, y: np.ndarray, n_trees: int, rng: RngStream,
                      mtry: int | None = None, min_leaf: int = trees.DEFAULT_MIN_LEAF,
                      cp: float = trees.DEFAULT_CP, max_depth: int = trees.DEFAULT_MAX_DEPTH,
                      bootstrap: bool = True) -> FittedForestLearner:
    forest = trees.fit_forest(x.values, y, n_trees, rng.generator(), mtry=mtry,
                              min_leaf=min_leaf, cp=cp, max_depth=max_depth, bootstrap=bootstrap)
    return FittedForestLearner(x.names, x.family, forest)


def fit_cell_means(x: DesignMatrix, y: np.ndarray) -> FittedCellMeans:
    table: dict = {}
    counts: dict = {}
    for i in range(x.n):
        key = tuple(x.values[i])
        table[key] = table.get(key, 0.0) + y[i]
        counts[key] = counts.get(key, 0) + 1
    table = {k: table[k] / counts[k] for k in table}
    return FittedCellMeans(x.names, x.family, table, float(np.mean(y)))


def _check_binary_response(y: np.ndarray) -> None:
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("binomial fits need a 0/1 response")


def fit_learner(spec: LearnerSpec, x: DesignMatrix, y: np.ndarray, rng: RngStream) -> FittedLearner:
    y = np.asarray(y, dtype=float)
    if x.n != y.shape[0]:
        raise ValueError("response length does not match design")
    if spec.kind == MEAN:
        return FittedMean(x.names, x.family, float(np.mean(y)))
    if spec.kind == GLM:
        return fit_glm(x, y)
    if spec.kind == GLM_INTERACTION:
        return fit_glm_interaction(x, y)
    if spec.kind == RIDGE:
        return _fit_ridge(spec, x, y, rng.generator())
    if spec.kind == CART:
        return fit_cart(x, y, min_leaf=spec.min_leaf, cp=spec.cp, max_depth=spec.max_depth)
    if spec.kind == RF:
        return fit_random_forest(x, y, spec.n_trees, rng, mtry=spec.mtry, min_leaf=spec.min_leaf,
                                 cp=spec.cp, max_depth=spec.max_depth, bootstrap=spec.bootstrap)
    if spec.kind == CELL_MEANS:
        return fit_cell_means(x, y)
    raise ValueError(f"unknown learner kind {spec.kind!r}")


def predict(model: FittedLearner, x: DesignMatrix) -> np.ndarray:
    return model.predict(x)
