"""Least-squares and IRLS fitting shared by the learners and the imputers.

All fitters prepend an intercept, detect collinear columns once via pivoted
QR and drop them (recording the names), and return the covariance of the kept
coefficients so imputers can draw from the approximate posterior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core import logit_inv

GAUSSIAN = "gaussian"
BINOMIAL = "binomial"

_SCORE_TOL = 1e-8
_MAX_ITER = 50
_MAX_STEP = 5.0  # per-coordinate Newton step cap keeps separated fits bounded

INTERCEPT = "(intercept)"


@dataclass(frozen=True)
class GlmFit:
    family: str
    names: tuple[str, ...]  # intercept first, then kept design columns
    coef: np.ndarray
    cov: np.ndarray  # covariance of coef (sigma2*(X'X)^-1 or (X'WX)^-1)
    dropped: tuple[str, ...]
    converged: bool
    sigma2: float  # residual variance (gaussian), 1.0 for binomial
    df_resid: int


def _kept_columns(xm: np.ndarray) -> np.ndarray:
    """Indices of a maximal linearly independent column subset.

    Pivoted Cholesky on the Gram matrix: O(n k^2 + k^3), much cheaper than a
    QR of the full design for the long-thin matrices used here.
    """
    if xm.shape[1] == 0:
        return np.zeros(0, dtype=int)
    gram = xm.T @ xm
    scale = float(np.max(np.diag(gram)))
    if scale <= 0.0:
        return np.zeros(0, dtype=int)
    _, piv, rank, _ = scipy.linalg.lapack.dpstrf(gram, tol=scale * 1e-10, lower=1)
    return np.sort(piv[:rank] - 1)


def _resolve_design(design: np.ndarray, names) -> tuple[np.ndarray, tuple[str, ...], tuple[str, ...]]:
    """Intercept-first design with collinear columns dropped.

    Columns are centered before the rank check so dependence on the intercept
    (constant columns) is caught too; the returned matrix keeps raw values.
    """
    x = np.asarray(design, dtype=float)
    n = x.shape[0]
    names = tuple(names)
    kept = _kept_columns(x - x.mean(axis=0, keepdims=True))
    dropped = tuple(names[j] for j in range(x.shape[1]) if j not in set(kept.tolist()))
    xm = np.hstack([np.ones((n, 1)), x[:, kept]])
    return xm, (INTERCEPT,) + tuple(names[j] for j in kept), dropped


def fit_gaussian(design: np.ndarray, names, y: np.ndarray, weights: np.ndarray | None = None) -> GlmFit:
    xm, kept_names, dropped = _resolve_design(design, names)
    y = np.asarray(y, dtype=float)
    if weights is None:
        xw, yw = xm, y
    else:
        sw = np.sqrt(weights)
        xw, yw = xm * sw[:, None], y * sw
    # normal equations; the design is full rank after the collinearity drop
    xtx = xw.T @ xw
    xty = xw.T @ yw
    try:
        coef = np.linalg.solve(xtx, xty)
    except np.linalg.LinAlgError:
        coef = np.linalg.lstsq(xw, yw, rcond=None)[0]
    resid = yw - xw @ coef
    df = max(xm.shape[0] - xm.shape[1], 1)
    sigma2 = float(resid @ resid) / df
    cov = sigma2 * np.linalg.pinv(xtx)
    return GlmFit(GAUSSIAN, kept_names, coef, cov, dropped, True, sigma2, df)


def fit_binomial(design: np.ndarray, names, y: np.ndarray, offset: np.ndarray | None = None,
                 penalty: float = 0.0) -> GlmFit:
    """Logistic regression by iteratively reweighted least squares.

    Converges when the score max-norm drops below 1e-8; a separated fit stops
    at the iteration cap with bounded coefficients and converged=False.
    `penalty` adds a ridge term on the non-intercept coefficients.
    """
    xm, kept_names, dropped = _resolve_design(design, names)
    y = np.asarray(y, dtype=float)
    n, k = xm.shape
    off = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    beta = np.zeros(k)
    pen = np.zeros(k)
    pen[1:] = penalty
    converged = False
    for _ in range(_MAX_ITER):
        eta = np.clip(xm @ beta + off, -30.0, 30.0)
        p = logit_inv(eta)
        score = xm.T @ (y - p) - pen * beta
        if np.max(np.abs(score)) < _SCORE_TOL:
            converged = True
            break
        w = np.maximum(p * (1.0 - p), 1e-10)
        h = (xm * w[:, None]).T @ xm
        h[np.diag_indices_from(h)] += pen + 1e-12
        try:
            step = np.linalg.solve(h, score)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(h, score, rcond=None)[0]
        big = np.max(np.abs(step))
        if big > _MAX_STEP:
            step *= _MAX_STEP / big
        beta = beta + step
    eta = np.clip(xm @ beta + off, -30.0, 30.0)
    p = logit_inv(eta)
    w = np.maximum(p * (1.0 - p), 1e-10)
    h = (xm * w[:, None]).T @ xm
    h[np.diag_indices_from(h)] += pen + 1e-12
    cov = np.linalg.pinv(h)
    return GlmFit(BINOMIAL, kept_names, beta, cov, dropped, converged, 1.0, max(n - k, 1))


def glm_predict(fit: GlmFit, design: np.ndarray, names) -> np.ndarray:
    """Predictions on the response scale, re-aligning columns by name."""
    design = np.asarray(design, dtype=float)
    cols = {nm: design[:, j] for j, nm in enumerate(names)}
    n = design.shape[0]
    eta = np.full(n, fit.coef[0])
    for c, nm in zip(fit.coef[1:], fit.names[1:]):
        if nm not in cols:
            raise KeyError(f"prediction design lacks column {nm}")
        eta = eta + c * cols[nm]
    if fit.family == BINOMIAL:
        return logit_inv(np.clip(eta, -700, 700))
    return eta


def posterior_draw(fit: GlmFit, gen: np.random.Generator) -> tuple[np.ndarray, float]:
    """(coefficient draw, residual-sd draw) from the approximate posterior.

    Gaussian fits rescale the covariance by a chi-square draw of the residual
    variance, matching standard proper-imputation practice; binomial fits
    return sd 1.0.
    """
    cov = fit.cov
    sigma_star = 1.0
    if fit.family == GAUSSIAN:
        sigma2_star = fit.sigma2 * fit.df_resid / gen.chisquare(fit.df_resid)
        cov = cov * (sigma2_star / max(fit.sigma2, 1e-300))
        sigma_star = float(np.sqrt(sigma2_star))
    jitter = 1e-12 * np.eye(cov.shape[0])
    chol = np.linalg.cholesky(cov + jitter)
    return fit.coef + chol @ gen.standard_normal(fit.coef.shape[0]), sigma_star
