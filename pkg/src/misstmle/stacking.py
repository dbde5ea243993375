"""Super learner: V-fold cross-validated stacking with non-negative
least-squares meta-weights normalized to the simplex."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.optimize

from .core import RngStream
from .learners import (BINOMIAL, PROB_CLAMP, DesignMatrix, FittedLearner,
                       FittedMean, LearnerSpec, fit_learner)

DEFAULT_FOLDS = 10
SMALL_SAMPLE_FOLDS = 5  # used below n=100


def cv_folds(n: int, v: int, rng: RngStream, y: np.ndarray | None = None) -> list[np.ndarray]:
    """Partition {0..n-1} into v folds with sizes differing by at most one.

    When a 0/1 response is supplied the split is stratified: each class is
    dealt round-robin so every fold holds at least one of each class where
    the counts allow it.
    """
    if not 2 <= v <= n:
        raise ValueError(f"fold count {v} must be in [2, n={n}]")
    gen = rng.generator()
    if y is None:
        perm = gen.permutation(n)
    else:
        y = np.asarray(y)
        perm = np.concatenate([gen.permutation(np.flatnonzero(y == level)) for level in (0.0, 1.0)])
        if perm.shape[0] != n:
            raise ValueError("stratified folds need a 0/1 response")
    folds = [perm[start::v] for start in range(v)]
    return [np.sort(f) for f in folds]


def nnls(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """argmin ||a w - b||^2 over w >= 0, with symmetric ties averaged.

    Identical columns of `a` admit any split of their combined weight; the
    returned solution shares it equally so results are deterministic.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or not np.any(a):
        return np.zeros(a.shape[1])
    w, _ = scipy.optimize.nnls(a, b)
    # average weights across groups of exactly identical columns
    seen: dict[bytes, list[int]] = {}
    for j in range(a.shape[1]):
        seen.setdefault(a[:, j].tobytes(), []).append(j)
    for cols in seen.values():
        if len(cols) > 1:
            w[cols] = w[cols].mean()
    return w


@dataclass(frozen=True)
class EnsembleModel:
    """Fitted stack: members refit on the full data plus simplex weights."""

    members: tuple[FittedLearner, ...]
    member_names: tuple[str, ...]
    weights: np.ndarray
    family: str
    cv_risk: np.ndarray
    warnings: tuple[str, ...]

    def predict(self, x: DesignMatrix) -> np.ndarray:
        out = np.zeros(x.n)
        for w, member in zip(self.weights, self.members):
            if w != 0.0:
                out += w * member.predict(x)
        if self.family == BINOMIAL:
            out = np.clip(out, PROB_CLAMP, 1.0 - PROB_CLAMP)
        return out


def default_fold_count(n: int) -> int:
    return SMALL_SAMPLE_FOLDS if n < 100 else DEFAULT_FOLDS


def fit_superlearner(x: DesignMatrix, y: np.ndarray, library: tuple[LearnerSpec, ...],
                     rng: RngStream, v: int | None = None) -> EnsembleModel:
    """Cross-validated stacking over `library`.

    A member that fails on a fold contributes that fold's training mean
    instead (with a warning recorded); it is never silently dropped.
    """
    y = np.asarray(y, dtype=float)
    n = x.n
    if v is None:
        v = default_fold_count(n)
    if n < 2 * v:
        raise ValueError(f"need n >= 2V for stacking (n={n}, V={v})")
    strata = y if x.family == BINOMIAL else None
    folds = cv_folds(n, v, rng.child(0), strata)

    splits = []
    for val_rows in folds:
        train = np.ones(n, dtype=bool)
        train[val_rows] = False
        splits.append((x.take(train), y[train], x.take(val_rows), val_rows))

    warnings: list[str] = []
    z = np.zeros((n, len(library)))
    for j, spec in enumerate(library):
        for fold_id, (x_train, y_train, x_val, val_rows) in enumerate(splits):
            try:
                member = fit_learner(spec, x_train, y_train, rng.child(1, j, fold_id))
                z[val_rows, j] = member.predict(x_val)
            except Exception as exc:  # noqa: BLE001 - fold failures are data-dependent
                z[val_rows, j] = float(np.mean(y_train))
                warnings.append(f"{spec.name}: fold {fold_id} fell back to the training mean ({exc})")

    weights = nnls(z, y)
    total = float(weights.sum())
    if total <= 0.0:
        weights = np.full(len(library), 1.0 / len(library))
    else:
        weights = weights / total
    cv_risk = np.mean((z - y[:, None]) ** 2, axis=0)

    members: list[FittedLearner] = []
    for j, spec in enumerate(library):
        try:
            members.append(fit_learner(spec, x, y, rng.child(2, j)))
        except Exception as exc:  # noqa: BLE001
            members.append(FittedMean(x.names, x.family, float(np.mean(y))))
            warnings.append(f"{spec.name}: full-data refit fell back to the mean ({exc})")

    return EnsembleModel(tuple(members), tuple(s.name for s in library),
                         weights, x.family, cv_risk, tuple(warnings))
