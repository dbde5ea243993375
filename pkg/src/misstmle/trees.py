"""CART and random forest on top of the numba kernels.

Both keep the training rows that landed in each leaf so imputers can sample
donors. Forest trees are grown on bootstrap resamples with a random feature
subset per split; `bootstrap=False` plus mtry=k and a single tree reproduces
the plain CART fit exactly (debug reduction).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import _treekernels as tk

DEFAULT_MIN_LEAF = 5
DEFAULT_CP = 1e-4
DEFAULT_MAX_DEPTH = 10


@dataclass(frozen=True)
class Tree:
    feature: np.ndarray
    thresh: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    seg_start: np.ndarray
    seg_end: np.ndarray
    rows: np.ndarray  # training row ids grouped by node segment

    def _walk(self):
        """(node, depth) pairs reachable from the root (pruned nodes stay in
        the arrays but are unreachable)."""
        stack = [(0, 0)]
        while stack:
            v, d = stack.pop()
            yield v, d
            if self.feature[v] != tk.LEAF:
                stack.append((self.left[v], d + 1))
                stack.append((self.right[v], d + 1))

    @property
    def n_leaves(self) -> int:
        return sum(1 for v, _ in self._walk() if self.feature[v] == tk.LEAF)

    @property
    def depth(self) -> int:
        return max(d for _, d in self._walk())

    def predict(self, x: np.ndarray) -> np.ndarray:
        return tk.predict_tree(self.feature, self.thresh, self.left, self.right,
                               self.value, np.ascontiguousarray(x, dtype=float))

    def leaves_of(self, x: np.ndarray) -> np.ndarray:
        return tk.apply_tree(self.feature, self.thresh, self.left, self.right,
                             np.ascontiguousarray(x, dtype=float))

    def leaf_members(self, leaf: int) -> np.ndarray:
        return self.rows[self.seg_start[leaf]:self.seg_end[leaf]]

    def donor_rows(self, x: np.ndarray) -> list[np.ndarray]:
        """Per query row, the training rows sharing its leaf."""
        return [self.leaf_members(v) for v in self.leaves_of(x)]


def _binary_flags(x: np.ndarray) -> np.ndarray:
    flags = np.zeros(x.shape[1], dtype=np.bool_)
    for j in range(x.shape[1]):
        col = x[:, j]
        flags[j] = bool(np.all((col == 0.0) | (col == 1.0)))
    return flags


def fit_cart(x: np.ndarray, y: np.ndarray, min_leaf: int = DEFAULT_MIN_LEAF,
             cp: float = DEFAULT_CP, max_depth: int = DEFAULT_MAX_DEPTH) -> Tree:
    x = np.ascontiguousarray(x, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    order = np.arange(x.shape[0], dtype=np.int64)
    out = tk.grow_tree(x, y, _binary_flags(x), order, min_leaf, cp, max_depth,
                       x.shape[1], np.uint64(0))
    return Tree(*out)


@dataclass(frozen=True)
class Forest:
    """Stacked per-tree arrays; predictions run as one kernel call."""

    feature: np.ndarray  # (T, cap)
    thresh: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    seg_start: np.ndarray
    seg_end: np.ndarray
    n_nodes: np.ndarray  # (T,)
    orders: np.ndarray  # (T, n) training rows per tree (bootstrap ids)

    @property
    def n_trees(self) -> int:
        return self.feature.shape[0]

    @cached_property
    def trees(self) -> tuple[Tree, ...]:
        out = []
        for t in range(self.n_trees):
            k = self.n_nodes[t]
            out.append(Tree(self.feature[t, :k], self.thresh[t, :k], self.left[t, :k],
                            self.right[t, :k], self.value[t, :k], self.seg_start[t, :k],
                            self.seg_end[t, :k], self.orders[t]))
        return tuple(out)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return tk.predict_forest(self.feature, self.thresh, self.left, self.right,
                                 self.value, np.ascontiguousarray(x, dtype=float))

    def donor_rows(self, x: np.ndarray) -> list[np.ndarray]:
        """Per query row, donors pooled over every tree's leaf (with the
        bootstrap multiplicity each tree saw)."""
        per_tree = [t.donor_rows(x) for t in self.trees]
        return [np.concatenate([cand[i] for cand in per_tree]) for i in range(x.shape[0])]


def fit_forest(x: np.ndarray, y: np.ndarray, n_trees: int, gen: np.random.Generator,
               mtry: int | None = None, min_leaf: int = DEFAULT_MIN_LEAF,
               cp: float = DEFAULT_CP, max_depth: int = DEFAULT_MAX_DEPTH,
               bootstrap: bool = True) -> Forest:
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    x = np.ascontiguousarray(x, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    n, k = x.shape
    if mtry is None:
        mtry = int(np.ceil(np.sqrt(k)))
    mtry = min(max(mtry, 1), k)
    if bootstrap:
        orders = gen.integers(0, n, size=(n_trees, n), dtype=np.int64)
    else:
        orders = np.tile(np.arange(n, dtype=np.int64), (n_trees, 1))
    seeds = gen.integers(0, 2**63, size=n_trees, dtype=np.int64).astype(np.uint64)
    out = tk.grow_forest(x, y, _binary_flags(x), orders, seeds,
                         min_leaf, cp, max_depth, mtry)
    return Forest(*out, orders=orders)
