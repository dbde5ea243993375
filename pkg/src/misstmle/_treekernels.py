"""Numba kernels for recursive-partitioning trees.

Trees are stored as flat arrays. Node rows live in one shared index array:
each node owns the contiguous segment order[seg_start[v]:seg_end[v]], so leaf
membership (needed for donor imputation) falls out of the fit for free.

Split criterion is within-node SSE. For 0/1 responses the SSE of a split
equals half its Gini impurity, so the same scan serves both families with
identical split decisions. Growth accepts zero-gain splits (symmetric
patterns like XOR stay learnable); the cp rule is applied afterwards as
bottom-up weakest-link pruning.
"""

import numpy as np
from numba import njit

LEAF = -1


@njit(cache=True)
def _next_rand(state):
    # splitmix64; numba-friendly 64-bit generator for per-node feature draws
    state = (state + np.uint64(0x9E3779B97F4A7C15)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = state
    z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = z ^ (z >> np.uint64(31))
    return state, z


@njit(cache=True)
def node_capacity(n, min_leaf):
    # leaves hold >= min_leaf rows, so nodes <= 2*(n/min_leaf) - 1
    return 2 * (n // max(min_leaf, 1)) + 8


@njit(cache=True)
def _grow_into(x, y, is_binary, order, min_leaf, cp, max_depth, mtry, seed,
               feature, thresh, left, right, value, node_sse, seg_start, seg_end):
    """Grow one tree in place; returns the node count."""
    n = order.shape[0]
    k = x.shape[1]

    stack = np.empty((feature.shape[0], 4), np.int64)
    n_nodes = 1
    feature[0] = LEAF
    seg_start[0] = 0
    seg_end[0] = n
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n
    stack[0, 3] = 0
    top = 1

    s = 0.0
    ss = 0.0
    for i in range(n):
        yi = y[order[i]]
        s += yi
        ss += yi * yi
    root_sse = ss - s * s / n
    if root_sse < 0.0:
        root_sse = 0.0

    feat_pool = np.empty(k, np.int64)
    scratch_vals = np.empty(n, np.float64)
    scratch_y = np.empty(n, np.float64)
    scratch_rows = np.empty(n, np.int64)
    rng_state = np.uint64(seed)

    while top > 0:
        top -= 1
        node = stack[top, 0]
        start = stack[top, 1]
        end = stack[top, 2]
        depth = stack[top, 3]
        m = end - start

        s = 0.0
        ss = 0.0
        for i in range(start, end):
            yi = y[order[i]]
            s += yi
            ss += yi * yi
        mean = s / m
        value[node] = mean
        feature[node] = LEAF
        left[node] = -1
        right[node] = -1
        sse = ss - s * s / m
        if sse < 0.0:
            sse = 0.0
        node_sse[node] = sse

        if depth >= max_depth or m < 2 * min_leaf or sse <= 1e-12 * max(1.0, root_sse):
            continue

        # candidate features (partial Fisher-Yates when mtry < k)
        for f in range(k):
            feat_pool[f] = f
        n_cand = k
        if mtry < k:
            n_cand = mtry
            for i in range(mtry):
                rng_state, z = _next_rand(rng_state)
                j = i + int(z % np.uint64(k - i))
                tmp = feat_pool[i]
                feat_pool[i] = feat_pool[j]
                feat_pool[j] = tmp

        best_gain = -1.0
        best_feat = -1
        best_thresh = 0.0
        for ci in range(n_cand):
            f = feat_pool[ci]
            if is_binary[f]:
                n1 = 0
                s1 = 0.0
                ss1 = 0.0
                for i in range(start, end):
                    r = order[i]
                    if x[r, f] > 0.5:
                        n1 += 1
                        yi = y[r]
                        s1 += yi
                        ss1 += yi * yi
                n0 = m - n1
                if n1 < min_leaf or n0 < min_leaf:
                    continue
                s0 = s - s1
                ss0 = ss - ss1
                child_sse = (ss1 - s1 * s1 / n1) + (ss0 - s0 * s0 / n0)
                gain = sse - child_sse
                if gain < 0.0:
                    gain = 0.0
                if gain > best_gain:
                    best_gain = gain
                    best_feat = f
                    best_thresh = 0.5
            else:
                for i in range(m):
                    scratch_vals[i] = x[order[start + i], f]
                idx = np.argsort(scratch_vals[:m])
                for i in range(m):
                    scratch_y[i] = y[order[start + idx[i]]]
                # prefix scan over the sorted order; split only between
                # distinct values
                cs = 0.0
                css = 0.0
                prev = scratch_vals[idx[0]]
                for i in range(m - 1):
                    yi = scratch_y[i]
                    cs += yi
                    css += yi * yi
                    cur = scratch_vals[idx[i + 1]]
                    if cur <= prev:
                        continue
                    nl = i + 1
                    nr = m - nl
                    if nl >= min_leaf and nr >= min_leaf:
                        sl = cs
                        ssl = css
                        sr = s - cs
                        ssr = ss - css
                        child_sse = (ssl - sl * sl / nl) + (ssr - sr * sr / nr)
                        gain = sse - child_sse
                        if gain < 0.0:
                            gain = 0.0
                        if gain > best_gain:
                            best_gain = gain
                            best_feat = f
                            best_thresh = 0.5 * (prev + cur)
                    prev = cur

        if best_feat < 0:
            continue

        # stable two-pass partition: both sides keep their relative order
        nl = 0
        for i in range(start, end):
            r = order[i]
            if x[r, best_feat] <= best_thresh:
                scratch_rows[nl] = r
                nl += 1
        nr = 0
        for i in range(start, end):
            r = order[i]
            if x[r, best_feat] > best_thresh:
                scratch_rows[nl + nr] = r
                nr += 1
        for i in range(m):
            order[start + i] = scratch_rows[i]

        lid = n_nodes
        rid = n_nodes + 1
        n_nodes += 2
        feature[node] = best_feat
        thresh[node] = best_thresh
        left[node] = lid
        right[node] = rid
        seg_start[lid] = start
        seg_end[lid] = start + nl
        seg_start[rid] = start + nl
        seg_end[rid] = end
        stack[top, 0] = lid
        stack[top, 1] = start
        stack[top, 2] = start + nl
        stack[top, 3] = depth + 1
        top += 1
        stack[top, 0] = rid
        stack[top, 1] = start + nl
        stack[top, 2] = end
        stack[top, 3] = depth + 1
        top += 1

    # weakest-link pruning: a split survives only when it lowers its node's
    # impurity by at least cp * root impurity. Children have larger ids than
    # their parent, so one reverse sweep cascades collapses bottom-up.
    min_gain = cp * root_sse
    for v in range(n_nodes - 1, -1, -1):
        if feature[v] == LEAF:
            continue
        l = left[v]
        r = right[v]
        if feature[l] == LEAF and feature[r] == LEAF:
            gain = node_sse[v] - node_sse[l] - node_sse[r]
            if gain < min_gain:
                feature[v] = LEAF
                left[v] = -1
                right[v] = -1

    return n_nodes


@njit(cache=True)
def grow_tree(x, y, is_binary, order, min_leaf, cp, max_depth, mtry, seed):
    """Grow one tree on rows `order` (indices into x, duplicates allowed).

    Returns (feature, thresh, left, right, value, seg_start, seg_end, order)
    with order permuted so every node's member rows are contiguous;
    feature[v] == LEAF marks leaves.
    """
    cap = node_capacity(order.shape[0], min_leaf)
    feature = np.full(cap, LEAF, np.int64)
    thresh = np.zeros(cap, np.float64)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap, np.float64)
    node_sse = np.zeros(cap, np.float64)
    seg_start = np.zeros(cap, np.int64)
    seg_end = np.zeros(cap, np.int64)
    n_nodes = _grow_into(x, y, is_binary, order, min_leaf, cp, max_depth, mtry, seed,
                         feature, thresh, left, right, value, node_sse, seg_start, seg_end)
    return feature[:n_nodes], thresh[:n_nodes], left[:n_nodes], right[:n_nodes], \
        value[:n_nodes], seg_start[:n_nodes], seg_end[:n_nodes], order


@njit(cache=True)
def grow_forest(x, y, is_binary, orders, seeds, min_leaf, cp, max_depth, mtry):
    """Grow orders.shape[0] trees into stacked per-tree arrays."""
    t_count = orders.shape[0]
    cap = node_capacity(orders.shape[1], min_leaf)
    feature = np.full((t_count, cap), LEAF, np.int64)
    thresh = np.zeros((t_count, cap), np.float64)
    left = np.full((t_count, cap), -1, np.int64)
    right = np.full((t_count, cap), -1, np.int64)
    value = np.zeros((t_count, cap), np.float64)
    node_sse = np.zeros(cap, np.float64)
    seg_start = np.zeros((t_count, cap), np.int64)
    seg_end = np.zeros((t_count, cap), np.int64)
    n_nodes = np.zeros(t_count, np.int64)
    for t in range(t_count):
        n_nodes[t] = _grow_into(x, y, is_binary, orders[t], min_leaf, cp, max_depth,
                                mtry, seeds[t], feature[t], thresh[t], left[t],
                                right[t], value[t], node_sse, seg_start[t], seg_end[t])
    return feature, thresh, left, right, value, seg_start, seg_end, n_nodes


@njit(cache=True)
def apply_tree(feature, thresh, left, right, x):
    """Leaf node id for every row of x."""
    n = x.shape[0]
    out = np.empty(n, np.int64)
    for i in range(n):
        v = 0
        while feature[v] != LEAF:
            if x[i, feature[v]] <= thresh[v]:
                v = left[v]
            else:
                v = right[v]
        out[i] = v
    return out


@njit(cache=True)
def predict_tree(feature, thresh, left, right, value, x):
    n = x.shape[0]
    out = np.empty(n, np.float64)
    for i in range(n):
        v = 0
        while feature[v] != LEAF:
            if x[i, feature[v]] <= thresh[v]:
                v = left[v]
            else:
                v = right[v]
        out[i] = value[v]
    return out


@njit(cache=True)
def predict_forest(feature, thresh, left, right, value, x):
    """Mean prediction over stacked trees."""
    t_count = feature.shape[0]
    n = x.shape[0]
    out = np.zeros(n, np.float64)
    for t in range(t_count):
        for i in range(n):
            v = 0
            while feature[t, v] != LEAF:
                if x[i, feature[t, v]] <= thresh[t, v]:
                    v = left[t, v]
                else:
                    v = right[t, v]
            out[i] += value[t, v]
    return out / t_count
