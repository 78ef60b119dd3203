"""Compiled kernels for CART tree growth and forest prediction.

Features are pre-binned to small integer codes (see ``make_bins``); a split
on bin ``b`` sends codes ``<= b`` left. Bootstrap resampling is expressed as
integer sample weights. Randomness inside a tree comes from a splitmix64
stream seeded per tree, so results do not depend on thread scheduling.
"""
from __future__ import annotations

import numba
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


@numba.njit(cache=True, nogil=True)
def _next_u64(state):
    state[0] += _GOLDEN
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True, nogil=True)
def _randbelow(state, n):
    return np.int64(_next_u64(state) % np.uint64(n))


@numba.njit(cache=True, nogil=True)
def grow_tree(codes, n_bins, y, weight, max_depth, min_leaf, mtry, seed):
    """Grow one tree.

    codes   : (n_features, n_samples) unsigned bin codes
    n_bins  : (n_features,) number of bins per feature
    y       : (n_samples,) 0/1 labels
    weight  : (n_samples,) nonnegative sample weights (bootstrap counts)
    max_depth < 0 means unlimited.

    Returns node arrays (feature, split_bin, left, right, value, gain,
    weight); ``feature == -1`` marks a leaf and ``value`` is the weighted
    positive fraction of the node.
    """
    n_features = codes.shape[0]
    idx = np.nonzero(weight > 0)[0]
    n = idx.shape[0]
    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int32)
    split_bin = np.full(cap, -1, np.int32)
    left = np.full(cap, -1, np.int32)
    right = np.full(cap, -1, np.int32)
    value = np.zeros(cap)
    gain = np.zeros(cap)
    node_w = np.zeros(cap)

    max_b = 1
    for f in range(n_features):
        if n_bins[f] > max_b:
            max_b = n_bins[f]
    hist_w = np.zeros(max_b)
    hist_p = np.zeros(max_b)
    order = np.arange(n_features)
    state = np.empty(1, np.uint64)
    state[0] = np.uint64(seed)

    stack_node = np.empty(cap, np.int64)
    stack_lo = np.empty(cap, np.int64)
    stack_hi = np.empty(cap, np.int64)
    stack_depth = np.empty(cap, np.int64)
    top = 0
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = n
    stack_depth[0] = 0
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        depth = stack_depth[top]

        W = 0.0
        P = 0.0
        for k in range(lo, hi):
            i = idx[k]
            W += weight[i]
            P += weight[i] * y[i]
        node_w[node] = W
        value[node] = P / W if W > 0 else 0.0
        if (max_depth >= 0 and depth >= max_depth) or W < 2 * min_leaf or P <= 0.0 or P >= W:
            continue

        parent_imp = 2.0 * P * (W - P) / W
        best_gain = -1.0
        best_f = -1
        best_b = -1
        visited = 0
        for k in range(n_features):
            j = k + _randbelow(state, n_features - k)
            tmp = order[k]
            order[k] = order[j]
            order[j] = tmp
            f = order[k]
            nb = n_bins[f]
            if nb < 2:
                continue
            for b in range(nb):
                hist_w[b] = 0.0
                hist_p[b] = 0.0
            row = codes[f]
            for q in range(lo, hi):
                i = idx[q]
                c = row[i]
                hist_w[c] += weight[i]
                hist_p[c] += weight[i] * y[i]
            nonempty = 0
            for b in range(nb):
                if hist_w[b] > 0:
                    nonempty += 1
            if nonempty < 2:
                continue  # constant in this node: does not count toward mtry
            visited += 1
            wl = 0.0
            pl = 0.0
            for b in range(nb - 1):
                if hist_w[b] == 0.0:
                    continue
                wl += hist_w[b]
                pl += hist_p[b]
                wr = W - wl
                if wl < min_leaf:
                    continue
                if wr < min_leaf:
                    break
                pr = P - pl
                child = 2.0 * pl * (wl - pl) / wl + 2.0 * pr * (wr - pr) / wr
                g = parent_imp - child
                if g > best_gain:
                    best_gain = g
                    best_f = f
                    best_b = b
            if visited >= mtry:
                break

        if best_f < 0:
            continue
        row = codes[best_f]
        i0 = lo
        i1 = hi - 1
        while i0 <= i1:
            if row[idx[i0]] <= best_b:
                i0 += 1
            else:
                tmp = idx[i0]
                idx[i0] = idx[i1]
                idx[i1] = tmp
                i1 -= 1
        mid = i0
        if mid == lo or mid == hi:
            continue
        l_id = n_nodes
        r_id = n_nodes + 1
        n_nodes += 2
        feature[node] = best_f
        split_bin[node] = best_b
        left[node] = l_id
        right[node] = r_id
        gain[node] = best_gain if best_gain > 0.0 else 0.0
        # right pushed first so the left subtree is finished first
        stack_node[top] = r_id
        stack_lo[top] = mid
        stack_hi[top] = hi
        stack_depth[top] = depth + 1
        top += 1
        stack_node[top] = l_id
        stack_lo[top] = lo
        stack_hi[top] = mid
        stack_depth[top] = depth + 1
        top += 1

    return (feature[:n_nodes].copy(), split_bin[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy(), gain[:n_nodes].copy(),
            node_w[:n_nodes].copy())


@numba.njit(cache=True, nogil=True)
def predict_forest(X, feature, threshold, left, right, value, roots):
    """Mean leaf value over trees for each row of ``X``.

    Node arrays of all trees are concatenated; child indices are global and
    ``roots`` holds each tree's root index.
    """
    n = X.shape[0]
    out = np.zeros(n)
    n_trees = roots.shape[0]
    for r in range(n):
        acc = 0.0
        for t in range(n_trees):
            node = roots[t]
            while feature[node] >= 0:
                if X[r, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            acc += value[node]
        out[r] = acc / n_trees
    return out


@numba.njit(cache=True, nogil=True)
def apply_codes(codes, feature, split_bin, left, right, value):
    """Leaf values of one tree for binned samples (used during tuning)."""
    n = codes.shape[1]
    out = np.empty(n)
    for r in range(n):
        node = 0
        while feature[node] >= 0:
            if codes[feature[node], r] <= split_bin[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = value[node]
    return out


def make_bins(X: np.ndarray, max_bins: int | None = 255):
    """Per-feature cut points and bin codes.

    Features with at most ``max_bins`` distinct values get one bin per
    value (exact CART splits); others get quantile cuts between distinct
    values. ``max_bins=None`` is always exact. Returns
    ``(edges, codes, n_bins)`` with ``codes`` shaped (n_features, n_samples).
    """
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    edges: list[np.ndarray] = []
    for f in range(d):
        u, counts = np.unique(X[:, f], return_counts=True)
        if max_bins is None or len(u) <= max_bins:
            cut = np.arange(len(u) - 1)
        else:
            cum = np.cumsum(counts)
            targets = np.arange(1, max_bins) * (n / max_bins)
            cut = np.unique(np.searchsorted(cum, targets, side="left"))
            cut = cut[cut < len(u) - 1]
        edges.append(u[cut] + (u[cut + 1] - u[cut]) / 2.0)
    width = max((len(e) + 1 for e in edges), default=1)
    dtype = np.uint8 if width <= 256 else (np.uint16 if width <= 65536 else np.uint32)
    codes = np.empty((d, n), dtype=dtype)
    for f in range(d):
        codes[f] = np.searchsorted(edges[f], X[:, f], side="left")
    n_bins = np.array([len(e) + 1 for e in edges], dtype=np.int64)
    return edges, codes, n_bins


def bin_with(edges, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    width = max((len(e) + 1 for e in edges), default=1)
    dtype = np.uint8 if width <= 256 else (np.uint16 if width <= 65536 else np.uint32)
    codes = np.empty((X.shape[1], X.shape[0]), dtype=dtype)
    for f, e in enumerate(edges):
        codes[f] = np.searchsorted(e, X[:, f], side="left")
    return codes
