"""Depth-limited regression forest.

Trees grow level by level. Each feature is sorted once per forest; a single
pass over a sorted column scores every candidate split for all nodes on the
current level, so a tree costs O(max_depth * p * n). Bootstrap resampling is
represented as integer multiplicities on the training rows.

Per-tree randomness (bootstrap draws and feature subsets) comes from a
splitmix64 generator seeded with one 64-bit word per tree.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _splitmix(state):
    state = state + np.uint64(0x9E3779B97F4A7C15)
    z = state
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return state, z


@njit(cache=True)
def _build_tree(x, xt, y, order, seed, max_depth, min_leaf, mtry, bootstrap,
                feat, thr, left, right, value, base, cap):
    """Grow one tree into slots ``base .. base + cap``; returns node count."""
    n, p = x.shape
    state = np.uint64(seed)

    w = np.zeros(n)
    if bootstrap:
        for _ in range(n):
            state, z = _splitmix(state)
            w[np.int64(z % np.uint64(n))] += 1.0
    else:
        w[:] = 1.0

    # In-bag rows in sorted order, one row of indices per feature.
    m = 0
    for i in range(n):
        if w[i] > 0.0:
            m += 1
    sorted_rows = np.empty((p, m), dtype=np.int64)
    for f in range(p):
        pos = 0
        for idx in range(n):
            i = order[f, idx]
            if w[i] > 0.0:
                sorted_rows[f, pos] = i
                pos += 1

    cnt = np.zeros(cap)
    sm = np.zeros(cap)
    ss = np.zeros(cap)
    node_of = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        if w[i] > 0.0:
            node_of[i] = 0
            cnt[0] += w[i]
            sm[0] += w[i] * y[i]
            ss[0] += w[i] * y[i] * y[i]
    for k in range(cap):
        feat[base + k] = -1
        left[base + k] = -1
        right[base + k] = -1
    n_nodes = 1
    lo, hi = 0, 1
    perm = np.arange(p)

    for _depth in range(max_depth):
        width = hi - lo
        splittable = np.zeros(width, dtype=np.bool_)
        cand = np.zeros((width, p), dtype=np.bool_)
        best = np.zeros(width)
        best_f = np.full(width, -1, dtype=np.int64)
        best_t = np.zeros(width)
        any_split = False
        for kl in range(width):
            k = lo + kl
            if cnt[k] < 2.0 * min_leaf:
                continue
            parent = sm[k] * sm[k] / cnt[k]
            if ss[k] - parent <= 1e-12 * max(ss[k], 1e-300):
                continue
            splittable[kl] = True
            any_split = True
            best[kl] = parent + 1e-12 * abs(parent)
            for j in range(p):
                perm[j] = j
            for j in range(mtry):
                state, z = _splitmix(state)
                pick = j + np.int64(z % np.uint64(p - j))
                tmp = perm[j]
                perm[j] = perm[pick]
                perm[pick] = tmp
                cand[kl, perm[j]] = True
        if not any_split:
            break

        cl = np.zeros(width)
        sl = np.zeros(width)
        last = np.zeros(width)
        for f in range(p):
            used = False
            for kl in range(width):
                if splittable[kl] and cand[kl, f]:
                    used = True
                    break
            if not used:
                continue
            cl[:] = 0.0
            sl[:] = 0.0
            col = sorted_rows[f]
            xf = xt[f]
            for idx in range(m):
                i = col[idx]
                k = node_of[i]
                if k < 0:
                    continue
                kl = k - lo
                if not splittable[kl] or not cand[kl, f]:
                    continue
                xv = xf[i]
                c = cl[kl]
                if c >= min_leaf and cnt[k] - c >= min_leaf and xv > last[kl]:
                    s = sl[kl]
                    gain = s * s / c + (sm[k] - s) * (sm[k] - s) / (cnt[k] - c)
                    if gain > best[kl]:
                        best[kl] = gain
                        best_f[kl] = f
                        t = 0.5 * (last[kl] + xv)
                        if t >= xv:
                            t = last[kl]
                        best_t[kl] = t
                cl[kl] = c + w[i]
                sl[kl] += w[i] * y[i]
                last[kl] = xv

        new_lo = n_nodes
        for kl in range(width):
            k = lo + kl
            if best_f[kl] >= 0 and n_nodes + 2 <= cap:
                feat[base + k] = best_f[kl]
                thr[base + k] = best_t[kl]
                left[base + k] = n_nodes
                right[base + k] = n_nodes + 1
                n_nodes += 2
        new_hi = n_nodes
        if new_hi == new_lo:
            break

        for i in range(n):
            k = node_of[i]
            if k < 0:
                continue
            f = feat[base + k]
            if f < 0:
                node_of[i] = -1
                continue
            if x[i, f] <= thr[base + k]:
                c = left[base + k]
            else:
                c = right[base + k]
            node_of[i] = c
            cnt[c] += w[i]
            sm[c] += w[i] * y[i]
            ss[c] += w[i] * y[i] * y[i]
        lo, hi = new_lo, new_hi

    for k in range(n_nodes):
        value[base + k] = sm[k] / cnt[k]
    return n_nodes


@njit(cache=True)
def _grow_forest(x, xt, y, order, seeds, max_depth, min_leaf, mtry, bootstrap, cap):
    n_trees = seeds.shape[0]
    total = n_trees * cap
    feat = np.empty(total, dtype=np.int64)
    thr = np.zeros(total)
    left = np.empty(total, dtype=np.int64)
    right = np.empty(total, dtype=np.int64)
    value = np.zeros(total)
    sizes = np.zeros(n_trees, dtype=np.int64)
    for t in range(n_trees):
        sizes[t] = _build_tree(x, xt, y, order, seeds[t], max_depth, min_leaf, mtry,
                               bootstrap, feat, thr, left, right, value, t * cap, cap)
    return feat, thr, left, right, value, sizes


@njit(cache=True)
def _predict_forest(x, feat, thr, left, right, value, cap, n_trees):
    m = x.shape[0]
    out = np.zeros(m)
    for i in range(m):
        acc = 0.0
        for t in range(n_trees):
            base = t * cap
            k = 0
            while feat[base + k] >= 0:
                if x[i, feat[base + k]] <= thr[base + k]:
                    k = left[base + k]
                else:
                    k = right[base + k]
            acc += value[base + k]
        out[i] = acc / n_trees
    return out


@njit(cache=True)
def _tree_depths(feat, left, right, cap, n_trees):
    """Deepest root-to-leaf split count of every tree."""
    depths = np.zeros(n_trees, dtype=np.int64)
    for t in range(n_trees):
        base = t * cap
        node_depth = np.zeros(cap, dtype=np.int64)
        deepest = 0
        # Children always carry larger indices than their parent.
        for k in range(cap):
            if feat[base + k] >= 0:
                d = node_depth[k] + 1
                node_depth[left[base + k]] = d
                node_depth[right[base + k]] = d
                if d > deepest:
                    deepest = d
        depths[t] = deepest
    return depths


def node_capacity(n, max_depth):
    return int(min(2 ** (max_depth + 1) - 1, 2 * n - 1))


def grow_forest(x, y, seeds, max_depth, min_leaf, mtry, bootstrap):
    x = np.ascontiguousarray(x, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    xt = np.ascontiguousarray(x.T)
    order = np.ascontiguousarray(np.argsort(xt, axis=1, kind="stable"))
    cap = node_capacity(x.shape[0], max_depth)
    arrays = _grow_forest(x, xt, y, order, np.asarray(seeds, dtype=np.uint64),
                          int(max_depth), float(min_leaf), int(mtry), bool(bootstrap), cap)
    return arrays, cap


def predict_forest(x, arrays, cap):
    feat, thr, left, right, value, sizes = arrays
    x = np.ascontiguousarray(x, dtype=float)
    return _predict_forest(x, feat, thr, left, right, value, cap, sizes.shape[0])


def tree_depths(arrays, cap):
    feat, _, left, right, _, sizes = arrays
    return _tree_depths(feat, left, right, cap, sizes.shape[0])
