"""Pure-Python tree kernels; reference semantics for the compiled module."""

from __future__ import annotations

import numpy as np

NEG_INF = -np.inf


class _Uniforms:
    __slots__ = ("u", "pos")

    def __init__(self, u: np.ndarray) -> None:
        self.u = u
        self.pos = 0

    def next(self) -> float:
        v = self.u[self.pos]
        self.pos += 1
        if self.pos == self.u.shape[0]:
            self.pos = 0
        return float(v)


def _exact_split(xs: np.ndarray, ts: np.ndarray, total: float, min_child: int):
    """Best cut of one sorted feature column; returns (gain, left_count, threshold)."""
    m = xs.shape[0]
    csum = np.cumsum(ts)
    nl = np.arange(1, m, dtype=np.float64)
    nr = m - nl
    sl = csum[:-1]
    sr = total - sl
    gain = sl * sl / nl + sr * sr / nr - total * total / m
    ok = (xs[:-1] < xs[1:]) & (nl >= min_child) & (nr >= min_child)
    if not ok.any():
        return NEG_INF, 0, 0.0
    gain = np.where(ok, gain, NEG_INF)
    i = int(np.argmax(gain))
    thr = (xs[i] + xs[i + 1]) * 0.5
    if thr == xs[i + 1]:
        thr = xs[i]
    return float(gain[i]), i + 1, float(thr)


def _random_split(xs, ts, total, min_child, u: _Uniforms):
    m = xs.shape[0]
    lo, hi = xs[0], xs[m - 1]
    if not lo < hi:
        return NEG_INF, 0, 0.0
    thr = lo + u.next() * (hi - lo)
    if thr >= hi:
        thr = lo
    k = int(np.searchsorted(xs, thr, side="right"))
    if k < min_child or m - k < min_child:
        return NEG_INF, 0, 0.0
    sl = float(np.cumsum(ts)[k - 1])
    sr = total - sl
    gain = sl * sl / k + sr * sr / (m - k) - total * total / m
    return gain, k, float(thr)


def _node_split(X, target, order, start, end, min_child, mtry, random_thresholds, u):
    """Best split of a node: (gain, feature, left_count, threshold) or feature -1."""
    p = X.shape[1]
    m = end - start
    first = target[order[0, start:end]]
    if m < 2 * min_child or first.min() == first.max():
        return NEG_INF, -1, 0, 0.0
    total = float(np.cumsum(first)[-1])
    best = (NEG_INF, -1, 0, 0.0)
    perm = list(range(p))
    for i in range(p):
        if mtry < p:
            j = i + int(u.next() * (p - i))
            if j >= p:
                j = p - 1
            perm[i], perm[j] = perm[j], perm[i]
        f = perm[i]
        rows = order[f, start:end]
        xs = X[rows, f]
        ts = target[rows]
        if random_thresholds:
            gain, k, thr = _random_split(xs, ts, total, min_child, u)
        else:
            gain, k, thr = _exact_split(xs, ts, total, min_child)
        if k > 0 and gain > best[0]:
            best = (gain, f, k, thr)
        if i + 1 >= mtry and best[1] >= 0:
            break
    return best


def grow_tree(
    X: np.ndarray,
    target: np.ndarray,
    sorted_idx: np.ndarray,
    min_child: int,
    max_leaves: int,
    max_depth: int,
    mtry: int,
    random_thresholds: bool,
    uniforms: np.ndarray,
    sorted_vals: np.ndarray | None = None,
):
    """Grow a regression tree best-first on ``target`` (variance reduction).

    ``sorted_idx[f]`` is a stable argsort of column ``f``; ``sorted_vals`` may
    carry the matching sorted column values (unused here). Returns the node
    arrays ``(feature, threshold, left, right)`` (feature -1 marks a leaf)
    and the leaf id of every training row.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    target = np.ascontiguousarray(target, dtype=np.float64)
    n, p = X.shape
    order = np.array(sorted_idx, dtype=np.int32, copy=True)
    if mtry <= 0 or mtry > p:
        mtry = p
    u = _Uniforms(np.ascontiguousarray(uniforms, dtype=np.float64))
    cap = 2 * n if max_leaves <= 0 else min(2 * n, 2 * max_leaves)
    feature = np.full(cap, -1, dtype=np.int32)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int32)
    right = np.full(cap, -1, dtype=np.int32)
    start = [0]
    end = [n]
    depth = [0]
    cand = []  # (gain, feature, left_count, threshold) per node

    def consider(node):
        if max_depth > 0 and depth[node] >= max_depth:
            cand.append((NEG_INF, -1, 0, 0.0))
        else:
            cand.append(_node_split(X, target, order, start[node], end[node], min_child, mtry, random_thresholds, u))

    consider(0)
    n_nodes = 1
    leaves = 1
    goes_left = np.zeros(n, dtype=bool)
    while max_leaves <= 0 or leaves < max_leaves:
        best_node, best_gain = -1, NEG_INF
        for node in range(n_nodes):
            if cand[node][1] >= 0 and feature[node] < 0 and (best_node < 0 or cand[node][0] > best_gain):
                best_node, best_gain = node, cand[node][0]
        if best_node < 0:
            break
        _, f, k, thr = cand[best_node]
        s, e = start[best_node], end[best_node]
        seg = order[:, s:e]
        goes_left[seg[0]] = X[seg[0], f] <= thr
        mask = goes_left[seg]
        perm = np.argsort(~mask, axis=1, kind="stable")
        order[:, s:e] = np.take_along_axis(seg, perm, axis=1)
        feature[best_node] = f
        threshold[best_node] = thr
        lid, rid = n_nodes, n_nodes + 1
        left[best_node], right[best_node] = lid, rid
        start += [s, s + k]
        end += [s + k, e]
        depth += [depth[best_node] + 1] * 2
        n_nodes += 2
        leaves += 1
        consider(lid)
        consider(rid)

    leaf_of_row = np.empty(n, dtype=np.int32)
    for node in range(n_nodes):
        if feature[node] < 0:
            leaf_of_row[order[0, start[node]:end[node]]] = node
    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], leaf_of_row


def apply_tree(X, feature, threshold, left, right) -> np.ndarray:
    """Leaf id reached by every row of ``X``."""
    X = np.asarray(X, dtype=np.float64)
    node = np.zeros(X.shape[0], dtype=np.int32)
    active = feature[node] >= 0
    while active.any():
        idx = np.flatnonzero(active)
        nd = node[idx]
        go_left = X[idx, feature[nd]] <= threshold[nd]
        node[idx] = np.where(go_left, left[nd], right[nd])
        active = feature[node] >= 0
    return node
