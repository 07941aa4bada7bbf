# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled tree kernels. Semantics mirror ``_kernels_py`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


cdef struct Split:
    double gain
    int feature
    int left_count
    double threshold


cdef struct UState:
    const double* u
    Py_ssize_t n
    Py_ssize_t pos


cdef inline double next_u(UState* s) noexcept nogil:
    cdef double v = s.u[s.pos]
    s.pos += 1
    if s.pos == s.n:
        s.pos = 0
    return v


cdef Split node_split(
    double[:, ::1] vals, const double[::1] target, int[:, ::1] order,
    Py_ssize_t start, Py_ssize_t end, int min_child, int mtry,
    bint random_thresholds, UState* us, int[::1] perm,
) noexcept nogil:
    cdef Split best
    best.gain = -INFINITY
    best.feature = -1
    best.left_count = 0
    best.threshold = 0.0
    cdef Py_ssize_t p = vals.shape[0]
    cdef Py_ssize_t m = end - start
    cdef Py_ssize_t i, j, r, k, f, tmp
    cdef double total, sl, sr, g, tmin, tmax, t, lo, hi, thr, x0, x1
    cdef double nl, nr, base, fm = <double>m
    if m < 2 * min_child:
        return best
    r = order[0, start]
    tmin = target[r]
    tmax = tmin
    total = 0.0
    for j in range(start, end):
        t = target[order[0, j]]
        total = total + t
        if t < tmin:
            tmin = t
        if t > tmax:
            tmax = t
    if tmin == tmax:
        return best
    base = total * total / fm
    for i in range(p):
        perm[i] = i
    for i in range(p):
        if mtry < p:
            j = i + <Py_ssize_t>(next_u(us) * (p - i))
            if j >= p:
                j = p - 1
            tmp = perm[i]
            perm[i] = perm[j]
            perm[j] = tmp
        f = perm[i]
        if random_thresholds:
            lo = vals[f, start]
            hi = vals[f, end - 1]
            if lo < hi:
                thr = lo + next_u(us) * (hi - lo)
                if thr >= hi:
                    thr = lo
                k = 0
                sl = 0.0
                for j in range(start, end):
                    if vals[f, j] > thr:
                        break
                    sl = sl + target[order[f, j]]
                    k += 1
                if k >= min_child and m - k >= min_child:
                    sr = total - sl
                    g = sl * sl / <double>k + sr * sr / <double>(m - k) - base
                    if g > best.gain:
                        best.gain = g
                        best.feature = <int>f
                        best.left_count = <int>k
                        best.threshold = thr
        else:
            sl = 0.0
            for j in range(start, end - 1):
                sl = sl + target[order[f, j]]
                k = j - start + 1
                if k < min_child or m - k < min_child:
                    continue
                x0 = vals[f, j]
                x1 = vals[f, j + 1]
                if not x0 < x1:
                    continue
                nl = <double>k
                nr = fm - nl
                sr = total - sl
                g = sl * sl / nl + sr * sr / nr - base
                if g > best.gain:
                    best.gain = g
                    best.feature = <int>f
                    best.left_count = <int>k
                    thr = (x0 + x1) * 0.5
                    if thr == x1:
                        thr = x0
                    best.threshold = thr
        if i + 1 >= mtry and best.feature >= 0:
            break
    return best


def grow_tree(
    X, target, sorted_idx, int min_child, int max_leaves, int max_depth,
    int mtry, bint random_thresholds, uniforms, sorted_vals=None,
):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] tv = np.ascontiguousarray(target, dtype=np.float64)
    order_arr = np.array(sorted_idx, dtype=np.int32, copy=True, order="C")
    cdef int[:, ::1] order = order_arr
    if sorted_vals is None:
        vals_arr = np.take_along_axis(np.asarray(X, dtype=np.float64).T, order_arr, axis=1)
    else:
        vals_arr = np.array(sorted_vals, dtype=np.float64, copy=True, order="C")
    vals_arr = np.ascontiguousarray(vals_arr)
    cdef double[:, ::1] vals = vals_arr
    cdef double[::1] vbuf = np.zeros(max(X.shape[0], 1), dtype=np.float64)
    u_arr = np.ascontiguousarray(uniforms, dtype=np.float64)
    cdef const double[::1] uv = u_arr
    cdef Py_ssize_t n = Xv.shape[0]
    cdef Py_ssize_t p = Xv.shape[1]
    if mtry <= 0 or mtry > p:
        mtry = <int>p
    cdef Py_ssize_t cap = 2 * n if max_leaves <= 0 else min(2 * n, 2 * max_leaves)
    feature_arr = np.full(cap, -1, dtype=np.int32)
    threshold_arr = np.zeros(cap, dtype=np.float64)
    left_arr = np.full(cap, -1, dtype=np.int32)
    right_arr = np.full(cap, -1, dtype=np.int32)
    cdef int[::1] feature = feature_arr
    cdef double[::1] threshold = threshold_arr
    cdef int[::1] left = left_arr
    cdef int[::1] right = right_arr
    cdef Py_ssize_t[::1] nstart = np.zeros(cap, dtype=np.intp)
    cdef Py_ssize_t[::1] nend = np.zeros(cap, dtype=np.intp)
    cdef int[::1] ndepth = np.zeros(cap, dtype=np.int32)
    cand_gain_arr = np.zeros(cap, dtype=np.float64)
    cdef double[::1] cgain = cand_gain_arr
    cdef int[::1] cfeat = np.full(cap, -1, dtype=np.int32)
    cdef int[::1] ccount = np.zeros(cap, dtype=np.int32)
    cdef double[::1] cthr = np.zeros(cap, dtype=np.float64)
    cdef int[::1] perm = np.zeros(max(p, 1), dtype=np.int32)
    cdef int[::1] buf = np.zeros(max(n, 1), dtype=np.int32)
    cdef unsigned char[::1] goes_left = np.zeros(max(n, 1), dtype=np.uint8)
    leaf_arr = np.empty(n, dtype=np.int32)
    cdef int[::1] leaf_of_row = leaf_arr
    cdef UState us
    us.u = &uv[0]
    us.n = uv.shape[0]
    us.pos = 0
    cdef Split sp
    cdef Py_ssize_t n_nodes = 1, leaves = 1, node, best_node, s, e, k, f, j, a, b, r, lid, rid, q
    cdef double best_gain, thr

    nstart[0] = 0
    nend[0] = n
    ndepth[0] = 0
    with nogil:
        if max_depth > 0 and ndepth[0] >= max_depth:
            cfeat[0] = -1
        else:
            sp = node_split(vals, tv, order, 0, n, min_child, mtry, random_thresholds, &us, perm)
            cgain[0] = sp.gain
            cfeat[0] = sp.feature
            ccount[0] = sp.left_count
            cthr[0] = sp.threshold
        while max_leaves <= 0 or leaves < max_leaves:
            best_node = -1
            best_gain = -INFINITY
            for node in range(n_nodes):
                if cfeat[node] >= 0 and feature[node] < 0 and (best_node < 0 or cgain[node] > best_gain):
                    best_node = node
                    best_gain = cgain[node]
            if best_node < 0:
                break
            f = cfeat[best_node]
            k = ccount[best_node]
            thr = cthr[best_node]
            s = nstart[best_node]
            e = nend[best_node]
            for j in range(s, e):
                r = order[0, j]
                goes_left[r] = 1 if Xv[r, f] <= thr else 0
            for q in range(p):
                a = s
                b = 0
                for j in range(s, e):
                    r = order[q, j]
                    if goes_left[r]:
                        order[q, a] = <int>r
                        vals[q, a] = vals[q, j]
                        a += 1
                    else:
                        buf[b] = <int>r
                        vbuf[b] = vals[q, j]
                        b += 1
                for j in range(b):
                    order[q, a + j] = buf[j]
                    vals[q, a + j] = vbuf[j]
            feature[best_node] = <int>f
            threshold[best_node] = thr
            lid = n_nodes
            rid = n_nodes + 1
            left[best_node] = <int>lid
            right[best_node] = <int>rid
            nstart[lid] = s
            nend[lid] = s + k
            nstart[rid] = s + k
            nend[rid] = e
            ndepth[lid] = ndepth[best_node] + 1
            ndepth[rid] = ndepth[best_node] + 1
            n_nodes += 2
            leaves += 1
            for node in range(lid, rid + 1):
                if max_depth > 0 and ndepth[node] >= max_depth:
                    cfeat[node] = -1
                else:
                    sp = node_split(vals, tv, order, nstart[node], nend[node], min_child, mtry,
                                    random_thresholds, &us, perm)
                    cgain[node] = sp.gain
                    cfeat[node] = sp.feature
                    ccount[node] = sp.left_count
                    cthr[node] = sp.threshold
        for node in range(n_nodes):
            if feature[node] < 0:
                for j in range(nstart[node], nend[node]):
                    leaf_of_row[order[0, j]] = <int>node
    return (feature_arr[:n_nodes], threshold_arr[:n_nodes], left_arr[:n_nodes],
            right_arr[:n_nodes], leaf_arr)


def apply_tree(X, feature, threshold, left, right):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const int[::1] fv = np.ascontiguousarray(feature, dtype=np.int32)
    cdef const double[::1] tv = np.ascontiguousarray(threshold, dtype=np.float64)
    cdef const int[::1] lv = np.ascontiguousarray(left, dtype=np.int32)
    cdef const int[::1] rv = np.ascontiguousarray(right, dtype=np.int32)
    out_arr = np.zeros(Xv.shape[0], dtype=np.int32)
    cdef int[::1] out = out_arr
    cdef Py_ssize_t i
    cdef int node
    with nogil:
        for i in range(Xv.shape[0]):
            node = 0
            while fv[node] >= 0:
                if Xv[i, fv[node]] <= tv[node]:
                    node = lv[node]
                else:
                    node = rv[node]
            out[i] = node
    return out_arr
