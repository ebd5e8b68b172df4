"""Compiled inner loops for tree growth and prediction.

Roles are bit flags per subsample member: ``EST`` rows count toward leaf
sizes and regularity, ``SPLIT`` rows feed the split criterion.  The kernels
only ever receive responses for SPLIT rows (the caller zeroes the rest), so
estimation responses cannot influence split placement.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

MODE_REGRESSION = 0
MODE_CAUSAL = 1
MODE_PROPENSITY = 2
MODE_ADAPTIVE = 3
MODE_TRIVIAL = 4

EST = 1
SPLIT = 2

# relative slack below which two split scores count as tied
TIE_TOL = 1e-12


@njit(cache=True, nogil=True)
def min_side_count(alpha, m):
    c = math.ceil(alpha * m - 1e-9)
    return c if c > 1 else 1


@njit(cache=True, nogil=True)
def scan_sorted(x, role, y, w, mode, k, min_side):
    """Best threshold over members already sorted by ``x``.

    Returns ``(found, threshold, score)``; larger scores are better.
    Candidates are midpoints between consecutive distinct values.
    """
    m = x.shape[0]
    e_tot = 0
    e_c0 = 0
    e_c1 = 0
    p_tot = 0
    p_c0 = 0
    p_c1 = 0
    p_s0 = 0.0
    p_s1 = 0.0
    p_s = 0.0
    for i in range(m):
        if role[i] & EST:
            e_tot += 1
            if w[i] == 1:
                e_c1 += 1
            else:
                e_c0 += 1
        if role[i] & SPLIT:
            p_tot += 1
            p_s += y[i]
            if w[i] == 1:
                p_c1 += 1
                p_s1 += y[i]
            else:
                p_c0 += 1
                p_s0 += y[i]

    le_tot = 0
    le_c0 = 0
    le_c1 = 0
    lp_tot = 0
    lp_c0 = 0
    lp_c1 = 0
    lp_s0 = 0.0
    lp_s1 = 0.0
    lp_s = 0.0

    found = False
    best_thr = 0.0
    best = -np.inf
    need = k if k > min_side else min_side
    for p in range(m - 1):
        if role[p] & EST:
            le_tot += 1
            if w[p] == 1:
                le_c1 += 1
            else:
                le_c0 += 1
        if role[p] & SPLIT:
            lp_tot += 1
            lp_s += y[p]
            if w[p] == 1:
                lp_c1 += 1
                lp_s1 += y[p]
            else:
                lp_c0 += 1
                lp_s0 += y[p]
        if not (x[p] < x[p + 1]):
            continue
        re_tot = e_tot - le_tot
        if mode == MODE_REGRESSION:
            if le_tot < need or re_tot < need:
                continue
            rp_tot = p_tot - lp_tot
            score = 0.0
            if lp_tot > 0:
                score += lp_s * lp_s / lp_tot
            if rp_tot > 0:
                rs = p_s - lp_s
                score += rs * rs / rp_tot
        else:
            if le_tot < min_side or re_tot < min_side:
                continue
            if le_c0 < k or le_c1 < k or e_c0 - le_c0 < k or e_c1 - le_c1 < k:
                continue
            if mode == MODE_PROPENSITY:
                nl = le_tot
                nr = re_tot
                pl = le_c1 / nl
                pr = (e_c1 - le_c1) / nr
                score = -(nl * 2.0 * pl * (1.0 - pl) + nr * 2.0 * pr * (1.0 - pr)) / e_tot
            else:
                rp_c0 = p_c0 - lp_c0
                rp_c1 = p_c1 - lp_c1
                if lp_c0 < k or lp_c1 < k or rp_c0 < k or rp_c1 < k:
                    continue
                tau_l = lp_s1 / lp_c1 - lp_s0 / lp_c0
                tau_r = (p_s1 - lp_s1) / rp_c1 - (p_s0 - lp_s0) / rp_c0
                nl = lp_c0 + lp_c1
                nr = rp_c0 + rp_c1
                diff = tau_l - tau_r
                score = nl * nr * diff * diff / ((nl + nr) * (nl + nr))
        if not found or score > best + TIE_TOL * (1.0 + abs(best)):
            found = True
            best = score
            t = x[p] + 0.5 * (x[p + 1] - x[p])
            if t >= x[p + 1]:
                t = x[p]
            best_thr = t
    return found, best_thr, best


@njit(cache=True, nogil=True)
def _scan_feature(Xn, j, role, y, w, mode, k, min_side):
    col = Xn[:, j].copy()
    order = np.argsort(col, kind="mergesort")
    return scan_sorted(col[order], role[order], y[order], w[order], mode, k, min_side)


@njit(cache=True, nogil=True)
def node_can_split(role, w, mode, k):
    e_tot = 0
    e_c1 = 0
    p_c1 = 0
    p_tot = 0
    for i in range(role.shape[0]):
        if role[i] & EST:
            e_tot += 1
            if w[i] == 1:
                e_c1 += 1
        if role[i] & SPLIT:
            p_tot += 1
            if w[i] == 1:
                p_c1 += 1
    if mode == MODE_TRIVIAL:
        return False, e_tot
    if mode == MODE_REGRESSION:
        return e_tot >= 2 * k and e_tot >= 2, e_tot
    if e_c1 < 2 * k or e_tot - e_c1 < 2 * k:
        return False, e_tot
    if mode == MODE_CAUSAL or mode == MODE_ADAPTIVE:
        if p_c1 < 2 * k or p_tot - p_c1 < 2 * k:
            return False, e_tot
    return True, e_tot


@njit(cache=True, nogil=True)
def best_split(Xn, role, y, w, mode, k, alpha, pi, u_coin, u_feat):
    """Pick ``(feature, threshold)`` for one node, or feature -1 for a leaf.

    With probability ``pi`` the feature is drawn uniformly and only its best
    threshold is considered; otherwise (or if that feature has no admissible
    threshold) the search is greedy over all features in index order.
    """
    ok, e_tot = node_can_split(role, w, mode, k)
    if not ok:
        return -1, 0.0, 0.0
    min_side = min_side_count(alpha, e_tot)
    d = Xn.shape[1]
    if u_coin < pi:
        j = int(u_feat * d)
        if j >= d:
            j = d - 1
        found, thr, score = _scan_feature(Xn, j, role, y, w, mode, k, min_side)
        if found:
            return j, thr, score
    best_j = -1
    best_thr = 0.0
    best = -np.inf
    for j in range(d):
        found, thr, score = _scan_feature(Xn, j, role, y, w, mode, k, min_side)
        if found and (best_j < 0 or score > best + TIE_TOL * (1.0 + abs(best))):
            best_j = j
            best_thr = thr
            best = score
    return best_j, best_thr, best


@njit(cache=True, nogil=True)
def grow(Xm, role, y, w, mode, k, alpha, pi, unif, feat, thr, left, right, leaf_of):
    """Recursive partitioning over the members ``Xm`` (depth first, left first).

    Node ``t`` consumes uniforms ``unif[2t]`` and ``unif[2t + 1]``.  Fills the
    node arrays and ``leaf_of`` (leaf id per member); returns the node count.
    """
    m = Xm.shape[0]
    pos = np.arange(m)
    tmp = np.empty(m, dtype=np.int64)
    stack_node = np.empty(m + 1, dtype=np.int64)
    stack_lo = np.empty(m + 1, dtype=np.int64)
    stack_hi = np.empty(m + 1, dtype=np.int64)
    top = 0
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = m
    top = 1
    n_nodes = 1
    while top > 0:
        top -= 1
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        seg = pos[lo:hi]
        Xn = Xm[seg]
        j, t, _ = best_split(Xn, role[seg], y[seg], w[seg], mode, k, alpha, pi,
                             unif[2 * node], unif[2 * node + 1])
        if j < 0:
            feat[node] = -1
            thr[node] = 0.0
            left[node] = -1
            right[node] = -1
            for q in range(lo, hi):
                leaf_of[pos[q]] = node
            continue
        nl = 0
        nr = 0
        for q in range(lo, hi):
            p = pos[q]
            if Xm[p, j] <= t:
                pos[lo + nl] = p
                nl += 1
            else:
                tmp[nr] = p
                nr += 1
        for q in range(nr):
            pos[lo + nl + q] = tmp[q]
        feat[node] = j
        thr[node] = t
        lnode = n_nodes
        rnode = n_nodes + 1
        n_nodes += 2
        left[node] = lnode
        right[node] = rnode
        # push right first so the left subtree is expanded first
        stack_node[top] = rnode
        stack_lo[top] = lo + nl
        stack_hi[top] = hi
        top += 1
        stack_node[top] = lnode
        stack_lo[top] = lo
        stack_hi[top] = lo + nl
        top += 1
    return n_nodes


@njit(cache=True, nogil=True)
def apply_tree(feat, thr, left, right, Xq, out):
    for q in range(Xq.shape[0]):
        node = 0
        while feat[node] >= 0:
            if Xq[q, feat[node]] <= thr[node]:
                node = left[node]
            else:
                node = right[node]
        out[q] = node


@njit(cache=True, nogil=True)
def predict_packed(feat, thr, left, right, value, offsets, Xq, out):
    """``out[b, q]`` = prediction of tree ``b`` at point ``q``."""
    n_trees = offsets.shape[0] - 1
    for b in range(n_trees):
        base = offsets[b]
        for q in range(Xq.shape[0]):
            node = 0
            while feat[base + node] >= 0:
                if Xq[q, feat[base + node]] <= thr[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            out[b, q] = value[base + node]
