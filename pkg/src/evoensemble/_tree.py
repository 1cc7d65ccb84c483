"""Compiled tree growing shared by CART, Extra Trees and the boosted trees.

One split rule covers all three: a node's score is ``T(G)^2 / (H + lambda)``
with ``T`` the L1 soft-threshold, and a leaf's weight is
``-T(G) / (H + lambda)``. CART is the special case
``g = -y, h = 1, lambda = alpha = gamma = 0``, where the gain is half the
squared-error reduction and the leaf weight is mean(y).

The exact splitter grows level by level: one pass per feature over the open
samples in presorted order, so the threshold scan costs O(p * n) per level.
The random splitter grows depth first, which keeps small nodes cache-local.
Both return parallel node arrays (feature, threshold, left, right, value,
count); values <= threshold go left, a split needs positive gain, and
near-equal gains resolve to the earlier candidate.
"""

import numpy as np
from numba import njit

LEAF = -1
# gains closer than this (relative to the scores they are computed from) are
# ties and go to the earlier candidate: feature order, then threshold order
TIE = 1e-10


@njit(cache=True)
def _soft(G, alpha):
    if G > alpha:
        return G - alpha
    if G < -alpha:
        return G + alpha
    return 0.0


@njit(cache=True)
def _score(G, H, lam, alpha):
    t = _soft(G, alpha)
    den = H + lam
    if den <= 0.0:
        return 0.0
    return t * t / den


@njit(cache=True)
def _leaf_weight(G, H, lam, alpha):
    den = H + lam
    if den <= 0.0:
        return 0.0
    return 0.0 - _soft(G, alpha) / den


@njit(cache=True)
def _gain(GL, HL, G, H, parent, lam, alpha, gamma):
    """(gain, tie tolerance); gain is -1 when the split does not help."""
    sl = _score(GL, HL, lam, alpha)
    sr = _score(G - GL, H - HL, lam, alpha)
    scale = sl + sr + parent
    gain = 0.5 * (sl + sr - parent) - gamma
    # rounding noise must not count as gain
    if gain > 1e-12 * scale:
        return gain, TIE * scale
    return -1.0, 0.0


@njit(cache=True)
def _splittable(m, depth, max_depth, min_samples_split, min_samples_leaf):
    return depth < max_depth and m >= min_samples_split and m >= 2 * min_samples_leaf


@njit(cache=True)
def presort(X, rows, features):
    """Positions into ``rows`` sorted by each feature (stable), and the
    matching sorted values."""
    m = rows.shape[0]
    order = np.empty((features.shape[0], m), np.int64)
    svals = np.empty((features.shape[0], m), np.float64)
    vals = np.empty(m, np.float64)
    for fi in range(features.shape[0]):
        f = features[fi]
        for i in range(m):
            vals[i] = X[rows[i], f]
        o = np.argsort(vals, kind="mergesort")
        order[fi] = o
        for i in range(m):
            svals[fi, i] = vals[o[i]]
    return order, svals


@njit(cache=True)
def grow_exact(
    X, g, h, rows, features, max_depth, min_samples_split, min_samples_leaf, min_child_weight, lam, alpha, gamma, order, svals
):
    """Best split per node by exhaustive threshold scan; threshold is the
    largest left-hand value. ``order, svals`` come from ``presort(X, rows,
    features)`` and are overwritten."""
    m = rows.shape[0]
    nf = features.shape[0]
    cap = 2 * m + 1
    feat = np.full(cap, LEAF, np.int32)
    thr = np.zeros(cap, np.float64)
    left = np.full(cap, LEAF, np.int32)
    right = np.full(cap, LEAF, np.int32)
    value = np.zeros(cap, np.float64)
    count = np.zeros(cap, np.int32)
    nodeG = np.zeros(cap, np.float64)
    nodeH = np.zeros(cap, np.float64)
    slot = np.full(cap, -1, np.int64)  # node -> index among open nodes

    node_of = np.zeros(m, np.int64)
    act = np.arange(m)  # positions still inside open nodes
    n_act = m

    # per-position gradients keep the scan's memory access local
    gp = np.empty(m, np.float64)
    hp = np.empty(m, np.float64)
    G = 0.0
    H = 0.0
    for i in range(m):
        gp[i] = g[rows[i]]
        hp[i] = h[rows[i]]
        G += gp[i]
        H += hp[i]
    nodeG[0] = G
    nodeH[0] = H
    count[0] = m
    value[0] = _leaf_weight(G, H, lam, alpha)
    n_nodes = 1

    open_nodes = np.zeros(1, np.int64)
    n_open = 0
    if _splittable(m, 0, max_depth, min_samples_split, min_samples_leaf):
        slot[0] = 0
        n_open = 1
    depth = 0

    while n_open > 0:
        parent = np.empty(n_open, np.float64)
        for k in range(n_open):
            nd = open_nodes[k]
            parent[k] = _score(nodeG[nd], nodeH[nd], lam, alpha)
        bgain = np.zeros(n_open, np.float64)
        bfeat = np.full(n_open, -1, np.int64)
        bthr = np.zeros(n_open, np.float64)
        GL = np.zeros(n_open, np.float64)
        HL = np.zeros(n_open, np.float64)
        nl = np.zeros(n_open, np.int64)
        last = np.empty(n_open, np.float64)

        for fi in range(nf):
            f = features[fi]
            GL[:] = 0.0
            HL[:] = 0.0
            nl[:] = 0
            for j in range(n_act):
                pos = order[fi, j]
                s = slot[node_of[pos]]
                v = svals[fi, j]
                if nl[s] > 0 and v != last[s]:
                    nd = open_nodes[s]
                    HR = nodeH[nd] - HL[s]
                    if (
                        nl[s] >= min_samples_leaf
                        and count[nd] - nl[s] >= min_samples_leaf
                        and HL[s] >= min_child_weight
                        and HR >= min_child_weight
                    ):
                        gain, tie = _gain(GL[s], HL[s], nodeG[nd], nodeH[nd], parent[s], lam, alpha, gamma)
                        if gain > 0.0 and (bfeat[s] < 0 or gain > bgain[s] + tie):
                            bgain[s] = gain
                            bfeat[s] = f
                            bthr[s] = last[s]
                GL[s] += gp[pos]
                HL[s] += hp[pos]
                nl[s] += 1
                last[s] = v

        for k in range(n_open):
            if bfeat[k] < 0:
                continue
            nd = open_nodes[k]
            feat[nd] = bfeat[k]
            thr[nd] = bthr[k]
            left[nd] = n_nodes
            right[nd] = n_nodes + 1
            n_nodes += 2

        # route samples of split nodes to their children
        for j in range(n_act):
            pos = act[j]
            nd = node_of[pos]
            if bfeat[slot[nd]] < 0:
                continue
            r = rows[pos]
            c = left[nd] if X[r, feat[nd]] <= thr[nd] else right[nd]
            node_of[pos] = c
            nodeG[c] += gp[pos]
            nodeH[c] += hp[pos]
            count[c] += 1

        for k in range(n_open):
            slot[open_nodes[k]] = -1
        next_nodes = np.empty(2 * n_open, np.int64)
        n_next = 0
        for k in range(n_open):
            if bfeat[k] < 0:
                continue
            nd = open_nodes[k]
            for c in (left[nd], right[nd]):
                value[c] = _leaf_weight(nodeG[c], nodeH[c], lam, alpha)
                if _splittable(count[c], depth + 1, max_depth, min_samples_split, min_samples_leaf):
                    next_nodes[n_next] = c
                    slot[c] = n_next
                    n_next += 1
        open_nodes = next_nodes[:n_next].copy()
        n_open = n_next

        # drop samples that now sit in closed leaves
        w = 0
        for j in range(n_act):
            pos = act[j]
            if slot[node_of[pos]] >= 0:
                act[w] = pos
                w += 1
        for fi in range(nf):
            w2 = 0
            for j in range(n_act):
                pos = order[fi, j]
                if slot[node_of[pos]] >= 0:
                    order[fi, w2] = pos
                    svals[fi, w2] = svals[fi, j]
                    w2 += 1
        n_act = w
        depth += 1

    return (
        feat[:n_nodes].copy(),
        thr[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
        count[:n_nodes].copy(),
    )


@njit(cache=True)
def grow_random(
    X, g, h, rows, features, max_depth, min_samples_split, min_samples_leaf, min_child_weight, lam, alpha, gamma, seed
):
    """One uniform threshold in [min, max) per non-constant feature per node;
    the best of those candidates is kept."""
    np.random.seed(seed)
    n = rows.shape[0]
    cap = 2 * n + 1
    feat = np.full(cap, LEAF, np.int32)
    thr = np.zeros(cap, np.float64)
    left = np.full(cap, LEAF, np.int32)
    right = np.full(cap, LEAF, np.int32)
    value = np.zeros(cap, np.float64)
    count = np.zeros(cap, np.int32)

    samples = rows.copy()
    stack_node = np.empty(cap, np.int64)
    stack_start = np.empty(cap, np.int64)
    stack_end = np.empty(cap, np.int64)
    stack_depth = np.empty(cap, np.int64)
    stack_node[0] = 0
    stack_start[0] = 0
    stack_end[0] = n
    stack_depth[0] = 0
    sp = 1
    n_nodes = 1
    nf = features.shape[0]

    while sp > 0:
        sp -= 1
        node = stack_node[sp]
        start = stack_start[sp]
        end = stack_end[sp]
        depth = stack_depth[sp]
        m = end - start

        G = 0.0
        H = 0.0
        for i in range(start, end):
            G += g[samples[i]]
            H += h[samples[i]]
        value[node] = _leaf_weight(G, H, lam, alpha)
        count[node] = m
        if not _splittable(m, depth, max_depth, min_samples_split, min_samples_leaf):
            continue

        parent = _score(G, H, lam, alpha)
        best_gain = 0.0
        best_feat = -1
        best_thr = 0.0
        for fi in range(nf):
            f = features[fi]
            lo = np.inf
            hi = -np.inf
            for i in range(start, end):
                v = X[samples[i], f]
                if v < lo:
                    lo = v
                if v > hi:
                    hi = v
            if not hi > lo:
                continue
            t = lo + np.random.random() * (hi - lo)
            if not t < hi:
                t = lo
            GL = 0.0
            HL = 0.0
            nl = 0
            for i in range(start, end):
                s = samples[i]
                if X[s, f] <= t:
                    GL += g[s]
                    HL += h[s]
                    nl += 1
            if nl < min_samples_leaf or m - nl < min_samples_leaf:
                continue
            if HL < min_child_weight or H - HL < min_child_weight:
                continue
            gain, tie = _gain(GL, HL, G, H, parent, lam, alpha, gamma)
            if gain > 0.0 and (best_feat < 0 or gain > best_gain + tie):
                best_gain = gain
                best_feat = f
                best_thr = t

        if best_feat < 0:
            continue

        # partition samples[start:end] so that x <= thr comes first
        i = start
        j = end - 1
        while i <= j:
            if X[samples[i], best_feat] <= best_thr:
                i += 1
            else:
                tmp = samples[i]
                samples[i] = samples[j]
                samples[j] = tmp
                j -= 1
        mid = i

        feat[node] = best_feat
        thr[node] = best_thr
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        stack_node[sp] = rc
        stack_start[sp] = mid
        stack_end[sp] = end
        stack_depth[sp] = depth + 1
        sp += 1
        stack_node[sp] = lc
        stack_start[sp] = start
        stack_end[sp] = mid
        stack_depth[sp] = depth + 1
        sp += 1

    return (
        feat[:n_nodes].copy(),
        thr[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
        count[:n_nodes].copy(),
    )


@njit(cache=True)
def apply(X, feat, thr, left, right, value):
    out = np.empty(X.shape[0], np.float64)
    for r in range(X.shape[0]):
        node = 0
        while feat[node] != LEAF:
            if X[r, feat[node]] <= thr[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = value[node]
    return out
