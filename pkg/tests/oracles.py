"""Independent slow implementations used as test oracles.

Each one follows the textbook definition with plain Python loops and shares
no code with the package.
"""

from __future__ import annotations

import math

import numpy as np


def lof_brute(P: np.ndarray, k: int):
    """(lrd, lof) by explicit all-pairs loops. Ties at the k-th distance are
    all kept; zero reach-sum gives infinite density; inf/inf ratios count 1
    and finite/inf ratios count 0."""
    n = len(P)
    D = [[math.sqrt(sum((P[i][c] - P[j][c]) ** 2 for c in range(P.shape[1]))) for j in range(n)] for i in range(n)]
    kdist, nbrs = [], []
    for i in range(n):
        others = sorted(D[i][j] for j in range(n) if j != i)
        kd = others[k - 1]
        kdist.append(kd)
        nbrs.append([j for j in range(n) if j != i and D[i][j] <= kd])
    lrd = []
    for i in range(n):
        s = sum(max(kdist[o], D[i][o]) for o in nbrs[i])
        lrd.append(math.inf if s == 0 else len(nbrs[i]) / s)
    lof = []
    for i in range(n):
        terms = []
        for o in nbrs[i]:
            if math.isinf(lrd[i]):
                terms.append(1.0 if math.isinf(lrd[o]) else 0.0)
            else:
                terms.append(lrd[o] / lrd[i])
        lof.append(sum(terms) / len(terms))
    return np.array(lrd), np.array(lof), nbrs, np.array(kdist)


def metrics_loop(t, e) -> dict:
    n = len(t)
    se = ae = sle = sm = 0.0
    for a, b in zip(t, e):
        se += (a - b) ** 2
        ae += abs(a - b)
        sle += (math.log(1 + max(a, 0.0)) - math.log(1 + max(b, 0.0))) ** 2
        den = (abs(a) + abs(b)) / 2
        sm += abs(a - b) / den if den > 0 else 0.0
    mt = sum(t) / n
    me = sum(e) / n
    err = [a - b for a, b in zip(t, e)]
    merr = sum(err) / n
    var_t = sum((a - mt) ** 2 for a in t) / n
    var_err = sum((x - merr) ** 2 for x in err) / n
    cov = sum((a - mt) * (b - me) for a, b in zip(t, e))
    st = math.sqrt(sum((a - mt) ** 2 for a in t))
    se_ = math.sqrt(sum((b - me) ** 2 for b in e))
    return {
        "mse": se / n,
        "rmse": math.sqrt(se / n),
        "mae": ae / n,
        "msle": sle / n,
        "smape": 100 * sm / n,
        "evs": 1 - var_err / var_t,
        "r_value": cov / (st * se_),
    }


def normal_equations(X, y):
    """Intercept and slopes from (A^T A) b = A^T y solved by Gaussian elimination."""
    A = [[1.0, *row] for row in np.asarray(X, dtype=float).tolist()]
    p = len(A[0])
    M = [[sum(A[r][i] * A[r][j] for r in range(len(A))) for j in range(p)] for i in range(p)]
    v = [sum(A[r][i] * y[r] for r in range(len(A))) for i in range(p)]
    for c in range(p):
        piv = max(range(c, p), key=lambda r: abs(M[r][c]))
        M[c], M[piv] = M[piv], M[c]
        v[c], v[piv] = v[piv], v[c]
        for r in range(p):
            if r != c:
                f = M[r][c] / M[c][c]
                M[r] = [a - f * b for a, b in zip(M[r], M[c])]
                v[r] -= f * v[c]
    b = [v[i] / M[i][i] for i in range(p)]
    return b[0], np.array(b[1:])


def knn_brute(Xtr, ytr, Xq, K):
    """Sort-and-average on z-scored columns (training statistics); ties by row order."""
    Xtr = np.asarray(Xtr, float)
    mu = Xtr.mean(0)
    sd = Xtr.std(0)
    sd[sd == 0] = 1
    Z = (Xtr - mu) / sd
    out = []
    for q in np.asarray(Xq, float):
        zq = (q - mu) / sd
        d = sorted((math.sqrt(sum((a - b) ** 2 for a, b in zip(Z[i], zq))), i) for i in range(len(Z)))
        out.append(sum(ytr[i] for _, i in d[:K]) / K)
    return np.array(out)


def best_split(x, y):
    """Exhaustive squared-error split on one feature: (threshold, left mean, right mean)."""
    best = None
    xs = sorted(set(x))
    for t in xs[:-1]:
        L = [b for a, b in zip(x, y) if a <= t]
        R = [b for a, b in zip(x, y) if a > t]
        sse = sum((b - sum(L) / len(L)) ** 2 for b in L) + sum((b - sum(R) / len(R)) ** 2 for b in R)
        if best is None or sse < best[0]:
            best = (sse, t, sum(L) / len(L), sum(R) / len(R))
    return best[1:]


def gbt_stumps(x, y, rounds, eta, lam, base):
    """Boosted depth-1 trees on one feature with g = pred - y, h = 1; each round
    picks the split maximizing G_L^2/(H_L+lam) + G_R^2/(H_R+lam) and sets leaf
    weights -G/(H+lam). Returns per-round (threshold, w_left, w_right)."""
    pred = [base] * len(y)
    out = []
    for _ in range(rounds):
        g = [p - t for p, t in zip(pred, y)]
        best = None
        for thr in sorted(set(x))[:-1]:
            GL = sum(gi for gi, xi in zip(g, x) if xi <= thr)
            HL = sum(1 for xi in x if xi <= thr)
            GR = sum(g) - GL
            HR = len(x) - HL
            s = GL * GL / (HL + lam) + GR * GR / (HR + lam)
            if best is None or s > best[0]:
                best = (s, thr, -GL / (HL + lam), -GR / (HR + lam))
        _, thr, wl, wr = best
        out.append((thr, wl, wr))
        pred = [p + eta * (wl if xi <= thr else wr) for p, xi in zip(pred, x)]
    return out, np.array(pred)
