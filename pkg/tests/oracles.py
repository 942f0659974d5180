"""Independent reference implementations used only by the tests.

Each one is written from the definition, in plain Python loops, and shares no
code with the package.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np


# --- metrics ---------------------------------------------------------------

def brute_counts(y_true, y_pred, c):
    tp = fp = fn = 0
    for t, p in zip(y_true, y_pred):
        if t == c and p == c:
            tp += 1
        elif t != c and p == c:
            fp += 1
        elif t == c and p != c:
            fn += 1
    return tp, fp, fn


def brute_fbeta(p, r, beta):
    b2 = beta * beta
    den = b2 * p + r
    return 0.0 if den == 0 else (1 + b2) * p * r / den


def brute_prf(y_true, y_pred, c, beta=0.5):
    tp, fp, fn = brute_counts(y_true, y_pred, c)
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return p, r, brute_fbeta(p, r, beta)


def brute_macro(y_true, y_pred, n_classes, beta=0.5, exclude_absent=False):
    vals = []
    for c in range(n_classes):
        if exclude_absent and not any(t == c for t in y_true):
            continue
        vals.append(brute_prf(y_true, y_pred, c, beta)[2])
    return sum(vals) / len(vals) if vals else 0.0


def brute_micro(y_true, y_pred, n_classes, beta=0.5):
    TP = FP = FN = 0
    for c in range(n_classes):
        tp, fp, fn = brute_counts(y_true, y_pred, c)
        TP, FP, FN = TP + tp, FP + fp, FN + fn
    p = TP / (TP + FP) if TP + FP else 0.0
    r = TP / (TP + FN) if TP + FN else 0.0
    return brute_fbeta(p, r, beta)


# --- tree splits -----------------------------------------------------------

def _sse(ys, ws):
    W = sum(ws)
    m = sum(w * y for y, w in zip(ys, ws)) / W
    return sum(w * (y - m) ** 2 for y, w in zip(ys, ws))


def _gini_exact(ys, ws, n_classes):
    W = sum(Fraction(int(w)) for w in ws)
    counts = [Fraction(0)] * n_classes
    for y, w in zip(ys, ws):
        counts[int(y)] += int(w)
    return W - sum(c * c for c in counts) / W


def candidate_splits(X, rows, ws, ys, criterion, n_classes=0):
    """Every (feature, midpoint threshold) with its children impurity, in tie order."""
    out = []
    for f in range(X.shape[1]):
        values = sorted({float(X[r, f]) for r in rows})
        for a, b in zip(values, values[1:]):
            t = 0.5 * (a + b)
            if t >= b or t < a:
                t = a
            L = [i for i, r in enumerate(rows) if X[r, f] <= t]
            R = [i for i, r in enumerate(rows) if X[r, f] > t]
            if criterion == "gini":
                cost = (_gini_exact([ys[i] for i in L], [ws[i] for i in L], n_classes)
                        + _gini_exact([ys[i] for i in R], [ws[i] for i in R], n_classes))
            else:
                cost = _sse([ys[i] for i in L], [ws[i] for i in L]) + _sse([ys[i] for i in R], [ws[i] for i in R])
            out.append((cost, f, t))
    return out


def best_split(X, rows, ws, ys, criterion, n_classes=0, tol=1e-9):
    """The first candidate, in (feature, threshold) order, attaining the minimum cost.

    Gini costs are exact rationals; MSE costs are compared within ``tol``
    relative to the node's total sum of squares.
    """
    cands = candidate_splits(X, rows, ws, ys, criterion, n_classes)
    if not cands:
        return None
    best = min(c[0] for c in cands)
    if criterion == "gini":
        return next(c for c in cands if c[0] == best)
    scale = max(_sse(ys, ws), 1e-300)
    return next(c for c in cands if c[0] <= best + tol * scale)


def routed_rows(tree, X, rows):
    """Map node -> training rows reaching it, by walking the tree from the root."""
    reach = {0: list(rows)}
    stack = [0]
    while stack:
        node = stack.pop()
        if tree.feature[node] < 0:
            continue
        f, t = tree.feature[node], tree.threshold[node]
        reach[tree.left[node]] = [r for r in reach[node] if X[r, f] <= t]
        reach[tree.right[node]] = [r for r in reach[node] if X[r, f] > t]
        stack += [tree.left[node], tree.right[node]]
    return reach


# --- nearest neighbours ----------------------------------------------------

def linear_scan_severity(X, codes, q, k=3):
    """Mean code of the k nearest rows (ties to the lower index), rounded half up."""
    rows = np.asarray(X, dtype=np.float64).tolist()
    q = [float(v) for v in q]
    dist = []
    for i, row in enumerate(rows):
        dist.append((math.sqrt(sum((a - b) ** 2 for a, b in zip(row, q))), i))
    dist.sort()
    total = sum(int(codes[i]) for _, i in dist[:k])
    return math.floor(Fraction(total, k) + Fraction(1, 2))


def as_array(x):
    return np.asarray(x, dtype=np.float64)


def tree_mismatches(tree, X, y, criterion, n_classes=0, max_depth=None, min_samples_split=2, w=None):
    """Compare every node of a full-feature tree with exhaustive enumeration.

    Returns a list of human-readable problems (empty when the tree agrees):
    internal nodes whose split differs from the oracle's first optimal split,
    leaves that the oracle could still split, and leaf values that are not the
    routed mean (or class frequencies).
    """
    X = np.asarray(X, dtype=np.float64)
    n = len(y)
    w = np.ones(n) if w is None else np.asarray(w, dtype=np.float64)
    rows = [i for i in range(n) if w[i] > 0]
    reach = routed_rows(tree, X, rows)
    depth = {0: 0}
    problems = []
    for node in sorted(reach):
        rs = reach[node]
        ys = [float(y[r]) for r in rs]
        ws = [float(w[r]) for r in rs]
        W = sum(ws)
        if criterion == "gini":
            expect = [sum(wi for yi, wi in zip(ys, ws) if int(yi) == c) / W for c in range(n_classes)]
        else:
            expect = [sum(yi * wi for yi, wi in zip(ys, ws)) / W]
        if not np.allclose(tree.value[node], expect, rtol=0, atol=1e-12):
            problems.append(f"node {node}: value {tree.value[node]} != {expect}")
        splittable = (
            (max_depth is None or depth[node] < max_depth)
            and W >= min_samples_split
            and len(set(ys)) > 1
        )
        oracle = best_split(X, rs, ws, ys, criterion, n_classes) if splittable else None
        if tree.feature[node] < 0:
            if oracle is not None:
                problems.append(f"node {node}: leaf but oracle splits on {oracle[1:]}")
            continue
        depth[tree.left[node]] = depth[tree.right[node]] = depth[node] + 1
        got = (int(tree.feature[node]), float(tree.threshold[node]))
        if oracle is None:
            problems.append(f"node {node}: split {got} where oracle makes a leaf")
        elif got != (oracle[1], oracle[2]):
            problems.append(f"node {node}: split {got} != oracle {oracle[1:]}")
    return problems
