"""Greedy CART growth shared by every tree model in the package.

Trees are grown breadth-first over presorted per-feature row orders, so each
level costs O(n_features * n_rows) instead of re-sorting at every node. Rows
carry integer-valued weights; a bootstrap resample is expressed as weights
equal to the draw counts, which yields exactly the tree that would be grown on
the materialized resample.

Two split criteria are supported:

* ``mse``  -- minimize the weighted sum of squared errors of the children.
* ``gini`` -- minimize the weighted Gini impurity of the children.

Candidate thresholds are midpoints between consecutive distinct feature
values. Ties, up to a relative margin of 1e-12, go to the lowest feature index,
then the lowest threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

_MULT = np.uint64(2685821657736338717)
# A candidate must beat the incumbent by this relative margin, so splits that
# tie up to rounding (e.g. the same partition reached through two features)
# resolve to the lower feature and threshold.
_TIE_RTOL = 1e-12


@numba.njit(cache=True, nogil=True)
def _rand(state):
    # xorshift64*
    x = state[0]
    x ^= x >> np.uint64(12)
    x ^= x << np.uint64(25)
    x ^= x >> np.uint64(27)
    state[0] = x
    return (x * _MULT) >> np.uint64(11)


@numba.njit(cache=True, nogil=True)
def _sample_features(state, n_features, k, perm, out):
    for i in range(n_features):
        perm[i] = i
    for i in range(k):
        j = i + np.int64(_rand(state) % np.uint64(n_features - i))
        tmp = perm[i]
        perm[i] = perm[j]
        perm[j] = tmp
    for i in range(k):
        out[i] = perm[i]
    out[:k].sort()


@numba.njit(cache=True, nogil=True)
def _grow(Xt, y, w, order, n_classes, max_depth, min_samples_split, max_features, seed):
    n_features = Xt.shape[0]
    n_active = order.shape[1]
    n_out = n_classes if n_classes > 0 else 1

    cap = 2 * n_active + 1
    if max_depth < 40:
        cap = min(cap, (1 << (max_depth + 1)) + 1)

    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap, dtype=np.float64)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros((cap, n_out), dtype=np.float64)
    weight = np.zeros(cap, dtype=np.float64)

    q_node = np.empty(cap, dtype=np.int64)
    q_start = np.empty(cap, dtype=np.int64)
    q_end = np.empty(cap, dtype=np.int64)
    q_depth = np.empty(cap, dtype=np.int64)

    state = np.empty(1, dtype=np.uint64)
    state[0] = np.uint64(seed) | np.uint64(1)
    perm = np.empty(n_features, dtype=np.int64)
    subset = np.empty(n_features, dtype=np.int64)
    goes_left = np.zeros(Xt.shape[1], dtype=np.uint8)
    counts = np.zeros(n_out, dtype=np.float64)
    left_counts = np.zeros(n_out, dtype=np.float64)

    # ping-pong buffers indexed by depth parity: row ids and their sorted values
    rows = np.empty((2, n_features, n_active), dtype=np.int32)
    vals = np.empty((2, n_features, n_active), dtype=np.float64)
    for f in range(n_features):
        for p in range(n_active):
            r = order[f, p]
            rows[0, f, p] = r
            vals[0, f, p] = Xt[f, r]

    n_nodes = 1
    head = 0
    tail = 1
    q_node[0] = 0
    q_start[0] = 0
    q_end[0] = n_active
    q_depth[0] = 0

    while head < tail:
        node = q_node[head]
        start = q_start[head]
        end = q_end[head]
        depth = q_depth[head]
        head += 1
        R = rows[depth % 2]
        V = vals[depth % 2]
        R2 = rows[1 - depth % 2]
        V2 = vals[1 - depth % 2]

        W = 0.0
        S = 0.0
        counts[:] = 0.0
        y_lo = np.inf
        y_hi = -np.inf
        for p in range(start, end):
            r = R[0, p]
            wr = w[r]
            W += wr
            yr = y[r]
            if n_classes > 0:
                counts[np.int64(yr)] += wr
            else:
                S += wr * yr
            y_lo = min(y_lo, yr)
            y_hi = max(y_hi, yr)
        weight[node] = W
        if n_classes > 0:
            for c in range(n_classes):
                value[node, c] = counts[c] / W
        else:
            # a pure node stores its common value exactly, not a rounded mean
            value[node, 0] = y_lo if y_lo == y_hi else S / W
        mean = S / W

        if depth >= max_depth or W < min_samples_split or y_lo == y_hi or end - start < 2:
            continue

        _sample_features(state, n_features, max_features, perm, subset)

        best_score = -np.inf
        best_f = -1
        best_t = 0.0
        for fi in range(max_features):
            f = subset[fi]
            WL = 0.0
            SL = 0.0
            left_counts[:] = 0.0
            for p in range(start, end - 1):
                r = R[f, p]
                wr = w[r]
                WL += wr
                if n_classes > 0:
                    left_counts[np.int64(y[r])] += wr
                else:
                    SL += wr * (y[r] - mean)
                x0 = V[f, p]
                x1 = V[f, p + 1]
                if not x0 < x1:
                    continue
                WR = W - WL
                # compare num/den against the best without dividing
                den = WL * WR
                if n_classes > 0:
                    sl = 0.0
                    sr = 0.0
                    for c in range(n_classes):
                        sl += left_counts[c] * left_counts[c]
                        cr = counts[c] - left_counts[c]
                        sr += cr * cr
                    num = sl * WR + sr * WL
                else:
                    # children SSE = const - SL^2 * W / (WL * WR) once y is centered
                    num = SL * SL * W
                if num > best_score * den * (1.0 + _TIE_RTOL):
                    best_score = num / den
                    best_f = f
                    t = 0.5 * (x0 + x1)
                    if t >= x1 or t < x0:
                        t = x0
                    best_t = t

        if best_f < 0:
            continue

        nl = 0
        w_left = 0.0
        for p in range(start, end):
            r = R[best_f, p]
            gl = V[best_f, p] <= best_t
            goes_left[r] = gl
            nl += gl
            w_left += gl * w[r]
        # children that can never split only need the row set, not every sort order
        n_part = 1
        if depth + 1 < max_depth and max(w_left, W - w_left) >= min_samples_split:
            n_part = n_features
        # branchless stable partition into the other buffer; the goes_left
        # pattern is unpredictable, so a branch here mispredicts half the time
        for g in range(n_part):
            a = start
            b = start + nl
            for p in range(start, end):
                r = R[g, p]
                gl = np.int64(goes_left[r])
                pos = b + gl * (a - b)
                R2[g, pos] = r
                V2[g, pos] = V[g, p]
                a += gl
                b += 1 - gl

        feature[node] = best_f
        threshold[node] = best_t
        left[node] = n_nodes
        right[node] = n_nodes + 1
        q_node[tail] = n_nodes
        q_start[tail] = start
        q_end[tail] = start + nl
        q_depth[tail] = depth + 1
        tail += 1
        q_node[tail] = n_nodes + 1
        q_start[tail] = start + nl
        q_end[tail] = end
        q_depth[tail] = depth + 1
        tail += 1
        n_nodes += 2

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
        weight[:n_nodes].copy(),
    )


@numba.njit(cache=True, nogil=True)
def _apply(feature, threshold, left, right, X):
    out = np.empty(X.shape[0], dtype=np.int64)
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


def presort(X: np.ndarray) -> np.ndarray:
    """Per-feature stable argsort of ``X``, shaped ``(n_features, n_rows)``."""
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)


@numba.njit(cache=True, nogil=True)
def _active_order(order, w):
    n_active = 0
    for i in range(w.shape[0]):
        if w[i] > 0:
            n_active += 1
    out = np.empty((order.shape[0], n_active), dtype=np.int64)
    for f in range(order.shape[0]):
        k = 0
        for p in range(order.shape[1]):
            r = order[f, p]
            if w[r] > 0:
                out[f, k] = r
                k += 1
    return out


def active_order(order: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Restrict a full presort to rows with positive weight, keeping order."""
    return _active_order(order, w)


@dataclass(frozen=True)
class Tree:
    """Flat-array binary tree. Leaves have ``feature == -1``.

    ``value`` has one column for regression trees and one column per class
    (class frequencies) for classification trees.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    weight: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature < 0

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        for node in range(self.n_nodes):
            if self.feature[node] >= 0:
                depths[self.left[node]] = depths[node] + 1
                depths[self.right[node]] = depths[node] + 1
        return int(depths.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _apply(self.feature, self.threshold, self.left, self.right, X)

    def predict_value(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def with_leaf_values(self, leaf_values: np.ndarray) -> "Tree":
        value = np.array(self.value, copy=True)
        value[:, 0] = leaf_values
        return Tree(self.feature, self.threshold, self.left, self.right, value, self.weight)


@dataclass(frozen=True)
class TrainingMatrix:
    """Column-major copy of a feature matrix plus its per-feature sort order.

    Built once and shared by every tree of an ensemble fit on the same rows.
    """

    Xt: np.ndarray
    order: np.ndarray

    @classmethod
    def from_array(cls, X: np.ndarray) -> "TrainingMatrix":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise ValueError("cannot fit a tree on an empty feature matrix")
        if not np.all(np.isfinite(X)):
            raise ValueError("feature matrix contains non-finite values")
        return cls(np.ascontiguousarray(X.T), presort(X))

    @property
    def n_rows(self) -> int:
        return self.Xt.shape[1]

    @property
    def n_features(self) -> int:
        return self.Xt.shape[0]


def grow_tree(
    X: np.ndarray | TrainingMatrix,
    y: np.ndarray,
    *,
    n_classes: int = 0,
    max_depth: int | None = None,
    min_samples_split: int = 2,
    max_features: int | None = None,
    seed: int = 0,
    sample_weight: np.ndarray | None = None,
) -> Tree:
    """Grow one tree. ``n_classes == 0`` selects the MSE criterion, otherwise Gini
    with class codes ``0 .. n_classes - 1`` in ``y``.

    Rows with zero ``sample_weight`` are excluded.
    """
    data = X if isinstance(X, TrainingMatrix) else TrainingMatrix.from_array(X)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if y.shape != (data.n_rows,):
        raise ValueError(f"target shape {y.shape} does not match {data.n_rows} rows")
    n_features = data.n_features
    if max_features is None:
        max_features = n_features
    if not 1 <= max_features <= n_features:
        raise ValueError(f"max_features must lie in [1, {n_features}], got {max_features}")
    if max_depth is None:
        max_depth = 10_000
    if max_depth < 0:
        raise ValueError("max_depth must be non-negative")
    if n_classes > 0 and (y.min() < 0 or y.max() >= n_classes):
        raise ValueError(f"class codes must lie in [0, {n_classes})")
    w = np.ones(data.n_rows) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
    if not np.any(w > 0):
        raise ValueError("all sample weights are zero")
    parts = _grow(
        data.Xt, y, w, active_order(data.order, w), int(n_classes), int(max_depth),
        float(min_samples_split), int(max_features), int(seed) & 0x7FFFFFFFFFFFFFFF,
    )
    return Tree(*parts)


@numba.njit(cache=True, nogil=True)
def _apply_packed(feature, threshold, left, right, offsets, X):
    n_trees = offsets.shape[0] - 1
    out = np.empty((n_trees, X.shape[0]), dtype=np.int64)
    for t in range(n_trees):
        base = offsets[t]
        for i in range(X.shape[0]):
            node = base
            while feature[node] >= 0:
                if X[i, feature[node]] <= threshold[node]:
                    node = base + left[node]
                else:
                    node = base + right[node]
            out[t, i] = node
    return out


@dataclass(frozen=True)
class PackedTrees:
    """Several trees concatenated into flat arrays; tree ``i`` spans
    ``offsets[i]:offsets[i + 1]`` and its child links are tree-local."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    weight: np.ndarray
    offsets: np.ndarray

    @classmethod
    def from_trees(cls, trees: list[Tree]) -> "PackedTrees":
        if not trees:
            raise ValueError("need at least one tree")
        offsets = np.zeros(len(trees) + 1, dtype=np.int64)
        offsets[1:] = np.cumsum([t.n_nodes for t in trees])
        return cls(
            np.concatenate([t.feature for t in trees]),
            np.concatenate([t.threshold for t in trees]),
            np.concatenate([t.left for t in trees]),
            np.concatenate([t.right for t in trees]),
            np.concatenate([t.value for t in trees]),
            np.concatenate([t.weight for t in trees]),
            offsets,
        )

    @property
    def n_trees(self) -> int:
        return len(self.offsets) - 1

    def tree(self, i: int) -> Tree:
        s = slice(self.offsets[i], self.offsets[i + 1])
        return Tree(self.feature[s], self.threshold[s], self.left[s], self.right[s],
                    self.value[s], self.weight[s])

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Global node index of the leaf reached, shaped ``(n_trees, n_rows)``."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _apply_packed(self.feature, self.threshold, self.left, self.right, self.offsets, X)

    def leaf_values(self, X: np.ndarray) -> np.ndarray:
        """Leaf value arrays, shaped ``(n_trees, n_rows, n_outputs)``."""
        return self.value[self.apply(X)]

    def to_state(self) -> dict:
        return {k: getattr(self, k) for k in
                ("feature", "threshold", "left", "right", "value", "weight", "offsets")}

    @classmethod
    def from_state(cls, state: dict) -> "PackedTrees":
        return cls(**{k: np.asarray(v) for k, v in state.items()})
