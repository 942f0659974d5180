"""Binary anomaly identification with a two-layer stacking ensemble.

The base layer holds a decision tree, a random forest, a k-nearest-neighbour
classifier and gradient boosted trees; each contributes its positive-class
probability. A logistic regression trained on out-of-fold base probabilities
blends them.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from .cart import PackedTrees, TrainingMatrix, grow_tree
from .errors import DataError
from .forecast import tree_rng

logger = logging.getLogger(__name__)

KINDS = ("decision_tree", "random_forest", "knn", "gbdt")


def sigmoid(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    out = np.empty_like(s)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    e = np.exp(s[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


@dataclass(frozen=True)
class BaseParams:
    """Hyperparameters of the four base learners.

    ``rf_max_features=None`` resolves to ``ceil(sqrt(n_features))``.
    """

    dt_max_depth: int = 10
    rf_n_trees: int = 100
    rf_max_features: int | None = None
    rf_max_depth: int | None = None
    knn_k: int = 5
    gbdt_rounds: int = 100
    gbdt_learning_rate: float = 0.1
    gbdt_max_depth: int = 3
    min_samples_split: int = 2
    seed: int = 0


class ConstantClassifier:
    kind = "constant"

    def __init__(self, probability: float):
        self.probability = float(probability)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return np.full(len(np.atleast_2d(X)), self.probability)

    def to_state(self) -> dict:
        return {"probability": self.probability}

    @classmethod
    def from_state(cls, state: dict) -> "ConstantClassifier":
        return cls(state["probability"])


class DecisionTreeClassifier:
    kind = "decision_tree"

    def __init__(self, trees: PackedTrees):
        self.trees = trees

    @classmethod
    def fit(cls, X, y, params: BaseParams, seed: int = 0) -> "DecisionTreeClassifier":
        tree = grow_tree(X, y, n_classes=2, max_depth=params.dt_max_depth,
                         min_samples_split=params.min_samples_split, seed=seed)
        return cls(PackedTrees.from_trees([tree]))

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.trees.leaf_values(X)[0, :, 1]

    def to_state(self) -> dict:
        return {"trees": self.trees.to_state()}

    @classmethod
    def from_state(cls, state: dict) -> "DecisionTreeClassifier":
        return cls(PackedTrees.from_state(state["trees"]))


class RandomForestClassifier:
    """Bagged Gini trees; each tree casts one vote for its leaf's majority class."""

    kind = "random_forest"

    def __init__(self, trees: PackedTrees, n_classes: int = 2):
        self.trees = trees
        self.n_classes = n_classes

    @classmethod
    def fit(cls, X, y, params: BaseParams, seed: int = 0, n_classes: int = 2) -> "RandomForestClassifier":
        data = X if isinstance(X, TrainingMatrix) else TrainingMatrix.from_array(X)
        n = data.n_rows
        k = params.rf_max_features or max(1, math.ceil(math.sqrt(data.n_features)))
        k = min(k, data.n_features)
        trees = []
        for t in range(params.rf_n_trees):
            rng = tree_rng(seed, 101, t)
            w = np.bincount(rng.integers(n, size=n), minlength=n).astype(np.float64)
            trees.append(grow_tree(
                data, y, n_classes=n_classes, max_depth=params.rf_max_depth,
                min_samples_split=params.min_samples_split, max_features=k,
                seed=int(rng.integers(2**62)), sample_weight=w,
            ))
        return cls(PackedTrees.from_trees(trees), n_classes)

    def vote_fractions(self, X: np.ndarray) -> np.ndarray:
        votes = self.trees.leaf_values(X).argmax(axis=2)  # (n_trees, n_rows); ties -> lowest class
        frac = np.zeros((votes.shape[1], self.n_classes))
        for c in range(self.n_classes):
            frac[:, c] = (votes == c).mean(axis=0)
        return frac

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.vote_fractions(X)[:, 1]

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.vote_fractions(X).argmax(axis=1)

    def to_state(self) -> dict:
        return {"trees": self.trees.to_state(), "n_classes": self.n_classes}

    @classmethod
    def from_state(cls, state: dict) -> "RandomForestClassifier":
        return cls(PackedTrees.from_state(state["trees"]), int(state["n_classes"]))


class KnnClassifier:
    """Positive fraction among the k nearest training rows (Euclidean)."""

    kind = "knn"

    def __init__(self, X: np.ndarray, y: np.ndarray, k: int):
        self.X = np.asarray(X, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.float64)
        self.k = int(k)
        self._index = cKDTree(self.X)

    @classmethod
    def fit(cls, X, y, params: BaseParams, seed: int = 0) -> "KnnClassifier":
        return cls(X, y, params.knn_k)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        k = min(self.k, len(self.X))
        _, idx = self._index.query(X, k=k)
        idx = np.asarray(idx).reshape(len(X), k)
        return self.y[idx].mean(axis=1)

    def to_state(self) -> dict:
        return {"X": self.X, "y": self.y, "k": self.k}

    @classmethod
    def from_state(cls, state: dict) -> "KnnClassifier":
        return cls(state["X"], state["y"], state["k"])


def log_loss(y: np.ndarray, F: np.ndarray) -> float:
    """Mean binary log-loss of raw scores ``F``."""
    return float(np.mean(np.logaddexp(0.0, F) - y * F))


class GbdtClassifier:
    """Additive regression trees on log-loss gradients with a logistic link.

    Each round fits a depth-limited MSE tree to the residuals ``y - p`` and sets
    leaf values by one Newton step, shrunk by the learning rate. If a round would
    raise the training loss the step is halved until it does not.
    """

    kind = "gbdt"

    def __init__(self, base_score: float, trees: PackedTrees | None):
        self.base_score = float(base_score)
        self.trees = trees

    @classmethod
    def fit(cls, X, y, params: BaseParams, seed: int = 0) -> "GbdtClassifier":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        rate = float(np.clip(y.mean(), 1e-12, 1 - 1e-12))
        base = logit(rate)
        F = np.full(len(y), base)
        data = TrainingMatrix.from_array(X)
        trees = []
        loss = log_loss(y, F)
        for _ in range(params.gbdt_rounds):
            p = sigmoid(F)
            r = y - p
            tree = grow_tree(data, r, max_depth=params.gbdt_max_depth,
                             min_samples_split=params.min_samples_split)
            leaves = tree.apply(X)
            num = np.bincount(leaves, weights=r, minlength=tree.n_nodes)
            den = np.bincount(leaves, weights=p * (1 - p), minlength=tree.n_nodes)
            gamma = num / np.maximum(den, 1e-12)
            step = params.gbdt_learning_rate
            for _ in range(40):
                F_new = F + step * gamma[leaves]
                new_loss = log_loss(y, F_new)
                if new_loss <= loss:
                    break
                step *= 0.5
            else:
                break
            F, loss = F_new, new_loss
            trees.append(tree.with_leaf_values(step * gamma))
        return cls(base, PackedTrees.from_trees(trees) if trees else None)

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        F = np.full(len(X), self.base_score)
        if self.trees is not None:
            F += self.trees.leaf_values(X)[:, :, 0].sum(axis=0)
        return F

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return sigmoid(self.decision_function(X))

    def staged_log_loss(self, X: np.ndarray, y: np.ndarray) -> list[float]:
        """Training log-loss after 0, 1, ..., n_rounds rounds."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        F = np.full(len(X), self.base_score)
        out = [log_loss(y, F)]
        if self.trees is not None:
            for contrib in self.trees.leaf_values(X)[:, :, 0]:
                F = F + contrib
                out.append(log_loss(y, F))
        return out

    def to_state(self) -> dict:
        return {"base_score": self.base_score,
                "trees": None if self.trees is None else self.trees.to_state()}

    @classmethod
    def from_state(cls, state: dict) -> "GbdtClassifier":
        trees = state["trees"]
        return cls(state["base_score"], None if trees is None else PackedTrees.from_state(trees))


_CLASSES = {c.kind: c for c in (ConstantClassifier, DecisionTreeClassifier,
                                RandomForestClassifier, KnnClassifier, GbdtClassifier)}


def classifier_to_state(clf) -> dict:
    return {"kind": clf.kind, "state": clf.to_state()}


def classifier_from_state(state: dict):
    return _CLASSES[state["kind"]].from_state(state["state"])


def _check_binary(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be 2-D with one row per label")
    if len(X) == 0:
        raise ValueError("cannot fit a classifier on zero rows")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return X, y.astype(np.float64)


def fit_base(kind: str, X: np.ndarray, y: np.ndarray, params: BaseParams = BaseParams(), seed: int | None = None):
    """Fit one base learner. Single-class labels yield a constant classifier."""
    X, y = _check_binary(X, y)
    if kind not in KINDS:
        raise ValueError(f"unknown base classifier {kind!r}")
    if y.min() == y.max():
        logger.warning("%s: only class %d present; using a constant classifier", kind, int(y[0]))
        return ConstantClassifier(y[0])
    seed = params.seed if seed is None else seed
    return _CLASSES[kind].fit(X, y, params, seed)


@dataclass(frozen=True)
class OofPlan:
    """Stratified, seeded row-to-fold assignment for out-of-fold predictions."""

    k: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("need at least two folds")

    def assign(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y)
        rng = np.random.default_rng([self.seed, 202])
        order = np.concatenate([rng.permutation(np.flatnonzero(y == c)) for c in np.unique(y)])
        folds = np.empty(len(y), dtype=np.int64)
        folds[order] = np.arange(len(y)) % self.k
        return folds


def make_oof_meta_features(
    X: np.ndarray,
    y: np.ndarray,
    kinds: Sequence[str] = KINDS,
    plan: OofPlan = OofPlan(),
    params: BaseParams = BaseParams(),
) -> np.ndarray:
    """Column ``j`` holds each row's probability from base ``kinds[j]`` fit without its fold."""
    X, y = _check_binary(X, y)
    folds = plan.assign(y)
    meta = np.zeros((len(X), len(kinds)))
    for f in range(plan.k):
        held = folds == f
        if not held.any():
            continue
        rest = ~held
        if len(np.unique(y[rest])) < 2:
            raise DataError(
                f"fold {f} leaves a single class in its training complement; "
                "use more folds or more minority rows"
            )
        for j, kind in enumerate(kinds):
            clf = fit_base(kind, X[rest], y[rest], params, seed=params.seed + 7919 * (f + 1))
            meta[held, j] = clf.predict_proba(X[held])
    return meta


def lr_objective(w: np.ndarray, b: float, Z: np.ndarray, y: np.ndarray, l2: float) -> float:
    """Negative log-likelihood plus ``l2 / 2 * ||w||^2``; the intercept is unpenalized."""
    s = Z @ w + b
    return float(np.sum(np.logaddexp(0.0, s) - y * s) + 0.5 * l2 * np.dot(w, w))


def lr_gradient(w: np.ndarray, b: float, Z: np.ndarray, y: np.ndarray, l2: float) -> tuple[np.ndarray, float]:
    r = sigmoid(Z @ w + b) - y
    return Z.T @ r + l2 * w, float(r.sum())


@dataclass(frozen=True)
class LogisticFit:
    weights: np.ndarray
    intercept: float
    iterations: int
    converged: bool


def fit_logistic(Z: np.ndarray, y: np.ndarray, l2: float = 1.0, max_iter: int = 500, tol: float = 1e-9) -> LogisticFit:
    """Minimize :func:`lr_objective` by damped Newton steps.

    Returns the best iterate, with a warning, when ``max_iter`` is exhausted.
    """
    Z = np.asarray(Z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = Z.shape
    Z1 = np.hstack([Z, np.ones((n, 1))])
    theta = np.zeros(d + 1)
    penalty = np.full(d + 1, l2)
    penalty[-1] = 0.0
    obj = lr_objective(theta[:d], theta[d], Z, y, l2)
    for it in range(1, max_iter + 1):
        gw, gb = lr_gradient(theta[:d], theta[d], Z, y, l2)
        g = np.append(gw, gb)
        if np.max(np.abs(g)) <= tol * max(1.0, n):
            return LogisticFit(theta[:d].copy(), float(theta[d]), it - 1, True)
        p = sigmoid(Z1 @ theta)
        H = (Z1 * (p * (1 - p))[:, None]).T @ Z1 + np.diag(penalty)
        H[np.diag_indices_from(H)] += 1e-12
        try:
            direction = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            direction = g
        t = 1.0
        while t > 1e-10:
            cand = theta - t * direction
            cand_obj = lr_objective(cand[:d], cand[d], Z, y, l2)
            if cand_obj <= obj:
                break
            t *= 0.5
        else:
            return LogisticFit(theta[:d].copy(), float(theta[d]), it, True)
        theta, obj = cand, cand_obj
    logger.warning("logistic meta layer did not converge in %d iterations", max_iter)
    return LogisticFit(theta[:d].copy(), float(theta[d]), max_iter, False)


@dataclass(frozen=True)
class StackingParams:
    base: BaseParams = field(default_factory=BaseParams)
    folds: int = 5
    l2: float = 1.0
    max_iter: int = 500
    threshold: float = 0.5
    seed: int = 0


@dataclass(frozen=True)
class StackingModel:
    """Four base learners blended by a logistic meta layer.

    ``constant`` is set when training saw a single class; the model then returns
    that class's probability everywhere.
    """

    bases: tuple
    weights: np.ndarray
    intercept: float
    threshold: float = 0.5
    constant: float | None = None
    n_features: int = 0

    def base_probabilities(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.column_stack([b.predict_proba(X) for b in self.bases])

    def meta_probability(self, P: np.ndarray) -> np.ndarray:
        return sigmoid(np.asarray(P, dtype=np.float64) @ self.weights + self.intercept)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.n_features and X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        if self.constant is not None:
            return np.full(len(X), self.constant)
        return self.meta_probability(self.base_probabilities(X))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.predict_proba(X) >= self.threshold

    def to_state(self) -> dict:
        return {
            "bases": [classifier_to_state(b) for b in self.bases],
            "weights": self.weights,
            "intercept": self.intercept,
            "threshold": self.threshold,
            "constant": self.constant,
            "n_features": self.n_features,
        }

    @classmethod
    def from_state(cls, state: dict) -> "StackingModel":
        return cls(
            tuple(classifier_from_state(b) for b in state["bases"]),
            np.asarray(state["weights"], dtype=np.float64),
            float(state["intercept"]),
            float(state["threshold"]),
            state["constant"],
            int(state["n_features"]),
        )


def fit_stacking(X: np.ndarray, y: np.ndarray, params: StackingParams = StackingParams()) -> StackingModel:
    """Fit the meta layer on out-of-fold base probabilities, then refit bases on all rows."""
    X, y = _check_binary(X, y)
    if y.min() == y.max():
        logger.warning("stacking: only class %d present; the model is a constant classifier", int(y[0]))
        bases = tuple(ConstantClassifier(y[0]) for _ in KINDS)
        return StackingModel(bases, np.zeros(len(KINDS)), 0.0, params.threshold,
                             constant=float(y[0]), n_features=X.shape[1])
    base = replace(params.base, seed=params.seed)
    meta = make_oof_meta_features(X, y, KINDS, OofPlan(params.folds, params.seed), base)
    fit = fit_logistic(meta, y, params.l2, params.max_iter)
    bases = tuple(fit_base(kind, X, y, base) for kind in KINDS)
    return StackingModel(bases, fit.weights, fit.intercept, params.threshold, n_features=X.shape[1])


def predict_stacking(model: StackingModel, x: np.ndarray) -> tuple[float, bool]:
    p = float(model.predict_proba(np.asarray(x, dtype=np.float64)[None, :])[0])
    return p, p >= model.threshold
