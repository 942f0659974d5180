"""Next-hour KPI forecasting: random forest regression and naive/MA/ES baselines."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .cart import PackedTrees, TrainingMatrix, Tree, grow_tree


@dataclass(frozen=True)
class RegressionTreeParams:
    """``feature_subset_size=None`` considers every feature at every split."""

    max_depth: int = 12
    min_samples_split: int = 5
    feature_subset_size: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.feature_subset_size is not None and self.feature_subset_size < 1:
            raise ValueError("feature_subset_size must be >= 1")


@dataclass(frozen=True)
class RegressionTree:
    tree: Tree

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return self.tree.predict_value(X)[:, 0]

    def training_mse(self, X: np.ndarray, y: np.ndarray) -> float:
        return float(np.mean((self.predict(X) - np.asarray(y)) ** 2))


def fit_tree_regressor(
    X: np.ndarray | TrainingMatrix,
    y: np.ndarray,
    params: RegressionTreeParams = RegressionTreeParams(),
    sample_weight: np.ndarray | None = None,
) -> RegressionTree:
    """Greedy MSE-split regression tree; leaves hold the mean routed target."""
    tree = grow_tree(
        X, y,
        max_depth=params.max_depth,
        min_samples_split=params.min_samples_split,
        max_features=params.feature_subset_size,
        seed=params.seed,
        sample_weight=sample_weight,
    )
    return RegressionTree(tree)


@dataclass(frozen=True)
class ForestParams:
    """``feature_subset_size=None`` resolves to ``ceil(n_features / 3)``."""

    n_trees: int = 100
    max_depth: int = 12
    min_samples_split: int = 5
    feature_subset_size: int | None = None
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")

    def subset_size(self, n_features: int) -> int:
        if self.feature_subset_size is None:
            return max(1, math.ceil(n_features / 3))
        return min(self.feature_subset_size, n_features)


def tree_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator per (seed, stream...) so results never depend on fit order."""
    return np.random.default_rng([seed, *stream])


@dataclass(frozen=True)
class ForestModel:
    """One packed forest per target column; prediction is the mean over trees."""

    forests: tuple[PackedTrees, ...]
    n_features: int
    params: ForestParams
    target_names: tuple[str, ...] = field(default=())

    @property
    def n_targets(self) -> int:
        return len(self.forests)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        out = np.empty((X.shape[0], self.n_targets))
        for j, forest in enumerate(self.forests):
            out[:, j] = forest.leaf_values(X)[:, :, 0].mean(axis=0)
        return out

    def oob_predict(self, X: np.ndarray) -> np.ndarray:
        """Out-of-bag predictions for the training matrix ``X``.

        Each row averages only the trees whose bootstrap resample left it out.
        The resamples are redrawn from the seeds, so ``X`` must be the exact
        training matrix in training order. Rows that every tree saw (or any row
        when bootstrapping is off) fall back to the full-forest mean.
        """
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        n = X.shape[0]
        out = self.predict(X)
        if not self.params.bootstrap:
            return out
        for j, forest in enumerate(self.forests):
            leaves = forest.leaf_values(X)[:, :, 0]
            total, count = np.zeros(n), np.zeros(n)
            for t in range(leaves.shape[0]):
                oob = bootstrap_counts(self.params.seed, j, t, n) == 0
                total[oob] += leaves[t, oob]
                count[oob] += 1
            seen = count > 0
            out[seen, j] = total[seen] / count[seen]
        return out

    def to_state(self) -> dict:
        return {
            "n_features": self.n_features,
            "params": self.params.__dict__.copy(),
            "target_names": list(self.target_names),
            "forests": [f.to_state() for f in self.forests],
        }

    @classmethod
    def from_state(cls, state: dict) -> "ForestModel":
        return cls(
            tuple(PackedTrees.from_state(f) for f in state["forests"]),
            int(state["n_features"]),
            ForestParams(**state["params"]),
            tuple(state["target_names"]),
        )


def _bootstrap(rng: np.random.Generator, n: int) -> np.ndarray:
    return np.bincount(rng.integers(n, size=n), minlength=n).astype(np.float64)


def bootstrap_counts(seed: int, stream: int, tree: int, n: int) -> np.ndarray:
    """Draw counts of tree ``tree`` of target ``stream``, as used during fitting."""
    return _bootstrap(tree_rng(seed, stream, tree), n)


def fit_forest_column(data: TrainingMatrix, y: np.ndarray, params: ForestParams, stream: int = 0) -> PackedTrees:
    n = data.n_rows
    k = params.subset_size(data.n_features)
    trees = []
    for t in range(params.n_trees):
        rng = tree_rng(params.seed, stream, t)
        w = _bootstrap(rng, n) if params.bootstrap else None
        tree = grow_tree(
            data, y,
            max_depth=params.max_depth,
            min_samples_split=params.min_samples_split,
            max_features=k,
            seed=int(rng.integers(2**62)),
            sample_weight=w,
        )
        trees.append(tree)
    return PackedTrees.from_trees(trees)


def fit_rfr(
    X: np.ndarray,
    Y: np.ndarray,
    params: ForestParams = ForestParams(),
    target_names: Sequence[str] = (),
) -> ForestModel:
    """Fit an independent bagged forest for every column of ``Y``."""
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    data = TrainingMatrix.from_array(X)
    if Y.shape[0] != data.n_rows:
        raise ValueError("X and Y row counts differ")
    forests = tuple(fit_forest_column(data, Y[:, j], params, stream=j) for j in range(Y.shape[1]))
    return ForestModel(forests, data.n_features, params, tuple(target_names))


def predict_rfr(model: ForestModel, x: np.ndarray) -> np.ndarray:
    """Predicted target vector for one feature vector (or a matrix of them)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return model.predict(x[None, :])[0]
    return model.predict(x)


BaselineKind = Literal["naive", "moving_average", "exponential_smoothing"]


@dataclass(frozen=True)
class BaselineModel:
    kind: BaselineKind = "naive"
    window: int = 3
    alpha: float = 0.3

    def __post_init__(self):
        if self.kind not in ("naive", "moving_average", "exponential_smoothing"):
            raise ValueError(f"unknown baseline {self.kind!r}")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")

    @property
    def label(self) -> str:
        return {"naive": "naive", "moving_average": "ma", "exponential_smoothing": "es"}[self.kind]


def forecast_baseline(model: BaselineModel, history: Sequence[float] | np.ndarray) -> float | np.ndarray:
    """Prediction for the hour after ``history`` (axis 0 is time)."""
    h = np.asarray(history, dtype=np.float64)
    if len(h) < 1:
        raise ValueError("baseline needs at least one observation")
    if model.kind == "naive":
        out = h[-1]
    elif model.kind == "moving_average":
        if len(h) < model.window:
            raise ValueError(f"moving average needs {model.window} observations, got {len(h)}")
        out = h[-model.window:].mean(axis=0)
    else:
        out = baseline_path(model, h)[-1]
    return float(out) if np.ndim(out) == 0 else out


def baseline_path(model: BaselineModel, values: np.ndarray) -> np.ndarray:
    """Row ``i`` is the forecast for time ``i + 1`` made from ``values[: i + 1]``.

    Rows without enough history for a moving average are NaN.
    """
    v = np.asarray(values, dtype=np.float64)
    if model.kind == "naive":
        return v.copy()
    if model.kind == "moving_average":
        out = np.full_like(v, np.nan)
        c = np.cumsum(v, axis=0)
        w = model.window
        if len(v) >= w:
            out[w - 1] = c[w - 1] / w
            out[w:] = (c[w:] - c[:-w]) / w
        return out
    a = model.alpha
    out = np.empty_like(v)
    out[0] = v[0]
    for i in range(1, len(v)):
        out[i] = a * v[i] + (1 - a) * out[i - 1]
    return out

