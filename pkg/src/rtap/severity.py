"""Severity grading of anomalies by 3-nearest-neighbour averaging.

The training set is first rebalanced by replicating each anomaly according to
an integer weight for its severity; rarer, more severe anomalies get more
copies. A query's grade is the mean severity code of its three nearest
training rows under Euclidean distance, rounded half-up to a level.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .datamodel import SeverityLevel

K = 3
_MAX_WEIGHT = 10


def euclidean_distance(x: Sequence[float], x_hat: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {x_hat.shape}")
    return float(np.sqrt(np.sum((x - x_hat) ** 2)))


@dataclass(frozen=True)
class SamplingWeights:
    """Replication factor per severity level; must not decrease with severity."""

    low: int = 1
    medium: int = 1
    high: int = 1

    def __post_init__(self):
        ws = (self.low, self.medium, self.high)
        if any(int(w) != w or w < 1 for w in ws):
            raise ValueError(f"weights must be positive integers, got {ws}")
        if not self.low <= self.medium <= self.high:
            raise ValueError(f"weights must be non-decreasing with severity, got {ws}")

    def __getitem__(self, code: int) -> int:
        return (self.low, self.medium, self.high)[int(code) - 1]

    def as_tuple(self) -> tuple[int, int, int]:
        return self.low, self.medium, self.high


UNIT_WEIGHTS = SamplingWeights(1, 1, 1)


def default_weights(codes: Sequence[int]) -> SamplingWeights:
    """Inverse-frequency weights relative to the low class, capped at 10."""
    codes = np.asarray(codes)
    n_low = int(np.sum(codes == 1))

    def weight(code: int) -> int:
        n = int(np.sum(codes == code))
        if n == 0:
            return 1
        return min(max(math.ceil(n_low / n), 1), _MAX_WEIGHT)

    medium = weight(2)
    return SamplingWeights(1, medium, max(medium, weight(3)))


def _check_codes(codes: np.ndarray) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.int64)
    if codes.size and not np.isin(codes, (1, 2, 3)).all():
        raise ValueError("severity training rows must all be anomalous (codes 1..3)")
    return codes


def weighted_oversample(
    X: np.ndarray, codes: Sequence[int], weights: SamplingWeights
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Repeat every row ``weights[code]`` times, replicas adjacent to their source.

    Returns ``(X_rep, codes_rep, source_index)``.
    """
    X = np.asarray(X, dtype=np.float64)
    codes = _check_codes(codes)
    if len(codes) == 0:
        return X.reshape(0, X.shape[1] if X.ndim == 2 else 0), codes, np.empty(0, dtype=np.int64)
    reps = np.array([weights[c] for c in codes], dtype=np.int64)
    source = np.repeat(np.arange(len(codes)), reps)
    return X[source], codes[source], source


@dataclass(frozen=True)
class SeverityKnnModel:
    X: np.ndarray
    codes: np.ndarray
    weights: SamplingWeights
    k: int = K

    def __post_init__(self):
        if self.k != K:
            raise ValueError("the severity model uses exactly k = 3 neighbours")

    def __len__(self) -> int:
        return len(self.codes)

    def neighbours(self, x: np.ndarray) -> np.ndarray:
        """Indices of the k nearest training rows; equal distances go to the lower index."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.X.shape[1],):
            raise ValueError(f"expected a vector of length {self.X.shape[1]}, got shape {x.shape}")
        d2 = np.sum((self.X - x) ** 2, axis=1)
        return np.argsort(d2, kind="stable")[: self.k]

    def predict(self, Q: np.ndarray, chunk: int = 256) -> np.ndarray:
        """Severity codes for every row of ``Q``."""
        Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
        if Q.shape[1] != self.X.shape[1]:
            raise ValueError(f"expected {self.X.shape[1]} features, got {Q.shape[1]}")
        out = np.empty(len(Q), dtype=np.int64)
        for s in range(0, len(Q), chunk):
            q = Q[s: s + chunk]
            d2 = np.sum((q[:, None, :] - self.X[None, :, :]) ** 2, axis=2)
            nn = np.argsort(d2, axis=1, kind="stable")[:, : self.k]
            out[s: s + chunk] = round_half_up(self.codes[nn].sum(axis=1), self.k)
        return out

    def to_state(self) -> dict:
        return {"X": self.X, "codes": self.codes, "weights": list(self.weights.as_tuple()), "k": self.k}

    @classmethod
    def from_state(cls, state: dict) -> "SeverityKnnModel":
        return cls(np.asarray(state["X"], dtype=np.float64), np.asarray(state["codes"], dtype=np.int64),
                   SamplingWeights(*state["weights"]), int(state["k"]))


def round_half_up(total: np.ndarray, k: int) -> np.ndarray:
    """``floor(total / k + 1/2)`` in exact integer arithmetic."""
    return (2 * np.asarray(total, dtype=np.int64) + k) // (2 * k)


def fit_knn_severity(
    X: np.ndarray, codes: Sequence[int], weights: SamplingWeights | None = None
) -> SeverityKnnModel:
    """Oversample the anomalous rows and store them for 3-NN grading.

    ``weights=None`` derives :func:`default_weights` from ``codes``.
    """
    codes = _check_codes(codes)
    if weights is None:
        weights = default_weights(codes)
    X_rep, codes_rep, _ = weighted_oversample(X, codes, weights)
    if len(codes_rep) < K:
        raise ValueError(f"severity model needs at least {K} rows after oversampling, got {len(codes_rep)}")
    return SeverityKnnModel(np.ascontiguousarray(X_rep), codes_rep, weights)


def predict_severity(model: SeverityKnnModel, x: np.ndarray) -> SeverityLevel:
    nn = model.neighbours(x)
    return SeverityLevel(int(round_half_up(model.codes[nn].sum(), model.k)))
