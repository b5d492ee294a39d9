from enum import Enum
from typing import Any

import numpy as np
from attrs import cmp_using, field, frozen

from augforest.errors import ModelError

DEFAULT_L2 = 1e-3


class LossKind(Enum):
    SOFTMAX = 'softmax'
    MULTILABEL = 'multilabel'


def _positive(instance: Any, attribute: Any, value: int) -> None:
    if value < 1:
        raise ModelError(f"{attribute.name} must be positive, got {value}")


def _nonnegative(instance: Any, attribute: Any, value: float) -> None:
    if value < 0:
        raise ModelError(f"{attribute.name} must be >= 0, got {value}")


@frozen
class ModelSpec:
    """
    A linear (hidden_dim == 0) or one-hidden-layer tanh classifier.

    Parameters are one flat vector. Linear layout: W (C x d) then b (C).
    Hidden layout: W1 (h x d), b1 (h), W2 (C x h), b2 (C).
    """

    input_dim: int = field(validator=_positive)
    num_outputs: int = field(validator=_positive)
    hidden_dim: int = field(default=0, validator=_nonnegative)
    loss: LossKind = LossKind.SOFTMAX
    l2: float = field(default=DEFAULT_L2, converter=float, validator=_nonnegative)

    @property
    def param_count(self) -> int:
        d, h, c = self.input_dim, self.hidden_dim, self.num_outputs
        if h == 0:
            return c * d + c
        return h * d + h + c * h + c


def _as_matrix(value: Any) -> np.ndarray:
    array = np.asarray(value, dtype=np.float64)
    if array.ndim == 1:
        array = array.reshape(1, -1)
    return array


def _as_weights(value: Any) -> np.ndarray | None:
    if value is None:
        return None
    return np.asarray(value, dtype=np.float64).reshape(-1)


@frozen
class Batch:
    """Featurized rows with labels and optional per-row weights (default uniform)."""

    features: np.ndarray = field(converter=_as_matrix, eq=cmp_using(eq=np.array_equal))
    labels: np.ndarray = field(converter=np.asarray, eq=cmp_using(eq=np.array_equal))
    weights: np.ndarray | None = field(
        default=None, converter=_as_weights, eq=cmp_using(eq=np.array_equal)
    )

    def __attrs_post_init__(self) -> None:
        n = self.features.shape[0]
        if len(self.labels) != n:
            raise ModelError(f"Batch has {n} rows but {len(self.labels)} labels")
        if self.weights is not None and len(self.weights) != n:
            raise ModelError(f"Batch has {n} rows but {len(self.weights)} weights")

    def __len__(self) -> int:
        return int(self.features.shape[0])

    def normalized_weights(self) -> np.ndarray:
        n = len(self)
        if self.weights is None:
            return np.full(n, 1.0 / n)
        total = self.weights.sum()
        if total <= 0:
            raise ModelError("Batch weights must have a positive sum")
        return self.weights / total

    def take(self, rows: np.ndarray) -> 'Batch':
        return Batch(
            self.features[rows],
            self.labels[rows],
            None if self.weights is None else self.weights[rows],
        )


def concat_batches(batches: list[Batch]) -> Batch:
    weights = None
    if any(b.weights is not None for b in batches):
        weights = np.concatenate(
            [b.weights if b.weights is not None else np.ones(len(b)) for b in batches]
        )
    return Batch(
        np.concatenate([b.features for b in batches]),
        np.concatenate([b.labels for b in batches]),
        weights,
    )
