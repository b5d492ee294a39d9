from typing import Protocol

import numpy as np
from attrs import cmp_using, field, frozen

from augforest.model.network import batch_loss, grad, hvp
from augforest.model.spec import Batch, ModelSpec


class Objective(Protocol):
    """A twice-differentiable function of the parameter vector."""

    @property
    def dim(self) -> int: ...

    def value(self, theta: np.ndarray) -> float: ...

    def grad(self, theta: np.ndarray) -> np.ndarray: ...

    def hvp(self, theta: np.ndarray, v: np.ndarray) -> np.ndarray: ...

    def subsample(self, rng: np.random.Generator, size: int) -> 'Objective': ...


@frozen
class ModelObjective:
    spec: ModelSpec
    batch: Batch
    include_penalty: bool = False

    @property
    def dim(self) -> int:
        return self.spec.param_count

    def value(self, theta: np.ndarray) -> float:
        return batch_loss(self.spec, theta, self.batch, self.include_penalty)

    def grad(self, theta: np.ndarray) -> np.ndarray:
        return grad(self.spec, theta, self.batch, self.include_penalty)

    def hvp(self, theta: np.ndarray, v: np.ndarray) -> np.ndarray:
        return hvp(self.spec, theta, self.batch, v, self.include_penalty)

    def subsample(self, rng: np.random.Generator, size: int) -> 'ModelObjective':
        if size >= len(self.batch):
            return self
        rows = np.sort(rng.choice(len(self.batch), size=size, replace=False))
        return ModelObjective(self.spec, self.batch.take(rows), self.include_penalty)


@frozen
class QuadraticObjective:
    """1/2 (theta - center)^T A (theta - center) for a symmetric A."""

    matrix: np.ndarray = field(converter=np.asarray, eq=cmp_using(eq=np.array_equal))
    center: np.ndarray = field(converter=np.asarray, eq=cmp_using(eq=np.array_equal))

    @property
    def dim(self) -> int:
        return int(self.center.shape[0])

    def value(self, theta: np.ndarray) -> float:
        delta = np.asarray(theta) - self.center
        return 0.5 * float(delta @ self.matrix @ delta)

    def grad(self, theta: np.ndarray) -> np.ndarray:
        return self.matrix @ (np.asarray(theta) - self.center)

    def hvp(self, theta: np.ndarray, v: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(v)

    def subsample(self, rng: np.random.Generator, size: int) -> 'QuadraticObjective':
        return self


@frozen
class SumObjective:
    """sum_g weight_g * term_g."""

    terms: tuple[Objective, ...] = field(converter=tuple)
    weights: tuple[float, ...] = field(converter=tuple)

    @property
    def dim(self) -> int:
        return self.terms[0].dim

    def value(self, theta: np.ndarray) -> float:
        return float(sum(w * t.value(theta) for w, t in zip(self.weights, self.terms, strict=True)))

    def grad(self, theta: np.ndarray) -> np.ndarray:
        return sum((w * t.grad(theta) for w, t in zip(self.weights, self.terms, strict=True)), np.zeros(self.dim))

    def hvp(self, theta: np.ndarray, v: np.ndarray) -> np.ndarray:
        return sum((w * t.hvp(theta, v) for w, t in zip(self.weights, self.terms, strict=True)), np.zeros(self.dim))

    def subsample(self, rng: np.random.Generator, size: int) -> 'SumObjective':
        return SumObjective(tuple(t.subsample(rng, size) for t in self.terms), self.weights)
