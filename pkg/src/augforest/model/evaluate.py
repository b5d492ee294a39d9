"""
Expected loss of a frozen model under an augmentation tree.

Exact mode weights every path's loss by its probability. Monte-Carlo mode
draws R paths per example by mapping shared uniforms through the cumulative
path probabilities, so two trees evaluated with one Evaluator are compared on
the same draws. In both modes node i's transform randomness for example j
comes from (seed_j, i), which makes the Monte-Carlo estimate an unbiased
draw of the exact value.
"""

import math
from enum import Enum

import numpy as np
from attrs import frozen

from augforest.data.dataset import GroupData
from augforest.errors import ModelError
from augforest.model.network import example_losses
from augforest.model.problem import Problem, example_seeds
from augforest.policy.refs import TransformRef
from augforest.policy.tree import AugTree, PathRealization, enumerate_paths
from augforest.seeding import derive_seed

# keys the shared Monte-Carlo uniforms apart from per-example seeds
_MC_STREAM = 1 << 40

type PathKey = tuple[tuple[int, TransformRef], ...]


class EvalKind(Enum):
    EXACT = 'exact'
    MC = 'mc'


@frozen
class EvalMode:
    kind: EvalKind = EvalKind.EXACT
    samples: int = 1

    @classmethod
    def parse(cls, text: str) -> 'EvalMode':
        """'exact', 'mc' or 'mc:R'."""
        name, _, count = text.partition(':')
        try:
            kind = EvalKind(name.strip().lower())
            samples = int(count) if count else (1 if kind is EvalKind.EXACT else 100)
        except ValueError:
            raise ModelError(f"Unknown evaluation mode {text!r}, expected exact or mc:R") from None
        if samples < 1:
            raise ModelError(f"Monte-Carlo sample count must be positive, got {samples}")
        return cls(kind, samples)

    def __str__(self) -> str:
        return 'exact' if self.kind is EvalKind.EXACT else f"mc:{self.samples}"


EXACT = EvalMode()


@frozen
class Estimate:
    value: float
    # standard error of the Monte-Carlo mean; 0 in exact mode
    stderr: float = 0.0
    replicate_std: float = 0.0


def path_key(path: PathRealization) -> PathKey:
    return tuple(zip(path.node_indices, path.applied, strict=True))


class Evaluator:
    """Caches per-example losses of each path for one (model, data, seed)."""

    def __init__(self, problem: Problem, theta: np.ndarray, data: GroupData, rng_seed: int | None) -> None:
        if len(data) == 0:
            raise ModelError("Cannot evaluate on an empty set")
        self.problem = problem
        self.theta = np.asarray(theta, dtype=np.float64)
        self.data = data
        self.rng_seed = rng_seed
        self._seeds = example_seeds(rng_seed if rng_seed is not None else 0, range(len(data)))
        self._cache: dict[PathKey, np.ndarray] = {}

    @property
    def paths_computed(self) -> int:
        return len(self._cache)

    def path_losses(self, path: PathRealization) -> np.ndarray:
        key = path_key(path)
        cached = self._cache.get(key)
        if cached is None:
            features = self.problem.augment_path(path, self.data.samples, self._seeds)
            cached = example_losses(self.problem.spec, self.theta, features, self.data.labels)
            self._cache[key] = cached
        return cached

    def plain_loss(self) -> float:
        return float(np.mean(self.path_losses(PathRealization((), 1.0))))

    def exact(self, tree: AugTree) -> Estimate:
        if self.rng_seed is None and any(
            self.problem.registry.is_stochastic(ref) for ref in tree.transforms() if not ref.is_identity
        ):
            raise ModelError("Exact evaluation of stochastic transforms needs a per-example seed")
        total = math.fsum(p.probability * float(np.mean(self.path_losses(p))) for p in enumerate_paths(tree))
        return Estimate(total)

    def monte_carlo(self, tree: AugTree, replicates: int) -> Estimate:
        paths = enumerate_paths(tree)
        if len(paths) == 1:
            return Estimate(float(np.mean(self.path_losses(paths[0]))))
        cdf = np.cumsum([p.probability for p in paths])
        cdf[-1] = 1.0
        seed = self.rng_seed if self.rng_seed is not None else int(np.random.SeedSequence().entropy % (1 << 62))
        uniforms = np.random.default_rng(derive_seed(seed, _MC_STREAM)).random((replicates, len(self.data)))
        chosen = np.minimum(np.searchsorted(cdf, uniforms, side='right'), len(paths) - 1)
        losses = np.empty_like(uniforms)
        for position in np.unique(chosen):
            mask = chosen == position
            per_example = self.path_losses(paths[int(position)])
            losses[mask] = np.broadcast_to(per_example, uniforms.shape)[mask]
        replicate_means = losses.mean(axis=1)
        spread = float(np.std(replicate_means, ddof=1)) if replicates > 1 else 0.0
        return Estimate(float(replicate_means.mean()), spread / math.sqrt(replicates), spread)

    def evaluate(self, tree: AugTree, mode: EvalMode = EXACT) -> Estimate:
        if mode.kind is EvalKind.EXACT:
            return self.exact(tree)
        return self.monte_carlo(tree, mode.samples)


def group_loss(
    problem: Problem,
    theta: np.ndarray,
    data: GroupData,
    tree: AugTree,
    mode: EvalMode = EXACT,
    rng_seed: int | None = 0,
) -> float:
    """Expected data loss of a group under the tree's augmentation distribution."""
    return Evaluator(problem, theta, data, rng_seed).evaluate(tree, mode).value
