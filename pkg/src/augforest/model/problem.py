from collections.abc import Sequence

import numpy as np
from attrs import frozen

from augforest.data.dataset import Dataset, GroupData
from augforest.errors import ModelError
from augforest.model.encoder import GraphEncoder
from augforest.model.spec import DEFAULT_L2, Batch, LossKind, ModelSpec
from augforest.policy.tree import AugTree, PathRealization, apply_path, apply_policy
from augforest.seeding import derive_seed
from augforest.transforms.graph import Graph
from augforest.transforms.registry import Domain, Registry, Sample

DEFAULT_ENCODER_ROUNDS = 2


@frozen
class Problem:
    """A model spec together with the transforms and featurization it trains with."""

    spec: ModelSpec
    registry: Registry
    encoder: GraphEncoder | None = None

    def featurize(self, samples: Sequence[Sample] | np.ndarray) -> np.ndarray:
        if self.encoder is not None:
            graphs = list(samples)
            if graphs and not isinstance(graphs[0], Graph):
                raise ModelError("A graph problem needs graph samples")
            return self.encoder.encode_many(graphs)
        features = np.asarray(samples, dtype=np.float64)
        return features.reshape(len(features), -1) if len(features) else np.zeros((0, self.spec.input_dim))

    def augment_sampled(
        self, tree: AugTree | None, samples: Sequence[Sample] | np.ndarray, seeds: Sequence[int]
    ) -> np.ndarray:
        """Featurize each sample after one draw of the tree's policy."""
        if tree is None or not tree.nodes:
            return self.featurize(samples)
        augmented = [
            apply_policy(tree, sample, self.registry, seed)
            for sample, seed in zip(samples, seeds, strict=True)
        ]
        return self.featurize(augmented)

    def augment_path(
        self, path: PathRealization, samples: Sequence[Sample] | np.ndarray, seeds: Sequence[int]
    ) -> np.ndarray:
        """Featurize each sample after one fixed path of transforms."""
        if not path.applied:
            return self.featurize(samples)
        augmented = [
            apply_path(path, sample, self.registry, seed)
            for sample, seed in zip(samples, seeds, strict=True)
        ]
        return self.featurize(augmented)

    def batch(
        self,
        data: GroupData,
        tree: AugTree | None = None,
        rng_seed: int = 0,
        weight: float | None = None,
    ) -> Batch:
        """All rows of a group, augmented once, optionally carrying a total weight."""
        features = self.augment_sampled(tree, data.samples, example_seeds(rng_seed, range(len(data))))
        weights = None if weight is None else np.full(len(data), weight / len(data))
        return Batch(features, data.labels, weights)


def example_seeds(rng_seed: int, positions: Sequence[int] | np.ndarray) -> list[int]:
    """
    Per-example seeds keyed by position within the group, so two groups
    holding the same rows draw the same augmentations.
    """
    return [derive_seed(rng_seed, int(i)) for i in positions]


def make_problem(
    dataset: Dataset,
    registry: Registry,
    hidden_dim: int = 0,
    l2: float = DEFAULT_L2,
    encoder_rounds: int = DEFAULT_ENCODER_ROUNDS,
) -> Problem:
    encoder = None
    if dataset.domain is Domain.GRAPH:
        encoder = GraphEncoder(dataset.feature_dim, encoder_rounds)
        input_dim = encoder.output_dim
    else:
        input_dim = dataset.feature_dim
    spec = ModelSpec(
        input_dim=input_dim,
        num_outputs=dataset.num_classes,
        hidden_dim=hidden_dim,
        loss=LossKind.MULTILABEL if dataset.multilabel else LossKind.SOFTMAX,
        l2=l2,
    )
    return Problem(spec, registry, encoder)
