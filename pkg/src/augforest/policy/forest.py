import logging

import numpy as np
from attrs import field, frozen

from augforest.errors import PolicyError, UnknownGroupError
from augforest.policy.tree import AugTree, apply_policy
from augforest.seeding import derive_seed
from augforest.transforms.registry import Registry, Sample

logger = logging.getLogger(__name__)

SIMPLEX_TOLERANCE = 1e-12


def _as_trees(value: object) -> tuple[tuple[int, AugTree], ...]:
    return tuple((int(group_id), tree) for group_id, tree in value)  # type: ignore[attr-defined]


def _as_weights(value: object) -> tuple[float, ...]:
    return tuple(float(w) for w in value)  # type: ignore[attr-defined]


@frozen
class Forest:
    """Per-group augmentation trees plus a weight vector on the simplex."""

    trees: tuple[tuple[int, AugTree], ...] = field(converter=_as_trees)
    weights: tuple[float, ...] = field(converter=_as_weights)

    def __attrs_post_init__(self) -> None:
        if len(self.trees) != len(self.weights):
            raise PolicyError(
                f"Forest has {len(self.trees)} trees but {len(self.weights)} weights"
            )
        if not self.trees:
            raise PolicyError("A forest needs at least one tree")
        groups = self.group_ids
        if len(set(groups)) != len(groups):
            raise PolicyError(f"Forest group ids must be distinct, got {list(groups)}")
        if any(w < 0.0 or not np.isfinite(w) for w in self.weights):
            raise PolicyError(f"Forest weights must be nonnegative, got {self.weights}")
        total = float(np.sum(self.weights))
        if abs(total - 1.0) > SIMPLEX_TOLERANCE:
            raise PolicyError(f"Forest weights sum to {total!r}, not 1")

    @property
    def group_ids(self) -> tuple[int, ...]:
        return tuple(group_id for group_id, _ in self.trees)

    def tree_for(self, group_id: int) -> AugTree | None:
        for gid, tree in self.trees:
            if gid == group_id:
                return tree
        return None

    def weight_for(self, group_id: int) -> float:
        for (gid, _), weight in zip(self.trees, self.weights, strict=True):
            if gid == group_id:
                return weight
        raise UnknownGroupError(f"Group {group_id} is not in the forest")


def single_tree_forest(tree: AugTree, group_id: int = 1) -> Forest:
    return Forest(((group_id, tree),), (1.0,))


def choose_tree(forest: Forest, rng_seed: int) -> int:
    """Pick a group id with probability equal to its weight."""
    rng = np.random.default_rng(rng_seed)
    weights = np.asarray(forest.weights, dtype=np.float64)
    position = int(rng.choice(len(weights), p=weights / weights.sum()))
    return forest.group_ids[position]


def sample_from_forest(
    forest: Forest,
    group_id: int | None,
    sample: Sample,
    registry: Registry,
    rng_seed: int,
    mixture: bool = False,
) -> Sample:
    """
    Augment a sample with its group's tree.

    Groups missing from the forest are an error unless `mixture` is set, in
    which case a tree is drawn according to the forest weights.
    """
    tree = forest.tree_for(group_id) if group_id is not None else None
    if tree is None:
        if not mixture:
            raise UnknownGroupError(f"Group {group_id} is not in the forest")
        chosen = choose_tree(forest, derive_seed(rng_seed, 1))
        logger.debug(f"Group {group_id} unseen, using tree of group {chosen}")
        tree = forest.tree_for(chosen)
        assert tree is not None
    return apply_policy(tree, sample, registry, rng_seed)
