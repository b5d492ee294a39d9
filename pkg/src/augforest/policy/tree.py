"""
Probabilistic binary augmentation trees.

Nodes live in a sparse heap-indexed map: node i has children 2i and 2i+1.
Traversal from the root:

- the root is applied with probability p_1 and skipped otherwise; either way
  traversal continues into its children;
- at a full sibling pair exactly one child is selected (left with p_2i,
  right with p_2i+1 = 1 - p_2i), applied, and traversal continues below it;
- a lone child c is applied with probability p_c, otherwise traversal stops;
- reaching an identity node stops traversal.
"""

from collections.abc import Iterator, Mapping
from types import MappingProxyType
from typing import Any

import numpy as np
from attrs import field, frozen

from augforest.errors import InvalidTreeError, Violation, ViolationKind
from augforest.policy.refs import TransformRef
from augforest.seeding import derive_seed
from augforest.transforms.registry import Registry, Sample

DEFAULT_D_MAX = 8
SIBLING_TOLERANCE = 1e-12


@frozen
class TreeNode:
    index: int
    transform: TransformRef
    prob: float = field(converter=float)


def depth_of(index: int) -> int:
    return index.bit_length()


def sibling_of(index: int) -> int:
    return index ^ 1


def validate(
    tree: 'AugTree | Mapping[int, TreeNode]',
    d_max: int | None = None,
    registry: Registry | None = None,
) -> Violation | None:
    """Return the first violated tree invariant, or None when the tree is valid."""
    if isinstance(tree, AugTree):
        nodes: Mapping[int, TreeNode] = tree.nodes
        d_max = tree.d_max if d_max is None else d_max
    else:
        nodes = tree
    if not nodes:
        return None
    for key in sorted(nodes):
        node = nodes[key]
        if key < 1:
            return Violation(ViolationKind.BAD_INDEX, key)
        if node.index != key:
            return Violation(ViolationKind.INDEX_MISMATCH, key)
        if not 0.0 <= node.prob <= 1.0:
            return Violation(ViolationKind.PROB_RANGE, key, f"p={node.prob}")
        if d_max is not None and depth_of(key) > d_max:
            return Violation(ViolationKind.TOO_DEEP, key, f"d_max={d_max}")
        if registry is not None:
            problem = registry.check(node.transform)
            if problem is not None:
                return Violation(problem.kind, key, problem.detail)
    if 1 not in nodes:
        return Violation(ViolationKind.MISSING_ROOT)
    for key in sorted(nodes):
        if key > 1 and key // 2 not in nodes:
            return Violation(ViolationKind.MISSING_PARENT, key)
        if key % 2 == 0 and key + 1 in nodes:
            total = nodes[key].prob + nodes[key + 1].prob
            if abs(total - 1.0) > SIBLING_TOLERANCE:
                return Violation(ViolationKind.SIBLING_SUM, key, f"{nodes[key].prob}+{nodes[key + 1].prob}")
    return None


def _freeze_nodes(value: Mapping[int, TreeNode] | Any) -> Mapping[int, TreeNode]:
    if isinstance(value, Mapping):
        items = dict(value)
    else:
        items = {node.index: node for node in value}
    return MappingProxyType(dict(sorted(items.items())))


@frozen(eq=False)
class AugTree:
    """An immutable, validated augmentation tree."""

    nodes: Mapping[int, TreeNode] = field(factory=dict, converter=_freeze_nodes)
    d_max: int = DEFAULT_D_MAX

    def __attrs_post_init__(self) -> None:
        violation = validate(self.nodes, self.d_max)
        if violation is not None:
            raise InvalidTreeError(violation)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AugTree):
            return NotImplemented
        return self.d_max == other.d_max and dict(self.nodes) == dict(other.nodes)

    def __hash__(self) -> int:
        return hash((self.d_max, tuple(self.nodes.values())))

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self) -> Iterator[TreeNode]:
        return iter(self.nodes.values())

    def __contains__(self, index: object) -> bool:
        return index in self.nodes

    @property
    def depth(self) -> int:
        return depth_of(max(self.nodes)) if self.nodes else 0

    def get(self, index: int) -> TreeNode | None:
        return self.nodes.get(index)

    def with_node(self, node: TreeNode) -> 'AugTree':
        nodes = dict(self.nodes)
        nodes[node.index] = node
        return AugTree(nodes, self.d_max)

    def transforms(self) -> set[TransformRef]:
        return {node.transform for node in self.nodes.values()}

    def pruned(self) -> 'AugTree':
        """Drop sibling pairs that are both identity; they stop traversal either way."""
        nodes = dict(self.nodes)
        for index in sorted(self.nodes, reverse=True):
            if index % 2 == 0 and index + 1 in nodes and index in nodes:
                left, right = nodes[index], nodes[index + 1]
                if left.transform.is_identity and right.transform.is_identity:
                    del nodes[index]
                    del nodes[index + 1]
        return AugTree(nodes, self.d_max)


EMPTY_TREE = AugTree()


def sequence_tree(steps: list[tuple[TransformRef, float]], d_max: int | None = None) -> AugTree:
    """
    A chain where each step is applied independently with its probability.

    Step k sits at heap index 2^k (always a lone left child), so a skipped step
    passes its input through unchanged, like a skip connection.
    """
    nodes = {1 << k: TreeNode(1 << k, ref, p) for k, (ref, p) in enumerate(steps)}
    return AugTree(nodes, d_max if d_max is not None else max(len(steps), 1))


@frozen
class PathRealization:
    applied: tuple[TransformRef, ...]
    probability: float
    node_indices: tuple[int, ...] = ()


def _children(tree: AugTree, index: int) -> tuple[TreeNode | None, TreeNode | None]:
    return tree.get(2 * index), tree.get(2 * index + 1)


def enumerate_paths(tree: AugTree) -> list[PathRealization]:
    """All traversal outcomes with their probabilities; they sum to one."""
    if not tree.nodes:
        return [PathRealization((), 1.0)]
    out: list[PathRealization] = []

    def emit(applied: list[TreeNode], prob: float) -> None:
        if prob <= 0.0:
            return
        out.append(
            PathRealization(
                tuple(n.transform for n in applied), prob, tuple(n.index for n in applied)
            )
        )

    def enter(node: TreeNode, applied: list[TreeNode], prob: float) -> None:
        # node has been selected (or is a lone child that fired)
        if node.transform.is_identity:
            emit(applied, prob)
            return
        descend(node.index, [*applied, node], prob)

    def descend(index: int, applied: list[TreeNode], prob: float) -> None:
        left, right = _children(tree, index)
        if left is not None and right is not None:
            enter(left, applied, prob * left.prob)
            enter(right, applied, prob * right.prob)
        elif left is not None or right is not None:
            child = left if left is not None else right
            assert child is not None
            if child.transform.is_identity:
                emit(applied, prob)
                return
            enter(child, applied, prob * child.prob)
            emit(applied, prob * (1.0 - child.prob))
        else:
            emit(applied, prob)

    root = tree.nodes[1]
    if root.transform.is_identity:
        emit([], 1.0)
    else:
        descend(1, [root], root.prob)
        descend(1, [], 1.0 - root.prob)
    return out


def sample_path(tree: AugTree, rng_seed: int | np.random.Generator) -> PathRealization:
    """Draw one traversal; deterministic for a given integer seed."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    if not tree.nodes:
        return PathRealization((), 1.0)
    applied: list[TreeNode] = []
    prob = 1.0
    root = tree.nodes[1]
    if root.transform.is_identity:
        return PathRealization((), 1.0)
    if rng.random() < root.prob:
        applied.append(root)
        prob *= root.prob
    else:
        prob *= 1.0 - root.prob
    index = 1
    while True:
        left, right = _children(tree, index)
        if left is not None and right is not None:
            chosen = left if rng.random() < left.prob else right
            prob *= chosen.prob
        elif left is not None or right is not None:
            chosen = left if left is not None else right
            assert chosen is not None
            if chosen.transform.is_identity:
                break
            if rng.random() < chosen.prob:
                prob *= chosen.prob
            else:
                prob *= 1.0 - chosen.prob
                break
        else:
            break
        if chosen.transform.is_identity:
            break
        applied.append(chosen)
        index = chosen.index
    return PathRealization(
        tuple(n.transform for n in applied), prob, tuple(n.index for n in applied)
    )


def apply_path(
    path: PathRealization, sample: Sample, registry: Registry, rng_seed: int
) -> Sample:
    """Apply a realized path left to right; node i's randomness comes from (seed, i)."""
    out = sample
    for ref, index in zip(path.applied, path.node_indices, strict=True):
        out = registry.apply(ref, out, derive_seed(rng_seed, index))
    return out


def draw_path(tree: AugTree, rng_seed: int) -> PathRealization:
    """The path apply_policy realizes for this seed."""
    return sample_path(tree, derive_seed(rng_seed, 0))


def apply_policy(tree: AugTree, sample: Sample, registry: Registry, rng_seed: int) -> Sample:
    path = draw_path(tree, rng_seed)
    return apply_path(path, sample, registry, rng_seed)
