"""JSON and DOT serialization of trees and forests."""

import json
from pathlib import Path
from typing import Any

from attrs import frozen
from cattrs import Converter
from cattrs.errors import BaseValidationError, ForbiddenExtraKeysError

from augforest.errors import PolicyError
from augforest.policy.forest import Forest
from augforest.policy.refs import TransformRef
from augforest.policy.tree import AugTree, TreeNode
from augforest.transforms.registry import Registry

FORMAT_VERSION = 1

SERIALIZER = Converter(forbid_extra_keys=True)


@frozen
class NodeDocument:
    index: int
    transform_id: str
    magnitude_level: int | None
    prob: float


@frozen
class TreeDocument:
    version: int
    d_max: int
    nodes: list[NodeDocument]


@frozen
class ForestEntry:
    group_id: int
    tree: TreeDocument


@frozen
class ForestDocument:
    version: int
    weights: list[float]
    trees: list[ForestEntry]


def tree_to_document(tree: AugTree) -> TreeDocument:
    tree = tree.pruned()
    return TreeDocument(
        version=FORMAT_VERSION,
        d_max=tree.d_max,
        nodes=[
            NodeDocument(
                node.index,
                node.transform.transform_id,
                node.transform.magnitude_level,
                node.prob,
            )
            for node in tree
        ],
    )


def tree_from_document(doc: TreeDocument) -> AugTree:
    if doc.version != FORMAT_VERSION:
        raise PolicyError(f"Unsupported tree format version {doc.version}")
    nodes = {
        n.index: TreeNode(n.index, TransformRef(n.transform_id, n.magnitude_level), n.prob)
        for n in doc.nodes
    }
    if len(nodes) != len(doc.nodes):
        raise PolicyError("Tree document repeats a node index")
    return AugTree(nodes, doc.d_max)


def forest_to_document(forest: Forest) -> ForestDocument:
    return ForestDocument(
        version=FORMAT_VERSION,
        weights=list(forest.weights),
        trees=[ForestEntry(gid, tree_to_document(tree)) for gid, tree in forest.trees],
    )


def forest_from_document(doc: ForestDocument) -> Forest:
    if doc.version != FORMAT_VERSION:
        raise PolicyError(f"Unsupported forest format version {doc.version}")
    return Forest(
        tuple((entry.group_id, tree_from_document(entry.tree)) for entry in doc.trees),
        tuple(doc.weights),
    )


def _structure[T](obj: Any, cls: type[T]) -> T:
    try:
        return SERIALIZER.structure(obj, cls)
    except (BaseValidationError, ForbiddenExtraKeysError, KeyError, TypeError, ValueError) as e:
        raise PolicyError(f"Malformed {cls.__name__}: {e}") from e


def dumps_tree(tree: AugTree) -> str:
    return json.dumps(SERIALIZER.unstructure(tree_to_document(tree)), indent=2)


def loads_tree(text: str) -> AugTree:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise PolicyError(f"Tree file is not valid JSON: {e}") from e
    return tree_from_document(_structure(obj, TreeDocument))


def dumps_forest(forest: Forest) -> str:
    return json.dumps(SERIALIZER.unstructure(forest_to_document(forest)), indent=2)


def loads_forest(text: str) -> Forest:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise PolicyError(f"Forest file is not valid JSON: {e}") from e
    return forest_from_document(_structure(obj, ForestDocument))


def dump_tree(tree: AugTree, path: Path) -> None:
    path.write_text(dumps_tree(tree) + '\n')


def load_tree(path: Path) -> AugTree:
    return loads_tree(path.read_text())


def dump_forest(forest: Forest, path: Path) -> None:
    path.write_text(dumps_forest(forest) + '\n')


def load_forest(path: Path) -> Forest:
    return loads_forest(path.read_text())


def load_policy(path: Path) -> AugTree | Forest:
    """Load either a tree or a forest file, telling them apart by their keys."""
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise PolicyError(f"{path} is not valid JSON: {e}") from e
    if isinstance(obj, dict) and 'trees' in obj:
        return forest_from_document(_structure(obj, ForestDocument))
    return tree_from_document(_structure(obj, TreeDocument))


def to_dot(tree: AugTree, registry: Registry, name: str = 'policy') -> str:
    lines = [f'digraph {name} {{']
    for node in tree:
        shape = 'doublecircle' if node.transform.is_identity else 'ellipse'
        label = f"{registry.label(node.transform)} p={node.prob:g}"
        lines.append(f'  n{node.index} [label="{label}", shape={shape}];')
    for node in tree:
        if node.index > 1:
            lines.append(f'  n{node.index // 2} -> n{node.index} [style=solid];')
    lines.append('}')
    return '\n'.join(lines) + '\n'
