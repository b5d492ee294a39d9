import json
from pathlib import Path

import pytest

from augforest.errors import PolicyError
from augforest.policy.forest import Forest
from augforest.policy.io import (
    dump_forest,
    dump_tree,
    dumps_tree,
    load_forest,
    load_policy,
    load_tree,
    loads_tree,
    to_dot,
)
from augforest.policy.refs import IDENTITY, TransformRef
from augforest.policy.tree import EMPTY_TREE, AugTree, TreeNode
from augforest.transforms.registry import Registry

TREE = AugTree(
    {
        1: TreeNode(1, TransformRef("rotate2d", 1), 0.75),
        2: TreeNode(2, TransformRef("jitter", 2), 0.25),
        3: TreeNode(3, IDENTITY, 0.75),
    },
    d_max=3,
)


def test_tree_file_round_trip(tmp_path: Path) -> None:
    path = tmp_path / "tree.json"
    dump_tree(TREE, path)
    assert load_tree(path) == TREE
    assert load_policy(path) == TREE


def test_tree_document_layout() -> None:
    doc = json.loads(dumps_tree(TREE))
    assert doc["version"] == 1
    assert doc["d_max"] == 3
    assert doc["nodes"][0] == {"index": 1, "transform_id": "rotate2d", "magnitude_level": 1, "prob": 0.75}
    assert doc["nodes"][2]["magnitude_level"] is None


def test_dumped_tree_drops_identity_pairs() -> None:
    tree = AugTree(
        {1: TreeNode(1, TransformRef("rotate2d", 1), 0.5), 2: TreeNode(2, IDENTITY, 0.5), 3: TreeNode(3, IDENTITY, 0.5)},
        d_max=2,
    )
    assert [n["index"] for n in json.loads(dumps_tree(tree))["nodes"]] == [1]


def test_forest_file_round_trip(tmp_path: Path) -> None:
    forest = Forest(((1, TREE), (2, EMPTY_TREE)), (0.3, 0.7))
    path = tmp_path / "forest.json"
    dump_forest(forest, path)
    assert load_forest(path) == forest
    assert load_policy(path) == forest


@pytest.mark.parametrize(
    "text",
    [
        "not json",
        '{"version": 1, "d_max": 2}',
        '{"version": 2, "d_max": 2, "nodes": []}',
        '{"version": 1, "d_max": 2, "nodes": [], "extra": 1}',
    ],
)
def test_malformed_tree_documents(text: str) -> None:
    with pytest.raises(PolicyError):
        loads_tree(text)


def test_invalid_tree_document_is_a_policy_error() -> None:
    text = json.dumps(
        {
            "version": 1,
            "d_max": 2,
            "nodes": [{"index": 2, "transform_id": "jitter", "magnitude_level": 0, "prob": 0.5}],
        }
    )
    with pytest.raises(PolicyError, match="root"):
        loads_tree(text)


def test_to_dot(vector_registry: Registry) -> None:
    dot = to_dot(TREE, vector_registry, "g1")
    assert dot.startswith("digraph g1 {")
    assert 'n1 [label="Rotate2D(0.5) p=0.75", shape=ellipse];' in dot
    assert 'n3 [label="Identity p=0.75", shape=doublecircle];' in dot
    assert "n1 -> n2" in dot
