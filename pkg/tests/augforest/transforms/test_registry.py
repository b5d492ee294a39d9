from pathlib import Path

import numpy as np
import pytest

from augforest.errors import DomainMismatchError, TransformError, UnknownTransformError, ViolationKind
from augforest.policy.refs import IDENTITY, TransformRef
from augforest.transforms.graph import complete_graph
from augforest.transforms.registry import (
    IDENTITY_TRANSFORM,
    Registry,
    default_graph_registry,
    dump_manifest,
    load_manifest,
    make_transformation,
    registry_from_manifest,
)


def test_vector_registry_candidates(vector_registry: Registry) -> None:
    candidates = vector_registry.candidates()
    assert candidates[0] == IDENTITY
    assert TransformRef("rotate2d", 3) in candidates
    assert len(candidates) == 1 + 4 + 3 + 3 + 3 + 2


def test_graph_registry_candidates() -> None:
    registry = default_graph_registry()
    assert len(registry.candidates()) == 1 + 4 * 5
    assert registry.magnitude(TransformRef("drop_nodes", 4)) == 0.5


def test_label(vector_registry: Registry) -> None:
    assert vector_registry.label(TransformRef("rotate2d", 3)) == "Rotate2D(1)"
    assert vector_registry.label(TransformRef("jitter", 1)) == "Jitter(0.1)"
    assert vector_registry.label(IDENTITY) == "Identity"


def test_position_is_registration_order(vector_registry: Registry) -> None:
    assert vector_registry.position(IDENTITY) == 0
    assert vector_registry.position(TransformRef("axis_flip", 0)) == 5
    with pytest.raises(UnknownTransformError):
        vector_registry.position(TransformRef("warp", 0))


def test_check(vector_registry: Registry) -> None:
    assert vector_registry.check(TransformRef("jitter", 2)) is None
    assert vector_registry.check(IDENTITY) is None
    bad = vector_registry.check(TransformRef("jitter", 3))
    assert bad is not None
    assert bad.kind == ViolationKind.BAD_MAGNITUDE
    missing = vector_registry.check(TransformRef("jitter"))
    assert missing is not None
    assert missing.kind == ViolationKind.BAD_MAGNITUDE


def test_apply_checks_domain(vector_registry: Registry) -> None:
    with pytest.raises(DomainMismatchError):
        vector_registry.apply(TransformRef("rotate2d", 0), complete_graph(3), 0)
    graph = complete_graph(3)
    assert vector_registry.apply(IDENTITY, graph, 0) == graph


def test_stochastic_flags(vector_registry: Registry) -> None:
    assert vector_registry.is_stochastic(TransformRef("jitter", 0))
    assert not vector_registry.is_stochastic(TransformRef("rotate2d", 0))


def test_registry_rejects_duplicates() -> None:
    with pytest.raises(TransformError, match="unique"):
        Registry([IDENTITY_TRANSFORM, IDENTITY_TRANSFORM])


@pytest.mark.parametrize("magnitudes", [(0.0,), (0.5, 0.25), (1.5,)])
def test_magnitudes_are_validated(magnitudes: tuple[float, ...]) -> None:
    with pytest.raises(TransformError):
        make_transformation("jitter", magnitudes)


def test_unknown_family() -> None:
    with pytest.raises(UnknownTransformError):
        make_transformation("warp", (0.5,))


def test_subset_keeps_order(vector_registry: Registry) -> None:
    subset = vector_registry.subset(["axis_flip", "identity", "jitter"])
    assert [t.transform_id for t in subset.transforms] == ["identity", "jitter", "axis_flip"]


def test_manifest_round_trip(tmp_path: Path, vector_registry: Registry) -> None:
    path = tmp_path / "registry.json"
    dump_manifest(vector_registry, path)
    loaded = load_manifest(path)
    assert loaded.candidates() == vector_registry.candidates()
    x = np.array([1.0, 0.0])
    ref = TransformRef("rotate2d", 1)
    np.testing.assert_array_equal(loaded.apply(ref, x, 0), vector_registry.apply(ref, x, 0))


def test_malformed_manifest() -> None:
    with pytest.raises(TransformError):
        registry_from_manifest({"version": 1})
