import json
from collections.abc import Callable, Iterable
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
from attrs import field, frozen

from augforest.errors import (
    DomainMismatchError,
    TransformError,
    UnknownTransformError,
    Violation,
    ViolationKind,
)
from augforest.policy.refs import IDENTITY, IDENTITY_ID, TransformRef
from augforest.transforms import graph, vector
from augforest.transforms.graph import Graph

type Sample = np.ndarray | Graph
type TransformFn = Callable[[Any, float, int], Any]

GRAPH_MAGNITUDES = (0.1, 0.2, 0.3, 0.4, 0.5)


class Domain(Enum):
    VECTOR = 'vector'
    GRAPH = 'graph'
    ANY = 'any'


def sample_domain(sample: Sample) -> Domain:
    if isinstance(sample, Graph):
        return Domain.GRAPH
    return Domain.VECTOR


def _check_magnitudes(instance: 'Transformation', attribute: Any, value: tuple[float, ...]) -> None:
    if any(not 0.0 < m <= 1.0 for m in value):
        raise TransformError(f"{instance.transform_id}: magnitudes must lie in (0, 1]")
    if any(b <= a for a, b in zip(value, value[1:], strict=False)):
        raise TransformError(f"{instance.transform_id}: magnitudes must be strictly increasing")


@frozen
class Transformation:
    transform_id: str
    name: str
    domain: Domain
    magnitudes: tuple[float, ...] = field(converter=tuple, validator=_check_magnitudes)
    stochastic: bool = False
    fn: TransformFn | None = field(default=None, eq=False, repr=False)

    @property
    def is_identity(self) -> bool:
        return self.transform_id == IDENTITY_ID

    def refs(self) -> list[TransformRef]:
        if self.is_identity:
            return [IDENTITY]
        return [TransformRef(self.transform_id, level) for level in range(len(self.magnitudes))]


def _identity_fn(sample: Any, magnitude: float, rng_seed: int) -> Any:
    return sample.copy()


IDENTITY_TRANSFORM = Transformation(IDENTITY_ID, 'Identity', Domain.ANY, (), False, _identity_fn)

# id -> (display name, domain, stochastic, function)
FAMILIES: dict[str, tuple[str, Domain, bool, TransformFn]] = {
    'drop_nodes': ('DropNodes', Domain.GRAPH, True, graph.drop_nodes),
    'permute_edges': ('PermuteEdges', Domain.GRAPH, True, graph.permute_edges),
    'subgraph': ('Subgraph', Domain.GRAPH, True, graph.subgraph_random_walk),
    'mask_nodes': ('MaskNodes', Domain.GRAPH, True, graph.mask_node_features),
    'rotate2d': ('Rotate2D', Domain.VECTOR, False, vector.rotate2d),
    'jitter': ('Jitter', Domain.VECTOR, True, vector.jitter_gaussian),
    'scale': ('Scale', Domain.VECTOR, False, vector.scale_coords),
    'translate': ('Translate', Domain.VECTOR, False, vector.translate),
    'axis_flip': ('AxisFlip', Domain.VECTOR, False, vector.axis_flip),
}


def make_transformation(transform_id: str, magnitudes: Iterable[float]) -> Transformation:
    if transform_id == IDENTITY_ID:
        return IDENTITY_TRANSFORM
    try:
        name, domain, stochastic, fn = FAMILIES[transform_id]
    except KeyError:
        raise UnknownTransformError(f"Unknown transform family {transform_id!r}") from None
    return Transformation(transform_id, name, domain, tuple(magnitudes), stochastic, fn)


@frozen
class Registry:
    """An ordered set of transformations; order is the tie-break order of the search."""

    transforms: tuple[Transformation, ...] = field(converter=tuple)

    def __attrs_post_init__(self) -> None:
        ids = [t.transform_id for t in self.transforms]
        names = [t.name for t in self.transforms]
        if len(set(ids)) != len(ids):
            raise TransformError("Transform ids must be unique within a registry")
        if len(set(names)) != len(names):
            raise TransformError("Transform names must be unique within a registry")

    def get(self, transform_id: str) -> Transformation:
        for transform in self.transforms:
            if transform.transform_id == transform_id:
                return transform
        raise UnknownTransformError(f"Transform {transform_id!r} is not registered")

    def candidates(self) -> tuple[TransformRef, ...]:
        return tuple(ref for t in self.transforms for ref in t.refs())

    def subset(self, transform_ids: Iterable[str]) -> 'Registry':
        wanted = set(transform_ids)
        return Registry(t for t in self.transforms if t.transform_id in wanted)

    def position(self, ref: TransformRef) -> int:
        for index, transform in enumerate(self.transforms):
            if transform.transform_id == ref.transform_id:
                return index
        raise UnknownTransformError(f"Transform {ref.transform_id!r} is not registered")

    def check(self, ref: TransformRef) -> Violation | None:
        try:
            transform = self.get(ref.transform_id)
        except UnknownTransformError:
            return Violation(ViolationKind.UNKNOWN_TRANSFORM, detail=ref.transform_id)
        if transform.is_identity:
            if ref.magnitude_level is not None:
                return Violation(ViolationKind.BAD_MAGNITUDE, detail=str(ref))
            return None
        level = ref.magnitude_level
        if level is None or not 0 <= level < len(transform.magnitudes):
            return Violation(ViolationKind.BAD_MAGNITUDE, detail=str(ref))
        return None

    def magnitude(self, ref: TransformRef) -> float:
        transform = self.get(ref.transform_id)
        if transform.is_identity:
            return 0.0
        if ref.magnitude_level is None or not 0 <= ref.magnitude_level < len(transform.magnitudes):
            raise TransformError(f"Magnitude level of {ref} outside the declared levels")
        return transform.magnitudes[ref.magnitude_level]

    def is_stochastic(self, ref: TransformRef) -> bool:
        return self.get(ref.transform_id).stochastic

    def label(self, ref: TransformRef) -> str:
        transform = self.get(ref.transform_id)
        if transform.is_identity:
            return transform.name
        return f"{transform.name}({self.magnitude(ref):g})"

    def apply(self, ref: TransformRef, sample: Sample, rng_seed: int) -> Sample:
        transform = self.get(ref.transform_id)
        if transform.domain not in (Domain.ANY, sample_domain(sample)):
            raise DomainMismatchError(
                f"{transform.name} works on {transform.domain.value} samples, "
                f"got a {sample_domain(sample).value}"
            )
        assert transform.fn is not None
        return transform.fn(sample, self.magnitude(ref), rng_seed)

    def to_manifest(self) -> dict[str, Any]:
        return {
            'version': 1,
            'transforms': [
                {
                    'transform_id': t.transform_id,
                    'name': t.name,
                    'domain': t.domain.value,
                    'magnitudes': list(t.magnitudes),
                    'stochastic': t.stochastic,
                }
                for t in self.transforms
            ],
        }


def registry_from_manifest(obj: dict[str, Any]) -> Registry:
    try:
        entries = obj['transforms']
        return Registry(make_transformation(e['transform_id'], e.get('magnitudes', ())) for e in entries)
    except (KeyError, TypeError) as e:
        raise TransformError(f"Malformed registry manifest: {e}") from e


def dump_manifest(registry: Registry, path: Path) -> None:
    with path.open('w') as f:
        json.dump(registry.to_manifest(), f, indent=2)


def load_manifest(path: Path) -> Registry:
    with path.open('r') as f:
        return registry_from_manifest(json.load(f))


def default_graph_registry() -> Registry:
    """Identity plus the four graph transforms at five perturbation magnitudes each."""
    return Registry(
        [IDENTITY_TRANSFORM]
        + [
            make_transformation(transform_id, GRAPH_MAGNITUDES)
            for transform_id in ('drop_nodes', 'permute_edges', 'subgraph', 'mask_nodes')
        ]
    )


def default_vector_registry() -> Registry:
    return Registry(
        [
            IDENTITY_TRANSFORM,
            make_transformation('rotate2d', (0.25, 0.5, 0.75, 1.0)),
            make_transformation('jitter', (0.05, 0.1, 0.2)),
            make_transformation('scale', (0.1, 0.25, 0.5)),
            make_transformation('translate', (0.25, 0.5, 1.0)),
            make_transformation('axis_flip', (0.25, 0.75)),
        ]
    )


REGISTRIES: dict[str, Callable[[], Registry]] = {
    'graph': default_graph_registry,
    'vector': default_vector_registry,
}
