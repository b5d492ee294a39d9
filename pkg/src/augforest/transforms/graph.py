import json
import logging
import math
from collections import deque
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
from attrs import cmp_using, evolve, field, frozen

from augforest.errors import DatasetError, TransformError

logger = logging.getLogger(__name__)

# counts that land a hair below an integer because of float products still round up
_COUNT_SLACK = 1e-9


def _as_features(value: Any) -> np.ndarray:
    array = np.array(value, dtype=np.float64)
    if array.ndim == 1:
        array = array.reshape(-1, 1) if array.size else array.reshape(0, 0)
    return array


def _as_edges(value: Any) -> np.ndarray:
    array = np.array(value, dtype=np.int64).reshape(-1, 2)
    if array.size == 0:
        return array
    array = np.sort(array, axis=1)
    order = np.lexsort((array[:, 1], array[:, 0]))
    return array[order]


class GraphFlag(Enum):
    TOO_SMALL = 'too_small'
    TRUNCATED_WALK = 'truncated_walk'


@frozen
class Graph:
    """An undirected simple graph with per-node feature vectors."""

    node_count: int
    node_features: np.ndarray = field(converter=_as_features, eq=cmp_using(eq=np.array_equal))
    edges: np.ndarray = field(converter=_as_edges, eq=cmp_using(eq=np.array_equal))
    # conditions a transform hit while producing this graph; not part of equality
    flags: tuple[GraphFlag, ...] = field(default=(), eq=False)

    def __attrs_post_init__(self) -> None:
        if self.node_features.shape[0] != self.node_count:
            raise TransformError(
                f"Graph has {self.node_count} nodes but {self.node_features.shape[0]} feature rows"
            )
        if self.edges.size:
            if self.edges.min() < 0 or self.edges.max() >= self.node_count:
                raise TransformError("Edge endpoint outside the node range")
            if np.any(self.edges[:, 0] == self.edges[:, 1]):
                raise TransformError("Self-loops are not allowed")
            if len(np.unique(self.edge_codes())) != len(self.edges):
                raise TransformError("Duplicate edges are not allowed")

    @property
    def edge_count(self) -> int:
        return int(len(self.edges))

    @property
    def feature_dim(self) -> int:
        return int(self.node_features.shape[1]) if self.node_features.ndim == 2 else 0

    def average_degree(self) -> float:
        if self.node_count == 0:
            return 0.0
        return 2.0 * self.edge_count / self.node_count

    def edge_codes(self) -> np.ndarray:
        return self.edges[:, 0] * self.node_count + self.edges[:, 1]

    def neighbors(self) -> list[list[int]]:
        adjacency: list[list[int]] = [[] for _ in range(self.node_count)]
        for u, v in self.edges.tolist():
            adjacency[u].append(v)
            adjacency[v].append(u)
        return adjacency

    def copy(self) -> 'Graph':
        return Graph(self.node_count, self.node_features.copy(), self.edges.copy())

    def induced_subgraph(self, keep: np.ndarray) -> 'Graph':
        """Restrict to the given nodes, reindexing them in increasing order."""
        keep = np.sort(np.asarray(keep, dtype=np.int64))
        remap = np.full(self.node_count, -1, dtype=np.int64)
        remap[keep] = np.arange(len(keep))
        if self.edges.size:
            mapped = remap[self.edges]
            edges = mapped[(mapped >= 0).all(axis=1)]
        else:
            edges = self.edges
        return Graph(
            node_count=len(keep),
            node_features=self.node_features[keep].copy(),
            edges=edges,
        )


def complete_graph(n: int, feature_dim: int = 1) -> Graph:
    u, v = np.triu_indices(n, 1)
    return Graph(n, np.ones((n, feature_dim)), np.stack([u, v], axis=1))


def _fraction_count(magnitude: float, total: int) -> int:
    return int(math.floor(magnitude * total + _COUNT_SLACK))


def _check_open_magnitude(magnitude: float) -> None:
    if not 0.0 < magnitude < 1.0:
        raise TransformError(f"Magnitude {magnitude} outside (0, 1)")


def drop_nodes(g: Graph, magnitude: float, rng_seed: int) -> Graph:
    """
    Delete floor(magnitude * n) uniformly sampled nodes and their incident edges.

    A graph with fewer than two nodes comes back unchanged, flagged TOO_SMALL.
    """
    _check_open_magnitude(magnitude)
    if g.node_count < 2:
        logger.warning(f"drop_nodes: graph with {g.node_count} node(s) is too small, unchanged")
        return evolve(g.copy(), flags=(GraphFlag.TOO_SMALL,))
    count = _fraction_count(magnitude, g.node_count)
    if count == 0:
        return g.copy()
    rng = np.random.default_rng(rng_seed)
    dropped = rng.choice(g.node_count, size=count, replace=False)
    keep = np.setdiff1d(np.arange(g.node_count), dropped)
    return g.induced_subgraph(keep)


def _non_edges(g: Graph) -> np.ndarray:
    u, v = np.triu_indices(g.node_count, 1)
    codes = u * g.node_count + v
    mask = ~np.isin(codes, g.edge_codes())
    return np.stack([u[mask], v[mask]], axis=1)


def permute_edges(g: Graph, magnitude: float, rng_seed: int) -> Graph:
    """
    Delete floor(magnitude * |E|) sampled edges and add as many sampled non-edges.

    Fewer edges are added when the complement of the graph runs out (a complete
    graph only loses edges).
    """
    _check_open_magnitude(magnitude)
    count = _fraction_count(magnitude, g.edge_count)
    if count == 0:
        return g.copy()
    rng = np.random.default_rng(rng_seed)
    removed = rng.choice(g.edge_count, size=count, replace=False)
    kept = np.delete(g.edges, removed, axis=0)
    candidates = _non_edges(g)
    added_count = min(count, len(candidates))
    if added_count < count:
        logger.debug(f"permute_edges: only {added_count} non-edges available, wanted {count}")
    if added_count:
        added = candidates[rng.choice(len(candidates), size=added_count, replace=False)]
        kept = np.concatenate([kept, added], axis=0)
    return Graph(g.node_count, g.node_features.copy(), kept)


def _component(adjacency: list[list[int]], start: int) -> set[int]:
    seen = {start}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        for other in adjacency[node]:
            if other not in seen:
                seen.add(other)
                queue.append(other)
    return seen


def subgraph_random_walk(g: Graph, magnitude: float, rng_seed: int) -> Graph:
    """
    Induced subgraph on the nodes a random walk visits.

    The walk starts at a uniformly sampled node and runs until
    ceil(magnitude * n) distinct nodes are seen, jumping back to the start when
    it hits a dead end. If the start's component is smaller than the target the
    whole component is returned, flagged TRUNCATED_WALK.
    """
    if not 0.0 < magnitude <= 1.0:
        raise TransformError(f"Magnitude {magnitude} outside (0, 1]")
    if g.node_count <= 1:
        return g.copy()
    target = min(g.node_count, int(math.ceil(magnitude * g.node_count - _COUNT_SLACK)))
    rng = np.random.default_rng(rng_seed)
    adjacency = g.neighbors()
    start = int(rng.integers(g.node_count))
    reachable = _component(adjacency, start)
    if len(reachable) < target:
        logger.warning(
            f"subgraph_random_walk: component of size {len(reachable)} cannot reach "
            f"target {target}, returning the component"
        )
        target = len(reachable)
        flags: tuple[GraphFlag, ...] = (GraphFlag.TRUNCATED_WALK,)
    else:
        flags = ()
    visited = {start}
    current = start
    while len(visited) < target:
        options = adjacency[current]
        if not options:
            current = start
            continue
        current = options[int(rng.integers(len(options)))]
        visited.add(current)
    return evolve(g.induced_subgraph(np.fromiter(visited, dtype=np.int64)), flags=flags)


def mask_node_features(g: Graph, magnitude: float, rng_seed: int) -> Graph:
    """Zero the feature vectors of floor(magnitude * n) sampled nodes."""
    _check_open_magnitude(magnitude)
    count = _fraction_count(magnitude, g.node_count)
    if count == 0:
        return g.copy()
    rng = np.random.default_rng(rng_seed)
    rows = rng.choice(g.node_count, size=count, replace=False)
    features = g.node_features.copy()
    features[rows] = 0.0
    return Graph(g.node_count, features, g.edges.copy())


def graph_to_dict(g: Graph) -> dict[str, Any]:
    return {
        'nodes': g.node_count,
        'features': g.node_features.tolist(),
        'edges': g.edges.tolist(),
    }


def graph_from_dict(obj: dict[str, Any]) -> Graph:
    try:
        n = int(obj['nodes'])
        features = np.array(obj.get('features') or [], dtype=np.float64)
        features = np.zeros((n, 0)) if features.size == 0 else features.reshape(n, -1)
        return Graph(n, features, obj.get('edges', []))
    except (KeyError, TypeError, ValueError, TransformError) as e:
        raise DatasetError(f"Malformed graph document: {e}") from e


def dump_graph(g: Graph, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w') as f:
        json.dump(graph_to_dict(g), f)


def load_graph(path: Path) -> Graph:
    with path.open('r') as f:
        return graph_from_dict(json.load(f))
