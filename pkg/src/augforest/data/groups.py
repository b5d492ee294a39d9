import logging
from collections.abc import Sequence

import numpy as np
from attrs import cmp_using, field, frozen

from augforest.errors import DatasetError
from augforest.transforms.graph import Graph

logger = logging.getLogger(__name__)


@frozen
class GroupAssignment:
    group_ids: np.ndarray = field(eq=cmp_using(eq=np.array_equal))
    size_edges: np.ndarray = field(eq=cmp_using(eq=np.array_equal))
    degree_edges: np.ndarray = field(eq=cmp_using(eq=np.array_equal))
    merged: bool = False

    @property
    def occupied(self) -> tuple[int, ...]:
        return tuple(int(g) for g in np.unique(self.group_ids))


def _quantile_bins(values: np.ndarray, bins: int) -> tuple[np.ndarray, np.ndarray, bool]:
    edges = np.quantile(values, np.linspace(0.0, 1.0, bins + 1))
    unique = np.unique(edges)
    merged = bins > 1 and len(unique) < bins + 1
    inner = unique[1:-1]
    return np.searchsorted(inner, values, side='right'), unique, merged


def partition_by_intervals(
    graphs: Sequence[Graph], size_bins: int, degree_bins: int
) -> GroupAssignment:
    """
    Group graphs by (size quantile bin, average-degree quantile bin).

    Ids are size_bin * degree_bins + degree_bin + 1. Quantile edges that
    coincide collapse their bins together, which is flagged on the result.
    """
    if size_bins < 1 or degree_bins < 1:
        raise DatasetError(f"Bin counts must be positive, got {size_bins}x{degree_bins}")
    if not graphs:
        raise DatasetError("Cannot partition an empty collection of graphs")
    sizes = np.array([g.node_count for g in graphs], dtype=np.float64)
    degrees = np.array([g.average_degree() for g in graphs], dtype=np.float64)
    size_bin, size_edges, size_merged = _quantile_bins(sizes, size_bins)
    degree_bin, degree_edges, degree_merged = _quantile_bins(degrees, degree_bins)
    merged = size_merged or degree_merged
    if merged:
        logger.warning(
            f"Too few distinct sizes or degrees for {size_bins}x{degree_bins} bins, "
            "some bins were merged"
        )
    ids = size_bin * degree_bins + degree_bin + 1
    return GroupAssignment(ids.astype(np.int64), size_edges, degree_edges, merged)
