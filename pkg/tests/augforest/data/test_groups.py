import numpy as np
import pytest

from augforest.data.groups import partition_by_intervals
from augforest.errors import DatasetError
from augforest.transforms.graph import Graph, complete_graph


def _empty(n: int) -> Graph:
    return Graph(n, np.zeros((n, 1)), [])


def test_partition_by_size() -> None:
    graphs = [_empty(5), _empty(5), _empty(10), _empty(10)]
    assignment = partition_by_intervals(graphs, size_bins=2, degree_bins=1)
    assert assignment.group_ids.tolist() == [1, 1, 2, 2]
    assert assignment.occupied == (1, 2)
    assert not assignment.merged


def test_partition_by_size_and_degree() -> None:
    graphs = [_empty(4), complete_graph(4), _empty(8), complete_graph(8)]
    assignment = partition_by_intervals(graphs, size_bins=2, degree_bins=2)
    assert assignment.group_ids.tolist() == [1, 2, 3, 4]


def test_partition_merges_coincident_bins() -> None:
    assignment = partition_by_intervals([_empty(5)] * 4, size_bins=2, degree_bins=1)
    assert assignment.merged
    assert assignment.occupied == (1,)


def test_partition_rejects_bad_input() -> None:
    with pytest.raises(DatasetError):
        partition_by_intervals([], 2, 2)
    with pytest.raises(DatasetError):
        partition_by_intervals([_empty(3)], 0, 2)
