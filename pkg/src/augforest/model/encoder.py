import math

import numpy as np
from attrs import frozen
from scipy import sparse

from augforest.errors import ModelError
from augforest.transforms.graph import Graph


@frozen
class GraphEncoder:
    """
    Fixed mean-neighbor smoothing followed by mean pooling.

    Each round mixes every node's features half and half with the mean of its
    neighbors' (isolated nodes keep their own). The pooled means of every
    round are concatenated with log(1 + n) and the average degree.
    """

    feature_dim: int
    rounds: int = 2

    @property
    def output_dim(self) -> int:
        return self.feature_dim * (self.rounds + 1) + 2

    def encode(self, g: Graph) -> np.ndarray:
        if g.feature_dim != self.feature_dim:
            raise ModelError(f"Encoder expects {self.feature_dim} node features, got {g.feature_dim}")
        out = np.zeros(self.output_dim)
        if g.node_count == 0:
            return out
        n = g.node_count
        if g.edge_count:
            u, v = g.edges[:, 0], g.edges[:, 1]
            adjacency = sparse.coo_matrix(
                (np.ones(2 * len(u)), (np.concatenate([u, v]), np.concatenate([v, u]))), shape=(n, n)
            ).tocsr()
        else:
            adjacency = sparse.csr_matrix((n, n))
        degree = np.asarray(adjacency.sum(axis=1)).reshape(-1)
        isolated = degree == 0
        h = g.node_features
        pooled = [h.mean(axis=0)]
        for _ in range(self.rounds):
            neighbor_mean = (adjacency @ h) / np.maximum(degree, 1.0)[:, None]
            neighbor_mean[isolated] = h[isolated]
            h = 0.5 * h + 0.5 * neighbor_mean
            pooled.append(h.mean(axis=0))
        out[:-2] = np.concatenate(pooled)
        out[-2] = math.log1p(n)
        out[-1] = g.average_degree()
        return out

    def encode_many(self, graphs: list[Graph] | tuple[Graph, ...]) -> np.ndarray:
        if not graphs:
            return np.zeros((0, self.output_dim))
        return np.stack([self.encode(g) for g in graphs])
