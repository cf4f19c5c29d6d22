"""
Data models for token-graph partitioning and relevance ranking.
"""
from dataclasses import dataclass

import numpy as np

from app.core.exceptions import PartitionException


SYMMETRY_TOLERANCE = 1e-9
DEGREE_FLOOR = 1e-8


@dataclass(frozen=True)
class SimilarityGraph:
    """Fully connected token graph: nonnegative symmetric weights W and their degrees."""
    weights: np.ndarray
    degrees: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "degrees", np.asarray(self.degrees, dtype=np.float64))
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise PartitionException(f"Weight matrix must be square, got {w.shape}")
        if np.any(w < 0):
            raise PartitionException("Graph weights must be nonnegative")
        if np.max(np.abs(w - w.T)) > SYMMETRY_TOLERANCE:
            raise PartitionException("Graph weights must be symmetric")
        if self.degrees.shape != (w.shape[0],) or np.any(self.degrees < DEGREE_FLOOR):
            raise PartitionException("Degrees must cover every node and respect the degree floor")

    @property
    def size(self) -> int:
        return int(self.weights.shape[0])

    @classmethod
    def from_weights(cls, weights: np.ndarray) -> "SimilarityGraph":
        w = np.asarray(weights, dtype=np.float64)
        return cls(w, w.sum(axis=1) + DEGREE_FLOOR)

    def subgraph(self, nodes: np.ndarray) -> "SimilarityGraph":
        nodes = np.asarray(nodes, dtype=np.int64)
        return SimilarityGraph.from_weights(self.weights[np.ix_(nodes, nodes)])

    def laplacian(self) -> np.ndarray:
        """L = Dg - W."""
        return np.diag(self.degrees) - self.weights

    def association(self, a: np.ndarray, b: np.ndarray) -> float:
        """S(A, B): total weight between two node sets."""
        return float(self.weights[np.ix_(np.asarray(a), np.asarray(b))].sum())


@dataclass(frozen=True)
class PartitionResult:
    """
    Mean-thresholded bipartition of a token graph.

    Cluster ids are 0 for `cluster_a` (y >= mean) and 1 for `cluster_b`.
    """
    fiedler: np.ndarray
    cluster_a: np.ndarray
    cluster_b: np.ndarray
    object_cluster: int
    energy: float

    def __post_init__(self) -> None:
        if self.cluster_a.size == 0 or self.cluster_b.size == 0:
            raise PartitionException("Both clusters must be nonempty")
        if self.object_cluster not in (0, 1):
            raise PartitionException(f"Object cluster id must be 0 or 1, got {self.object_cluster}")

    def cluster(self, cluster_id: int) -> np.ndarray:
        return self.cluster_a if cluster_id == 0 else self.cluster_b

    @property
    def object_tokens(self) -> np.ndarray:
        return self.cluster(self.object_cluster)

    @property
    def background_tokens(self) -> np.ndarray:
        return self.cluster(1 - self.object_cluster)

    def labels(self) -> np.ndarray:
        """Per-token cluster id."""
        labels = np.zeros(self.fiedler.size, dtype=np.int64)
        labels[self.cluster_b] = 1
        return labels


@dataclass(frozen=True)
class RelevanceRanking:
    """Relevance scores S_i to a cluster mean, with the descending order of tokens."""
    scores: np.ndarray
    order: np.ndarray
    cluster_mean: np.ndarray

    def __post_init__(self) -> None:
        n = self.scores.size
        if np.any(np.abs(self.scores) > 1.0 + 1e-9):
            raise PartitionException("Relevance scores must lie in [-1, 1]")
        if self.order.size != n or not np.array_equal(np.sort(self.order), np.arange(n)):
            raise PartitionException("Ranking order must be a permutation of the tokens")

    @property
    def size(self) -> int:
        return int(self.scores.size)
