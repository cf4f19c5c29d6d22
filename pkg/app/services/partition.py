"""
Normalized-cut partitioning of the token similarity graph and relevance ranking.
"""
import logging

import numpy as np

from app.core.exceptions import DegenerateGraphException, PartitionException, SelfGuidedMAEException
from app.models.partition import PartitionResult, RelevanceRanking, SimilarityGraph
from app.models.relations import RelationMatrix
from app.utils.numerics import generalized_eigen_pair


logger = logging.getLogger(__name__)

NEGATIVE_MODES = ("clip", "rescale")


def similarity_graph(similarity: RelationMatrix, negative: str = "clip") -> SimilarityGraph:
    """
    Turn a cosine relation into a nonnegative graph with a zero diagonal.

    Args:
        similarity: Cosine RelationMatrix M
        negative: "clip" uses max(M, 0); "rescale" uses (M + 1) / 2

    Raises:
        DegenerateGraphException: If no edge keeps a positive weight
    """
    if similarity.kind != "cosine":
        raise PartitionException("Similarity graphs are built from cosine relations")
    if negative not in NEGATIVE_MODES:
        raise PartitionException(f"Unknown negative-similarity mode: {negative}")
    m = similarity.values
    weights = np.maximum(m, 0.0) if negative == "clip" else (m + 1.0) / 2.0
    weights = 0.5 * (weights + weights.T)
    np.fill_diagonal(weights, 0.0)
    if not np.any(weights > 0):
        raise DegenerateGraphException("Similarity graph has no positive edge")
    return SimilarityGraph.from_weights(weights)


def ncut_energy(graph: SimilarityGraph, clusters: list[np.ndarray]) -> float:
    """
    Normalized-cut energy sum_c S(c, rest) / S(c, all) evaluated on the raw weights.

    A cluster with no outgoing weight contributes 0.
    """
    n = graph.size
    total = 0.0
    for cluster in clusters:
        cluster = np.asarray(cluster, dtype=np.int64)
        rest = np.setdiff1d(np.arange(n), cluster)
        cut = graph.association(cluster, rest) if rest.size else 0.0
        if cut == 0.0:
            continue
        total += cut / graph.association(cluster, np.arange(n))
    return total


def select_object_cluster(result: PartitionResult) -> int:
    """Id of the cluster holding the largest-magnitude Fiedler entry."""
    return _object_id(result.fiedler, result.cluster_a)


def _object_id(fiedler: np.ndarray, cluster_a: np.ndarray) -> int:
    anchor = int(np.argmax(np.abs(fiedler)))
    return 0 if anchor in set(cluster_a.tolist()) else 1


def partition_from_fiedler(graph: SimilarityGraph, fiedler: np.ndarray) -> PartitionResult:
    """
    Threshold a Fiedler vector at its mean.

    If one side comes out empty, the token whose entry is closest to the mean
    (lowest index on ties) is moved across.
    """
    y = np.asarray(fiedler, dtype=np.float64)
    n = y.size
    if n < 2:
        raise PartitionException("Need at least 2 tokens to bipartition")
    mean = y.mean()
    in_a = y >= mean
    if in_a.all() or not in_a.any():
        closest = int(np.argmin(np.abs(y - mean)))
        in_a[closest] = not in_a[closest]
        logger.debug(f"Mean threshold left one side empty; moved token {closest}")
    cluster_a = np.flatnonzero(in_a)
    cluster_b = np.flatnonzero(~in_a)
    return PartitionResult(
        fiedler=y,
        cluster_a=cluster_a,
        cluster_b=cluster_b,
        object_cluster=_object_id(y, cluster_a),
        energy=ncut_energy(graph, [cluster_a, cluster_b]),
    )


def ncut_bipartition(graph: SimilarityGraph) -> PartitionResult:
    """
    Spectral Ncut bipartition from the second-smallest generalized eigenvector.

    Solves (Dg - W) y = lambda Dg y. The eigenvector sign is fixed so that its
    largest-magnitude entry is positive.

    Raises:
        EigenSolverException: Propagated from the eigensolver
    """
    _, (_, fiedler) = generalized_eigen_pair(graph.laplacian(), np.diag(graph.degrees))
    anchor = int(np.argmax(np.abs(fiedler)))
    if fiedler[anchor] < 0:
        fiedler = -fiedler
    return partition_from_fiedler(graph, fiedler)


def relevance_scores(embeddings: np.ndarray, cluster: np.ndarray) -> RelevanceRanking:
    """
    Cosine of every token to the mean embedding of a cluster.

    The descending order breaks ties by token index.

    Raises:
        PartitionException: If the cluster is empty, its mean is the zero
            vector, or a token embedding has zero norm
    """
    x = np.asarray(embeddings, dtype=np.float64)
    cluster = np.asarray(cluster, dtype=np.int64)
    if cluster.size == 0:
        raise PartitionException("Relevance needs a nonempty cluster")
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms <= 1e-12):
        raise PartitionException(f"Zero-norm embedding at token {int(np.argmin(norms))}")
    centre = x[cluster].mean(axis=0)
    centre_norm = np.linalg.norm(centre)
    if centre_norm <= 1e-12:
        raise PartitionException("Cluster mean embedding has zero norm")
    scores = np.clip((x @ centre) / (norms * centre_norm), -1.0, 1.0)
    order = np.argsort(-scores, kind="stable")
    return RelevanceRanking(scores=scores, order=order, cluster_mean=centre)


def _split(graph: SimilarityGraph, cluster: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sub = graph.weights[np.ix_(cluster, cluster)]
    if not np.any(sub > 0):
        logger.warning(
            f"Cluster of {cluster.size} tokens has no internal edges; splitting off token {int(cluster[0])}"
        )
        return cluster[:1], cluster[1:]
    try:
        result = ncut_bipartition(graph.subgraph(cluster))
    except SelfGuidedMAEException as e:
        logger.warning(f"Sub-cluster bipartition failed ({e}); splitting off token {int(cluster[0])}")
        return cluster[:1], cluster[1:]
    return cluster[result.cluster_a], cluster[result.cluster_b]


def recursive_kway(graph: SimilarityGraph, k: int) -> list[np.ndarray]:
    """
    Split the graph into k clusters by repeated spectral bipartition.

    At each step every current cluster is tentatively bipartitioned and the
    split leaving the lowest total Ncut energy is kept, so each clustering
    refines the previous one.

    Args:
        graph: Token similarity graph
        k: Number of clusters, 2 <= k <= n

    Returns:
        Disjoint clusters covering every token, ordered by smallest member

    Raises:
        PartitionException: If k is out of range
    """
    n = graph.size
    if not 2 <= k <= n:
        raise PartitionException(f"K must be within [2, {n}], got {k}")
    clusters = [np.arange(n)]
    while len(clusters) < k:
        best = None
        for index, cluster in enumerate(clusters):
            if cluster.size < 2:
                continue
            left, right = _split(graph, cluster)
            candidate = clusters[:index] + [left, right] + clusters[index + 1:]
            energy = ncut_energy(graph, candidate)
            if best is None or energy < best[0]:
                best = (energy, candidate)
        clusters = best[1]
    return sorted((np.sort(c) for c in clusters), key=lambda c: int(c[0]))
