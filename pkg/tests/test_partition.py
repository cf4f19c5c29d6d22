"""
Tests for the similarity graph, spectral Ncut bipartition, relevance ranking and K-way cuts.
"""
import itertools

import numpy as np
import pytest

from app.core.exceptions import DegenerateGraphException, PartitionException
from app.models.partition import DEGREE_FLOOR, SimilarityGraph
from app.models.relations import RelationMatrix
from app.services.partition import (
    ncut_bipartition,
    ncut_energy,
    partition_from_fiedler,
    recursive_kway,
    relevance_scores,
    select_object_cluster,
    similarity_graph,
)
from app.services.relations import similarity_matrix


def block_weights(sizes: list[int], intra: float = 1.0, inter: float = 0.01) -> np.ndarray:
    n = sum(sizes)
    w = np.full((n, n), inter)
    start = 0
    for size in sizes:
        w[start:start + size, start:start + size] = intra
        start += size
    np.fill_diagonal(w, 0.0)
    return w


def planted_weights(rng: np.random.Generator, n: int, inter_high: float) -> tuple[np.ndarray, np.ndarray]:
    """Two planted groups (each at least 2 tokens) with intra U(0.6, 1) and inter U(0, inter_high)."""
    split = int(rng.integers(2, n - 1))
    groups = np.zeros(n, dtype=bool)
    groups[rng.permutation(n)[:split]] = True
    same = groups[:, None] == groups[None, :]
    w = np.where(same, rng.uniform(0.6, 1.0, (n, n)), rng.uniform(0.0, inter_high, (n, n)))
    w = np.triu(w, 1)
    return w + w.T, np.flatnonzero(groups)


def brute_force_energy(graph: SimilarityGraph) -> tuple[float, np.ndarray]:
    """Minimum Ncut energy over every split with token 0 on the first side."""
    n = graph.size
    best = (np.inf, None)
    for mask in itertools.product([False, True], repeat=n - 1):
        side = np.array((True,) + mask)
        if side.all():
            continue
        a, b = np.flatnonzero(side), np.flatnonzero(~side)
        w = graph.weights
        cut = w[np.ix_(a, b)].sum()
        energy = cut / w[a].sum() + cut / w[b].sum()
        if energy < best[0]:
            best = (energy, a)
    return best


def test_orthogonal_tokens_give_degenerate_graph():
    with pytest.raises(DegenerateGraphException):
        similarity_graph(similarity_matrix(np.eye(4)))


def test_nonnegative_similarity_passes_through():
    m = np.array([[1.0, 0.5, 0.2], [0.5, 1.0, 0.0], [0.2, 0.0, 1.0]])
    graph = similarity_graph(RelationMatrix(m, "cosine"))
    np.testing.assert_allclose(graph.weights, m - np.eye(3))
    np.testing.assert_allclose(graph.degrees, (m - np.eye(3)).sum(axis=1) + DEGREE_FLOOR)


def test_negative_similarities_are_clipped_or_rescaled():
    relation = similarity_matrix(np.random.default_rng(0).standard_normal((6, 3)))
    clipped = similarity_graph(relation).weights
    expected = np.where(relation.values > 0, relation.values, 0.0)
    np.fill_diagonal(expected, 0.0)
    np.testing.assert_allclose(clipped, expected)

    rescaled = similarity_graph(relation, negative="rescale").weights
    expected = (relation.values + 1) / 2
    np.fill_diagonal(expected, 0.0)
    np.testing.assert_allclose(rescaled, expected)


def test_bipartition_recovers_two_blocks():
    graph = SimilarityGraph.from_weights(block_weights([4, 4]))
    result = ncut_bipartition(graph)
    clusters = sorted([result.cluster_a.tolist(), result.cluster_b.tolist()])
    assert clusters == [[0, 1, 2, 3], [4, 5, 6, 7]]


def test_uniform_graph_still_splits():
    graph = SimilarityGraph.from_weights(np.ones((6, 6)) - np.eye(6))
    result = ncut_bipartition(graph)
    assert result.cluster_a.size > 0 and result.cluster_b.size > 0
    assert result.cluster_a.size + result.cluster_b.size == 6


def test_constant_fiedler_tie_break_moves_one_token():
    graph = SimilarityGraph.from_weights(np.ones((4, 4)) - np.eye(4))
    result = partition_from_fiedler(graph, np.full(4, 0.5))
    assert result.cluster_a.tolist() == [1, 2, 3]
    assert result.cluster_b.tolist() == [0]


def test_reported_energy_matches_direct_evaluation():
    rng = np.random.default_rng(1)
    w, _ = planted_weights(rng, 9, 0.3)
    graph = SimilarityGraph.from_weights(w)
    result = ncut_bipartition(graph)
    a, b = result.cluster_a, result.cluster_b
    cut = w[np.ix_(a, b)].sum()
    assert result.energy == pytest.approx(cut / w[a].sum() + cut / w[b].sum(), abs=1e-9)
    assert ncut_energy(graph, [a, b]) == pytest.approx(result.energy, abs=1e-12)


def test_spectral_energy_close_to_brute_force_optimum():
    rng = np.random.default_rng(2)
    for _ in range(200):
        n = int(rng.integers(4, 11))
        w, _ = planted_weights(rng, n, 0.2)
        graph = SimilarityGraph.from_weights(w)
        optimum, _ = brute_force_energy(graph)
        assert ncut_bipartition(graph).energy <= 1.10 * optimum + 1e-12


def test_spectral_partition_is_exact_on_well_separated_graphs():
    rng = np.random.default_rng(3)
    for _ in range(50):
        n = int(rng.integers(4, 11))
        w, group = planted_weights(rng, n, 0.05)
        graph = SimilarityGraph.from_weights(w)
        _, best_side = brute_force_energy(graph)
        result = ncut_bipartition(graph)
        found = {tuple(result.cluster_a.tolist()), tuple(result.cluster_b.tolist())}
        assert tuple(best_side.tolist()) in found
        assert tuple(group.tolist()) in found or tuple(np.setdiff1d(np.arange(n), group).tolist()) in found


def test_object_cluster_follows_largest_fiedler_entry():
    graph = SimilarityGraph.from_weights(np.ones((4, 4)) - np.eye(4))
    y = np.array([0.9, 0.1, -0.1, -0.2])
    result = partition_from_fiedler(graph, y)
    assert result.cluster_a.tolist() == [0]
    assert select_object_cluster(result) == 0
    assert result.object_tokens.tolist() == [0]

    flipped = partition_from_fiedler(graph, -y)
    assert flipped.object_tokens.tolist() == [0]
    assert select_object_cluster(flipped) == 1


def test_sign_flip_never_changes_object_tokens():
    rng = np.random.default_rng(4)
    for _ in range(20):
        w, _ = planted_weights(rng, 8, 0.3)
        graph = SimilarityGraph.from_weights(w)
        y = ncut_bipartition(graph).fiedler
        a = partition_from_fiedler(graph, y).object_tokens
        b = partition_from_fiedler(graph, -y).object_tokens
        np.testing.assert_array_equal(np.sort(a), np.sort(b))


def test_relevance_scores_cases():
    x = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 2.0], [-1.0, 0.0]])
    ranking = relevance_scores(x, [0, 1])
    np.testing.assert_allclose(ranking.scores, [1.0, 1.0, 0.0, -1.0])
    assert ranking.order.tolist() == [0, 1, 2, 3]
    np.testing.assert_allclose(ranking.cluster_mean, [1.0, 0.0])


def test_relevance_scores_match_cosine_oracle():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((12, 5))
    cluster = [2, 5, 7]
    centre = x[cluster].mean(axis=0)
    oracle = [float(row @ centre / (np.linalg.norm(row) * np.linalg.norm(centre))) for row in x]
    ranking = relevance_scores(x, cluster)
    np.testing.assert_allclose(ranking.scores, oracle, atol=1e-12)
    assert list(ranking.order) == sorted(range(12), key=lambda i: (-oracle[i], i))


def test_relevance_ties_keep_index_order():
    x = np.array([[0.0, 1.0], [1.0, 0.0], [0.0, 3.0], [2.0, 0.0]])
    assert relevance_scores(x, [1, 3]).order.tolist() == [1, 3, 0, 2]


def test_relevance_rejects_antipodal_cluster():
    x = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(PartitionException):
        relevance_scores(x, [0, 1])


def test_kway_three_blocks():
    graph = SimilarityGraph.from_weights(block_weights([3, 4, 3]))
    clusters = recursive_kway(graph, 3)
    assert [c.tolist() for c in clusters] == [[0, 1, 2], [3, 4, 5, 6], [7, 8, 9]]


def test_kway_two_matches_bipartition():
    rng = np.random.default_rng(6)
    w, _ = planted_weights(rng, 9, 0.2)
    graph = SimilarityGraph.from_weights(w)
    result = ncut_bipartition(graph)
    expected = sorted([result.cluster_a.tolist(), result.cluster_b.tolist()])
    assert sorted(c.tolist() for c in recursive_kway(graph, 2)) == expected


def test_kway_all_singletons():
    graph = SimilarityGraph.from_weights(block_weights([3, 3]))
    assert [c.tolist() for c in recursive_kway(graph, 6)] == [[i] for i in range(6)]


def test_kway_clusterings_are_nested():
    rng = np.random.default_rng(7)
    w, _ = planted_weights(rng, 10, 0.3)
    graph = SimilarityGraph.from_weights(w)
    previous = recursive_kway(graph, 2)
    for k in range(3, 6):
        current = recursive_kway(graph, k)
        for cluster in current:
            assert any(set(cluster.tolist()) <= set(parent.tolist()) for parent in previous)
        previous = current


def test_kway_rejects_out_of_range():
    graph = SimilarityGraph.from_weights(block_weights([2, 2]))
    with pytest.raises(PartitionException):
        recursive_kway(graph, 1)
    with pytest.raises(PartitionException):
        recursive_kway(graph, 5)
