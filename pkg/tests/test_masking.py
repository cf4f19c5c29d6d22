"""
Tests for random masks, informed masks, hint schedules and target policies.
"""
import numpy as np
import pytest

from app.core.config import TrainConfig
from app.core.exceptions import DegenerateGraphException, MaskSpecException
from app.models.partition import RelevanceRanking
from app.services.masking import (
    build_informed_mask,
    hint_ratio_for_epoch,
    hinted_random_mask,
    informed_mask,
    mask_count,
    random_mask,
    target_for_epoch,
)
from app.services.partition import relevance_scores


def ranking_of(scores) -> RelevanceRanking:
    scores = np.asarray(scores, dtype=np.float64)
    return RelevanceRanking(scores=scores, order=np.argsort(-scores, kind="stable"), cluster_mean=np.ones(2))


def test_mask_counts():
    assert mask_count(0.75, 196) == 147
    assert mask_count(0.75, 64) == 48
    assert mask_count(0.05, 64) == 4
    assert mask_count(0.05, 196) == 10
    assert mask_count(0.3, 10) == 3
    assert mask_count(0.001, 64) == 1


def test_random_mask_count_and_determinism():
    a = random_mask(196, 0.75, 7)
    assert a.masked.size == 147
    b = random_mask(196, 0.75, 7)
    np.testing.assert_array_equal(a.masked, b.masked)
    assert not np.array_equal(a.masked, random_mask(196, 0.75, 8).masked)


def test_random_mask_is_uniform():
    counts = np.zeros(16)
    draws = 10_000
    for seed in range(draws):
        counts[random_mask(16, 0.75, (1, seed)).masked] += 1
    np.testing.assert_allclose(counts / draws, 0.75, atol=0.02)


def test_random_mask_rejects_bad_ratio():
    with pytest.raises(MaskSpecException):
        random_mask(16, 1.0, 0)
    with pytest.raises(MaskSpecException):
        random_mask(16, 0.0, 0)


def test_informed_mask_masks_top_ranked_tokens():
    scores = np.linspace(1.0, -1.0, 196)
    mask = build_informed_mask(ranking_of(scores), 0.75, 0.0, "none", 0)
    np.testing.assert_array_equal(mask.masked, np.arange(147))
    assert mask.hints.size == 0


def test_minimal_masking_ratio_masks_one_token():
    mask = build_informed_mask(ranking_of([0.1, 0.9, 0.3, 0.2]), 0.01, 0.0, "none", 0)
    assert mask.masked.tolist() == [1]


@pytest.mark.parametrize("strategy", ["random", "score"])
def test_hints_come_from_the_masked_set(strategy):
    scores = np.random.default_rng(0).uniform(-1, 1, 64)
    ranking = ranking_of(scores)
    mask = build_informed_mask(ranking, 0.75, 0.05, strategy, 3)
    top = set(ranking.order[:48].tolist())
    assert mask.hints.size == 4
    assert set(mask.hints.tolist()) <= top
    assert mask.masked.size == 48 - 4
    assert set(mask.masked.tolist()) | set(mask.hints.tolist()) == top
    again = build_informed_mask(ranking, 0.75, 0.05, strategy, 3)
    np.testing.assert_array_equal(mask.hints, again.hints)


@pytest.mark.parametrize("strategy", ["random", "score"])
def test_hinted_random_mask_matches_informed_counts(strategy):
    informed = build_informed_mask(ranking_of(np.linspace(1.0, -1.0, 64)), 0.75, 0.05, strategy, 3)
    fallback = hinted_random_mask(64, 0.75, 0.05, strategy, (0, 1), (0, 2))
    assert fallback.masked.size == informed.masked.size == 44
    assert fallback.hints.size == 4
    assert set(fallback.hints.tolist()) <= set(random_mask(64, 0.75, (0, 1)).masked.tolist())
    again = hinted_random_mask(64, 0.75, 0.05, strategy, (0, 1), (0, 2))
    np.testing.assert_array_equal(fallback.hints, again.hints)


def test_hinted_random_mask_without_hints_is_the_random_mask():
    fallback = hinted_random_mask(64, 0.75, 0.05, "none", 9, 10)
    np.testing.assert_array_equal(fallback.masked, random_mask(64, 0.75, 9).masked)
    with pytest.raises(MaskSpecException):
        hinted_random_mask(64, 0.5, 0.5, "random", 0, 1)


def test_score_hints_prefer_high_relevance():
    scores = np.concatenate([np.full(8, 0.9), np.full(8, 0.0)])
    counts = np.zeros(16)
    for seed in range(200):
        mask = build_informed_mask(ranking_of(scores), 0.99, 0.1, "score", seed)
        counts[mask.hints] += 1
    assert counts[:8].sum() == counts.sum()


def test_hint_ratio_must_stay_below_masking_ratio():
    with pytest.raises(MaskSpecException):
        build_informed_mask(ranking_of([0.5, 0.4, 0.3, 0.2]), 0.5, 0.5, "random", 0)
    with pytest.raises(MaskSpecException):
        build_informed_mask(ranking_of([0.5, 0.4, 0.3, 0.2]), 0.5, 0.1, "bogus", 0)


def test_object_tokens_masked_first_without_hints():
    rng = np.random.default_rng(1)
    object_dir, background_dir = np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])
    embeddings = np.where(np.arange(16)[:, None] < 5, object_dir, background_dir) + rng.normal(0, 0.05, (16, 3))
    result = informed_mask(embeddings, 0.5, 0.0, "none", 0)
    cluster = result.partition.object_tokens
    assert cluster.size <= 8
    assert set(cluster.tolist()) <= set(result.mask.masked.tolist())
    np.testing.assert_array_equal(result.ranking.scores, relevance_scores(embeddings, cluster).scores)


def test_background_target_ranks_against_the_other_cluster():
    rng = np.random.default_rng(2)
    embeddings = np.where(np.arange(12)[:, None] < 4, [1.0, 0.0], [0.0, 1.0]) + rng.normal(0, 0.05, (12, 2))
    result = informed_mask(embeddings, 0.75, 0.0, "none", 0, target="background")
    assert set(result.partition.background_tokens.tolist()) <= set(result.mask.masked.tolist())


def test_informed_mask_on_orthogonal_tokens_is_degenerate():
    with pytest.raises(DegenerateGraphException):
        informed_mask(np.eye(4), 0.5, 0.0, "none", 0)


def test_hint_schedules():
    constant = TrainConfig(epochs=20, hint_ratio=0.05)
    assert hint_ratio_for_epoch(constant, 12, 10) == 0.05
    linear = TrainConfig(epochs=21, hint_schedule="linear", hint_start=0.10, hint_end=0.02)
    assert hint_ratio_for_epoch(linear, 10, 10) == pytest.approx(0.10)
    assert hint_ratio_for_epoch(linear, 15, 10) == pytest.approx(0.06)
    assert hint_ratio_for_epoch(linear, 20, 10) == pytest.approx(0.02)
    assert hint_ratio_for_epoch(TrainConfig(hint_strategy="none"), 5, 0) == 0.0


def test_target_policies():
    assert target_for_epoch("object", 7, 3) == "object"
    assert target_for_epoch("background", 7, 3) == "background"
    assert [target_for_epoch("alternate", e, 3) for e in range(3, 7)] == [
        "object", "background", "object", "background"
    ]
    with pytest.raises(MaskSpecException):
        target_for_epoch("sideways", 0, 0)
