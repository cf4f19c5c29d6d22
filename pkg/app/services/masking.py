"""
Random and self-guided (informed) mask construction.
"""
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from app.core.config import TrainConfig
from app.core.exceptions import MaskSpecException
from app.models.partition import PartitionResult, RelevanceRanking
from app.models.tokens import MaskSpec
from app.services.partition import ncut_bipartition, relevance_scores, similarity_graph
from app.services.relations import similarity_matrix


logger = logging.getLogger(__name__)

HINT_STRATEGIES = ("none", "random", "score")
TARGET_POLICIES = ("object", "background", "alternate")

Seed = int | Sequence[int]


def mask_count(ratio: float, num_tokens: int) -> int:
    """
    ceil(ratio * n), with products that are integers up to float error kept exact.

    Raises:
        MaskSpecException: If the ratio is outside [0, 1)
    """
    if not 0.0 <= ratio < 1.0:
        raise MaskSpecException(f"Ratio must be in [0, 1), got {ratio}")
    return int(math.ceil(round(ratio * num_tokens, 9)))


def random_mask(num_tokens: int, masking_ratio: float, seed: Seed) -> MaskSpec:
    """
    Uniform sample of ceil(m * n) masked tokens without replacement.

    Raises:
        MaskSpecException: If m is not in (0, 1)
    """
    if not 0.0 < masking_ratio < 1.0:
        raise MaskSpecException(f"Masking ratio must be in (0, 1), got {masking_ratio}")
    rng = np.random.default_rng(seed)
    masked = rng.choice(num_tokens, size=mask_count(masking_ratio, num_tokens), replace=False)
    return MaskSpec.from_masked(num_tokens, masked)


def hinted_random_mask(
    num_tokens: int,
    masking_ratio: float,
    hint_ratio: float,
    hint_strategy: str,
    seed: Seed,
    hint_seed: Seed
) -> MaskSpec:
    """
    Random mask with the same token counts as an informed mask.

    Used in place of an informed mask when an image's similarity graph is
    degenerate, so the batch keeps one masked count. Hints are drawn
    uniformly from the masked set whatever the strategy, since there are no
    relevance scores to weight them.

    Returns:
        MaskSpec with ceil(m * n) - ceil(h * n) masked tokens (h = 0 for strategy "none")
    """
    if hint_strategy not in HINT_STRATEGIES:
        raise MaskSpecException(f"Unknown hint strategy: {hint_strategy}")
    if hint_ratio >= masking_ratio:
        raise MaskSpecException(f"Hint ratio {hint_ratio} must be below masking ratio {masking_ratio}")
    base = random_mask(num_tokens, masking_ratio, seed)
    hint_count = 0 if hint_strategy == "none" else mask_count(hint_ratio, num_tokens)
    if hint_count == 0:
        return base
    if hint_count >= base.masked.size:
        raise MaskSpecException(f"{hint_count} hints would re-expose all {base.masked.size} masked tokens")
    hints = np.random.default_rng(hint_seed).choice(base.masked, size=hint_count, replace=False)
    return MaskSpec.from_masked(num_tokens, base.masked, hints)


def build_informed_mask(
    ranking: RelevanceRanking,
    masking_ratio: float,
    hint_ratio: float,
    hint_strategy: str,
    seed: Seed
) -> MaskSpec:
    """
    Mask the highest-ranked tokens, then re-expose a few of them as hints.

    Args:
        ranking: Relevance ranking of the tokens
        masking_ratio: m in (0, 1); the top ceil(m * n) tokens are masked
        hint_ratio: h in [0, m); ceil(h * n) masked tokens become hints
        hint_strategy: "none", "random" (uniform over the masked set) or
            "score" (probability proportional to the positive part of S_i)
        seed: Seed of the hint draw

    Returns:
        MaskSpec with ceil(m * n) - ceil(h * n) masked tokens

    Raises:
        MaskSpecException: If h >= m, the strategy is unknown, or the hints
            would leave nothing masked
    """
    if hint_strategy not in HINT_STRATEGIES:
        raise MaskSpecException(f"Unknown hint strategy: {hint_strategy}")
    if not 0.0 < masking_ratio < 1.0:
        raise MaskSpecException(f"Masking ratio must be in (0, 1), got {masking_ratio}")
    if hint_ratio >= masking_ratio:
        raise MaskSpecException(f"Hint ratio {hint_ratio} must be below masking ratio {masking_ratio}")

    n = ranking.size
    top = ranking.order[:mask_count(masking_ratio, n)]
    hint_count = 0 if hint_strategy == "none" else mask_count(hint_ratio, n)
    if hint_count >= top.size:
        raise MaskSpecException(
            f"{hint_count} hints would re-expose all {top.size} masked tokens"
        )
    if hint_count == 0:
        return MaskSpec.from_masked(n, top)

    rng = np.random.default_rng(seed)
    probabilities = None
    if hint_strategy == "score":
        weights = np.maximum(ranking.scores[top], 0.0)
        if np.count_nonzero(weights) < hint_count:
            # choice without replacement needs enough nonzero weights
            weights = weights + 1e-12
        probabilities = weights / weights.sum()
    hints = rng.choice(top, size=hint_count, replace=False, p=probabilities)
    return MaskSpec.from_masked(n, top, hints)


def hint_ratio_for_epoch(config: TrainConfig, epoch: int, trigger_epoch: int | None) -> float:
    """
    Hint ratio in force at an informed epoch.

    The linear schedule decays from `hint_start` at the trigger epoch to
    `hint_end` at the final epoch.
    """
    if config.hint_strategy == "none":
        return 0.0
    if config.hint_schedule == "constant":
        return config.hint_ratio
    start = trigger_epoch or 0
    span = max(1, config.epochs - 1 - start)
    progress = min(1.0, max(0.0, (epoch - start) / span))
    return config.hint_start + (config.hint_end - config.hint_start) * progress


def target_for_epoch(policy: str, epoch: int, trigger_epoch: int | None) -> str:
    """Cluster ("object" or "background") the mask concentrates on at an epoch."""
    if policy not in TARGET_POLICIES:
        raise MaskSpecException(f"Unknown target-cluster policy: {policy}")
    if policy != "alternate":
        return policy
    return "object" if (epoch - (trigger_epoch or 0)) % 2 == 0 else "background"


@dataclass(frozen=True)
class InformedMask:
    """An informed mask with the partition and ranking it came from."""
    mask: MaskSpec
    partition: PartitionResult
    ranking: RelevanceRanking
    target: str


def informed_mask(
    embeddings: np.ndarray,
    masking_ratio: float,
    hint_ratio: float,
    hint_strategy: str,
    seed: Seed,
    target: str = "object",
    negative: str = "clip"
) -> InformedMask:
    """
    Self-guided mask of one image from its token embeddings.

    Builds the cosine graph, bipartitions it, ranks tokens by relevance to
    the target cluster's mean embedding and masks the top of the ranking.

    Raises:
        DegenerateGraphException: If the similarity graph has no positive edge
    """
    if target not in ("object", "background"):
        raise MaskSpecException(f"Unknown mask target: {target}")
    graph = similarity_graph(similarity_matrix(embeddings), negative)
    partition = ncut_bipartition(graph)
    cluster = partition.object_tokens if target == "object" else partition.background_tokens
    ranking = relevance_scores(embeddings, cluster)
    mask = build_informed_mask(ranking, masking_ratio, hint_ratio, hint_strategy, seed)
    return InformedMask(mask=mask, partition=partition, ranking=ranking, target=target)
