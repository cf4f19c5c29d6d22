"""
Exploitation-rate provenance through the decoder and the informed-masking trigger.
"""
import logging
from typing import Sequence

import numpy as np

from app.core.exceptions import ProvenanceException
from app.models.provenance import LayerRates, ProvenanceState, TriggerHistory
from app.models.relations import RelationMatrix
from app.models.tokens import MaskSpec


logger = logging.getLogger(__name__)


def _as_attention(attention: RelationMatrix | np.ndarray) -> np.ndarray:
    if isinstance(attention, RelationMatrix):
        if attention.kind != "attention":
            raise ProvenanceException("Exploitation rates need an attention relation")
        return attention.values
    return RelationMatrix(attention, "attention").values


def layer_exploitation(
    attention: RelationMatrix | np.ndarray,
    source: Sequence[int] | np.ndarray,
    target: Sequence[int] | np.ndarray
) -> float:
    """
    Average attention mass the target tokens place on the source tokens.

    Args:
        attention: Row-stochastic n x n attention (rows are queries)
        source: Key indices the information comes from
        target: Query indices being constructed

    Returns:
        r in [0, 1]

    Raises:
        ProvenanceException: If either set is empty
    """
    values = _as_attention(attention)
    source = np.asarray(source, dtype=np.int64)
    target = np.asarray(target, dtype=np.int64)
    if source.size == 0 or target.size == 0:
        raise ProvenanceException("Source and target token sets must be nonempty")
    rate = values[np.ix_(target, source)].sum() / target.size
    return float(np.clip(rate, 0.0, 1.0))


def layer_rates(attention: RelationMatrix | np.ndarray, visible: np.ndarray, masked: np.ndarray) -> LayerRates:
    """All four visible/mask rates of one layer."""
    values = _as_attention(attention)
    return LayerRates(
        visible_to_visible=layer_exploitation(values, visible, visible),
        visible_to_mask=layer_exploitation(values, visible, masked),
        mask_to_visible=layer_exploitation(values, masked, visible),
        mask_to_mask=layer_exploitation(values, masked, masked),
    )


def accumulate(state: ProvenanceState, rates: LayerRates) -> ProvenanceState:
    """
    Push the provenance state through one more layer.

    R^{(l)}_{A->B} = sum over C in {V, M} of r^{(l)}_{C->B} * R^{(l-1)}_{A->C}.

    Raises:
        ProvenanceException: If the layer rates do not conserve mass per target set
    """
    for target, total in (
        ("visible", rates.visible_to_visible + rates.mask_to_visible),
        ("mask", rates.visible_to_mask + rates.mask_to_mask),
    ):
        if abs(total - 1.0) > 1e-6:
            raise ProvenanceException(f"Layer rates into the {target} set sum to {total}, not 1")

    return ProvenanceState(
        layer=state.layer + 1,
        visible_to_visible=(
            rates.visible_to_visible * state.visible_to_visible
            + rates.mask_to_visible * state.visible_to_mask
        ),
        visible_to_mask=(
            rates.visible_to_mask * state.visible_to_visible
            + rates.mask_to_mask * state.visible_to_mask
        ),
        mask_to_visible=(
            rates.visible_to_visible * state.mask_to_visible
            + rates.mask_to_visible * state.mask_to_mask
        ),
        mask_to_mask=(
            rates.visible_to_mask * state.mask_to_visible
            + rates.mask_to_mask * state.mask_to_mask
        ),
        masking_ratio=state.masking_ratio,
    )


def overall_rates(state: ProvenanceState, masking_ratio: float) -> tuple[float, float]:
    """
    Shares of the visible and mask sets in the whole output.

    Returns:
        (R_{V->O}, R_{M->O}), summing to 1
    """
    if not 0.0 < masking_ratio < 1.0:
        raise ProvenanceException(f"Masking ratio must be in (0, 1), got {masking_ratio}")
    m = masking_ratio
    visible = m * state.visible_to_mask + (1.0 - m) * state.visible_to_visible
    mask = m * state.mask_to_mask + (1.0 - m) * state.mask_to_visible
    return visible, mask


def decoder_provenance(
    attentions: Sequence[RelationMatrix | np.ndarray],
    mask: MaskSpec
) -> list[ProvenanceState]:
    """
    Accumulated provenance after every decoder layer of one masked pass.

    Hint tokens belong to the visible set.

    Args:
        attentions: Head-averaged decoder attention per layer, token-ordered
        mask: The pass's MaskSpec

    Returns:
        One state per decoder layer (the last is the output state)
    """
    if mask.masked.size == 0 or mask.visible.size == 0:
        raise ProvenanceException("Provenance needs both visible and masked tokens")
    state = ProvenanceState.base(mask.masking_ratio)
    states = []
    for attention in attentions:
        state = accumulate(state, layer_rates(attention, mask.visible, mask.masked))
        states.append(state)
    return states


def trigger_check(history: TriggerHistory, epoch: int, rates: tuple[float, float]) -> TriggerHistory:
    """
    Record one epoch's (R_{V->O}, R_{M->O}) and set T at the first crossing.

    Raises:
        TriggerOrderException: If the epoch does not follow the last recorded one
    """
    visible_rate, mask_rate = rates
    history.append(epoch, visible_rate, mask_rate)
    if history.trigger_epoch is None and mask_rate >= visible_rate:
        history.trigger_epoch = epoch
        logger.info(
            f"Mask-token share {mask_rate:.4f} reached visible share {visible_rate:.4f}: trigger epoch {epoch}"
        )
    return history


def per_token_rates(rates: tuple[float, float], masking_ratio: float) -> tuple[float, float]:
    """
    Overall rates divided by each set's token fraction, renormalized to sum to 1.

    Uniform attention (and the base state) gives (0.5, 0.5) at any masking
    ratio; values above 0.5 mean a set contributes more per token than the
    other.

    Raises:
        ProvenanceException: If m is not in (0, 1)
    """
    if not 0.0 < masking_ratio < 1.0:
        raise ProvenanceException(f"Masking ratio must be in (0, 1), got {masking_ratio}")
    visible = rates[0] / (1.0 - masking_ratio)
    mask = rates[1] / masking_ratio
    total = visible + mask
    return visible / total, mask / total


def trigger_rates(rates: tuple[float, float], masking_ratio: float, statistic: str) -> tuple[float, float]:
    """The pair the trigger compares: raw shares ("share") or `per_token_rates` ("per_token")."""
    if statistic == "share":
        return rates
    if statistic == "per_token":
        return per_token_rates(rates, masking_ratio)
    raise ProvenanceException(f"Unknown trigger statistic: {statistic}")
