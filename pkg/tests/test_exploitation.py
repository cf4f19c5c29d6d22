"""
Tests for exploitation rates, provenance rollout and the trigger.
"""
import csv

import numpy as np
import pytest

from app.core.exceptions import ProvenanceException, TriggerOrderException
from app.models.provenance import LayerRates, ProvenanceState, TriggerHistory
from app.models.tokens import MaskSpec
from app.services.exploitation import (
    accumulate,
    decoder_provenance,
    layer_exploitation,
    layer_rates,
    overall_rates,
    per_token_rates,
    trigger_check,
    trigger_rates,
)
from tests.conftest import random_attention


def test_uniform_attention_rate_is_set_share():
    uniform = np.full((10, 10), 0.1)
    assert layer_exploitation(uniform, [0, 1, 2], [4, 5]) == pytest.approx(0.3)


def test_identity_attention_rates():
    identity = np.eye(6)
    assert layer_exploitation(identity, [1, 2], [1, 2]) == 1.0
    assert layer_exploitation(identity, [1, 2], [3, 4]) == 0.0


def test_layer_exploitation_matches_direct_summation():
    rng = np.random.default_rng(0)
    a = random_attention(rng, 12)
    source = rng.choice(12, 5, replace=False)
    target = rng.choice(12, 4, replace=False)
    expected = sum(a[i, j] for i in target for j in source) / len(target)
    assert layer_exploitation(a, source, target) == pytest.approx(expected, abs=1e-12)


def test_layer_exploitation_rejects_empty_sets():
    with pytest.raises(ProvenanceException):
        layer_exploitation(np.eye(3), [], [0])
    with pytest.raises(ProvenanceException):
        layer_exploitation(np.eye(3), [0], [])


def test_rates_into_a_target_sum_to_one():
    rng = np.random.default_rng(1)
    a = random_attention(rng, 10)
    rates = layer_rates(a, np.arange(4), np.arange(4, 10))
    assert rates.visible_to_visible + rates.mask_to_visible == pytest.approx(1.0)
    assert rates.visible_to_mask + rates.mask_to_mask == pytest.approx(1.0)


def test_one_uniform_layer_from_base():
    n, visible = 16, np.arange(4)
    masked = np.arange(4, 16)
    state = accumulate(ProvenanceState.base(0.75), layer_rates(np.full((n, n), 1 / n), visible, masked))
    assert state.visible_to_mask == pytest.approx(0.25)
    assert state.mask_to_mask == pytest.approx(0.75)
    assert overall_rates(state, 0.75) == pytest.approx((0.25, 0.75))


def test_base_state_overall_rates():
    assert overall_rates(ProvenanceState.base(0.75), 0.75) == pytest.approx((0.25, 0.75))


def test_identity_attention_leaves_state_unchanged():
    mask = MaskSpec.from_masked(8, [0, 2, 5])
    states = decoder_provenance([np.eye(8)] * 4, mask)
    base = ProvenanceState.base(mask.masking_ratio)
    for state in states:
        assert (state.visible_to_visible, state.visible_to_mask, state.mask_to_visible, state.mask_to_mask) == (
            base.visible_to_visible, base.visible_to_mask, base.mask_to_visible, base.mask_to_mask
        )
        assert overall_rates(state, mask.masking_ratio)[1] == pytest.approx(mask.masking_ratio)


def test_accumulate_rejects_non_conserving_rates():
    with pytest.raises(ProvenanceException):
        accumulate(ProvenanceState.base(0.5), LayerRates(0.5, 0.5, 0.4, 0.5))


def test_rates_outside_unit_interval_rejected():
    with pytest.raises(ProvenanceException):
        LayerRates(1.2, 0.5, -0.2, 0.5)


def test_conservation_over_random_stacks():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        n = int(rng.integers(4, 10))
        masked = rng.choice(n, int(rng.integers(1, n)), replace=False)
        mask = MaskSpec.from_masked(n, masked)
        states = decoder_provenance([random_attention(rng, n) for _ in range(3)], mask)
        for state in states:
            assert state.visible_to_visible + state.mask_to_visible == pytest.approx(1.0, abs=1e-6)
            assert state.visible_to_mask + state.mask_to_mask == pytest.approx(1.0, abs=1e-6)
        visible_rate, mask_rate = overall_rates(states[-1], mask.masking_ratio)
        assert visible_rate + mask_rate == pytest.approx(1.0, abs=1e-9)


def _homogeneous_attention(rng: np.random.Generator, sets: list[np.ndarray], n: int) -> np.ndarray:
    """Attention constant within every (query set, key set) block."""
    a = np.zeros((n, n))
    for queries in sets:
        shares = rng.dirichlet(np.ones(len(sets)))
        for share, keys in zip(shares, sets):
            a[np.ix_(queries, keys)] = share / len(keys)
    return a


def _token_rollout(attentions: list[np.ndarray], source: np.ndarray, target: np.ndarray) -> float:
    provenance = np.eye(attentions[0].shape[0])
    for a in attentions:
        provenance = a @ provenance
    return provenance[np.ix_(target, source)].sum() / len(target)


def test_set_rollout_matches_token_rollout_on_homogeneous_attention():
    rng = np.random.default_rng(3)
    n = 12
    mask = MaskSpec.from_masked(n, rng.choice(n, 7, replace=False))
    sets = [mask.visible, mask.masked]
    attentions = [_homogeneous_attention(rng, sets, n) for _ in range(3)]
    state = decoder_provenance(attentions, mask)[-1]

    v, m = mask.visible, mask.masked
    assert state.visible_to_visible == pytest.approx(_token_rollout(attentions, v, v), abs=1e-9)
    assert state.visible_to_mask == pytest.approx(_token_rollout(attentions, v, m), abs=1e-9)
    assert state.mask_to_visible == pytest.approx(_token_rollout(attentions, m, v), abs=1e-9)
    assert state.mask_to_mask == pytest.approx(_token_rollout(attentions, m, m), abs=1e-9)


def test_accumulation_depends_on_layer_order():
    mask = MaskSpec.from_masked(4, [2, 3])
    first = np.array([
        [0.7, 0.1, 0.1, 0.1],
        [0.1, 0.7, 0.1, 0.1],
        [0.4, 0.4, 0.1, 0.1],
        [0.4, 0.4, 0.1, 0.1],
    ])
    second = np.array([
        [0.25, 0.25, 0.25, 0.25],
        [0.25, 0.25, 0.25, 0.25],
        [0.05, 0.05, 0.45, 0.45],
        [0.05, 0.05, 0.45, 0.45],
    ])
    forward = decoder_provenance([first, second], mask)[-1]
    backward = decoder_provenance([second, first], mask)[-1]
    assert forward.mask_to_mask != pytest.approx(backward.mask_to_mask)
    m = mask.masked
    assert forward.mask_to_mask == pytest.approx(_token_rollout([first, second], m, m), abs=1e-12)
    assert forward.mask_to_mask == pytest.approx(0.2)
    assert backward.mask_to_mask == pytest.approx(0.58)


def test_trigger_fires_at_first_crossing():
    history = TriggerHistory()
    for epoch, mask_rate in enumerate([0.40, 0.48, 0.52]):
        trigger_check(history, epoch, (1 - mask_rate, mask_rate))
    assert history.trigger_epoch == 2


def test_trigger_is_never_unset():
    history = TriggerHistory()
    for epoch, mask_rate in enumerate([0.45, 0.55, 0.30, 0.60]):
        trigger_check(history, epoch, (1 - mask_rate, mask_rate))
    assert history.trigger_epoch == 1


def test_trigger_stays_unset_below_half():
    history = TriggerHistory()
    for epoch, mask_rate in enumerate([0.30, 0.35, 0.49]):
        trigger_check(history, epoch, (1 - mask_rate, mask_rate))
    assert history.trigger_epoch is None


def test_trigger_rejects_out_of_order_epochs():
    history = TriggerHistory()
    trigger_check(history, 3, (0.6, 0.4))
    with pytest.raises(TriggerOrderException):
        trigger_check(history, 3, (0.6, 0.4))
    with pytest.raises(TriggerOrderException):
        trigger_check(history, 1, (0.6, 0.4))


@pytest.mark.parametrize("ratio", [0.25, 0.375, 0.45])
def test_identity_decoder_never_triggers(ratio):
    n = 16
    mask = MaskSpec.from_masked(n, np.arange(int(ratio * n)))
    history = TriggerHistory()
    for epoch in range(1, 20):
        state = decoder_provenance([np.eye(n)] * 2, mask)[-1]
        trigger_check(history, epoch, overall_rates(state, mask.masking_ratio))
    assert history.trigger_epoch is None


def test_trigger_history_csv_and_round_trip(tmp_path):
    history = TriggerHistory()
    for epoch, mask_rate in [(1, 0.4), (2, 0.6)]:
        trigger_check(history, epoch, (1 - mask_rate, mask_rate))
    path = history.to_csv(tmp_path / "trigger.csv")
    with path.open() as handle:
        rows = list(csv.DictReader(handle))
    assert [row["triggered"] for row in rows] == ["0", "1"]
    assert TriggerHistory.from_dict(history.to_dict()) == history


@pytest.mark.parametrize("ratio", [0.25, 0.5, 0.75])
def test_per_token_rates_are_even_without_mixing(ratio):
    n = 16
    mask = MaskSpec.from_masked(n, np.arange(int(ratio * n)))
    uniform = np.full((n, n), 1.0 / n)
    for attentions in ([np.eye(n)] * 2, [uniform] * 2):
        state = decoder_provenance(attentions, mask)[-1]
        shares = overall_rates(state, mask.masking_ratio)
        assert shares[1] == pytest.approx(ratio)
        visible, masked = per_token_rates(shares, mask.masking_ratio)
        assert visible == pytest.approx(0.5)
        assert masked == pytest.approx(0.5)


def test_per_token_rates_follow_attention_to_visible_tokens():
    n, mask = 8, MaskSpec.from_masked(8, np.arange(6))
    attention = np.zeros((n, n))
    attention[:, 6:] = 0.4
    attention[:, :6] = 0.2 / 6
    state = decoder_provenance([attention], mask)[-1]
    shares = overall_rates(state, 0.75)
    assert shares == pytest.approx((0.8, 0.2))
    visible, masked = per_token_rates(shares, 0.75)
    assert visible == pytest.approx(12 / 13)
    assert masked == pytest.approx(1 / 13)
    assert visible + masked == pytest.approx(1.0)


def test_trigger_rates_select_the_statistic():
    assert trigger_rates((0.25, 0.75), 0.75, "share") == (0.25, 0.75)
    assert trigger_rates((0.25, 0.75), 0.75, "per_token") == pytest.approx((0.5, 0.5))
    with pytest.raises(ProvenanceException):
        trigger_rates((0.25, 0.75), 0.75, "bogus")
    with pytest.raises(ProvenanceException):
        per_token_rates((0.5, 0.5), 1.0)
