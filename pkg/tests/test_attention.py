"""Attention-operator tests: hand cases, masks, counting, dense oracle."""

import numpy as np
import pytest

from spikekit import (
    addition_count,
    dense_attention_reference,
    firing_rate,
    spike_attention_per_channel,
    spike_attention_v1,
    spike_attention_v2,
    variant_agreement,
)

Q = np.array([[1.0, 0.0], [1.0, 1.0]])
K = np.array([[1.0, 1.0], [0.0, 1.0]])
V = np.array([[1.0, 1.0], [0.0, 1.0]])


def random_spikes(rng, shape, rate):
    return (rng.random(shape) < rate).astype(np.float64)


class TestValueGated:
    def test_zero_query_masks_everything(self):
        out = spike_attention_v1(np.zeros_like(Q), K, V)
        assert not out.any()

    def test_hand_case(self):
        # q*k = [[1,0],[0,1]], column sums [1,1], gate at 1 -> output = V
        out = spike_attention_v1(Q, K, V, heads=1, u_th=1.0)
        np.testing.assert_array_equal(out, V)

    def test_hand_case_higher_threshold(self):
        out = spike_attention_v1(Q, K, V, u_th=2.0)
        assert not out.any()

    def test_non_binary_rejected(self):
        with pytest.raises(ValueError):
            spike_attention_v1(Q * 0.5, K, V)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            spike_attention_v1(Q, K[:1], V)

    def test_heads_must_divide(self):
        with pytest.raises(ValueError):
            spike_attention_v1(Q, K, V, heads=3)


class TestQueryGated:
    def test_zero_key(self):
        out = spike_attention_v2(Q, np.zeros_like(K), V)
        assert not out.any()

    def test_hand_case(self):
        # k*v = [[1,1],[0,1]], column sums [1,2], gate [1,1] -> output = Q
        out = spike_attention_v2(Q, K, V, u_th=1.0)
        np.testing.assert_array_equal(out, Q)

    def test_broadcast_mask(self):
        # all-ones query with gate [1, 0]: channel 0 all ones, channel 1 zeros
        q = np.ones((3, 2))
        k = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]])
        v = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]])
        out = spike_attention_v2(q, k, v)
        np.testing.assert_array_equal(out[:, 0], np.ones(3))
        np.testing.assert_array_equal(out[:, 1], np.zeros(3))


class TestPerChannel:
    def test_zero_value_gates_everything_off(self):
        out = spike_attention_per_channel(Q, K, np.zeros_like(V))
        assert not out.any()

    def test_hand_dot(self):
        # channel 0: k=[1,0], v=[1,1] -> dot=1 -> gate fires
        out = spike_attention_per_channel(Q, np.array([[1.0, 0], [0, 0]]),
                                          np.array([[1.0, 0], [1, 0]]))
        np.testing.assert_array_equal(out[:, 0], Q[:, 0])

    def test_wrong_head_count_rejected(self):
        with pytest.raises(ValueError):
            spike_attention_per_channel(Q, K, V, heads=1)

    def test_matches_query_gated(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            shape = (4, int(rng.integers(2, 8)), int(rng.integers(2, 16)))
            q = random_spikes(rng, shape, 0.4)
            k = random_spikes(rng, shape, 0.3)
            v = random_spikes(rng, shape, 0.5)
            a = spike_attention_per_channel(q, k, v, heads=shape[-1])
            b = spike_attention_v2(q, k, v, heads=shape[-1])
            assert np.array_equal(a, b)


class TestMaskProperties:
    def test_binary_and_monotone(self):
        rng = np.random.default_rng(11)
        q = random_spikes(rng, (8, 16, 32), 0.2)
        k = random_spikes(rng, (8, 16, 32), 0.2)
        v = random_spikes(rng, (8, 16, 32), 0.4)
        out1 = spike_attention_v1(q, k, v, heads=4)
        out2 = spike_attention_v2(q, k, v, heads=4)
        assert np.all((out1 == 0) | (out1 == 1))
        assert np.all((out2 == 0) | (out2 == 1))
        assert firing_rate(out1) <= firing_rate(v)
        assert firing_rate(out2) <= firing_rate(q)

    def test_channel_structure(self):
        # per (leading index, channel): output column is the value column or zero
        rng = np.random.default_rng(5)
        q = random_spikes(rng, (6, 8, 12), 0.3)
        k = random_spikes(rng, (6, 8, 12), 0.3)
        v = random_spikes(rng, (6, 8, 12), 0.5)
        out = spike_attention_v1(q, k, v)
        for lead in range(6):
            for c in range(12):
                col = out[lead, :, c]
                assert np.array_equal(col, v[lead, :, c]) or not col.any()

    def test_head_count_does_not_change_values(self):
        rng = np.random.default_rng(9)
        q = random_spikes(rng, (4, 8, 16), 0.3)
        k = random_spikes(rng, (4, 8, 16), 0.3)
        v = random_spikes(rng, (4, 8, 16), 0.4)
        base = spike_attention_v1(q, k, v, heads=1)
        for heads in (2, 4, 8, 16):
            assert np.array_equal(base, spike_attention_v1(q, k, v, heads=heads))

    def test_agreement_diagnostic_bounded(self):
        rng = np.random.default_rng(13)
        q = random_spikes(rng, (4, 8, 16), 0.3)
        k = random_spikes(rng, (4, 8, 16), 0.3)
        v = random_spikes(rng, (4, 8, 16), 0.4)
        rate = variant_agreement(q, k, v)
        assert 0.0 <= rate <= 1.0


class TestAdditionCount:
    def test_zero_inputs(self):
        assert addition_count(np.zeros((3, 4)), np.zeros((3, 4))) == 0

    def test_hand_case(self):
        assert addition_count(Q, K) == 2

    def test_independence_model(self):
        rng = np.random.default_rng(17)
        n, d, t = 64, 64, 4
        r_q, r_k = 0.3, 0.25
        total = 0
        trials = 100
        for _ in range(trials):
            q = random_spikes(rng, (t, n, d), r_q)
            k = random_spikes(rng, (t, n, d), r_k)
            total += addition_count(q, k)
        expected = trials * r_q * r_k * n * d * t
        assert abs(total - expected) / expected < 0.10

    def test_doubling_slopes(self):
        rng = np.random.default_rng(23)
        rate = 0.3

        def mean_count(n, d, trials=30):
            acc = 0
            for _ in range(trials):
                k = random_spikes(rng, (2, n, d), rate)
                v = random_spikes(rng, (2, n, d), rate)
                acc += addition_count(k, v)
            return acc / trials

        for vary in ("n", "d"):
            sizes = [16, 32, 64, 128]
            counts = [
                mean_count(s, 64) if vary == "n" else mean_count(64, s) for s in sizes
            ]
            slope = np.polyfit(np.log2(sizes), np.log2(counts), 1)[0]
            assert abs(slope - 1.0) <= 0.1, f"{vary} slope {slope}"


class TestDenseReference:
    def test_single_token_returns_value(self):
        rng = np.random.default_rng(2)
        q = rng.normal(size=(3, 1, 8))
        k = rng.normal(size=(3, 1, 8))
        v = rng.normal(size=(3, 1, 8))
        np.testing.assert_allclose(dense_attention_reference(q, k, v, heads=2), v)

    def test_two_token_hand_softmax(self):
        q = np.array([[1.0, 0.0], [0.0, 1.0]])
        k = np.array([[1.0, 0.0], [0.0, 1.0]])
        v = np.array([[2.0, 0.0], [0.0, 4.0]])
        out = dense_attention_reference(q, k, v, heads=1, scale=1.0)
        # logits row 0: [1, 0] -> weights [e/(e+1), 1/(e+1)]
        w = np.exp(1.0) / (np.exp(1.0) + 1.0)
        expected = np.array(
            [[2.0 * w, 4.0 * (1 - w)], [2.0 * (1 - w), 4.0 * w]]
        )
        np.testing.assert_allclose(out, expected, rtol=1e-12)

    def test_identical_query_rows(self):
        rng = np.random.default_rng(4)
        q = np.tile(rng.normal(size=(1, 6)), (5, 1))
        k = rng.normal(size=(5, 6))
        v = rng.normal(size=(5, 6))
        out = dense_attention_reference(q, k, v, heads=3)
        for row in range(1, 5):
            np.testing.assert_allclose(out[row], out[0], rtol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            dense_attention_reference(np.zeros((2, 3)), np.zeros((2, 4)), np.zeros((2, 3)))
