"""Tests for the conformer-style encoder blocks."""

import math

import numpy as np
import pytest

from skiprec import autodiff as ad
from skiprec import encoder as enc
from skiprec.errors import EmptySequenceError, ParameterError


def make_seq(rng, length, d):
    frames = ad.Tensor(rng.normal(size=(length, d)))
    return enc.EncodedSequence(frames=frames, orig_index=np.arange(length, dtype=np.int64))


class TestBlockShapes:
    def test_shape_and_index_passthrough(self):
        rng = np.random.default_rng(0)
        block = enc.init_block(rng, d_model=8, heads=2, kernel=3, ffn_multiple=2)
        seq = make_seq(rng, 5, 8)
        seq.orig_index = np.array([0, 2, 3, 7, 9], dtype=np.int64)
        out = enc.conformer_block(seq, block, heads=2)
        assert out.frames.data.shape == (5, 8)
        assert out.orig_index is seq.orig_index

    @pytest.mark.parametrize("length", [1, 2, 9])
    def test_run_blocks_matches_sequential_application(self, length):
        rng = np.random.default_rng(1)
        blocks = [enc.init_block(rng, 8, 2, 3, 2) for _ in range(3)]
        seq = make_seq(rng, length, 8)
        stacked = enc.run_blocks(seq, blocks, heads=2)
        manual = seq
        for b in blocks:
            manual = enc.conformer_block(manual, b, heads=2)
        np.testing.assert_array_equal(stacked.frames.data, manual.frames.data)

    def test_empty_sequence_rejected(self):
        rng = np.random.default_rng(2)
        block = enc.init_block(rng, 8, 2, 3, 2)
        seq = make_seq(rng, 0, 8)
        with pytest.raises(EmptySequenceError):
            enc.conformer_block(seq, block, heads=2)

    def test_even_kernel_rejected(self):
        rng = np.random.default_rng(3)
        with pytest.raises(ParameterError):
            enc.init_block(rng, 8, 2, kernel=4)

    def test_width_not_divisible_by_heads_rejected(self):
        rng = np.random.default_rng(4)
        with pytest.raises(ParameterError):
            enc.init_block(rng, 9, 2, kernel=3)


class TestIdentityBlock:
    def test_zeroed_branches_give_bitwise_identity(self):
        rng = np.random.default_rng(5)
        block = enc.zero_residual_branches(enc.init_block(rng, 8, 2, 3, 2))
        for trial in range(5):
            seq = make_seq(rng, int(rng.integers(1, 12)), 8)
            before = seq.frames.data.copy()
            out = enc.conformer_block(seq, block, heads=2)
            np.testing.assert_array_equal(out.frames.data, before)

    def test_zeroed_stack_is_still_identity(self):
        rng = np.random.default_rng(6)
        blocks = [enc.zero_residual_branches(enc.init_block(rng, 8, 4, 5, 2))
                  for _ in range(3)]
        seq = make_seq(rng, 7, 8)
        before = seq.frames.data.copy()
        out = enc.run_blocks(seq, blocks, heads=4)
        np.testing.assert_array_equal(out.frames.data, before)

    def test_unzeroed_block_changes_input(self):
        rng = np.random.default_rng(7)
        block = enc.init_block(rng, 8, 2, 3, 2)
        seq = make_seq(rng, 6, 8)
        out = enc.conformer_block(seq, block, heads=2)
        assert not np.allclose(out.frames.data, seq.frames.data)


class TestAttentionBranch:
    def test_weight_rows_sum_to_one(self):
        rng = np.random.default_rng(8)
        p = enc.init_attention(rng, 8)
        x = ad.Tensor(rng.normal(size=(6, 8)))
        _, weights = enc.self_attention_branch(x, p, heads=2)
        assert weights.shape == (2, 6, 6)
        np.testing.assert_allclose(weights.sum(axis=2), 1.0, atol=1e-12)

    def test_key_mask_zeroes_columns(self):
        rng = np.random.default_rng(9)
        p = enc.init_attention(rng, 8)
        x = ad.Tensor(rng.normal(size=(5, 8)))
        mask = np.array([True, False, True, True, False])
        _, weights = enc.self_attention_branch(x, p, heads=2, key_mask=mask)
        assert np.all(weights[:, :, ~mask] == 0.0)
        np.testing.assert_allclose(weights.sum(axis=2), 1.0, atol=1e-12)


class TestMacCounter:
    @pytest.mark.parametrize("length,d,heads", [(5, 8, 2), (9, 8, 4), (3, 16, 2)])
    def test_single_block_tally(self, length, d, heads):
        rng = np.random.default_rng(10)
        block = enc.init_block(rng, d, heads, 3, 2)
        seq = make_seq(rng, length, d)
        enc.reset_attention_macs()
        enc.conformer_block(seq, block, heads=heads)
        assert enc.attention_macs() == heads * length * length * (d // heads)

    def test_stack_tally_accumulates(self):
        rng = np.random.default_rng(11)
        blocks = [enc.init_block(rng, 8, 2, 3, 2) for _ in range(3)]
        seq = make_seq(rng, 4, 8)
        enc.reset_attention_macs()
        enc.run_blocks(seq, blocks, heads=2)
        assert enc.attention_macs() == 3 * 2 * 4 * 4 * 4

    def test_reset_clears_tally(self):
        rng = np.random.default_rng(12)
        block = enc.init_block(rng, 8, 2, 3, 2)
        enc.conformer_block(make_seq(rng, 4, 8), block, heads=2)
        enc.reset_attention_macs()
        assert enc.attention_macs() == 0


class TestPositionalTable:
    def test_values_match_direct_formula(self):
        table = enc.positional_table(10, 8)
        for pos in range(10):
            for j in range(8):
                angle = pos / 10000.0 ** ((j - j % 2) / 8)
                want = math.sin(angle) if j % 2 == 0 else math.cos(angle)
                assert table[pos, j] == pytest.approx(want, abs=1e-12)

    def test_first_row_alternates_zero_one(self):
        table = enc.positional_table(4, 6)
        np.testing.assert_allclose(table[0], [0, 1, 0, 1, 0, 1], atol=1e-15)

    def test_attach_positions_adds_table(self):
        rng = np.random.default_rng(13)
        x = rng.normal(size=(6, 8))
        out = enc.attach_positions(ad.Tensor(x.copy()))
        np.testing.assert_allclose(out.data, x + enc.positional_table(6, 8), atol=0)

    def test_cache_returns_consistent_values(self):
        a = enc.positional_table(5, 4)
        b = enc.positional_table(5, 4)
        np.testing.assert_array_equal(a, b)


class TestDropout:
    def teardown_method(self):
        enc.set_dropout(0.0)

    def test_invalid_rates_rejected(self):
        with pytest.raises(ParameterError):
            enc.set_dropout(-0.1)
        with pytest.raises(ParameterError):
            enc.set_dropout(1.0)

    def test_dropout_perturbs_and_disabling_restores(self):
        rng = np.random.default_rng(14)
        block = enc.init_block(rng, 8, 2, 3, 2)
        seq = make_seq(rng, 6, 8)
        clean = enc.conformer_block(seq, block, heads=2).frames.data.copy()
        enc.set_dropout(0.5, seed=1)
        noisy = enc.conformer_block(seq, block, heads=2).frames.data
        assert not np.array_equal(noisy, clean)
        enc.set_dropout(0.0)
        again = enc.conformer_block(seq, block, heads=2).frames.data
        np.testing.assert_array_equal(again, clean)


class TestBlockGradients:
    def test_gradient_wrt_input_frames(self):
        rng = np.random.default_rng(15)
        block = enc.init_block(rng, 8, 2, 3, 2)
        x = ad.Tensor(rng.normal(size=(3, 8)))

        def loss(frames):
            seq = enc.EncodedSequence(frames=frames, orig_index=np.arange(3))
            out = enc.conformer_block(seq, block, heads=2)
            return ad.logsumexp_all(out.frames)

        err = ad.grad_check(loss, [x])
        assert err <= 1e-4

    def test_gradient_wrt_selected_parameters(self):
        rng = np.random.default_rng(16)
        block = enc.init_block(rng, 8, 2, 3, 2)
        frames = rng.normal(size=(3, 8))

        def loss(*_):
            seq = enc.EncodedSequence(frames=ad.Tensor(frames), orig_index=np.arange(3))
            out = enc.conformer_block(seq, block, heads=2)
            return ad.logsumexp_all(out.frames)

        targets = [block.attn.wq.value, block.conv.dw_w.value,
                   block.ffn1.w1.value, block.out_norm.gain.value]
        err = ad.grad_check(loss, targets)
        assert err <= 1e-4
