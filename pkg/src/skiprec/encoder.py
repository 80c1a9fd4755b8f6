"""Conformer-style encoder blocks over per-utterance frame sequences.

Block layout, every branch residual (including the trailing norm, so a
block with zeroed branch outputs is exactly the identity):

    x += 0.5 * ffn(norm(x))
    x += self_attention(norm(x))
    x += conv_module(norm(x))
    x += 0.5 * ffn(norm(x))
    x += norm(x)            # trailing norm, residual form

The conv module is pointwise-to-2D / GLU / depthwise / norm / swish /
pointwise. Absolute sinusoidal positions are added once, before the first
block; split-off subsequences are treated as contiguous afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import EmptySequenceError, ParameterError

# Attention score-matrix multiply-accumulates, tallied per encoder forward.
_ATTN_MACS = 0

# (rate, numpy Generator) when dropout is switched on for training.
_DROPOUT: tuple[float, np.random.Generator] | None = None


def reset_attention_macs() -> None:
    global _ATTN_MACS
    _ATTN_MACS = 0


def attention_macs() -> int:
    return _ATTN_MACS


def set_dropout(rate: float, seed: int | None = None) -> None:
    """Enable (rate > 0) or disable dropout on branch outputs."""
    global _DROPOUT
    if rate < 0 or rate >= 1:
        raise ParameterError(f"dropout rate must lie in [0, 1), got {rate}")
    _DROPOUT = (rate, np.random.default_rng(seed)) if rate > 0 else None


def _dropout(x: Tensor) -> Tensor:
    if _DROPOUT is None:
        return x
    rate, rng = _DROPOUT
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    return ad.mul_const(x, mask)


@dataclass
class EncodedSequence:
    """Encoder frames plus each row's index in the pre-split frame order."""

    frames: Tensor            # (L, D)
    orig_index: np.ndarray    # (L,) strictly increasing int64

    @property
    def length(self) -> int:
        return self.frames.data.shape[0]


@dataclass
class NormParams:
    gain: Parameter
    bias: Parameter


@dataclass
class FeedForwardParams:
    norm: NormParams
    w1: Parameter
    b1: Parameter
    w2: Parameter
    b2: Parameter


@dataclass
class AttentionParams:
    norm: NormParams
    wq: Parameter
    bq: Parameter
    wk: Parameter
    bk: Parameter
    wv: Parameter
    bv: Parameter
    wo: Parameter
    bo: Parameter


@dataclass
class ConvModuleParams:
    norm: NormParams
    w_in: Parameter           # (D, 2D) pointwise, split by the GLU
    b_in: Parameter
    dw_w: Parameter           # (K, D) depthwise kernel, K odd
    dw_b: Parameter
    mid_norm: NormParams
    w_out: Parameter          # (D, D) pointwise
    b_out: Parameter


@dataclass
class ConformerBlockParams:
    ffn1: FeedForwardParams
    attn: AttentionParams
    conv: ConvModuleParams
    ffn2: FeedForwardParams
    out_norm: NormParams


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


def _init_norm(d: int) -> NormParams:
    return NormParams(gain=Parameter(np.ones(d)), bias=Parameter(np.zeros(d)))


def _init_ffn(rng, d: int, mult: int) -> FeedForwardParams:
    return FeedForwardParams(
        norm=_init_norm(d),
        w1=Parameter(_glorot(rng, d, mult * d)),
        b1=Parameter(np.zeros(mult * d)),
        w2=Parameter(_glorot(rng, mult * d, d)),
        b2=Parameter(np.zeros(d)),
    )


def init_attention(rng, d: int) -> AttentionParams:
    return AttentionParams(
        norm=_init_norm(d),
        wq=Parameter(_glorot(rng, d, d)), bq=Parameter(np.zeros(d)),
        wk=Parameter(_glorot(rng, d, d)), bk=Parameter(np.zeros(d)),
        wv=Parameter(_glorot(rng, d, d)), bv=Parameter(np.zeros(d)),
        wo=Parameter(_glorot(rng, d, d)), bo=Parameter(np.zeros(d)),
    )


def _init_conv(rng, d: int, kernel: int) -> ConvModuleParams:
    if kernel % 2 == 0 or kernel < 1:
        raise ParameterError(f"depthwise kernel must be odd and positive, got {kernel}")
    return ConvModuleParams(
        norm=_init_norm(d),
        w_in=Parameter(_glorot(rng, d, 2 * d)),
        b_in=Parameter(np.zeros(2 * d)),
        dw_w=Parameter(rng.uniform(-1, 1, size=(kernel, d)) * np.sqrt(3.0 / kernel)),
        dw_b=Parameter(np.zeros(d)),
        mid_norm=_init_norm(d),
        w_out=Parameter(_glorot(rng, d, d)),
        b_out=Parameter(np.zeros(d)),
    )


def init_block(rng: np.random.Generator, d_model: int, heads: int, kernel: int,
               ffn_multiple: int = 4) -> ConformerBlockParams:
    if d_model % heads:
        raise ParameterError(f"model width {d_model} not divisible by {heads} heads")
    return ConformerBlockParams(
        ffn1=_init_ffn(rng, d_model, ffn_multiple),
        attn=init_attention(rng, d_model),
        conv=_init_conv(rng, d_model, kernel),
        ffn2=_init_ffn(rng, d_model, ffn_multiple),
        out_norm=_init_norm(d_model),
    )


def zero_residual_branches(block: ConformerBlockParams) -> ConformerBlockParams:
    """Zero every branch's output stage so the block computes the identity."""
    for p in (block.ffn1.w2, block.ffn1.b2, block.attn.wo, block.attn.bo,
              block.conv.w_out, block.conv.b_out, block.ffn2.w2, block.ffn2.b2,
              block.out_norm.gain, block.out_norm.bias):
        p.value.data[...] = 0.0
    return block


def _norm(x: Tensor, n: NormParams) -> Tensor:
    return ad.layer_norm(x, n.gain.value, n.bias.value)


def _ffn_branch(x: Tensor, p: FeedForwardParams) -> Tensor:
    h = _norm(x, p.norm)
    h = ad.swish(ad.affine(h, p.w1.value, p.b1.value))
    return _dropout(ad.affine(h, p.w2.value, p.b2.value))


def self_attention_branch(x: Tensor, p: AttentionParams, heads: int,
                          key_mask=None) -> tuple[Tensor, np.ndarray]:
    """Pre-norm multi-head self-attention; returns (branch output, weights)."""
    global _ATTN_MACS
    h = _norm(x, p.norm)
    q = ad.affine(h, p.wq.value, p.bq.value)
    k = ad.affine(h, p.wk.value, p.bk.value)
    v = ad.affine(h, p.wv.value, p.bv.value)
    ctx, weights = ad.attention_core(q, k, v, heads, key_mask=key_mask)
    n = x.data.shape[0]
    _ATTN_MACS += heads * n * n * (x.data.shape[1] // heads)
    return _dropout(ad.affine(ctx, p.wo.value, p.bo.value)), weights


def _conv_branch(x: Tensor, p: ConvModuleParams) -> Tensor:
    h = _norm(x, p.norm)
    h = ad.glu_halves(ad.affine(h, p.w_in.value, p.b_in.value))
    h = ad.depthwise_conv1d(h, p.dw_w.value, p.dw_b.value)
    h = ad.swish(_norm(h, p.mid_norm))
    return _dropout(ad.affine(h, p.w_out.value, p.b_out.value))


def conformer_block(seq: EncodedSequence, p: ConformerBlockParams, heads: int,
                    key_mask=None) -> EncodedSequence:
    if seq.length == 0:
        raise EmptySequenceError("conformer block requires at least one frame")
    x = seq.frames
    x = ad.add(x, ad.scale(_ffn_branch(x, p.ffn1), 0.5))
    branch, _ = self_attention_branch(x, p.attn, heads, key_mask=key_mask)
    x = ad.add(x, branch)
    x = ad.add(x, _conv_branch(x, p.conv))
    x = ad.add(x, ad.scale(_ffn_branch(x, p.ffn2), 0.5))
    x = ad.add(x, _norm(x, p.out_norm))
    return EncodedSequence(frames=x, orig_index=seq.orig_index)


def run_blocks(seq: EncodedSequence, blocks: list[ConformerBlockParams], heads: int,
               key_mask=None) -> EncodedSequence:
    for p in blocks:
        seq = conformer_block(seq, p, heads, key_mask=key_mask)
    return seq


_POS_CACHE: dict[tuple[int, int], np.ndarray] = {}


def positional_table(length: int, d_model: int) -> np.ndarray:
    """Interleaved sine/cosine absolute position table, (length, d_model)."""
    key = (length, d_model)
    cached = _POS_CACHE.get(key)
    if cached is not None:
        return cached
    pos = np.arange(length)[:, None]
    idx = np.arange(d_model)[None, :]
    angle = pos / np.power(10000.0, (2 * (idx // 2)) / d_model)
    table = np.where(idx % 2 == 0, np.sin(angle), np.cos(angle))
    if len(_POS_CACHE) > 64:
        _POS_CACHE.clear()
    _POS_CACHE[key] = table
    return table


def attach_positions(frames: Tensor) -> Tensor:
    """Add absolute positions; applied once, before the first encoder block."""
    n, d = frames.data.shape
    return ad.add_const(frames, positional_table(n, d).astype(frames.data.dtype))
