"""Autoregressive transformer decoder shared by both sequence losses.

The decoder vocabulary extends the CTC vocabulary with two reserved ids:
start-of-sequence (V) and end-of-sequence (V + 1); blank stays 0 and is
never a decoder target. Blocks are pre-norm: causal self-attention, cross
attention over encoder frames, then a swish feed-forward, each residual.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .encoder import (AttentionParams, EncodedSequence, FeedForwardParams,
                      NormParams, _ffn_branch, _init_ffn, _init_norm, _norm,
                      init_attention, positional_table)
from .errors import EmptySequenceError, ParameterError
from .ctc import check_tokens


@dataclass
class DecoderBlockParams:
    self_attn: AttentionParams
    cross_attn: AttentionParams
    ffn: FeedForwardParams


@dataclass
class DecoderParams:
    embed: Parameter                  # (V + 2, D)
    blocks: list[DecoderBlockParams]
    final_norm: NormParams
    out_w: Parameter                  # (D, V + 2)
    out_b: Parameter

    @property
    def vocab_size(self) -> int:
        """CTC vocabulary size; reserved ids sit above it."""
        return self.embed.value.data.shape[0] - 2

    @property
    def sos_id(self) -> int:
        return self.vocab_size

    @property
    def eos_id(self) -> int:
        return self.vocab_size + 1


def init_decoder(rng: np.random.Generator, d_model: int, heads: int, depth: int,
                 vocab_size: int, ffn_multiple: int = 4) -> DecoderParams:
    if depth < 1:
        raise ParameterError(f"decoder depth must be positive, got {depth}")
    if vocab_size < 2:
        raise ParameterError(f"vocab must hold blank plus at least one token, got {vocab_size}")
    v_out = vocab_size + 2
    lim = np.sqrt(6.0 / (v_out + d_model))
    blocks = [
        DecoderBlockParams(
            self_attn=init_attention(rng, d_model),
            cross_attn=init_attention(rng, d_model),
            ffn=_init_ffn(rng, d_model, ffn_multiple),
        )
        for _ in range(depth)
    ]
    return DecoderParams(
        embed=Parameter(rng.uniform(-lim, lim, size=(v_out, d_model))),
        blocks=blocks,
        final_norm=_init_norm(d_model),
        out_w=Parameter(rng.uniform(-lim, lim, size=(d_model, v_out))),
        out_b=Parameter(np.zeros(v_out)),
    )


def _cross_attention(x: Tensor, enc: Tensor, p: AttentionParams, heads: int) -> Tensor:
    h = _norm(x, p.norm)
    q = ad.affine(h, p.wq.value, p.bq.value)
    k = ad.affine(enc, p.wk.value, p.bk.value)
    v = ad.affine(enc, p.wv.value, p.bv.value)
    ctx, _ = ad.attention_core(q, k, v, heads)
    return ad.affine(ctx, p.wo.value, p.bo.value)


def _self_attention(x: Tensor, p: AttentionParams, heads: int) -> Tensor:
    h = _norm(x, p.norm)
    q = ad.affine(h, p.wq.value, p.bq.value)
    k = ad.affine(h, p.wk.value, p.bk.value)
    v = ad.affine(h, p.wv.value, p.bv.value)
    ctx, _ = ad.attention_core(q, k, v, heads, causal=True)
    return ad.affine(ctx, p.wo.value, p.bo.value)


def decoder_logits(enc: EncodedSequence, tokens_in: list[int], params: DecoderParams,
                   heads: int) -> Tensor:
    """Logits over the extended vocabulary for each input position."""
    if enc.length == 0:
        raise EmptySequenceError("decoder needs at least one encoder frame")
    if not tokens_in:
        raise EmptySequenceError("decoder needs at least one input token")
    d = params.embed.value.data.shape[1]
    x = ad.gather_rows(params.embed.value, np.asarray(tokens_in, dtype=np.int64))
    x = ad.add_const(x, positional_table(len(tokens_in), d).astype(x.data.dtype))
    for block in params.blocks:
        x = ad.add(x, _self_attention(x, block.self_attn, heads))
        x = ad.add(x, _cross_attention(x, enc.frames, block.cross_attn, heads))
        x = ad.add(x, _ffn_branch(x, block.ffn))
    x = _norm(x, params.final_norm)
    return ad.affine(x, params.out_w.value, params.out_b.value)


def aed_loss(enc: EncodedSequence, tokens, params: DecoderParams, heads: int) -> Tensor:
    """Teacher-forced cross-entropy over tokens plus end-of-sequence, mean per position."""
    tokens = check_tokens(tokens, params.vocab_size)
    if not tokens:
        raise EmptySequenceError("aed_loss requires a non-empty token sequence")
    inputs = [params.sos_id] + tokens
    targets = tokens + [params.eos_id]
    logits = decoder_logits(enc, inputs, params, heads)
    return ad.cross_entropy_mean(logits, targets)


def sequence_log_likelihood(enc: EncodedSequence, tokens, params: DecoderParams,
                            heads: int) -> float:
    """Sum of per-token log probabilities, end-of-sequence included.

    Accepts the empty sequence (scores end-of-sequence alone).
    """
    tokens = check_tokens(tokens, params.vocab_size)
    inputs = [params.sos_id] + tokens
    targets = np.asarray(tokens + [params.eos_id], dtype=np.int64)
    logits = decoder_logits(enc, inputs, params, heads).data
    m = logits.max(axis=1, keepdims=True)
    lse = (np.log(np.exp(logits - m).sum(axis=1, keepdims=True)) + m)[:, 0]
    picked = logits[np.arange(len(targets)), targets]
    return float((picked - lse).sum())


def rescore(enc: EncodedSequence, hypotheses: list[tuple[tuple[int, ...], float]],
            params: DecoderParams, heads: int, ctc_weight: float = 0.5) -> tuple[int, list[float]]:
    """Rank alignment-free hypotheses by decoder likelihood plus weighted CTC score.

    Returns (index of the best hypothesis, combined score per hypothesis);
    ties break toward the lower index.
    """
    if not hypotheses:
        raise EmptySequenceError("rescore requires at least one hypothesis")
    scores = []
    for tokens, ctc_score in hypotheses:
        ll = sequence_log_likelihood(enc, list(tokens), params, heads)
        scores.append(ll + ctc_weight * ctc_score)
    best = 0
    for i, sc in enumerate(scores):
        if sc > scores[best]:
            best = i
    return best, scores
