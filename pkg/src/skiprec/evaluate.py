"""Corpus evaluation: token error rate, frame-budget stats, per-utterance traces."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ctc
from . import decoder as dec_mod
from . import model as model_mod
from .config import LossConfig, ModelConfig
from .errors import ConfigError


def edit_distance(ref: list[int], hyp: list[int]) -> int:
    """Levenshtein distance over token ids."""
    n, m = len(ref), len(hyp)
    if n == 0:
        return m
    if m == 0:
        return n
    prev = list(range(m + 1))
    cur = [0] * (m + 1)
    for i in range(1, n + 1):
        cur[0] = i
        ri = ref[i - 1]
        for j in range(1, m + 1):
            sub = prev[j - 1] + (ri != hyp[j - 1])
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, sub)
        prev, cur = cur, prev
    return prev[m]


@dataclass
class EvalReport:
    error_rate: float
    substitutions_plus: int          # total edit operations
    reference_tokens: int
    reduction_mean: float            # input frames / final grid frames
    crucial_frac_mean: float         # crucial / subsampled frames
    fallback_fraction: float
    loss_means: dict = field(default_factory=dict)
    utterances: list = field(default_factory=list)


def evaluate_corpus(params, model_cfg: ModelConfig, loss_cfg: LossConfig,
                    corpus, decode: str = "greedy", beam: int = 8,
                    compute_losses: bool = False,
                    force_all_crucial: bool = False) -> EvalReport:
    """Decode every utterance and aggregate error/cost statistics.

    ``decode`` is "greedy" (final CTC head argmax) or "rescoring" (prefix beam
    on the final grid, then joint CTC + decoder scores pick the winner).
    """
    if decode not in ("greedy", "rescoring"):
        raise ConfigError(f"unknown decode strategy {decode!r}")
    if params.decoder.vocab_size != model_cfg.vocab_size:
        raise ConfigError(
            f"checkpoint vocab {params.decoder.vocab_size} != config vocab "
            f"{model_cfg.vocab_size}")

    edits = 0
    ref_total = 0
    reductions = []
    crucial_fracs = []
    fallbacks = 0
    loss_sums: dict[str, float] = {}
    loss_n = 0
    per_utt = []

    for feats, tokens in corpus:
        trace = model_mod.forward_utterance(
            feats, params, model_cfg, loss_cfg, target=None,
            force_all_crucial=force_all_crucial)
        if decode == "greedy":
            hyp = ctc.greedy_decode(trace.final_grid)
        else:
            hyps = ctc.prefix_beam_search(trace.final_grid, beam)
            best, _scores = dec_mod.rescore(trace.h2, hyps, params.decoder, model_cfg.heads)
            hyp = list(hyps[best][0])
        d = edit_distance(tokens, hyp)
        edits += d
        ref_total += len(tokens)
        reductions.append(trace.reduction_factor)
        crucial_fracs.append(trace.crucial_len / max(trace.subsampled_len, 1))
        if trace.fallback:
            fallbacks += 1
        per_utt.append({
            "id": feats.utterance_id,
            "ref": tokens,
            "hyp": hyp,
            "edits": d,
            "input_frames": trace.input_len,
            "subsampled_frames": trace.subsampled_len,
            "crucial_frames": trace.crucial_len,
            "output_frames": trace.output_len,
            "fallback": trace.fallback,
        })
        if compute_losses:
            # Loss view mirrors training: the target-aware forward guarantees
            # the final grid is long enough for a feasible alignment.
            trace_l = model_mod.forward_utterance(
                feats, params, model_cfg, loss_cfg, target=tokens)
            comp = model_mod.component_losses(trace_l, tokens, params, model_cfg, loss_cfg)
            for k, v in comp.items():
                loss_sums[k] = loss_sums.get(k, 0.0) + v
            loss_n += 1

    n_utt = max(len(per_utt), 1)
    return EvalReport(
        error_rate=edits / max(ref_total, 1),
        substitutions_plus=edits,
        reference_tokens=ref_total,
        reduction_mean=float(np.mean(reductions)) if reductions else 0.0,
        crucial_frac_mean=float(np.mean(crucial_fracs)) if crucial_fracs else 0.0,
        fallback_fraction=fallbacks / n_utt,
        loss_means={k: v / max(loss_n, 1) for k, v in loss_sums.items()},
        utterances=per_utt,
    )
