"""Seeded training loop with warmup/decay schedule and JSONL metrics.

Metric records carry no wall-clock fields, so two runs with the same
config, corpus, seed, and thread count produce byte-identical logs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import fileio
from . import model as model_mod
from .config import RunConfig
from .errors import ConfigError
from .evaluate import evaluate_corpus
from .frontend import FeatureSequence


def learning_rate(step: int, peak: float, warmup: int) -> float:
    """Linear warmup to ``peak`` over ``warmup`` steps, then 1/sqrt decay."""
    return peak * min(step / warmup, (warmup / step) ** 0.5)


def load_corpus(features_path, transcripts_path, vocab_size: int | None = None
                ) -> list[tuple[FeatureSequence, list[int]]]:
    """Pair feature utterances with transcripts by id, in feature-file order."""
    feats = fileio.read_features(features_path)
    trans = fileio.read_transcripts(transcripts_path)
    corpus = []
    for utt_id, frames in feats:
        if utt_id not in trans:
            raise ConfigError(f"utterance {utt_id!r} has features but no transcript")
        tokens = trans[utt_id]
        if vocab_size is not None:
            for t in tokens:
                if not (1 <= t < vocab_size):
                    raise ConfigError(
                        f"utterance {utt_id!r} token {t} outside vocab of size {vocab_size}")
        corpus.append((FeatureSequence(utterance_id=utt_id, frames=frames), tokens))
    return corpus


@dataclass
class TrainResult:
    last_checkpoint: Path
    best_checkpoint: Path
    metrics_path: Path
    steps: int
    best_error_rate: float
    final_error_rate: float


def train_run(cfg: RunConfig, features_path, transcripts_path, out_dir,
              resume_path=None, dev_features=None, dev_transcripts=None,
              quiet: bool = True) -> TrainResult:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    last_path = out_dir / "last.ckpt"
    best_path = out_dir / "best.ckpt"
    metrics_path = out_dir / "metrics.jsonl"

    corpus = load_corpus(features_path, transcripts_path, cfg.model.vocab_size)
    if dev_features is not None:
        eval_corpus = load_corpus(dev_features, dev_transcripts, cfg.model.vocab_size)
    else:
        eval_corpus = corpus

    params = model_mod.init_model(cfg.training.seed, cfg.model)
    step = 0
    if resume_path is not None:
        step = model_mod.load_params_from_tensors(
            params, fileio.load_checkpoint(resume_path), restore_moments=True)
    named = model_mod.named_parameters(params)

    if cfg.model.dropout > 0.0:
        from . import encoder as enc_mod
        enc_mod.set_dropout(cfg.model.dropout, cfg.training.seed)

    rng = np.random.default_rng(cfg.training.seed + 1)
    opt = cfg.optimizer
    log_mode = "a" if resume_path is not None else "w"
    log = open(metrics_path, log_mode, encoding="utf-8")
    best_error = float("inf")
    final_error = float("inf")
    fallback_count = 0
    utterance_count = 0
    warmup_done_fallbacks = 0
    warmup_done_utts = 0

    def run_eval(epoch: int) -> None:
        nonlocal best_error, final_error, fallback_count, utterance_count
        nonlocal warmup_done_fallbacks, warmup_done_utts
        if cfg.model.dropout > 0.0:
            from . import encoder as enc_mod
            enc_mod.set_dropout(0.0)
        report = evaluate_corpus(params, cfg.model, cfg.loss, eval_corpus,
                                 decode="greedy", compute_losses=True)
        if cfg.model.dropout > 0.0:
            from . import encoder as enc_mod
            enc_mod.set_dropout(cfg.model.dropout, cfg.training.seed + 1000 + epoch)
        train_fallback = fallback_count / max(utterance_count, 1)
        record = {
            "step": step,
            "epoch": epoch,
            "lr": learning_rate(max(step, 1), opt.peak_lr, opt.warmup_steps),
            "error_rate": report.error_rate,
            "reduction_mean": report.reduction_mean,
            "crucial_frac_mean": report.crucial_frac_mean,
            "fallback_fraction": train_fallback,
            **{f"loss_{k}": v for k, v in report.loss_means.items()},
        }
        # >10% of post-warmup utterances on the bypass path is worth flagging.
        if step > opt.warmup_steps and warmup_done_utts > 0:
            frac = warmup_done_fallbacks / warmup_done_utts
            if frac > 0.1:
                record["warning"] = f"fallback on {frac:.2%} of utterances after warmup"
        log.write(json.dumps(record, sort_keys=True) + "\n")
        log.flush()
        if not quiet:
            print(json.dumps(record, sort_keys=True))
        fileio.save_checkpoint(last_path, model_mod.checkpoint_tensors(
            params, step=step, with_moments=True))
        final_error = report.error_rate
        if report.error_rate < best_error:
            best_error = report.error_rate
            fileio.save_checkpoint(best_path, model_mod.checkpoint_tensors(params, step=step))
        fallback_count = 0
        utterance_count = 0

    if cfg.training.epochs == 0:
        run_eval(0)
        log.close()
        return TrainResult(last_path, best_path, metrics_path, step, best_error, final_error)

    for epoch in range(1, cfg.training.epochs + 1):
        order = rng.permutation(len(corpus))
        for start in range(0, len(order), cfg.training.batch_size):
            batch = order[start:start + cfg.training.batch_size]
            for _, p in named:
                p.zero_grad()
            for j in batch:
                feats, tokens = corpus[int(j)]
                with ad.tape() as tp:
                    trace = model_mod.forward_utterance(
                        feats, params, cfg.model, cfg.loss, target=tokens)
                    loss = model_mod.total_loss(trace, tokens, params, cfg.model, cfg.loss)
                    tp.backward(loss)
                utterance_count += 1
                if trace.fallback:
                    fallback_count += 1
                if step >= opt.warmup_steps:
                    warmup_done_utts += 1
                    if trace.fallback:
                        warmup_done_fallbacks += 1
            step += 1
            lr = learning_rate(step, opt.peak_lr, opt.warmup_steps)
            inv = 1.0 / len(batch)
            for _, p in named:
                grad = p.grad if p.grad is not None else np.zeros_like(p.value.data)
                ad.adam_step(p, grad * inv, lr, opt.beta1, opt.beta2, opt.eps)
        if epoch % cfg.training.eval_every == 0 or epoch == cfg.training.epochs:
            run_eval(epoch)

    log.close()
    if cfg.model.dropout > 0.0:
        from . import encoder as enc_mod
        enc_mod.set_dropout(0.0)
    return TrainResult(last_path, best_path, metrics_path, step, best_error, final_error)
