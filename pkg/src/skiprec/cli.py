"""Command line interface: gen, train, eval, bench, sweep.

BLAS thread counts are pinned before numpy loads so timing and determinism
hold; every numpy-touching import happens lazily inside a command handler.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path


def _pin_threads() -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, "1")


def _add_shared(p: argparse.ArgumentParser, checkpoint: bool = False) -> None:
    p.add_argument("--config", type=Path, default=None,
                   help="JSON run config; defaults apply when omitted")
    p.add_argument("--split-mode", type=int, default=None, choices=range(1, 6),
                   help="override the frame-routing mode (1..5)")
    p.add_argument("--blank-threshold", type=float, default=None,
                   help="override the blank-confidence cutoff in (0, 1)")
    p.add_argument("--seed", type=int, default=None, help="override the run seed")
    if checkpoint:
        p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None, help="output directory or file")


def _load_config(args) -> "RunConfig":
    from .config import RunConfig, load_run_config, validate_run_config
    cfg = load_run_config(args.config) if args.config else RunConfig()
    if args.split_mode is not None:
        cfg = dataclasses.replace(cfg, loss=dataclasses.replace(
            cfg.loss, split_mode=args.split_mode))
    if args.blank_threshold is not None:
        cfg = dataclasses.replace(cfg, loss=dataclasses.replace(
            cfg.loss, blank_threshold=args.blank_threshold))
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, training=dataclasses.replace(
            cfg.training, seed=args.seed))
    return validate_run_config(cfg)


def _load_model(args, cfg):
    from . import fileio, model as model_mod
    params = model_mod.init_model(cfg.training.seed, cfg.model)
    model_mod.load_params_from_tensors(params, fileio.load_checkpoint(args.checkpoint))
    return params


def _cmd_gen(args) -> int:
    from .synth import SynthSpec, write_corpus
    spec = SynthSpec(
        vocab_size=args.vocab, utterances=args.utterances,
        tokens_min=args.tokens_min, tokens_max=args.tokens_max,
        frames_per_token_min=args.frames_min, frames_per_token_max=args.frames_max,
        gap_min=args.gap_min, gap_max=args.gap_max,
        feature_dim=args.feature_dim, noise=args.noise,
        seed=args.seed if args.seed is not None else 0)
    out = args.out if args.out else Path("corpus")
    feats, trans = write_corpus(spec, out)
    print(f"wrote {feats} and {trans}")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_config(args)
    from .train import train_run
    out = args.out if args.out else Path("run")
    result = train_run(cfg, args.features, args.transcripts, out,
                       resume_path=args.resume,
                       dev_features=args.dev_features,
                       dev_transcripts=args.dev_transcripts,
                       quiet=args.quiet)
    print(f"trained {result.steps} steps; "
          f"best error rate {result.best_error_rate:.4f} -> {result.best_checkpoint}")
    return 0


def _cmd_eval(args) -> int:
    cfg = _load_config(args)
    params = _load_model(args, cfg)
    from .evaluate import evaluate_corpus
    from .train import load_corpus
    corpus = load_corpus(args.features, args.transcripts, cfg.model.vocab_size)
    report = evaluate_corpus(params, cfg.model, cfg.loss, corpus,
                             decode=args.decode, beam=args.beam,
                             force_all_crucial=args.no_skip)
    summary = {
        "error_rate": report.error_rate,
        "edits": report.substitutions_plus,
        "reference_tokens": report.reference_tokens,
        "reduction_mean": report.reduction_mean,
        "crucial_frac_mean": report.crucial_frac_mean,
        "fallback_fraction": report.fallback_fraction,
    }
    print(json.dumps(summary, sort_keys=True))
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w", encoding="utf-8") as fh:
            for rec in report.utterances:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        print(f"wrote per-utterance traces to {args.out}")
    return 0


def _cmd_bench(args) -> int:
    cfg = _load_config(args)
    params = _load_model(args, cfg)
    from . import autodiff as ad
    from . import model as model_mod
    from .bench import bench_corpus, rows_to_text, rows_to_tsv
    from .train import load_corpus
    if args.dtype == "f32":
        # Timing runs trade the float64 contract for realistic inference cost;
        # masked lanes sit at a large negative finite value, so the per-op
        # finiteness guard is the only thing that must be relaxed.
        import numpy as np
        model_mod.cast_params(params, np.float32)
        ad.set_finite_checks(False)
    corpus = load_corpus(args.features, args.transcripts, cfg.model.vocab_size)
    row = bench_corpus(params, cfg.model, cfg.loss, corpus,
                       repeats=args.repeats, beam=args.beam,
                       time_full_path=not args.encoder_only)
    print(rows_to_text([row]), end="")
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(rows_to_tsv([row]), encoding="utf-8")
        print(f"wrote {args.out}")
    return 0


def _parse_pairs(text: str) -> list[tuple[int, int]]:
    pairs = []
    for chunk in text.split(";"):
        m, n = chunk.split(",")
        pairs.append((int(m), int(n)))
    return pairs


def _cmd_sweep(args) -> int:
    cfg = _load_config(args)
    from .bench import rows_to_text, rows_to_tsv, sweep
    modes = [int(x) for x in args.modes.split(",")]
    rows = sweep(cfg, args.features, args.transcripts,
                 _parse_pairs(args.blocks), modes,
                 repeats=args.repeats, out_dir=args.out, quiet=args.quiet)
    print(rows_to_text(rows), end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.tsv").write_text(rows_to_tsv(rows), encoding="utf-8")
        (out / "sweep.txt").write_text(rows_to_text(rows), encoding="utf-8")
        print(f"wrote {out / 'sweep.tsv'} and {out / 'sweep.txt'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skiprec",
        description="Frame-skipping encoder harness: corpus generation, "
                    "training, evaluation, and benchmarking.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic corpus")
    g.add_argument("--vocab", type=int, default=20)
    g.add_argument("--utterances", type=int, default=200)
    g.add_argument("--tokens-min", type=int, default=3)
    g.add_argument("--tokens-max", type=int, default=6)
    g.add_argument("--frames-min", type=int, default=6)
    g.add_argument("--frames-max", type=int, default=10)
    g.add_argument("--gap-min", type=int, default=18)
    g.add_argument("--gap-max", type=int, default=26)
    g.add_argument("--feature-dim", type=int, default=16)
    g.add_argument("--noise", type=float, default=0.1)
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--out", type=Path, default=None)
    g.set_defaults(func=_cmd_gen)

    t = sub.add_parser("train", help="train a model on a corpus")
    _add_shared(t)
    t.add_argument("--features", type=Path, required=True)
    t.add_argument("--transcripts", type=Path, required=True)
    t.add_argument("--resume", type=Path, default=None,
                   help="checkpoint to continue from; metrics log is appended")
    t.add_argument("--dev-features", type=Path, default=None)
    t.add_argument("--dev-transcripts", type=Path, default=None)
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("eval", help="decode a corpus and report error rate")
    _add_shared(e, checkpoint=True)
    e.add_argument("--features", type=Path, required=True)
    e.add_argument("--transcripts", type=Path, required=True)
    e.add_argument("--decode", choices=("greedy", "rescoring"), default="greedy")
    e.add_argument("--beam", type=int, default=8)
    e.add_argument("--no-skip", action="store_true",
                   help="route every frame through both encoder stacks")
    e.set_defaults(func=_cmd_eval)

    b = sub.add_parser("bench", help="time the skipping and no-skip paths")
    _add_shared(b, checkpoint=True)
    b.add_argument("--features", type=Path, required=True)
    b.add_argument("--transcripts", type=Path, required=True)
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--beam", type=int, default=4)
    b.add_argument("--encoder-only", action="store_true",
                   help="skip timing the beam + rescoring path")
    b.add_argument("--dtype", choices=("f64", "f32"), default="f64",
                   help="parameter precision for the timed forward passes")
    b.set_defaults(func=_cmd_bench)

    s = sub.add_parser("sweep", help="train per depth pair and bench every mode")
    _add_shared(s)
    s.add_argument("--features", type=Path, required=True)
    s.add_argument("--transcripts", type=Path, required=True)
    s.add_argument("--blocks", type=str, default="2,2;1,3;3,1",
                   help="semicolon-separated E1,E2 depth pairs, e.g. 2,2;1,3")
    s.add_argument("--modes", type=str, default="1,2,3,4,5")
    s.add_argument("--repeats", type=int, default=3)
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=_cmd_sweep)
    return parser


def main(argv=None) -> int:
    _pin_threads()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        return 1


if __name__ == "__main__":
    sys.exit(main())
