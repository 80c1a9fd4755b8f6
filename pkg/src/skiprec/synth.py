"""Synthetic corpus generator: prototype-plus-noise frames with silence gaps.

Every token id owns a fixed feature prototype; silence has its own. An
utterance is a leading silence gap, then per token a run of token frames
followed by another gap, so input length is exactly the sum of token run
lengths plus the k+1 gap lengths. One seeded generator drives everything,
so a spec reproduces its corpus bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fileio
from .errors import ParameterError


@dataclass(frozen=True)
class SynthSpec:
    vocab_size: int = 20
    utterances: int = 200
    tokens_min: int = 3
    tokens_max: int = 6
    frames_per_token_min: int = 6
    frames_per_token_max: int = 10
    gap_min: int = 18
    gap_max: int = 26
    feature_dim: int = 16
    noise: float = 0.1
    seed: int = 0


def _check_spec(spec: SynthSpec) -> None:
    checks = [
        (spec.vocab_size >= 2, "vocab_size must hold blank plus at least one token"),
        (spec.utterances >= 1, "utterances must be positive"),
        (1 <= spec.tokens_min <= spec.tokens_max, "token count range is empty or zero"),
        (1 <= spec.frames_per_token_min <= spec.frames_per_token_max,
         "frames-per-token range is empty or zero"),
        (1 <= spec.gap_min <= spec.gap_max, "gap range is empty or zero"),
        (spec.feature_dim >= 1, "feature_dim must be positive"),
        (spec.noise >= 0.0, "noise must be non-negative"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ParameterError(msg)


def _draw_prototypes(rng: np.random.Generator, spec: SynthSpec) -> tuple[np.ndarray, np.ndarray]:
    token_protos = rng.normal(size=(spec.vocab_size, spec.feature_dim))
    token_protos[0] = 0.0  # blank has no prototype; row kept so ids index directly
    silence = rng.normal(size=spec.feature_dim)
    return token_protos, silence


def prototypes(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray]:
    """(token prototypes indexed by token id, silence prototype)."""
    return _draw_prototypes(np.random.default_rng(spec.seed), spec)


def generate(spec: SynthSpec) -> list[tuple[str, np.ndarray, list[int]]]:
    """Materialize (utterance id, frames, token ids) triples."""
    _check_spec(spec)
    rng = np.random.default_rng(spec.seed)
    token_protos, silence = _draw_prototypes(rng, spec)

    out = []
    for u in range(spec.utterances):
        count = int(rng.integers(spec.tokens_min, spec.tokens_max + 1))
        tokens = [int(t) for t in rng.integers(1, spec.vocab_size, size=count)]
        chunks = []
        chunks.append(np.tile(silence, (int(rng.integers(spec.gap_min, spec.gap_max + 1)), 1)))
        for tok in tokens:
            run = int(rng.integers(spec.frames_per_token_min, spec.frames_per_token_max + 1))
            chunks.append(np.tile(token_protos[tok], (run, 1)))
            chunks.append(np.tile(silence, (int(rng.integers(spec.gap_min, spec.gap_max + 1)), 1)))
        frames = np.concatenate(chunks, axis=0)
        frames = frames + spec.noise * rng.normal(size=frames.shape)
        out.append((f"utt{u:05d}", frames, tokens))
    return out


def write_corpus(spec: SynthSpec, out_dir) -> tuple[Path, Path]:
    """Generate and store the corpus; returns (features path, transcripts path)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = generate(spec)
    features_path = out_dir / "features.bin"
    transcripts_path = out_dir / "transcripts.tsv"
    fileio.write_features(features_path, [(uid, frames) for uid, frames, _ in data])
    fileio.write_transcripts(transcripts_path, [(uid, tokens) for uid, _, tokens in data])
    return features_path, transcripts_path
