"""CTC head, alignment loss, decoding, and blank-dominance flags.

The loss runs the forward lattice recursion in log space directly on tape
ops, so its gradient comes from the same autodiff path as everything else.
Blank is always class 0. Unreachable lattice cells hold NEG_FILL rather
than -inf to keep every array finite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import NEG_FILL, Parameter, Tensor
from .encoder import EncodedSequence
from .errors import (ContractError, DimensionError, InfeasibleAlignmentError,
                     ParameterError)

BLANK_ID = 0


@dataclass
class PosteriorGrid:
    """Per-frame log posteriors over the vocabulary, blank in column 0."""

    log_probs: Tensor  # (L, V)

    @property
    def length(self) -> int:
        return self.log_probs.data.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.log_probs.data.shape[1]


@dataclass
class HeadParams:
    w: Parameter  # (D, V)
    b: Parameter


def init_head(rng: np.random.Generator, d_model: int, vocab_size: int) -> HeadParams:
    if vocab_size < 2:
        raise ParameterError(f"vocab must hold blank plus at least one token, got {vocab_size}")
    lim = np.sqrt(6.0 / (d_model + vocab_size))
    return HeadParams(
        w=Parameter(rng.uniform(-lim, lim, size=(d_model, vocab_size))),
        b=Parameter(np.zeros(vocab_size)),
    )


def posterior_grid(seq: EncodedSequence, head: HeadParams) -> PosteriorGrid:
    logits = ad.affine(seq.frames, head.w.value, head.b.value)
    return PosteriorGrid(log_probs=ad.log_softmax_rows(logits))


def check_tokens(tokens, vocab_size: int) -> list[int]:
    """Validate a token sequence: integer ids in [1, vocab), never blank."""
    out = [int(t) for t in tokens]
    for t in out:
        if t < 1 or t >= vocab_size:
            raise ContractError(f"token id {t} outside [1, {vocab_size})")
    return out


def min_frames(tokens) -> int:
    """Fewest frames that can spell the sequence: length plus forced blanks."""
    tokens = list(tokens)
    repeats = sum(1 for a, b in zip(tokens, tokens[1:]) if a == b)
    return len(tokens) + repeats


def ctc_loss(grid: PosteriorGrid, tokens) -> Tensor:
    """Negative log probability of all alignments spelling ``tokens``."""
    n_frames, vocab = grid.log_probs.data.shape
    if n_frames < 1:
        raise DimensionError("ctc_loss needs at least one frame")
    tokens = check_tokens(tokens, vocab)
    if n_frames < min_frames(tokens):
        raise InfeasibleAlignmentError(
            f"{len(tokens)} tokens need at least {min_frames(tokens)} frames, have {n_frames}")

    # Blank-interleaved state sequence and its skip-transition mask.
    ext = np.empty(2 * len(tokens) + 1, dtype=np.int64)
    ext[0::2] = BLANK_ID
    ext[1::2] = tokens
    s = ext.shape[0]
    allow_skip = np.zeros(s, dtype=bool)
    if s >= 3:
        allow_skip[2:] = (ext[2:] != BLANK_ID) & (ext[2:] != ext[:-2])

    rows0 = np.zeros(s, dtype=np.int64)
    start_mask = np.arange(s) < 2
    alpha = ad.masked_keep(ad.gather_cells(grid.log_probs, rows0, ext), start_mask)
    for t in range(1, n_frames):
        rows = np.full(s, t, dtype=np.int64)
        emit = ad.gather_cells(grid.log_probs, rows, ext)
        alpha = ad.add(ad.shifted_logsumexp3(alpha, allow_skip), emit)
    final_states = [s - 1] if s == 1 else [s - 2, s - 1]
    return ad.neg(ad.logsumexp_all(ad.gather_rows(alpha, final_states)))


def greedy_decode(grid: PosteriorGrid) -> list[int]:
    """Best class per frame, collapse adjacent repeats, drop blanks."""
    path = np.argmax(grid.log_probs.data, axis=1)
    out: list[int] = []
    prev = -1
    for cls in path:
        if cls != prev and cls != BLANK_ID:
            out.append(int(cls))
        prev = cls
    return out


def blank_flags(grid: PosteriorGrid, beta: float) -> np.ndarray:
    """True where the blank posterior strictly exceeds ``beta``."""
    if not (0.0 < beta < 1.0):
        raise ParameterError(f"blank threshold must lie in (0, 1), got {beta}")
    return np.exp(grid.log_probs.data[:, BLANK_ID]) > beta


def prefix_beam_search(grid: PosteriorGrid, beam: int) -> list[tuple[tuple[int, ...], float]]:
    """Most probable collapsed label sequences with their total log probability.

    Per-prefix blank/non-blank masses are tracked separately; ties in total
    probability break toward the lexicographically smaller prefix so results
    are deterministic. Returns up to ``beam`` entries, best first.
    """
    if beam < 1:
        raise ParameterError(f"beam width must be positive, got {beam}")
    lp = grid.log_probs.data
    n_frames, vocab = lp.shape
    # prefix -> [log mass ending in blank, log mass ending in its last symbol]
    beams: dict[tuple[int, ...], list[float]] = {(): [0.0, NEG_FILL]}
    for t in range(n_frames):
        row = lp[t]
        nxt: dict[tuple[int, ...], list[float]] = {}

        def slot(prefix):
            e = nxt.get(prefix)
            if e is None:
                e = [NEG_FILL, NEG_FILL]
                nxt[prefix] = e
            return e

        for prefix, (p_blank, p_symbol) in beams.items():
            total = np.logaddexp(p_blank, p_symbol)
            stay = slot(prefix)
            stay[0] = np.logaddexp(stay[0], total + row[BLANK_ID])
            if prefix:
                stay[1] = np.logaddexp(stay[1], p_symbol + row[prefix[-1]])
            for c in range(1, vocab):
                grown = slot(prefix + (c,))
                if prefix and c == prefix[-1]:
                    # extending a repeat requires the blank-ended mass
                    grown[1] = np.logaddexp(grown[1], p_blank + row[c])
                else:
                    grown[1] = np.logaddexp(grown[1], total + row[c])
        ranked = sorted(nxt.items(), key=lambda kv: (-np.logaddexp(kv[1][0], kv[1][1]), kv[0]))
        beams = dict(ranked[:beam])
    scored = [(prefix, float(np.logaddexp(pb, ps))) for prefix, (pb, ps) in beams.items()]
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored
