"""Skip-and-recover speech encoder with a tape-based autodiff core.

Subpackages split along pipeline stages: feature subsampling (frontend),
stacked convolution-attention blocks (encoder), alignment-free losses and
decoding (ctc), frame routing (splitter), the assembled model (model), the
token decoder (decoder), and the training/eval/bench harness (train,
evaluate, bench, cli).
"""

__version__ = "0.1.0"

__all__ = [
    "autodiff",
    "bench",
    "cli",
    "config",
    "ctc",
    "decoder",
    "encoder",
    "errors",
    "evaluate",
    "fileio",
    "frontend",
    "model",
    "splitter",
    "synth",
    "train",
]
