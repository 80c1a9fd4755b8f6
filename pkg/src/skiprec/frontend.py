"""Convolutional subsampling from raw feature frames to encoder frames.

Two 3x3 stride-2 valid convolutions with swish, channel count equal to the
model width, then a linear projection of the flattened channel/frequency
axes back to the model width. Time shrinks by a factor just over 4:
    T = ((T_in - 1) // 2 - 1) // 2
Position handling is left to the encoder; nothing positional is added here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import DimensionError, InputTooShortError

KERNEL = 3
MIN_INPUT_FRAMES = 7  # smallest T_in that survives both stride-2 convs


@dataclass
class FeatureSequence:
    """Raw input frames for one utterance: (T_in, F)."""

    utterance_id: str
    frames: np.ndarray

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.frames.shape[1]


@dataclass
class SubsampledSequence:
    """Frames after subsampling, plus the map back to input frame indices."""

    frames: Tensor            # (T, D)
    time_map: np.ndarray      # (T,) first covered input index per output frame

    @property
    def length(self) -> int:
        return self.frames.data.shape[0]


@dataclass
class FrontendParams:
    conv1_w: Parameter        # (C, 1, 3, 3)
    conv1_b: Parameter
    conv2_w: Parameter        # (C, C, 3, 3)
    conv2_b: Parameter
    proj_w: Parameter         # (C * F'', D)
    proj_b: Parameter


def _conv_len(n: int) -> int:
    return (n - KERNEL) // 2 + 1


def subsampled_length(t_in: int) -> int:
    """Closed form for the output length of the two stride-2 convs."""
    return (((t_in - 1) // 2) - 1) // 2


def reduced_feature_dim(feature_dim: int) -> int:
    return _conv_len(_conv_len(feature_dim))


def init_frontend(rng: np.random.Generator, feature_dim: int, d_model: int) -> FrontendParams:
    if feature_dim < MIN_INPUT_FRAMES:
        raise DimensionError(f"feature dim {feature_dim} too small for two 3x3 stride-2 convs")
    c = d_model
    f2 = reduced_feature_dim(feature_dim)

    def glorot(*shape):
        fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
        fan_out = shape[0]
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=shape)

    return FrontendParams(
        conv1_w=Parameter(glorot(c, 1, KERNEL, KERNEL)),
        conv1_b=Parameter(np.zeros(c)),
        conv2_w=Parameter(glorot(c, c, KERNEL, KERNEL)),
        conv2_b=Parameter(np.zeros(c)),
        proj_w=Parameter(glorot(c * f2, d_model)),
        proj_b=Parameter(np.zeros(d_model)),
    )


def subsample(feats: FeatureSequence, params: FrontendParams) -> SubsampledSequence:
    """(T_in, F) features -> (T, D) frames with T = ((T_in-1)//2 - 1)//2."""
    t_in, feat_dim = feats.frames.shape
    if t_in < MIN_INPUT_FRAMES:
        raise InputTooShortError(
            f"utterance {feats.utterance_id!r} has {t_in} frames; "
            f"subsampling needs at least {MIN_INPUT_FRAMES}")
    expected_cols = params.conv2_w.value.data.shape[0] * reduced_feature_dim(feat_dim)
    if params.proj_w.value.data.shape[0] != expected_cols:
        raise DimensionError(
            f"feature dim {feat_dim} incompatible with projection "
            f"{params.proj_w.value.data.shape}")
    x = ad.reshape(Tensor(feats.frames), (1, t_in, feat_dim))
    h = ad.swish(ad.conv2d_s2(x, params.conv1_w.value, params.conv1_b.value))
    h = ad.swish(ad.conv2d_s2(h, params.conv2_w.value, params.conv2_b.value))
    c, t, f2 = h.data.shape
    h = ad.reshape(ad.permute(h, (1, 0, 2)), (t, c * f2))
    out = ad.affine(h, params.proj_w.value, params.proj_b.value)
    # Each output frame's window starts at input index 4t (stride 2 twice).
    time_map = np.arange(t, dtype=np.int64) * 4
    return SubsampledSequence(frames=out, time_map=time_map)
