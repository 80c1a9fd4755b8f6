"""Reverse-mode automatic differentiation over a recorded op tape.

Every op computes eagerly on numpy arrays. While a tape is active, each op
appends a closure that routes the output gradient back to its inputs;
``Tape.backward`` replays those closures in reverse execution order, which
is a valid topological order by construction.

The op set is exactly what the model needs: affine/matmul, strided 2-D
convolution, depthwise 1-D convolution, attention, softmax and log-softmax,
layer norm, swish, GLU, gather/concat by index, cross-entropy, and
log-sum-exp variants for the alignment lattice. Nothing more general is
provided on purpose.

Log-space code uses the finite stand-in ``NEG_FILL`` instead of ``-inf`` so
that the "all values finite" invariant can be checked after every op.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError, ParameterError

# Effectively -inf for log-space math while staying finite in float32/float64.
NEG_FILL = -1.0e30

_CHECK_FINITE = True


def set_finite_checks(enabled: bool) -> bool:
    """Toggle per-op finiteness validation; returns the previous setting."""
    global _CHECK_FINITE
    prev = _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)
    return prev


class Tensor:
    """A numpy array plus an accumulated gradient of the same shape."""

    __slots__ = ("data", "grad")

    def __init__(self, data) -> None:
        self.data = np.asarray(data, dtype=np.float64) if not isinstance(data, np.ndarray) else data
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


def tensor(data, dtype=None) -> Tensor:
    arr = np.asarray(data, dtype=dtype if dtype is not None else np.float64)
    return Tensor(arr)


class Tape:
    """Execution-ordered record of backward closures."""

    def __init__(self) -> None:
        self._entries: list[Callable[[], None]] = []

    def __len__(self) -> int:
        return len(self._entries)

    def backward(self, root: Tensor) -> None:
        # Gradients seed at 1 for the scalar root and flow in reverse order.
        if root.data.size != 1:
            raise ContractError(f"backward root must be scalar, got shape {root.data.shape}")
        root.grad = np.ones_like(root.data)
        for entry in reversed(self._entries):
            entry()


_TAPE: Tape | None = None


@contextmanager
def tape():
    """Activate a fresh tape for the duration of the block."""
    global _TAPE
    prev = _TAPE
    _TAPE = Tape()
    try:
        yield _TAPE
    finally:
        _TAPE = prev


def _record(fn: Callable[[], None]) -> None:
    if _TAPE is not None:
        _TAPE._entries.append(fn)


def _make(data: np.ndarray, op: str) -> Tensor:
    if _CHECK_FINITE and data.dtype.kind == "f" and not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values produced by {op}")
    return Tensor(data)


def _accum(t: Tensor, g: np.ndarray) -> None:
    t.grad = g if t.grad is None else t.grad + g


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; broadcasting limited to numpy-compatible shapes."""
    try:
        data = a.data + b.data
    except ValueError:
        raise DimensionError(f"add {a.data.shape} + {b.data.shape}")
    out = _make(data, "add")

    def bwd():
        g = out.grad
        if g is None:
            return
        _accum(a, _reduce_to(g, a.data.shape))
        _accum(b, _reduce_to(g, b.data.shape))

    _record(bwd)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data - b.data
    except ValueError:
        raise DimensionError(f"sub {a.data.shape} - {b.data.shape}")
    out = _make(data, "sub")

    def bwd():
        g = out.grad
        if g is None:
            return
        _accum(a, _reduce_to(g, a.data.shape))
        _accum(b, _reduce_to(-g, b.data.shape))

    _record(bwd)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError:
        raise DimensionError(f"mul {a.data.shape} * {b.data.shape}")
    out = _make(data, "mul")

    def bwd():
        g = out.grad
        if g is None:
            return
        _accum(a, _reduce_to(g * b.data, a.data.shape))
        _accum(b, _reduce_to(g * a.data, b.data.shape))

    _record(bwd)
    return out


def scale(x: Tensor, c: float) -> Tensor:
    out = _make(x.data * c, "scale")

    def bwd():
        if out.grad is not None:
            _accum(x, out.grad * c)

    _record(bwd)
    return out


def neg(x: Tensor) -> Tensor:
    return scale(x, -1.0)


def add_const(x: Tensor, c) -> Tensor:
    """Add a constant array or scalar; no gradient flows to the constant."""
    out = _make(x.data + c, "add_const")

    def bwd():
        if out.grad is not None:
            _accum(x, _reduce_to(out.grad, x.data.shape))

    _record(bwd)
    return out


def mul_const(x: Tensor, c) -> Tensor:
    """Multiply by a constant array or scalar (dropout masks, fixed gates)."""
    out = _make(x.data * c, "mul_const")

    def bwd():
        if out.grad is not None:
            _accum(x, _reduce_to(out.grad * c, x.data.shape))

    _record(bwd)
    return out


def sum_all(x: Tensor) -> Tensor:
    out = _make(np.asarray(x.data.sum()), "sum_all")

    def bwd():
        if out.grad is not None:
            _accum(x, np.broadcast_to(out.grad, x.data.shape).copy())

    _record(bwd)
    return out


def reshape(x: Tensor, shape: tuple) -> Tensor:
    out = Tensor(x.data.reshape(shape))

    def bwd():
        if out.grad is not None:
            _accum(x, out.grad.reshape(x.data.shape))

    _record(bwd)
    return out


def permute(x: Tensor, axes: tuple) -> Tensor:
    out = Tensor(np.transpose(x.data, axes))
    inv = np.argsort(axes)

    def bwd():
        if out.grad is not None:
            _accum(x, np.transpose(out.grad, inv))

    _record(bwd)
    return out


def gather_rows(x: Tensor, idx) -> Tensor:
    """Select rows (axis 0) by integer index; repeated ids accumulate gradient.

    Doubles as embedding lookup when ``x`` is an embedding table.
    """
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[0]):
        raise DimensionError(f"gather index out of range for axis of size {x.data.shape[0]}")
    out = Tensor(x.data[idx])

    def bwd():
        g = out.grad
        if g is None:
            return
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        _accum(x, gx)

    _record(bwd)
    return out


def gather_cells(x: Tensor, rows, cols) -> Tensor:
    """out[i] = x[rows[i], cols[i]] for a 2-D operand."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    out = Tensor(x.data[rows, cols])

    def bwd():
        g = out.grad
        if g is None:
            return
        gx = np.zeros_like(x.data)
        np.add.at(gx, (rows, cols), g)
        _accum(x, gx)

    _record(bwd)
    return out


def concat_rows(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != b.data.ndim:
        raise DimensionError(f"concat_rows rank mismatch {a.data.shape} vs {b.data.shape}")
    out = Tensor(np.concatenate([a.data, b.data], axis=0))
    na = a.data.shape[0]

    def bwd():
        g = out.grad
        if g is None:
            return
        _accum(a, g[:na])
        _accum(b, g[na:])

    _record(bwd)
    return out


def masked_keep(x: Tensor, keep) -> Tensor:
    """Keep entries where ``keep`` holds; fill the rest with NEG_FILL."""
    keep = np.asarray(keep, dtype=bool)
    filled = x.data.copy()
    filled[~keep] = NEG_FILL
    out = _make(filled, "masked_keep")

    def bwd():
        if out.grad is not None:
            _accum(x, out.grad * keep)

    _record(bwd)
    return out


# ---------------------------------------------------------------------------
# dense algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """(L, K) @ (K, M) -> (L, M)."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul {a.data.shape} @ {b.data.shape}")
    out = _make(a.data @ b.data, "matmul")

    def bwd():
        g = out.grad
        if g is None:
            return
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    _record(bwd)
    return out


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with b broadcast over rows: (L, K) @ (K, M) + (M,)."""
    if x.data.ndim != 2 or x.data.shape[1] != w.data.shape[0] or b.data.shape != (w.data.shape[1],):
        raise DimensionError(f"affine {x.data.shape} @ {w.data.shape} + {b.data.shape}")
    out = _make(x.data @ w.data + b.data, "affine")

    def bwd():
        g = out.grad
        if g is None:
            return
        _accum(x, g @ w.data.T)
        _accum(w, x.data.T @ g)
        _accum(b, g.sum(axis=0))

    _record(bwd)
    return out


def swish(x: Tensor) -> Tensor:
    """x * sigmoid(x)."""
    s = _sigmoid(x.data)
    out = _make(x.data * s, "swish")

    def bwd():
        if out.grad is not None:
            _accum(x, out.grad * (s * (1.0 + x.data * (1.0 - s))))

    _record(bwd)
    return out


def glu_halves(x: Tensor) -> Tensor:
    """Gated linear unit over column halves: a * sigmoid(b) for x = [a | b]."""
    if x.data.ndim != 2 or x.data.shape[1] % 2:
        raise DimensionError(f"glu_halves needs an even column count, got {x.data.shape}")
    d = x.data.shape[1] // 2
    a, b = x.data[:, :d], x.data[:, d:]
    s = _sigmoid(b)
    out = _make(a * s, "glu_halves")

    def bwd():
        g = out.grad
        if g is None:
            return
        gx = np.concatenate([g * s, g * a * s * (1.0 - s)], axis=1)
        _accum(x, gx)

    _record(bwd)
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row to zero mean / unit variance, then scale and shift."""
    if eps <= 0:
        raise ParameterError(f"layer_norm eps must be positive, got {eps}")
    if x.data.ndim != 2 or gain.data.shape != (x.data.shape[1],) or bias.data.shape != (x.data.shape[1],):
        raise DimensionError(f"layer_norm {x.data.shape} with gain {gain.data.shape}, bias {bias.data.shape}")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = _make(xhat * gain.data + bias.data, "layer_norm")

    def bwd():
        g = out.grad
        if g is None:
            return
        _accum(gain, (g * xhat).sum(axis=0))
        _accum(bias, g.sum(axis=0))
        gh = g * gain.data
        gx = inv * (gh - gh.mean(axis=1, keepdims=True) - xhat * (gh * xhat).mean(axis=1, keepdims=True))
        _accum(x, gx)

    _record(bwd)
    return out


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax, stabilized by max subtraction."""
    if x.data.ndim != 2 or x.data.shape[1] == 0:
        raise DimensionError(f"softmax_rows needs non-empty rows, got {x.data.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    sm = e / e.sum(axis=1, keepdims=True)
    out = _make(sm, "softmax_rows")

    def bwd():
        g = out.grad
        if g is None:
            return
        _accum(x, sm * (g - (g * sm).sum(axis=1, keepdims=True)))

    _record(bwd)
    return out


def log_softmax_rows(x: Tensor) -> Tensor:
    if x.data.ndim != 2 or x.data.shape[1] == 0:
        raise DimensionError(f"log_softmax_rows needs non-empty rows, got {x.data.shape}")
    m = x.data.max(axis=1, keepdims=True)
    z = x.data - m
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True)) + m
    out = _make(x.data - lse, "log_softmax_rows")
    sm = np.exp(out.data)

    def bwd():
        g = out.grad
        if g is None:
            return
        _accum(x, g - sm * g.sum(axis=1, keepdims=True))

    _record(bwd)
    return out


def logsumexp_all(x: Tensor) -> Tensor:
    """log(sum(exp(x))) over every element, reduced to a scalar."""
    m = float(x.data.max())
    out = _make(np.asarray(m + np.log(np.exp(x.data - m).sum())), "logsumexp_all")

    def bwd():
        if out.grad is not None:
            _accum(x, out.grad * np.exp(x.data - out.data))

    _record(bwd)
    return out


def shifted_logsumexp3(x: Tensor, allow_skip) -> Tensor:
    """Lattice step: out[s] = LSE(x[s], x[s-1], x[s-2] if allow_skip[s]).

    Out-of-range and disallowed branches contribute NEG_FILL, i.e. nothing.
    """
    allow_skip = np.asarray(allow_skip, dtype=bool)
    n = x.data.shape[0]
    if x.data.ndim != 1 or allow_skip.shape != (n,):
        raise DimensionError(f"shifted_logsumexp3 {x.data.shape} with mask {allow_skip.shape}")
    fill = np.full(2, NEG_FILL, dtype=x.data.dtype)
    b0 = x.data
    b1 = np.concatenate([fill[:1], x.data[:-1]]) if n else b0
    b2 = np.concatenate([fill, x.data[:-2]]) if n >= 2 else np.full(n, NEG_FILL, dtype=x.data.dtype)
    b2[~allow_skip] = NEG_FILL
    m = np.maximum(np.maximum(b0, b1), b2)
    out = _make(m + np.log(np.exp(b0 - m) + np.exp(b1 - m) + np.exp(b2 - m)), "shifted_logsumexp3")

    def bwd():
        g = out.grad
        if g is None:
            return
        gx = g * np.exp(b0 - out.data)
        if n >= 1:
            gx[:-1] += (g * np.exp(b1 - out.data))[1:]
        if n >= 2:
            contrib = g * np.exp(b2 - out.data) * allow_skip
            gx[:-2] += contrib[2:]
        _accum(x, gx)

    _record(bwd)
    return out


def cross_entropy_mean(logits: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood of integer targets under row softmax."""
    targets = np.asarray(targets, dtype=np.int64)
    n, v = logits.data.shape
    if targets.shape != (n,):
        raise DimensionError(f"cross_entropy_mean logits {logits.data.shape} vs targets {targets.shape}")
    if n == 0:
        raise DimensionError("cross_entropy_mean needs at least one row")
    if targets.min() < 0 or targets.max() >= v:
        raise DimensionError(f"target id out of range for {v} classes")
    m = logits.data.max(axis=1, keepdims=True)
    lse = (np.log(np.exp(logits.data - m).sum(axis=1, keepdims=True)) + m)[:, 0]
    picked = logits.data[np.arange(n), targets]
    out = _make(np.asarray((lse - picked).mean()), "cross_entropy_mean")

    def bwd():
        g = out.grad
        if g is None:
            return
        sm = np.exp(logits.data - lse[:, None])
        sm[np.arange(n), targets] -= 1.0
        _accum(logits, sm * (g / n))

    _record(bwd)
    return out


# ---------------------------------------------------------------------------
# convolutions
# ---------------------------------------------------------------------------

def conv2d_s2(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Valid 2-D convolution with stride 2: (Ci, H, W) -> (Co, H', W')."""
    ci, h, wd = x.data.shape
    co, ci2, kh, kw = w.data.shape
    if ci != ci2 or b.data.shape != (co,):
        raise DimensionError(f"conv2d_s2 input {x.data.shape} vs kernel {w.data.shape}")
    if h < kh or wd < kw:
        raise DimensionError(f"conv2d_s2 input {x.data.shape} smaller than kernel {w.data.shape}")
    win = np.lib.stride_tricks.sliding_window_view(x.data, (kh, kw), axis=(1, 2))[:, ::2, ::2]
    out_data = np.tensordot(w.data, win, axes=([1, 2, 3], [0, 3, 4])) + b.data[:, None, None]
    out = _make(out_data, "conv2d_s2")
    ho, wo = out_data.shape[1:]

    def bwd():
        g = out.grad
        if g is None:
            return
        _accum(w, np.tensordot(g, win, axes=([1, 2], [1, 2])))
        _accum(b, g.sum(axis=(1, 2)))
        gx = np.zeros_like(x.data)
        for ky in range(kh):
            for kx in range(kw):
                gx[:, ky:ky + 2 * ho:2, kx:kx + 2 * wo:2] += np.tensordot(
                    w.data[:, :, ky, kx], g, axes=([0], [0]))
        _accum(x, gx)

    _record(bwd)
    return out


def depthwise_conv1d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Per-channel 1-D convolution along rows with same-length zero padding.

    x: (L, D), w: (K, D) with K odd, b: (D,).
    """
    if x.data.ndim != 2:
        raise DimensionError(f"depthwise_conv1d needs (L, D), got {x.data.shape}")
    L, d = x.data.shape
    k, d2 = w.data.shape
    if d != d2 or b.data.shape != (d,):
        raise DimensionError(f"depthwise_conv1d {x.data.shape} with kernel {w.data.shape}")
    if k % 2 == 0:
        raise ParameterError(f"depthwise kernel must be odd, got {k}")
    pad = (k - 1) // 2
    xp = np.pad(x.data, ((pad, pad), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=0)  # (L, D, K)
    out = _make(np.einsum("tdk,kd->td", win, w.data) + b.data, "depthwise_conv1d")

    def bwd():
        g = out.grad
        if g is None:
            return
        _accum(w, np.einsum("tdk,td->kd", win, g))
        _accum(b, g.sum(axis=0))
        gxp = np.zeros_like(xp)
        for kk in range(k):
            gxp[kk:kk + L] += g * w.data[kk]
        _accum(x, gxp[pad:pad + L])

    _record(bwd)
    return out


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------

def attention_core(q: Tensor, k: Tensor, v: Tensor, n_heads: int,
                   causal: bool = False, key_mask=None) -> tuple[Tensor, np.ndarray]:
    """Scaled dot-product attention over column-split heads.

    q: (Lq, D), k/v: (Lk, D); returns the (Lq, D) context and the raw
    attention weights (H, Lq, Lk) for inspection. Masked keys get exactly
    zero weight. ``causal`` requires Lq == Lk and hides keys right of the
    query position.
    """
    lq, d = q.data.shape
    lk, dk = k.data.shape
    if dk != d or v.data.shape != (lk, d):
        raise DimensionError(f"attention q {q.data.shape}, k {k.data.shape}, v {v.data.shape}")
    if d % n_heads:
        raise DimensionError(f"model width {d} not divisible by {n_heads} heads")
    if causal and lq != lk:
        raise DimensionError(f"causal attention needs square scores, got {lq}x{lk}")
    dh = d // n_heads
    inv = 1.0 / np.sqrt(dh)
    qh = q.data.reshape(lq, n_heads, dh)
    kh = k.data.reshape(lk, n_heads, dh)
    vh = v.data.reshape(lk, n_heads, dh)
    scores = np.einsum("qhd,khd->hqk", qh, kh) * inv
    if causal:
        hidden = ~np.tril(np.ones((lq, lk), dtype=bool))
        scores[:, hidden] = NEG_FILL
    if key_mask is not None:
        key_mask = np.asarray(key_mask, dtype=bool)
        if key_mask.shape != (lk,):
            raise DimensionError(f"key mask {key_mask.shape} vs {lk} keys")
        if not key_mask.any():
            raise ContractError("attention requires at least one unmasked key")
        scores[:, :, ~key_mask] = NEG_FILL
    m = scores.max(axis=2, keepdims=True)
    e = np.exp(scores - m)
    weights = e / e.sum(axis=2, keepdims=True)
    ctx = np.einsum("hqk,khd->qhd", weights, vh).reshape(lq, d)
    out = _make(ctx, "attention_core")

    def bwd():
        g = out.grad
        if g is None:
            return
        gr = g.reshape(lq, n_heads, dh)
        gw = np.einsum("qhd,khd->hqk", gr, vh)
        gv = np.einsum("hqk,qhd->khd", weights, gr).reshape(lk, d)
        gs = weights * (gw - (gw * weights).sum(axis=2, keepdims=True))
        gq = (np.einsum("hqk,khd->qhd", gs, kh) * inv).reshape(lq, d)
        gk = (np.einsum("hqk,qhd->khd", gs, qh) * inv).reshape(lk, d)
        _accum(q, gq)
        _accum(k, gk)
        _accum(v, gv)

    _record(bwd)
    return out, weights


# ---------------------------------------------------------------------------
# parameters and optimization
# ---------------------------------------------------------------------------

class Parameter:
    """A trainable tensor with Adam state: value, two moments, step count."""

    __slots__ = ("value", "moment1", "moment2", "step_count")

    def __init__(self, value: np.ndarray) -> None:
        value = np.asarray(value, dtype=np.float64)
        self.value = Tensor(value)
        self.moment1 = np.zeros_like(value)
        self.moment2 = np.zeros_like(value)
        self.step_count = 0

    @property
    def grad(self) -> np.ndarray | None:
        return self.value.grad

    def zero_grad(self) -> None:
        self.value.grad = None


def adam_step(p: Parameter, grad: np.ndarray, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> Parameter:
    """One bias-corrected Adam update, in place. Leaves p untouched on bad grads."""
    grad = np.asarray(grad)
    if grad.shape != p.value.data.shape:
        raise DimensionError(f"adam_step grad {grad.shape} vs value {p.value.data.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericError("adam_step received a non-finite gradient")
    p.step_count += 1
    t = p.step_count
    p.moment1[...] = beta1 * p.moment1 + (1.0 - beta1) * grad
    p.moment2[...] = beta2 * p.moment2 + (1.0 - beta2) * grad * grad
    m_hat = p.moment1 / (1.0 - beta1 ** t)
    v_hat = p.moment2 / (1.0 - beta2 ** t)
    p.value.data[...] = p.value.data - lr * m_hat / (np.sqrt(v_hat) + eps)
    return p


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], h: float = 1e-5,
               scale_floor: float = 1e-3) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` must map the given tensors to a scalar Tensor and be pure.
    Coordinates where both gradients fall below ``scale_floor`` are compared
    on that absolute scale instead, so finite-difference noise on dead
    coordinates does not dominate the report.
    """
    if not (0.0 < h <= 1e-2):
        raise ParameterError(f"step size h must lie in (0, 1e-2], got {h}")
    for t in inputs:
        t.grad = None
    with tape() as tp:
        out = f(*inputs)
        if out.data.size != 1:
            raise ContractError(f"grad_check target must be scalar, got shape {out.data.shape}")
        tp.backward(out)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    def eval_loss() -> float:
        return float(f(*inputs).data)

    worst = 0.0
    for t, ana in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        afl = ana.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            fp = eval_loss()
            flat[i] = keep - h
            fm = eval_loss()
            flat[i] = keep
            num = (fp - fm) / (2.0 * h)
            err = abs(afl[i] - num) / max(abs(afl[i]), abs(num), scale_floor)
            if err > worst:
                worst = err
    return worst
