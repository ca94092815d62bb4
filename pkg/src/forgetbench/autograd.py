"""Minimal reverse-mode autodiff engine on float64 numpy arrays.

All differentiable computation runs through :class:`Tensor` values. Gradient
tracking is explicit: primitives record themselves on the currently active
:class:`Tape` (opened as a context manager), and :func:`backward` replays the
records in reverse to populate ``.grad`` on every reachable tensor that has
``requires_grad`` set. Outside a tape everything runs in plain inference mode
with no bookkeeping.

Every forward result is checked for NaN/Inf; silent overflow is never allowed.
Double precision is used throughout so gradients can be validated against
central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .errors import (
    ConfigError,
    EmptySequenceError,
    GradientError,
    NumericOverflowError,
    ShapeError,
)

Array = np.ndarray

# Additive mask value; exp(-1e9 + anything reasonable) underflows to exactly 0.0,
# so masked attention weights are bit-exact zeros.
NEG_INF = -1e9


class Tensor:
    """Dense float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data: Array = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[Array] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; all routed through the module-level primitives.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape: tuple[int, ...]) -> "Tensor":
        return reshape(self, shape)

    def transpose(self, axes: tuple[int, ...]) -> "Tensor":
        return transpose(self, axes)


class _TapeRecord(NamedTuple):
    output: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[Array], Sequence[Optional[Array]]]


class Tape:
    """Ordered record of executed primitives for one forward computation.

    Replaying the records in reverse visits each op exactly once; because an
    op's output can only be consumed by later ops, all adjoint contributions
    for a tensor have been accumulated by the time its producing record is
    reached. A tape can be consumed by :func:`backward` at most once.
    """

    _active: Optional["Tape"] = None

    def __init__(self) -> None:
        self._records: list[_TapeRecord] = []
        self._output_ids: set[int] = set()
        self._consumed = False

    def __enter__(self) -> "Tape":
        if Tape._active is not None:
            raise GradientError("nested tapes are not supported")
        Tape._active = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        Tape._active = None

    @staticmethod
    def active() -> Optional["Tape"]:
        return Tape._active

    def __len__(self) -> int:
        return len(self._records)

    def _add(self, record: _TapeRecord) -> None:
        self._records.append(record)
        self._output_ids.add(id(record.output))


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``.grad`` for every requires_grad ancestor of a scalar loss.

    Raises GradientError if the loss is not on the tape (detached), the tape
    was already consumed, or any target tensor still carries a gradient from
    an earlier backward (zero grads first; accumulation across backwards is
    deliberately an error).
    """
    if loss.data.ndim != 0:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if id(loss) not in tape._output_ids:
        raise GradientError("loss is not recorded on this tape (detached?)")
    if tape._consumed:
        raise GradientError("tape already consumed by a previous backward")
    tape._consumed = True

    adjoints: dict[int, Array] = {id(loss): np.ones((), dtype=np.float64)}
    leaves: dict[int, Tensor] = {}

    for rec in reversed(tape._records):
        out_grad = adjoints.pop(id(rec.output), None)
        if out_grad is None:
            continue
        if rec.output.requires_grad:
            _assign_grad(rec.output, out_grad)
        input_grads = rec.backward(out_grad)
        for tensor, grad in zip(rec.inputs, input_grads):
            if grad is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in adjoints:
                adjoints[key] = adjoints[key] + grad
            else:
                adjoints[key] = grad
            if key not in tape._output_ids:
                leaves[key] = tensor

    for key, tensor in leaves.items():
        _assign_grad(tensor, adjoints[key])


def _assign_grad(tensor: Tensor, grad: Array) -> None:
    if tensor.grad is not None:
        raise GradientError(
            "gradient already populated; call zero_grad before the next backward"
        )
    if grad.shape != tensor.data.shape:
        grad = np.broadcast_to(grad, tensor.data.shape)
    if not grad.flags.writeable:
        grad = grad.copy()
    tensor.grad = grad


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(np.asarray(value, dtype=np.float64))


def _result(name: str, out_data: Array, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    if not np.all(np.isfinite(out_data)):
        raise NumericOverflowError(f"{name} produced non-finite values")
    tape = Tape.active()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track)
    if track:
        tape._add(_TapeRecord(out, inputs, backward_fn))
    return out


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a broadcast gradient back down to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise primitives


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def bwd(g: Array):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _result("add", out, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data

    def bwd(g: Array):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _result("sub", out, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data
    a_data, b_data = a.data, b.data

    def bwd(g: Array):
        return _unbroadcast(g * b_data, a_data.shape), _unbroadcast(g * a_data, b_data.shape)

    return _result("mul", out, (a, b), bwd)


def scale(a: Tensor, factor: float) -> Tensor:
    """Multiply by a python scalar constant."""
    factor = float(factor)

    def bwd(g: Array):
        return (g * factor,)

    return _result("scale", a.data * factor, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(g: Array):
        return (g * out * (1.0 - out),)

    return _result("sigmoid", out, (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def bwd(g: Array):
        return (g * (1.0 - out * out),)

    return _result("tanh", out, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bwd(g: Array):
        return (g * mask,)

    return _result("relu", np.where(mask, a.data, 0.0), (a,), bwd)


def dropout(a: Tensor, p: float, train: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout; identity when not training or p == 0."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return a
    if rng is None:
        raise ValueError("training-mode dropout needs a seeded Generator")
    keep = (rng.random(a.data.shape) >= p) / (1.0 - p)

    def bwd(g: Array):
        return (g * keep,)

    return _result("dropout", a.data * keep, (a,), bwd)


# ---------------------------------------------------------------------------
# reductions and shape ops


def _norm_axis(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.data.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)
    shape = a.data.shape

    def bwd(g: Array):
        if not keepdims and axes:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return _result("sum", out, (a,), bwd)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.data.ndim)
    count = 1
    for ax in axes:
        count *= a.data.shape[ax]
    out = a.data.mean(axis=axes, keepdims=keepdims)
    shape = a.data.shape

    def bwd(g: Array):
        if not keepdims and axes:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, shape),)

    return _result("mean", out, (a,), bwd)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old_shape = a.data.shape

    def bwd(g: Array):
        return (g.reshape(old_shape),)

    return _result("reshape", a.data.reshape(shape), (a,), bwd)


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inverse = tuple(np.argsort(axes))

    def bwd(g: Array):
        return (np.transpose(g, inverse),)

    return _result("transpose", np.transpose(a.data, axes), (a,), bwd)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; stacked (batched) operands broadcast over leading axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError("matmul operands need at least 2 dimensions")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    a_data, b_data = a.data, b.data

    def bwd(g: Array):
        da = _unbroadcast(g @ b_data.swapaxes(-1, -2), a_data.shape)
        db = _unbroadcast(a_data.swapaxes(-1, -2) @ g, b_data.shape)
        return da, db

    return _result("matmul", a_data @ b_data, (a, b), bwd)


def embedding_lookup(table: Tensor, ids: Array) -> Tensor:
    """Gather rows of an embedding table; backward scatter-adds into the table."""
    ids = np.asarray(ids)
    if ids.min(initial=0) < 0 or (ids.size and ids.max() >= table.data.shape[0]):
        raise IndexError("token id out of vocabulary range")
    vocab_shape = table.data.shape

    def bwd(g: Array):
        dt = np.zeros(vocab_shape)
        np.add.at(dt, ids, g)
        return (dt,)

    return _result("embedding_lookup", table.data[ids], (table,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply elementwise gain and bias."""
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gain.data + bias.data
    gain_data = gain.data
    d = x.data.shape[-1]

    def bwd(g: Array):
        lead = tuple(range(g.ndim - 1))
        dbias = g.sum(axis=lead)
        dgain = (g * xhat).sum(axis=lead)
        dxhat = g * gain_data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True) / d
        )
        return dx, dgain, dbias

    return _result("layer_norm", out, (x, gain, bias), bwd)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by max subtraction."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(g: Array):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _result("softmax", out, (a,), bwd)


def _log_softmax(z: Array) -> Array:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of the given class indices.

    Accepts a single logit vector with an int label, or a [batch, classes]
    matrix with a vector of labels (reduced by the mean).
    """
    labels = np.asarray(labels, dtype=np.int64)
    z = logits.data
    if z.ndim == 1:
        if labels.ndim != 0:
            raise ShapeError("single logit vector needs a scalar label")
        if not 0 <= int(labels) < z.shape[0]:
            raise IndexError(f"label {int(labels)} out of range for {z.shape[0]} classes")
        logp = _log_softmax(z)
        out = -logp[int(labels)]

        def bwd(g: Array):
            p = np.exp(logp)
            p[int(labels)] -= 1.0
            return (g * p,)

        return _result("softmax_cross_entropy", np.asarray(out), (logits,), bwd)

    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise ShapeError(f"bad shapes for cross entropy: {z.shape} with labels {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= z.shape[1]):
        raise IndexError("label out of range")
    logp = _log_softmax(z)
    n = z.shape[0]
    out = -logp[np.arange(n), labels].mean()

    def bwd(g: Array):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (g * p / n,)

    return _result("softmax_cross_entropy", np.asarray(out), (logits,), bwd)


def cross_entropy_values(logits: Array, labels: Array) -> Array:
    """Per-row cross-entropy losses as plain numpy (no gradient tracking)."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    logp = _log_softmax(logits)
    return -logp[np.arange(logits.shape[0]), labels]


def kl_div_temperature(z_old: Tensor, z_new: Tensor, temperature: float) -> Tensor:
    """KL(softmax(z_old/T) || softmax(z_new/T)), reduced over the last axis.

    The gradient flows only through ``z_new``; ``z_old`` plays the frozen
    teacher. Returns a scalar for vector inputs and a per-row vector for
    matrix inputs.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if z_old.data.shape != z_new.data.shape:
        raise ShapeError(f"logit shapes disagree: {z_old.shape} vs {z_new.shape}")
    t = float(temperature)
    logp_old = _log_softmax(z_old.data / t)
    logp_new = _log_softmax(z_new.data / t)
    p_old = np.exp(logp_old)
    out = (p_old * (logp_old - logp_new)).sum(axis=-1)

    def bwd(g: Array):
        p_new = np.exp(logp_new)
        d_new = (p_new - p_old) / t
        g_row = np.expand_dims(g, -1) if np.ndim(g) else g
        return None, g_row * d_new

    return _result("kl_div_temperature", np.asarray(out), (z_old, z_new), bwd)


def argmax(logits) -> Array:
    """Most likely class index per row; evaluation only, not differentiable."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return np.argmax(data, axis=-1)


# ---------------------------------------------------------------------------
# sequence composites


def masked_mean_pool(h: Tensor, mask) -> Tensor:
    """Mean of the rows flagged by a 0/1 mask along the second-to-last axis."""
    mask = np.asarray(mask, dtype=np.float64)
    if not np.isin(mask, (0.0, 1.0)).all():
        raise ValueError("mask entries must be 0 or 1")
    counts = mask.sum(axis=-1)
    if np.any(counts == 0):
        raise EmptySequenceError("mask selects no positions")
    weighted = mul(h, Tensor(mask[..., None]))
    pooled = reduce_sum(weighted, axis=-2)
    inv = np.asarray(1.0 / counts)[..., None] if mask.ndim > 1 else 1.0 / counts
    return mul(pooled, Tensor(inv))


@dataclass
class GruParams:
    """Weights of one gated recurrent cell (update gate z, reset gate r)."""

    w_z: Tensor
    u_z: Tensor
    b_z: Tensor
    w_r: Tensor
    u_r: Tensor
    b_r: Tensor
    w_h: Tensor
    u_h: Tensor
    b_h: Tensor

    def tensors(self) -> list[Tensor]:
        return [self.w_z, self.u_z, self.b_z, self.w_r, self.u_r, self.b_r,
                self.w_h, self.u_h, self.b_h]


def gru_cell(x_t: Tensor, h_prev: Tensor, params: GruParams) -> Tensor:
    """One recurrence step: h = (1 - z) * h_prev + z * tanh(Wx + U(r*h_prev) + b)."""
    z = sigmoid(add(add(matmul(x_t, params.w_z), matmul(h_prev, params.u_z)), params.b_z))
    r = sigmoid(add(add(matmul(x_t, params.w_r), matmul(h_prev, params.u_r)), params.b_r))
    cand = tanh(add(add(matmul(x_t, params.w_h), matmul(mul(r, h_prev), params.u_h)), params.b_h))
    return add(mul(sub(Tensor(1.0), z), h_prev), mul(z, cand))


@dataclass
class AttentionParams:
    """Projection weights of one multi-head self-attention layer."""

    w_q: Tensor
    b_q: Tensor
    w_k: Tensor
    b_k: Tensor
    w_v: Tensor
    b_v: Tensor
    w_o: Tensor
    b_o: Tensor

    def tensors(self) -> list[Tensor]:
        return [self.w_q, self.b_q, self.w_k, self.b_k, self.w_v, self.b_v,
                self.w_o, self.b_o]


def self_attention(h: Tensor, mask, heads: int, params: AttentionParams) -> Tensor:
    """Scaled dot-product attention over [batch, length, dim] states.

    Padded key positions (mask 0) are pushed to -1e9 before the softmax, which
    zeroes their weights exactly; queries at padded positions produce rows that
    callers are expected to drop via masked pooling.
    """
    squeeze = h.data.ndim == 2
    if squeeze:
        h = reshape(h, (1,) + h.data.shape)
    batch, length, dim = h.data.shape
    if dim % heads != 0:
        raise ConfigError(f"model dim {dim} not divisible by {heads} heads")
    dk = dim // heads
    mask = np.asarray(mask, dtype=np.float64).reshape(batch, length)

    def project(w: Tensor, b: Tensor) -> Tensor:
        p = add(matmul(h, w), b)
        p = reshape(p, (batch, length, heads, dk))
        return transpose(p, (0, 2, 1, 3))

    q = project(params.w_q, params.b_q)
    k = project(params.w_k, params.b_k)
    v = project(params.w_v, params.b_v)
    scores = scale(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dk))
    neg = (1.0 - mask)[:, None, None, :] * NEG_INF
    weights = softmax(add(scores, Tensor(neg)))
    ctx = matmul(weights, v)
    ctx = reshape(transpose(ctx, (0, 2, 1, 3)), (batch, length, dim))
    out = add(matmul(ctx, params.w_o), params.b_o)
    if squeeze:
        out = reshape(out, (length, dim))
    return out


def sinusoidal_positions(length: int, dim: int) -> Array:
    """Fixed sin/cos position table added to embeddings."""
    positions = np.arange(length, dtype=np.float64)[:, None]
    div = np.exp(np.arange(0, dim, 2, dtype=np.float64) * (-np.log(10000.0) / dim))
    table = np.zeros((length, dim))
    table[:, 0::2] = np.sin(positions * div)
    table[:, 1::2] = np.cos(positions * div[: dim // 2])
    return table


# ---------------------------------------------------------------------------
# parameter update steps


class SGD:
    """Plain gradient descent over a fixed parameter list."""

    def __init__(self, params: Sequence[Tensor], lr: float):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = list(params)
        self.lr = lr

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                continue
            p.data = p.data - self.lr * p.grad

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class Adam:
    """Adam with bias correction; first/second moments start at zero."""

    def __init__(self, params: Sequence[Tensor], lr: float,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            self.m[i] = b1 * self.m[i] + (1 - b1) * p.grad
            self.v[i] = b2 * self.v[i] + (1 - b2) * (p.grad * p.grad)
            m_hat = self.m[i] / (1 - b1 ** self.t)
            v_hat = self.v[i] / (1 - b2 ** self.t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
