"""Dense array primitives with hand-written gradients.

Tensors are plain numpy arrays. Every differentiable op has a ``*_grad``
companion that returns the exact vector-Jacobian product for an upstream
gradient. Training runs in float32; the gradient checker works in float64.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, DimensionError, NumericError, ValidationError

NORM_EPS = 1e-5


@dataclass
class GradSlot:
    """A parameter tensor paired with its accumulated gradient."""

    value: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.value = np.asarray(self.value)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        elif self.grad.shape != self.value.shape:
            raise DimensionError(f"grad shape {self.grad.shape} != value shape {self.value.shape}")

    def zero_grad(self):
        self.grad[...] = 0

    @property
    def shape(self):
        return self.value.shape


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_param(cls, param: GradSlot, learning_rate: float = 1e-3, **kw) -> "AdamState":
        return cls(np.zeros_like(param.value), np.zeros_like(param.value),
                   learning_rate=learning_rate, **kw)


class Activation(str, enum.Enum):
    RELU = "relu"
    SIGMOID = "sigmoid"


# ---------------------------------------------------------------- convolution

def _check_conv_shapes(x: np.ndarray, kernel: np.ndarray):
    if kernel.ndim not in (4, 5):
        raise DimensionError(f"kernel must be n×c×k×k or B×n×c×k×k, got {kernel.shape}")
    k = kernel.shape[-1]
    if kernel.shape[-2] != k:
        raise DimensionError(f"kernel must be square, got {kernel.shape}")
    if k % 2 == 0:
        raise ConfigurationError(f"kernel size must be odd, got {k}")
    if x.ndim != 4:
        raise DimensionError(f"input must be c×H×W or B×c×H×W, got {x.shape}")
    if kernel.shape[-3] != x.shape[1]:
        raise DimensionError(f"kernel expects {kernel.shape[-3]} input channels, input has {x.shape[1]}")
    if kernel.ndim == 5 and kernel.shape[0] != x.shape[0]:
        raise DimensionError(f"per-sample kernels for {kernel.shape[0]} samples, input batch {x.shape[0]}")
    return k


def im2col(x: np.ndarray, k: int) -> np.ndarray:
    """B×c×H×W -> B×(c·k·k)×(H·W) with zero 'same' padding."""
    b, c, h, w = x.shape
    p = (k - 1) // 2
    xp = np.zeros((b, c, h + 2 * p, w + 2 * p), dtype=x.dtype)
    xp[:, :, p:p + h, p:p + w] = x
    cols = np.empty((b, c, k, k, h, w), dtype=x.dtype)
    for di in range(k):
        for dj in range(k):
            cols[:, :, di, dj] = xp[:, :, di:di + h, dj:dj + w]
    return cols.reshape(b, c * k * k, h * w)


def col2im(cols: np.ndarray, shape: tuple, k: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add columns back to B×c×H×W."""
    b, c, h, w = shape
    p = (k - 1) // 2
    cols = cols.reshape(b, c, k, k, h, w)
    out = np.zeros((b, c, h + 2 * p, w + 2 * p), dtype=cols.dtype)
    for di in range(k):
        for dj in range(k):
            out[:, :, di:di + h, dj:dj + w] += cols[:, :, di, dj]
    return out[:, :, p:p + h, p:p + w]


def _as_batch(x):
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    return x, False


def conv2d_same(input: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Zero-padded cross-correlation keeping the spatial size.

    ``input`` is c×H×W (or B×c×H×W); ``kernel`` is n×c×k×k shared across the
    batch, or B×n×c×k×k with one kernel per sample.
    """
    x, single = _as_batch(input)
    kernel = np.asarray(kernel)
    k = _check_conv_shapes(x, kernel)
    b, c, h, w = x.shape
    n = kernel.shape[-4]
    kmat = kernel.reshape(kernel.shape[:-3] + (c * k * k,))
    out = (kmat @ im2col(x, k)).reshape(b, n, h, w)
    return out[0] if single else out


def conv2d_grad(input: np.ndarray, kernel: np.ndarray, upstream: np.ndarray):
    """Gradients of ``sum(upstream * conv2d_same(input, kernel))``.

    Returns ``(grad_input, grad_kernel)``. A shared kernel receives the sum of
    per-sample contributions.
    """
    x, single = _as_batch(input)
    up = np.asarray(upstream)
    if single:
        up = up[None]
    kernel = np.asarray(kernel)
    k = _check_conv_shapes(x, kernel)
    b, c, h, w = x.shape
    n = kernel.shape[-4]
    if up.shape != (b, n, h, w):
        raise DimensionError(f"upstream shape {up.shape} != output shape {(b, n, h, w)}")
    cols = im2col(x, k)
    u = up.reshape(b, n, h * w)
    gk = u @ cols.transpose(0, 2, 1)
    if kernel.ndim == 4:
        gk = gk.sum(axis=0)
    gk = gk.reshape(kernel.shape)
    gx = conv2d_same(up, flip_transpose(kernel))
    return (gx[0] if single else gx), gk


def flip_transpose(kernel: np.ndarray) -> np.ndarray:
    """Kernel whose 'same' correlation is the adjoint of correlating with ``kernel``.

    Swaps the in/out channel axes and rotates each k×k tap grid by 180 degrees.
    """
    return np.ascontiguousarray(np.swapaxes(kernel, -3, -4)[..., ::-1, ::-1])


# ---------------------------------------------------------------- dense ops

def linear(input: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """``input @ weight + bias`` over the last axis; leading axes are batch."""
    if input.shape[-1] != weight.shape[0]:
        raise DimensionError(f"inner dimensions differ: {input.shape} @ {weight.shape}")
    if bias.shape != (weight.shape[1],):
        raise DimensionError(f"bias shape {bias.shape} != ({weight.shape[1]},)")
    return input @ weight + bias


def linear_grad(input: np.ndarray, weight: np.ndarray, upstream: np.ndarray):
    """Returns ``(grad_input, grad_weight, grad_bias)``."""
    b = input.shape[-1]
    d = weight.shape[1]
    gx = upstream @ weight.T
    x2 = input.reshape(-1, b)
    u2 = upstream.reshape(-1, d)
    return gx, x2.T @ u2, u2.sum(axis=0)


def _norm_stats(x):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + NORM_EPS)
    return (x - mu) * inv, inv


def row_norm(input: np.ndarray, scale: np.ndarray, shift: np.ndarray) -> np.ndarray:
    """Standardize each row (last axis), then apply a per-column affine map."""
    if input.shape[-1] < 2:
        raise ConfigurationError("row_norm needs rows of length >= 2")
    if scale.shape != input.shape[-1:] or shift.shape != input.shape[-1:]:
        raise DimensionError("scale/shift must match the row length")
    xhat, _ = _norm_stats(input)
    return xhat * scale + shift


def row_norm_grad(input: np.ndarray, scale: np.ndarray, upstream: np.ndarray):
    """Returns ``(grad_input, grad_scale, grad_shift)``."""
    xhat, inv = _norm_stats(input)
    b = input.shape[-1]
    gscale = (upstream * xhat).reshape(-1, b).sum(axis=0)
    gshift = upstream.reshape(-1, b).sum(axis=0)
    gxhat = upstream * scale
    gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
    return gx, gscale, gshift


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form avoids overflow in exp for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def activation(kind: Activation | str, input: np.ndarray) -> np.ndarray:
    kind = Activation(kind)
    if kind is Activation.RELU:
        return np.maximum(input, 0)
    return sigmoid(input)


def activation_grad(kind: Activation | str, input: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    kind = Activation(kind)
    if kind is Activation.RELU:
        return upstream * (input > 0)
    s = sigmoid(input)
    return upstream * s * (1 - s)


# ---------------------------------------------------------------- loss

def _log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _check_soft_labels(logits, labels):
    if logits.shape != labels.shape or logits.ndim != 2:
        raise DimensionError(f"logits {logits.shape} and labels {labels.shape} must both be B×C")
    rows = labels.astype(np.float64).sum(axis=1)
    if np.any(labels < 0) or np.any(np.abs(rows - 1.0) > 1e-6):
        raise ValidationError("every soft-label row must be a probability distribution")


def soft_cross_entropy(logits: np.ndarray, soft_labels: np.ndarray) -> float:
    """Batch-mean cross-entropy against soft targets."""
    _check_soft_labels(logits, soft_labels)
    return float(-(soft_labels * _log_softmax(logits)).sum(axis=1).mean())


def soft_cross_entropy_grad(logits: np.ndarray, soft_labels: np.ndarray) -> np.ndarray:
    _check_soft_labels(logits, soft_labels)
    p = np.exp(_log_softmax(logits))
    return (p - soft_labels) / logits.shape[0]


# ---------------------------------------------------------------- optimizer

def adam_update(param: GradSlot, state: AdamState) -> GradSlot:
    """One bias-corrected Adam step, in place on ``param.value`` and ``state``."""
    if state.first_moment.shape != param.value.shape or state.second_moment.shape != param.value.shape:
        raise DimensionError("optimizer state does not match parameter shape")
    g = param.grad
    state.step_count += 1
    t = state.step_count
    state.first_moment *= state.beta1
    state.first_moment += (1 - state.beta1) * g
    state.second_moment *= state.beta2
    state.second_moment += (1 - state.beta2) * g * g
    m_hat = state.first_moment / (1 - state.beta1 ** t)
    v_hat = state.second_moment / (1 - state.beta2 ** t)
    step = state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    param.value -= step.astype(param.value.dtype, copy=False)
    return param


# ---------------------------------------------------------------- verification

def finite_diff_check(forward: Callable[[], float], params: Sequence[GradSlot], h: float = 1e-4) -> float:
    """Compare stored analytic gradients with central differences.

    ``forward`` re-evaluates the scalar objective from the current parameter
    values. Parameters are perturbed in place and restored. Returns the max
    over all entries of ``|analytic - numeric| / max(1, |numeric|)``.
    """
    if h <= 0:
        raise ConfigurationError("step h must be positive")
    worst = 0.0
    for slot in params:
        flat = slot.value.reshape(-1)
        gflat = slot.grad.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            fp = forward()
            flat[idx] = orig - h
            fm = forward()
            flat[idx] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError("forward produced a non-finite value during gradient check")
            num = (fp - fm) / (2 * h)
            err = abs(float(gflat[idx]) - num) / max(1.0, abs(num))
            worst = max(worst, err)
    return worst
