"""Differentiable building blocks for the two temporal conv nets.

Sequences are plain ndarrays laid out ``(channels, frames)``. Each primitive
comes as a forward function plus an explicit backward; there is no autodiff
graph. Arithmetic follows the dtype of the inputs, so float64 arrays give
gradient-check precision and float32 arrays give fast training.
"""
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, DataError

ACTIVATIONS = ("sigmoid", "relu", "tanh", "gated", "normalized_relu")
NRELU_EPS = 1e-5
MODES = ("causal", "acausal")


def _check_mode(mode):
    if mode not in MODES:
        raise ConfigError(f"conv mode must be 'causal' or 'acausal', got {mode!r}")


def tap_offsets(taps, mode, dilation=1):
    """Frame offsets read by each filter tap.

    Causal filters cover ``t-(taps-1)*dilation .. t``. Acausal filters are
    centred on ``t``, with the extra tap on the past side when ``taps`` is even.
    """
    _check_mode(mode)
    if taps < 1 or dilation < 1:
        raise ConfigError(f"taps and dilation must be >= 1, got {taps}, {dilation}")
    start = -(taps - 1) if mode == "causal" else -(taps // 2)
    return np.arange(start, start + taps, dtype=np.int64) * dilation


# --------------------------------------------------------------------------
# temporal convolution


def _conv_geometry(offsets, frames):
    pad_left = max(0, -int(offsets.min()))
    pad_right = max(0, int(offsets.max()))
    return pad_left, frames + pad_left + pad_right


def _padded(x, pad_left, padded_frames):
    xp = np.zeros((x.shape[0], padded_frames), dtype=x.dtype)
    xp[:, pad_left : pad_left + x.shape[1]] = x
    return xp


def conv_forward_cached(x, weight, bias, offsets):
    """Convolution returning ``(y, cols)``; ``cols`` feeds :func:`conv_backward_cached`."""
    if x.ndim != 2 or weight.ndim != 3 or x.shape[0] != weight.shape[1]:
        raise ConfigError(
            f"conv input has {x.shape[0] if x.ndim == 2 else x.shape} channels, "
            f"filters expect {weight.shape[1] if weight.ndim == 3 else weight.shape}"
        )
    if weight.shape[2] != len(offsets):
        raise ConfigError(f"filter has {weight.shape[2]} taps but {len(offsets)} offsets given")
    frames = x.shape[1]
    pad_left, padded_frames = _conv_geometry(offsets, frames)
    cols = kernels.im2col(_padded(x, pad_left, padded_frames), offsets, pad_left, frames)
    out_ch = weight.shape[0]
    y = weight.reshape(out_ch, -1) @ cols.reshape(-1, frames)
    y += bias[:, None]
    return y, cols


def conv_backward_cached(cols, weight, dy, offsets):
    out_ch, in_ch, taps = weight.shape
    frames = dy.shape[1]
    if dy.shape[0] != out_ch or cols.shape != (in_ch, taps, frames):
        raise ConfigError(f"upstream gradient shape {dy.shape} does not match the forward pass")
    dw = (dy @ cols.reshape(-1, frames).T).reshape(weight.shape)
    db = dy.sum(axis=1)
    dcols = (weight.reshape(out_ch, -1).T @ dy).reshape(in_ch, taps, frames)
    pad_left, padded_frames = _conv_geometry(offsets, frames)
    dxp = kernels.col2im(dcols, offsets, pad_left, padded_frames)
    return dxp[:, pad_left : pad_left + frames], dw, db


def temporal_conv_forward(x, weight, bias, mode="acausal", dilation=1):
    """Same-length temporal convolution with zero padding at the boundaries.

    ``weight`` has shape ``(out_channels, in_channels, taps)``. Output frame t
    is ``bias + sum_k weight[:, :, k] @ x[:, t + offset_k]``.
    """
    offsets = tap_offsets(weight.shape[2], mode, dilation)
    return conv_forward_cached(x, weight, bias, offsets)[0]


def temporal_conv_backward(x, weight, dy, mode="acausal", dilation=1):
    """Gradients ``(dx, dweight, dbias)`` of the convolution for upstream ``dy``."""
    if dy.shape != (weight.shape[0], x.shape[1]):
        raise ConfigError(f"upstream gradient shape {dy.shape} does not match the forward pass")
    offsets = tap_offsets(weight.shape[2], mode, dilation)
    _, cols = conv_forward_cached(x, weight, np.zeros(weight.shape[0], dtype=x.dtype), offsets)
    return conv_backward_cached(cols, weight, dy, offsets)


def dense_forward(x, weight, bias):
    """Per-frame affine map ``weight @ x_t + bias``."""
    if x.shape[0] != weight.shape[1]:
        raise ConfigError(f"dense layer expects {weight.shape[1]} channels, got {x.shape[0]}")
    return weight @ x + bias[:, None]


def dense_backward(x, weight, dy):
    return weight.T @ dy, dy @ x.T, dy.sum(axis=1)


# --------------------------------------------------------------------------
# pooling / upsampling


def max_pool_time(x, causal=False):
    """Width-2 max pooling across time. Returns ``(pooled, argmax_frames)``.

    Odd lengths are padded with -inf. In causal mode windows are
    ``(2p-1, 2p)`` so that, after upsampling, no frame sees a later input.
    """
    return kernels.maxpool_fwd(x, causal)


def max_pool_time_backward(dy, argmax_frames, frames):
    return kernels.maxpool_bwd(dy, argmax_frames, frames)


def upsample_time(x, target_frames):
    """Repeat each frame twice, then truncate to ``target_frames``."""
    frames = x.shape[1]
    if target_frames not in (2 * frames, 2 * frames - 1):
        raise ConfigError(f"cannot upsample {frames} frames to {target_frames}")
    return np.repeat(x, 2, axis=1)[:, :target_frames]


def upsample_time_backward(dy, source_frames):
    padded = np.zeros((dy.shape[0], 2 * source_frames), dtype=dy.dtype)
    padded[:, : dy.shape[1]] = dy
    return padded.reshape(dy.shape[0], source_frames, 2).sum(axis=2)


# --------------------------------------------------------------------------
# activations


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _check_kind(kind, channels):
    if kind not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {kind!r}; choose from {', '.join(ACTIVATIONS)}")
    if kind == "gated" and channels % 2:
        raise ConfigError(f"gated activation needs an even channel count, got {channels}")


def activation_width(kind, filters):
    """Conv output channels needed so the activation yields ``filters`` channels."""
    return 2 * filters if kind == "gated" else filters


def activation(x, kind):
    """Apply one of ``ACTIVATIONS``.

    ``gated`` splits the channels in half: ``tanh(first) * sigmoid(second)``.
    ``normalized_relu`` divides each frame's ReLU by that frame's maximum plus 1e-5.
    """
    _check_kind(kind, x.shape[0])
    if kind == "sigmoid":
        return _sigmoid(x)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "gated":
        half = x.shape[0] // 2
        return np.tanh(x[:half]) * _sigmoid(x[half:])
    return kernels.nrelu_fwd(x, NRELU_EPS)


def activation_backward(dy, x, kind):
    """Gradient wrt the pre-activation ``x``."""
    _check_kind(kind, x.shape[0])
    if kind == "sigmoid":
        s = _sigmoid(x)
        return dy * s * (1.0 - s)
    if kind == "relu":
        return np.where(x > 0, dy, 0.0).astype(x.dtype, copy=False)
    if kind == "tanh":
        return dy * (1.0 - np.tanh(x) ** 2)
    if kind == "gated":
        half = x.shape[0] // 2
        a, g = np.tanh(x[:half]), _sigmoid(x[half:])
        return np.concatenate([dy * g * (1.0 - a * a), dy * a * g * (1.0 - g)], axis=0)
    return kernels.nrelu_bwd(dy, x, NRELU_EPS)


# --------------------------------------------------------------------------
# dropout, softmax, loss


def dropout_mask(channels, rate, rng, dtype=np.float64):
    """Per-channel multiplier. Channel i is dropped iff ``rng.random(channels)[i] < rate``."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    keep = rng.random(channels) >= rate
    return (keep / (1.0 - rate)).astype(dtype)[:, None]


def spatial_dropout(x, rate, rng, training):
    """Zero whole channels with probability ``rate``; identity when not training."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    return x * dropout_mask(x.shape[0], rate, rng, x.dtype)


def softmax_frames(logits):
    shifted = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def cross_entropy(probs, labels, mask=None):
    """Mean negative log-likelihood over unmasked frames.

    Returns ``(loss, dlogits)`` where ``dlogits`` is the gradient with respect
    to the logits that produced ``probs`` through :func:`softmax_frames`.
    """
    num_classes, frames = probs.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (frames,):
        raise DataError(f"{labels.shape[0]} labels for {frames} frames")
    if frames and (labels.min() < 0 or labels.max() >= num_classes):
        raise DataError(f"labels must lie in [0, {num_classes}), got max {labels.max()}")
    mask = np.ones(frames, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    grad = np.zeros_like(probs)
    if count == 0:
        return 0.0, grad
    cols = np.flatnonzero(mask)
    picked = probs[labels[cols], cols]
    tiny = np.finfo(probs.dtype).tiny
    loss = float(-np.log(np.maximum(picked, tiny)).sum() / count)
    grad[:, cols] = probs[:, cols]
    grad[labels[cols], cols] -= 1.0
    grad /= count
    return loss, grad


# --------------------------------------------------------------------------
# parameters and optimisation


def glorot_uniform(rng, shape, fan_in, fan_out, dtype=np.float64):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def zero_grads(params):
    """A gradient buffer mirroring ``params``."""
    return {name: np.zeros_like(value) for name, value in params.items()}


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first: dict = field(default_factory=dict)
    second: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params, **hyper):
        state = cls(**hyper)
        state.first = zero_grads(params)
        state.second = zero_grads(params)
        return state


def adam_step(params, grads, state):
    """Bias-corrected Adam update applied to ``params`` in place."""
    if params.keys() != grads.keys():
        raise ConfigError("gradient buffer does not mirror the parameter store")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correct1 = 1.0 - b1**state.step
    correct2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ConfigError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.first.setdefault(name, np.zeros_like(p))
        v = state.second.setdefault(name, np.zeros_like(p))
        kernels.adam_update(
            p, g, m, v, state.learning_rate, b1, b2, correct1, correct2, state.epsilon
        )
    return params, state
