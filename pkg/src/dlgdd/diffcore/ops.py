"""Differentiable layers and losses built on :mod:`dlgdd.diffcore.tensor`."""
from __future__ import annotations

import numpy as np

from ..errors import ConfigError, ShapeError, UsageError
from .tensor import Tensor, as_tensor, log, matmul, relu, softplus, sqrt, tsum

__all__ = [
    "affine",
    "softmax",
    "log_softmax",
    "layer_norm",
    "l2_normalize",
    "bce_with_logits",
    "supcon_loss",
    "conv2d",
    "relu",
]


def affine(x, weights, bias=None) -> Tensor:
    """``x @ weights + bias`` over the last axis of ``x``."""
    x, weights = as_tensor(x), as_tensor(weights)
    if weights.ndim != 2 or x.shape[-1] != weights.shape[0]:
        raise ShapeError(f"affine: input {x.shape} incompatible with weights {weights.shape}")
    y = matmul(x if x.ndim >= 2 else x.reshape(1, -1), weights)
    if x.ndim == 1:
        y = y.reshape(-1)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weights.shape[1],):
            raise ShapeError(f"affine: bias {bias.shape} incompatible with weights {weights.shape}")
        y = y + bias
    return y


def _masked(x: np.ndarray, mask):
    if mask is None:
        return x
    return np.where(mask, -np.inf, x)


def softmax(x, axis=-1, mask=None) -> Tensor:
    """Softmax; entries where ``mask`` is True get exactly zero weight and zero gradient."""
    x = as_tensor(x)
    z = _masked(x.data, mask)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return Tensor._make(s, (x,), back, "softmax")


def log_softmax(x, axis=-1, mask=None) -> Tensor:
    """Log-softmax; masked entries are reported as 0 and receive no gradient."""
    x = as_tensor(x)
    z = _masked(x.data, mask)
    m = z.max(axis=axis, keepdims=True)
    lse = m + np.log(np.exp(z - m).sum(axis=axis, keepdims=True))
    out = z - lse
    s = np.exp(out)
    if mask is not None:
        out = np.where(mask, 0.0, out)

    def back(g):
        if mask is not None:
            g = np.where(mask, 0.0, g)
        return (g - s * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(out, (x,), back, "log_softmax")


def layer_norm(x, gamma=None, beta=None, eps: float = 1e-5) -> Tensor:
    x = as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def back_x(g):
        return inv * (g - g.mean(axis=-1, keepdims=True) - xhat * (g * xhat).mean(axis=-1, keepdims=True))

    norm = Tensor._make(xhat, (x,), lambda g: (back_x(g),), "layer_norm")
    if gamma is not None:
        norm = norm * gamma
    if beta is not None:
        norm = norm + beta
    return norm


def l2_normalize(x, axis=-1) -> Tensor:
    x = as_tensor(x)
    norm = sqrt(tsum(x * x, axis=axis, keepdims=True) + 1e-24)
    return x / norm


def bce_with_logits(logits, targets, reduction: str = "mean") -> Tensor:
    """Binary cross-entropy on raw logits: ``softplus(z) - z * t``."""
    logits = as_tensor(logits)
    t = np.broadcast_to(np.asarray(targets, dtype=np.float64), logits.shape)
    loss = softplus(logits) - logits * t
    if reduction == "mean":
        return loss.mean()
    if reduction == "sum":
        return loss.sum()
    if reduction == "none":
        return loss
    raise UsageError(f"unknown reduction {reduction!r}")


def supcon_loss(embeddings, labels, temperature: float = 0.1) -> Tensor:
    """Supervised contrastive loss over a batch of unit-norm embeddings.

    For anchor i with positives P(i) (same label, excluding i):
    ``-1/|P(i)| * sum_p log(exp(z_i.z_p/t) / sum_{a != i} exp(z_i.z_a/t))``,
    averaged over anchors.
    """
    z = as_tensor(embeddings)
    labels = np.asarray(labels)
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise ShapeError(f"supcon_loss: embeddings {z.shape} vs labels {labels.shape}")
    values, counts = np.unique(labels, return_counts=True)
    if (counts < 2).any():
        raise UsageError(
            f"supcon_loss: label(s) {values[counts < 2].tolist()} appear only once in the batch"
        )
    if temperature <= 0:
        raise UsageError(f"temperature must be positive, got {temperature}")
    n = z.shape[0]
    eye = np.eye(n, dtype=bool)
    sim = matmul(z, z.transpose(1, 0)) * (1.0 / temperature)
    logp = log_softmax(sim, axis=1, mask=eye)
    pos = (labels[:, None] == labels[None, :]) & ~eye
    per_anchor = tsum(logp * pos.astype(np.float64), axis=1) * (1.0 / pos.sum(axis=1))
    return -per_anchor.mean()


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation, NCHW input and (O, C, k, k) weights, via im2col."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with weights {weight.shape}")
    if weight.shape[2] != weight.shape[3]:
        raise ConfigError(f"conv2d: square kernels only, got {weight.shape[2:]}")
    B, C, H, W = x.shape
    O, _, k, _ = weight.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    Ho = (H + 2 * padding - k) // stride + 1
    Wo = (W + 2 * padding - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :Ho, :Wo]  # B, C, Ho, Wo, k, k
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * k * k)
    wmat = weight.data.reshape(O, C * k * k)
    out = cols @ wmat.T
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
    out = out.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)

    def back(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, O)
        gw = (g2.T @ cols).reshape(weight.shape)
        gcols = (g2 @ wmat).reshape(B, Ho, Wo, C, k, k)
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += gcols[
                    :, :, :, :, i, j
                ].transpose(0, 3, 1, 2)
        gx = gxp[:, :, padding : padding + H, padding : padding + W]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(out, parents, back, "conv2d")
