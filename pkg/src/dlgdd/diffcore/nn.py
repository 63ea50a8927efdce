"""Parameter initialisers and the composite blocks used by the models."""
from __future__ import annotations

import numpy as np

from ..errors import ConfigError, ShapeError
from .ops import affine, layer_norm, softmax
from .params import ParameterStore
from .tensor import Tensor, as_tensor, matmul, relu


def init_affine(store: ParameterStore, name: str, n_in: int, n_out: int, rng, gain: float = 1.0):
    bound = gain * np.sqrt(6.0 / (n_in + n_out))
    store.add(f"{name}.w", rng.uniform(-bound, bound, size=(n_in, n_out)))
    store.add(f"{name}.b", np.zeros(n_out))


def linear(store: ParameterStore, name: str, x) -> Tensor:
    return affine(x, store[f"{name}.w"], store[f"{name}.b"])


def init_mlp(store: ParameterStore, name: str, sizes: list[int], rng):
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        init_affine(store, f"{name}.{i}", a, b, rng)


def mlp(store: ParameterStore, name: str, x, n_layers: int) -> Tensor:
    """Affine layers with relu between them (none after the last)."""
    for i in range(n_layers):
        x = linear(store, f"{name}.{i}", x)
        if i < n_layers - 1:
            x = relu(x)
    return x


def init_attention_block(store: ParameterStore, name: str, dim: int, ffn: int, rng):
    for ln in ("ln1", "ln2"):
        store.add(f"{name}.{ln}.g", np.ones(dim))
        store.add(f"{name}.{ln}.b", np.zeros(dim))
    for proj in ("q", "k", "v", "o"):
        init_affine(store, f"{name}.{proj}", dim, dim, rng)
    init_affine(store, f"{name}.ff1", dim, ffn, rng)
    init_affine(store, f"{name}.ff2", ffn, dim, rng)


def self_attention(x, store: ParameterStore, name: str, heads: int, pad_mask=None) -> Tensor:
    """Pre-norm transformer layer over a set: ``y = x + MHA(LN(x)); z = y + FFN(LN(y))``.

    ``x`` is (B, N, D). ``pad_mask`` is a boolean (B, N) or (N,) array, True on padded
    slots; those slots get zero attention weight as keys, and their outputs are zeroed
    so no gradient flows through them. No positional encoding: the layer is
    permutation-equivariant over N.
    """
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"self_attention expects (B, N, D), got {x.shape}")
    B, N, D = x.shape
    if heads < 1 or D % heads:
        raise ConfigError(f"embedding dim {D} is not divisible by heads={heads}")
    dh = D // heads

    key_mask = keep = None
    if pad_mask is not None:
        pad_mask = np.broadcast_to(np.asarray(pad_mask, dtype=bool), (B, N))
        key_mask = pad_mask[:, None, None, :]
        keep = (~pad_mask)[:, :, None].astype(np.float64)

    h = layer_norm(x, store[f"{name}.ln1.g"], store[f"{name}.ln1.b"])

    def split(t):
        return t.reshape(B, N, heads, dh).transpose(0, 2, 1, 3)

    q = split(linear(store, f"{name}.q", h))
    k = split(linear(store, f"{name}.k", h))
    v = split(linear(store, f"{name}.v", h))
    logits = matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
    att = softmax(logits, axis=-1, mask=key_mask)
    ctx = matmul(att, v).transpose(0, 2, 1, 3).reshape(B, N, D)
    y = x + linear(store, f"{name}.o", ctx)
    h2 = layer_norm(y, store[f"{name}.ln2.g"], store[f"{name}.ln2.b"])
    z = y + linear(store, f"{name}.ff2", relu(linear(store, f"{name}.ff1", h2)))
    if keep is not None:
        z = z * keep
    return z
