"""Transformer encoder blocks shared by the generator and the discriminator."""
from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor


class Module:
    """Parameter container. Parameters are requires-grad Tensor attributes,
    buffers are plain Tensor attributes; child modules and lists of modules are
    walked recursively in attribute order."""

    def named_tensors(self, prefix: str = ""):
        """Parameters and buffers (tensors that do not require grad)."""
        for name, val in vars(self).items():
            if isinstance(val, Tensor):
                yield prefix + name, val
            elif isinstance(val, Module):
                yield from val.named_tensors(f"{prefix}{name}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_tensors(f"{prefix}{name}.{i}.")

    def named_parameters(self, prefix: str = ""):
        return ((k, t) for k, t in self.named_tensors(prefix) if t.requires_grad)

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_tensors()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = dict(self.named_tensors())
        missing = set(own) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for k, p in own.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ShapeError(f"parameter {k}: expected {p.shape}, got {arr.shape}")
            p.data = arr.copy()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def param(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        bound = 1.0 / math.sqrt(d_in)
        self.weight = param(rng.uniform(-bound, bound, (d_in, d_out)))
        self.bias = param(np.zeros(d_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[0]:
            raise ShapeError(f"linear: input {x.shape} does not match weight {self.weight.shape}")
        out = ad.matmul(x, self.weight)
        return out if self.bias is None else out + self.bias


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = param(np.ones(dim))
        self.beta = param(np.zeros(dim))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ad.layernorm(x, self.eps) * self.gamma + self.beta


class MultiHeadAttention(Module):
    def __init__(self, embed_dim: int, n_heads: int, rng: np.random.Generator):
        if embed_dim % n_heads:
            raise ValueError(f"embed_dim {embed_dim} not divisible by n_heads {n_heads}")
        self.embed_dim = embed_dim
        self.n_heads = n_heads
        self.q = Linear(embed_dim, embed_dim, rng)
        self.k = Linear(embed_dim, embed_dim, rng)
        self.v = Linear(embed_dim, embed_dim, rng)
        self.out = Linear(embed_dim, embed_dim, rng)

    def _heads(self, x: Tensor, b: int, n: int) -> Tensor:
        return ad.reshape(x, (b, n, self.n_heads, -1)).transpose(0, 2, 1, 3)

    def forward(self, x: Tensor, return_weights: bool = False):
        if x.ndim != 3 or x.shape[-1] != self.embed_dim:
            raise ShapeError(f"attention: expected [batch, tokens, {self.embed_dim}], got {x.shape}")
        b, n, e = x.shape
        q, k, v = (self._heads(lin(x), b, n) for lin in (self.q, self.k, self.v))
        scores = ad.scale(q @ k.T, 1.0 / math.sqrt(e // self.n_heads))
        weights = ad.softmax(scores, axis=-1)
        ctx = (weights @ v).transpose(0, 2, 1, 3).reshape(b, n, e)
        out = self.out(ctx)
        return (out, weights) if return_weights else out


class EncoderLayer(Module):
    """Pre-norm block: x + MHA(LN(x)), then + MLP(LN(.)) with a GELU hidden layer of 2x width."""

    def __init__(self, embed_dim: int, n_heads: int, rng: np.random.Generator, mlp_ratio: int = 2):
        self.ln1 = LayerNorm(embed_dim)
        self.attn = MultiHeadAttention(embed_dim, n_heads, rng)
        self.ln2 = LayerNorm(embed_dim)
        self.fc1 = Linear(embed_dim, mlp_ratio * embed_dim, rng)
        self.fc2 = Linear(mlp_ratio * embed_dim, embed_dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.fc2(ad.gelu(self.fc1(self.ln2(x))))


class PatchEmbed(Module):
    """Split [batch, channels, timesteps] into temporal patches, flatten each
    channel-major, project to ``embed_dim`` and add learned positions.
    Position row 0 belongs to the classification token."""

    def __init__(self, channels: int, seq_len: int, patch_len: int, embed_dim: int, rng: np.random.Generator):
        if seq_len % patch_len:
            raise ValueError(f"seq_len {seq_len} not divisible by patch length {patch_len}")
        self.channels = channels
        self.patch_len = patch_len
        self.n_patches = seq_len // patch_len
        self.proj = Linear(channels * patch_len, embed_dim, rng)
        self.pos = param(rng.normal(0.0, 0.02, (self.n_patches + 1, embed_dim)))
        self.cls = param(rng.normal(0.0, 0.02, embed_dim))

    def forward(self, series: Tensor, with_cls: bool = True) -> Tensor:
        b, c, t = series.shape
        if c != self.channels:
            raise ShapeError(f"patch_embed: expected {self.channels} channels, got {c}")
        if t % self.patch_len or t // self.patch_len != self.n_patches:
            raise ShapeError(f"patch_embed: timesteps {t} incompatible with patch length {self.patch_len}"
                             f" and {self.n_patches} patches")
        n, p = self.n_patches, self.patch_len
        patches = series.reshape(b, c, n, p).transpose(0, 2, 1, 3).reshape(b, n, c * p)
        tokens = self.proj(patches)
        if not with_cls:
            return tokens + self.pos[1:]
        cls = ad.broadcast_to(ad.reshape(self.cls, (1, 1, -1)), (b, 1, self.cls.shape[0]))
        return ad.concat([cls, tokens], axis=1) + self.pos


def default_patch_len(seq_len: int) -> int:
    """seq_len/10 rounded down to a divisor, keeping at least two patches."""
    target = max(1, seq_len // 10)
    for p in range(target, 0, -1):
        if seq_len % p == 0 and seq_len // p >= 2:
            return p
    return 1
