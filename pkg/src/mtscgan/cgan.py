"""Conditional transformer generator/discriminator and the three GAN losses."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .nn import EncoderLayer, LayerNorm, Linear, Module, PatchEmbed, default_patch_len, param


@dataclass(frozen=True)
class CategoricalCondition:
    """Batch of one-hot class vectors, shape [batch, n_classes]."""

    one_hot: np.ndarray

    def __post_init__(self):
        oh = np.atleast_2d(np.asarray(self.one_hot, dtype=np.float64))
        if not (np.all((oh == 0) | (oh == 1)) and np.all(oh.sum(axis=1) == 1)):
            raise ValueError("categorical condition rows must be one-hot")
        object.__setattr__(self, "one_hot", oh)

    @property
    def batch(self) -> int:
        return self.one_hot.shape[0]

    @property
    def labels(self) -> np.ndarray:
        return self.one_hot.argmax(axis=1)

    def flat(self) -> np.ndarray:
        return self.one_hot

    def take(self, idx) -> CategoricalCondition:
        return CategoricalCondition(self.one_hot[idx])

    @classmethod
    def from_labels(cls, labels, n_classes: int) -> CategoricalCondition:
        labels = np.asarray(labels, dtype=int).reshape(-1)
        if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
            raise ValueError(f"class ids must lie in [0, {n_classes}), got {labels.tolist()}")
        return cls(np.eye(n_classes)[labels])


@dataclass(frozen=True)
class SeriesCondition:
    """Batch of conditioning series, shape [batch, cond_channels, timesteps]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 2:
            v = v[None]
        if v.ndim != 3 or v.shape[1] == 0:
            raise ValueError(f"series condition needs shape [batch, channels, timesteps], got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("series condition contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def batch(self) -> int:
        return self.values.shape[0]

    def flat(self) -> np.ndarray:
        return self.values.reshape(self.batch, -1)

    def take(self, idx) -> SeriesCondition:
        return SeriesCondition(self.values[idx])


Condition = CategoricalCondition | SeriesCondition


@dataclass(frozen=True)
class CondSpec:
    kind: str  # "categorical" or "series"
    n_classes: int = 0
    cond_channels: int = 0

    def __post_init__(self):
        if self.kind not in ("categorical", "series"):
            raise ValueError(f"unknown condition kind {self.kind!r}")

    def input_dim(self, seq_len: int) -> int:
        return self.n_classes if self.kind == "categorical" else self.cond_channels * seq_len

    def check(self, cond: Condition, seq_len: int):
        if self.kind == "categorical":
            if not isinstance(cond, CategoricalCondition) or cond.one_hot.shape[1] != self.n_classes:
                raise ValueError(f"expected a one-hot condition over {self.n_classes} classes")
        else:
            if not isinstance(cond, SeriesCondition) or cond.values.shape[1:] != (self.cond_channels, seq_len):
                got = getattr(cond, "values", None)
                raise ValueError(f"expected a series condition of shape [*, {self.cond_channels}, {seq_len}],"
                                 f" got {None if got is None else got.shape}")


@dataclass(frozen=True)
class GenConfig:
    cond: CondSpec
    seq_len: int = 150
    out_channels: int = 3
    latent_dim: int = 64
    alpha: float = 0.9
    embed_channels: int = 32
    n_layers: int = 3
    n_heads: int = 4

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.embed_channels % self.n_heads:
            raise ValueError("embed_channels must be divisible by n_heads")


@dataclass(frozen=True)
class DiscConfig:
    cond: CondSpec
    seq_len: int = 150
    in_channels: int = 3
    patch_len: int = 0  # 0 -> default_patch_len(seq_len)
    cond_dim: int = 16
    mix_channels: int = 16
    embed_dim: int = 64
    n_layers: int = 3
    n_heads: int = 4

    def __post_init__(self):
        if self.patch_len == 0:
            object.__setattr__(self, "patch_len", default_patch_len(self.seq_len))
        if self.seq_len % self.patch_len:
            raise ValueError(f"seq_len {self.seq_len} not divisible by patch length {self.patch_len}")


@dataclass(frozen=True)
class LossConfig:
    kind: str = "lsgan"  # standard | lsgan | wgangp
    a: float = 0.0
    b: float = 1.0
    c: float = 1.0
    gp_weight: float = 10.0
    critic_steps: int = 0  # 0 -> 5 for wgangp, 1 otherwise

    def __post_init__(self):
        if self.kind not in ("standard", "lsgan", "wgangp"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.gp_weight < 0 or self.a == self.b:
            raise ValueError("need gp_weight >= 0 and a != b")
        if self.critic_steps == 0:
            object.__setattr__(self, "critic_steps", 5 if self.kind == "wgangp" else 1)


def config_to_dict(cfg) -> dict:
    return asdict(cfg)


def config_from_dict(cls, d: dict):
    d = dict(d)
    if "cond" in d and isinstance(d["cond"], dict):
        d["cond"] = CondSpec(**d["cond"])
    return cls(**d)


# ------------------------------------------------------------------ noise / mixing

@dataclass(frozen=True)
class NoiseBatch:
    values: np.ndarray
    seed: int | None = None


def sample_noise(batch: int, latent_dim: int, rng: np.random.Generator, seed: int | None = None) -> NoiseBatch:
    if batch <= 0 or latent_dim <= 0:
        raise ValueError("batch and latent_dim must be positive")
    return NoiseBatch(rng.standard_normal((batch, latent_dim)), seed)


def mix_alpha(z, ctx, alpha: float) -> Tensor:
    """Concatenate alpha*z with (1-alpha)*ctx along the feature axis."""
    z = ad.as_tensor(z.values if isinstance(z, NoiseBatch) else z)
    ctx = ad.as_tensor(ctx)
    if z.shape != ctx.shape:
        raise ShapeError(f"mix_alpha: noise {z.shape} vs context {ctx.shape}")
    return ad.concat([ad.scale(z, alpha), ad.scale(ctx, 1.0 - alpha)], axis=-1)


def _cond_input(cond: Condition) -> Tensor:
    return Tensor(cond.flat())


def _unit_scale_encoder(spec: CondSpec, seq_len: int, d_out: int, rng: np.random.Generator) -> Linear:
    """Condition encoder whose outputs start with unit per-coordinate variance,
    the same scale as standard-normal noise (one-hot inputs have norm 1,
    z-scored series inputs have squared norm ~ input dim)."""
    d_in = spec.input_dim(seq_len)
    enc = Linear(d_in, d_out, rng)
    std = 1.0 if spec.kind == "categorical" else 1.0 / np.sqrt(d_in)
    enc.weight.data = rng.normal(0.0, std, (d_in, d_out))
    return enc


# ------------------------------------------------------------------ networks

class Generator(Module):
    def __init__(self, cfg: GenConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.cond_encoder = _unit_scale_encoder(cfg.cond, cfg.seq_len, cfg.latent_dim, rng)
        self.inp = Linear(2 * cfg.latent_dim, cfg.seq_len * cfg.embed_channels, rng)
        self.pos = param(rng.normal(0.0, 0.02, (cfg.seq_len, cfg.embed_channels)))
        self.layers = [EncoderLayer(cfg.embed_channels, cfg.n_heads, rng) for _ in range(cfg.n_layers)]
        self.head = Linear(cfg.embed_channels, cfg.out_channels, rng)  # the (1,1)-convolution

    def encode_condition(self, cond: Condition) -> Tensor:
        self.cfg.cond.check(cond, self.cfg.seq_len)
        return self.cond_encoder(_cond_input(cond))

    def forward(self, z, cond: Condition, alpha: float | None = None) -> Tensor:
        cfg = self.cfg
        z = ad.as_tensor(z.values if isinstance(z, NoiseBatch) else z)
        if z.ndim != 2 or z.shape[1] != cfg.latent_dim:
            raise ShapeError(f"generator: noise must be [batch, {cfg.latent_dim}], got {z.shape}")
        if cond.batch != z.shape[0]:
            raise ShapeError(f"generator: {z.shape[0]} noise rows vs {cond.batch} conditions")
        mixed = mix_alpha(z, self.encode_condition(cond), cfg.alpha if alpha is None else alpha)
        h = self.inp(mixed).reshape(z.shape[0], cfg.seq_len, cfg.embed_channels) + self.pos
        for layer in self.layers:
            h = layer(h)
        return self.head(h).transpose(0, 2, 1)


class Discriminator(Module):
    def __init__(self, cfg: DiscConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.cond_encoder = Linear(cfg.cond.input_dim(cfg.seq_len), cfg.cond_dim, rng)
        self.mix = Linear(cfg.in_channels + cfg.cond_dim, cfg.mix_channels, rng)
        self.patch = PatchEmbed(cfg.mix_channels, cfg.seq_len, cfg.patch_len, cfg.embed_dim, rng)
        self.layers = [EncoderLayer(cfg.embed_dim, cfg.n_heads, rng) for _ in range(cfg.n_layers)]
        self.norm = LayerNorm(cfg.embed_dim)
        self.head = Linear(cfg.embed_dim, 1, rng)

    def forward(self, x, cond: Condition) -> Tensor:
        cfg = self.cfg
        x = ad.as_tensor(x)
        if x.ndim != 3 or x.shape[1:] != (cfg.in_channels, cfg.seq_len):
            raise ShapeError(f"discriminator: expected [batch, {cfg.in_channels}, {cfg.seq_len}], got {x.shape}")
        cfg.cond.check(cond, cfg.seq_len)
        b = x.shape[0]
        c = self.cond_encoder(_cond_input(cond)).reshape(b, 1, cfg.cond_dim)
        c = ad.broadcast_to(c, (b, cfg.seq_len, cfg.cond_dim))
        h = self.mix(ad.concat([x.transpose(0, 2, 1), c], axis=-1))
        h = self.patch(h.transpose(0, 2, 1), with_cls=True)
        for layer in self.layers:
            h = layer(h)
        return self.head(self.norm(h[:, 0, :]))


def encode_condition(cond: Condition, net: Generator) -> Tensor:
    return net.encode_condition(cond)


def generate(z, cond: Condition, net: Generator) -> Tensor:
    return net(z, cond)


def discriminate(x, cond: Condition, net: Discriminator) -> Tensor:
    return net(x, cond)


# ------------------------------------------------------------------ losses

def loss_standard(real: Tensor, fake: Tensor) -> tuple[Tensor, Tensor]:
    """Cross-entropy CGAN loss on raw logits; non-saturating generator term."""
    # -log sigmoid(x) = softplus(-x), -log(1 - sigmoid(x)) = softplus(x)
    loss_d = ad.mean(ad.softplus(-real)) + ad.mean(ad.softplus(fake))
    loss_g = ad.mean(ad.softplus(-fake))
    return loss_d, loss_g


def loss_lsgan(real: Tensor, fake: Tensor, cfg: LossConfig = LossConfig()) -> tuple[Tensor, Tensor]:
    loss_d = 0.5 * ad.mean(ad.square(real - cfg.b)) + 0.5 * ad.mean(ad.square(fake - cfg.a))
    loss_g = 0.5 * ad.mean(ad.square(fake - cfg.c))
    return loss_d, loss_g


def gradient_penalty(critic: Callable[[Tensor], Tensor], real, fake, rng: np.random.Generator) -> Tensor:
    """mean((||grad_xhat critic(xhat)||_2 - 1)^2) at random real/fake interpolates."""
    real = np.asarray(real.data if isinstance(real, Tensor) else real)
    fake = np.asarray(fake.data if isinstance(fake, Tensor) else fake)
    if real.shape != fake.shape:
        raise ShapeError(f"gradient_penalty: real {real.shape} vs fake {fake.shape}")
    eps = rng.uniform(size=(real.shape[0],) + (1,) * (real.ndim - 1))
    # the penalty needs an input gradient even when the caller runs under no_grad
    outer = ad.is_grad_enabled()
    with ad.set_grad_enabled(True):
        xhat = Tensor(eps * real + (1.0 - eps) * fake, requires_grad=True)
        out = critic(xhat)
        if not out.requires_grad:
            # critic ignores its input entirely: zero gradient everywhere
            return Tensor(np.ones(()))
        (g,) = ad.grad(ad.sum_(out), [xhat], create_graph=outer)
    norms = ad.norm(g.reshape(real.shape[0], -1), axis=1)
    return ad.mean(ad.square(norms - 1.0))


def loss_wgan_gp(real, fake, cond: Condition, critic: Callable, cfg: LossConfig,
                 rng: np.random.Generator, fake_for_g: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """WGAN critic loss with gradient penalty, and the generator loss -mean D(fake).

    ``critic`` is called as critic(x, cond). ``fake`` enters the critic loss
    detached; pass ``fake_for_g`` to build the generator loss from a
    graph-connected fake batch.
    """
    d_real = critic(ad.as_tensor(real), cond)
    d_fake = critic(ad.as_tensor(fake).detach(), cond)
    loss_d = ad.mean(d_fake) - ad.mean(d_real)
    if cfg.gp_weight > 0:
        gp = gradient_penalty(lambda x: critic(x, cond), real, fake, rng)
        loss_d = loss_d + ad.scale(gp, cfg.gp_weight)
    g_in = ad.as_tensor(fake) if fake_for_g is None else fake_for_g
    loss_g = -ad.mean(critic(g_in, cond))
    return loss_d, loss_g


def d_loss(kind_cfg: LossConfig, real_logits: Tensor, fake_logits: Tensor) -> Tensor:
    if kind_cfg.kind == "standard":
        return loss_standard(real_logits, fake_logits)[0]
    if kind_cfg.kind == "lsgan":
        return loss_lsgan(real_logits, fake_logits, kind_cfg)[0]
    return ad.mean(fake_logits) - ad.mean(real_logits)


def g_loss(kind_cfg: LossConfig, fake_logits: Tensor) -> Tensor:
    if kind_cfg.kind == "standard":
        return ad.mean(ad.softplus(-fake_logits))
    if kind_cfg.kind == "lsgan":
        return 0.5 * ad.mean(ad.square(fake_logits - kind_cfg.c))
    return -ad.mean(fake_logits)
