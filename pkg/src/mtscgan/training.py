"""Alternating GAN training with MTS-FID monitoring and best-checkpoint keeping."""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .cgan import (CategoricalCondition, CondSpec, DiscConfig, Discriminator, GenConfig, Generator,
                   LossConfig, SeriesCondition, config_from_dict, d_loss, g_loss, gradient_penalty,
                   sample_noise)
from .checkpoint import CheckpointError, load_container, save_container
from .data import Dataset
from .evaluation.fcn import FcnClassifier, train_fcn
from .evaluation.fid import frechet_distance, gaussian_stats
from .evaluation.fcn import extract_features
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    task: str = "categorical"  # categorical | series
    loss: str = "lsgan"  # standard | lsgan | wgangp
    alpha: float = 0.9
    latent_dim: int = 64
    gen_channels: int = 32
    gen_layers: int = 3
    gen_heads: int = 4
    disc_embed: int = 64
    disc_layers: int = 3
    disc_heads: int = 4
    disc_patch_len: int = 0
    disc_cond_dim: int = 16
    disc_mix_channels: int = 16
    lsgan_a: float = 0.0
    lsgan_b: float = 1.0
    lsgan_c: float = 1.0
    gp_weight: float = 10.0
    critic_steps: int = 0
    mismatch_weight: float = 0.0  # weight of the real-series/wrong-condition term in the D loss
    epochs: int = 200
    batch_size: int = 32
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0
    fid_every: int = 1
    patience: int = 20
    cond_channels: tuple[int, ...] = (0, 1)
    target_channels: tuple[int, ...] = (2,)
    fcn_epochs: int = 10

    def __post_init__(self):
        self.cond_channels = tuple(self.cond_channels)
        self.target_channels = tuple(self.target_channels)
        if self.task not in ("categorical", "series"):
            raise ValueError(f"unknown task {self.task!r}")
        if min(self.epochs, self.batch_size, self.fid_every, self.patience) < 1:
            raise ValueError("epochs, batch_size, fid_every and patience must be >= 1")
        if self.mismatch_weight < 0:
            raise ValueError(f"mismatch_weight must be >= 0, got {self.mismatch_weight}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cond_channels"] = list(self.cond_channels)
        d["target_channels"] = list(self.target_channels)
        return d

    def cond_spec(self, ds: Dataset) -> CondSpec:
        if self.task == "categorical":
            return CondSpec("categorical", n_classes=ds.n_classes)
        return CondSpec("series", cond_channels=len(self.cond_channels))

    def out_channels(self, ds: Dataset) -> int:
        return ds.channels if self.task == "categorical" else len(self.target_channels)

    def gen_config(self, ds: Dataset) -> GenConfig:
        return GenConfig(self.cond_spec(ds), ds.timesteps, self.out_channels(ds), self.latent_dim, self.alpha,
                         self.gen_channels, self.gen_layers, self.gen_heads)

    def disc_config(self, ds: Dataset) -> DiscConfig:
        return DiscConfig(self.cond_spec(ds), ds.timesteps, self.out_channels(ds), self.disc_patch_len,
                          self.disc_cond_dim, self.disc_mix_channels, self.disc_embed, self.disc_layers,
                          self.disc_heads)

    def loss_config(self) -> LossConfig:
        return LossConfig(self.loss, self.lsgan_a, self.lsgan_b, self.lsgan_c, self.gp_weight, self.critic_steps)


def task_arrays(ds: Dataset, cfg: TrainConfig):
    """(target series, condition batch) for the configured task."""
    if cfg.task == "categorical":
        return ds.values, CategoricalCondition.from_labels(ds.labels, ds.n_classes)
    cond = list(cfg.cond_channels)
    target = list(cfg.target_channels)
    if set(cond) & set(target) or max(cond + target) >= ds.channels:
        raise ValueError(f"invalid channel split {cond} / {target} for {ds.channels} channels")
    return ds.values[:, target], SeriesCondition(ds.values[:, cond])


@dataclass
class EpochLog:
    epoch: int
    loss_d: float
    loss_g: float
    fid: float | None
    seconds: float


@dataclass
class Checkpoint:
    config: TrainConfig
    gen_config: GenConfig
    disc_config: DiscConfig
    generator: dict[str, np.ndarray]
    discriminator: dict[str, np.ndarray]
    epoch: int
    fid_history: list[tuple[int, float]]
    class_names: tuple[str, ...]
    rng_digest: str = ""
    probe: dict[str, np.ndarray] = field(default_factory=dict)
    norm_mean: np.ndarray | None = None  # per-channel stats of the training split, all channels
    norm_std: np.ndarray | None = None

    def build_generator(self) -> Generator:
        g = Generator(self.gen_config, np.random.default_rng(0))
        g.load_state_dict(self.generator)
        return g

    def build_discriminator(self) -> Discriminator:
        d = Discriminator(self.disc_config, np.random.default_rng(0))
        d.load_state_dict(self.discriminator)
        return d

    @property
    def best_fid(self) -> float:
        return min(f for _, f in self.fid_history) if self.fid_history else float("nan")

    def save(self, path):
        meta = {
            "kind": "mtscgan-checkpoint",
            "config": self.config.to_dict(),
            "gen_config": asdict(self.gen_config),
            "disc_config": asdict(self.disc_config),
            "epoch": self.epoch,
            "fid_history": [[e, f] for e, f in self.fid_history],
            "class_names": list(self.class_names),
            "rng_digest": self.rng_digest,
        }
        arrays = {f"G/{k}": v for k, v in self.generator.items()}
        arrays.update({f"D/{k}": v for k, v in self.discriminator.items()})
        arrays.update({f"probe/{k}": v for k, v in self.probe.items()})
        if self.norm_mean is not None:
            arrays["norm/mean"], arrays["norm/std"] = self.norm_mean, self.norm_std
        save_container(path, meta, arrays)

    @classmethod
    def load(cls, path) -> Checkpoint:
        meta, arrays = load_container(path)
        if meta.get("kind") != "mtscgan-checkpoint":
            raise CheckpointError(f"{path}: not a generator checkpoint")

        def part(prefix):
            return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}

        return cls(
            config=TrainConfig.from_dict(meta["config"]),
            gen_config=config_from_dict(GenConfig, meta["gen_config"]),
            disc_config=config_from_dict(DiscConfig, meta["disc_config"]),
            generator=part("G/"), discriminator=part("D/"),
            epoch=meta["epoch"],
            fid_history=[(int(e), float(f)) for e, f in meta["fid_history"]],
            class_names=tuple(meta["class_names"]),
            rng_digest=meta["rng_digest"],
            probe=part("probe/"),
            norm_mean=arrays.get("norm/mean"), norm_std=arrays.get("norm/std"),
        )


def save_extractor(model: FcnClassifier, path, channels=None, norm=None):
    """Persist an FCN extractor with the channel ids it reads and, optionally, the
    (mean, std) normalisation of its training data."""
    meta = {"kind": "fcn-extractor", "in_channels": model.in_channels, "n_classes": model.n_classes,
            "filters": [b.weight.shape[0] for b in model.blocks],
            "kernels": [b.weight.shape[2] for b in model.blocks],
            "val_accuracy": getattr(model, "val_accuracy", None),
            "channels": None if channels is None else [int(c) for c in channels]}
    arrays = dict(model.state_dict())
    if norm is not None:
        arrays["norm/mean"], arrays["norm/std"] = norm
    save_container(path, meta, arrays)


def load_extractor(path) -> FcnClassifier:
    meta, arrays = load_container(path)
    if meta.get("kind") != "fcn-extractor":
        raise CheckpointError(f"{path}: not an extractor checkpoint")
    model = FcnClassifier(meta["in_channels"], meta["n_classes"], np.random.default_rng(0),
                          meta["filters"], meta["kernels"])
    norm = (arrays.pop("norm/mean"), arrays.pop("norm/std")) if "norm/mean" in arrays else None
    model.load_state_dict(arrays)
    model.val_accuracy = meta.get("val_accuracy")
    model.channels = meta.get("channels")
    model.norm = norm
    return model


def _rng_digest(*rngs: np.random.Generator) -> str:
    blob = json.dumps([r.bit_generator.state for r in rngs], sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def generate_batches(gen: Generator, cond, rng: np.random.Generator, batch_size: int = 128) -> np.ndarray:
    """Generate one sample per condition row, in batches, without recording a graph."""
    out = []
    with ad.no_grad():
        for i in range(0, cond.batch, batch_size):
            c = cond.take(slice(i, i + batch_size))
            out.append(gen(sample_noise(c.batch, gen.cfg.latent_dim, rng), c).data)
    return np.concatenate(out)


def mismatched_condition(cond, rng: np.random.Generator):
    """Pair each sample with a condition it does not belong to.

    Categorical: a uniformly drawn different class. Series: the batch rolled by a random nonzero offset.
    Returns None when no wrong pairing exists (one class, or a batch of one).
    """
    if isinstance(cond, CategoricalCondition):
        n = cond.one_hot.shape[1]
        if n < 2:
            return None
        labels = (cond.labels + rng.integers(1, n, size=cond.batch)) % n
        return CategoricalCondition.from_labels(labels, n)
    if cond.values.shape[0] < 2:
        return None
    shift = int(rng.integers(1, cond.values.shape[0]))
    return SeriesCondition(np.roll(cond.values, shift, axis=0))


def _split_seeds(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def build_extractor(train_ds: Dataset, val_ds: Dataset, cfg: TrainConfig) -> FcnClassifier:
    """FCN on the task's target channels (all channels for the categorical task)."""
    channels = list(range(train_ds.channels)) if cfg.task == "categorical" else list(cfg.target_channels)
    rng = _split_seeds(cfg.seed, 5)[4]
    return train_fcn(train_ds.select_channels(channels), val_ds.select_channels(channels), cfg.fcn_epochs, rng)


def train(train_ds: Dataset, val_ds: Dataset, cfg: TrainConfig, out_dir=None,
          extractor: FcnClassifier | None = None, on_epoch=None) -> tuple[Checkpoint, list[EpochLog]]:
    """Train generator and discriminator; return the best-MTS-FID checkpoint and the epoch logs.

    ``on_epoch(entry, gen, disc)`` is called after every epoch, for monitoring.
    """
    if train_ds.values.shape[1:] != val_ds.values.shape[1:] or train_ds.class_names != val_ds.class_names:
        raise ValueError("train and validation splits disagree on layout")
    init_rng, data_rng, noise_rng, gp_rng, _ = _split_seeds(cfg.seed, 5)
    gcfg, dcfg, lcfg = cfg.gen_config(train_ds), cfg.disc_config(train_ds), cfg.loss_config()
    gen = Generator(gcfg, init_rng)
    disc = Discriminator(dcfg, init_rng)
    g_params, d_params = gen.parameters(), disc.parameters()
    opt_g = AdamState.create(g_params, cfg.lr_g, (cfg.beta1, cfg.beta2))
    opt_d = AdamState.create(d_params, cfg.lr_d, (cfg.beta1, cfg.beta2))

    x_train, c_train = task_arrays(train_ds, cfg)
    x_val, c_val = task_arrays(val_ds, cfg)
    if extractor is None:
        extractor = build_extractor(train_ds, val_ds, cfg)
    if extractor.in_channels != x_val.shape[1]:
        raise ValueError(f"extractor expects {extractor.in_channels} channels, task has {x_val.shape[1]}")
    val_stats = gaussian_stats(extract_features(x_val, extractor))
    fid_z_seed = int(np.random.SeedSequence(cfg.seed).generate_state(1)[0])

    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "epochs.jsonl").write_text("")

    logs: list[EpochLog] = []
    history: list[tuple[int, float]] = []
    best = None
    stale = 0
    step = 0
    n = len(x_train)
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        perm = data_rng.permutation(n)
        d_losses, g_losses = [], []
        for b, lo in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[lo:lo + cfg.batch_size]
            real, cond = x_train[idx], c_train.take(idx)
            with ad.no_grad():
                fake = gen(sample_noise(len(idx), gcfg.latent_dim, noise_rng), cond).data
            loss_d = d_loss(lcfg, disc(real, cond), disc(fake, cond))
            if lcfg.kind == "wgangp" and lcfg.gp_weight > 0:
                gp = gradient_penalty(lambda x: disc(x, cond), real, fake, gp_rng)
                loss_d = loss_d + ad.scale(gp, lcfg.gp_weight)
            wrong = mismatched_condition(cond, data_rng) if cfg.mismatch_weight > 0 else None
            if wrong is not None:
                loss_d = loss_d + ad.scale(d_loss(lcfg, disc(real, cond), disc(real, wrong)), cfg.mismatch_weight)
            adam_step(d_params, ad.grad(loss_d, d_params), opt_d)
            d_losses.append(loss_d.item())
            step += 1
            if step % lcfg.critic_steps == 0:
                z = sample_noise(len(idx), gcfg.latent_dim, noise_rng)
                loss_g = g_loss(lcfg, disc(gen(z, cond), cond))
                adam_step(g_params, ad.grad(loss_g, g_params), opt_g)
                g_losses.append(loss_g.item())
            if not (np.isfinite(d_losses[-1]) and (not g_losses or np.isfinite(g_losses[-1]))):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")

        fid = None
        if epoch == 1 or epoch % cfg.fid_every == 0 or epoch == cfg.epochs:
            generated = generate_batches(gen, c_val, np.random.default_rng(fid_z_seed))
            fid = frechet_distance(val_stats, gaussian_stats(extract_features(generated, extractor)))
            history.append((epoch, fid))
            if best is None or fid < best[1]:
                best = (epoch, fid, gen.state_dict(), disc.state_dict())
                stale = 0
            else:
                stale += 1
        entry = EpochLog(epoch, float(np.mean(d_losses)), float(np.mean(g_losses)) if g_losses else float("nan"),
                         fid, time.perf_counter() - t0)
        logs.append(entry)
        if on_epoch is not None:
            on_epoch(entry, gen, disc)
        log.info("epoch %d loss_d %.4f loss_g %.4f fid %s", epoch, entry.loss_d, entry.loss_g, fid)
        if out_dir:
            with open(out_dir / "epochs.jsonl", "a") as fh:
                fh.write(json.dumps(asdict(entry)) + "\n")
        if fid is not None and stale == 0 and out_dir:
            _make_checkpoint(cfg, gcfg, dcfg, best, history, train_ds, noise_rng, data_rng).save(out_dir / "best.ckpt")
        if stale >= cfg.patience:
            log.info("early stop at epoch %d (best epoch %d)", epoch, best[0])
            break

    ckpt = _make_checkpoint(cfg, gcfg, dcfg, best, history, train_ds, noise_rng, data_rng)
    if out_dir:
        ckpt.save(out_dir / "best.ckpt")
    return ckpt, logs


def _make_checkpoint(cfg, gcfg, dcfg, best, history, ds, *rngs) -> Checkpoint:
    epoch, _, g_state, d_state = best
    ckpt = Checkpoint(cfg, gcfg, dcfg, g_state, d_state, epoch, list(history), ds.class_names, _rng_digest(*rngs),
                      norm_mean=ds.norm_mean, norm_std=ds.norm_std)
    ckpt.probe = make_probe(ckpt)
    return ckpt


def make_probe(ckpt: Checkpoint, n: int = 4) -> dict[str, np.ndarray]:
    """Stored (z, condition, output) triple used to verify reload bit-exactness."""
    gcfg = ckpt.gen_config
    rng = np.random.default_rng(12345)
    z = rng.standard_normal((n, gcfg.latent_dim))
    if gcfg.cond.kind == "categorical":
        cond = CategoricalCondition.from_labels(np.arange(n) % gcfg.cond.n_classes, gcfg.cond.n_classes)
        cvals = cond.one_hot
    else:
        cond = SeriesCondition(rng.standard_normal((n, gcfg.cond.cond_channels, gcfg.seq_len)))
        cvals = cond.values
    with ad.no_grad():
        out = ckpt.build_generator()(z, cond).data
    return {"z": z, "cond": cvals, "output": out}


def verify_probe(ckpt: Checkpoint) -> bool:
    p = ckpt.probe
    cond = (CategoricalCondition(p["cond"]) if ckpt.gen_config.cond.kind == "categorical"
            else SeriesCondition(p["cond"]))
    with ad.no_grad():
        out = ckpt.build_generator()(p["z"], cond).data
    return bool(np.array_equal(out, p["output"]))
