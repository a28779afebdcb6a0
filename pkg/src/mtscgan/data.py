"""Dataset container, CSV interchange format, splits, conditions, synthetic signals.

CSV format: no header, one sample per row, ``class_id`` followed by the
channel-major flattened values ``v(c0,t0), v(c0,t1), ..., v(c1,t0), ...``.
A JSON sidecar carries ``channels``, ``timesteps``, ``class_names`` and an
optional ``keep_classes`` filter.

UniMiB SHAR export recipe (not implemented here): load ``adl_data.mat`` and
``adl_labels.mat``, reshape each 453-long row to [3, 151], write
``label - 1`` plus the flattened row per line.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .cgan import CategoricalCondition, SeriesCondition

DEFAULT_CLASSES = ("Walking", "Running", "GoingDownStairs")


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    values: np.ndarray  # [n, channels, timesteps]
    labels: np.ndarray  # [n] int
    class_names: tuple[str, ...]
    source: np.ndarray = None  # provenance tag per sample: "real" / "generated"
    norm_mean: np.ndarray | None = None  # [channels]
    norm_std: np.ndarray | None = None
    normalized: bool = False

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        if values.ndim != 3:
            raise DataError(f"values must be [n, channels, timesteps], got {values.shape}")
        if len(labels) != len(values):
            raise DataError(f"{len(values)} samples but {len(labels)} labels")
        if len(labels) and (labels.min() < 0 or labels.max() >= len(self.class_names)):
            raise DataError(f"class ids outside [0, {len(self.class_names)})")
        source = np.full(len(values), "real", dtype=object) if self.source is None else np.array(self.source, dtype=object)
        for arr in (values, labels, source):
            arr.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "source", source)
        object.__setattr__(self, "class_names", tuple(self.class_names))

    def __len__(self):
        return len(self.values)

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    @property
    def timesteps(self) -> int:
        return self.values.shape[2]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx)
        return replace(self, values=self.values[idx], labels=self.labels[idx], source=self.source[idx])

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def select_channels(self, channels: Sequence[int]) -> Dataset:
        ch = list(channels)
        return replace(self, values=self.values[:, ch],
                       norm_mean=None if self.norm_mean is None else self.norm_mean[ch],
                       norm_std=None if self.norm_std is None else self.norm_std[ch])

    def concat(self, other: Dataset) -> Dataset:
        if other.values.shape[1:] != self.values.shape[1:] or other.class_names != self.class_names:
            raise DataError("cannot concatenate datasets of different layout")
        return replace(self, values=np.concatenate([self.values, other.values]),
                       labels=np.concatenate([self.labels, other.labels]),
                       source=np.concatenate([self.source, other.source]))


# ---------------------------------------------------------------- CSV interchange

def _read_sidecar(path) -> dict:
    meta = json.loads(Path(path).read_text())
    for key in ("channels", "timesteps", "class_names"):
        if key not in meta:
            raise DataError(f"sidecar {path} lacks field {key!r}")
    return meta


def load_csv(path, sidecar_path=None) -> Dataset:
    path = Path(path)
    sidecar_path = Path(sidecar_path) if sidecar_path else path.with_suffix(".json")
    meta = _read_sidecar(sidecar_path)
    channels, timesteps = int(meta["channels"]), int(meta["timesteps"])
    names = list(meta["class_names"])
    arity = 1 + channels * timesteps
    labels, rows = [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) != arity:
                raise DataError(f"{path}:{lineno}: expected {arity} fields, found {len(row)}")
            try:
                cid = int(row[0])
                vals = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: non-numeric cell ({exc})") from None
            if not 0 <= cid < len(names):
                raise DataError(f"{path}:{lineno}: unknown class id {cid}")
            labels.append(cid)
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no samples")
    ds = Dataset(np.array(rows).reshape(-1, channels, timesteps), np.array(labels), tuple(names))
    keep = meta.get("keep_classes")
    return filter_classes(ds, keep) if keep else ds


def save_csv(ds: Dataset, path, sidecar_path=None, label_override: int | None = None):
    """Write ``ds`` in the interchange format. ``repr`` keeps every float round-trip exact."""
    path = Path(path)
    sidecar_path = Path(sidecar_path) if sidecar_path else path.with_suffix(".json")
    path.parent.mkdir(parents=True, exist_ok=True)
    flat = ds.values.reshape(len(ds), -1)
    with open(path, "w", newline="") as fh:
        for label, row in zip(ds.labels, flat):
            cid = int(label) if label_override is None else label_override
            fh.write(",".join([str(cid)] + [repr(float(v)) for v in row]) + "\n")
    sidecar_path.write_text(json.dumps({"channels": ds.channels, "timesteps": ds.timesteps,
                                        "class_names": list(ds.class_names)}, indent=2))


def filter_classes(ds: Dataset, keep: Sequence[str]) -> Dataset:
    unknown = [k for k in keep if k not in ds.class_names]
    if unknown:
        raise DataError(f"keep_classes names unknown classes: {unknown}")
    old_ids = [ds.class_names.index(k) for k in keep]
    remap = {old: new for new, old in enumerate(old_ids)}
    mask = np.isin(ds.labels, old_ids)
    sub = ds.subset(np.flatnonzero(mask))
    return replace(sub, labels=np.array([remap[int(l)] for l in sub.labels], dtype=np.int64), class_names=tuple(keep))


# ---------------------------------------------------------------- normalisation

def fit_normalizer(train: Dataset) -> tuple[np.ndarray, np.ndarray]:
    if len(train) == 0:
        raise DataError("cannot fit normalisation on an empty split")
    mean = train.values.mean(axis=(0, 2))
    std = train.values.std(axis=(0, 2))
    for ch, s in enumerate(std):
        if not s > 0:
            raise DataError(f"channel {ch} has zero variance in the training split")
    return mean, std


def normalize(ds: Dataset, stats: tuple[np.ndarray, np.ndarray]) -> Dataset:
    """Per-channel z-score with training-split statistics."""
    if ds.normalized:
        raise DataError("dataset is already normalised")
    mean, std = (np.asarray(s, dtype=np.float64) for s in stats)
    values = (ds.values - mean[None, :, None]) / std[None, :, None]
    return replace(ds, values=values, norm_mean=mean, norm_std=std, normalized=True)


def denormalize(ds: Dataset) -> Dataset:
    if not ds.normalized:
        raise DataError("dataset is not normalised")
    values = ds.values * ds.norm_std[None, :, None] + ds.norm_mean[None, :, None]
    return replace(ds, values=values, normalized=False)


# ---------------------------------------------------------------- splits

@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if len(self.fractions) != 3 or min(self.fractions) <= 0 or abs(sum(self.fractions) - 1) > 1e-9:
            raise DataError(f"split fractions must be three positive numbers summing to 1, got {self.fractions}")


def _largest_remainder(n: int, fractions) -> np.ndarray:
    ideal = np.asarray(fractions) * n
    counts = np.floor(ideal).astype(int)
    order = np.argsort(-(ideal - counts), kind="stable")
    counts[order[: n - counts.sum()]] += 1
    return counts


def make_split(ds: Dataset, spec: SplitSpec = SplitSpec()) -> tuple[Dataset, Dataset, Dataset]:
    rng = np.random.default_rng(spec.seed)
    n = len(ds)
    totals = _largest_remainder(n, spec.fractions)
    parts: list[list[int]] = [[], [], []]
    if not spec.stratified:
        perm = rng.permutation(n)
        bounds = np.cumsum(totals)
        for s, (lo, hi) in enumerate(zip(np.r_[0, bounds[:-1]], bounds)):
            parts[s] = perm[lo:hi].tolist()
    else:
        classes = [np.flatnonzero(ds.labels == c) for c in range(ds.n_classes)]
        classes = [rng.permutation(idx) for idx in classes if len(idx)]
        for idx in classes:
            if len(idx) < 3:
                raise DataError(f"class with {len(idx)} samples cannot be stratified over 3 splits")
        ideal = np.array([[f * len(idx) for f in spec.fractions] for idx in classes])
        alloc = np.floor(ideal).astype(int)
        need = totals - alloc.sum(axis=0)
        spare = np.array([len(idx) for idx in classes]) - alloc.sum(axis=1)
        # hand out leftovers by largest fractional part, respecting global split sizes
        for flat in np.argsort(-(ideal - alloc).reshape(-1), kind="stable"):
            c, s = divmod(int(flat), 3)
            if need[s] > 0 and spare[c] > 0:
                alloc[c, s] += 1
                need[s] -= 1
                spare[c] -= 1
        for c in range(len(classes)):
            for s in range(3):
                while spare[c] > 0 and need[s] > 0:
                    alloc[c, s] += 1
                    need[s] -= 1
                    spare[c] -= 1
        for c, idx in enumerate(classes):
            bounds = np.cumsum(alloc[c])
            for s, (lo, hi) in enumerate(zip(np.r_[0, bounds[:-1]], bounds)):
                parts[s].extend(idx[lo:hi].tolist())
    return tuple(ds.subset(np.sort(np.array(p, dtype=int))) for p in parts)


# ---------------------------------------------------------------- conditions

def make_condition_categorical(class_id: int, n_classes: int) -> CategoricalCondition:
    if not 0 <= class_id < n_classes:
        raise ValueError(f"class id {class_id} outside [0, {n_classes})")
    return CategoricalCondition.from_labels([class_id], n_classes)


def make_condition_series(sample: np.ndarray, cond_channels: Sequence[int],
                          target_channels: Sequence[int]) -> tuple[SeriesCondition, np.ndarray]:
    """Split one [channels, timesteps] sample into (conditioning series, target series)."""
    sample = np.asarray(sample, dtype=np.float64)
    cond_channels, target_channels = list(cond_channels), list(target_channels)
    if not cond_channels or not target_channels:
        raise ValueError("condition and target channel sets must both be non-empty")
    if set(cond_channels) & set(target_channels):
        raise ValueError(f"condition channels {cond_channels} overlap targets {target_channels}")
    bad = [c for c in cond_channels + target_channels if not 0 <= c < sample.shape[-2]]
    if bad:
        raise ValueError(f"channel ids {bad} out of range for {sample.shape[-2]} channels")
    return SeriesCondition(sample[..., cond_channels, :]), sample[..., target_channels, :]


# ---------------------------------------------------------------- synthetic signals

@dataclass(frozen=True)
class ClassSignal:
    frequency: float  # cycles per window
    amplitude: float = 1.0
    harmonics: tuple[float, ...] = (1.0,)  # weight of harmonic k+1
    noise_std: float = 0.1


@dataclass(frozen=True)
class SyntheticSpec:
    classes: tuple[ClassSignal, ...] = (
        ClassSignal(2.0, 1.0, (1.0, 0.3), 0.1),
        ClassSignal(5.0, 1.5, (1.0, 0.5), 0.1),
        ClassSignal(9.0, 0.8, (1.0,), 0.1),
    )
    class_names: tuple[str, ...] = DEFAULT_CLASSES
    channels: int = 3
    timesteps: int = 150
    samples_per_class: int | tuple[int, ...] = 300
    seed: int = 0
    channel_phase: float = 0.7  # extra phase offset per channel
    random_phase: bool = True
    warp: tuple[float, float] = (0.9, 1.1)
    coupling: tuple[tuple[int, int, float], ...] = ()  # (target, source, gain)
    coupling_noise: float = 0.05

    def __post_init__(self):
        freqs = [c.frequency for c in self.classes]
        if len(set(freqs)) != len(freqs):
            raise DataError("class frequencies must be distinct")
        if any(c.noise_std < 0 for c in self.classes):
            raise DataError("noise std must be non-negative")
        if len(self.class_names) != len(self.classes):
            raise DataError("one class name per class signal required")


def generate_synthetic(spec: SyntheticSpec = SyntheticSpec()) -> Dataset:
    """Sums of sinusoid harmonics per class, with per-sample phase and time warp.

    Coupled channels are ``gain * source`` plus Gaussian noise, overriding the
    generated signal for that channel.
    """
    rng = np.random.default_rng(spec.seed)
    t = np.arange(spec.timesteps) / spec.timesteps
    per_class = spec.samples_per_class
    if isinstance(per_class, int):
        per_class = (per_class,) * len(spec.classes)
    values, labels = [], []
    for cid, (sig, count) in enumerate(zip(spec.classes, per_class)):
        for _ in range(count):
            phase = rng.uniform(0, 2 * np.pi) if spec.random_phase else 0.0
            warp = rng.uniform(*spec.warp)
            x = np.zeros((spec.channels, spec.timesteps))
            for ch in range(spec.channels):
                for k, w in enumerate(sig.harmonics, start=1):
                    x[ch] += sig.amplitude * w * np.sin(2 * np.pi * sig.frequency * k * warp * t
                                                        + k * (phase + ch * spec.channel_phase))
            x += rng.normal(0.0, sig.noise_std, x.shape) if sig.noise_std > 0 else 0.0
            for target, src, gain in spec.coupling:
                x[target] = gain * x[src] + rng.normal(0.0, spec.coupling_noise, spec.timesteps)
            values.append(x)
            labels.append(cid)
    return Dataset(np.array(values), np.array(labels), spec.class_names)


def dominant_frequency(x: np.ndarray) -> np.ndarray:
    """FFT-argmax bin (ignoring DC) of each series, averaged power over channels.

    x: [n, channels, timesteps] -> [n] integer bins.
    """
    spec = np.abs(np.fft.rfft(np.asarray(x), axis=-1)) ** 2
    spec = spec.mean(axis=1)
    return spec[:, 1:].argmax(axis=1) + 1
