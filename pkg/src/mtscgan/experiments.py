"""Experiment protocols built on a trained checkpoint: generation, evaluation
report, alpha sweep, augmentation study and the noise ramp.

All functions take datasets in normalised units (training-split z-score);
the CLI does the conversion from and to data units.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.distance import pdist
from sklearn.metrics import precision_recall_fscore_support

from .cgan import CategoricalCondition, SeriesCondition
from .data import Dataset
from .evaluation import (extract_features, fid_ramp, frechet_distance, gaussian_stats, histogram_pair,
                         mean_dtw, pca_fit, pca_project, stat_features, train_fcn)
from .evaluation.fcn import FcnClassifier
from .evaluation.stats import STATS
from .training import Checkpoint, TrainConfig, build_extractor, generate_batches, task_arrays, train

log = logging.getLogger(__name__)

DEFAULT_ALPHAS = (0.1, 0.25, 0.75, 0.9)
DEFAULT_RAMP = (0.1, 0.2, 0.4, 0.8)


def config_hash(cfg: TrainConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def metric_record(metric: str, value, cfg: TrainConfig, seed: int, **extra) -> dict:
    return {"metric": metric, "value": value, "config_hash": config_hash(cfg), "seed": seed, **extra}


# ---------------------------------------------------------------- generation

def _condition_for(ckpt: Checkpoint, ds: Dataset):
    return task_arrays(ds, ckpt.config)[1]


def generate_like(ckpt: Checkpoint, ds: Dataset, seed: int, generator=None) -> np.ndarray:
    """One generated series per sample of ``ds``, conditioned like it (class or condition channels)."""
    gen = generator or ckpt.build_generator()
    return generate_batches(gen, _condition_for(ckpt, ds), np.random.default_rng(seed))


def generate_cmd(ckpt: Checkpoint, n: int, seed: int, class_name: str | None = None,
                 cond_ds: Dataset | None = None) -> Dataset:
    """``n`` generated samples in normalised units, tagged as generated.

    Categorical checkpoints need ``class_name``; series checkpoints take the
    condition channels of the first ``n`` samples of ``cond_ds``. Series output
    holds the target channels only.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    cfg = ckpt.config
    if cfg.task == "categorical":
        if class_name not in ckpt.class_names:
            raise ValueError(f"class {class_name!r} not among checkpoint classes {list(ckpt.class_names)}")
        cid = ckpt.class_names.index(class_name)
        labels = np.full(n, cid)
        cond = CategoricalCondition.from_labels(labels, len(ckpt.class_names))
    else:
        if cond_ds is None:
            raise ValueError("series-conditioned generation needs a condition dataset")
        if len(cond_ds) < n:
            raise ValueError(f"condition dataset has {len(cond_ds)} samples, {n} requested")
        sub = cond_ds.subset(np.arange(n))
        if sub.values.shape[2] != ckpt.gen_config.seq_len:
            raise ValueError(f"condition series have {sub.values.shape[2]} timesteps, "
                             f"checkpoint expects {ckpt.gen_config.seq_len}")
        labels = sub.labels
        cond = task_arrays(sub, cfg)[1]
    values = generate_batches(ckpt.build_generator(), cond, np.random.default_rng(seed))
    out = Dataset(values, labels, ckpt.class_names, source=np.full(n, "generated", dtype=object))
    if ckpt.norm_mean is not None:
        channels = (list(range(len(ckpt.norm_mean))) if cfg.task == "categorical" else list(cfg.target_channels))
        out = replace(out, norm_mean=ckpt.norm_mean[channels], norm_std=ckpt.norm_std[channels], normalized=True)
    return out


# ---------------------------------------------------------------- evaluation report

def _fid(real_f: np.ndarray, gen_f: np.ndarray) -> float | None:
    if len(real_f) < 2 or len(gen_f) < 2:
        return None
    return frechet_distance(gaussian_stats(real_f), gaussian_stats(gen_f))


def _write_csv(path: Path, header: Sequence[str], rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def evaluate_cmd(ckpt: Checkpoint, test: Dataset, extractor: FcnClassifier, seed: int,
                 out_dir=None, plots: bool = True) -> dict:
    """Overall and per-class MTS-FID, PCA projection, stat-feature histograms and, for the
    series task, mean DTW against the true targets (plus a shuffled-condition baseline)."""
    cfg = ckpt.config
    if test.class_names != ckpt.class_names:
        raise ValueError(f"test classes {list(test.class_names)} differ from checkpoint {list(ckpt.class_names)}")
    real, cond = task_arrays(test, cfg)
    gen_model = ckpt.build_generator()
    generated = generate_batches(gen_model, cond, np.random.default_rng(seed))
    fr, fg = extract_features(real, extractor), extract_features(generated, extractor)

    records = [metric_record("mts_fid", _fid(fr, fg), cfg, seed, cls="all")]
    for cid, name in enumerate(test.class_names):
        mask = test.labels == cid
        records.append(metric_record("mts_fid", _fid(fr[mask], fg[mask]), cfg, seed, cls=name))

    if cfg.task == "series":
        records.append(metric_record("mean_dtw", mean_dtw(real, generated), cfg, seed))
        shift = int(np.random.default_rng(seed).integers(1, len(test))) if len(test) > 1 else 0
        shuffled = SeriesCondition(np.roll(cond.values, shift, axis=0))
        baseline = generate_batches(gen_model, shuffled, np.random.default_rng(seed))
        records.append(metric_record("mean_dtw_shuffled", mean_dtw(real, baseline), cfg, seed))

    model = pca_fit(real.reshape(len(real), -1))
    proj_r = pca_project(model, real.reshape(len(real), -1), 2)
    proj_g = pca_project(model, generated.reshape(len(generated), -1), 2)
    records.append(metric_record("pca_explained_variance_ratio",
                                 model.explained_variance_ratio[:2].tolist(), cfg, seed))

    sr, sg = stat_features(real), stat_features(generated)
    hists = {name: histogram_pair(sr[name], sg[name]) for name in STATS}
    report = {"checkpoint_epoch": ckpt.epoch, "task": cfg.task, "n_test": len(test), "metrics": records}

    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        pca_rows = [("real", int(l), *p) for l, p in zip(test.labels, proj_r)]
        pca_rows += [("generated", int(l), *p) for l, p in zip(test.labels, proj_g)]
        _write_csv(out / "pca.csv", ["source", "class_id", "pc1", "pc2"], pca_rows)
        hist_rows = []
        for name, (edges, hr, hg) in hists.items():
            hist_rows += [(name, edges[i], edges[i + 1], int(hr[i]), int(hg[i])) for i in range(len(hr))]
        _write_csv(out / "histograms.csv", ["stat", "bin_lo", "bin_hi", "real", "generated"], hist_rows)
        (out / "report.json").write_text(json.dumps(report, indent=2))
        if plots:
            from . import plotting
            plotting.pca_scatter(proj_r, proj_g, test.labels, test.class_names, out / "pca.png")
            plotting.stat_histograms(hists, out / "histograms.png")
            plotting.fid_history(ckpt.fid_history, ckpt.epoch, out / "fid_history.png")
            plotting.sample_grid(real, generated, test.labels, test.class_names, out / "samples.png")
    return report


def metric_value(report: dict, metric: str, **match):
    for rec in report["metrics"]:
        if rec["metric"] == metric and all(rec.get(k) == v for k, v in match.items()):
            return rec["value"]
    raise KeyError(f"no {metric} record matching {match}")


# ---------------------------------------------------------------- alpha sweep

def dispersion(features: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """(intra, inter): mean pairwise distance within classes, averaged over classes,
    and mean pairwise distance between class centroids."""
    classes = [c for c in np.unique(labels) if np.sum(labels == c) >= 2]
    intra = float(np.mean([pdist(features[labels == c]).mean() for c in classes])) if classes else float("nan")
    centroids = np.array([features[labels == c].mean(axis=0) for c in np.unique(labels)])
    inter = float(pdist(centroids).mean()) if len(centroids) >= 2 else float("nan")
    return intra, inter


@dataclass
class SweepRow:
    alpha: float
    n_seeds: int
    mts_fid: float
    intra_dispersion: float
    inter_separation: float
    per_seed: list[dict] = field(default_factory=list)


def alpha_sweep(train_ds: Dataset, val_ds: Dataset, base: TrainConfig, alphas=DEFAULT_ALPHAS,
                seeds: Sequence[int] = (0,), extractor: FcnClassifier | None = None,
                out_dir=None) -> list[SweepRow]:
    """One model per (alpha, seed); dispersion measured in the extractor's feature space
    on samples generated from the validation conditions."""
    if not seeds:
        raise ValueError("alpha sweep needs at least one seed")
    bad = [a for a in alphas if not 0.0 < a < 1.0]
    if bad:
        raise ValueError(f"alphas must lie in (0, 1): {bad}")
    extractor = extractor or build_extractor(train_ds, val_ds, base)
    real, _ = task_arrays(val_ds, base)
    fr = extract_features(real, extractor)
    rows = []
    for alpha in alphas:
        per_seed = []
        for seed in seeds:
            cfg = replace(base, alpha=float(alpha), seed=int(seed))
            ckpt, _ = train(train_ds, val_ds, cfg, extractor=extractor)
            fg = extract_features(generate_like(ckpt, val_ds, seed), extractor)
            intra, inter = dispersion(fg, val_ds.labels)
            per_seed.append({"seed": int(seed), "mts_fid": _fid(fr, fg), "intra_dispersion": intra,
                             "inter_separation": inter, "best_epoch": ckpt.epoch})
            log.info("alpha %.2f seed %d fid %.4f intra %.4f inter %.4f", alpha, seed,
                     per_seed[-1]["mts_fid"], intra, inter)
        mean = {k: float(np.mean([p[k] for p in per_seed])) for k in ("mts_fid", "intra_dispersion", "inter_separation")}
        rows.append(SweepRow(float(alpha), len(seeds), per_seed=per_seed, **mean))
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "alpha_sweep.json").write_text(json.dumps([asdict(r) for r in rows], indent=2))
        _write_csv(out / "alpha_sweep.csv", ["alpha", "n_seeds", "mts_fid", "intra_dispersion", "inter_separation"],
                   [(r.alpha, r.n_seeds, r.mts_fid, r.intra_dispersion, r.inter_separation) for r in rows])
    return rows


# ---------------------------------------------------------------- augmentation study

@dataclass
class AugmentReport:
    class_names: tuple[str, ...]
    target_class: str
    counts_before: list[int]
    counts_after: list[int]
    seeds: list[int]
    per_seed: list[dict]
    mean_before: dict
    mean_after: dict

    def to_dict(self) -> dict:
        return asdict(self)


def classification_metrics(y_true: np.ndarray, y_pred: np.ndarray, n_classes: int) -> dict:
    p, r, f, _ = precision_recall_fscore_support(y_true, y_pred, labels=list(range(n_classes)), zero_division=0)
    return {"precision": p.tolist(), "recall": r.tolist(), "f1": f.tolist(),
            "accuracy": float(np.mean(y_true == y_pred))}


def _mean_metrics(items: list[dict]) -> dict:
    out = {k: np.mean([m[k] for m in items], axis=0).tolist() for k in ("precision", "recall", "f1")}
    out["accuracy"] = float(np.mean([m["accuracy"] for m in items]))
    return out


def balance_with_generated(train_ds: Dataset, ckpt: Checkpoint, target_class: str, seed: int) -> Dataset:
    counts = train_ds.class_counts()
    cid = train_ds.class_names.index(target_class)
    need = int(counts.max() - counts[cid])
    gen = generate_cmd(ckpt, need, seed, class_name=target_class)
    gen = replace(gen, norm_mean=train_ds.norm_mean, norm_std=train_ds.norm_std, normalized=train_ds.normalized)
    return train_ds.concat(gen)


def augment_cmd(train_ds: Dataset, val_ds: Dataset, test_ds: Dataset, ckpt: Checkpoint, target_class: str,
                seeds: Sequence[int] = (0,), fcn_epochs: int = 30, fcn_kwargs: dict | None = None) -> AugmentReport:
    """Classifier trained on the imbalanced split vs the split topped up with generated
    minority samples; both scored on the untouched test split."""
    if ckpt.config.task != "categorical":
        raise ValueError("augmentation needs a class-conditioned checkpoint")
    if ckpt.class_names != train_ds.class_names:
        raise ValueError(f"checkpoint classes {list(ckpt.class_names)} differ from data {list(train_ds.class_names)}")
    if target_class not in train_ds.class_names:
        raise ValueError(f"unknown target class {target_class!r}")
    counts = train_ds.class_counts()
    cid = train_ds.class_names.index(target_class)
    if counts[cid] >= counts.max():
        raise ValueError(f"class {target_class!r} is not under-represented (counts {counts.tolist()})")
    if np.any(test_ds.source != "real") or np.any(val_ds.source != "real"):
        raise ValueError("validation and test splits must contain real samples only")
    kwargs = fcn_kwargs or {}
    n = train_ds.n_classes
    per_seed, after_counts = [], None
    for seed in seeds:
        balanced = balance_with_generated(train_ds, ckpt, target_class, seed)
        after_counts = balanced.class_counts().tolist()
        results = {}
        for tag, ds in (("before", train_ds), ("after", balanced)):
            model = train_fcn(ds, val_ds, fcn_epochs, np.random.default_rng(seed), **kwargs)
            results[tag] = classification_metrics(test_ds.labels, model.predict(test_ds.values), n)
        # generated samples never reach evaluation
        assert np.all(test_ds.source == "real")
        per_seed.append({"seed": int(seed), **results})
        log.info("augment seed %d recall %s -> %.3f", seed,
                 round(results["before"]["recall"][cid], 3), results["after"]["recall"][cid])
    return AugmentReport(train_ds.class_names, target_class, counts.tolist(), after_counts, [int(s) for s in seeds],
                         per_seed, _mean_metrics([p["before"] for p in per_seed]),
                         _mean_metrics([p["after"] for p in per_seed]))


# ---------------------------------------------------------------- noise ramp

def fid_ramp_cmd(real: np.ndarray, extractor: FcnClassifier, stds=DEFAULT_RAMP, seed: int = 0,
                 out_path=None) -> list[tuple[float, float]]:
    stds = [float(s) for s in stds]
    if len(stds) < 2:
        raise ValueError("the noise ramp needs at least two noise levels")
    rows = list(zip(stds, fid_ramp(real, extractor, stds, np.random.default_rng(seed))))
    if out_path:
        _write_csv(Path(out_path), ["sigma", "mts_fid"], rows)
    return rows
