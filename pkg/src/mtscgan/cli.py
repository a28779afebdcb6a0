"""Command-line entry point: ``mtscgan <subcommand> ...``.

Every subcommand accepts ``--config`` (a JSON object of TrainConfig fields)
and ``--set key=value`` overrides; explicit flags win over both. Failures
exit nonzero after printing one JSON line ``{"error": ..., "message": ...}``
to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import plotting
from .data import (ClassSignal, Dataset, SplitSpec, SyntheticSpec, denormalize, fit_normalizer, generate_synthetic,
                   load_csv, make_split, normalize, save_csv)
from .evaluation.fcn import accuracy, train_fcn
from .experiments import (DEFAULT_ALPHAS, DEFAULT_RAMP, alpha_sweep, augment_cmd, evaluate_cmd, fid_ramp_cmd,
                          generate_cmd)
from .training import Checkpoint, TrainConfig, build_extractor, load_extractor, save_extractor, train

log = logging.getLogger("mtscgan")

# flags that map onto TrainConfig fields
CONFIG_FLAGS = {
    "task": str, "loss": str, "alpha": float, "epochs": int, "batch_size": int, "lr_g": float, "lr_d": float,
    "latent_dim": int, "gen_channels": int, "gen_layers": int, "disc_embed": int, "disc_layers": int,
    "fid_every": int, "patience": int, "fcn_epochs": int, "mismatch_weight": float,
}


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _parse_set(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"--set expects key=value, got {item!r}")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def build_config(args) -> TrainConfig:
    d = json.loads(Path(args.config).read_text()) if getattr(args, "config", None) else {}
    d.update(_parse_set(getattr(args, "set", None)))
    for name in CONFIG_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            d[name] = value
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    for key in ("cond_channels", "target_channels"):
        value = getattr(args, key, None)
        if value is not None:
            d[key] = _ints(value)
    return TrainConfig.from_dict(d)


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, default=float))


def _normalized(ds: Dataset, mean, std) -> Dataset:
    if mean is None:
        return ds
    return normalize(ds, (mean, std))


# ---------------------------------------------------------------- subcommands

def cmd_synth_data(args):
    base = SyntheticSpec()
    if args.frequencies:
        freqs = _floats(args.frequencies)
        amps = _floats(args.amplitudes) if args.amplitudes else [1.0] * len(freqs)
        classes = tuple(ClassSignal(f, a, (1.0,), args.noise) for f, a in zip(freqs, amps))
        names = tuple(args.class_names.split(",")) if args.class_names else tuple(f"class{i}" for i in range(len(freqs)))
    else:
        classes, names = base.classes, base.class_names
        if args.class_names:
            names = tuple(args.class_names.split(","))
    per_class = _ints(args.per_class)
    coupling = tuple((int(t), int(s), float(g)) for t, s, g in (c.split(",") for c in args.coupling))
    spec = SyntheticSpec(classes=classes, class_names=names, channels=args.channels, timesteps=args.timesteps,
                         samples_per_class=per_class[0] if len(per_class) == 1 else tuple(per_class),
                         seed=args.seed, coupling=coupling)
    ds = generate_synthetic(spec)
    save_csv(ds, args.out)
    return {"samples": len(ds), "class_counts": ds.class_counts().tolist(), "out": str(args.out)}


def _split(args) -> tuple[Dataset, Dataset, Dataset]:
    ds = load_csv(args.data)
    return make_split(ds, SplitSpec(seed=args.split_seed))


def cmd_fcn_train(args):
    train_raw, val_raw, test_raw = _split(args)
    stats = fit_normalizer(train_raw)
    channels = _ints(args.channels) if args.channels else list(range(train_raw.channels))
    tr, va, te = (normalize(d, stats).select_channels(channels) for d in (train_raw, val_raw, test_raw))
    model = train_fcn(tr, va, args.epochs, np.random.default_rng(args.seed))
    save_extractor(model, args.out, channels, stats)
    return {"val_accuracy": model.val_accuracy, "test_accuracy": accuracy(model, te.values, te.labels),
            "channels": channels, "out": str(args.out)}


def cmd_train(args):
    cfg = build_config(args)
    out = Path(args.out)
    train_raw, val_raw, test_raw = _split(args)
    split_dir = out / "split"
    split_dir.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", train_raw), ("val", val_raw), ("test", test_raw)):
        save_csv(part, split_dir / f"{name}.csv")
    stats = fit_normalizer(train_raw)
    tr, va = normalize(train_raw, stats), normalize(val_raw, stats)
    extractor = build_extractor(tr, va, cfg)
    channels = list(range(tr.channels)) if cfg.task == "categorical" else list(cfg.target_channels)
    save_extractor(extractor, out / "extractor.fcn", channels, stats)
    ckpt, logs = train(tr, va, cfg, out_dir=out, extractor=extractor)
    plotting.fid_history(ckpt.fid_history, ckpt.epoch, out / "fid_history.png")
    summary = {"best_epoch": ckpt.epoch, "best_fid": ckpt.best_fid, "epochs_run": len(logs),
               "extractor_val_accuracy": extractor.val_accuracy, "config": cfg.to_dict()}
    _write_json(out / "train_summary.json", summary)
    return summary


def cmd_generate(args):
    ckpt = Checkpoint.load(args.checkpoint)
    cond_ds = None
    if ckpt.config.task == "series":
        if not args.cond_data:
            raise ValueError("series checkpoints need --cond-data")
        cond_ds = _normalized(load_csv(args.cond_data), ckpt.norm_mean, ckpt.norm_std)
    ds = generate_cmd(ckpt, args.n, args.seed, class_name=args.class_name, cond_ds=cond_ds)
    if ds.normalized and not args.normalized_units:
        ds = denormalize(ds)
    # series output keeps the class label of the sample that supplied each condition
    save_csv(ds, args.out)
    return {"samples": len(ds), "channels": ds.channels, "out": str(args.out)}


def cmd_evaluate(args):
    ckpt = Checkpoint.load(args.checkpoint)
    extractor = load_extractor(args.extractor)
    test = _normalized(load_csv(args.data), ckpt.norm_mean, ckpt.norm_std)
    report = evaluate_cmd(ckpt, test, extractor, args.seed, out_dir=args.out, plots=not args.no_plots)
    return report


def cmd_alpha_sweep(args):
    cfg = build_config(args)
    train_raw, val_raw, _ = _split(args)
    stats = fit_normalizer(train_raw)
    tr, va = normalize(train_raw, stats), normalize(val_raw, stats)
    seeds = _ints(args.seeds) if args.seeds else [args.seed]
    rows = alpha_sweep(tr, va, cfg, _floats(args.alphas), seeds, out_dir=args.out)
    plotting.alpha_sweep(rows, Path(args.out) / "alpha_sweep.png")
    return {"rows": len(rows), "seeds": seeds, "out": str(args.out)}


def cmd_augment(args):
    ckpt = Checkpoint.load(args.checkpoint)
    train_raw, val_raw, test_raw = _split(args)
    stats = (ckpt.norm_mean, ckpt.norm_std) if ckpt.norm_mean is not None else fit_normalizer(train_raw)
    tr, va, te = (normalize(d, stats) for d in (train_raw, val_raw, test_raw))
    seeds = _ints(args.seeds) if args.seeds else [args.seed]
    report = augment_cmd(tr, va, te, ckpt, args.target_class, seeds, fcn_epochs=args.fcn_epochs)
    _write_json(args.out, report.to_dict())
    return {"recall_before": report.mean_before["recall"], "recall_after": report.mean_after["recall"],
            "out": str(args.out)}


def cmd_fid_ramp(args):
    extractor = load_extractor(args.extractor)
    ds = load_csv(args.data)
    if extractor.norm is not None:
        ds = normalize(ds, extractor.norm)
    if extractor.channels is not None:
        ds = ds.select_channels(extractor.channels)
    rows = fid_ramp_cmd(ds.values, extractor, _floats(args.stds), args.seed, out_path=args.out)
    plotting.fid_ramp(rows, Path(args.out).with_suffix(".png"))
    return {"ramp": rows, "out": str(args.out)}


# ---------------------------------------------------------------- parser


def _add_config_flags(p):
    p.add_argument("--config", help="JSON file of TrainConfig fields")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config field (JSON value)")
    for name, typ in CONFIG_FLAGS.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ)
    p.add_argument("--cond-channels", help="comma-separated condition channel ids (series task)")
    p.add_argument("--target-channels", help="comma-separated target channel ids (series task)")


def _add_split_flags(p):
    p.add_argument("--data", required=True, help="samples CSV (sidecar JSON next to it)")
    p.add_argument("--split-seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mtscgan", description="Conditional transformer GAN for multivariate series")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="write a synthetic class-conditional dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--frequencies", help="cycles per window, one per class (default: the built-in 3 classes)")
    p.add_argument("--amplitudes")
    p.add_argument("--class-names")
    p.add_argument("--per-class", default="300", help="one count, or one per class")
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--timesteps", type=int, default=150)
    p.add_argument("--noise", type=float, default=0.1, help="noise std for --frequencies classes")
    p.add_argument("--coupling", action="append", default=[], metavar="TARGET,SOURCE,GAIN")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("fcn-train", help="train the FCN feature extractor")
    _add_split_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--channels", help="comma-separated channel ids (default: all)")
    p.set_defaults(func=cmd_fcn_train)

    p = sub.add_parser("train", help="train a generator/discriminator pair")
    _add_split_flags(p)
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample from a checkpoint into CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--class", dest="class_name", help="class name (categorical checkpoints)")
    p.add_argument("--cond-data", help="CSV whose condition channels drive generation (series checkpoints)")
    p.add_argument("--normalized-units", action="store_true", help="skip the inverse z-score")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="MTS-FID, PCA, histograms and DTW report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--extractor", required=True)
    p.add_argument("--data", required=True, help="real test CSV")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("alpha-sweep", help="train one model per (alpha, seed)")
    _add_split_flags(p)
    _add_config_flags(p)
    p.add_argument("--alphas", default=",".join(str(a) for a in DEFAULT_ALPHAS))
    p.add_argument("--seeds", help="comma-separated seeds (default: --seed)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_alpha_sweep)

    p = sub.add_parser("augment", help="balance a minority class with generated samples")
    _add_split_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--target-class", required=True)
    p.add_argument("--seeds", help="comma-separated seeds (default: --seed)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--fcn-epochs", type=int, default=30)
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("fid-ramp", help="MTS-FID of real data against noisy copies")
    p.add_argument("--data", required=True)
    p.add_argument("--extractor", required=True)
    p.add_argument("--stds", default=",".join(str(s) for s in DEFAULT_RAMP))
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="CSV path")
    p.set_defaults(func=cmd_fid_ramp)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        result = args.func(args)
    except Exception as exc:  # one machine-readable line, nonzero exit
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "command": args.command}),
              file=sys.stderr)
        return 1
    print(json.dumps(result, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
