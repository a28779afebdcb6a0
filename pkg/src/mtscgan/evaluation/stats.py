from __future__ import annotations

import numpy as np

STATS = ("mean", "median", "std")


def stat_features(x) -> dict[str, np.ndarray]:
    """Per-sample, per-channel mean, median and population std; each [n, channels]."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.size == 0:
        raise ValueError(f"stat_features needs a non-empty [n, channels, timesteps] batch, got {x.shape}")
    return {"mean": x.mean(axis=2), "median": np.median(x, axis=2), "std": x.std(axis=2)}


def histogram_pair(real: np.ndarray, generated: np.ndarray, bins: int = 40):
    """Counts of both collections over shared uniform bins spanning their pooled range."""
    real, generated = np.ravel(real), np.ravel(generated)
    pooled = np.concatenate([real, generated])
    lo, hi = float(pooled.min()), float(pooled.max())
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    return edges, np.histogram(real, edges)[0], np.histogram(generated, edges)[0]
