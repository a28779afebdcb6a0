from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # [d, d], rows orthonormal, descending variance
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray


def pca_fit(data) -> PcaModel:
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or len(x) < 2:
        raise ValueError(f"pca_fit needs a [n >= 2, d] matrix, got shape {x.shape}")
    mean = x.mean(axis=0)
    c = x - mean
    cov = c.T @ c / (len(x) - 1)
    w, v = np.linalg.eigh((cov + cov.T) / 2)
    order = np.argsort(w)[::-1]
    w = np.clip(w[order], 0.0, None)
    comps = v[:, order].T
    # sign convention: largest-magnitude loading positive
    signs = np.sign(comps[np.arange(len(comps)), np.abs(comps).argmax(axis=1)])
    comps = comps * np.where(signs == 0, 1.0, signs)[:, None]
    total = w.sum()
    ratio = w / total if total > 0 else np.zeros_like(w)
    return PcaModel(mean, comps, w, ratio)


def pca_project(model: PcaModel, data, k: int) -> np.ndarray:
    x = np.asarray(data, dtype=np.float64)
    if k > model.components.shape[0]:
        raise ValueError(f"k={k} exceeds data dimension {model.components.shape[0]}")
    return (x - model.mean) @ model.components[:k].T


def pca_reconstruct(model: PcaModel, proj: np.ndarray) -> np.ndarray:
    k = proj.shape[1]
    return proj @ model.components[:k] + model.mean
