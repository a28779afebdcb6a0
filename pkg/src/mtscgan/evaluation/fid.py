"""Frechet distance between Gaussian summaries of feature embeddings (MTS-FID)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fcn import FcnClassifier, extract_features

_EIG_TOL = 1e-8


@dataclass(frozen=True)
class GaussianStats:
    mu: np.ndarray
    sigma: np.ndarray
    n: int


def gaussian_stats(features) -> GaussianStats:
    f = np.asarray(features, dtype=np.float64)
    if f.ndim == 1:
        f = f[:, None]
    if len(f) < 2:
        raise ValueError(f"need at least 2 samples for a covariance, got {len(f)}")
    mu = f.mean(axis=0)
    d = f - mu
    s = d.T @ d / (len(f) - 1)
    return GaussianStats(mu, (s + s.T) / 2, len(f))


def _psd_sqrt(s: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(s)
    if w.min() < -_EIG_TOL * max(1.0, abs(w).max()):
        raise ValueError(f"covariance is not positive semi-definite (eigenvalue {w.min():.3g})")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_distance(s1: GaussianStats, s2: GaussianStats) -> float:
    """||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}).

    Tr (S1 S2)^{1/2} equals the sum of singular values of S1^{1/2} S2^{1/2};
    singular values stay accurate near zero where eigenvalue square roots of
    S1^{1/2} S2 S1^{1/2} would amplify rounding.
    """
    if s1.mu.shape != s2.mu.shape or s1.sigma.shape != s2.sigma.shape:
        raise ValueError(f"feature dimensions differ: {s1.mu.shape} vs {s2.mu.shape}")
    for s in (s1, s2):
        if not (np.all(np.isfinite(s.mu)) and np.all(np.isfinite(s.sigma))):
            raise ValueError("non-finite Gaussian statistics")
    diff = s1.mu - s2.mu
    cross = np.linalg.svd(_psd_sqrt(s1.sigma) @ _psd_sqrt(s2.sigma), compute_uv=False).sum()
    tr1, tr2 = np.trace(s1.sigma), np.trace(s2.sigma)
    value = float(diff @ diff + tr1 + tr2 - 2.0 * cross)
    # residue of cancelling traces is rounding, not distance
    if value < 64 * np.finfo(float).eps * max(1.0, tr1 + tr2 + diff @ diff):
        return 0.0
    return value


def mts_fid(real, generated, extractor: FcnClassifier) -> float:
    real = np.asarray(real)
    generated = np.asarray(generated)
    if len(real) < 2 or len(generated) < 2:
        raise ValueError("MTS-FID needs at least 2 samples per collection")
    fr = extract_features(real, extractor)
    fg = extract_features(generated, extractor)
    return frechet_distance(gaussian_stats(fr), gaussian_stats(fg))


def fid_ramp(real: np.ndarray, extractor: FcnClassifier, noise_stds, rng: np.random.Generator) -> list[float]:
    """MTS-FID between ``real`` and ``real`` plus white Gaussian noise, per noise level."""
    real = np.asarray(real)
    fr = gaussian_stats(extract_features(real, extractor))
    out = []
    for sigma in noise_stds:
        noisy = real + rng.normal(0.0, sigma, real.shape) if sigma > 0 else real
        out.append(frechet_distance(fr, gaussian_stats(extract_features(noisy, extractor))))
    return out
