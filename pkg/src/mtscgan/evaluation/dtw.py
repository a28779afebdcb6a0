from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DtwResult:
    cost: float
    path: list[tuple[int, int]]


def _as_frames(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or len(x) == 0:
        raise ValueError(f"dtw needs a non-empty sequence of vectors, got shape {x.shape}")
    return x


def local_distances(a, b) -> np.ndarray:
    a, b = _as_frames(a), _as_frames(b)
    return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))


def dtw(a, b, band: int | None = None) -> DtwResult:
    """Dynamic time warping with steps (1,0), (0,1), (1,1) and Euclidean frame
    distance. ``band`` is the Sakoe-Chiba half-width (|i - j| <= band)."""
    dist = local_distances(a, b)
    n, m = dist.shape
    if band is not None and band < abs(n - m):
        raise ValueError(f"band {band} admits no warping path between lengths {n} and {m}")
    inf = float("inf")
    acc = np.full((n + 1, m + 1), inf)
    acc[0, 0] = 0.0
    d = dist.tolist()
    rows = acc.tolist()
    for i in range(1, n + 1):
        lo, hi = 1, m
        if band is not None:
            lo, hi = max(1, i - band), min(m, i + band)
        prev, cur, di = rows[i - 1], rows[i], d[i - 1]
        for j in range(lo, hi + 1):
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if cur[j - 1] < best:
                best = cur[j - 1]
            cur[j] = di[j - 1] + best
    acc = np.array(rows)
    # traceback, preferring the diagonal on ties
    i, j = n, m
    path = [(n - 1, m - 1)]
    while (i, j) != (1, 1):
        steps = ((acc[i - 1, j - 1], i - 1, j - 1), (acc[i - 1, j], i - 1, j), (acc[i, j - 1], i, j - 1))
        _, i, j = min(steps, key=lambda s: s[0])
        path.append((i - 1, j - 1))
    path.reverse()
    return DtwResult(float(acc[n, m]), path)


def mean_dtw(real: np.ndarray, generated: np.ndarray, band: int | None = None) -> float:
    """Average DTW cost between paired series, each [channels, timesteps]."""
    costs = [dtw(r.T, g.T, band).cost for r, g in zip(real, generated)]
    return float(np.mean(costs))
