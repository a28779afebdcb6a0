"""Figures for evaluation reports, written straight to files (Agg backend)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
    "savefig.bbox": "tight",
}


def _save(fig, path):
    fig.savefig(path)
    plt.close(fig)


def pca_scatter(proj_real, proj_gen, labels, class_names, path):
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(8, 3.5), sharex=True, sharey=True)
        for ax, proj, title in zip(axes, (proj_real, proj_gen), ("real", "generated")):
            for cid, name in enumerate(class_names):
                m = labels == cid
                ax.scatter(proj[m, 0], proj[m, 1], s=6, alpha=0.6, label=name)
            ax.set_title(title)
            ax.set_xlabel("PC1")
        axes[0].set_ylabel("PC2")
        axes[1].legend(frameon=False, markerscale=2)
        _save(fig, path)


def stat_histograms(hists: dict, path):
    """``hists``: stat name -> (edges, real counts, generated counts)."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(hists), figsize=(3.2 * len(hists), 2.8))
        for ax, (name, (edges, hr, hg)) in zip(np.atleast_1d(axes), hists.items()):
            width = np.diff(edges)
            ax.bar(edges[:-1], hr / max(hr.sum(), 1), width, align="edge", alpha=0.5, label="real")
            ax.bar(edges[:-1], hg / max(hg.sum(), 1), width, align="edge", alpha=0.5, label="generated")
            ax.set_title(name)
        np.atleast_1d(axes)[0].set_ylabel("frequency")
        np.atleast_1d(axes)[-1].legend(frameon=False)
        _save(fig, path)


def fid_history(history, best_epoch, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        if history:
            ep, fid = zip(*history)
            ax.plot(ep, fid, marker=".", lw=1)
            ax.axvline(best_epoch, ls=":", color="tab:orange", label=f"best (epoch {best_epoch})")
            ax.legend(frameon=False)
        ax.set_xlabel("epoch")
        ax.set_ylabel("MTS-FID")
        _save(fig, path)


def fid_ramp(rows, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 3))
        sigma, fid = zip(*rows)
        ax.plot(sigma, fid, marker="o", lw=1)
        ax.set_xlabel("noise std")
        ax.set_ylabel("MTS-FID")
        _save(fig, path)


def sample_grid(real, generated, labels, class_names, path, channel: int = 0):
    """First real and generated sample per class, one channel."""
    with plt.rc_context(STYLE):
        n = len(class_names)
        fig, axes = plt.subplots(n, 1, figsize=(6, 1.6 * n), sharex=True, squeeze=False)
        for cid, ax in enumerate(axes[:, 0]):
            idx = np.flatnonzero(labels == cid)
            if len(idx):
                ax.plot(real[idx[0], channel], lw=1, label="real")
                ax.plot(generated[idx[0], channel], lw=1, label="generated")
            ax.set_ylabel(class_names[cid])
        axes[0, 0].legend(frameon=False, ncol=2)
        axes[-1, 0].set_xlabel("timestep")
        _save(fig, path)


def alpha_sweep(rows, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        alphas = [r.alpha for r in rows]
        ax.plot(alphas, [r.intra_dispersion for r in rows], marker="o", label="intra-class dispersion")
        ax.plot(alphas, [r.inter_separation for r in rows], marker="s", label="inter-class separation")
        ax.set_xlabel("alpha")
        ax.legend(frameon=False)
        _save(fig, path)
