"""Figure rendering for the report files the toolkit emits.

Every writer takes the same rows that went into the delimited output and
saves a PNG next to it; the CSV/TSV stays the primary artifact.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_roc_plot(points, out_path, title="ROC"):
    fpr = [p[0] for p in points]
    tpr = [p[1] for p in points]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(fpr, tpr, lw=1.5)
    ax.plot([0, 1], [0, 1], ls="--", lw=0.8, color="gray")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def save_trace_plot(rows, out_path, title="training trace"):
    epochs = [r["epoch"] for r in rows]
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.plot(epochs, [r["loss"] for r in rows], label="train loss", lw=1.5)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    if any(r.get("val_balacc") is not None for r in rows):
        ax2 = ax.twinx()
        ax2.plot(epochs, [r["val_balacc"] for r in rows], color="C1", label="val balanced acc")
        ax2.plot(epochs, [r["val_auc"] for r in rows], color="C2", ls="--", label="val AUC")
        ax2.set_ylabel("validation score")
        ax2.legend(loc="lower right", fontsize=8)
    ax.legend(loc="upper right", fontsize=8)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def save_path_plot(rows, out_path, title="regularization path"):
    cs = [r["C"] for r in rows]
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.plot(cs, [r["train_balacc"] for r in rows], marker="o", ms=3, label="train balanced acc")
    if any(r["cv_balacc"] is not None for r in rows):
        ax.plot(cs, [r["cv_balacc"] for r in rows], marker="s", ms=3, label="cv balanced acc")
    ax.set_xscale("log")
    ax.set_xlabel("C")
    ax.set_ylabel("balanced accuracy")
    ax2 = ax.twinx()
    ax2.plot(cs, [r["nnz"] for r in rows], color="gray", ls=":", label="nonzero weights")
    ax2.set_ylabel("nonzero weights")
    ax.legend(loc="lower right", fontsize=8)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def save_importance_plot(names, scores, out_path, top: int = 10, title="feature importance"):
    order = np.argsort(-np.asarray(scores))[:top]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.barh([names[i] for i in order][::-1], [scores[i] for i in order][::-1])
    ax.set_xlabel("relative importance")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def save_attention_plot(position_scores, out_path, title="mean attention by byte position"):
    fig, ax = plt.subplots(figsize=(7, 3.2))
    ax.plot(np.arange(len(position_scores)), position_scores, lw=0.8)
    ax.set_xlabel("region byte position")
    ax.set_ylabel("mean attention weight")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
