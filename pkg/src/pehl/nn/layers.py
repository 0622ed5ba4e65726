"""Layer primitives with explicit forward/backward pairs.

Everything is plain float64 numpy; each forward returns whatever cache its
backward needs. Dropout is inverted (masks carry the 1/(1-p) scale) so
inference applies no rescaling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def embedding_init(rng: np.random.Generator, vocab: int, dim: int) -> np.ndarray:
    return rng.uniform(-0.05, 0.05, size=(vocab, dim))


def embed_bytes(ids: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Gather: row t of the output is the table row for byte ids[t]."""
    return table[np.asarray(ids, dtype=np.int64)]


def embed_backward(dout: np.ndarray, ids: np.ndarray, vocab: int) -> np.ndarray:
    dtable = np.zeros((vocab, dout.shape[-1]))
    np.add.at(dtable, np.asarray(ids, dtype=np.int64).ravel(), dout.reshape(-1, dout.shape[-1]))
    return dtable


def affine_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    return x @ W + b


def affine_backward(dy: np.ndarray, x: np.ndarray, W: np.ndarray):
    return dy @ W.T, x.T @ dy, dy.sum(axis=0)


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.99
    eps: float = 1e-5

    @classmethod
    def create(cls, units: int, momentum: float = 0.99, eps: float = 1e-5) -> "BatchNormParams":
        return cls(
            gamma=np.ones(units), beta=np.zeros(units),
            running_mean=np.zeros(units), running_var=np.ones(units),
            momentum=momentum, eps=eps,
        )


def batch_norm_forward(x: np.ndarray, p: BatchNormParams, train: bool):
    """Returns (y, cache). Train mode uses (and folds into the running
    stats) the biased batch statistics; inference uses the running stats."""
    if train:
        if x.shape[0] < 2:
            raise ValueError("batch norm in train mode needs a batch of at least 2")
        mu = x.mean(axis=0)
        var = x.var(axis=0)
        inv_std = 1.0 / np.sqrt(var + p.eps)
        xhat = (x - mu) * inv_std
        p.running_mean = p.momentum * p.running_mean + (1.0 - p.momentum) * mu
        p.running_var = p.momentum * p.running_var + (1.0 - p.momentum) * var
        y = p.gamma * xhat + p.beta
        return y, ("train", xhat, inv_std, p.gamma)
    inv_std = 1.0 / np.sqrt(p.running_var + p.eps)
    y = p.gamma * (x - p.running_mean) * inv_std + p.beta
    return y, ("infer", inv_std, p.gamma)


def batch_norm_backward(dy: np.ndarray, cache):
    if cache[0] == "infer":
        _, inv_std, gamma = cache
        return dy * gamma * inv_std, None, None
    _, xhat, inv_std, gamma = cache
    n = dy.shape[0]
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    dx = (inv_std / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    return dx, dgamma, dbeta


def elu(x: np.ndarray, alpha: float = 1.0) -> np.ndarray:
    return np.where(x >= 0.0, x, alpha * np.expm1(np.minimum(x, 0.0)))


def elu_backward(dy: np.ndarray, x: np.ndarray, alpha: float = 1.0) -> np.ndarray:
    return dy * np.where(x >= 0.0, 1.0, alpha * np.exp(np.minimum(x, 0.0)))


def dropout_mask(rng: np.random.Generator, shape, p: float) -> np.ndarray:
    """Inverted-dropout mask: 0 with probability p, else 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"drop probability must be in [0, 1), got {p}")
    if p == 0.0:
        return np.ones(shape)
    return (rng.random(shape) >= p) / (1.0 - p)


def decov_penalty(h: np.ndarray, weight: float):
    """DeCov loss weight/2 * (||C||_F^2 - ||diag C||^2) on the batch
    covariance C of h, with its exact gradient (centering included)."""
    if h.shape[0] < 2:
        raise ValueError("decov needs a batch of at least 2")
    n = h.shape[0]
    hc = h - h.mean(axis=0)
    cov = (hc.T @ hc) / n
    off = cov - np.diag(np.diag(cov))
    loss = 0.5 * weight * float((off * off).sum())
    dcov = weight * off
    dhc = (2.0 / n) * hc @ dcov  # dcov symmetric
    dh = dhc - dhc.mean(axis=0)
    return loss, dh
