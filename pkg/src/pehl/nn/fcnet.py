"""Fully connected byte classifier.

Embedding (16-d per byte, dropout 0.2, L2 1e-4) -> flatten -> four
Dense->BatchNorm->ELU->Dropout(0.5) blocks (L2 1e-4 each, L1 1e-4 added
on the first, DeCov 0.1 on the last block's activations) -> sigmoid unit,
trained with Adam on binary cross-entropy.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError, DivergenceError
from ..mathutil import sigmoid, softplus
from ..metrics import balanced_accuracy, roc_auc_points
from .layers import (
    BatchNormParams,
    affine_backward,
    affine_forward,
    batch_norm_backward,
    batch_norm_forward,
    decov_penalty,
    dropout_mask,
    elu,
    elu_backward,
    embed_backward,
    embed_bytes,
    embedding_init,
    glorot_uniform,
)
from .optim import AdamState, adam_step


@dataclass
class FcConfig:
    seq_len: int = 328
    embed_dim: int = 16
    hidden: int = 256
    n_hidden: int = 4
    emb_dropout: float = 0.2
    hidden_dropout: float = 0.5
    emb_l2: float = 1e-4
    hidden_l2: float = 1e-4
    first_l1: float = 1e-4
    decov_weight: float = 0.1
    bn_momentum: float = 0.99
    bn_eps: float = 1e-5


@dataclass
class FcTrainConfig:
    lr: float = 0.001
    batch_size: int = 64
    epochs: int = 35
    seed: int = 0


class FcModel:
    def __init__(self, cfg: FcConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.params: dict[str, np.ndarray] = {"emb": embedding_init(rng, 256, cfg.embed_dim)}
        self.bn: list[BatchNormParams] = []
        fan_in = cfg.seq_len * cfg.embed_dim
        for i in range(cfg.n_hidden):
            self.params[f"W{i}"] = glorot_uniform(rng, fan_in, cfg.hidden)
            self.params[f"b{i}"] = np.zeros(cfg.hidden)
            self.params[f"bn{i}_gamma"] = np.ones(cfg.hidden)
            self.params[f"bn{i}_beta"] = np.zeros(cfg.hidden)
            self.bn.append(BatchNormParams.create(cfg.hidden, cfg.bn_momentum, cfg.bn_eps))
            fan_in = cfg.hidden
        self.params["Wout"] = glorot_uniform(rng, cfg.hidden, 1)
        self.params["bout"] = np.zeros(1)

    def _bn_view(self, i: int) -> BatchNormParams:
        # gamma/beta live in the trainable dict; running stats on self.bn
        p = self.bn[i]
        p.gamma = self.params[f"bn{i}_gamma"]
        p.beta = self.params[f"bn{i}_beta"]
        return p

    def penalty_and_grads(self):
        cfg = self.cfg
        loss = cfg.emb_l2 * float((self.params["emb"] ** 2).sum())
        grads = {"emb": 2.0 * cfg.emb_l2 * self.params["emb"]}
        for i in range(cfg.n_hidden):
            W = self.params[f"W{i}"]
            loss += cfg.hidden_l2 * float((W * W).sum())
            grads[f"W{i}"] = 2.0 * cfg.hidden_l2 * W
            if i == 0 and cfg.first_l1:
                loss += cfg.first_l1 * float(np.abs(W).sum())
                grads[f"W{i}"] = grads[f"W{i}"] + cfg.first_l1 * np.sign(W)
        return loss, grads

    def forward(self, ids: np.ndarray, train: bool, rng: np.random.Generator | None = None):
        """Returns (probs, reg_loss, cache). reg_loss sums the L1/L2/DeCov
        penalty terms active for this pass."""
        cfg = self.cfg
        ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
        if ids.shape[1] != cfg.seq_len:
            raise ValueError(f"expected sequences of length {cfg.seq_len}, got {ids.shape[1]}")
        n = ids.shape[0]
        emb = embed_bytes(ids, self.params["emb"])
        if train and cfg.emb_dropout > 0:
            emb_mask = dropout_mask(rng, (n, cfg.seq_len, 1), cfg.emb_dropout)
        else:
            emb_mask = None
        emb_d = emb * emb_mask if emb_mask is not None else emb
        x = emb_d.reshape(n, cfg.seq_len * cfg.embed_dim)

        layer_caches = []
        decov_loss, decov_grad = 0.0, None
        for i in range(cfg.n_hidden):
            xin = x
            z = affine_forward(xin, self.params[f"W{i}"], self.params[f"b{i}"])
            u, bn_cache = batch_norm_forward(z, self._bn_view(i), train)
            a = elu(u)
            if i == cfg.n_hidden - 1 and cfg.decov_weight > 0 and train:
                decov_loss, decov_grad = decov_penalty(a, cfg.decov_weight)
            if train and cfg.hidden_dropout > 0:
                mask = dropout_mask(rng, a.shape, cfg.hidden_dropout)
                x = a * mask
            else:
                mask = None
                x = a
            layer_caches.append((xin, u, bn_cache, a, mask))

        logit = affine_forward(x, self.params["Wout"], self.params["bout"])[:, 0]
        probs = sigmoid(logit)
        pen_loss, _ = self.penalty_and_grads()
        reg_loss = pen_loss + decov_loss
        cache = (ids, emb_mask, layer_caches, x, logit, decov_grad)
        return probs, reg_loss, cache

    def loss_and_grads(self, ids, y, rng, train: bool = True):
        """Mean binary cross-entropy plus penalties, with gradients for
        every trainable tensor."""
        cfg = self.cfg
        y = np.asarray(y, dtype=float)
        probs, reg_loss, cache = self.forward(ids, train, rng)
        ids_arr, emb_mask, layer_caches, x_last, logit, decov_grad = cache
        n = len(y)
        data_loss = float(np.mean(softplus(logit) - y * logit))
        total = data_loss + reg_loss
        if not np.isfinite(total):
            raise DivergenceError("non-finite training loss")

        pen_loss, grads = self.penalty_and_grads()
        dlogit = ((probs - y) / n)[:, None]
        dx, dW, db = affine_backward(dlogit, x_last, self.params["Wout"])
        grads["Wout"] = dW
        grads["bout"] = db
        for i in reversed(range(cfg.n_hidden)):
            xin, u, bn_cache, a, mask = layer_caches[i]
            da = dx * mask if mask is not None else dx
            if i == cfg.n_hidden - 1 and decov_grad is not None:
                da = da + decov_grad
            du = elu_backward(da, u)
            dz, dgamma, dbeta = batch_norm_backward(du, bn_cache)
            grads[f"bn{i}_gamma"] = dgamma
            grads[f"bn{i}_beta"] = dbeta
            dx, dW, db = affine_backward(dz, xin, self.params[f"W{i}"])
            grads[f"W{i}"] = grads[f"W{i}"] + dW
            grads[f"b{i}"] = db

        demb_d = dx.reshape(ids_arr.shape[0], cfg.seq_len, cfg.embed_dim)
        if emb_mask is not None:
            demb_d = demb_d * emb_mask
        grads["emb"] = grads["emb"] + embed_backward(demb_d, ids_arr, 256)
        return total, grads, probs

    def predict(self, ids: np.ndarray) -> np.ndarray:
        probs, _, _ = self.forward(ids, train=False)
        return probs

    def snapshot(self) -> dict:
        return {
            "params": {k: v.copy() for k, v in self.params.items()},
            "running": [(p.running_mean.copy(), p.running_var.copy()) for p in self.bn],
        }

    def restore(self, snap: dict) -> None:
        for k, v in snap["params"].items():
            self.params[k] = v.copy()
        for p, (m, v) in zip(self.bn, snap["running"]):
            p.running_mean = m.copy()
            p.running_var = v.copy()


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    chunks = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


def fc_train(
    model: FcModel,
    ids: np.ndarray,
    labels: np.ndarray,
    train_cfg: FcTrainConfig | None = None,
    val: tuple[np.ndarray, np.ndarray] | None = None,
):
    """Train in place; returns (model, trace) with the model restored to
    its best validation epoch (last epoch when no validation set)."""
    tc = train_cfg or FcTrainConfig()
    y = np.asarray(labels, dtype=float)
    ids = np.asarray(ids, dtype=np.int64)
    if not (np.any(y > 0) and np.any(y <= 0)):
        raise DataError("training data contains a single class")
    rng = np.random.default_rng(tc.seed)
    opt = AdamState(lr=tc.lr)
    trace = []
    best = (-np.inf, None)
    for epoch in range(tc.epochs):
        losses, sizes = [], []
        for batch in _batches(len(y), tc.batch_size, rng):
            loss, grads, _ = model.loss_and_grads(ids[batch], y[batch], rng, train=True)
            adam_step(model.params, grads, opt)
            losses.append(loss)
            sizes.append(len(batch))
        epoch_loss = float(np.average(losses, weights=sizes))
        row = {"epoch": epoch, "loss": epoch_loss, "val_balacc": None, "val_auc": None}
        if val is not None:
            vp = model.predict(val[0])
            row["val_balacc"] = balanced_accuracy(vp, val[1])
            row["val_auc"] = roc_auc_points(vp, val[1])[0]
            if row["val_balacc"] > best[0]:
                best = (row["val_balacc"], model.snapshot())
        trace.append(row)
    if val is not None and best[1] is not None:
        model.restore(best[1])
    return model, trace
