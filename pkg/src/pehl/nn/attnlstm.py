"""Three-layer LSTM with forget gates, variational dropout, and a
single-sequence attention head.

Per layer and sequence, one dropout mask is drawn for the inputs and one
for the recurrent state and reused at every timestep. The attention block
scores each timestep from its own hidden state and the sequence mean
(dense -> batch norm -> tanh -> dropout -> dense), softmaxes the scores
into weights that sum to one, and feeds the weighted state average
through a small dense head to the sigmoid output. By default the state
the attention sees is the concatenation of all three layers' hidden
states; ``attend_to="last"`` switches to the top layer only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DataError, DivergenceError
from ..mathutil import sigmoid, softplus
from ..metrics import balanced_accuracy, roc_auc_points
from .layers import (
    BatchNormParams,
    batch_norm_backward,
    batch_norm_forward,
    dropout_mask,
    embed_backward,
    embed_bytes,
    embedding_init,
    glorot_uniform,
)
from .optim import AdamState, adam_step, clip_global_norm


@dataclass
class LstmConfig:
    seq_len: int = 328
    embed_dim: int = 16
    hidden: int = 256
    n_layers: int = 3
    attend_to: str = "concat"  # "concat" (all layers' states) | "last"
    emb_dropout: float = 0.2
    input_dropout: float = 0.5      # dropout_W, variational
    recurrent_dropout: float = 0.5  # dropout_U, variational
    attn_dropout: float = 0.5
    head_dropout: float = 0.5
    emb_l2: float = 1e-4
    lstm_l2: float = 1e-5
    attn_l2: float = 1e-4
    head_l2: float = 1e-4
    forget_bias: float = 1.0
    bn_momentum: float = 0.99
    bn_eps: float = 1e-5

    @property
    def state_size(self) -> int:
        return self.hidden * (self.n_layers if self.attend_to == "concat" else 1)


@dataclass
class LstmTrainConfig:
    lr: float = 0.001
    clip_norm: float = 1.0
    batch_size: int = 64
    epochs: int = 35
    seed: int = 0


@dataclass
class AttentionTrace:
    alpha: np.ndarray       # (T,) weights on the simplex
    alpha_raw: np.ndarray   # (T,) pre-softmax scores
    h_bar: np.ndarray       # (state,) mean hidden state
    h_seq: np.ndarray       # (T, state)

    @property
    def T(self) -> int:
        return len(self.alpha)


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _gate_init(rng, fan_in, units):
    """Glorot per gate block, concatenated along the 4S axis."""
    return np.concatenate([glorot_uniform(rng, fan_in, units) for _ in range(4)], axis=1)


def _recurrent_init(rng, units):
    """Per-gate orthogonal recurrent matrices (the RNN-framework default
    of the era; keeps state norms stable over long sequences)."""
    blocks = []
    for _ in range(4):
        a = rng.normal(size=(units, units))
        q, r = np.linalg.qr(a)
        blocks.append(q * np.sign(np.diag(r)))
    return np.concatenate(blocks, axis=1)


class AttnLstmModel:
    def __init__(self, cfg: LstmConfig, rng: np.random.Generator):
        self.cfg = cfg
        s = cfg.hidden
        state = cfg.state_size
        p: dict[str, np.ndarray] = {"emb": embedding_init(rng, 256, cfg.embed_dim)}
        fan = cfg.embed_dim
        for l in range(cfg.n_layers):
            p[f"W{l}"] = _gate_init(rng, fan, s)
            p[f"U{l}"] = _recurrent_init(rng, s)
            b = np.zeros(4 * s)
            b[s:2 * s] = cfg.forget_bias
            p[f"b{l}"] = b
            fan = s
        p["Wa"] = glorot_uniform(rng, 2 * state, s)
        p["ba"] = np.zeros(s)
        p["bn_a_gamma"] = np.ones(s)
        p["bn_a_beta"] = np.zeros(s)
        p["va"] = glorot_uniform(rng, s, 1)
        p["vb"] = np.zeros(1)
        p["Wh"] = glorot_uniform(rng, state, state)
        p["bh"] = np.zeros(state)
        p["bn_h_gamma"] = np.ones(state)
        p["bn_h_beta"] = np.zeros(state)
        p["Wout"] = glorot_uniform(rng, state, 1)
        p["bout"] = np.zeros(1)
        self.params = p
        self.bn_a = BatchNormParams.create(s, cfg.bn_momentum, cfg.bn_eps)
        self.bn_h = BatchNormParams.create(state, cfg.bn_momentum, cfg.bn_eps)

    def _bn(self, which: str) -> BatchNormParams:
        p = self.bn_a if which == "a" else self.bn_h
        p.gamma = self.params[f"bn_{which}_gamma"]
        p.beta = self.params[f"bn_{which}_beta"]
        return p

    def penalty_and_grads(self):
        cfg, p = self.cfg, self.params
        loss = cfg.emb_l2 * float((p["emb"] ** 2).sum())
        grads = {"emb": 2.0 * cfg.emb_l2 * p["emb"]}
        for l in range(cfg.n_layers):
            for name in (f"W{l}", f"U{l}"):
                loss += cfg.lstm_l2 * float((p[name] ** 2).sum())
                grads[name] = 2.0 * cfg.lstm_l2 * p[name]
        for name, lam in (("Wa", cfg.attn_l2), ("va", cfg.attn_l2), ("Wh", cfg.head_l2)):
            loss += lam * float((p[name] ** 2).sum())
            grads[name] = 2.0 * lam * p[name]
        return loss, grads

    # ---------------- forward ----------------

    def _lstm_layers(self, ids, train, rng):
        cfg, p = self.cfg, self.params
        ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
        n, t_len = ids.shape
        if t_len != cfg.seq_len:
            raise ValueError(f"expected sequences of length {cfg.seq_len}, got {t_len}")
        s = cfg.hidden
        emb = embed_bytes(ids, p["emb"])
        emb_mask = dropout_mask(rng, (n, t_len, 1), cfg.emb_dropout) if train and cfg.emb_dropout > 0 else None
        x = emb * emb_mask if emb_mask is not None else emb

        layers = []
        h_seqs = []
        for l in range(cfg.n_layers):
            w, u, b = p[f"W{l}"], p[f"U{l}"], p[f"b{l}"]
            mx = dropout_mask(rng, (n, x.shape[2]), cfg.input_dropout) if train and cfg.input_dropout > 0 else None
            mh = dropout_mask(rng, (n, s), cfg.recurrent_dropout) if train and cfg.recurrent_dropout > 0 else None
            gi = np.empty((n, t_len, s)); gf = np.empty((n, t_len, s))
            gg = np.empty((n, t_len, s)); go = np.empty((n, t_len, s))
            cs = np.empty((n, t_len, s)); tcs = np.empty((n, t_len, s))
            hs = np.empty((n, t_len, s))
            h = np.zeros((n, s)); c = np.zeros((n, s))
            for t in range(t_len):
                xd = x[:, t] * mx if mx is not None else x[:, t]
                hd = h * mh if mh is not None else h
                pre = xd @ w + hd @ u + b
                i_t = sigmoid(pre[:, :s])
                f_t = sigmoid(pre[:, s:2 * s])
                g_t = np.tanh(pre[:, 2 * s:3 * s])
                o_t = sigmoid(pre[:, 3 * s:])
                c = f_t * c + i_t * g_t
                tc = np.tanh(c)
                h = o_t * tc
                gi[:, t], gf[:, t], gg[:, t], go[:, t] = i_t, f_t, g_t, o_t
                cs[:, t], tcs[:, t], hs[:, t] = c, tc, h
            layers.append({"x": x, "mx": mx, "mh": mh, "i": gi, "f": gf, "g": gg,
                           "o": go, "c": cs, "tc": tcs, "h": hs})
            h_seqs.append(hs)
            x = hs

        if cfg.attend_to == "concat":
            h_used = np.concatenate(h_seqs, axis=2)
        else:
            h_used = h_seqs[-1]
        return ids, emb_mask, layers, h_used

    def _attention(self, h_used, train, rng):
        cfg, p = self.cfg, self.params
        n, t_len, state = h_used.shape
        hbar = h_used.mean(axis=1)
        att_in = np.concatenate(
            [h_used, np.broadcast_to(hbar[:, None, :], h_used.shape)], axis=2
        ).reshape(n * t_len, 2 * state)
        z_a = att_in @ p["Wa"] + p["ba"]
        u_a, bn_cache = batch_norm_forward(z_a, self._bn("a"), train)
        t_a = np.tanh(u_a)
        mask_a = dropout_mask(rng, t_a.shape, cfg.attn_dropout) if train and cfg.attn_dropout > 0 else None
        d_a = t_a * mask_a if mask_a is not None else t_a
        raw = (d_a @ p["va"] + p["vb"])[:, 0].reshape(n, t_len)
        alpha = _softmax_rows(raw)
        context = np.einsum("nt,nts->ns", alpha, h_used)
        cache = (att_in, bn_cache, t_a, mask_a, d_a, raw, alpha)
        return alpha, raw, hbar, context, cache

    def _head(self, context, train, rng):
        cfg, p = self.cfg, self.params
        z_h = context @ p["Wh"] + p["bh"]
        u_h, bn_cache = batch_norm_forward(z_h, self._bn("h"), train)
        t_h = np.tanh(u_h)
        mask_h = dropout_mask(rng, t_h.shape, cfg.head_dropout) if train and cfg.head_dropout > 0 else None
        d_h = t_h * mask_h if mask_h is not None else t_h
        logit = (d_h @ p["Wout"] + p["bout"])[:, 0]
        return logit, (bn_cache, t_h, mask_h, d_h)

    def forward(self, ids, train: bool = False, rng: np.random.Generator | None = None):
        ids_arr, emb_mask, layers, h_used = self._lstm_layers(ids, train, rng)
        alpha, raw, hbar, context, att_cache = self._attention(h_used, train, rng)
        logit, head_cache = self._head(context, train, rng)
        probs = sigmoid(logit)
        cache = (ids_arr, emb_mask, layers, h_used, att_cache, context, head_cache)
        return probs, alpha, cache

    # ---------------- backward ----------------

    def loss_and_grads(self, ids, y, rng, train: bool = True):
        cfg, p = self.cfg, self.params
        y = np.asarray(y, dtype=float)
        probs, alpha, cache = self.forward(ids, train=train, rng=rng)
        ids_arr, emb_mask, layers, h_used, att_cache, context, head_cache = cache
        att_in, bn_cache_a, t_a, mask_a, d_a, raw, alpha = att_cache
        bn_cache_h, t_h, mask_h, d_h = head_cache
        n, t_len, state = h_used.shape
        s = cfg.hidden

        z_out = (d_h @ p["Wout"] + p["bout"])[:, 0]
        data_loss = float(np.mean(softplus(z_out) - y * z_out))
        pen_loss, grads = self.penalty_and_grads()
        total = data_loss + pen_loss
        if not np.isfinite(total):
            raise DivergenceError("non-finite training loss")

        dlogit = ((probs - y) / n)[:, None]
        grads["Wout"] = d_h.T @ dlogit
        grads["bout"] = dlogit.sum(axis=0)
        dd_h = dlogit @ p["Wout"].T
        dt_h = dd_h * mask_h if mask_h is not None else dd_h
        du_h = dt_h * (1.0 - t_h * t_h)
        dz_h, dg_h, db_h = batch_norm_backward(du_h, bn_cache_h)
        grads["bn_h_gamma"] = dg_h
        grads["bn_h_beta"] = db_h
        grads["Wh"] = grads["Wh"] + context.T @ dz_h
        grads["bh"] = dz_h.sum(axis=0)
        dcontext = dz_h @ p["Wh"].T

        dalpha = np.einsum("nts,ns->nt", h_used, dcontext)
        dh_used = alpha[:, :, None] * dcontext[:, None, :]
        draw = alpha * (dalpha - (alpha * dalpha).sum(axis=1, keepdims=True))
        draw_flat = draw.reshape(n * t_len, 1)
        grads["va"] = grads["va"] + d_a.T @ draw_flat
        grads["vb"] = draw_flat.sum(axis=0)
        dd_a = draw_flat @ p["va"].T
        dt_a = dd_a * mask_a if mask_a is not None else dd_a
        du_a = dt_a * (1.0 - t_a * t_a)
        dz_a, dg_a, db_a = batch_norm_backward(du_a, bn_cache_a)
        grads["bn_a_gamma"] = dg_a
        grads["bn_a_beta"] = db_a
        grads["Wa"] = grads["Wa"] + att_in.T @ dz_a
        grads["ba"] = dz_a.sum(axis=0)
        datt_in = (dz_a @ p["Wa"].T).reshape(n, t_len, 2 * state)
        dh_used = dh_used + datt_in[:, :, :state]
        dhbar = datt_in[:, :, state:].sum(axis=1)
        dh_used = dh_used + dhbar[:, None, :] / t_len

        # distribute onto per-layer hidden sequences
        if cfg.attend_to == "concat":
            dh_top = [dh_used[:, :, l * s:(l + 1) * s].copy() for l in range(cfg.n_layers)]
        else:
            dh_top = [np.zeros((n, t_len, s)) for _ in range(cfg.n_layers - 1)] + [dh_used.copy()]

        dx_above = None
        for l in reversed(range(cfg.n_layers)):
            lay = layers[l]
            dh_seq = dh_top[l]
            if dx_above is not None:
                dh_seq = dh_seq + dx_above
            w, u = p[f"W{l}"], p[f"U{l}"]
            mx, mh = lay["mx"], lay["mh"]
            x = lay["x"]
            dW = np.zeros_like(w)
            dU = np.zeros_like(u)
            db = np.zeros(4 * s)
            dx = np.empty((n, t_len, x.shape[2]))
            dh_rec = np.zeros((n, s))
            dc = np.zeros((n, s))
            for t in range(t_len - 1, -1, -1):
                i_t, f_t, g_t, o_t = lay["i"][:, t], lay["f"][:, t], lay["g"][:, t], lay["o"][:, t]
                c_t, tc_t = lay["c"][:, t], lay["tc"][:, t]
                c_prev = lay["c"][:, t - 1] if t > 0 else np.zeros((n, s))
                h_prev = lay["h"][:, t - 1] if t > 0 else np.zeros((n, s))
                dh = dh_seq[:, t] + dh_rec
                do = dh * tc_t
                dc = dc + dh * o_t * (1.0 - tc_t * tc_t)
                di = dc * g_t
                df = dc * c_prev
                dg = dc * i_t
                dpre = np.concatenate([
                    di * i_t * (1.0 - i_t),
                    df * f_t * (1.0 - f_t),
                    dg * (1.0 - g_t * g_t),
                    do * o_t * (1.0 - o_t),
                ], axis=1)
                xd = x[:, t] * mx if mx is not None else x[:, t]
                hd = h_prev * mh if mh is not None else h_prev
                dW += xd.T @ dpre
                dU += hd.T @ dpre
                db += dpre.sum(axis=0)
                dxd = dpre @ w.T
                dx[:, t] = dxd * mx if mx is not None else dxd
                dhd = dpre @ u.T
                dh_rec = dhd * mh if mh is not None else dhd
                dc = dc * f_t
            grads[f"W{l}"] = grads[f"W{l}"] + dW
            grads[f"U{l}"] = grads[f"U{l}"] + dU
            grads[f"b{l}"] = db
            dx_above = dx

        demb = dx_above
        if emb_mask is not None:
            demb = demb * emb_mask
        grads["emb"] = grads["emb"] + embed_backward(demb, ids_arr, 256)
        return total, grads, probs

    # ---------------- inference helpers ----------------

    def predict(self, ids: np.ndarray) -> np.ndarray:
        probs, _, _ = self.forward(ids, train=False)
        return probs

    def hidden_states(self, ids: np.ndarray) -> np.ndarray:
        """Infer-mode hidden state sequences, (n, T, state_size)."""
        _, _, _, h_used = self._lstm_layers(ids, train=False, rng=None)
        return h_used

    def attention_alphas(self, ids: np.ndarray) -> np.ndarray:
        _, alpha, _ = self.forward(ids, train=False)
        return alpha

    def snapshot(self) -> dict:
        return {
            "params": {k: v.copy() for k, v in self.params.items()},
            "running": [
                (b.running_mean.copy(), b.running_var.copy()) for b in (self.bn_a, self.bn_h)
            ],
        }

    def restore(self, snap: dict) -> None:
        for k, v in snap["params"].items():
            self.params[k] = v.copy()
        for b, (m, v) in zip((self.bn_a, self.bn_h), snap["running"]):
            b.running_mean = m.copy()
            b.running_var = v.copy()


def attention_weights(model: AttnLstmModel, h_seq: np.ndarray) -> AttentionTrace:
    """Attention trace for one hidden-state sequence (T, state), infer mode."""
    h3 = h_seq[None, :, :]
    alpha, raw, hbar, _, _ = model._attention(h3, train=False, rng=None)
    return AttentionTrace(alpha=alpha[0], alpha_raw=raw[0], h_bar=hbar[0], h_seq=h_seq)


def attention_output(trace: AttentionTrace) -> np.ndarray:
    """Convex combination of the hidden states under the attention weights."""
    return trace.alpha @ trace.h_seq


def attention_importance(model: AttnLstmModel, ids: np.ndarray, batch_size: int = 64):
    """Mean attention weight per byte position over a dataset, infer mode."""
    ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
    if len(ids) == 0:
        raise DataError("attention importance needs a non-empty dataset")
    total = np.zeros(ids.shape[1])
    for i in range(0, len(ids), batch_size):
        total += model.attention_alphas(ids[i:i + batch_size]).sum(axis=0)
    return total / len(ids)


def attn_lstm_train(
    model: AttnLstmModel,
    ids: np.ndarray,
    labels: np.ndarray,
    train_cfg: LstmTrainConfig | None = None,
    val: tuple[np.ndarray, np.ndarray] | None = None,
):
    """Adam with global-norm clipping on BCE + L2 penalties; keeps the
    best validation epoch like the FC trainer."""
    tc = train_cfg or LstmTrainConfig()
    y = np.asarray(labels, dtype=float)
    ids = np.asarray(ids, dtype=np.int64)
    if not (np.any(y > 0) and np.any(y <= 0)):
        raise DataError("training data contains a single class")
    rng = np.random.default_rng(tc.seed)
    opt = AdamState(lr=tc.lr)
    trace = []
    best = (-np.inf, None)
    n = len(y)
    for epoch in range(tc.epochs):
        order = rng.permutation(n)
        chunks = [order[i:i + tc.batch_size] for i in range(0, n, tc.batch_size)]
        if len(chunks) > 1 and len(chunks[-1]) == 1:
            chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
            chunks.pop()
        losses, sizes = [], []
        for batch in chunks:
            loss, grads, _ = model.loss_and_grads(ids[batch], y[batch], rng, train=True)
            clip_global_norm(grads, tc.clip_norm)
            adam_step(model.params, grads, opt)
            losses.append(loss)
            sizes.append(len(batch))
        row = {"epoch": epoch, "loss": float(np.average(losses, weights=sizes)),
               "val_balacc": None, "val_auc": None}
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
