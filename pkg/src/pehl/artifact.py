"""Binary model container: magic "PEHL", version, JSON metadata, a fixed
little-endian parameter payload, and a trailing SHA-256 of everything
before it. Loads reject wrong magic, unsupported versions, truncation,
and digest mismatches, so a restored model either reproduces the saved
one bit for bit or fails loudly.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .elasticnet import LinearModel, NgramLinearModel
from .errors import ArtifactError
from .forest import TreeEnsemble, TreeNode
from .ngrams import NGramVocabulary
from .nn.attnlstm import AttnLstmModel, LstmConfig
from .nn.fcnet import FcConfig, FcModel

MAGIC = b"PEHL"
VERSION = 1
KIND_FOREST = "forest"
KIND_NGRAM_LINEAR = "ngram-linear"
KIND_FC = "fc"
KIND_LSTM = "attn-lstm"


def _json_bytes(doc: dict) -> bytes:
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()


# ---------------- forest payload ----------------

_NODE_FMT = "<BBi d QQ ddd d"  # leaf, split kind, feature, threshold, c0, c1, p_t, gini, p_left, p_right
_NODE_SIZE = struct.calcsize(_NODE_FMT)


def _write_tree(node: TreeNode, out: io.BytesIO) -> None:
    leaf = node.is_leaf
    out.write(struct.pack(
        _NODE_FMT,
        1 if leaf else 0,
        0 if node.split_kind != "categorical" else 1,
        -1 if leaf else node.split_feature,
        0.0 if leaf else node.threshold,
        int(node.class_counts[0]), int(node.class_counts[1]),
        node.p_t, node.gini, node.p_left, node.p_right,
    ))
    if not leaf:
        _write_tree(node.left, out)
        _write_tree(node.right, out)


def _read_tree(buf: io.BytesIO) -> TreeNode:
    raw = buf.read(_NODE_SIZE)
    if len(raw) != _NODE_SIZE:
        raise ArtifactError("truncated tree payload")
    leaf, kind_code, feature, threshold, c0, c1, p_t, gini, p_l, p_r = struct.unpack(_NODE_FMT, raw)
    node = TreeNode(
        class_counts=np.array([c0, c1], dtype=np.int64),
        p_t=p_t, gini=gini, p_left=p_l, p_right=p_r,
    )
    if not leaf:
        node.split_feature = feature
        node.split_kind = "categorical" if kind_code else "numeric"
        node.threshold = threshold
        node.left = _read_tree(buf)
        node.right = _read_tree(buf)
    return node


def _forest_payload(model: TreeEnsemble) -> tuple[dict, bytes]:
    out = io.BytesIO()
    for tree in model.trees:
        _write_tree(tree, out)
    meta = {
        "ensemble_kind": model.kind,
        "n_trees": model.n_trees,
        "seed": model.seed,
        "max_features": model.max_features,
        "feature_names": model.feature_names,
        "categorical_indices": model.categorical_indices,
    }
    return meta, out.getvalue()


def _forest_restore(meta: dict, payload: bytes) -> TreeEnsemble:
    buf = io.BytesIO(payload)
    trees = [_read_tree(buf) for _ in range(meta["n_trees"])]
    if buf.read(1):
        raise ArtifactError("trailing bytes after forest payload")
    return TreeEnsemble(
        trees=trees, kind=meta["ensemble_kind"], n_trees=meta["n_trees"],
        seed=meta["seed"], max_features=meta["max_features"],
        feature_names=meta["feature_names"],
        categorical_indices=meta["categorical_indices"],
    )


# ---------------- ngram-linear payload ----------------

def _ngram_linear_payload(model: NgramLinearModel) -> tuple[dict, bytes]:
    vocab, linear = model.vocab, model.model
    out = io.BytesIO()
    out.write(np.ascontiguousarray(linear.w, dtype="<f8").tobytes())
    grams = vocab.gram_list()
    for n in vocab.n_values:
        group = [(g, int(vocab.doc_freq[j])) for g, j in vocab.grams.items() if len(g) == n]
        out.write(struct.pack("<I", len(group)))
        for g, df in group:
            out.write(g)
            out.write(struct.pack("<I", df))
    meta = {
        "C": linear.C,
        "intercept": linear.intercept,
        "dim": int(len(linear.w)),
        "n_values": list(vocab.n_values),
        "min_doc_frac": vocab.min_doc_frac,
        "corpus_size": vocab.corpus_size,
        "n_grams": len(grams),
    }
    return meta, out.getvalue()


def _ngram_linear_restore(meta: dict, payload: bytes) -> NgramLinearModel:
    buf = io.BytesIO(payload)
    dim = meta["dim"]
    w = np.frombuffer(buf.read(8 * dim), dtype="<f8").copy()
    grams: dict[bytes, int] = {}
    freqs = []
    for n in meta["n_values"]:
        (count,) = struct.unpack("<I", buf.read(4))
        for _ in range(count):
            g = buf.read(n)
            (df,) = struct.unpack("<I", buf.read(4))
            grams[g] = len(grams)
            freqs.append(df)
    if len(grams) != meta["n_grams"] or buf.read(1):
        raise ArtifactError("inconsistent n-gram payload")
    vocab = NGramVocabulary(
        n_values=tuple(meta["n_values"]), grams=grams,
        doc_freq=np.array(freqs, dtype=np.int64),
        corpus_size=meta["corpus_size"], min_doc_frac=meta["min_doc_frac"],
    )
    linear = LinearModel(w=w, intercept=meta["intercept"], C=meta["C"])
    return NgramLinearModel(vocab=vocab, model=linear)


# ---------------- network payloads ----------------

def _pack_arrays(named: list[tuple[str, np.ndarray]]) -> tuple[list, bytes]:
    out = io.BytesIO()
    index = []
    for name, arr in named:
        data = np.ascontiguousarray(arr, dtype="<f8")
        index.append({"name": name, "shape": list(data.shape)})
        out.write(data.tobytes())
    return index, out.getvalue()


def _unpack_arrays(index: list, payload: bytes) -> dict[str, np.ndarray]:
    out = {}
    offset = 0
    for item in index:
        shape = tuple(item["shape"])
        count = int(np.prod(shape)) if shape else 1
        chunk = payload[offset:offset + 8 * count]
        if len(chunk) != 8 * count:
            raise ArtifactError("truncated tensor payload")
        out[item["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        offset += 8 * count
    if offset != len(payload):
        raise ArtifactError("trailing bytes after tensor payload")
    return out


def _net_named_arrays(model) -> list[tuple[str, np.ndarray]]:
    named = [(k, model.params[k]) for k in sorted(model.params)]
    if isinstance(model, FcModel):
        for i, bn in enumerate(model.bn):
            named.append((f"__run_mean{i}", bn.running_mean))
            named.append((f"__run_var{i}", bn.running_var))
    else:
        for tag, bn in (("a", model.bn_a), ("h", model.bn_h)):
            named.append((f"__run_mean_{tag}", bn.running_mean))
            named.append((f"__run_var_{tag}", bn.running_var))
    return named


def _fc_payload(model: FcModel) -> tuple[dict, bytes]:
    index, payload = _pack_arrays(_net_named_arrays(model))
    return {"config": asdict(model.cfg), "tensors": index}, payload


def _fc_restore(meta: dict, payload: bytes) -> FcModel:
    cfg = FcConfig(**meta["config"])
    model = FcModel(cfg, np.random.default_rng(0))
    arrays = _unpack_arrays(meta["tensors"], payload)
    for k in model.params:
        model.params[k] = arrays[k]
    for i, bn in enumerate(model.bn):
        bn.running_mean = arrays[f"__run_mean{i}"]
        bn.running_var = arrays[f"__run_var{i}"]
    return model


def _lstm_payload(model: AttnLstmModel) -> tuple[dict, bytes]:
    index, payload = _pack_arrays(_net_named_arrays(model))
    return {"config": asdict(model.cfg), "tensors": index}, payload


def _lstm_restore(meta: dict, payload: bytes) -> AttnLstmModel:
    cfg = LstmConfig(**meta["config"])
    model = AttnLstmModel(cfg, np.random.default_rng(0))
    arrays = _unpack_arrays(meta["tensors"], payload)
    for k in model.params:
        model.params[k] = arrays[k]
    for tag, bn in (("a", model.bn_a), ("h", model.bn_h)):
        bn.running_mean = arrays[f"__run_mean_{tag}"]
        bn.running_var = arrays[f"__run_var_{tag}"]
    return model


_KINDS = {
    KIND_FOREST: (TreeEnsemble, _forest_payload, _forest_restore),
    KIND_NGRAM_LINEAR: (NgramLinearModel, _ngram_linear_payload, _ngram_linear_restore),
    KIND_FC: (FcModel, _fc_payload, _fc_restore),
    KIND_LSTM: (AttnLstmModel, _lstm_payload, _lstm_restore),
}


def kind_of(model) -> str:
    for kind, (cls, _, _) in _KINDS.items():
        if isinstance(model, cls):
            return kind
    raise ArtifactError(f"cannot persist object of type {type(model).__name__}")


def persist_artifact(model, path, extra_meta: dict | None = None) -> None:
    kind = kind_of(model)
    meta, payload = _KINDS[kind][1](model)
    if extra_meta:
        meta = {**meta, **extra_meta}
    meta_bytes = _json_bytes(meta)
    kind_bytes = kind.encode()
    body = io.BytesIO()
    body.write(MAGIC)
    body.write(struct.pack("<H", VERSION))
    body.write(struct.pack("<B", len(kind_bytes)))
    body.write(kind_bytes)
    body.write(struct.pack("<I", len(meta_bytes)))
    body.write(meta_bytes)
    body.write(struct.pack("<Q", len(payload)))
    body.write(payload)
    blob = body.getvalue()
    Path(path).write_bytes(blob + hashlib.sha256(blob).digest())


def restore_artifact(path):
    """Returns (model, meta). Any corruption raises ArtifactError."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ArtifactError(f"cannot read artifact: {exc}") from exc
    if len(raw) < 4 + 2 + 1 + 4 + 8 + 32:
        raise ArtifactError("artifact too small")
    blob, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(blob).digest() != digest:
        raise ArtifactError("artifact digest mismatch (corrupt or truncated)")
    buf = io.BytesIO(blob)
    if buf.read(4) != MAGIC:
        raise ArtifactError("bad magic: not a PEHL artifact")
    (version,) = struct.unpack("<H", buf.read(2))
    if version != VERSION:
        raise ArtifactError(f"unsupported artifact version {version}")
    (kind_len,) = struct.unpack("<B", buf.read(1))
    kind = buf.read(kind_len).decode()
    if kind not in _KINDS:
        raise ArtifactError(f"unknown model kind {kind!r}")
    (meta_len,) = struct.unpack("<I", buf.read(4))
    meta = json.loads(buf.read(meta_len).decode())
    (payload_len,) = struct.unpack("<Q", buf.read(8))
    payload = buf.read(payload_len)
    if len(payload) != payload_len or buf.read(1):
        raise ArtifactError("artifact payload length mismatch")
    return _KINDS[kind][2](meta, payload), meta
