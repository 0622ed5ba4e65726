"""End-to-end experiments: extraction, featurization, training, evaluation,
importance reporting, and the small-sample calibration protocol.

Training and vocabulary building only ever touch train-split files; test
and calibrate files are read after the model is fixed.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import plots
from .artifact import persist_artifact
from .elasticnet import NgramLinearModel, predict_scores, train_elastic_net
from .errors import DataError
from .features import SCHEMA, parse_feature_matrix
from .forest import mdi_scores, predict_proba_many, train_forest
from .header import extract_header_region
from .manifest import DatasetManifest, ManifestEntry
from .metrics import EvalReport, balanced_accuracy, evaluate, platt_calibrate, roc_auc_points
from .ngrams import build_vocabulary, vectorize_all
from .nn.attnlstm import AttnLstmModel, LstmConfig, LstmTrainConfig, attention_importance, attn_lstm_train
from .nn.fcnet import FcConfig, FcModel, FcTrainConfig, fc_train

METHODS = ("fields-trees", "ngram-linear", "fc", "attn-lstm")


@dataclass
class ExperimentConfig:
    seed: int = 0
    threshold: float = 0.5
    val_fraction: float = 0.0
    # fields-trees
    trees_kind: str = "extra-trees"
    n_trees: int = 100
    max_features: int | None = None
    # ngram-linear
    ngram_n: tuple = (2,)
    min_doc_frac: float = 0.01
    C: float = 1.0
    # shared network knobs
    epochs: int = 35
    batch_size: int = 64
    lr: float = 0.001
    embed_dim: int = 16
    # fc
    fc_hidden: int = 256
    fc_emb_dropout: float = 0.2
    fc_dropout: float = 0.5
    # attn-lstm
    lstm_hidden: int = 256
    lstm_epochs: int | None = None
    clip_norm: float = 1.0
    lstm_emb_dropout: float = 0.2
    lstm_input_dropout: float = 0.5
    lstm_recurrent_dropout: float = 0.5
    lstm_attn_dropout: float = 0.5
    lstm_head_dropout: float = 0.5


@dataclass
class ExperimentResult:
    method: str
    report: EvalReport
    model: object
    trace: list = field(default_factory=list)
    mdi: object = None
    attention_scores: np.ndarray | None = None
    calibration: dict | None = None
    written: dict = field(default_factory=dict)


def read_entry_bytes(manifest: DatasetManifest, entry: ManifestEntry) -> bytes:
    path = manifest.resolve(entry)
    if not path.exists():
        raise DataError(f"manifest entry not found on disk: {path}")
    return path.read_bytes()


def _regions_and_labels(manifest, entries, reader):
    regions = [extract_header_region(reader(manifest, e)) for e in entries]
    labels = np.array([e.label for e in entries], dtype=np.int64)
    return regions, labels


def _region_ids(regions) -> np.ndarray:
    return np.frombuffer(b"".join(r.data for r in regions), dtype=np.uint8).reshape(
        len(regions), -1
    ).astype(np.int64)


def _carve_val(ids, labels, frac, seed):
    if frac <= 0:
        return (ids, labels), None
    rng = np.random.default_rng(seed + 987)
    val_idx = []
    for cls in (0, 1):
        cls_idx = np.flatnonzero(labels == cls)
        take = max(1, int(round(frac * len(cls_idx))))
        val_idx.extend(rng.permutation(cls_idx)[:take])
    val_idx = np.sort(np.array(val_idx))
    train_idx = np.setdiff1d(np.arange(len(labels)), val_idx)
    return (ids[train_idx], labels[train_idx]), (ids[val_idx], labels[val_idx])


def _train_method(method, train_regions, train_labels, cfg: ExperimentConfig):
    """Returns (model, scorer over regions, trace rows)."""
    if method == "fields-trees":
        X = parse_feature_matrix(train_regions)
        model = train_forest(
            X, train_labels, kind=cfg.trees_kind, n_trees=cfg.n_trees,
            seed=cfg.seed, max_features=cfg.max_features,
            feature_names=SCHEMA.names,
            categorical_indices=SCHEMA.categorical_indices,
        )
        return model, lambda regions: predict_proba_many(model, parse_feature_matrix(regions)), []

    if method == "ngram-linear":
        vocab = build_vocabulary(train_regions, cfg.ngram_n, cfg.min_doc_frac)
        vecs = vectorize_all(train_regions, vocab)
        linear = train_elastic_net(vecs, np.where(train_labels > 0, 1.0, -1.0), C=cfg.C)
        model = NgramLinearModel(vocab=vocab, model=linear)
        return model, model.score_regions, []

    if method == "fc":
        ids = _region_ids(train_regions)
        (tr_ids, tr_y), val = _carve_val(ids, train_labels, cfg.val_fraction, cfg.seed)
        model = FcModel(
            FcConfig(embed_dim=cfg.embed_dim, hidden=cfg.fc_hidden,
                     emb_dropout=cfg.fc_emb_dropout, hidden_dropout=cfg.fc_dropout),
            np.random.default_rng(cfg.seed),
        )
        model, trace = fc_train(
            model, tr_ids, tr_y,
            FcTrainConfig(lr=cfg.lr, batch_size=cfg.batch_size, epochs=cfg.epochs, seed=cfg.seed),
            val=val,
        )
        return model, lambda regions: model.predict(_region_ids(regions)), trace

    if method == "attn-lstm":
        ids = _region_ids(train_regions)
        (tr_ids, tr_y), val = _carve_val(ids, train_labels, cfg.val_fraction, cfg.seed)
        model = AttnLstmModel(
            LstmConfig(embed_dim=cfg.embed_dim, hidden=cfg.lstm_hidden,
                       emb_dropout=cfg.lstm_emb_dropout,
                       input_dropout=cfg.lstm_input_dropout,
                       recurrent_dropout=cfg.lstm_recurrent_dropout,
                       attn_dropout=cfg.lstm_attn_dropout,
                       head_dropout=cfg.lstm_head_dropout),
            np.random.default_rng(cfg.seed),
        )
        model, trace = attn_lstm_train(
            model, tr_ids, tr_y,
            LstmTrainConfig(lr=cfg.lr, clip_norm=cfg.clip_norm, batch_size=cfg.batch_size,
                            epochs=cfg.lstm_epochs if cfg.lstm_epochs is not None else cfg.epochs,
                            seed=cfg.seed),
            val=val,
        )
        return model, lambda regions: model.predict(_region_ids(regions)), trace

    raise ValueError(f"unknown method {method!r}; choose one of {METHODS}")


def scorer_for_model(model):
    """Score header regions with any persisted model kind."""
    from .forest import TreeEnsemble

    if isinstance(model, TreeEnsemble):
        return lambda regions: predict_proba_many(model, parse_feature_matrix(regions))
    if isinstance(model, NgramLinearModel):
        return model.score_regions
    if isinstance(model, (FcModel, AttnLstmModel)):
        return lambda regions: model.predict(_region_ids(regions))
    raise ValueError(f"no scorer for model type {type(model).__name__}")


def run_calibration(scorer, manifest, cal_entries, test_scores, test_labels, reader, threshold=0.5):
    """Fit Platt scaling on the calibrate split and report balanced
    accuracy on the test split before and after."""
    cal_regions, cal_labels = _regions_and_labels(manifest, cal_entries, reader)
    cal_scores = scorer(cal_regions)
    calibrator = platt_calibrate(cal_scores, cal_labels)
    post = calibrator.apply(test_scores)
    return {
        "n_calibration_points": len(cal_entries),
        "platt_a": calibrator.a,
        "platt_b": calibrator.b,
        "pre_balanced_accuracy": balanced_accuracy(test_scores, test_labels, threshold),
        "post_balanced_accuracy": balanced_accuracy(post, test_labels, threshold),
        "pre_auc": roc_auc_points(test_scores, test_labels)[0],
        "post_auc": roc_auc_points(post, test_labels)[0],
    }


def run_experiment(
    manifest: DatasetManifest,
    method: str,
    config: ExperimentConfig | None = None,
    out_dir=None,
    reader=read_entry_bytes,
    make_plots: bool = True,
) -> ExperimentResult:
    cfg = config or ExperimentConfig()
    train_entries = manifest.split("train")
    test_entries = manifest.split("test")
    cal_entries = manifest.split("calibrate")
    if not test_entries:
        raise DataError("manifest has an empty test split")
    if not train_entries:
        raise DataError("manifest has an empty train split")
    train_label_set = {e.label for e in train_entries}
    if train_label_set != {0, 1}:
        raise DataError("train split must contain both classes")

    train_regions, train_labels = _regions_and_labels(manifest, train_entries, reader)
    model, scorer, trace = _train_method(method, train_regions, train_labels, cfg)

    test_regions, test_labels = _regions_and_labels(manifest, test_entries, reader)
    test_scores = scorer(test_regions)
    report = evaluate(test_scores, test_labels, cfg.threshold)

    result = ExperimentResult(method=method, report=report, model=model, trace=trace)
    if method == "fields-trees":
        result.mdi = mdi_scores(model)
    if method == "attn-lstm":
        result.attention_scores = attention_importance(model, _region_ids(train_regions))
    if cal_entries:
        result.calibration = run_calibration(
            scorer, manifest, cal_entries, test_scores, test_labels, reader, cfg.threshold
        )

    if out_dir is not None:
        result.written = write_reports(result, Path(out_dir), make_plots)
    return result


# ---------------- report files ----------------

def write_roc_csv(points, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fpr", "tpr", "threshold"])
        for fpr, tpr, thr in points:
            w.writerow([f"{fpr:.10g}", f"{tpr:.10g}", f"{thr:.10g}"])


def write_trace_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "val_balacc", "val_auc"])
        for r in rows:
            w.writerow([
                r["epoch"], f"{r['loss']:.10g}",
                "" if r["val_balacc"] is None else f"{r['val_balacc']:.10g}",
                "" if r["val_auc"] is None else f"{r['val_auc']:.10g}",
            ])


def write_path_csv(path_obj, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["C", "nnz", "train_balacc", "cv_balacc"])
        for r in path_obj.rows():
            w.writerow([
                f"{r['C']:.10g}", r["nnz"], f"{r['train_balacc']:.10g}",
                "" if r["cv_balacc"] is None else f"{r['cv_balacc']:.10g}",
            ])


def write_mdi_reports(mdi, base: Path):
    rows = mdi.ranked()
    with open(base.with_suffix(".tsv"), "w") as fh:
        fh.write("feature\tmdi\tri\n")
        for name, score, ri in rows:
            fh.write(f"{name}\t{score:.10g}\t{ri:.10g}\n")
    base.with_suffix(".json").write_text(json.dumps(
        [{"feature": n, "mdi": m, "ri": r} for n, m, r in rows], indent=2
    ))


def write_attention_report(scores, path):
    order = np.argsort(-scores, kind="stable")
    with open(path, "w") as fh:
        fh.write("position\tmean_alpha\tfield_32\tfield_64\n")
        for pos in order:
            f32 = ";".join(SCHEMA.covering_fields(int(pos), "32")) or "-"
            f64 = ";".join(SCHEMA.covering_fields(int(pos), "64")) or "-"
            fh.write(f"{int(pos)}\t{scores[pos]:.10g}\t{f32}\t{f64}\n")


def write_reports(result: ExperimentResult, out_dir: Path, make_plots: bool = True) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}

    model_path = out_dir / "model.pehl"
    persist_artifact(result.model, model_path)
    written["model"] = model_path

    eval_path = out_dir / "eval.json"
    eval_path.write_text(json.dumps(
        {"method": result.method, **result.report.summary(),
         "calibration": result.calibration}, indent=2))
    written["eval"] = eval_path

    if result.report.roc:
        roc_path = out_dir / "roc.csv"
        write_roc_csv(result.report.roc, roc_path)
        written["roc"] = roc_path
        if make_plots:
            plots.save_roc_plot(result.report.roc, out_dir / "roc.png",
                                title=f"ROC ({result.method})")
            written["roc_png"] = out_dir / "roc.png"

    if result.trace:
        trace_path = out_dir / "trace.csv"
        write_trace_csv(result.trace, trace_path)
        written["trace"] = trace_path
        if make_plots:
            plots.save_trace_plot(result.trace, out_dir / "trace.png",
                                  title=f"training trace ({result.method})")
            written["trace_png"] = out_dir / "trace.png"

    if result.mdi is not None:
        write_mdi_reports(result.mdi, out_dir / "mdi")
        written["mdi"] = out_dir / "mdi.tsv"
        if make_plots:
            plots.save_importance_plot(result.mdi.feature_names, result.mdi.ri,
                                       out_dir / "mdi.png")
            written["mdi_png"] = out_dir / "mdi.png"

    if result.attention_scores is not None:
        att_path = out_dir / "attention.tsv"
        write_attention_report(result.attention_scores, att_path)
        written["attention"] = att_path
        if make_plots:
            plots.save_attention_plot(result.attention_scores, out_dir / "attention.png")
            written["attention_png"] = out_dir / "attention.png"

    if result.calibration is not None:
        cal_path = out_dir / "calibration.json"
        cal_path.write_text(json.dumps(result.calibration, indent=2))
        written["calibration"] = cal_path
    return written
