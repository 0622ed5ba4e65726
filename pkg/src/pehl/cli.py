"""Command-line interface.

Subcommands: extract, gen-corpus, train, evaluate, importance, calibrate,
path. Options can come from a JSON config file (--config); explicit flags
win over the file, which wins over built-in defaults. Exit codes: 0 ok,
2 data error, 3 training divergence, 4 artifact corruption.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import plots
from .artifact import persist_artifact, restore_artifact
from .elasticnet import regularization_path
from .errors import ArtifactError, DataError, DivergenceError
from .experiment import (
    ExperimentConfig,
    METHODS,
    read_entry_bytes,
    run_calibration,
    run_experiment,
    scorer_for_model,
    write_path_csv,
    write_roc_csv,
    _regions_and_labels,
)
from .features import SCHEMA
from .header import extract_header_region
from .manifest import load_manifest
from .metrics import calibrator_to_dict, evaluate, isotonic_calibrate, platt_calibrate
from .ngrams import build_vocabulary, vectorize_all
from .synthetic import PlantedRule, generate_synthetic_corpus

_CONFIG_FIELDS = {f.name: f.type for f in fields(ExperimentConfig)}


def _build_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig()
    file_doc = {}
    if getattr(args, "config", None):
        file_doc = json.loads(Path(args.config).read_text())
        unknown = set(file_doc) - set(_CONFIG_FIELDS)
        if unknown:
            raise DataError(f"unknown config keys: {sorted(unknown)}")
    for name in _CONFIG_FIELDS:
        if name in file_doc:
            setattr(cfg, name, file_doc[name])
        flag_val = getattr(args, name, None)
        if flag_val is not None:
            setattr(cfg, name, flag_val)
    if isinstance(cfg.ngram_n, (list, tuple)):
        cfg.ngram_n = tuple(int(n) for n in cfg.ngram_n)
    return cfg


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file with ExperimentConfig fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--val-fraction", dest="val_fraction", type=float)
    p.add_argument("--trees-kind", dest="trees_kind", choices=["random-forest", "extra-trees"])
    p.add_argument("--n-trees", dest="n_trees", type=int)
    p.add_argument("--max-features", dest="max_features", type=int)
    p.add_argument("--ngram-n", dest="ngram_n", type=lambda s: tuple(int(x) for x in s.split(",")),
                   help="comma-separated gram lengths, e.g. 2 or 2,3,4")
    p.add_argument("--min-doc-frac", dest="min_doc_frac", type=float)
    p.add_argument("--C", dest="C", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--fc-hidden", dest="fc_hidden", type=int)
    p.add_argument("--fc-dropout", dest="fc_dropout", type=float)
    p.add_argument("--fc-emb-dropout", dest="fc_emb_dropout", type=float)
    p.add_argument("--lstm-hidden", dest="lstm_hidden", type=int)
    p.add_argument("--lstm-epochs", dest="lstm_epochs", type=int)
    p.add_argument("--clip-norm", dest="clip_norm", type=float)
    p.add_argument("--lstm-emb-dropout", dest="lstm_emb_dropout", type=float)
    p.add_argument("--lstm-input-dropout", dest="lstm_input_dropout", type=float)
    p.add_argument("--lstm-recurrent-dropout", dest="lstm_recurrent_dropout", type=float)
    p.add_argument("--lstm-attn-dropout", dest="lstm_attn_dropout", type=float)
    p.add_argument("--lstm-head-dropout", dest="lstm_head_dropout", type=float)


def cmd_extract(args) -> int:
    raw = Path(args.file).read_bytes()
    region = extract_header_region(raw)
    if args.out:
        Path(args.out).write_bytes(region.data)
    doc = {
        "source": args.file,
        "pe_offset": region.pe_offset,
        "padded_tail": region.padded_tail,
        "degenerate": region.degenerate,
        "region_hex": region.data.hex(),
    }
    print(json.dumps(doc if args.hex else {k: v for k, v in doc.items() if k != "region_hex"},
                     indent=2))
    return 0


def cmd_gen_corpus(args) -> int:
    rule = PlantedRule(subsystem_value=args.rule_subsystem, require_dll=not args.rule_any_dll)
    manifest = generate_synthetic_corpus(
        args.out, n=args.n, rule=rule, noise=args.noise, seed=args.seed,
        train_frac=args.train_frac, calibrate_count=args.calibrate_count,
    )
    counts = {}
    for e in manifest.entries:
        counts[e.split] = counts.get(e.split, 0) + 1
    print(json.dumps({"out": str(args.out), "n": len(manifest.entries), "splits": counts}))
    return 0


def cmd_train(args) -> int:
    manifest = load_manifest(args.manifest)
    cfg = _build_config(args)
    result = run_experiment(manifest, args.method, cfg, out_dir=args.out,
                            make_plots=not args.no_plots)
    print(json.dumps({
        "method": args.method,
        "balanced_accuracy": result.report.balanced_accuracy,
        "auc": result.report.auc,
        "written": {k: str(v) for k, v in result.written.items()},
    }, indent=2))
    return 0


def cmd_evaluate(args) -> int:
    manifest = load_manifest(args.manifest)
    model, _ = restore_artifact(args.model)
    entries = manifest.split(args.split)
    if not entries:
        raise DataError(f"manifest has no {args.split!r} entries")
    regions, labels = _regions_and_labels(manifest, entries, read_entry_bytes)
    scores = scorer_for_model(model)(regions)
    report = evaluate(scores, labels, args.threshold)
    out = {"split": args.split, **report.summary()}
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "eval.json").write_text(json.dumps(out, indent=2))
        if report.roc:
            write_roc_csv(report.roc, out_dir / "roc.csv")
            if not args.no_plots:
                plots.save_roc_plot(report.roc, out_dir / "roc.png")
    print(json.dumps(out, indent=2))
    return 0


def cmd_importance(args) -> int:
    from .experiment import write_attention_report, write_mdi_reports
    from .forest import TreeEnsemble, mdi_scores
    from .nn.attnlstm import AttnLstmModel, attention_importance
    from .experiment import _region_ids

    model, _ = restore_artifact(args.model)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if isinstance(model, TreeEnsemble):
        report = mdi_scores(model)
        write_mdi_reports(report, out_dir / "mdi")
        if not args.no_plots:
            plots.save_importance_plot(report.feature_names, report.ri, out_dir / "mdi.png",
                                       top=args.top)
        for name, score, ri in report.ranked()[:args.top]:
            print(f"{ri:6.3f}  {score:.6g}  {name}")
    elif isinstance(model, AttnLstmModel):
        if not args.manifest:
            raise DataError("attention importance needs --manifest (train split is averaged)")
        manifest = load_manifest(args.manifest)
        entries = manifest.split("train")
        if not entries:
            raise DataError("manifest has no train entries")
        regions, _ = _regions_and_labels(manifest, entries, read_entry_bytes)
        scores = attention_importance(model, _region_ids(regions))
        write_attention_report(scores, out_dir / "attention.tsv")
        if not args.no_plots:
            plots.save_attention_plot(scores, out_dir / "attention.png")
        order = np.argsort(-scores)[:args.top]
        for pos in order:
            f32 = ";".join(SCHEMA.covering_fields(int(pos), "32")) or "-"
            print(f"{int(pos):4d}  {scores[pos]:.6g}  {f32}")
    else:
        raise DataError("importance reporting needs a forest or attention-LSTM artifact")
    return 0


def cmd_calibrate(args) -> int:
    manifest = load_manifest(args.manifest)
    model, _ = restore_artifact(args.model)
    scorer = scorer_for_model(model)
    cal_entries = manifest.split("calibrate")
    test_entries = manifest.split("test")
    if not cal_entries:
        raise DataError("manifest has no calibrate entries")
    if not test_entries:
        raise DataError("manifest has no test entries")
    test_regions, test_labels = _regions_and_labels(manifest, test_entries, read_entry_bytes)
    test_scores = scorer(test_regions)
    if args.method == "platt":
        doc = run_calibration(scorer, manifest, cal_entries, test_scores, test_labels,
                              read_entry_bytes, args.threshold)
        cal_regions, cal_labels = _regions_and_labels(manifest, cal_entries, read_entry_bytes)
        calibrator = platt_calibrate(scorer(cal_regions), cal_labels)
    else:
        cal_regions, cal_labels = _regions_and_labels(manifest, cal_entries, read_entry_bytes)
        calibrator = isotonic_calibrate(scorer(cal_regions), cal_labels)
        post = calibrator.apply(test_scores)
        doc = {
            "n_calibration_points": len(cal_entries),
            "pre_balanced_accuracy": evaluate(test_scores, test_labels, args.threshold).balanced_accuracy,
            "post_balanced_accuracy": evaluate(post, test_labels, args.threshold).balanced_accuracy,
        }
    doc["calibrator"] = calibrator_to_dict(calibrator)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(doc, indent=2))
    print(json.dumps(doc, indent=2))
    return 0


def cmd_path(args) -> int:
    manifest = load_manifest(args.manifest)
    cfg = _build_config(args)
    train_entries = manifest.split("train")
    if not train_entries:
        raise DataError("manifest has no train entries")
    regions, labels = _regions_and_labels(manifest, train_entries, read_entry_bytes)
    vocab = build_vocabulary(regions, cfg.ngram_n, cfg.min_doc_frac)
    vecs = vectorize_all(regions, vocab)
    if args.c_grid:
        grid = [float(x) for x in args.c_grid.split(",")]
    else:
        grid = list(np.logspace(np.log10(args.c_min), np.log10(args.c_max), args.c_num))
    path_obj = regularization_path(vecs, np.where(labels > 0, 1.0, -1.0), grid,
                                   folds=args.folds, seed=cfg.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_path_csv(path_obj, out_dir / "path.csv")
    if not args.no_plots:
        plots.save_path_plot(list(path_obj.rows()), out_dir / "path.png")
    for row in path_obj.rows():
        cv = "" if row["cv_balacc"] is None else f"  cv={row['cv_balacc']:.4f}"
        print(f"C={row['C']:<10.4g} nnz={row['nnz']:<6d} train={row['train_balacc']:.4f}{cv}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pehl",
        description="PE-header benign/malicious classification toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="extract the 328-byte header region from a file")
    p.add_argument("file")
    p.add_argument("-o", "--out", help="write the raw 328-byte region here")
    p.add_argument("--hex", action="store_true", help="include the region hex dump in the JSON")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("gen-corpus", help="generate a synthetic planted-rule corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-frac", dest="train_frac", type=float, default=0.7)
    p.add_argument("--calibrate-count", dest="calibrate_count", type=int, default=0)
    p.add_argument("--rule-subsystem", dest="rule_subsystem", type=int, default=3)
    p.add_argument("--rule-any-dll", dest="rule_any_dll", action="store_true",
                   help="label on subsystem only, ignore the DLL flag")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train", help="train a model and evaluate it on the test split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--out", required=True, help="directory for the model artifact and reports")
    p.add_argument("--no-plots", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a saved model on a manifest split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--split", default="test", choices=["train", "test", "calibrate"])
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", help="directory for eval.json and the ROC files")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("importance", help="feature importance report for a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", help="needed for attention importance (train split)")
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_importance)

    p = sub.add_parser("calibrate", help="fit a calibrator on the calibrate split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--method", default="platt", choices=["platt", "isotonic"])
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", help="write the calibration report JSON here")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("path", help="elastic-net regularization path diagnostics")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--c-grid", dest="c_grid", help="comma-separated C values (ascending)")
    p.add_argument("--c-min", dest="c_min", type=float, default=0.01)
    p.add_argument("--c-max", dest="c_max", type=float, default=100.0)
    p.add_argument("--c-num", dest="c_num", type=int, default=10)
    p.add_argument("--folds", type=int, default=0)
    p.add_argument("--no-plots", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_path)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3
    except ArtifactError as exc:
        print(f"artifact error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
