import json
import subprocess
import sys

import numpy as np
import pytest

from pehl.artifact import persist_artifact, restore_artifact
from pehl.elasticnet import NgramLinearModel, predict_scores, train_elastic_net
from pehl.errors import ArtifactError, DataError
from pehl.experiment import ExperimentConfig, run_experiment
from pehl.features import parse_features
from pehl.forest import predict_proba_many, train_forest, mdi_scores
from pehl.header import extract_header_region
from pehl.manifest import DatasetManifest, ManifestEntry, load_manifest, serialize_manifest
from pehl.ngrams import build_vocabulary, vectorize_all
from pehl.synthetic import PlantedRule, generate_synthetic_corpus


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    manifest = generate_synthetic_corpus(out, n=240, noise=0.0, seed=5, calibrate_count=12)
    return manifest


class TestManifest:
    def test_round_trip_two_rows(self, tmp_path):
        text = "path,label,split\na.bin,0,train\nb.bin,1,test\n"
        p = tmp_path / "m.csv"
        p.write_text(text)
        manifest = load_manifest(p)
        assert len(manifest.entries) == 2
        assert manifest.entries[0] == ManifestEntry(path="a.bin", label=0, split="train")
        assert serialize_manifest(manifest) == text

    def test_bad_label_names_row(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("path,label,split\na.bin,2,train\n")
        with pytest.raises(DataError, match=":2:"):
            load_manifest(p)

    def test_unknown_split_rejected(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("path,label,split\na.bin,1,validation\n")
        with pytest.raises(DataError, match="unknown split"):
            load_manifest(p)

    def test_duplicate_path_rejected(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("path,label,split\na.bin,1,train\na.bin,0,test\n")
        with pytest.raises(DataError, match="duplicate"):
            load_manifest(p)

    def test_ten_thousand_row_round_trip_is_byte_identical(self, tmp_path):
        rng = np.random.default_rng(0)
        entries = [
            ManifestEntry(path=f"dir_{i % 7}/sample_{i:05d}.bin",
                          label=int(rng.integers(0, 2)),
                          split=["train", "test", "calibrate"][int(rng.integers(0, 3))])
            for i in range(10_000)
        ]
        text = serialize_manifest(DatasetManifest(entries=entries))
        p = tmp_path / "big.csv"
        p.write_text(text)
        again = serialize_manifest(load_manifest(p))
        assert again.encode() == text.encode()


class TestSyntheticCorpus:
    def test_noise_zero_labels_match_planted_predicate(self, small_corpus):
        rule = PlantedRule()
        for e in small_corpus.entries:
            raw = small_corpus.resolve(e).read_bytes()
            fv = parse_features(extract_header_region(raw))
            assert int(rule.evaluate(fv)) == e.label

    def test_classes_balanced(self, small_corpus):
        labels = [e.label for e in small_corpus.entries]
        assert sum(labels) == len(labels) // 2

    def test_noise_flip_rate_binomial(self, tmp_path):
        manifest = generate_synthetic_corpus(tmp_path / "noisy", n=2000, noise=0.05, seed=9)
        rule = PlantedRule()
        flips = 0
        for e in manifest.entries:
            raw = manifest.resolve(e).read_bytes()
            fv = parse_features(extract_header_region(raw))
            flips += int(rule.evaluate(fv)) != e.label
        assert abs(flips / 2000 - 0.05) <= 0.02

    def test_same_seed_byte_identical(self, tmp_path):
        m1 = generate_synthetic_corpus(tmp_path / "a", n=40, noise=0.1, seed=3)
        m2 = generate_synthetic_corpus(tmp_path / "b", n=40, noise=0.1, seed=3)
        for e1, e2 in zip(m1.entries, m2.entries):
            assert e1.path == e2.path and e1.label == e2.label and e1.split == e2.split
            assert m1.resolve(e1).read_bytes() == m2.resolve(e2).read_bytes()

    def test_files_are_well_formed_pe_shapes(self, small_corpus):
        for e in small_corpus.entries[:40]:
            raw = small_corpus.resolve(e).read_bytes()
            assert raw[:2] == b"MZ"
            off = int.from_bytes(raw[0x3C:0x40], "little")
            assert raw[off:off + 4] == b"PE\x00\x00"
            assert len(raw) >= off + 264
            region = extract_header_region(raw)
            assert not region.degenerate and region.padded_tail == 0

    def test_calibrate_entries_carved_from_test(self, small_corpus):
        splits = {s: sum(1 for e in small_corpus.entries if e.split == s)
                  for s in ("train", "test", "calibrate")}
        assert splits["calibrate"] == 12
        assert splits["train"] + splits["test"] + splits["calibrate"] == 240


def _regions_labels(manifest, split):
    regions, labels = [], []
    for e in manifest.split(split):
        regions.append(extract_header_region(manifest.resolve(e).read_bytes()))
        labels.append(e.label)
    return regions, np.array(labels)


class TestArtifacts:
    def test_forest_round_trip_identical_mdi_and_predictions(self, small_corpus, tmp_path):
        from pehl.features import SCHEMA, parse_feature_matrix

        regions, labels = _regions_labels(small_corpus, "train")
        X = parse_feature_matrix(regions)
        model = train_forest(X, labels, n_trees=10, seed=1,
                             feature_names=SCHEMA.names,
                             categorical_indices=SCHEMA.categorical_indices)
        path = tmp_path / "forest.pehl"
        persist_artifact(model, path)
        loaded, meta = restore_artifact(path)
        assert np.array_equal(predict_proba_many(loaded, X), predict_proba_many(model, X))
        assert np.array_equal(mdi_scores(loaded).mdi, mdi_scores(model).mdi)

    def test_ngram_linear_round_trip(self, small_corpus, tmp_path):
        regions, labels = _regions_labels(small_corpus, "train")
        vocab = build_vocabulary(regions, (2,), 0.01)
        vecs = vectorize_all(regions, vocab)
        linear = train_elastic_net(vecs, np.where(labels > 0, 1.0, -1.0), C=1.0)
        model = NgramLinearModel(vocab=vocab, model=linear)
        path = tmp_path / "lin.pehl"
        persist_artifact(model, path)
        loaded, _ = restore_artifact(path)
        assert loaded.vocab.grams == vocab.grams
        assert np.array_equal(loaded.score_regions(regions), model.score_regions(regions))

    def test_fc_round_trip_bit_identical_scores(self, tmp_path):
        from pehl.nn.fcnet import FcConfig, FcModel

        model = FcModel(FcConfig(seq_len=12, embed_dim=4, hidden=6), np.random.default_rng(3))
        ids = np.random.default_rng(4).integers(0, 256, size=(100, 12))
        path = tmp_path / "fc.pehl"
        persist_artifact(model, path)
        loaded, _ = restore_artifact(path)
        assert np.array_equal(loaded.predict(ids), model.predict(ids))

    def test_lstm_round_trip_bit_identical_scores(self, tmp_path):
        from pehl.nn.attnlstm import AttnLstmModel, LstmConfig

        model = AttnLstmModel(
            LstmConfig(seq_len=10, embed_dim=4, hidden=5), np.random.default_rng(5))
        ids = np.random.default_rng(6).integers(0, 256, size=(100, 10))
        path = tmp_path / "lstm.pehl"
        persist_artifact(model, path)
        loaded, _ = restore_artifact(path)
        assert np.array_equal(loaded.predict(ids), model.predict(ids))

    def test_truncated_artifact_is_rejected(self, tmp_path):
        from pehl.nn.fcnet import FcConfig, FcModel

        model = FcModel(FcConfig(seq_len=8, embed_dim=3, hidden=4), np.random.default_rng(0))
        path = tmp_path / "model.pehl"
        persist_artifact(model, path)
        blob = path.read_bytes()
        for cut in (10, len(blob) // 2, len(blob) - 5):
            (tmp_path / "broken.pehl").write_bytes(blob[:cut])
            with pytest.raises(ArtifactError):
                restore_artifact(tmp_path / "broken.pehl")

    def test_corrupted_payload_is_rejected(self, tmp_path):
        from pehl.nn.fcnet import FcConfig, FcModel

        model = FcModel(FcConfig(seq_len=8, embed_dim=3, hidden=4), np.random.default_rng(0))
        path = tmp_path / "model.pehl"
        persist_artifact(model, path)
        blob = bytearray(path.read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        (tmp_path / "bad.pehl").write_bytes(bytes(blob))
        with pytest.raises(ArtifactError, match="digest"):
            restore_artifact(tmp_path / "bad.pehl")

    def test_wrong_magic_rejected(self, tmp_path):
        (tmp_path / "x.pehl").write_bytes(b"NOPE" + b"\x00" * 100)
        with pytest.raises(ArtifactError):
            restore_artifact(tmp_path / "x.pehl")


class TestRunExperiment:
    def test_fields_trees_on_clean_corpus(self, small_corpus, tmp_path):
        cfg = ExperimentConfig(n_trees=20, seed=0)
        result = run_experiment(small_corpus, "fields-trees", cfg,
                                out_dir=tmp_path / "run", make_plots=True)
        assert result.report.balanced_accuracy >= 0.95
        assert (tmp_path / "run" / "model.pehl").exists()
        assert (tmp_path / "run" / "eval.json").exists()
        assert (tmp_path / "run" / "roc.csv").exists()
        assert (tmp_path / "run" / "roc.png").exists()
        assert (tmp_path / "run" / "mdi.tsv").exists()
        assert result.calibration is not None  # calibrate split exists

    def test_empty_test_split_fails_before_training(self, small_corpus, monkeypatch):
        entries = [e for e in small_corpus.entries if e.split == "train"]
        manifest = DatasetManifest(entries=entries, base_dir=small_corpus.base_dir)
        calls = []
        import pehl.experiment as exp

        monkeypatch.setattr(exp, "_train_method",
                            lambda *a, **k: calls.append(1) or (_ for _ in ()).throw(AssertionError))
        with pytest.raises(DataError, match="test split"):
            run_experiment(manifest, "fields-trees")
        assert not calls

    def test_training_never_reads_test_files(self, small_corpus):
        """Instrumented file-access audit: every test/calibrate read must
        happen after training has finished."""
        import pehl.experiment as exp

        state = {"trained": False}
        orig = exp._train_method

        def wrapped_train(method, regions, labels, cfg):
            out = orig(method, regions, labels, cfg)
            state["trained"] = True
            return out

        split_of = {e.path: e.split for e in small_corpus.entries}

        def auditing_reader(manifest, entry):
            if split_of[entry.path] in ("test", "calibrate"):
                assert state["trained"], f"read {entry.split} file before training finished"
            else:
                assert not state["trained"], "read train file after training"
            return manifest.resolve(entry).read_bytes()

        import unittest.mock as mock

        with mock.patch.object(exp, "_train_method", wrapped_train):
            run_experiment(small_corpus, "ngram-linear",
                           ExperimentConfig(C=1.0), reader=auditing_reader)

    def test_unknown_method_rejected(self, small_corpus):
        with pytest.raises(ValueError, match="unknown method"):
            run_experiment(small_corpus, "gradient-boosting")

    def test_calibration_block_reports_pre_and_post(self, small_corpus):
        cfg = ExperimentConfig(n_trees=10, seed=1)
        result = run_experiment(small_corpus, "fields-trees", cfg)
        cal = result.calibration
        assert cal["n_calibration_points"] == 12
        assert 0.0 <= cal["pre_balanced_accuracy"] <= 1.0
        assert 0.0 <= cal["post_balanced_accuracy"] <= 1.0


class TestCli:
    def run_cli(self, *args):
        return subprocess.run([sys.executable, "-m", "pehl.cli", *args],
                              capture_output=True, text=True)

    def test_extract_and_exit_codes(self, tmp_path):
        f = tmp_path / "x.bin"
        f.write_bytes(b"MZ" + bytes(100))
        out = self.run_cli("extract", str(f))
        assert out.returncode == 0
        doc = json.loads(out.stdout)
        assert doc["degenerate"] is False and doc["pe_offset"] == 0

    def test_data_error_exit_code(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("path,label,split\na.bin,7,train\n")
        out = self.run_cli("train", "--manifest", str(p), "--method", "fc",
                           "--out", str(tmp_path / "o"))
        assert out.returncode == 2

    def test_artifact_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.pehl"
        bad.write_bytes(b"garbage")
        p = tmp_path / "m.csv"
        p.write_text("path,label,split\na.bin,1,test\n")
        out = self.run_cli("evaluate", "--manifest", str(p), "--model", str(bad))
        assert out.returncode == 4

    def test_gen_corpus_train_evaluate_importance_path(self, tmp_path):
        corpus = tmp_path / "corpus"
        out = self.run_cli("gen-corpus", "--out", str(corpus), "--n", "160",
                           "--noise", "0.0", "--seed", "2", "--calibrate-count", "10")
        assert out.returncode == 0, out.stderr
        manifest = str(corpus / "manifest.csv")

        run_dir = tmp_path / "run"
        out = self.run_cli("train", "--manifest", manifest, "--method", "fields-trees",
                           "--out", str(run_dir), "--n-trees", "10", "--no-plots")
        assert out.returncode == 0, out.stderr
        model = str(run_dir / "model.pehl")

        out = self.run_cli("evaluate", "--manifest", manifest, "--model", model,
                           "--split", "test", "--no-plots")
        assert out.returncode == 0, out.stderr
        doc = json.loads(out.stdout)
        assert doc["balanced_accuracy"] >= 0.9

        out = self.run_cli("importance", "--model", model, "--out",
                           str(tmp_path / "imp"), "--no-plots")
        assert out.returncode == 0, out.stderr
        assert "subsystem" in out.stdout

        out = self.run_cli("calibrate", "--manifest", manifest, "--model", model,
                           "--method", "platt")
        assert out.returncode == 0, out.stderr

        out = self.run_cli("path", "--manifest", manifest, "--out", str(tmp_path / "path"),
                           "--c-grid", "0.01,0.1,1", "--no-plots")
        assert out.returncode == 0, out.stderr
        assert (tmp_path / "path" / "path.csv").exists()

    def test_config_file_with_flag_override(self, tmp_path):
        corpus = tmp_path / "corpus"
        self.run_cli("gen-corpus", "--out", str(corpus), "--n", "120", "--noise", "0.0",
                     "--seed", "3")
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n_trees": 3, "seed": 7}))
        out = self.run_cli("train", "--manifest", str(corpus / "manifest.csv"),
                           "--method", "fields-trees", "--out", str(tmp_path / "o1"),
                           "--config", str(cfg), "--no-plots")
        assert out.returncode == 0, out.stderr
        from pehl.artifact import restore_artifact

        model, meta = restore_artifact(tmp_path / "o1" / "model.pehl")
        assert model.n_trees == 3 and model.seed == 7

        out = self.run_cli("train", "--manifest", str(corpus / "manifest.csv"),
                           "--method", "fields-trees", "--out", str(tmp_path / "o2"),
                           "--config", str(cfg), "--n-trees", "5", "--no-plots")
        assert out.returncode == 0, out.stderr
        model, _ = restore_artifact(tmp_path / "o2" / "model.pehl")
        assert model.n_trees == 5  # flag wins over config file
