"""Manifest-driven runs: restartability, masks, and artifact determinism."""

from __future__ import annotations

import json

import pytest

from branchcast.cli import main as cli_main
from branchcast.pipeline import ExperimentManifest, run_experiment


@pytest.fixture(scope="module")
def context_only_corpus(tmp_path_factory):
    path = tmp_path_factory.mktemp("pipeline") / "ctxonly.jsonl"
    cli_main(["synth", "--output", str(path), "--seed", "201",
              "--trees", "130", "--mean-size", "18",
              "--context-signal", "0.9", "--text-signal", "0.0",
              "--branching-propensity", "0.3"])
    return path


def run(corpus, out_dir, **overrides):
    manifest = ExperimentManifest(
        corpus_path=str(corpus), output_dir=str(out_dir), seed=70,
        val_fraction=0.1, hidden_dim=40, dropout_rate=0.1,
        learning_rate=0.01, batch_size=64, max_epochs=120, patience=120)
    for key, value in overrides.items():
        setattr(manifest, key, value)
    return run_experiment(manifest)


class TestFeatureMasks:
    def test_no_text_equals_full_when_only_context_carries_signal(
            self, context_only_corpus, tmp_path):
        full = run(context_only_corpus, tmp_path / "full").metrics.auc
        no_text = run(context_only_corpus, tmp_path / "no_text",
                      feature_mask="no-text").metrics.auc
        assert abs(full - no_text) <= 0.02

    def test_masked_runs_record_masked_schema(self, context_only_corpus,
                                              tmp_path):
        run(context_only_corpus, tmp_path / "masked", feature_mask="no-text")
        model = json.loads((tmp_path / "masked" / "model.json").read_text())
        assert model["input_dim"] == 12
        assert len(model["columns"]) == 12


class TestRestartability:
    def test_stages_restart_from_intermediate_artifacts(
            self, context_only_corpus, tmp_path):
        # a full run, then the standalone commands re-driven from the run's
        # own intermediate files must reproduce its artifacts exactly
        out = tmp_path / "base"
        result = run(context_only_corpus, out)

        refit = tmp_path / "refit_model.json"
        from branchcast.mlp import derive_seed

        assert cli_main([
            "train",
            "--features", str(out / "features_train.csv"),
            "--val-features", str(out / "features_val.csv"),
            "--output", str(refit),
            "--seed", str(derive_seed(70, "mlp")),
            "--hidden-dim", "40", "--dropout", "0.1", "--lr", "0.01",
            "--batch-size", "64", "--epochs", "120", "--patience", "120",
        ]) == 0
        assert refit.read_text() == (out / "model.json").read_text()

        remetrics = tmp_path / "refit_metrics.json"
        assert cli_main([
            "eval", "--model", str(refit),
            "--features", str(out / "features_test.csv"),
            "--output", str(remetrics), "--seed", "0",
        ]) == 0
        assert json.loads(remetrics.read_text()) == result.metrics.to_json()

    def test_cache_mode_reproduces_lexical_run(self, context_only_corpus,
                                               tmp_path):
        base = tmp_path / "lexical_run"
        first = run(context_only_corpus, base)
        replay = run(context_only_corpus, tmp_path / "cache_run",
                     scorer="cache",
                     cache_path=str(base / "score_cache.jsonl"))
        assert replay.metrics == first.metrics
