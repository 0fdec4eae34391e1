"""Acceptance checks for the external scorer process (secondary component).

These run the real sidecar from ``sidecar/dist`` through the primary's
protocol client: handshake, a 100-pair batch, malformed-request recovery,
and the score-range check, plus the head-to-head against the built-in
lexical scorer on a 2,000-pair planted-keyword dataset.  Skipped when the
sidecar has not been built (``cd sidecar && npm install && npm run build``).
"""

from __future__ import annotations

import json
import shutil
import subprocess
from pathlib import Path

import pytest

from branchcast.pipeline import ExperimentManifest, run_experiment
from branchcast.scoring import PairItem, ScoreCache, train_lexical_scorer, write_pair_file
from branchcast.sidecar_client import SidecarClient, external_score_batch
from branchcast.synth import generate_planted_pairs

SIDECAR_CLI = Path(__file__).resolve().parent.parent / "sidecar" / "dist" / "cli.js"

pytestmark = pytest.mark.skipif(
    shutil.which("node") is None or not SIDECAR_CLI.exists(),
    reason="sidecar not built; run: cd sidecar && npm install && npm run build",
)


@pytest.fixture(scope="module")
def pair_file(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("sidecar") / "pairs.jsonl"
    pairs = generate_planted_pairs(2000, seed=60)
    with open(path, "w", encoding="utf-8") as fh:
        write_pair_file(pairs, fh)
    return path


@pytest.fixture(scope="module")
def checkpoint(pair_file) -> tuple[Path, dict]:
    out = pair_file.parent / "checkpoint.json"
    result = subprocess.run(
        ["node", str(SIDECAR_CLI), "finetune", "--pairs", str(pair_file),
         "--out", str(out), "--seed", "1", "--learning-rate", "0.1"],
        capture_output=True, text=True, timeout=300, check=True,
    )
    report = json.loads(result.stdout.strip().splitlines()[-1])
    return out, report


def serve_command(checkpoint_path: Path) -> list[str]:
    return ["node", str(SIDECAR_CLI), "serve",
            "--checkpoint", str(checkpoint_path)]


class TestProtocolConformance:
    def test_handshake(self, checkpoint):
        with SidecarClient(serve_command(checkpoint[0])) as client:
            assert client.scorer_name == "hashed-pair-scorer"

    def test_hundred_pair_batch_in_range(self, checkpoint):
        items = [PairItem(f"c{i}", f"p{i}", f"text alpha {i}",
                          f"text beta {i % 7}") for i in range(100)]
        cache = ScoreCache()
        with SidecarClient(serve_command(checkpoint[0])) as client:
            scores = external_score_batch(client, items, cache)
        assert len(scores) == 100
        assert all(0.0 <= s <= 1.0 for s in scores)
        assert len(cache.entries) == 100

    def test_identical_requests_identical_scores(self, checkpoint):
        with SidecarClient(serve_command(checkpoint[0])) as client:
            first = client.score_pairs([("p", "shared words", "shared words")])
            second = client.score_pairs([("p", "shared words", "shared words")])
        assert first == second

    def test_empty_texts_score_without_crash(self, checkpoint):
        with SidecarClient(serve_command(checkpoint[0])) as client:
            scores = client.score_pairs([("empty", "", "")])
        assert 0.0 <= scores["empty"] <= 1.0

    def test_malformed_request_recovery(self, checkpoint):
        # raw pipe conversation: the client never emits malformed requests,
        # so poke the process directly
        process = subprocess.Popen(
            serve_command(checkpoint[0]), stdin=subprocess.PIPE,
            stdout=subprocess.PIPE, text=True, bufsize=1)
        try:
            def send(line: str) -> dict:
                process.stdin.write(line + "\n")
                process.stdin.flush()
                return json.loads(process.stdout.readline())

            assert send(json.dumps({"type": "hello", "version": 1}))["type"] \
                == "ready"
            assert send("this is not json")["type"] == "error"
            assert send(json.dumps({"type": "mystery"}))["type"] == "error"
            missing = send(json.dumps({"type": "score", "pair_id": "x"}))
            assert missing["type"] == "error"
            assert missing["pair_id"] == "x"
            # the process must still serve after all of that
            result = send(json.dumps({"type": "score", "pair_id": "ok",
                                      "text_a": "a b", "text_b": "a b"}))
            assert result["type"] == "result"
            assert result["pair_id"] == "ok"
            assert 0.0 <= result["score"] <= 1.0
            process.stdin.write(json.dumps({"type": "bye"}) + "\n")
            process.stdin.flush()
            assert process.wait(timeout=10) == 0
        finally:
            if process.poll() is None:
                process.kill()


class TestHeadToHead:
    def test_sidecar_matches_or_beats_lexical_scorer(self, pair_file,
                                                     checkpoint):
        pairs = generate_planted_pairs(2000, seed=60)
        lexical = train_lexical_scorer(pairs, seed=61)
        lexical_auc = lexical.report.held_out_auc
        sidecar_auc = checkpoint[1]["heldOutAuc"]
        print(f"PASS-CHECK head-to-head: sidecar {sidecar_auc:.4f} "
              f"vs lexical {lexical_auc:.4f}")
        assert sidecar_auc >= lexical_auc

    def test_finetune_refuses_tiny_datasets(self, tmp_path):
        path = tmp_path / "tiny.jsonl"
        with open(path, "w", encoding="utf-8") as fh:
            write_pair_file(generate_planted_pairs(10, seed=1), fh)
        result = subprocess.run(
            ["node", str(SIDECAR_CLI), "finetune", "--pairs", str(path),
             "--out", str(tmp_path / "ck.json")],
            capture_output=True, text=True, timeout=60)
        assert result.returncode == 2
        assert "below minimum" in result.stderr


class TestPipelineWithExternalScorer:
    def test_full_run_through_wire_protocol(self, checkpoint, tmp_path):
        from branchcast.cli import main as cli_main

        corpus = tmp_path / "synth.jsonl"
        cli_main(["synth", "--output", str(corpus), "--seed", "301",
                  "--trees", "40", "--mean-size", "14",
                  "--context-signal", "0.9", "--branching-propensity", "0.3"])
        manifest = ExperimentManifest(
            corpus_path=str(corpus),
            output_dir=str(tmp_path / "run"),
            seed=302,
            scorer="external",
            sidecar_command=serve_command(checkpoint[0]),
            val_fraction=0.1,
            hidden_dim=30,
            dropout_rate=0.1,
            learning_rate=0.01,
            batch_size=64,
            max_epochs=60,
            patience=60,
        )
        result = run_experiment(manifest)
        assert result.metrics.auc is not None
        assert (tmp_path / "run" / "score_cache.jsonl").exists()
        cache_lines = (tmp_path / "run" / "score_cache.jsonl").read_text()
        assert '"scorer": "hashed-pair-scorer"' in cache_lines
