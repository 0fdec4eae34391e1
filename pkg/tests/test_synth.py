"""Synthetic corpus generator: validity, calibration, planted signals."""

from __future__ import annotations

import io

import pytest

from branchcast.synth import (
    SynthConfig,
    generate_corpus,
    generate_planted_pairs,
    write_corpus_jsonl,
)
from branchcast.trees import enumerate_instances, parse_corpus


def parse(records):
    buf = io.StringIO()
    write_corpus_jsonl(records, buf)
    buf.seek(0)
    return parse_corpus(buf)


class TestGenerateCorpus:
    def test_fifty_trees_all_parse(self):
        records, meta = generate_corpus(SynthConfig(n_trees=50, mean_size=20),
                                        seed=0)
        corpus = parse(records)
        assert len(corpus.trees) == 50
        assert not corpus.rejections

    def test_zero_propensity_means_no_branches(self):
        config = SynthConfig(n_trees=20, mean_size=15,
                             branching_propensity=0.0)
        records, meta = generate_corpus(config, seed=1)
        corpus = parse(records)
        for tree in corpus.trees:
            for instance in enumerate_instances(tree):
                assert instance.label == 0
        assert meta["positive_rate"] == 0.0

    def test_propensity_calibration(self):
        config = SynthConfig(n_trees=350, mean_size=38, min_size=25,
                             branching_propensity=0.3)
        records, meta = generate_corpus(config, seed=2)
        assert meta["instances"] >= 10_000
        assert meta["positive_rate"] == pytest.approx(0.3, abs=0.03)
        # metadata must agree with the label oracle
        corpus = parse(records)
        labels = [i.label for t in corpus.trees for i in enumerate_instances(t)]
        assert len(labels) == meta["instances"]
        assert sum(labels) == meta["positive_instances"]

    def test_degenerate_config_rejected(self):
        with pytest.raises(ValueError):
            generate_corpus(SynthConfig(mean_size=2, min_size=2), seed=0)
        with pytest.raises(ValueError):
            generate_corpus(SynthConfig(branching_propensity=1.5), seed=0)

    def test_deterministic(self):
        config = SynthConfig(n_trees=10, context_signal=0.5, text_signal=0.5)
        first, _ = generate_corpus(config, seed=9)
        second, _ = generate_corpus(config, seed=9)
        assert first == second

    def test_context_signal_marks_authors(self):
        config = SynthConfig(n_trees=30, mean_size=20, context_signal=1.0,
                             branching_propensity=0.3)
        records, _ = generate_corpus(config, seed=3)
        corpus = parse(records)
        for tree in corpus.trees:
            op = tree.node(1).author
            for instance in enumerate_instances(tree):
                author = tree.node(instance.new_node_index).author
                if instance.label == 1:
                    assert author == op
                else:
                    assert author != op


class TestPlantedPairs:
    def test_balanced_and_keyword_separable(self):
        pairs = generate_planted_pairs(500, seed=0)
        assert sum(p.label for p in pairs) == 250
        for pair in pairs:
            both = ("zephyrite" in pair.text_a.split()
                    and "zephyrite" in pair.text_b.split())
            assert both == bool(pair.label)

    def test_deterministic(self):
        assert generate_planted_pairs(100, seed=5) == \
            generate_planted_pairs(100, seed=5)
