"""Tree construction, ingestion filters, prefix views, and the label oracle."""

from __future__ import annotations

import io
import json
import random
import statistics

import pytest

from branchcast.errors import (
    CorpusParseError,
    InvalidInstanceError,
    TreeValidationError,
)
from branchcast.trees import (
    Comment,
    ConversationTree,
    FilterConfig,
    branch_label,
    corpus_stats,
    deserialize_corpus,
    enumerate_instances,
    parse_corpus,
    prefix,
    serialize_corpus,
)

from conftest import jsonl_records, make_tree, random_parents


def brute_force_label(tree: ConversationTree, new_index: int) -> int:
    """Independent case split: 0 iff the new node replies to a leaf of the
    prefix, where leaves are recomputed by scanning every prefix edge."""
    k = new_index - 1
    replied_to = set()
    for child in range(2, k + 1):
        replied_to.add(tree.parent_index[child])
    leaves = set(range(1, k + 1)) - replied_to
    parent = tree.parent_index[new_index]
    return 0 if parent in leaves else 1


class TestParseCorpus:
    def test_minimal_valid_conversation(self):
        text = jsonl_records([("t1", [1, 2])])
        corpus = parse_corpus(io.StringIO(text), FilterConfig(min_comments=1))
        assert len(corpus.trees) == 1
        assert len(corpus.trees[0]) == 3

    def test_small_conversation_dropped_at_default_threshold(self):
        text = jsonl_records([("t1", [1] * 8)])  # 9 comments
        corpus = parse_corpus(io.StringIO(text))
        assert len(corpus.trees) == 0
        assert corpus.filtered_conversations == 1

    def test_ten_comments_survive_default_threshold(self):
        text = jsonl_records([("t1", [1] * 9)])
        corpus = parse_corpus(io.StringIO(text))
        assert len(corpus.trees) == 1

    def test_deleted_intermediate_drops_subtree(self):
        # 1 <- 2 <- 3(deleted) <- 4, plus 5 <- 2 and 6 <- 1; survivors
        # recomputed by hand: {1, 2, 5, 6}
        records = []
        parents = {2: 1, 3: 2, 4: 3, 5: 2, 6: 1}
        for j in range(1, 7):
            records.append(json.dumps({
                "id": f"c{j}",
                "conversation_id": "t1",
                "reply_to": None if j == 1 else f"c{parents[j]}",
                "speaker": f"a{j}",
                "timestamp": j,
                "text": "[deleted]" if j == 3 else f"body {j}",
            }))
        corpus = parse_corpus(io.StringIO("\n".join(records)),
                              FilterConfig(min_comments=1))
        assert len(corpus.trees) == 1
        survivors = {c.id for c in corpus.trees[0].nodes}
        assert survivors == {"c1", "c2", "c5", "c6"}
        assert corpus.dropped_comments == 2

    def test_bot_author_dropped(self):
        records = [
            json.dumps({"id": "c1", "conversation_id": "t", "reply_to": None,
                        "speaker": "alice", "timestamp": 0, "text": "hi"}),
            json.dumps({"id": "c2", "conversation_id": "t", "reply_to": "c1",
                        "speaker": "AutoModerator", "timestamp": 1,
                        "text": "mod notice"}),
            json.dumps({"id": "c3", "conversation_id": "t", "reply_to": "c1",
                        "speaker": "bob", "timestamp": 2, "text": "hello"}),
        ]
        corpus = parse_corpus(io.StringIO("\n".join(records)),
                              FilterConfig(min_comments=1))
        assert {c.id for c in corpus.trees[0].nodes} == {"c1", "c3"}

    def test_malformed_line_reports_line_number(self):
        text = jsonl_records([("t1", [1])]) + "{oops\n"
        with pytest.raises(CorpusParseError) as err:
            parse_corpus(io.StringIO(text), FilterConfig(min_comments=1))
        assert err.value.line_number == 3

    def test_missing_field_is_a_parse_error(self):
        with pytest.raises(CorpusParseError):
            parse_corpus(io.StringIO('{"id": "x"}\n'),
                         FilterConfig(min_comments=1))

    def test_orphan_parent_rejects_conversation(self):
        records = [
            json.dumps({"id": "c1", "conversation_id": "t", "reply_to": None,
                        "speaker": "a", "timestamp": 0, "text": "x"}),
            json.dumps({"id": "c2", "conversation_id": "t",
                        "reply_to": "ghost", "speaker": "b", "timestamp": 1,
                        "text": "y"}),
        ]
        corpus = parse_corpus(io.StringIO("\n".join(records)),
                              FilterConfig(min_comments=1))
        assert len(corpus.trees) == 0
        assert len(corpus.rejections) == 1
        assert "ghost" in corpus.rejections[0].reason

    def test_duplicate_id_rejects_conversation(self):
        records = [
            json.dumps({"id": "c1", "conversation_id": "t", "reply_to": None,
                        "speaker": "a", "timestamp": 0, "text": "x"}),
            json.dumps({"id": "c1", "conversation_id": "t", "reply_to": None,
                        "speaker": "b", "timestamp": 1, "text": "y"}),
        ]
        corpus = parse_corpus(io.StringIO("\n".join(records)),
                              FilterConfig(min_comments=1))
        assert len(corpus.trees) == 0
        assert "duplicate" in corpus.rejections[0].reason

    def test_multiple_roots_rejects_conversation(self):
        records = [
            json.dumps({"id": "c1", "conversation_id": "t", "reply_to": None,
                        "speaker": "a", "timestamp": 0, "text": "x"}),
            json.dumps({"id": "c2", "conversation_id": "t", "reply_to": None,
                        "speaker": "b", "timestamp": 1, "text": "y"}),
        ]
        corpus = parse_corpus(io.StringIO("\n".join(records)),
                              FilterConfig(min_comments=1))
        assert len(corpus.trees) == 0
        assert "root" in corpus.rejections[0].reason

    def test_parse_accepts_bytes(self):
        text = jsonl_records([("t1", [1, 2])])
        corpus = parse_corpus(io.BytesIO(text.encode()),
                              FilterConfig(min_comments=1))
        assert len(corpus.trees) == 1

    def test_unknown_fields_ignored(self):
        record = {"id": "c1", "conversation_id": "t", "reply_to": None,
                  "speaker": "a", "timestamp": 0, "text": "x", "score": 42}
        corpus = parse_corpus(io.StringIO(json.dumps(record)),
                              FilterConfig(min_comments=1))
        assert len(corpus.trees) == 1

    def test_parse_is_deterministic(self):
        specs = [(f"t{i}", random_parents(random.Random(i), 12))
                 for i in range(10)]
        text = jsonl_records(specs)
        first = parse_corpus(io.StringIO(text))
        second = parse_corpus(io.StringIO(text))
        assert serialize_corpus(first) == serialize_corpus(second)

    def test_corpus_roundtrip(self):
        text = jsonl_records([("t1", [1, 2, 2, 1]), ("t2", [1, 1, 3])])
        corpus = parse_corpus(io.StringIO(text), FilterConfig(min_comments=1))
        payload = serialize_corpus(corpus)
        again = deserialize_corpus(json.loads(json.dumps(payload)))
        assert serialize_corpus(again) == payload


class TestTreeValidation:
    def test_child_sorting_before_parent_rejected(self):
        comments = [
            Comment("c1", "t", None, "a", 100, "root"),
            Comment("c2", "t", "c1", "b", 50, "early child"),
        ]
        with pytest.raises(TreeValidationError):
            ConversationTree.build(comments)

    def test_timestamp_tie_broken_by_id(self):
        comments = [
            Comment("b", "t", "a", "x", 5, "child"),
            Comment("a", "t", None, "y", 5, "root"),
        ]
        tree = ConversationTree.build(comments)
        assert tree.node(1).id == "a"
        assert tree.parent_index == {2: 1}

    def test_levels(self):
        tree = make_tree([1, 2, 2, 1])
        assert tree.levels == (0, 1, 2, 2, 1)
        assert tree.depth() == 2


class TestPrefix:
    def test_chain_partition(self, chain3):
        view = prefix(chain3, 3)
        assert view.leaves == {3}
        assert view.intermediates == {1, 2}

    def test_star_partition(self, star3):
        view = prefix(star3, 3)
        assert view.leaves == {2, 3}
        assert view.intermediates == {1}

    def test_chain_with_side_reply(self):
        tree = make_tree([1, 2, 2])  # 4 replies to 2
        view = prefix(tree, 4)
        assert view.leaves == {3, 4}
        assert view.intermediates == {1, 2}

    def test_out_of_range(self, chain3):
        with pytest.raises(IndexError):
            prefix(chain3, 0)
        with pytest.raises(IndexError):
            prefix(chain3, 4)

    def test_partition_law_random_trees(self):
        rng = random.Random(42)
        for _ in range(50):
            size = rng.randint(2, 40)
            tree = make_tree(random_parents(rng, size))
            for k in range(1, size + 1):
                view = prefix(tree, k)
                assert view.leaves | view.intermediates == set(range(1, k + 1))
                assert not view.leaves & view.intermediates
                for u in view.intermediates:
                    assert any(tree.parent_index[c] == u
                               for c in range(2, k + 1))

    def test_topological_order_random_trees(self):
        rng = random.Random(7)
        for _ in range(25):
            tree = make_tree(random_parents(rng, rng.randint(2, 60)))
            for child, parent in tree.parent_index.items():
                assert parent < child


class TestBranchLabel:
    def test_reply_to_leaf(self):
        tree = make_tree([1, 2, 3])
        assert branch_label(tree, 4) == 0

    def test_reply_to_intermediate(self):
        tree = make_tree([1, 2, 2])
        assert branch_label(tree, 4) == 1

    def test_star_child_is_leaf(self):
        tree = make_tree([1, 1, 2])
        assert branch_label(tree, 4) == 0

    def test_root_is_invalid_instance(self, chain3):
        with pytest.raises(InvalidInstanceError):
            branch_label(chain3, 1)

    def test_matches_brute_force_on_random_trees(self):
        rng = random.Random(1234)
        for _ in range(60):
            size = rng.randint(3, 200)
            tree = make_tree(random_parents(rng, size))
            for j in range(2, size + 1):
                assert branch_label(tree, j) == brute_force_label(tree, j)


class TestEnumerateInstances:
    def test_chain_has_one_instance(self, chain3):
        instances = enumerate_instances(chain3)
        assert len(instances) == 1
        assert instances[0].new_node_index == 3
        assert instances[0].label == 0
        assert instances[0].k == 2
        assert instances[0].level == 2

    def test_star_has_no_instances(self):
        tree = make_tree([1, 1, 1])
        assert enumerate_instances(tree) == []

    def test_ten_node_tree_matches_brute_force(self):
        rng = random.Random(99)
        tree = make_tree(random_parents(rng, 10))
        instances = enumerate_instances(tree)
        expected = [(j, brute_force_label(tree, j))
                    for j in range(2, 11) if tree.level(j) >= 2]
        assert [(i.new_node_index, i.label) for i in instances] == expected

    def test_all_levels_at_least_two(self):
        rng = random.Random(5)
        tree = make_tree(random_parents(rng, 50))
        for instance in enumerate_instances(tree):
            assert tree.level(instance.new_node_index) >= 2


class TestCorpusStats:
    def test_single_chain(self, chain3):
        from branchcast.trees import Corpus

        stats = corpus_stats(Corpus(trees=[chain3]))
        assert stats.mean_nodes == 3
        assert stats.mean_depth == 2

    def test_two_trees_mean_median(self):
        from branchcast.trees import Corpus

        corpus = Corpus(trees=[make_tree([1, 2], "a"),
                               make_tree([1, 2, 3, 4], "b")])
        stats = corpus_stats(corpus)
        assert stats.mean_nodes == 4
        assert stats.median_nodes == 4

    def test_empty_corpus_errors(self):
        from branchcast.trees import Corpus

        with pytest.raises(ValueError):
            corpus_stats(Corpus())

    def test_matches_independent_tally(self):
        # one-pass tally over raw structures, sharing no code with the
        # library implementation
        from branchcast.trees import Corpus

        rng = random.Random(31)
        trees = [make_tree(random_parents(rng, rng.randint(3, 30)), f"t{i}")
                 for i in range(50)]
        stats = corpus_stats(Corpus(trees=trees))

        sizes, depths, authors, branches = [], [], [], []
        for tree in trees:
            m = len(tree.nodes)
            sizes.append(m)
            level = {1: 0}
            for j in range(2, m + 1):
                level[j] = level[tree.parent_index[j]] + 1
            depths.append(max(level.values()))
            authors.append(len({c.author for c in tree.nodes}))
            count = 0
            seen_children: dict[int, int] = {}
            for j in range(2, m + 1):
                parent = tree.parent_index[j]
                if level[j] >= 2 and seen_children.get(parent, 0) > 0:
                    count += 1
                seen_children[parent] = seen_children.get(parent, 0) + 1
            branches.append(count)
        assert stats.mean_nodes == pytest.approx(statistics.fmean(sizes))
        assert stats.median_nodes == pytest.approx(statistics.median(sizes))
        assert stats.mean_depth == pytest.approx(statistics.fmean(depths))
        assert stats.median_depth == pytest.approx(statistics.median(depths))
        assert stats.mean_unique_authors == pytest.approx(
            statistics.fmean(authors))
        assert stats.mean_branches == pytest.approx(statistics.fmean(branches))
        assert stats.comments == sum(sizes)

    def test_report_keys(self, chain3):
        from branchcast.trees import Corpus

        payload = corpus_stats(Corpus(trees=[chain3])).to_json()
        for key in ("# Conversations", "# Comments", "Mean # nodes",
                    "Med. # nodes", "Mean depth", "Med. depth", "# Authors",
                    "# Branches"):
            assert key in payload
