"""Synthetic conversation corpora with controllable planted signals.

Desk-scale testing needs corpora whose branching behaviour is known by
construction.  Trees grow node by node; each arriving node replies to the
root, to a leaf, or to an intermediate node, and the intermediate-reply
probability is the branching propensity.  Two optional signals make the
label predictable: a context signal ties branching to the author's history
in the tree, and a text signal makes replies reuse a rare topic token of
their parent so reply-to scores carry information.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from typing import IO

import numpy as np

from .scoring import ReplyPair


@dataclass(frozen=True)
class SynthConfig:
    """Generator knobs; signal strengths are probabilities in [0, 1]."""

    n_trees: int = 50
    mean_size: float = 20.0
    min_size: int = 10
    branching_propensity: float = 0.25
    root_reply_prob: float = 0.15
    n_authors: int = 20
    context_signal: float = 0.0
    text_signal: float = 0.0
    common_vocab: int = 60
    words_per_text: int = 8

    def validate(self) -> None:
        if self.min_size < 3 or self.mean_size < 3:
            raise ValueError("tree sizes below 3 are degenerate")
        if self.n_trees < 1:
            raise ValueError("need at least one tree")
        for name in ("branching_propensity", "root_reply_prob",
                     "context_signal", "text_signal"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


def _text(rng: np.random.Generator, config: SynthConfig,
          topic_token: str, parent_topic: str | None) -> str:
    words = [f"word{rng.integers(config.common_vocab)}"
             for _ in range(config.words_per_text)]
    words.append(topic_token)
    if parent_topic is not None:
        words.append(parent_topic)
    return " ".join(words)


def generate_corpus(config: SynthConfig, seed: int = 0) -> tuple[list[dict], dict]:
    """Generate JSONL-ready comment records plus generation metadata.

    The branching propensity is exactly the positive rate among label
    instances: whenever the branch coin lands heads but no non-root
    intermediate exists yet, the node replies to the root instead, which
    keeps it out of the instance set entirely.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    records: list[dict] = []
    instance_count = 0
    positive_count = 0

    for t in range(config.n_trees):
        conversation_id = f"synth{t:04d}"
        size = config.min_size + int(rng.poisson(max(config.mean_size
                                                     - config.min_size, 0.0)))
        op = f"op{t:04d}"
        # one alphanumeric run per node so scorer tokenization keeps it whole
        topic = [f"topic{t:04d}x{j:03d}" for j in range(size + 1)]

        parents = [0] * (size + 1)  # 1-based; parents[j] for node j
        levels = [0] * (size + 1)
        authors = [""] * (size + 1)
        has_child = [False] * (size + 1)
        timestamp = 1_000_000 + t * 100_000
        fresh_counter = 0

        def random_author() -> str:
            return f"user{int(rng.integers(config.n_authors)):03d}"

        for j in range(1, size + 1):
            timestamp += int(rng.integers(5, 600))
            if j == 1:
                parent, author = 0, op
            elif j == 2:
                parent = 1
                author = random_author()
            else:
                if rng.random() < config.root_reply_prob:
                    parent = 1
                else:
                    branch = rng.random() < config.branching_propensity
                    if branch:
                        candidates = [u for u in range(2, j)
                                      if has_child[u]]
                    else:
                        candidates = [u for u in range(2, j)
                                      if not has_child[u]]
                    if candidates:
                        parent = int(candidates[rng.integers(len(candidates))])
                    else:
                        parent = 1  # stays out of the instance set
                if parent != 1:
                    label = 1 if has_child[parent] else 0
                    instance_count += 1
                    positive_count += label
                    if rng.random() < config.context_signal:
                        if label == 1:
                            author = op
                        else:
                            fresh_counter += 1
                            author = f"fresh_{conversation_id}_{fresh_counter}"
                    else:
                        author = random_author()
                else:
                    author = random_author()

            parents[j] = parent
            levels[j] = 0 if parent == 0 else levels[parent] + 1
            authors[j] = author
            if parent:
                has_child[parent] = True

            parent_topic = None
            if parent and rng.random() < config.text_signal:
                parent_topic = topic[parent]
            records.append({
                "id": f"{conversation_id}_c{j:04d}",
                "conversation_id": conversation_id,
                "reply_to": None if parent == 0 else f"{conversation_id}_c{parent:04d}",
                "speaker": author,
                "timestamp": timestamp,
                "text": _text(rng, config, topic[j], parent_topic),
            })

    metadata = {
        "generator": "branchcast-synth",
        "seed": seed,
        "config": asdict(config),
        "instances": instance_count,
        "positive_instances": positive_count,
        "positive_rate": (positive_count / instance_count
                          if instance_count else None),
    }
    return records, metadata


def write_corpus_jsonl(records: list[dict], fh: IO[str]) -> None:
    for record in records:
        fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def generate_planted_pairs(
    n_pairs: int, seed: int = 0, keyword: str = "zephyrite",
    common_vocab: int = 120, words_per_text: int = 10,
) -> list[ReplyPair]:
    """Balanced reply pairs where positives share a planted rare keyword.

    A separable benchmark for reply-to scorers: both sides of a positive
    pair contain the keyword; negative pairs never do.
    """
    rng = np.random.default_rng(seed)

    def words() -> list[str]:
        return [f"word{int(rng.integers(common_vocab))}"
                for _ in range(words_per_text)]

    pairs = []
    for i in range(n_pairs):
        label = i % 2
        side_a, side_b = words(), words()
        if label:
            side_a.insert(int(rng.integers(len(side_a) + 1)), keyword)
            side_b.insert(int(rng.integers(len(side_b) + 1)), keyword)
        pairs.append(ReplyPair(
            text_a=" ".join(side_a),
            text_b=" ".join(side_b),
            label=label,
            conversation_id=f"pairgen{i // 50:03d}",
        ))
    return pairs
