"""Shared fixtures: tiny hand-built trees and random tree generators."""

from __future__ import annotations

import json
import random

import pytest

from branchcast.trees import Comment, ConversationTree


def make_tree(parents: list[int], conversation_id: str = "conv",
              authors: list[str] | None = None,
              timestamps: list[int] | None = None,
              texts: list[str] | None = None) -> ConversationTree:
    """Build a tree from a parent list: parents[j-2] is node j's parent."""
    m = len(parents) + 1
    authors = authors or [f"a{j}" for j in range(1, m + 1)]
    timestamps = timestamps or [10 * j for j in range(m)]
    texts = texts or [f"text of node {j}" for j in range(1, m + 1)]
    comments = [
        Comment(
            id=f"{conversation_id}_c{j:03d}",
            conversation_id=conversation_id,
            parent_id=None if j == 1 else f"{conversation_id}_c{parents[j - 2]:03d}",
            author=authors[j - 1],
            timestamp=timestamps[j - 1],
            text=texts[j - 1],
        )
        for j in range(1, m + 1)
    ]
    return ConversationTree.build(comments)


def random_parents(rng: random.Random, size: int) -> list[int]:
    """Random parent list for a tree of ``size`` nodes."""
    return [rng.randint(1, j - 1) for j in range(2, size + 1)]


def jsonl_records(tree_specs: list[tuple[str, list[int]]]) -> str:
    """Raw JSONL text for a list of (conversation_id, parents) trees."""
    lines = []
    for conversation_id, parents in tree_specs:
        m = len(parents) + 1
        for j in range(1, m + 1):
            lines.append(json.dumps({
                "id": f"{conversation_id}_c{j:03d}",
                "conversation_id": conversation_id,
                "reply_to": None if j == 1 else
                    f"{conversation_id}_c{parents[j - 2]:03d}",
                "speaker": f"a{j}",
                "timestamp": 10 * (j - 1),
                "text": f"text {conversation_id} {j}",
            }))
    return "\n".join(lines) + "\n"


@pytest.fixture
def chain3() -> ConversationTree:
    return make_tree([1, 2])


@pytest.fixture
def star3() -> ConversationTree:
    return make_tree([1, 1])
