"""Conversation trees: ingestion, validation, prefix views, and branch labels.

A conversation is a reply tree whose nodes are time-ordered comments.  Node
indices are 1-based creation indices: node 1 is the root post and node j was
created before node j+1.  A prefix view of the first k nodes partitions them
into leaves (no replies yet) and intermediates (at least one reply).  A new
comment "branches" the conversation when it replies to an intermediate node.
"""

from __future__ import annotations

import json
import logging
import statistics
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Union

from .errors import (
    CorpusParseError,
    InvalidInstanceError,
    TreeValidationError,
)

logger = logging.getLogger(__name__)

DELETION_MARKERS = ("[deleted]", "[removed]")
DEFAULT_BOT_AUTHORS = ("DeltaBot", "AutoModerator")


@dataclass(frozen=True)
class Comment:
    """One message of a conversation.

    ``parent_id`` is None exactly for the root post.  ``timestamp`` is in
    seconds since the epoch.
    """

    id: str
    conversation_id: str
    parent_id: str | None
    author: str
    timestamp: int
    text: str


@dataclass(frozen=True)
class FilterConfig:
    """Ingestion filter: deletion markers, bot authors, minimum size."""

    min_comments: int = 10
    deletion_markers: tuple[str, ...] = DELETION_MARKERS
    bot_authors: tuple[str, ...] = DEFAULT_BOT_AUTHORS


@dataclass(frozen=True)
class ConversationRejection:
    """Diagnostic for a conversation that failed validation."""

    conversation_id: str
    reason: str


class ConversationTree:
    """A validated reply tree with nodes in creation order.

    Nodes are addressed by 1-based creation index.  ``parent_index`` maps a
    child index to its parent index (the root has no entry), ``level`` gives
    each node's depth with the root at level 0, and ``children`` lists child
    indices in creation order.  Instances are immutable after construction
    and safe for concurrent reads.
    """

    __slots__ = ("conversation_id", "nodes", "parent_index", "children", "levels")

    def __init__(self, conversation_id: str, nodes: tuple[Comment, ...],
                 parent_index: dict[int, int]):
        self.conversation_id = conversation_id
        self.nodes = nodes
        self.parent_index = parent_index
        children: dict[int, list[int]] = {i: [] for i in range(1, len(nodes) + 1)}
        for child, parent in parent_index.items():
            children[parent].append(child)
        self.children = {i: tuple(sorted(cs)) for i, cs in children.items()}
        levels = [0] * (len(nodes) + 1)
        for j in range(2, len(nodes) + 1):
            levels[j] = levels[parent_index[j]] + 1
        self.levels = tuple(levels[1:])

    @classmethod
    def build(cls, comments: Iterable[Comment]) -> "ConversationTree":
        """Order comments by (timestamp, id) and validate the reply tree.

        Raises TreeValidationError for duplicate ids, missing or multiple
        roots, orphan parent references, cycles, or a reply that sorts
        before its parent.
        """
        ordered = sorted(comments, key=lambda c: (c.timestamp, c.id))
        if not ordered:
            raise TreeValidationError("conversation has no comments")
        conversation_id = ordered[0].conversation_id

        position: dict[str, int] = {}
        for pos, comment in enumerate(ordered, start=1):
            if comment.id in position:
                raise TreeValidationError(f"duplicate comment id {comment.id!r}")
            if comment.conversation_id != conversation_id:
                raise TreeValidationError(
                    f"comment {comment.id!r} belongs to another conversation")
            position[comment.id] = pos

        roots = [c for c in ordered if c.parent_id is None]
        if not roots:
            raise TreeValidationError("conversation has no root comment")
        if len(roots) > 1:
            ids = ", ".join(repr(c.id) for c in roots)
            raise TreeValidationError(f"multiple roots: {ids}")
        if ordered[0].parent_id is not None:
            raise TreeValidationError(
                f"root {roots[0].id!r} is not the earliest comment")

        parent_index: dict[int, int] = {}
        for pos, comment in enumerate(ordered, start=1):
            if comment.parent_id is None:
                continue
            parent_pos = position.get(comment.parent_id)
            if parent_pos is None:
                raise TreeValidationError(
                    f"comment {comment.id!r} replies to unknown id "
                    f"{comment.parent_id!r}")
            if parent_pos >= pos:
                raise TreeValidationError(
                    f"comment {comment.id!r} sorts before its parent "
                    f"{comment.parent_id!r}")
            parent_index[pos] = parent_pos

        # parent_pos < pos for every edge rules out cycles and guarantees
        # every node reaches the root, so the tree is connected and acyclic.
        return cls(conversation_id, tuple(ordered), parent_index)

    def __len__(self) -> int:
        return len(self.nodes)

    def node(self, index: int) -> Comment:
        """Return the comment at a 1-based creation index."""
        if not 1 <= index <= len(self.nodes):
            raise IndexError(f"node index {index} out of range 1..{len(self.nodes)}")
        return self.nodes[index - 1]

    def level(self, index: int) -> int:
        """Depth of a node; the root is at level 0."""
        if not 1 <= index <= len(self.nodes):
            raise IndexError(f"node index {index} out of range 1..{len(self.nodes)}")
        return self.levels[index - 1]

    def depth(self) -> int:
        """Depth of the tree: the maximum node level."""
        return max(self.levels)


@dataclass(frozen=True)
class PrefixView:
    """The sub-tree of the first k nodes with its leaf/intermediate split.

    ``leaves`` and ``intermediates`` partition {1..k}: an index is
    intermediate exactly when some node with index <= k replies to it.
    """

    tree: ConversationTree
    k: int
    leaves: frozenset[int]
    intermediates: frozenset[int]


@dataclass(frozen=True)
class BranchInstance:
    """One prediction instance: node k+1 arriving on top of the k-prefix.

    ``label`` is 1 when the new node replies to an intermediate node of the
    prefix.  Only nodes at level >= 2 become instances; the root is not a
    branch and first-level comments branch by definition.
    """

    conversation_id: str
    k: int
    new_node_index: int
    label: int
    level: int


@dataclass
class Corpus:
    """Validated conversation trees plus ingestion diagnostics."""

    trees: list[ConversationTree] = field(default_factory=list)
    rejections: list[ConversationRejection] = field(default_factory=list)
    dropped_comments: int = 0
    filtered_conversations: int = 0

    def __len__(self) -> int:
        return len(self.trees)

    def __iter__(self) -> Iterator[ConversationTree]:
        return iter(self.trees)

    def conversation_ids(self) -> list[str]:
        return [t.conversation_id for t in self.trees]


REQUIRED_FIELDS = ("id", "conversation_id", "speaker", "timestamp", "text")


def _comment_from_record(record: dict, line_number: int) -> Comment:
    for name in REQUIRED_FIELDS:
        if name not in record:
            raise CorpusParseError(line_number, f"missing field {name!r}")
    timestamp = record["timestamp"]
    if isinstance(timestamp, bool) or not isinstance(timestamp, (int, float)):
        raise CorpusParseError(line_number, "timestamp must be a number")
    reply_to = record.get("reply_to")
    if reply_to is not None and not isinstance(reply_to, str):
        raise CorpusParseError(line_number, "reply_to must be a string or null")
    return Comment(
        id=str(record["id"]),
        conversation_id=str(record["conversation_id"]),
        parent_id=reply_to,
        author=str(record["speaker"]),
        timestamp=int(timestamp),
        text=str(record["text"]),
    )


def _drop_filtered_subtrees(
    comments: list[Comment], config: FilterConfig
) -> tuple[list[Comment], int]:
    """Remove deleted/bot comments together with their whole subtrees.

    Splicing orphaned children onto the grandparent would fabricate reply
    edges that were never made, so descendants of a dropped comment are
    dropped as well.  Returns (survivors, dropped_count).
    """
    flagged = {
        c.id
        for c in comments
        if c.text in config.deletion_markers or c.author in config.bot_authors
    }
    if not flagged:
        return comments, 0
    children: dict[str, list[str]] = {}
    for c in comments:
        if c.parent_id is not None:
            children.setdefault(c.parent_id, []).append(c.id)
    dropped = set()
    stack = list(flagged)
    while stack:
        cid = stack.pop()
        if cid in dropped:
            continue
        dropped.add(cid)
        stack.extend(children.get(cid, ()))
    survivors = [c for c in comments if c.id not in dropped]
    return survivors, len(comments) - len(survivors)


def parse_corpus(
    stream: Union[IO[str], IO[bytes], Iterable[str], Iterable[bytes]],
    filter_config: FilterConfig | None = None,
) -> Corpus:
    """Parse a JSONL stream of comments into validated conversation trees.

    Each line is one JSON object with fields id, conversation_id, reply_to
    (null or absent for the root), speaker, timestamp, and text; unknown
    fields are ignored.  Deleted comments, bot comments, and their subtrees
    are dropped, then conversations smaller than ``min_comments`` are
    filtered out.  Conversations that fail tree validation are recorded in
    ``Corpus.rejections`` instead of aborting the parse.  A malformed JSON
    line raises CorpusParseError with the line number.
    """
    config = filter_config or FilterConfig()
    by_conversation: dict[str, list[Comment]] = {}
    for line_number, raw in enumerate(stream, start=1):
        if isinstance(raw, bytes):
            try:
                raw = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CorpusParseError(line_number, f"invalid UTF-8: {exc}") from exc
        line = raw.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusParseError(line_number, f"invalid JSON: {exc.msg}") from exc
        if not isinstance(record, dict):
            raise CorpusParseError(line_number, "record is not a JSON object")
        comment = _comment_from_record(record, line_number)
        by_conversation.setdefault(comment.conversation_id, []).append(comment)

    corpus = Corpus()
    for conversation_id, comments in by_conversation.items():
        ids = [c.id for c in comments]
        if len(set(ids)) != len(ids):
            dup = next(i for i in ids if ids.count(i) > 1)
            corpus.rejections.append(ConversationRejection(
                conversation_id, f"duplicate comment id {dup!r}"))
            continue
        survivors, dropped = _drop_filtered_subtrees(comments, config)
        corpus.dropped_comments += dropped
        if len(survivors) < config.min_comments:
            corpus.filtered_conversations += 1
            continue
        try:
            tree = ConversationTree.build(survivors)
        except TreeValidationError as exc:
            corpus.rejections.append(
                ConversationRejection(conversation_id, str(exc)))
            continue
        corpus.trees.append(tree)
    if corpus.rejections:
        logger.info("rejected %d conversation(s) during parsing",
                    len(corpus.rejections))
    return corpus


def prefix(tree: ConversationTree, k: int) -> PrefixView:
    """Return the k-node prefix view with its leaf/intermediate partition."""
    if not 1 <= k <= len(tree):
        raise IndexError(f"prefix size {k} out of range 1..{len(tree)}")
    intermediates = frozenset(tree.parent_index[j] for j in range(2, k + 1))
    leaves = frozenset(range(1, k + 1)) - intermediates
    return PrefixView(tree=tree, k=k, leaves=leaves, intermediates=intermediates)


def branch_label(tree: ConversationTree, new_index: int) -> int:
    """Label for node ``new_index`` arriving on the (new_index-1)-prefix.

    Returns 1 when the parent already has a reply in the prefix (it is an
    intermediate node), 0 when the parent is still a leaf.  The root is not
    a valid instance.
    """
    if new_index == 1:
        raise InvalidInstanceError("the root comment is not a branch instance")
    if not 2 <= new_index <= len(tree):
        raise IndexError(
            f"node index {new_index} out of range 2..{len(tree)}")
    parent = tree.parent_index[new_index]
    has_earlier_reply = any(c < new_index for c in tree.children[parent])
    return 1 if has_earlier_reply else 0


def enumerate_instances(tree: ConversationTree) -> list[BranchInstance]:
    """All branch-prediction instances of a tree, in creation order.

    One instance per node at level >= 2; the root and first-level comments
    are excluded because first-level comments branch by definition.
    """
    instances = []
    for j in range(2, len(tree) + 1):
        level = tree.level(j)
        if level < 2:
            continue
        instances.append(BranchInstance(
            conversation_id=tree.conversation_id,
            k=j - 1,
            new_node_index=j,
            label=branch_label(tree, j),
            level=level,
        ))
    return instances


@dataclass(frozen=True)
class StatsReport:
    """Per-corpus summary statistics over conversations.

    ``mean_branches`` counts level->=2 comments that replied to an
    intermediate node; ``mean_branches_with_first_level`` additionally
    counts first-level comments beyond the first.  Both are reported because
    either reading is defensible.  ``mean_children_per_intermediate`` is the
    mean number of replies per already-replied-to node; it is deliberately
    not called a branching factor.
    """

    conversations: int
    comments: int
    mean_nodes: float
    median_nodes: float
    mean_depth: float
    median_depth: float
    mean_unique_authors: float
    mean_branches: float
    mean_branches_with_first_level: float
    mean_leaf_ratio: float
    mean_children_per_intermediate: float

    def to_json(self) -> dict:
        """Serialize with the conventional report row names as keys."""
        return {
            "# Conversations": self.conversations,
            "# Comments": self.comments,
            "Mean # nodes": self.mean_nodes,
            "Med. # nodes": self.median_nodes,
            "Mean depth": self.mean_depth,
            "Med. depth": self.median_depth,
            "# Authors": self.mean_unique_authors,
            "# Branches": self.mean_branches,
            "# Branches (incl. extra first-level)":
                self.mean_branches_with_first_level,
            "Leaf / node ratio": self.mean_leaf_ratio,
            "Mean children per intermediate":
                self.mean_children_per_intermediate,
        }


def corpus_stats(corpus: Corpus) -> StatsReport:
    """Aggregate per-conversation statistics over a non-empty corpus."""
    if not corpus.trees:
        raise ValueError("corpus has no conversations")
    node_counts, depths, author_counts = [], [], []
    branches, branches_first, leaf_ratios, children_per_imd = [], [], [], []
    for tree in corpus.trees:
        m = len(tree)
        node_counts.append(m)
        depths.append(tree.depth())
        author_counts.append(len({c.author for c in tree.nodes}))
        level2_branches = sum(i.label for i in enumerate_instances(tree))
        first_level = sum(1 for j in range(1, m + 1) if tree.level(j) == 1)
        branches.append(level2_branches)
        branches_first.append(level2_branches + max(0, first_level - 1))
        full = prefix(tree, m)
        leaf_ratios.append(len(full.leaves) / m)
        if full.intermediates:
            children_per_imd.append((m - 1) / len(full.intermediates))
        else:
            children_per_imd.append(0.0)
    return StatsReport(
        conversations=len(corpus.trees),
        comments=sum(node_counts),
        mean_nodes=statistics.fmean(node_counts),
        median_nodes=float(statistics.median(node_counts)),
        mean_depth=statistics.fmean(depths),
        median_depth=float(statistics.median(depths)),
        mean_unique_authors=statistics.fmean(author_counts),
        mean_branches=statistics.fmean(branches),
        mean_branches_with_first_level=statistics.fmean(branches_first),
        mean_leaf_ratio=statistics.fmean(leaf_ratios),
        mean_children_per_intermediate=statistics.fmean(children_per_imd),
    )


def serialize_corpus(corpus: Corpus) -> dict:
    """JSON-ready representation of a validated corpus."""
    return {
        "format": "branchcast-corpus",
        "version": 1,
        "conversations": [
            {
                "conversation_id": tree.conversation_id,
                "comments": [
                    {
                        "id": c.id,
                        "conversation_id": c.conversation_id,
                        "reply_to": c.parent_id,
                        "speaker": c.author,
                        "timestamp": c.timestamp,
                        "text": c.text,
                    }
                    for c in tree.nodes
                ],
            }
            for tree in corpus.trees
        ],
        "rejections": [
            {"conversation_id": r.conversation_id, "reason": r.reason}
            for r in corpus.rejections
        ],
        "dropped_comments": corpus.dropped_comments,
        "filtered_conversations": corpus.filtered_conversations,
    }


def deserialize_corpus(payload: dict) -> Corpus:
    """Rebuild a corpus from ``serialize_corpus`` output, re-validating."""
    if payload.get("format") != "branchcast-corpus":
        raise ValueError("not a branchcast corpus artifact")
    corpus = Corpus(
        dropped_comments=payload.get("dropped_comments", 0),
        filtered_conversations=payload.get("filtered_conversations", 0),
    )
    for conv in payload["conversations"]:
        comments = [
            Comment(
                id=rec["id"],
                conversation_id=rec["conversation_id"],
                parent_id=rec.get("reply_to"),
                author=rec["speaker"],
                timestamp=int(rec["timestamp"]),
                text=rec["text"],
            )
            for rec in conv["comments"]
        ]
        corpus.trees.append(ConversationTree.build(comments))
    for rej in payload.get("rejections", []):
        corpus.rejections.append(
            ConversationRejection(rej["conversation_id"], rej["reason"]))
    return corpus
