"""Feature assembly: pooled reply-to scores plus structural/temporal context.

Each prediction instance becomes a fixed 32-value row: ten pooled order
statistics of reply-to scores against the prefix's leaf nodes, the same ten
against intermediate nodes, and twelve context features describing the tree
and the new comment's relation to it.  Scoring cost is bounded by a
relaxation window built from the most recently extended root-to-leaf paths;
context features are cheap and always use the full prefix.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from .errors import DomainError, InvalidInstanceError, MissingScoreError
from .trees import Comment, PrefixView

POOL_STAT_NAMES = (
    "max", "min", "mean", "median", "sum_top3", "mean_top3",
    "std", "p25", "p75", "p95",
)

CONTEXT_NAMES = (
    "replies_to_author_leaves",
    "replies_to_author_intermediates",
    "mean_unique_authors",
    "median_unique_authors",
    "mean_depth_leaves",
    "mean_depth_intermediates",
    "leaf_intermediate_ratio",
    "time_from_root",
    "mean_time_diff_leaves",
    "mean_time_diff_intermediates",
    "author_node_ratio",
    "is_op_author",
)

TEXT_FEATURE_NAMES = tuple(
    [f"leaf_{s}" for s in POOL_STAT_NAMES]
    + [f"imd_{s}" for s in POOL_STAT_NAMES]
)
FEATURE_NAMES = TEXT_FEATURE_NAMES + CONTEXT_NAMES

KEY_COLUMNS = ("conversation_id", "k", "label")


@dataclass(frozen=True)
class PoolBlock:
    """Ten order statistics over one group's reply-to scores.

    An empty group yields the all-zero sentinel block: true scores cluster
    away from exact zero after the sigmoid, so the classifier can tell the
    sentinel apart.
    """

    max: float
    min: float
    mean: float
    median: float
    sum_top3: float
    mean_top3: float
    std: float
    p25: float
    p75: float
    p95: float

    def as_tuple(self) -> tuple[float, ...]:
        return (self.max, self.min, self.mean, self.median, self.sum_top3,
                self.mean_top3, self.std, self.p25, self.p75, self.p95)


EMPTY_POOL = PoolBlock(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class ContextBlock:
    """Structural/temporal features of the prefix and the arriving comment."""

    replies_to_author_leaves: int
    replies_to_author_intermediates: int
    mean_unique_authors: float
    median_unique_authors: float
    mean_depth_leaves: float
    mean_depth_intermediates: float
    leaf_intermediate_ratio: float
    time_from_root: float
    mean_time_diff_leaves: float
    mean_time_diff_intermediates: float
    author_node_ratio: float
    is_op_author: int

    def as_tuple(self) -> tuple[float, ...]:
        return (
            float(self.replies_to_author_leaves),
            float(self.replies_to_author_intermediates),
            self.mean_unique_authors,
            self.median_unique_authors,
            self.mean_depth_leaves,
            self.mean_depth_intermediates,
            self.leaf_intermediate_ratio,
            self.time_from_root,
            self.mean_time_diff_leaves,
            self.mean_time_diff_intermediates,
            self.author_node_ratio,
            float(self.is_op_author),
        )


@dataclass(frozen=True)
class FeatureVector:
    """One instance row: leaf pool, intermediate pool, context; 32 values."""

    leaf_pool: PoolBlock
    intermediate_pool: PoolBlock
    context: ContextBlock

    def to_row(self) -> tuple[float, ...]:
        row = (self.leaf_pool.as_tuple()
               + self.intermediate_pool.as_tuple()
               + self.context.as_tuple())
        assert len(row) == len(FEATURE_NAMES)
        return row


def relaxation_window(prefix_view: PrefixView, n: int) -> frozenset[int]:
    """Nodes on the root-to-leaf paths of the n most recent leaves.

    A branch is identified with one leaf's root-to-leaf path, and its
    recency with the leaf's creation index.  The window always contains the
    root; with n at or above the leaf count it is the whole prefix.
    """
    if n < 1:
        raise ValueError("window size must be a positive integer")
    recent_leaves = sorted(prefix_view.leaves, reverse=True)[:n]
    window: set[int] = set()
    parent_index = prefix_view.tree.parent_index
    for leaf in recent_leaves:
        node = leaf
        while node not in window:
            window.add(node)
            if node == 1:
                break
            node = parent_index[node]
    return frozenset(window)


def pool(scores: Iterable[float]) -> PoolBlock:
    """Pool a multiset of scores in [0, 1] into ten order statistics.

    Percentiles interpolate linearly between closest ranks and the standard
    deviation is the population one, so a singleton pools to std 0.  With
    fewer than three scores the top-3 statistics use all available values.
    An empty multiset yields the all-zero sentinel block.
    """
    values = np.asarray(list(scores), dtype=float)
    if values.size == 0:
        return EMPTY_POOL
    if np.any(values < 0.0) or np.any(values > 1.0) or not np.all(np.isfinite(values)):
        raise DomainError("reply-to scores must lie in [0, 1]")
    top = np.sort(values)[::-1][:3]
    p25, p50, p75, p95 = np.percentile(values, [25, 50, 75, 95],
                                       method="linear")
    return PoolBlock(
        max=float(values.max()),
        min=float(values.min()),
        mean=float(values.mean()),
        median=float(p50),
        sum_top3=float(top.sum()),
        mean_top3=float(top.mean()),
        std=float(values.std()),
        p25=float(p25),
        p75=float(p75),
        p95=float(p95),
    )


def context_features(
    prefix_view: PrefixView,
    new_comment: Comment,
    new_author: str | None = None,
) -> ContextBlock:
    """Structural and temporal context of the prefix for the new comment.

    Unique-author statistics aggregate the distinct-author count of each
    tree level (root level included), which turns the scalar "how many
    authors" question into a distribution that a mean and a median can
    summarize.  Time differences are in seconds and may be large; scale
    handling is the classifier's concern.
    """
    if prefix_view.k < 2:
        raise InvalidInstanceError(
            "context features need a prefix of at least 2 nodes")
    tree = prefix_view.tree
    author = new_author if new_author is not None else new_comment.author
    k = prefix_view.k
    leaves = sorted(prefix_view.leaves)
    intermediates = sorted(prefix_view.intermediates)

    def replies_to_author(group: Sequence[int]) -> int:
        count = 0
        for u in group:
            parent = tree.parent_index.get(u)
            if parent is not None and tree.node(parent).author == author:
                count += 1
        return count

    authors_per_level: dict[int, set[str]] = {}
    for u in range(1, k + 1):
        authors_per_level.setdefault(tree.level(u), set()).add(
            tree.node(u).author)
    level_counts = [len(authors_per_level[lvl])
                    for lvl in sorted(authors_per_level)]

    leaf_depths = [tree.level(u) for u in leaves]
    imd_depths = [tree.level(u) for u in intermediates]
    new_time = float(new_comment.timestamp)
    leaf_dt = [new_time - tree.node(u).timestamp for u in leaves]
    imd_dt = [new_time - tree.node(u).timestamp for u in intermediates]
    authored = sum(1 for u in range(1, k + 1)
                   if tree.node(u).author == author)

    return ContextBlock(
        replies_to_author_leaves=replies_to_author(leaves),
        replies_to_author_intermediates=replies_to_author(intermediates),
        mean_unique_authors=float(np.mean(level_counts)),
        median_unique_authors=float(np.median(level_counts)),
        mean_depth_leaves=float(np.mean(leaf_depths)),
        mean_depth_intermediates=float(np.mean(imd_depths)),
        leaf_intermediate_ratio=len(leaves) / len(intermediates),
        time_from_root=new_time - tree.node(1).timestamp,
        mean_time_diff_leaves=float(np.mean(leaf_dt)),
        mean_time_diff_intermediates=float(np.mean(imd_dt)),
        author_node_ratio=authored / k,
        is_op_author=1 if tree.node(1).author == author else 0,
    )


def assemble_feature_vector(
    prefix_view: PrefixView,
    new_comment: Comment,
    scores_by_node: Mapping[int, float],
    window: Iterable[int],
) -> FeatureVector:
    """Build the full 32-value row for one instance.

    Pools are computed over the window's leaf and intermediate nodes; the
    context block always uses the full prefix because it makes no scorer
    calls.  A window node without a score raises MissingScoreError.
    """
    window_set = frozenset(window)
    missing = [u for u in sorted(window_set) if u not in scores_by_node]
    if missing:
        tree = prefix_view.tree
        pairs = [(new_comment.id, tree.node(u).id) for u in missing]
        raise MissingScoreError(pairs)
    leaf_scores = [scores_by_node[u]
                   for u in sorted(window_set & prefix_view.leaves)]
    imd_scores = [scores_by_node[u]
                  for u in sorted(window_set & prefix_view.intermediates)]
    return FeatureVector(
        leaf_pool=pool(leaf_scores),
        intermediate_pool=pool(imd_scores),
        context=context_features(prefix_view, new_comment),
    )


# ---------------------------------------------------------------------------
# Feature matrices


@dataclass
class FeatureMatrix:
    """Instance rows with their keys and labels, CSV round-trippable."""

    feature_names: tuple[str, ...]
    keys: list[tuple[str, int]]  # (conversation_id, k)
    labels: np.ndarray
    X: np.ndarray

    def __len__(self) -> int:
        return len(self.keys)

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.feature_names.index(name)]

    def select(self, names: Sequence[str]) -> "FeatureMatrix":
        """Column-mask the matrix (e.g. text-only or no-text variants)."""
        idx = [self.feature_names.index(n) for n in names]
        return FeatureMatrix(
            feature_names=tuple(names),
            keys=list(self.keys),
            labels=self.labels.copy(),
            X=self.X[:, idx].copy(),
        )

    def to_csv(self, fh: IO[str]) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(KEY_COLUMNS) + list(self.feature_names))
        for (conversation_id, k), label, row in zip(self.keys, self.labels,
                                                    self.X):
            writer.writerow([conversation_id, k, int(label)]
                            + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, fh: IO[str]) -> "FeatureMatrix":
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header[:3]) != KEY_COLUMNS:
            raise ValueError("feature CSV must start with key columns "
                             + ", ".join(KEY_COLUMNS))
        names = tuple(header[3:])
        keys, labels, rows = [], [], []
        for record in reader:
            if not record:
                continue
            keys.append((record[0], int(record[1])))
            labels.append(int(record[2]))
            rows.append([float(v) for v in record[3:]])
        return cls(
            feature_names=names,
            keys=keys,
            labels=np.array(labels, dtype=int),
            X=np.array(rows, dtype=float).reshape(len(rows), len(names)),
        )


def mask_columns(mask: str) -> tuple[str, ...]:
    """Feature-name subset for a named mask: full, text-only, or no-text."""
    if mask == "full":
        return FEATURE_NAMES
    if mask == "text-only":
        return TEXT_FEATURE_NAMES
    if mask == "no-text":
        return CONTEXT_NAMES
    raise ValueError(f"unknown feature mask {mask!r}")
