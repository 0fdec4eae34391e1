"""Reply-to scoring: pair datasets, the built-in lexical scorer, and caches.

The pipeline needs a probability that comment b is a direct reply to
comment a.  Direct-reply edges give positive pairs; unconnected
same-conversation pairs give negatives.  The built-in scorer is a logistic
regression over four deterministic pair-similarity features; an external
scorer process can stand in behind the same interface (see
``sidecar_client``), and scores can be frozen into a replayable cache.
"""

from __future__ import annotations

import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import IO, Iterable, Protocol, Sequence

import numpy as np

from .errors import DomainError, MissingScoreError, TrainingError
from .trees import Comment, ConversationTree, Corpus, PrefixView

logger = logging.getLogger(__name__)

TOKEN_RUN = re.compile(r"[0-9a-z]+")
MAX_TEXT_TOKENS = 512  # scorers only ever see the first 512 whitespace tokens
RARE_DF_MAX = 3

PAIR_FEATURE_NAMES = (
    "tfidf_cosine",
    "token_jaccard",
    "length_ratio",
    "shared_rare_tokens",
)


@dataclass(frozen=True)
class ReplyPair:
    """A candidate (parent text, child text) pair with its reply label."""

    text_a: str
    text_b: str
    label: int
    conversation_id: str = ""


@dataclass(frozen=True)
class PairItem:
    """One scoring request: ids for caching, texts for the scorer."""

    child_id: str
    parent_id: str
    text_a: str  # candidate parent
    text_b: str  # candidate child


class CandidateScorer(Protocol):
    """Anything that maps pair items to reply-to scores in [0, 1]."""

    name: str

    def score_batch(self, items: Sequence[PairItem]) -> list[float]: ...


def truncate_text(text: str, max_tokens: int = MAX_TEXT_TOKENS) -> str:
    """Keep only the first ``max_tokens`` whitespace-separated tokens."""
    pieces = text.split()
    if len(pieces) <= max_tokens:
        return text
    return " ".join(pieces[:max_tokens])


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumeric runs, keep tokens of length >= 2."""
    return [t for t in TOKEN_RUN.findall(truncate_text(text).lower())
            if len(t) >= 2]


# ---------------------------------------------------------------------------
# Pair dataset construction


def _negative_candidate_count(size: int) -> int:
    # Ordered pairs (u, w) with u < w minus the size-1 reply edges, each of
    # which has parent index < child index: C(size, 2) - (size - 1).
    if size < 3:
        return 0
    return (size - 1) * (size - 2) // 2


def _unrank_negative(tree: ConversationTree, rank: int) -> tuple[int, int]:
    """Map a rank in [0, candidates) to the rank-th non-edge pair (u, w), u < w."""
    size = len(tree)
    remaining = rank
    for u in range(1, size):
        later = size - u
        later_children = sum(1 for c in tree.children[u] if c > u)
        count_u = later - later_children
        if remaining >= count_u:
            remaining -= count_u
            continue
        child_set = set(tree.children[u])
        for w in range(u + 1, size + 1):
            if w in child_set:
                continue
            if remaining == 0:
                return u, w
            remaining -= 1
    raise AssertionError("negative-pair rank out of range")


def build_pair_dataset(
    corpus: Corpus,
    negative_ratio: float = 1.0,
    seed: int = 0,
) -> list[ReplyPair]:
    """Emit all direct-reply edges as positives plus sampled negatives.

    Negatives are drawn uniformly (seeded, without replacement) from
    same-conversation ordered pairs (earlier, later) with no reply edge, so
    they are never trivially separable by topic.  Conversations under three
    nodes cannot contribute negatives and are skipped with a warning.  The
    corpus passed here must be the training split only, so that scorer
    fitting never sees evaluation conversations.
    """
    if not corpus.trees:
        raise ValueError("corpus has no conversations")
    if negative_ratio <= 0:
        raise ValueError("negative_ratio must be positive")

    positives: list[ReplyPair] = []
    for tree in corpus.trees:
        for child in range(2, len(tree) + 1):
            parent = tree.parent_index[child]
            positives.append(ReplyPair(
                text_a=tree.node(parent).text,
                text_b=tree.node(child).text,
                label=1,
                conversation_id=tree.conversation_id,
            ))

    counts = []
    for tree in corpus.trees:
        n = _negative_candidate_count(len(tree))
        if n == 0:
            logger.warning(
                "conversation %s has fewer than 3 nodes; no negatives sampled",
                tree.conversation_id)
        counts.append(n)
    total = sum(counts)
    wanted = math.ceil(negative_ratio * len(positives))
    if wanted > total:
        logger.warning(
            "only %d negative candidates available (%d requested)",
            total, wanted)
        wanted = total

    import random as _random

    rng = _random.Random(seed)
    picks = sorted(rng.sample(range(total), wanted))
    negatives: list[ReplyPair] = []
    offset = 0
    tree_iter = iter(zip(corpus.trees, counts))
    tree, count = next(tree_iter)
    for pick in picks:
        while pick >= offset + count:
            offset += count
            tree, count = next(tree_iter)
        u, w = _unrank_negative(tree, pick - offset)
        negatives.append(ReplyPair(
            text_a=tree.node(u).text,
            text_b=tree.node(w).text,
            label=0,
            conversation_id=tree.conversation_id,
        ))
    return positives + negatives


def write_pair_file(pairs: Iterable[ReplyPair], fh: IO[str]) -> None:
    for pair in pairs:
        fh.write(json.dumps({
            "text_a": pair.text_a,
            "text_b": pair.text_b,
            "label": pair.label,
            "conversation_id": pair.conversation_id,
        }, ensure_ascii=False) + "\n")


def read_pair_file(fh: IO[str]) -> list[ReplyPair]:
    pairs = []
    for line in fh:
        line = line.strip()
        if not line:
            continue
        rec = json.loads(line)
        pairs.append(ReplyPair(
            text_a=rec["text_a"],
            text_b=rec["text_b"],
            label=int(rec["label"]),
            conversation_id=rec.get("conversation_id", ""),
        ))
    return pairs


# ---------------------------------------------------------------------------
# Lexical scorer


@dataclass(frozen=True)
class LexicalHyper:
    learning_rate: float = 0.5
    epochs: int = 300
    l2: float = 1e-4


@dataclass(frozen=True)
class PairTrainReport:
    """Held-out diagnostics recorded when the lexical scorer is trained."""

    held_out_accuracy: float
    held_out_auc: float | None
    train_accuracy: float
    epochs_run: int


@dataclass
class LexicalScorerModel:
    """Logistic regression over pair-similarity features.

    ``vocabulary`` and ``idf`` are frozen at training time; ``weights`` and
    ``bias`` act on the raw feature values (any training-time feature
    standardization is folded into them), so scoring is a plain sigmoid of
    a linear function.  Instances are immutable in practice and safe for
    concurrent scoring.
    """

    vocabulary: dict[str, int]
    idf: np.ndarray
    document_frequency: dict[str, int]
    weights: np.ndarray  # one per PAIR_FEATURE_NAMES entry
    bias: float
    n_documents: int = 0
    rare_df_max: int = RARE_DF_MAX
    report: PairTrainReport | None = None

    name = "lexical"

    def pair_features(self, text_a: str, text_b: str) -> np.ndarray:
        tokens_a = tokenize(text_a)
        tokens_b = tokenize(text_b)
        return self._features_from_tokens(tokens_a, tokens_b)

    def _features_from_tokens(self, tokens_a: list[str],
                              tokens_b: list[str]) -> np.ndarray:
        counts_a = Counter(tokens_a)
        counts_b = Counter(tokens_b)
        cosine = self._tfidf_cosine(counts_a, counts_b)
        set_a, set_b = set(counts_a), set(counts_b)
        union = len(set_a | set_b)
        jaccard = len(set_a & set_b) / union if union else 0.0
        longer = max(len(tokens_a), len(tokens_b))
        length_ratio = min(len(tokens_a), len(tokens_b)) / max(longer, 1)
        shared_rare = sum(
            1 for t in set_a & set_b
            if self.document_frequency.get(t, 0) <= self.rare_df_max)
        return np.array([cosine, jaccard, length_ratio, float(shared_rare)])

    def _tfidf_cosine(self, counts_a: Counter, counts_b: Counter) -> float:
        if not counts_a or not counts_b:
            return 0.0
        dot = 0.0
        for token, tf_a in counts_a.items():
            tf_b = counts_b.get(token)
            if tf_b is None:
                continue
            w = self._idf_weight(token)
            dot += (tf_a * w) * (tf_b * w)
        if dot == 0.0:
            return 0.0
        norm_a = math.sqrt(sum((tf * self._idf_weight(t)) ** 2
                               for t, tf in counts_a.items()))
        norm_b = math.sqrt(sum((tf * self._idf_weight(t)) ** 2
                               for t, tf in counts_b.items()))
        if norm_a == 0.0 or norm_b == 0.0:
            return 0.0
        return dot / (norm_a * norm_b)

    def _idf_weight(self, token: str) -> float:
        index = self.vocabulary.get(token)
        if index is None:
            # unseen tokens get the maximal (df=0) smoothed idf
            return math.log(1.0 + self.n_documents) + 1.0
        return float(self.idf[index])

    def to_json(self) -> dict:
        return {
            "format": "branchcast-lexical-scorer",
            "version": 1,
            "vocabulary": self.vocabulary,
            "idf": [float(x) for x in self.idf],
            "document_frequency": self.document_frequency,
            "n_documents": self.n_documents,
            "weights": [float(w) for w in self.weights],
            "bias": float(self.bias),
            "rare_df_max": self.rare_df_max,
            "report": None if self.report is None else {
                "held_out_accuracy": self.report.held_out_accuracy,
                "held_out_auc": self.report.held_out_auc,
                "train_accuracy": self.report.train_accuracy,
                "epochs_run": self.report.epochs_run,
            },
        }

    @classmethod
    def from_json(cls, payload: dict) -> "LexicalScorerModel":
        if payload.get("format") != "branchcast-lexical-scorer":
            raise ValueError("not a lexical scorer artifact")
        report = payload.get("report")
        return cls(
            vocabulary={k: int(v) for k, v in payload["vocabulary"].items()},
            idf=np.array(payload["idf"], dtype=float),
            document_frequency={k: int(v) for k, v
                                in payload["document_frequency"].items()},
            weights=np.array(payload["weights"], dtype=float),
            bias=float(payload["bias"]),
            n_documents=int(payload.get("n_documents", 0)),
            rare_df_max=int(payload.get("rare_df_max", RARE_DF_MAX)),
            report=None if report is None else PairTrainReport(
                held_out_accuracy=report["held_out_accuracy"],
                held_out_auc=report["held_out_auc"],
                train_accuracy=report["train_accuracy"],
                epochs_run=report["epochs_run"],
            ),
        )


def _sigmoid(z: np.ndarray | float):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -60.0, 60.0)))


def _fit_vocabulary(pairs: Sequence[ReplyPair]) -> tuple[dict[str, int],
                                                          np.ndarray,
                                                          dict[str, int], int]:
    # One document per distinct text, so comments repeated across many pairs
    # do not inflate document frequencies.
    documents = {p.text_a for p in pairs} | {p.text_b for p in pairs}
    df: Counter = Counter()
    for text in documents:
        df.update(set(tokenize(text)))
    vocabulary = {token: i for i, token in enumerate(sorted(df))}
    n_docs = len(documents)
    idf = np.array([
        math.log((1.0 + n_docs) / (1.0 + df[token])) + 1.0
        for token in sorted(df)
    ])
    return vocabulary, idf, dict(df), n_docs


def train_lexical_scorer(
    pairs: Sequence[ReplyPair],
    hyper: LexicalHyper | None = None,
    seed: int = 0,
    held_out_fraction: float = 0.2,
) -> LexicalScorerModel:
    """Fit the lexical reply-to scorer by full-batch gradient descent.

    Features are standardized internally and the standardization is folded
    back into the returned weights and bias, so the stored model scores raw
    feature values.  A seeded held-out split provides the accuracy/AUC noted
    on the returned model.
    """
    hyper = hyper or LexicalHyper()
    labels = {p.label for p in pairs}
    if labels != {0, 1}:
        raise TrainingError("pair dataset must contain both classes")

    vocabulary, idf, df, n_docs = _fit_vocabulary(pairs)
    model = LexicalScorerModel(
        vocabulary=vocabulary, idf=idf, document_frequency=df,
        weights=np.zeros(len(PAIR_FEATURE_NAMES)), bias=0.0,
        n_documents=n_docs)

    features = np.stack([model.pair_features(p.text_a, p.text_b) for p in pairs])
    y = np.array([p.label for p in pairs], dtype=float)

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pairs))
    n_held = max(1, int(round(held_out_fraction * len(pairs))))
    if n_held >= len(pairs):
        n_held = len(pairs) - 1
    held_idx, train_idx = order[:n_held], order[n_held:]
    if len({int(v) for v in y[train_idx]}) < 2:
        # tiny or skewed datasets: fall back to training on everything
        train_idx = order
        held_idx = order[:0]

    x_train, y_train = features[train_idx], y[train_idx]
    mean = x_train.mean(axis=0)
    std = x_train.std(axis=0)
    std[std < 1e-12] = 1.0
    x_std = (x_train - mean) / std

    w = np.zeros(x_std.shape[1])
    b = 0.0
    previous_loss = math.inf
    epochs_run = 0
    for epoch in range(hyper.epochs):
        z = x_std @ w + b
        p = _sigmoid(z)
        grad_z = (p - y_train) / len(y_train)
        grad_w = x_std.T @ grad_z + hyper.l2 * w
        grad_b = float(grad_z.sum())
        w -= hyper.learning_rate * grad_w
        b -= hyper.learning_rate * grad_b
        loss = float(np.mean(
            np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0) - y_train * z))
        loss += 0.5 * hyper.l2 * float(w @ w)
        epochs_run = epoch + 1
        if abs(previous_loss - loss) < 1e-10:
            break
        previous_loss = loss

    # fold standardization into the stored coefficients
    folded_w = w / std
    folded_b = b - float((w * mean / std).sum())
    model.weights = folded_w
    model.bias = folded_b

    train_pred = (features[train_idx] @ folded_w + folded_b) > 0
    train_acc = float(np.mean(train_pred == (y_train > 0.5)))
    if len(held_idx):
        held_scores = _sigmoid(features[held_idx] @ folded_w + folded_b)
        held_pred = held_scores > 0.5
        held_acc = float(np.mean(held_pred == (y[held_idx] > 0.5)))
        held_auc = _binary_auc(held_scores, y[held_idx])
    else:
        held_acc, held_auc = train_acc, None
    model.report = PairTrainReport(
        held_out_accuracy=held_acc,
        held_out_auc=held_auc,
        train_accuracy=train_acc,
        epochs_run=epochs_run,
    )
    logger.info("lexical scorer: %d epochs, held-out accuracy %.3f",
                epochs_run, held_acc)
    return model


def _binary_auc(scores: np.ndarray, labels: np.ndarray) -> float | None:
    pos = scores[labels > 0.5]
    neg = scores[labels <= 0.5]
    if len(pos) == 0 or len(neg) == 0:
        return None
    order = np.argsort(np.concatenate([pos, neg]), kind="stable")
    ranks = np.empty(len(order))
    ranks[order] = np.arange(1, len(order) + 1)
    # average ranks over ties
    merged = np.concatenate([pos, neg])
    sorted_vals = merged[order]
    i = 0
    while i < len(sorted_vals):
        j = i
        while j + 1 < len(sorted_vals) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        if j > i:
            tied = order[i:j + 1]
            ranks[tied] = (i + 1 + j + 1) / 2.0
        i = j + 1
    rank_pos = ranks[:len(pos)].sum()
    u = rank_pos - len(pos) * (len(pos) + 1) / 2.0
    return float(u / (len(pos) * len(neg)))


def score_pair(model: LexicalScorerModel, text_a: str, text_b: str) -> float:
    """Deterministic reply-to score in [0, 1]; empty texts never raise."""
    features = model.pair_features(text_a, text_b)
    return float(_sigmoid(float(features @ model.weights) + model.bias))


class LexicalCandidateScorer:
    """Candidate-scoring adapter over a trained lexical model.

    Token counts are memoized per comment id so repeated prefixes of the
    same conversation do not re-tokenize the same texts.
    """

    def __init__(self, model: LexicalScorerModel):
        self.model = model
        self.name = "lexical"
        self._token_cache: dict[str, list[str]] = {}

    def _tokens(self, key: str, text: str) -> list[str]:
        cached = self._token_cache.get(key)
        if cached is None:
            cached = tokenize(text)
            self._token_cache[key] = cached
        return cached

    def score_batch(self, items: Sequence[PairItem]) -> list[float]:
        scores = []
        for item in items:
            features = self.model._features_from_tokens(
                self._tokens(item.parent_id, item.text_a),
                self._tokens(item.child_id, item.text_b),
            )
            z = float(features @ self.model.weights) + self.model.bias
            scores.append(float(_sigmoid(z)))
        return scores


# ---------------------------------------------------------------------------
# Score cache


@dataclass
class ScoreCache:
    """Persistent (child_id, parent_id) -> score map with provenance.

    Scores are immutable once written: re-writing a key with a different
    value raises, and all entries must share one scorer tag.  Reads may be
    concurrent; writes are expected to be exclusive.
    """

    scorer: str = ""
    entries: dict[tuple[str, str], float] = field(default_factory=dict)

    name = "cache"

    def put(self, child_id: str, parent_id: str, score: float,
            scorer: str | None = None) -> None:
        if not 0.0 <= score <= 1.0:
            raise DomainError(f"score {score} outside [0, 1]")
        tag = scorer if scorer is not None else self.scorer
        if not tag:
            raise ValueError("cache writes need a scorer provenance tag")
        if self.scorer and tag != self.scorer:
            raise ValueError(
                f"cache provenance is {self.scorer!r}; refusing {tag!r}")
        self.scorer = tag
        key = (child_id, parent_id)
        existing = self.entries.get(key)
        if existing is not None and existing != score:
            raise ValueError(
                f"cache entry {key} already holds {existing}; "
                f"refusing overwrite with {score}")
        self.entries[key] = score

    def get(self, child_id: str, parent_id: str) -> float | None:
        return self.entries.get((child_id, parent_id))

    def score_batch(self, items: Sequence[PairItem]) -> list[float]:
        scores, missing = [], []
        for item in items:
            value = self.entries.get((item.child_id, item.parent_id))
            if value is None:
                missing.append((item.child_id, item.parent_id))
            else:
                scores.append(value)
        if missing:
            raise MissingScoreError(missing)
        return scores

    def save(self, fh: IO[str]) -> None:
        for (child, parent), score in sorted(self.entries.items()):
            fh.write(json.dumps({
                "child": child,
                "parent": parent,
                "score": score,
                "scorer": self.scorer,
            }) + "\n")

    @classmethod
    def load(cls, fh: IO[str]) -> "ScoreCache":
        cache = cls()
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            cache.put(rec["child"], rec["parent"], float(rec["score"]),
                      scorer=rec["scorer"])
        return cache


def score_candidates(
    scorer: CandidateScorer,
    prefix_view: PrefixView,
    new_comment: Comment,
    window: Iterable[int],
) -> dict[int, float]:
    """Score the new comment against every window node of the prefix.

    The scorer may be the lexical model, a pre-filled cache, or an external
    protocol client; all implement the same batch interface.  Returns a map
    from 1-based node index to score.
    """
    tree = prefix_view.tree
    indices = sorted(window)
    for u in indices:
        if not 1 <= u <= prefix_view.k:
            raise ValueError(f"window node {u} outside prefix 1..{prefix_view.k}")
    items = [
        PairItem(
            child_id=new_comment.id,
            parent_id=tree.node(u).id,
            text_a=tree.node(u).text,
            text_b=new_comment.text,
        )
        for u in indices
    ]
    scores = scorer.score_batch(items)
    return dict(zip(indices, scores))
