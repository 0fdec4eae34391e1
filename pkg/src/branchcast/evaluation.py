"""Split discipline, metrics, transfer evaluation, permutation importance.

Splits are drawn at the conversation level so every instance of a
conversation lands in exactly one of train/validation/test.  Metrics follow
the usual binary-classification definitions for the positive (branching)
class, with AUC computed as the rank statistic where ties count half.
Feature relevance is measured by permutation importance: shuffle one column
and record the AUC drop.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import SchemaMismatchError
from .features import FeatureMatrix
from .mlp import MlpModel, derive_seed, forward_batch
from .trees import Corpus

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SplitSpec:
    """Conversation-level split fractions; the rest goes to training."""

    test_fraction: float = 0.20
    val_fraction: float = 0.05
    seed: int = 0

    def validate(self) -> None:
        if self.test_fraction <= 0 or self.val_fraction <= 0:
            raise ValueError("split fractions must be positive")
        if self.test_fraction + self.val_fraction >= 1.0:
            raise ValueError("split fractions must leave room for training")


def split_by_conversation(
    corpus: Corpus, spec: SplitSpec
) -> tuple[Corpus, Corpus, Corpus]:
    """Seeded conversation-disjoint (train, val, test) partition."""
    spec.validate()
    if len(corpus.trees) < 3:
        raise ValueError("need at least 3 conversations to split")
    import random as _random

    order = sorted(corpus.trees, key=lambda t: t.conversation_id)
    _random.Random(spec.seed).shuffle(order)
    n = len(order)
    n_test = max(1, round(spec.test_fraction * n))
    n_val = max(1, round(spec.val_fraction * n))
    if n_test + n_val >= n:
        raise ValueError("fewer conversations than splits")
    test = order[:n_test]
    val = order[n_test:n_test + n_val]
    train = order[n_test + n_val:]
    return Corpus(trees=train), Corpus(trees=val), Corpus(trees=test)


@dataclass(frozen=True)
class MetricsReport:
    """Positive-class F1/precision/recall at a threshold, plus rank AUC.

    ``auc`` is None when the labels are single-class (the statistic is
    undefined there); the remaining metrics are still reported.
    """

    f1: float
    precision: float
    recall: float
    auc: float | None
    threshold: float
    n_positive: int
    n_negative: int

    def to_json(self) -> dict:
        return {
            "f1": self.f1,
            "precision": self.precision,
            "recall": self.recall,
            "auc": self.auc,
            "threshold": self.threshold,
            "n_positive": self.n_positive,
            "n_negative": self.n_negative,
        }


def rank_auc(scores: np.ndarray, labels: np.ndarray) -> float | None:
    """AUC as the Mann-Whitney rank statistic; tied scores count half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos_mask = labels > 0.5
    n_pos = int(pos_mask.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(sorted_scores):
        j = i
        while j + 1 < len(sorted_scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    u = ranks[pos_mask].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def compute_metrics(scores, labels, threshold: float = 0.5) -> MetricsReport:
    """Positive-class metrics at the threshold plus rank AUC."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if len(scores) == 0 or len(scores) != len(labels):
        raise ValueError("scores and labels must be equal-length and non-empty")
    if not set(np.unique(labels)) <= {0, 1}:
        raise ValueError("labels must be binary")
    predicted = scores >= threshold
    actual = labels > 0.5
    tp = int(np.sum(predicted & actual))
    fp = int(np.sum(predicted & ~actual))
    fn = int(np.sum(~predicted & actual))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall else 0.0)
    auc = rank_auc(scores, labels)
    if auc is None:
        logger.warning("labels are single-class; AUC is undefined")
    return MetricsReport(
        f1=f1,
        precision=precision,
        recall=recall,
        auc=auc,
        threshold=threshold,
        n_positive=int(actual.sum()),
        n_negative=int(len(labels) - actual.sum()),
    )


@dataclass(frozen=True)
class TransferReport:
    """Out-of-domain metrics with optional relative degradation in percent."""

    metrics: MetricsReport
    degradation: dict[str, float | None] | None = None

    def to_json(self) -> dict:
        payload = self.metrics.to_json()
        payload["degradation_pct"] = self.degradation
        return payload


def _relative_drop(in_domain: float | None, out: float | None) -> float | None:
    if in_domain is None or out is None or in_domain == 0:
        return None
    return 100.0 * (in_domain - out) / in_domain


def transfer_eval(
    model: MlpModel,
    matrix: FeatureMatrix,
    threshold: float = 0.5,
    model_columns: tuple[str, ...] | None = None,
    in_domain: MetricsReport | None = None,
) -> TransferReport:
    """Apply a model trained on one corpus to another corpus's features.

    The feature schema must match: column names when the model records
    them, and width always.  When in-domain metrics are supplied the report
    carries the relative degradation per metric.
    """
    if model_columns is not None and tuple(model_columns) != matrix.feature_names:
        raise SchemaMismatchError(
            "feature schema mismatch: model was trained on "
            f"{list(model_columns)[:4]}..., matrix has "
            f"{list(matrix.feature_names)[:4]}...")
    if matrix.X.shape[1] != model.input_dim:
        raise SchemaMismatchError(
            f"matrix has {matrix.X.shape[1]} columns, model expects "
            f"{model.input_dim}")
    scores = forward_batch(model, matrix.X)
    metrics = compute_metrics(scores, matrix.labels, threshold)
    degradation = None
    if in_domain is not None:
        degradation = {
            "f1": _relative_drop(in_domain.f1, metrics.f1),
            "precision": _relative_drop(in_domain.precision, metrics.precision),
            "recall": _relative_drop(in_domain.recall, metrics.recall),
            "auc": _relative_drop(in_domain.auc, metrics.auc),
        }
    return TransferReport(metrics=metrics, degradation=degradation)


@dataclass(frozen=True)
class ImportanceEntry:
    feature: str
    mean_auc_drop: float
    std: float
    rank: int


@dataclass(frozen=True)
class ImportanceReport:
    """Per-feature mean AUC drop under column shuffling, ranked."""

    baseline_auc: float
    repetitions: int
    entries: tuple[ImportanceEntry, ...]

    def to_json(self) -> dict:
        return {
            "baseline_auc": self.baseline_auc,
            "repetitions": self.repetitions,
            "features": [
                {
                    "feature": e.feature,
                    "mean_auc_drop": e.mean_auc_drop,
                    "std": e.std,
                    "rank": e.rank,
                }
                for e in self.entries
            ],
        }


def permutation_importance(
    model: MlpModel,
    matrix: FeatureMatrix,
    repetitions: int = 5,
    seed: int = 0,
    threshold: float = 0.5,
) -> ImportanceReport:
    """Mean AUC drop per feature column over seeded shuffles.

    The baseline AUC is computed once; each (column, repetition) pair uses
    an independently derived seed so repetitions could run concurrently.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    baseline_scores = forward_batch(model, matrix.X)
    baseline_auc = rank_auc(baseline_scores, matrix.labels)
    if baseline_auc is None:
        raise ValueError("labels are single-class; importance is undefined")
    drops = np.zeros((len(matrix.feature_names), repetitions))
    for col in range(len(matrix.feature_names)):
        for rep in range(repetitions):
            rng = np.random.default_rng(derive_seed(seed, "perm", col, rep))
            shuffled = matrix.X.copy()
            shuffled[:, col] = rng.permutation(shuffled[:, col])
            auc = rank_auc(forward_batch(model, shuffled), matrix.labels)
            drops[col, rep] = baseline_auc - (auc if auc is not None else 0.5)
    means = drops.mean(axis=1)
    stds = drops.std(axis=1)
    by_drop = sorted(range(len(means)), key=lambda c: (-means[c], c))
    ranks = {col: rank for rank, col in enumerate(by_drop, start=1)}
    entries = tuple(
        ImportanceEntry(
            feature=matrix.feature_names[col],
            mean_auc_drop=float(means[col]),
            std=float(stds[col]),
            rank=ranks[col],
        )
        for col in range(len(means))
    )
    return ImportanceReport(
        baseline_auc=baseline_auc,
        repetitions=repetitions,
        entries=entries,
    )
