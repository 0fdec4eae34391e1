"""End-to-end experiment orchestration driven by a manifest.

One manifest fixes corpus, filters, split, scorer choice, relaxation width,
training settings, feature mask, and a global seed; running it produces
pairs, a scorer, a score cache, feature matrices, a trained model, metrics,
ROC points, and a permutation-importance report, all as plain files in the
output directory next to a resolved copy of the manifest.  Identical
manifests with identical seeds produce bit-identical metric files.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import features as feats
from . import trees as trees_mod
from .errors import StageError
from .evaluation import (
    MetricsReport,
    SplitSpec,
    compute_metrics,
    permutation_importance,
    split_by_conversation,
)
from .features import FeatureMatrix, assemble_feature_vector, relaxation_window
from .mlp import (
    TrainConfig,
    derive_seed,
    forward_batch,
    init_mlp,
    save_checkpoint,
    train,
)
from .scoring import (
    LexicalCandidateScorer,
    LexicalHyper,
    ScoreCache,
    build_pair_dataset,
    score_candidates,
    train_lexical_scorer,
    write_pair_file,
)
from .trees import Corpus, FilterConfig, enumerate_instances, parse_corpus, prefix

logger = logging.getLogger(__name__)


@dataclass
class ExperimentManifest:
    """Everything needed to reproduce one experiment bit-exactly."""

    corpus_path: str
    output_dir: str
    seed: int
    min_comments: int = 10
    test_fraction: float = 0.20
    val_fraction: float = 0.05
    scorer: str = "lexical"  # lexical | cache | external
    cache_path: str | None = None
    sidecar_command: list[str] | None = None
    negative_ratio: float = 1.0
    scorer_learning_rate: float = 0.5
    scorer_epochs: int = 300
    scorer_l2: float = 1e-4
    relaxation_n: int | None = 15  # None means no relaxation
    hidden_dim: int = 100
    dropout_rate: float = 0.2
    learning_rate: float = 5e-5
    batch_size: int = 120
    max_epochs: int = 5
    patience: int = 1
    threshold: float = 0.5
    feature_mask: str = "full"
    importance_repetitions: int = 5

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, payload: dict) -> "ExperimentManifest":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(payload) - known
        if unknown:
            raise ValueError(f"unknown manifest fields: {sorted(unknown)}")
        return cls(**payload)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentManifest":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def validate(self) -> None:
        if not Path(self.corpus_path).exists():
            raise FileNotFoundError(f"corpus not found: {self.corpus_path}")
        if self.scorer not in ("lexical", "cache", "external"):
            raise ValueError(f"unknown scorer {self.scorer!r}")
        if self.scorer == "cache":
            if not self.cache_path or not Path(self.cache_path).exists():
                raise FileNotFoundError("cache scorer needs an existing cache_path")
        if self.scorer == "external" and not self.sidecar_command:
            raise ValueError("external scorer needs sidecar_command")
        if self.relaxation_n is not None and self.relaxation_n < 1:
            raise ValueError("relaxation_n must be positive or null")
        feats.mask_columns(self.feature_mask)


@dataclass
class RunResult:
    metrics: MetricsReport
    importance_path: Path
    metrics_path: Path
    output_dir: Path
    history: dict = field(default_factory=dict)


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def load_corpus_file(path: str | Path,
                     filter_config: FilterConfig | None = None) -> Corpus:
    """Load either a validated corpus artifact or raw JSONL comments."""
    text = Path(path).read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("{") and "branchcast-corpus" in stripped[:200]:
        return trees_mod.deserialize_corpus(json.loads(text))
    return parse_corpus(text.splitlines(), filter_config)


def extract_features(
    corpus: Corpus,
    scorer,
    relaxation_n: int | None,
    cache: ScoreCache | None = None,
) -> FeatureMatrix:
    """Score and assemble the feature matrix for every instance of a corpus."""
    keys, labels, rows = [], [], []
    for tree in corpus.trees:
        for instance in enumerate_instances(tree):
            view = prefix(tree, instance.k)
            if relaxation_n is None:
                window = frozenset(range(1, instance.k + 1))
            else:
                window = relaxation_window(view, relaxation_n)
            new_comment = tree.node(instance.new_node_index)
            scores = score_candidates(scorer, view, new_comment, window)
            if cache is not None and scorer.name != "cache":
                for node_index, score in scores.items():
                    cache.put(new_comment.id, tree.node(node_index).id, score,
                              scorer=scorer.name)
            vector = assemble_feature_vector(view, new_comment, scores, window)
            keys.append((tree.conversation_id, instance.k))
            labels.append(instance.label)
            rows.append(vector.to_row())
    return FeatureMatrix(
        feature_names=feats.FEATURE_NAMES,
        keys=keys,
        labels=np.array(labels, dtype=int),
        X=np.array(rows, dtype=float).reshape(len(rows), len(feats.FEATURE_NAMES)),
    )


def _build_scorer(manifest: ExperimentManifest, train_corpus: Corpus,
                  output: Path):
    """Stage 2-3: pair dataset plus the configured candidate scorer."""
    if manifest.scorer == "cache":
        with open(manifest.cache_path, encoding="utf-8") as fh:
            return ScoreCache.load(fh), None
    pairs = build_pair_dataset(
        train_corpus,
        negative_ratio=manifest.negative_ratio,
        seed=derive_seed(manifest.seed, "pairs"),
    )
    with open(output / "pairs.jsonl", "w", encoding="utf-8") as fh:
        write_pair_file(pairs, fh)
    if manifest.scorer == "external":
        from .sidecar_client import ExternalCandidateScorer, SidecarClient

        client = SidecarClient(manifest.sidecar_command)
        client.start()
        return ExternalCandidateScorer(client), client
    hyper = LexicalHyper(
        learning_rate=manifest.scorer_learning_rate,
        epochs=manifest.scorer_epochs,
        l2=manifest.scorer_l2,
    )
    model = train_lexical_scorer(
        pairs, hyper, seed=derive_seed(manifest.seed, "scorer"))
    _write_json(output / "scorer.json", model.to_json())
    return LexicalCandidateScorer(model), None


def run_experiment(manifest: ExperimentManifest) -> RunResult:
    """Execute every stage of the pipeline under seeded determinism."""
    manifest.validate()
    output = Path(manifest.output_dir)
    output.mkdir(parents=True, exist_ok=True)
    _write_json(output / "status.json", {"status": "running"})
    _write_json(output / "manifest.json", manifest.to_json())

    stage = "ingest"
    client = None
    try:
        corpus = load_corpus_file(
            manifest.corpus_path,
            FilterConfig(min_comments=manifest.min_comments))
        if any(len(t) < manifest.min_comments for t in corpus.trees):
            corpus = Corpus(trees=[t for t in corpus.trees
                                   if len(t) >= manifest.min_comments])
        if not corpus.trees:
            raise ValueError("corpus is empty after filtering")

        stage = "split"
        split = SplitSpec(
            test_fraction=manifest.test_fraction,
            val_fraction=manifest.val_fraction,
            seed=derive_seed(manifest.seed, "split"),
        )
        train_corpus, val_corpus, test_corpus = split_by_conversation(
            corpus, split)

        stage = "scorer"
        scorer, client = _build_scorer(manifest, train_corpus, output)

        stage = "features"
        cache = ScoreCache() if manifest.scorer != "cache" else None
        matrices = {}
        for name, part in (("train", train_corpus), ("val", val_corpus),
                           ("test", test_corpus)):
            matrix = extract_features(part, scorer, manifest.relaxation_n,
                                      cache)
            columns = feats.mask_columns(manifest.feature_mask)
            if manifest.feature_mask != "full":
                matrix = matrix.select(columns)
            matrices[name] = matrix
            with open(output / f"features_{name}.csv", "w",
                      encoding="utf-8") as fh:
                matrix.to_csv(fh)
        if cache is not None and cache.entries:
            with open(output / "score_cache.jsonl", "w",
                      encoding="utf-8") as fh:
                cache.save(fh)

        stage = "train"
        for name in ("train", "val"):
            if len(matrices[name]) == 0:
                raise ValueError(f"{name} split produced no instances")
        model = init_mlp(
            input_dim=matrices["train"].X.shape[1],
            hidden_dim=manifest.hidden_dim,
            dropout_rate=manifest.dropout_rate,
            seed=derive_seed(manifest.seed, "mlp"),
        )
        config = TrainConfig(
            learning_rate=manifest.learning_rate,
            batch_size=manifest.batch_size,
            max_epochs=manifest.max_epochs,
            patience=manifest.patience,
        )
        model, history = train(
            model,
            (matrices["train"].X, matrices["train"].labels.astype(float)),
            (matrices["val"].X, matrices["val"].labels.astype(float)),
            config,
        )
        with open(output / "model.json", "w", encoding="utf-8") as fh:
            save_checkpoint(model, fh,
                            columns=matrices["train"].feature_names,
                            threshold=manifest.threshold)
        _write_json(output / "history.json", history.to_json())

        stage = "eval"
        test_matrix = matrices["test"]
        scores = forward_batch(model, test_matrix.X)
        metrics = compute_metrics(scores, test_matrix.labels,
                                  manifest.threshold)
        metrics_path = output / "metrics.json"
        _write_json(metrics_path, metrics.to_json())
        _write_roc(output / "roc.csv", scores, test_matrix.labels)

        stage = "importance"
        importance = permutation_importance(
            model, test_matrix,
            repetitions=manifest.importance_repetitions,
            seed=derive_seed(manifest.seed, "importance"),
        )
        importance_path = output / "importance.json"
        _write_json(importance_path, importance.to_json())
        with open(output / "importance.csv", "w", encoding="utf-8") as fh:
            fh.write("feature,mean_auc_drop,std,rank\n")
            for entry in importance.entries:
                fh.write(f"{entry.feature},{entry.mean_auc_drop!r},"
                         f"{entry.std!r},{entry.rank}\n")
    except Exception as exc:
        _write_json(output / "status.json",
                    {"status": "failed", "stage": stage, "error": str(exc)})
        if isinstance(exc, StageError):
            raise
        raise StageError(stage, exc) from exc
    finally:
        if client is not None:
            client.close()

    _write_json(output / "status.json", {"status": "ok"})
    logger.info("run complete: AUC %s", metrics.auc)
    return RunResult(
        metrics=metrics,
        importance_path=importance_path,
        metrics_path=metrics_path,
        output_dir=output,
        history=history.to_json(),
    )


def _write_roc(path: Path, scores: np.ndarray, labels: np.ndarray) -> None:
    """Plot-ready ROC points: one (fpr, tpr, threshold) row per cut."""
    order = np.argsort(-scores, kind="stable")
    sorted_labels = np.asarray(labels)[order] > 0.5
    sorted_scores = np.asarray(scores)[order]
    n_pos = int(sorted_labels.sum())
    n_neg = len(sorted_labels) - n_pos
    lines = ["fpr,tpr,threshold"]
    tp = fp = 0
    lines.append("0.0,0.0,inf")
    for i in range(len(sorted_labels)):
        if sorted_labels[i]:
            tp += 1
        else:
            fp += 1
        last = i == len(sorted_labels) - 1
        if last or sorted_scores[i + 1] != sorted_scores[i]:
            fpr = fp / n_neg if n_neg else 0.0
            tpr = tp / n_pos if n_pos else 0.0
            lines.append(f"{fpr!r},{tpr!r},{sorted_scores[i]!r}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def pipeline_auc(manifest: ExperimentManifest) -> float | None:
    """Convenience wrapper: run and return the test AUC."""
    return run_experiment(manifest).metrics.auc
