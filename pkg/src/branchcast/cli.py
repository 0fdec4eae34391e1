"""Command-line interface for the branch-prediction pipeline.

Subcommands mirror the pipeline stages so any intermediate artifact can be
re-used: ingest, synth, pairs, train-scorer, score, features, train, eval,
transfer, importance, and run.  Exit codes: 0 success, 1 usage error,
2 data validation error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import features as feats
from .errors import BranchcastError, StageError
from .evaluation import (
    MetricsReport,
    compute_metrics,
    permutation_importance,
    transfer_eval,
)
from .features import FeatureMatrix
from .mlp import (
    TrainConfig,
    forward_batch,
    init_mlp,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .pipeline import (
    ExperimentManifest,
    extract_features,
    load_corpus_file,
    run_experiment,
)
from .scoring import (
    LexicalCandidateScorer,
    LexicalHyper,
    LexicalScorerModel,
    ScoreCache,
    build_pair_dataset,
    read_pair_file,
    train_lexical_scorer,
    write_pair_file,
)
from .synth import SynthConfig, generate_corpus, write_corpus_jsonl
from .trees import FilterConfig, corpus_stats, parse_corpus, serialize_corpus

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_STAGE = 3

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage errors, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _metrics_table(title: str, metrics: MetricsReport) -> str:
    auc = "n/a" if metrics.auc is None else f"{metrics.auc:.3f}"
    head = f"{'':16s} {'F1':>6s} {'P':>6s} {'R':>6s} {'AUC':>6s}"
    row = (f"{title:16s} {metrics.f1:6.3f} {metrics.precision:6.3f} "
           f"{metrics.recall:6.3f} {auc:>6s}")
    return head + "\n" + row


def _load_model(path: str):
    with open(path, encoding="utf-8") as fh:
        return load_checkpoint(fh)


def _load_matrix(path: str) -> FeatureMatrix:
    with open(path, encoding="utf-8") as fh:
        return FeatureMatrix.from_csv(fh)


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_ingest(args) -> int:
    config = FilterConfig(
        min_comments=args.min_comments,
        bot_authors=tuple(args.bot_author),
    )
    corpus = None
    for path in args.input:
        with open(path, "rb") as fh:
            part = parse_corpus(fh, config)
        if corpus is None:
            corpus = part
        else:
            corpus.trees.extend(part.trees)
            corpus.rejections.extend(part.rejections)
            corpus.dropped_comments += part.dropped_comments
            corpus.filtered_conversations += part.filtered_conversations
    for rejection in corpus.rejections:
        print(f"rejected {rejection.conversation_id}: {rejection.reason}",
              file=sys.stderr)
    if not corpus.trees:
        print("error: no valid conversations", file=sys.stderr)
        return EXIT_DATA
    Path(args.output).write_text(
        json.dumps(serialize_corpus(corpus), indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    stats = corpus_stats(corpus)
    if args.stats_out:
        Path(args.stats_out).write_text(
            json.dumps(stats.to_json(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8")
    width = max(len(k) for k in stats.to_json())
    for key, value in stats.to_json().items():
        rendered = f"{value:.2f}" if isinstance(value, float) else str(value)
        print(f"{key:<{width}}  {rendered}")
    return EXIT_OK


def _cmd_synth(args) -> int:
    config = SynthConfig(
        n_trees=args.trees,
        mean_size=args.mean_size,
        min_size=args.min_size,
        branching_propensity=args.branching_propensity,
        root_reply_prob=args.root_reply_prob,
        n_authors=args.authors,
        context_signal=args.context_signal,
        text_signal=args.text_signal,
    )
    records, metadata = generate_corpus(config, seed=args.seed)
    with open(args.output, "w", encoding="utf-8") as fh:
        write_corpus_jsonl(records, fh)
    meta_path = Path(args.output).with_suffix(".meta.json")
    meta_path.write_text(json.dumps(metadata, indent=2, sort_keys=True) + "\n",
                         encoding="utf-8")
    rate = metadata["positive_rate"]
    rendered = "no instances" if rate is None else f"positive rate {rate:.3f}"
    print(f"wrote {len(records)} comments in {config.n_trees} conversations; "
          + rendered)
    return EXIT_OK


def _cmd_pairs(args) -> int:
    corpus = load_corpus_file(args.corpus)
    pairs = build_pair_dataset(corpus, negative_ratio=args.negative_ratio,
                               seed=args.seed)
    with open(args.output, "w", encoding="utf-8") as fh:
        write_pair_file(pairs, fh)
    positives = sum(p.label for p in pairs)
    print(f"wrote {len(pairs)} pairs ({positives} positive)")
    return EXIT_OK


def _cmd_train_scorer(args) -> int:
    with open(args.pairs, encoding="utf-8") as fh:
        pairs = read_pair_file(fh)
    hyper = LexicalHyper(learning_rate=args.lr, epochs=args.epochs, l2=args.l2)
    model = train_lexical_scorer(pairs, hyper, seed=args.seed)
    Path(args.output).write_text(
        json.dumps(model.to_json(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    report = model.report
    auc = "n/a" if report.held_out_auc is None else f"{report.held_out_auc:.3f}"
    print(f"held-out accuracy {report.held_out_accuracy:.3f}, AUC {auc}")
    return EXIT_OK


def _cmd_score(args) -> int:
    corpus = load_corpus_file(args.corpus)
    if args.scorer_model:
        with open(args.scorer_model, encoding="utf-8") as fh:
            model = LexicalScorerModel.from_json(json.load(fh))
        scorer = LexicalCandidateScorer(model)
    else:
        from .sidecar_client import ExternalCandidateScorer, SidecarClient

        client = SidecarClient(args.sidecar_cmd.split())
        client.start()
        scorer = ExternalCandidateScorer(client)
    cache = ScoreCache()
    n = None if args.relaxation_n == 0 else args.relaxation_n
    extract_features(corpus, scorer, n, cache)
    with open(args.output, "w", encoding="utf-8") as fh:
        cache.save(fh)
    print(f"cached {len(cache.entries)} scores from scorer "
          f"{cache.scorer!r}")
    return EXIT_OK


def _cmd_features(args) -> int:
    corpus = load_corpus_file(args.corpus)
    with open(args.scores, encoding="utf-8") as fh:
        cache = ScoreCache.load(fh)
    n = None if args.relaxation_n == 0 else args.relaxation_n
    matrix = extract_features(corpus, cache, n)
    if args.mask != "full":
        matrix = matrix.select(feats.mask_columns(args.mask))
    with open(args.output, "w", encoding="utf-8") as fh:
        matrix.to_csv(fh)
    print(f"wrote {len(matrix)} instance rows x {len(matrix.feature_names)} "
          "features")
    return EXIT_OK


def _cmd_train(args) -> int:
    train_matrix = _load_matrix(args.features)
    val_matrix = _load_matrix(args.val_features)
    model = init_mlp(
        input_dim=train_matrix.X.shape[1],
        hidden_dim=args.hidden_dim,
        dropout_rate=args.dropout,
        seed=args.seed,
    )
    config = TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch_size,
        max_epochs=args.epochs,
        patience=args.patience,
    )
    model, history = train(
        model,
        (train_matrix.X, train_matrix.labels.astype(float)),
        (val_matrix.X, val_matrix.labels.astype(float)),
        config,
    )
    with open(args.output, "w", encoding="utf-8") as fh:
        save_checkpoint(model, fh, columns=train_matrix.feature_names,
                        threshold=args.threshold)
    best = history.best_epoch
    print(f"stopped at epoch {history.stopped_epoch}, best epoch {best}, "
          f"val loss {history.val_loss[best - 1]:.4f}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    model, meta = _load_model(args.model)
    matrix = _load_matrix(args.features)
    scores = forward_batch(model, matrix.X)
    metrics = compute_metrics(scores, matrix.labels,
                              args.threshold if args.threshold is not None
                              else meta["threshold"])
    if args.output:
        Path(args.output).write_text(
            json.dumps(metrics.to_json(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8")
    print(_metrics_table("test", metrics))
    return EXIT_OK


def _cmd_transfer(args) -> int:
    model, meta = _load_model(args.model)
    matrix = _load_matrix(args.features)
    in_domain = None
    if args.in_domain:
        payload = json.loads(Path(args.in_domain).read_text(encoding="utf-8"))
        in_domain = MetricsReport(
            f1=payload["f1"], precision=payload["precision"],
            recall=payload["recall"], auc=payload["auc"],
            threshold=payload["threshold"],
            n_positive=payload["n_positive"],
            n_negative=payload["n_negative"],
        )
    columns = tuple(meta["columns"]) if meta.get("columns") else None
    report = transfer_eval(model, matrix, threshold=meta["threshold"],
                           model_columns=columns, in_domain=in_domain)
    if args.output:
        Path(args.output).write_text(
            json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8")
    print(_metrics_table("transfer", report.metrics))
    if report.degradation:
        rendered = {k: (None if v is None else round(v, 2))
                    for k, v in report.degradation.items()}
        print(f"relative degradation (%): {rendered}")
    return EXIT_OK


def _cmd_importance(args) -> int:
    model, _ = _load_model(args.model)
    matrix = _load_matrix(args.features)
    report = permutation_importance(model, matrix,
                                    repetitions=args.repetitions,
                                    seed=args.seed)
    if args.output:
        Path(args.output).write_text(
            json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8")
    ranked = sorted(report.entries, key=lambda e: e.rank)
    for entry in ranked[:args.top]:
        print(f"{entry.rank:3d}. {entry.feature:32s} "
              f"{entry.mean_auc_drop:+.4f} +/- {entry.std:.4f}")
    return EXIT_OK


def _cmd_run(args) -> int:
    manifest = ExperimentManifest.load(args.manifest)
    result = run_experiment(manifest)
    print(_metrics_table("test", result.metrics))
    print(f"outputs in {result.output_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="branchcast",
                     description="Branch prediction for conversation trees")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse and validate JSONL comments")
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--stats-out")
    p.add_argument("--min-comments", type=int, default=10)
    p.add_argument("--bot-author", action="append",
                   default=["DeltaBot", "AutoModerator"])
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--output", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--trees", type=int, default=50)
    p.add_argument("--mean-size", type=float, default=20.0)
    p.add_argument("--min-size", type=int, default=10)
    p.add_argument("--branching-propensity", type=float, default=0.25)
    p.add_argument("--root-reply-prob", type=float, default=0.15)
    p.add_argument("--authors", type=int, default=20)
    p.add_argument("--context-signal", type=float, default=0.0)
    p.add_argument("--text-signal", type=float, default=0.0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("pairs", help="build the reply-pair dataset")
    p.add_argument("--corpus", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--negative-ratio", type=float, default=1.0)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=_cmd_pairs)

    p = sub.add_parser("train-scorer", help="train the lexical reply scorer")
    p.add_argument("--pairs", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=_cmd_train_scorer)

    p = sub.add_parser("score", help="fill a reply-to score cache")
    p.add_argument("--corpus", required=True)
    p.add_argument("--output", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--scorer-model")
    group.add_argument("--sidecar-cmd")
    p.add_argument("--relaxation-n", type=int, default=15,
                   help="0 disables the relaxation")
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("features", help="assemble the feature matrix")
    p.add_argument("--corpus", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--relaxation-n", type=int, default=15)
    p.add_argument("--mask", choices=("full", "text-only", "no-text"),
                   default="full")
    p.set_defaults(func=_cmd_features)

    p = sub.add_parser("train", help="train the branch classifier")
    p.add_argument("--features", required=True)
    p.add_argument("--val-features", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--hidden-dim", type=int, default=100)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--lr", type=float, default=5e-5)
    p.add_argument("--batch-size", type=int, default=120)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--patience", type=int, default=1)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained classifier")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--output")
    p.add_argument("--threshold", type=float)
    p.add_argument("--seed", type=int, required=True,
                   help="recorded for provenance; evaluation is deterministic")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("transfer", help="apply a model to another corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--in-domain", help="metrics JSON for degradation")
    p.add_argument("--output")
    p.set_defaults(func=_cmd_transfer)

    p = sub.add_parser("importance", help="permutation feature importance")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--repetitions", type=int, default=5)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--output")
    p.add_argument("--top", type=int, default=15)
    p.set_defaults(func=_cmd_importance)

    p = sub.add_parser("run", help="run a full experiment from a manifest")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=_cmd_run)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (BranchcastError, ValueError, FileNotFoundError, KeyError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
