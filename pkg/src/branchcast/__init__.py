"""Branch prediction for threaded online conversations.

Given a conversation tree prefix and a new comment, predict whether the
comment replies to an intermediate node (starting a new branch) or to a
leaf (continuing a thread).  The pipeline scores reply-to plausibility for
candidate parents, pools those scores over the prefix's leaf and
intermediate node groups, adds structural and temporal context features,
and feeds the 32-value row to a small dense classifier.
"""

from .errors import (
    BranchcastError,
    CorpusParseError,
    DomainError,
    InvalidInstanceError,
    MissingScoreError,
    ProtocolViolationError,
    SchemaMismatchError,
    SidecarTransportError,
    StageError,
    TrainingError,
    TreeValidationError,
)
from .evaluation import (
    ImportanceReport,
    MetricsReport,
    SplitSpec,
    TransferReport,
    compute_metrics,
    permutation_importance,
    rank_auc,
    split_by_conversation,
    transfer_eval,
)
from .features import (
    CONTEXT_NAMES,
    FEATURE_NAMES,
    TEXT_FEATURE_NAMES,
    ContextBlock,
    FeatureMatrix,
    FeatureVector,
    PoolBlock,
    assemble_feature_vector,
    context_features,
    pool,
    relaxation_window,
)
from .mlp import (
    MlpModel,
    TrainConfig,
    TrainHistory,
    check_gradients,
    forward,
    forward_batch,
    init_mlp,
    load_checkpoint,
    random_baseline,
    save_checkpoint,
    train,
)
from .pipeline import ExperimentManifest, extract_features, run_experiment
from .scoring import (
    LexicalCandidateScorer,
    LexicalScorerModel,
    PairItem,
    ReplyPair,
    ScoreCache,
    build_pair_dataset,
    score_candidates,
    score_pair,
    train_lexical_scorer,
)
from .sidecar_client import SidecarClient, external_score_batch
from .trees import (
    BranchInstance,
    Comment,
    ConversationTree,
    Corpus,
    FilterConfig,
    PrefixView,
    StatsReport,
    branch_label,
    corpus_stats,
    enumerate_instances,
    parse_corpus,
    prefix,
)

__version__ = "0.1.0"
