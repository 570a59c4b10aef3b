"""Extractive summarization for long documents: shared ROUGE metrics,
greedy oracle labeling, a history-aware selection policy trained with
REINFORCE, threshold-controlled inference and an evaluation harness."""

from .corpus import (
    Corpus,
    CorpusStats,
    DataError,
    Document,
    GoldSummary,
    Sentence,
    Vocab,
    build_vocab,
    compute_stats,
    load_corpus,
    save_corpus,
    segment_text,
    split_corpus,
    tokenize,
)
from .extraction import (
    EvalReport,
    ExtractionConfig,
    evaluate,
    extract,
    lead_n,
    sweep_threshold,
)
from .metrics import (
    RougeScore,
    RougeTriple,
    lcs_length,
    ngram_counts,
    oracle_objective,
    reward,
    rouge_l,
    rouge_l_sum,
    rouge_n,
)
from .oracle import OracleLabel, exact_oracle, greedy_oracle, label_corpus
from .policy import (
    Action,
    ActionDistribution,
    ExtractionState,
    PolicyConfig,
    PolicyNetwork,
    PolicyParams,
    init_params,
    load_checkpoint,
    log_prob,
    sample_action,
    save_checkpoint,
)
from .synthetic import make_marker_corpus
from .training import (
    Episode,
    TrainerConfig,
    finite_diff_check,
    grad_log_prob,
    reinforce_update,
    rollout_episode,
    select_training_episode,
    train,
)

__version__ = "0.1.0"
