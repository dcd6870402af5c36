"""Splitting strategies, metrics and rank-swap analysis for offline recommender evaluation."""

from ._version import __version__
from .compare import (
    RankSwapReport,
    UndefinedCorrelationError,
    compare_rankings,
    kendall_counts,
    kendall_tau,
    rank_swap_report,
    scatter_rows,
)
from .evaluation import EvalConfig, EvalReport, evaluate, load_report
from .experiment import ExperimentConfig, StageError, run_experiment, validate_config
from .filtering import FilterSpec, FrequencyFilter, apply_filter, builtin_spec
from .ingest import (
    CANONICAL_SCHEMA,
    TAFENG_SCHEMA,
    Dataset,
    SchemaConfig,
    build_dataset,
    export_dataset,
    parse_transactions,
    read_dataset,
)
from .metrics import ndcg_at_k, recall_at_k, top_k
from .models import (
    BPRMF,
    ItemKNNRecommender,
    NMFRecommender,
    PopularityRecommender,
    load_model,
    make_model,
    save_model,
)
from .split import (
    LeaveOneLastBasketSplitter,
    LeaveOneLastItemSplitter,
    RandomSplitter,
    SplitManifest,
    SplitResult,
    TemporalGlobalSplitter,
    TemporalUserSplitter,
    UserSplitter,
    export_split,
    leakage_report,
    load_split,
    make_splitter,
    split_dataset,
)
from .synth import SynthConfig, generate, step_drift, write_synth
from .utils import ConfigError, DataError, DivergenceError, EmptyResultError, EmptySplitError

__all__ = [
    "__version__",
    "apply_filter",
    "BPRMF",
    "build_dataset",
    "builtin_spec",
    "CANONICAL_SCHEMA",
    "compare_rankings",
    "ConfigError",
    "DataError",
    "Dataset",
    "DivergenceError",
    "EmptyResultError",
    "EmptySplitError",
    "EvalConfig",
    "EvalReport",
    "evaluate",
    "ExperimentConfig",
    "export_dataset",
    "export_split",
    "FilterSpec",
    "FrequencyFilter",
    "generate",
    "ItemKNNRecommender",
    "kendall_counts",
    "kendall_tau",
    "leakage_report",
    "LeaveOneLastBasketSplitter",
    "LeaveOneLastItemSplitter",
    "load_model",
    "load_report",
    "load_split",
    "make_model",
    "make_splitter",
    "ndcg_at_k",
    "NMFRecommender",
    "parse_transactions",
    "PopularityRecommender",
    "RandomSplitter",
    "rank_swap_report",
    "RankSwapReport",
    "read_dataset",
    "recall_at_k",
    "run_experiment",
    "save_model",
    "scatter_rows",
    "SchemaConfig",
    "split_dataset",
    "SplitManifest",
    "SplitResult",
    "StageError",
    "step_drift",
    "SynthConfig",
    "TAFENG_SCHEMA",
    "TemporalGlobalSplitter",
    "TemporalUserSplitter",
    "top_k",
    "UndefinedCorrelationError",
    "UserSplitter",
    "validate_config",
    "write_synth",
]
