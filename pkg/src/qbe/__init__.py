"""Query-by-example spoken term detection over frame-embedding sequences."""

__version__ = "0.1.0"

from .dtw import (
    CostMatrix,
    MatchResult,
    brute_force_min_cost,
    cost_matrix,
    score_corpus,
    search,
    subsequence_dtw,
    subsequence_dtw_cost,
)
from .errors import QbeError
from .feature_store import (
    CorpusManifest,
    FeatureSequence,
    ManifestEntry,
    QuerySpec,
    WordSpan,
    load_manifest,
    load_query_set,
    read_feature_file,
    resolve_query,
    save_manifest,
    save_query_set,
    slice_by_span,
    write_feature_file,
)
from .geometry import (
    AnisotropyReport,
    PairSamplingPlan,
    RogueDimensionReport,
    anisotropy,
    cosine,
    rogue_dimensions,
    similarity_distribution,
)
from .mfcc import AudioBuffer, MfccConfig, mfcc, read_wav
from .retrieval import (
    EvaluationResult,
    RelevanceJudgments,
    RetrievalMetrics,
    build_protocol_corpus,
    evaluate,
    judge,
    precision_recall_at_k,
)
from .synth import make_planted_corpus

__all__ = [
    "__version__",
    "AnisotropyReport",
    "AudioBuffer",
    "CorpusManifest",
    "CostMatrix",
    "EvaluationResult",
    "FeatureSequence",
    "ManifestEntry",
    "MatchResult",
    "MfccConfig",
    "PairSamplingPlan",
    "QbeError",
    "QuerySpec",
    "RelevanceJudgments",
    "RetrievalMetrics",
    "RogueDimensionReport",
    "WordSpan",
    "anisotropy",
    "brute_force_min_cost",
    "build_protocol_corpus",
    "cosine",
    "cost_matrix",
    "evaluate",
    "judge",
    "load_manifest",
    "load_query_set",
    "make_planted_corpus",
    "mfcc",
    "precision_recall_at_k",
    "read_feature_file",
    "read_wav",
    "resolve_query",
    "rogue_dimensions",
    "save_manifest",
    "save_query_set",
    "score_corpus",
    "search",
    "similarity_distribution",
    "slice_by_span",
    "subsequence_dtw",
    "subsequence_dtw_cost",
    "write_feature_file",
]
