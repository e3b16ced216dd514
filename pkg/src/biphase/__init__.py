"""Inverted-file retrieval over joint term and topic entries.

Documents and queries are scored against two kinds of inverted-file entries:
explicit vocabulary terms and learned latent topics. Search routes a query to
its top entries, prunes the posting-list union by membership similarity, and
re-ranks the survivors with product-quantization ADC scores. Memberships and
codebooks are trained by distilling a teacher scorer.
"""

from .corpus import (
    Document,
    Qrels,
    Query,
    Vocabulary,
    build_vocab,
    default_stopwords,
    load_qrels,
    load_tsv_corpus,
    load_tsv_queries,
    overlap_analysis,
    tokenize,
)
from .encoder import (
    MembershipVector,
    ToyEncoder,
    apply_template_k,
    compute_memberships,
    encode,
    term_membership,
    top_k_entries,
    topic_membership,
)
from .errors import (
    BiphaseError,
    ChecksumError,
    ConfigError,
    DataError,
    DuplicateIdError,
    FileFormatError,
    TruncatedFileError,
    VersionError,
)
from .estimator import BiPhaseRetriever
from .evaluation import MetricReport, ablate, evaluate_run, flops, mrr_at_k, recall_at_k, sweep
from .index import BiPhaseIndex, IndexBuilder, IndexConfig, build
from .quantizer import (
    PQCodebook,
    ProductQuantizer,
    adc_score,
    batch_adc,
    load_codebook,
    reconstruct,
    save_codebook,
    train_codebook,
)
from .retrieval import SearchParams, SearchResult, search, search_exhaustive
from .synth import PlantedTask, gen_bimodal, gen_clustered_embeddings
from .training import Teacher, TrainConfig, TrainResult, kd_loss, total_loss, train

__version__ = "0.1.0"

__all__ = [
    "BiPhaseIndex",
    "BiPhaseRetriever",
    "BiphaseError",
    "ChecksumError",
    "ConfigError",
    "DataError",
    "Document",
    "DuplicateIdError",
    "FileFormatError",
    "IndexBuilder",
    "IndexConfig",
    "MembershipVector",
    "MetricReport",
    "PQCodebook",
    "PlantedTask",
    "ProductQuantizer",
    "Qrels",
    "Query",
    "SearchParams",
    "SearchResult",
    "Teacher",
    "ToyEncoder",
    "TrainConfig",
    "TrainResult",
    "TruncatedFileError",
    "VersionError",
    "Vocabulary",
    "ablate",
    "adc_score",
    "apply_template_k",
    "batch_adc",
    "build",
    "build_vocab",
    "compute_memberships",
    "default_stopwords",
    "encode",
    "evaluate_run",
    "flops",
    "gen_bimodal",
    "gen_clustered_embeddings",
    "kd_loss",
    "load_codebook",
    "load_qrels",
    "load_tsv_corpus",
    "load_tsv_queries",
    "mrr_at_k",
    "overlap_analysis",
    "recall_at_k",
    "reconstruct",
    "save_codebook",
    "search",
    "search_exhaustive",
    "sweep",
    "term_membership",
    "tokenize",
    "top_k_entries",
    "topic_membership",
    "total_loss",
    "train",
    "train_codebook",
]
