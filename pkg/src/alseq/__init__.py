"""Pool-based active learning for token-sequence labeling.

Scores unlabeled sentences with uncertainty measures biased toward
predicted-positive tokens, normalizes by a data-driven sentence-length
density, retrains a linear-chain CRF over precomputed token embeddings
between query rounds, and accounts annotation cost per sentence and per
token.
"""

__version__ = "0.1.0"

from .corpus import (
    ColumnLayout,
    Corpus,
    EntitySpan,
    LabelScheme,
    Sentence,
    Token,
    corpus_stats,
    extract_spans,
    load_conll,
    split_corpus,
)
from .embeddings import (
    EmbeddingMatrix,
    PcaModel,
    fit_pca,
    load_embeddings,
    pca_transform,
    read_embf,
    synth_embeddings,
    write_embf,
)
from .engine import ALConfig, ALSession, RunSummary, batch_size, run_experiment, tokens_to_reach
from .scoring import (
    AggregationStrategy,
    TokenCountDensity,
    UncertaintyMeasure,
    fit_token_count_density,
    rank_select,
    score_sentence,
    token_uncertainty,
)

__all__ = [
    "__version__",
    "ColumnLayout",
    "Corpus",
    "EntitySpan",
    "LabelScheme",
    "Sentence",
    "Token",
    "corpus_stats",
    "extract_spans",
    "load_conll",
    "split_corpus",
    "EmbeddingMatrix",
    "PcaModel",
    "fit_pca",
    "load_embeddings",
    "pca_transform",
    "read_embf",
    "synth_embeddings",
    "write_embf",
    "ALConfig",
    "ALSession",
    "RunSummary",
    "batch_size",
    "run_experiment",
    "tokens_to_reach",
    "AggregationStrategy",
    "TokenCountDensity",
    "UncertaintyMeasure",
    "fit_token_count_density",
    "rank_select",
    "score_sentence",
    "token_uncertainty",
]
