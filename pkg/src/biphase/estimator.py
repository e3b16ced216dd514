"""Estimator facade so the whole engine composes like an sklearn model.

``fit`` builds the vocabulary, distills the encoder/codebook against the
teacher, and constructs the index; ``search``/``predict`` run queries. All
constructor arguments are plain hyperparameters, so get_params/set_params and
clone() behave as usual.
"""

from __future__ import annotations

from typing import Sequence

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .corpus import (
    Document,
    Qrels,
    Query,
    build_vocab,
    default_stopwords,
    tokenize_documents,
    tokenize_queries,
)
from .errors import ConfigError, DataError
from .index import IndexConfig, build
from .retrieval import SearchParams, search
from .training import Teacher, TrainConfig, train


def _as_documents(docs: Sequence) -> list[Document]:
    out = []
    for i, d in enumerate(docs):
        if isinstance(d, Document):
            out.append(d)
        elif isinstance(d, str):
            out.append(Document(i, d))
        else:
            raise ConfigError(f"documents must be Document or str, got {type(d).__name__}")
    return out


def _as_queries(queries: Sequence) -> list[Query]:
    out = []
    for i, q in enumerate(queries):
        if isinstance(q, Query):
            out.append(q)
        elif isinstance(q, str):
            out.append(Query(i, q))
        else:
            raise ConfigError(f"queries must be Query or str, got {type(q).__name__}")
    return out


class BiPhaseRetriever(BaseEstimator):
    def __init__(
        self,
        dim: int = 16,
        n_topics: int = 64,
        k_topic: int = 8,
        k_term: int = 16,
        pq_subspaces: int = 4,
        pq_centroids: int = 16,
        learning_rate: float = 1e-3,
        batch_size: int = 8,
        epochs: int = 30,
        hard_negatives: int = 3,
        patience: int = 5,
        val_fraction: float = 0.1,
        k_topic_query: int = 8,
        prune_to: int = 5000,
        final_k: int = 1000,
        min_freq: int = 1,
        max_doc_tokens: int = 128,
        max_query_tokens: int = 32,
        seed: int = 0,
    ):
        self.dim = dim
        self.n_topics = n_topics
        self.k_topic = k_topic
        self.k_term = k_term
        self.pq_subspaces = pq_subspaces
        self.pq_centroids = pq_centroids
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.hard_negatives = hard_negatives
        self.patience = patience
        self.val_fraction = val_fraction
        self.k_topic_query = k_topic_query
        self.prune_to = prune_to
        self.final_k = final_k
        self.min_freq = min_freq
        self.max_doc_tokens = max_doc_tokens
        self.max_query_tokens = max_query_tokens
        self.seed = seed

    def fit(self, docs: Sequence, queries: Sequence, qrels: Qrels, teacher: Teacher):
        docs = _as_documents(docs)
        queries = _as_queries(queries)
        if not docs:
            raise DataError("cannot fit on an empty corpus")
        vocab = build_vocab(list(docs) + list(queries), self.min_freq, default_stopwords())
        tokenize_documents(docs, vocab, self.max_doc_tokens)
        tokenize_queries(queries, vocab, self.max_query_tokens)
        cfg = TrainConfig(
            dim=self.dim,
            n_topics=self.n_topics,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            hard_negatives=self.hard_negatives,
            k_topic=self.k_topic,
            seed=self.seed,
            patience=self.patience,
            val_fraction=self.val_fraction,
            pq_subspaces=self.pq_subspaces,
            pq_centroids=self.pq_centroids,
        )
        result = train(docs, queries, qrels, teacher, cfg, vocab)
        index_cfg = IndexConfig(
            n_topics=self.n_topics,
            vocab_size=vocab.size,
            dim=self.dim,
            m=self.pq_subspaces,
            k=self.pq_centroids,
            k_topic=self.k_topic,
            k_term=self.k_term,
            max_doc_tokens=self.max_doc_tokens,
            max_query_tokens=self.max_query_tokens,
        )
        self.vocab_ = vocab
        self.encoder_ = result.encoder
        self.codebook_ = result.codebook
        self.index_ = build(docs, result.encoder, result.codebook, index_cfg, vocab)
        self.history_ = result.history
        return self

    def _params(self, k: int | None) -> SearchParams:
        final_k = self.final_k if k is None else k
        return SearchParams(
            k_topic_query=self.k_topic_query,
            prune_to=max(self.prune_to, final_k),
            final_k=final_k,
        )

    def search(self, queries: Sequence, k: int | None = None) -> list[list[tuple[int, float]]]:
        """Ranked (doc_id, score) lists, one per query."""
        check_is_fitted(self, "index_")
        params = self._params(k)
        return [
            search(self.index_, self.encoder_, q, params).ranked for q in _as_queries(queries)
        ]

    def predict(self, queries: Sequence) -> list[int | None]:
        """Top-ranked doc id per query (None when nothing is retrieved)."""
        hits = self.search(queries, k=1)
        return [h[0][0] if h else None for h in hits]
