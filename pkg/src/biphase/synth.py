"""Synthetic corpora with planted relevance structure.

Each query gets exactly one relevant document through one of two disjoint
channels: a lexical channel (the pair shares one rare token drawn from a
reserved range no stopword list touches) or a semantic channel (the pair
shares a teacher-embedding cluster whose query-side and doc-side token pools
are disjoint, so the pair shares no token at all). Fixing the channel split
makes coverage claims about term entries and topic entries exactly testable.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .corpus import Document, Qrels, Query, save_qrels
from .errors import ConfigError, DataError
from .training import Teacher

LEXICAL = "lexical"
SEMANTIC = "semantic"

_STOPWORDS_IN_DOCS = ["the", "of", "and", "a", "in", "to", "is", "for", "on", "with"]


@dataclass
class PlantSpec:
    n_docs: int
    n_queries: int
    rho: float
    n_clusters: int = 32
    teacher_dim: int = 32
    seed: int = 0
    doc_general_pool: int = 400
    query_general_pool: int = 200
    cluster_doc_pool: int = 12
    cluster_query_pool: int = 8
    # corresponded attribute pairs: query side and doc side use different
    # token strings linked 1:1, so semantic relevance is recoverable from
    # tokens without any lexical overlap
    attr_pairs: int = 64
    attrs_per_pair: int = 3
    cluster_noise: float = 0.35
    pair_noise: float = 0.05
    # score scale: teacher inner products span roughly +-teacher_scale, so
    # the distillation targets are sharp instead of near-uniform
    teacher_scale: float = 8.0


@dataclass
class PlantedTask:
    docs: list[Document]
    queries: list[Query]
    qrels: Qrels
    teacher: Teacher
    spec: PlantSpec
    channel: dict[int, str] = field(default_factory=dict)

    def write(self, outdir: str) -> None:
        os.makedirs(outdir, exist_ok=True)
        with open(os.path.join(outdir, "corpus.tsv"), "w", encoding="utf-8", newline="\n") as fh:
            for doc in self.docs:
                fh.write(f"{doc.doc_id}\t{doc.text}\n")
        with open(os.path.join(outdir, "queries.tsv"), "w", encoding="utf-8", newline="\n") as fh:
            for q in self.queries:
                fh.write(f"{q.query_id}\t{q.text}\n")
        save_qrels(self.qrels, os.path.join(outdir, "qrels.tsv"))
        self.teacher.save(os.path.join(outdir, "teacher.bin"))
        with open(os.path.join(outdir, "task.json"), "w", encoding="utf-8", newline="\n") as fh:
            json.dump(
                {"spec": asdict(self.spec), "channel": {str(k): v for k, v in sorted(self.channel.items())}},
                fh,
                indent=2,
                sort_keys=True,
            )
            fh.write("\n")


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.maximum(norms, 1e-12)


def gen_clustered_embeddings(
    n: int, dim: int, clusters: int, seed: int = 0, noise: float = 0.25
) -> np.ndarray:
    """Unit-norm Gaussian mixture rows; row i belongs to cluster i % clusters."""
    if n < 1 or dim < 1 or clusters < 1:
        raise ConfigError("n, dim, and clusters must all be >= 1")
    rng = np.random.default_rng([seed, 11])
    centers = _unit_rows(rng.normal(size=(clusters, dim)))
    assign = np.arange(n) % clusters
    rows = centers[assign] + noise * rng.normal(size=(n, dim))
    return _unit_rows(rows)


def gen_bimodal(
    n_docs: int,
    n_queries: int,
    rho: float,
    seed: int = 0,
    *,
    n_clusters: int = 32,
    teacher_dim: int = 32,
    min_top1: float = 0.99,
) -> PlantedTask:
    """Planted task with a ``rho`` fraction of lexical-channel pairs.

    Document ids [0, n_queries) are the planted positives (doc i answers
    query i); the remainder are distractors spread over the semantic
    clusters. The generator verifies that the teacher ranks the planted
    positive first for at least ``min_top1`` of the queries and rejects the
    seed otherwise.
    """
    if not 0.0 <= rho <= 1.0:
        raise ConfigError(f"rho must be in [0, 1], got {rho}")
    if n_queries < 1 or n_docs < n_queries:
        raise ConfigError("need n_docs >= n_queries >= 1")
    spec = PlantSpec(
        n_docs=n_docs,
        n_queries=n_queries,
        rho=rho,
        n_clusters=n_clusters,
        teacher_dim=teacher_dim,
        seed=seed,
    )
    rng_pool = np.random.default_rng([seed, 0])
    rng_data = np.random.default_rng([seed, 1])
    rng_teacher = np.random.default_rng([seed, 2])

    doc_general = [f"dg{i:04d}" for i in range(spec.doc_general_pool)]
    query_general = [f"qg{i:04d}" for i in range(spec.query_general_pool)]
    doc_cluster = [
        [f"dc{c:02d}x{i:02d}" for i in range(spec.cluster_doc_pool)] for c in range(n_clusters)
    ]
    query_cluster = [
        [f"qc{c:02d}x{i:02d}" for i in range(spec.cluster_query_pool)] for c in range(n_clusters)
    ]
    attr_q = [f"qa{j:03d}" for j in range(spec.attr_pairs)]
    attr_d = [f"da{j:03d}" for j in range(spec.attr_pairs)]
    # consume one draw so pool layout stays pinned to its own stream
    rng_pool.integers(1 << 30)

    lex_count = int(round(rho * n_queries))
    lex_positions = set(int(i) for i in rng_data.permutation(n_queries)[:lex_count])

    centers = _unit_rows(rng_teacher.normal(size=(n_clusters, teacher_dim)))

    def pair_embeddings(direction: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        q = direction + spec.pair_noise * rng_teacher.normal(size=teacher_dim)
        d = direction + spec.pair_noise * rng_teacher.normal(size=teacher_dim)
        return _unit_rows(q), _unit_rows(d)

    def pick(rng: np.random.Generator, pool: list[str], count: int, replace: bool = False) -> list[str]:
        idx = rng.choice(len(pool), size=count, replace=replace)
        return [pool[int(i)] for i in idx]

    docs: list[Document] = []
    queries: list[Query] = []
    qrels = Qrels()
    channel: dict[int, str] = {}
    q_emb = np.zeros((n_queries, teacher_dim))
    d_emb = np.zeros((n_docs, teacher_dim))

    rare_counter = 0
    for i in range(n_queries):
        cluster = int(rng_data.integers(n_clusters))
        if i in lex_positions:
            channel[i] = LEXICAL
            # the pair shares one rare token from a reserved range
            rare = f"rare{rare_counter:05d}"
            rare_counter += 1
            q_tokens = [rare] + pick(rng_data, query_general, 3)
            d_tokens = [rare] * 3 + pick(rng_data, doc_general, 12) + pick(
                rng_data, _STOPWORDS_IN_DOCS, 3
            )
            direction = _unit_rows(rng_teacher.normal(size=teacher_dim))
        else:
            channel[i] = SEMANTIC
            # the pair is linked through corresponded attribute tokens: the
            # query carries query-side attributes, its relevant doc carries
            # exactly the doc-side counterparts, so the pair shares nothing
            # lexically yet stays identifiable from tokens
            attrs = [int(a) for a in rng_data.choice(spec.attr_pairs, spec.attrs_per_pair, replace=False)]
            q_tokens = [attr_q[j] for j in attrs] + pick(rng_data, query_cluster[cluster], 2)
            d_tokens = (
                [attr_d[j] for j in attrs] * 2
                + pick(rng_data, doc_cluster[cluster], 6)
                + pick(rng_data, doc_general, 4)
                + pick(rng_data, _STOPWORDS_IN_DOCS, 3)
            )
            direction = _unit_rows(centers[cluster] + spec.cluster_noise * rng_teacher.normal(size=teacher_dim))
        q_emb[i], d_emb[i] = pair_embeddings(direction)
        rng_data.shuffle(q_tokens)
        rng_data.shuffle(d_tokens)
        queries.append(Query(i, " ".join(q_tokens)))
        docs.append(Document(i, " ".join(d_tokens)))
        qrels.add(i, i)

    for j in range(n_queries, n_docs):
        cluster = int(rng_data.integers(n_clusters))
        attrs = [int(a) for a in rng_data.choice(spec.attr_pairs, spec.attrs_per_pair, replace=False)]
        d_tokens = (
            [attr_d[a] for a in attrs] * 2
            + pick(rng_data, doc_cluster[cluster], 6)
            + pick(rng_data, doc_general, 4)
            + pick(rng_data, _STOPWORDS_IN_DOCS, 3)
        )
        rng_data.shuffle(d_tokens)
        docs.append(Document(j, " ".join(d_tokens)))
        d_emb[j] = _unit_rows(
            centers[cluster] + spec.cluster_noise * rng_teacher.normal(size=teacher_dim)
        )

    root_scale = np.sqrt(spec.teacher_scale)
    q_emb *= root_scale
    d_emb *= root_scale
    teacher = Teacher(
        query_ids=np.arange(n_queries, dtype=np.uint32),
        query_emb=q_emb,
        doc_ids=np.arange(n_docs, dtype=np.uint32),
        doc_emb=d_emb,
    )

    scores = q_emb @ d_emb.T
    top1 = scores.argmax(axis=1)
    hit_rate = float((top1 == np.arange(n_queries)).mean())
    if hit_rate < min_top1:
        raise DataError(
            f"seed {seed} rejected: teacher ranks the planted positive first for "
            f"only {hit_rate:.3f} of queries (need >= {min_top1})"
        )
    return PlantedTask(docs=docs, queries=queries, qrels=qrels, teacher=teacher, spec=spec, channel=channel)
