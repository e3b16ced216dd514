"""Ranking metrics, an auditable operation-count model, sweeps, and ablations.

The operation count covers the three priced stages of a search: posting-list
accumulation during pruning, the per-query ADC lookup-table build, and the ADC
sums over verified candidates. Absolute values only support comparisons across
configurations of this engine, not across systems.
"""

from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .corpus import Document, Qrels, Query, Vocabulary
from .encoder import ToyEncoder, sequence_states_batch
from .errors import ConfigError, DataError
from .index import BiPhaseIndex, IndexConfig, build
from .quantizer import train_codebook
from .retrieval import CostCounters, SearchParams, search
from .training import TrainConfig, TrainResult, Teacher, train

logger = logging.getLogger(__name__)

ABLATION_MODES = (
    "full",
    "no_terms",
    "no_topics",
    "no_pq",
    "no_distill",
    "no_sparsity",
    "kmeans_topics",
)

Run = dict[int, list[tuple[int, float]]]


@dataclass
class FlopsReport:
    postings: float  # mean posting entries accumulated per query
    table: float  # ADC table build, m * k
    adc: float  # m * mean verified candidates per query
    n_queries: int

    @property
    def total(self) -> float:
        """Total in units of 10^6 operations."""
        return (self.postings + self.table + self.adc) / 1e6

    def to_dict(self) -> dict:
        return {
            "postings": self.postings,
            "table": self.table,
            "adc": self.adc,
            "total_mops": self.total,
            "n_queries": self.n_queries,
        }


@dataclass
class MetricReport:
    mrr_at: dict[int, float]
    recall_at: dict[int, float]
    flops: FlopsReport | None = None
    per_query: dict[int, dict] | None = None

    def to_dict(self) -> dict:
        out = {
            "mrr_at": {str(k): v for k, v in sorted(self.mrr_at.items())},
            "recall_at": {str(k): v for k, v in sorted(self.recall_at.items())},
        }
        if self.flops is not None:
            out["flops"] = self.flops.to_dict()
        if self.per_query is not None:
            out["per_query"] = {str(k): v for k, v in sorted(self.per_query.items())}
        return out


def read_run_file(path: str) -> Run:
    run: Run = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataError(f"{path}:{lineno}: expected qid<TAB>docid<TAB>rank<TAB>score")
            try:
                qid, did, rank, score = int(parts[0]), int(parts[1]), int(parts[2]), float(parts[3])
            except ValueError:
                raise DataError(f"{path}:{lineno}: malformed run row") from None
            rows = run.setdefault(qid, [])
            if rank != len(rows) + 1:
                raise DataError(f"{path}:{lineno}: rank {rank} out of sequence")
            rows.append((did, score))
    return run


def _judged_query_ids(qrels: Qrels) -> list[int]:
    judged = [q for q in qrels.query_ids() if qrels.relevant(q)]
    skipped = len(qrels.query_ids()) - len(judged)
    if skipped:
        logger.info("excluding %d queries with no relevant documents", skipped)
    return judged


def mrr_at_k(run: Run, qrels: Qrels, k: int) -> float:
    """Mean reciprocal rank of the first relevant doc within the top ``k``."""
    if k < 1:
        raise ConfigError("k must be >= 1")
    judged = _judged_query_ids(qrels)
    if not judged:
        raise DataError("no judged queries")
    total = 0.0
    for qid in judged:
        relevant = qrels.relevant(qid)
        for rank, (did, _) in enumerate(run.get(qid, [])[:k], start=1):
            if did in relevant:
                total += 1.0 / rank
                break
    return total / len(judged)


def recall_at_k(run: Run, qrels: Qrels, k: int) -> float:
    """Mean fraction of each query's relevant docs found in the top ``k``."""
    if k < 1:
        raise ConfigError("k must be >= 1")
    judged = _judged_query_ids(qrels)
    if not judged:
        raise DataError("no judged queries")
    total = 0.0
    for qid in judged:
        relevant = qrels.relevant(qid)
        retrieved = {did for did, _ in run.get(qid, [])[:k]}
        total += len(relevant & retrieved) / len(relevant)
    return total / len(judged)


def flops_from_counters(m: int, k: int, counters: Sequence[CostCounters]) -> FlopsReport:
    if not counters:
        raise DataError("operation count needs at least one query")
    mean_postings = float(np.mean([c.postings_scanned for c in counters]))
    mean_adc = float(np.mean([c.adc_evals for c in counters]))
    return FlopsReport(
        postings=mean_postings,
        table=float(m * k),
        adc=float(m * mean_adc),
        n_queries=len(counters),
    )


def search_all(
    idx: BiPhaseIndex,
    enc: ToyEncoder,
    queries: Sequence[Query],
    params: SearchParams,
) -> tuple[Run, list[CostCounters]]:
    run: Run = {}
    counters: list[CostCounters] = []
    for query in queries:
        result = search(idx, enc, query, params)
        run[query.query_id] = result.ranked
        counters.append(result.cost)
    return run, counters


def flops(
    idx: BiPhaseIndex,
    enc: ToyEncoder,
    queries: Sequence[Query],
    params: SearchParams | None = None,
) -> FlopsReport:
    if not queries:
        raise DataError("operation count needs at least one query")
    params = params or SearchParams()
    _, counters = search_all(idx, enc, queries, params)
    return flops_from_counters(idx.config.m, idx.config.k, counters)


def evaluate_run(
    run: Run,
    qrels: Qrels,
    mrr_ks: Sequence[int] = (10,),
    recall_ks: Sequence[int] = (10, 100, 1000),
    flops_report: FlopsReport | None = None,
) -> MetricReport:
    return MetricReport(
        mrr_at={k: mrr_at_k(run, qrels, k) for k in mrr_ks},
        recall_at={k: recall_at_k(run, qrels, k) for k in recall_ks},
        flops=flops_report,
    )


def candidate_recall(
    idx: BiPhaseIndex,
    enc: ToyEncoder,
    queries: Sequence[Query],
    qrels: Qrels,
    params: SearchParams,
) -> tuple[float, float]:
    """Coverage of relevant docs by the pruned candidate pool.

    Returns (mean recall of the pool, mean postings scanned per query).
    """
    judged = set(_judged_query_ids(qrels))
    total = 0.0
    n = 0
    postings = []
    for query in queries:
        if query.query_id not in judged:
            continue
        result = search(idx, enc, query, params)
        pool = {did for did, _ in result.pruned_pool}
        relevant = qrels.relevant(query.query_id)
        total += len(relevant & pool) / len(relevant)
        postings.append(result.cost.postings_scanned)
        n += 1
    if n == 0:
        raise DataError("no judged queries")
    return total / n, float(np.mean(postings))


def sweep(
    docs: Sequence[Document],
    queries: Sequence[Query],
    qrels: Qrels,
    enc: ToyEncoder,
    vocab: Vocabulary,
    base_config: IndexConfig,
    base_params: SearchParams,
    grid: Mapping[str, Sequence],
    seed: int = 0,
    mrr_ks: Sequence[int] = (10,),
    recall_ks: Sequence[int] = (10, 100, 1000),
) -> list[dict]:
    """Grid runs over index and search knobs on a fixed corpus.

    Supported axes: k_topic, k_term, m (codebook count), prune_to, nprobe.
    Indexes are rebuilt only when an index-side knob changes.
    """
    allowed = {"k_topic", "k_term", "m", "prune_to", "nprobe"}
    unknown = set(grid) - allowed
    if unknown:
        raise ConfigError(f"unknown sweep axes: {sorted(unknown)}")
    axes = sorted(grid)
    values = [list(grid[a]) for a in axes]
    doc_states = None
    index_cache: dict[tuple, BiPhaseIndex] = {}
    codebook_cache: dict[int, object] = {}
    rows: list[dict] = []
    for combo in itertools.product(*values):
        point = dict(zip(axes, combo))
        k_topic = int(point.get("k_topic", base_config.k_topic))
        k_term = int(point.get("k_term", base_config.k_term))
        m = int(point.get("m", base_config.m))
        key = (k_topic, k_term, m)
        if key not in index_cache:
            if m not in codebook_cache:
                if doc_states is None:
                    doc_states = sequence_states_batch(enc, [d.tokens for d in docs])
                codebook_cache[m] = train_codebook(doc_states, m, base_config.k, seed)
            cfg = IndexConfig(
                n_topics=base_config.n_topics,
                vocab_size=base_config.vocab_size,
                dim=base_config.dim,
                m=m,
                k=base_config.k,
                k_topic=k_topic,
                k_term=k_term,
                max_doc_tokens=base_config.max_doc_tokens,
                max_query_tokens=base_config.max_query_tokens,
            )
            index_cache[key] = build(docs, enc, codebook_cache[m], cfg, vocab)
        idx = index_cache[key]
        params = SearchParams(
            k_topic_query=int(point.get("nprobe", base_params.k_topic_query)),
            use_all_query_terms=base_params.use_all_query_terms,
            k_term_query=base_params.k_term_query,
            prune_to=int(point.get("prune_to", base_params.prune_to)),
            final_k=base_params.final_k,
            use_pq=base_params.use_pq,
        )
        run, counters = search_all(idx, enc, queries, params)
        report = evaluate_run(
            run, qrels, mrr_ks, recall_ks, flops_from_counters(m, base_config.k, counters)
        )
        row = {
            "k_topic": k_topic,
            "k_term": k_term,
            "m": m,
            "prune_to": params.prune_to,
            "nprobe": params.k_topic_query,
        }
        for k, v in sorted(report.mrr_at.items()):
            row[f"mrr@{k}"] = v
        for k, v in sorted(report.recall_at.items()):
            row[f"recall@{k}"] = v
        row["flops_mops"] = report.flops.total
        row["postings"] = report.flops.postings
        rows.append(row)
    return rows


def write_sweep_csv(rows: Sequence[Mapping], path: str) -> None:
    if not rows:
        raise DataError("sweep produced no rows")
    fields = list(rows[0].keys())
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _replace_topics_with_kmeans(
    enc: ToyEncoder, docs: Sequence[Document], seed: int
) -> ToyEncoder:
    """Unsupervised topic entries: k-means centroids over document states."""
    from .quantizer import lloyd_kmeans

    states = sequence_states_batch(enc, [d.tokens for d in docs])
    rng = np.random.default_rng([seed, 23])
    centroids, _ = lloyd_kmeans(states, enc.n_topics, rng)
    clone = enc.copy()
    clone.topics = centroids
    clone.topic_bias = np.zeros_like(clone.topic_bias)
    return clone.quantized()


def ablate(
    mode: str,
    docs: Sequence[Document],
    queries: Sequence[Query],
    qrels: Qrels,
    teacher: Teacher,
    vocab: Vocabulary,
    train_cfg: TrainConfig,
    k_topic: int = 8,
    k_term: int = 16,
    params: SearchParams | None = None,
    trained: TrainResult | None = None,
    mrr_ks: Sequence[int] = (10,),
    recall_ks: Sequence[int] = (10, 100, 1000),
    max_doc_tokens: int = 128,
    max_query_tokens: int = 32,
) -> MetricReport:
    """Disable exactly one mechanism and measure the effect.

    ``trained`` is reused where the trained model is unaffected; the
    no_distill and no_sparsity modes retrain with the modified objective.
    """
    if mode not in ABLATION_MODES:
        raise ConfigError(f"unknown ablation mode {mode!r}; pick one of {ABLATION_MODES}")
    params = params or SearchParams()

    if mode == "no_distill":
        cfg = TrainConfig(**{**train_cfg.__dict__, "objective": "contrastive"})
        trained = train(docs, queries, qrels, teacher, cfg, vocab)
    elif mode == "no_sparsity":
        cfg = TrainConfig(**{**train_cfg.__dict__, "use_template": False})
        trained = train(docs, queries, qrels, teacher, cfg, vocab)
    elif trained is None:
        trained = train(docs, queries, qrels, teacher, train_cfg, vocab)

    enc = trained.encoder
    if mode == "kmeans_topics":
        enc = _replace_topics_with_kmeans(enc, docs, train_cfg.seed)

    idx_k_topic = 0 if mode == "no_topics" else k_topic
    idx_k_term = 0 if mode == "no_terms" else k_term
    cfg = IndexConfig(
        n_topics=enc.n_topics,
        vocab_size=vocab.size,
        dim=enc.dim,
        m=trained.codebook.m,
        k=trained.codebook.k,
        k_topic=idx_k_topic,
        k_term=idx_k_term,
        max_doc_tokens=max_doc_tokens,
        max_query_tokens=max_query_tokens,
    )
    idx = build(docs, enc, trained.codebook, cfg, vocab)

    search_params = SearchParams(
        k_topic_query=0 if mode == "no_topics" else params.k_topic_query,
        use_all_query_terms=False if mode == "no_terms" else params.use_all_query_terms,
        k_term_query=0 if mode == "no_terms" else params.k_term_query,
        prune_to=params.prune_to,
        final_k=params.final_k,
        use_pq=mode != "no_pq",
    )
    run, counters = search_all(idx, enc, queries, search_params)
    return evaluate_run(
        run,
        qrels,
        mrr_ks,
        recall_ks,
        flops_from_counters(cfg.m, cfg.k, counters),
    )
