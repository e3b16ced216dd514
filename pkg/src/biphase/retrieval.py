"""Three-step search: routing, posting-list pruning, PQ post-verification.

Pruning accumulates, over the union of posting lists the query routes to, the
membership similarity sum(phi_q[l] * phi_d[l]) and keeps the head of the
sorted candidates; post-verification re-ranks that head by ADC score. Ties
break toward the smaller doc id everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import Query, tokenize
from .encoder import MembershipVector, ToyEncoder, encode, term_membership, topic_membership
from .errors import ConfigError
from .index import BiPhaseIndex, EntryId, Phase
from .quantizer import batch_adc


@dataclass
class SearchParams:
    k_topic_query: int = 8  # topic posting lists to visit (nprobe)
    use_all_query_terms: bool = True
    k_term_query: int | None = None  # only consulted when use_all_query_terms is off
    prune_to: int = 5000
    final_k: int = 1000
    counters_enabled: bool = True
    use_pq: bool = True  # off: rank by membership similarity alone
    route_all: bool = False  # diagnostic: visit every entry in the index

    def validate(self) -> None:
        if self.final_k < 1:
            raise ConfigError("final_k must be >= 1")
        if self.prune_to < self.final_k:
            raise ConfigError("prune_to must be >= final_k")
        if self.k_topic_query < 0:
            raise ConfigError("k_topic_query must be >= 0")


@dataclass
class CostCounters:
    postings_scanned: int = 0
    candidates_union: int = 0
    adc_evals: int = 0


@dataclass
class SearchResult:
    ranked: list[tuple[int, float]] = field(default_factory=list)
    pruned_pool: list[tuple[int, float]] = field(default_factory=list)
    cost: CostCounters = field(default_factory=CostCounters)


def route(query_mem: MembershipVector, params: SearchParams) -> list[EntryId]:
    """Entries the query visits: top positive topics plus its positive terms."""
    params.validate()
    entries: list[EntryId] = []
    phi = query_mem.topic
    order = np.argsort(-phi, kind="stable")[: params.k_topic_query]
    entries.extend(
        EntryId(Phase.TOPIC, int(i)) for i in sorted(int(j) for j in order if phi[j] > 0.0)
    )
    term_ids = sorted(t for t, w in query_mem.term.items() if w > 0.0)
    if not params.use_all_query_terms and params.k_term_query is not None:
        ranked = sorted(term_ids, key=lambda t: (-query_mem.term[t], t))
        term_ids = sorted(ranked[: params.k_term_query])
    entries.extend(EntryId(Phase.TERM, t) for t in term_ids)
    return entries


def _query_weight(query_mem: MembershipVector, entry: EntryId) -> float:
    if entry.phase is Phase.TOPIC:
        return float(query_mem.topic[entry.entry])
    return float(query_mem.term.get(entry.entry, 0.0))


def prune(
    idx: BiPhaseIndex,
    query_mem: MembershipVector,
    entries: list[EntryId],
    prune_to: int,
    counters: CostCounters | None = None,
) -> list[tuple[int, float]]:
    """Top ``prune_to`` docs of the hit-list union by membership similarity."""
    id_parts: list[np.ndarray] = []
    contrib_parts: list[np.ndarray] = []
    scanned = 0
    for entry in entries:
        plist = idx.posting_list(entry)
        scanned += len(plist)
        if len(plist) == 0:
            continue
        id_parts.append(plist.doc_ids)
        contrib_parts.append(
            plist.weights.astype(np.float64) * _query_weight(query_mem, entry)
        )
    if counters is not None:
        counters.postings_scanned += scanned
    if not id_parts:
        return []
    all_ids = np.concatenate(id_parts)
    all_contribs = np.concatenate(contrib_parts)
    uniq, inverse = np.unique(all_ids, return_inverse=True)
    sims = np.bincount(inverse, weights=all_contribs)
    if counters is not None:
        counters.candidates_union += len(uniq)
    # uniq is ascending, so a stable sort on -sims breaks ties by smaller id.
    order = np.argsort(-sims, kind="stable")[:prune_to]
    return [(int(uniq[i]), float(sims[i])) for i in order]


def post_verify(
    idx: BiPhaseIndex,
    q_emb: np.ndarray,
    candidates: list[tuple[int, float]],
    final_k: int,
    counters: CostCounters | None = None,
) -> list[tuple[int, float]]:
    """Re-rank candidates by ADC score against their stored codes."""
    if not candidates:
        return []
    doc_ids = np.asarray([d for d, _ in candidates], dtype=np.uint32)
    scores = batch_adc(idx.codebook, q_emb, idx.codes_for(doc_ids))
    if counters is not None:
        counters.adc_evals += len(candidates)
    order = np.lexsort((doc_ids, -scores))[:final_k]
    return [(int(doc_ids[i]), float(scores[i])) for i in order]


def search_memberships(
    idx: BiPhaseIndex,
    query_mem: MembershipVector,
    q_emb: np.ndarray,
    params: SearchParams,
) -> SearchResult:
    """Routing, pruning, and post-verification over precomputed memberships."""
    params.validate()
    counters = CostCounters() if params.counters_enabled else None
    if params.route_all:
        entries = idx.entry_ids()
    else:
        entries = route(query_mem, params)
    pool = prune(idx, query_mem, entries, params.prune_to, counters)
    if params.use_pq:
        ranked = post_verify(idx, q_emb, pool, params.final_k, counters)
    else:
        ranked = pool[: params.final_k]
    return SearchResult(ranked=ranked, pruned_pool=pool, cost=counters or CostCounters())


def search(
    idx: BiPhaseIndex,
    enc: ToyEncoder,
    query: Query,
    params: SearchParams | None = None,
) -> SearchResult:
    """Tokenize against the index vocabulary and run the three-step search.

    A query with no in-vocabulary tokens yields an empty result rather than
    an error.
    """
    params = params or SearchParams()
    params.validate()
    tokens = tokenize(query.text, idx.vocab, idx.config.max_query_tokens)
    if not tokens:
        return SearchResult()
    hs = encode(enc, tokens)
    query_mem = MembershipVector(
        topic=topic_membership(enc, hs.h0),
        term=term_membership(enc, tokens, hs),
    )
    return search_memberships(idx, query_mem, hs.h0, params)


def search_exhaustive(idx: BiPhaseIndex, q_emb: np.ndarray, final_k: int) -> list[tuple[int, float]]:
    """ADC ranking over every indexed document, bypassing the inverted file."""
    if idx.doc_count == 0:
        return []
    scores = batch_adc(idx.codebook, q_emb, idx.codes)
    order = np.lexsort((idx.code_doc_ids, -scores))[:final_k]
    return [(int(idx.code_doc_ids[i]), float(scores[i])) for i in order]


def write_run_file(path: str, runs: dict[int, list[tuple[int, float]]]) -> None:
    """TREC-style run rows: qid<TAB>docid<TAB>rank<TAB>score."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for qid in sorted(runs):
            for rank, (doc_id, score) in enumerate(runs[qid], start=1):
                fh.write(f"{qid}\t{doc_id}\t{rank}\t{score:.6f}\n")
