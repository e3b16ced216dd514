"""Acceptance suite: one test per criterion, in order, at pinned tolerances.

Retrieval-quality criteria run on a planted bimodal task (10k docs, half
lexical / half semantic relevance) with a model trained end to end inside the
module fixture. Coverage/complementarity criteria evaluate on 300 held-out
queries the trainer never saw; trained-quality criteria evaluate on the 1200
training queries. Each test records a `[criterion N] PASS` line, echoed in
the terminal summary.
"""

import time

import numpy as np
import pytest

from biphase.corpus import Qrels, build_vocab, default_stopwords, tokenize, tokenize_documents, tokenize_queries
from biphase.encoder import ToyEncoder, apply_template_k, encode, sequence_states_batch, top_k_entries
from biphase.errors import ChecksumError
from biphase.evaluation import (
    _replace_topics_with_kmeans,
    candidate_recall,
    evaluate_run,
    flops_from_counters,
    mrr_at_k,
    recall_at_k,
    search_all,
)
from biphase.index import BiPhaseIndex, IndexConfig, build
from biphase.quantizer import PQCodebook, batch_adc, encode_batch, reconstruct_batch, train_codebook
from biphase.retrieval import SearchParams, search, search_exhaustive, write_run_file
from biphase.synth import gen_bimodal
from biphase.training import TrainConfig, kd_loss, student_s1, train

from conftest import acceptance_lines
from test_training import fd_gradcheck

SEED = 7
N_DOCS = 10_000
N_QUERIES = 1_500
N_TRAIN = 1_200
DIM = 32
N_TOPICS = 256
PQ_M = 8
PQ_K = 128
K_TOPIC = 8
K_TERM = 16
NPROBE_LADDER = (1, 2, 4, 8, 16, 32)


def record(criterion: int, detail: str) -> None:
    line = f"[criterion {criterion:>2}] PASS  {detail}"
    acceptance_lines.append(line)
    print(line)


@pytest.fixture(scope="module")
def task():
    t = gen_bimodal(N_DOCS, N_QUERIES, 0.5, seed=SEED, n_clusters=64, teacher_dim=32)
    vocab = build_vocab(list(t.docs) + list(t.queries), 1, default_stopwords())
    tokenize_documents(t.docs, vocab, 128)
    tokenize_queries(t.queries, vocab, 32)
    return t, vocab


@pytest.fixture(scope="module")
def trained(task):
    t, vocab = task
    cfg = TrainConfig(
        dim=DIM, n_topics=N_TOPICS, epochs=90, learning_rate=3e-3, batch_size=8,
        hard_negatives=3, k_topic=K_TOPIC, seed=SEED, val_fraction=0.0,
        pq_subspaces=PQ_M, pq_centroids=PQ_K, warmup_epochs=10, patience=99,
    )
    start = time.monotonic()
    result = train(t.docs, t.queries[:N_TRAIN], t.qrels, t.teacher, cfg, vocab)
    elapsed = time.monotonic() - start
    assert elapsed < 300, f"training took {elapsed:.0f}s, budget is 5 minutes"
    return result


@pytest.fixture(scope="module")
def index(task, trained):
    t, vocab = task
    cfg = IndexConfig(
        n_topics=N_TOPICS, vocab_size=vocab.size, dim=DIM, m=PQ_M, k=PQ_K,
        k_topic=K_TOPIC, k_term=K_TERM, max_doc_tokens=128, max_query_tokens=32,
    )
    return build(t.docs, trained.encoder, trained.codebook, cfg, vocab)


def _qrels_for(t, queries) -> Qrels:
    return Qrels({q.query_id: t.qrels.relevant(q.query_id) for q in queries})


def _teacher_recall_at_10(t, queries) -> float:
    hits = sum(
        1 for q in queries if t.qrels.relevant(q.query_id) & set(t.teacher.rank_all(q.query_id, 10))
    )
    return hits / len(queries)


def test_criterion_1_exhaustive_equivalence(task):
    t, vocab = task
    start = time.monotonic()
    enc = ToyEncoder.random(vocab.size, 16, 32, seed=5)
    doc_states = sequence_states_batch(enc, [d.tokens for d in t.docs])
    codebook = train_codebook(doc_states, m=4, k=16, seed=5)
    cfg = IndexConfig(
        n_topics=32, vocab_size=vocab.size, dim=16, m=4, k=16,
        k_topic=K_TOPIC, k_term=K_TERM, max_doc_tokens=128, max_query_tokens=32,
    )
    idx = build(t.docs, enc, codebook, cfg, vocab)
    reachable = set()
    for plist in list(idx.topic_lists) + list(idx.term_lists.values()):
        reachable.update(int(d) for d in plist.doc_ids)
    params = SearchParams(
        k_topic_query=32, prune_to=idx.doc_count, final_k=100, route_all=True
    )
    checked = 0
    for query in t.queries[:10]:
        result = search(idx, enc, query, params)
        tokens = tokenize(query.text, vocab, 32)
        q_emb = encode(enc, tokens).h0
        exhaustive = search_exhaustive(idx, q_emb, idx.doc_count)
        expected = [(d, s) for d, s in exhaustive if d in reachable][:100]
        assert result.ranked == expected, f"query {query.query_id} diverges"
        checked += 1
    elapsed = time.monotonic() - start
    assert elapsed < 60, f"took {elapsed:.1f}s, budget 60s"
    record(1, f"full-coverage search == exhaustive top-100 on {checked} queries "
              f"({idx.doc_count} docs, {elapsed:.1f}s)")


def test_criterion_2_adc_exactness():
    rng = np.random.default_rng(2024)
    cb = PQCodebook(rng.normal(size=(PQ_M, 32, 4)).astype(np.float32))
    n_q, n_c = 100, 100
    worst = 0.0
    for _ in range(n_q):
        q = rng.normal(size=cb.dim)
        codes = rng.integers(0, cb.k, size=(n_c, cb.m))
        got = batch_adc(cb, q, codes)
        direct = reconstruct_batch(cb, codes) @ q
        rel = np.abs(got - direct) / np.maximum(np.abs(direct), 1e-9)
        worst = max(worst, float(rel.max()))
    assert worst <= 1e-5, f"worst relative ADC error {worst:.2e}"

    # every document sub-vector is a centroid: ADC equals the exact product
    docs = rng.normal(size=(16, cb.dim))
    cents = np.stack([docs[:, s * 4 : (s + 1) * 4] for s in range(PQ_M)]).astype(np.float32)
    exact_cb = PQCodebook(cents)
    snapped = reconstruct_batch(exact_cb, encode_batch(exact_cb, docs))
    codes = encode_batch(exact_cb, snapped)
    for i in range(16):
        q = rng.normal(size=cb.dim)
        got = batch_adc(exact_cb, q, codes[i : i + 1])[0]
        want = float(q @ snapped[i])
        assert abs(got - want) <= 1e-5 * max(abs(want), 1e-9)
    record(2, f"{n_q * n_c} random (q, code) pairs within 1e-5; centroid-exact docs recover ⟨q,x⟩")


def test_criterion_3_gradient_checks():
    start = time.monotonic()
    seeds = (1, 2, 3, 4, 5, 6)
    total = 0
    for seed in seeds:
        total += fd_gradcheck(seed, h=1e-5, rtol=1e-4, atol=1e-7)
    elapsed = time.monotonic() - start
    assert elapsed < 30, f"gradient checks took {elapsed:.1f}s, budget 30s"
    record(3, f"{len(seeds)} tiny batches, {total} parameter gradients vs central "
              f"differences at 1e-4 relative ({elapsed:.1f}s)")


def test_criterion_4_sparsity_invariants():
    rng = np.random.default_rng(44)
    k = 6
    checked = 0
    for _ in range(300):
        phi = rng.normal(size=24)
        masked = apply_template_k(phi, k)
        assert np.count_nonzero(masked) <= k
        if all(phi[i] > 0 for i in top_k_entries(phi, k)):
            np.testing.assert_array_equal(apply_template_k(masked, k), masked)
            checked += 1
    assert checked > 200  # the positive-top-k precondition held for most draws

    exact = 0
    for seed in range(20):
        srng = np.random.default_rng(seed)
        q = srng.normal(size=12) + 2.0
        d = srng.normal(size=12) + 2.0
        teacher = srng.normal(size=2)
        mq = apply_template_k(q, 4)
        baseline = kd_loss(teacher, [student_s1(mq, apply_template_k(d, 4)), 0.0])
        perturbed = d.copy()
        victim = [i for i in range(12) if i not in top_k_entries(d, 4)][0]
        perturbed[victim] -= 0.5
        assert top_k_entries(perturbed, 4) == top_k_entries(d, 4)
        after = kd_loss(teacher, [student_s1(mq, apply_template_k(perturbed, 4)), 0.0])
        assert after == baseline  # exactly zero change
        exact += 1
    record(4, f"top-k masks: <=k nonzeros, idempotent on {checked} draws; "
              f"non-selected perturbations moved the topic-student loss by exactly 0 in {exact} cases")


def test_criterion_5_traversal_curve(task, trained):
    t, vocab = task
    kmeans_enc = _replace_topics_with_kmeans(trained.encoder, t.docs, SEED)
    cfg = IndexConfig(
        n_topics=N_TOPICS, vocab_size=vocab.size, dim=DIM, m=PQ_M, k=PQ_K,
        k_topic=K_TOPIC, k_term=K_TERM, max_doc_tokens=128, max_query_tokens=32,
    )
    idx = build(t.docs, kmeans_enc, trained.codebook, cfg, vocab)
    queries = t.queries[:N_TRAIN]
    qrels = _qrels_for(t, queries)
    recalls = []
    for nprobe in NPROBE_LADDER:
        params = SearchParams(
            k_topic_query=nprobe, prune_to=N_DOCS, final_k=100,
            use_all_query_terms=False, k_term_query=0,
        )
        run, _ = search_all(idx, kmeans_enc, queries, params)
        recalls.append(recall_at_k(run, qrels, 100))
    assert all(b >= a - 1e-12 for a, b in zip(recalls, recalls[1:])), recalls
    strict = sum(1 for a, b in zip(recalls, recalls[1:]) if b > a + 1e-12)
    assert strict >= 3, recalls
    curve = " ".join(f"{r:.3f}" for r in recalls)
    record(5, f"topic-only recall@100 over nprobe {NPROBE_LADDER}: {curve} "
              f"(strictly up at {strict} steps)")


def test_criterion_6_complementarity(task, trained, index):
    t, vocab = task
    held = t.queries[N_TRAIN:]
    held_qrels = _qrels_for(t, held)
    nprobe = 2

    def pool_recall(k_topic_query, use_terms):
        params = SearchParams(
            k_topic_query=k_topic_query, prune_to=N_DOCS, final_k=10,
            use_all_query_terms=use_terms, k_term_query=None if use_terms else 0,
        )
        return candidate_recall(index, trained.encoder, held, held_qrels, params)

    bi, bi_postings = pool_recall(nprobe, True)
    topic_only, topic_postings = pool_recall(nprobe, False)
    term_only, term_postings = pool_recall(0, True)
    # matched budget: the topic-only run visits the same lists, and the term
    # side adds only the query's own (tiny) term lists; the term-only run is
    # at its maximum possible budget
    assert abs(bi_postings - topic_postings) <= max(5.0, 0.01 * topic_postings)
    assert bi >= topic_only + 0.05, (bi, topic_only)
    assert bi >= term_only + 0.05, (bi, term_only)

    train_queries = t.queries[:N_TRAIN]
    train_qrels = _qrels_for(t, train_queries)
    full_run, _ = search_all(
        index, trained.encoder, train_queries,
        SearchParams(k_topic_query=8, prune_to=5000, final_k=100),
    )
    nopq_run, _ = search_all(
        index, trained.encoder, train_queries,
        SearchParams(k_topic_query=8, prune_to=5000, final_k=100, use_pq=False),
    )
    full_mrr = mrr_at_k(full_run, train_qrels, 10)
    nopq_mrr = mrr_at_k(nopq_run, train_qrels, 10)
    assert nopq_mrr < full_mrr, (nopq_mrr, full_mrr)
    record(6, f"held-out pool recall: both {bi:.3f} vs topics {topic_only:.3f} / terms {term_only:.3f} "
              f"at ~{bi_postings:.0f} postings; MRR@10 without verification {nopq_mrr:.3f} < {full_mrr:.3f}")


def test_criterion_7_trained_end_to_end(task, trained, index):
    t, vocab = task
    queries = t.queries[:N_TRAIN]
    qrels = _qrels_for(t, queries)
    params = SearchParams(k_topic_query=8, prune_to=5000, final_k=100)
    run, _ = search_all(index, trained.encoder, queries, params)
    engine = recall_at_k(run, qrels, 10)
    teacher = _teacher_recall_at_10(t, queries)
    assert engine >= 0.9 * teacher, (engine, teacher)
    record(7, f"recall@10 {engine:.3f} vs teacher exhaustive {teacher:.3f} "
              f"(ratio {engine / teacher:.3f} >= 0.9)")


def test_criterion_8_overlap_analysis(task):
    from biphase.corpus import overlap_analysis

    lexical = gen_bimodal(300, 40, 1.0, seed=3, n_clusters=8, teacher_dim=16)
    lex_vocab = build_vocab(list(lexical.docs) + list(lexical.queries), 1, default_stopwords())
    tokenize_documents(lexical.docs, lex_vocab, 128)
    tokenize_queries(lexical.queries, lex_vocab, 32)
    pure = overlap_analysis(lexical.queries, lexical.qrels, lexical.docs, lex_vocab)
    assert pure == 1.0

    t, vocab = task
    mixed = overlap_analysis(t.queries, t.qrels, t.docs, vocab)
    assert abs(mixed - 0.5) <= 0.02, mixed
    record(8, f"overlap 1.0 at rho=1.0; {mixed:.4f} at rho=0.5")


def test_criterion_9_persistence(task, trained, index, tmp_path):
    t, vocab = task
    queries = t.queries[:100]
    params = SearchParams(k_topic_query=8, prune_to=5000, final_k=100)
    run_before, _ = search_all(index, trained.encoder, queries, params)
    before_path = tmp_path / "before.run"
    write_run_file(str(before_path), run_before)

    index_path = tmp_path / "index.bpix"
    index.save(str(index_path))
    loaded = BiPhaseIndex.load(str(index_path))
    run_after, _ = search_all(loaded, trained.encoder, queries, params)
    after_path = tmp_path / "after.run"
    write_run_file(str(after_path), run_after)
    assert before_path.read_bytes() == after_path.read_bytes()

    corrupted = bytearray(index_path.read_bytes())
    corrupted[len(corrupted) // 2] ^= 0x5A
    bad_path = tmp_path / "bad.bpix"
    bad_path.write_bytes(bytes(corrupted))
    with pytest.raises(ChecksumError):
        BiPhaseIndex.load(str(bad_path))
    record(9, f"save->load->search byte-identical over {len(queries)} queries; "
              f"corruption detected by checksum")


def test_criterion_10_post_verification_sweep(task, trained):
    t, vocab = task
    big = gen_bimodal(30_000, N_QUERIES, 0.5, seed=SEED, n_clusters=64, teacher_dim=32)
    big_vocab = build_vocab(list(big.docs) + list(big.queries), 1, default_stopwords())
    assert big_vocab.tokens() == vocab.tokens()  # same pools, encoder transfers
    tokenize_documents(big.docs, big_vocab, 128)
    tokenize_queries(big.queries, big_vocab, 32)
    cfg = IndexConfig(
        n_topics=N_TOPICS, vocab_size=big_vocab.size, dim=DIM, m=PQ_M, k=PQ_K,
        k_topic=K_TOPIC, k_term=K_TERM, max_doc_tokens=128, max_query_tokens=32,
    )
    idx = build(big.docs, trained.encoder, trained.codebook, cfg, big_vocab)
    queries = big.queries[:500]
    qrels = Qrels({q.query_id: big.qrels.relevant(q.query_id) for q in queries})
    recalls = []
    totals = []
    for prune_to in (5000, 10_000, 20_000):
        params = SearchParams(k_topic_query=32, prune_to=prune_to, final_k=1000)
        run, counters = search_all(idx, trained.encoder, queries, params)
        recalls.append(recall_at_k(run, qrels, 1000))
        totals.append(flops_from_counters(PQ_M, PQ_K, counters).total)
    assert all(b >= a - 1e-12 for a, b in zip(recalls, recalls[1:])), recalls
    assert all(b > a for a, b in zip(totals, totals[1:])), totals
    record(10, f"recall@1000 {['%.4f' % r for r in recalls]} non-decreasing while "
               f"flops {['%.4f' % f for f in totals]} strictly increases")
