"""Knowledge-distillation training of the encoder and the PQ codebook.

Three student scorers are distilled against a teacher's softmax distribution
over each query's candidate set: the topic student (inner product of masked
topic memberships), the term student (sparse dot product of term memberships),
and the quantization student (query state against the reconstructed document
state). Gradients are derived by hand; the top-k template, the max over token
occurrences, and the PQ assignment are held constant within a step, and
ReLU'(0) = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import fileio
from .corpus import Document, Query, Qrels, Vocabulary
from .encoder import PARAM_FIELDS, ToyEncoder, sequence_states_batch
from .errors import ConfigError, DataError
from .quantizer import PQCodebook, adc_score, train_codebook

TEACHER_MAGIC = b"BPTE"


class Teacher:
    """Inner-product scorer over planted query/document embedding tables."""

    def __init__(
        self,
        query_ids: Sequence[int],
        query_emb: np.ndarray,
        doc_ids: Sequence[int],
        doc_emb: np.ndarray,
    ):
        self.query_ids = np.asarray(query_ids, dtype=np.uint32)
        self.doc_ids = np.asarray(doc_ids, dtype=np.uint32)
        self.query_emb = np.asarray(query_emb, dtype=np.float64)
        self.doc_emb = np.asarray(doc_emb, dtype=np.float64)
        if len(self.query_ids) != self.query_emb.shape[0]:
            raise ConfigError("query id/embedding row mismatch")
        if len(self.doc_ids) != self.doc_emb.shape[0]:
            raise ConfigError("doc id/embedding row mismatch")
        if not (np.isfinite(self.query_emb).all() and np.isfinite(self.doc_emb).all()):
            raise ConfigError("teacher embeddings contain non-finite values")
        self._q_row = {int(q): i for i, q in enumerate(self.query_ids)}
        self._d_row = {int(d): i for i, d in enumerate(self.doc_ids)}

    def score(self, query_id: int, doc_id: int) -> float:
        return float(self.query_emb[self._q_row[query_id]] @ self.doc_emb[self._d_row[doc_id]])

    def scores(self, query_id: int, doc_ids: Sequence[int]) -> np.ndarray:
        rows = [self._d_row[d] for d in doc_ids]
        return self.doc_emb[rows] @ self.query_emb[self._q_row[query_id]]

    def rank_all(self, query_id: int, k: int) -> list[int]:
        """Top-k doc ids by teacher score, ties toward the smaller id."""
        scores = self.doc_emb @ self.query_emb[self._q_row[query_id]]
        order = np.lexsort((self.doc_ids, -scores))[:k]
        return [int(self.doc_ids[i]) for i in order]

    def save(self, path: str) -> None:
        with open(path, "wb") as fh:
            fh.write(TEACHER_MAGIC)
            fileio.write_u32(fh, len(self.query_ids))
            fileio.write_u32(fh, len(self.doc_ids))
            fileio.write_u32(fh, self.query_emb.shape[1])
            fh.write(np.ascontiguousarray(self.query_ids, dtype="<u4").tobytes())
            fh.write(np.ascontiguousarray(self.doc_ids, dtype="<u4").tobytes())
            fileio.write_f32_array(fh, self.query_emb.reshape(-1))
            fileio.write_f32_array(fh, self.doc_emb.reshape(-1))

    @classmethod
    def load(cls, path: str) -> "Teacher":
        with open(path, "rb") as fh:
            fileio.check_magic(fh, TEACHER_MAGIC, "teacher embeddings")
            n_q = fileio.read_u32(fh, "query count")
            n_d = fileio.read_u32(fh, "doc count")
            dim = fileio.read_u32(fh, "teacher dim")
            q_ids = np.frombuffer(fileio.read_exact(fh, 4 * n_q, "query ids"), dtype="<u4")
            d_ids = np.frombuffer(fileio.read_exact(fh, 4 * n_d, "doc ids"), dtype="<u4")
            q_emb = fileio.read_f32_array(fh, n_q * dim, "query embeddings").reshape(n_q, dim)
            d_emb = fileio.read_f32_array(fh, n_d * dim, "doc embeddings").reshape(n_d, dim)
        return cls(q_ids.copy(), q_emb, d_ids.copy(), d_emb)


@dataclass
class TrainConfig:
    dim: int = 16
    n_topics: int = 64
    learning_rate: float = 1e-3
    batch_size: int = 8
    epochs: int = 30
    hard_negatives: int = 3
    k_topic: int = 8  # template width inside the topic student
    seed: int = 0
    patience: int = 5
    val_fraction: float = 0.1
    warmup_epochs: int | None = None  # encoder-only epochs before codebook init
    pq_subspaces: int = 4
    pq_centroids: int = 16
    use_template: bool = True
    objective: str = "distill"  # "distill" or "contrastive"

    def validate(self) -> None:
        if min(self.dim, self.n_topics, self.batch_size) < 1:
            raise ConfigError("dim, n_topics, and batch_size must be >= 1")
        if self.learning_rate < 0 or self.epochs < 0 or self.hard_negatives < 0:
            raise ConfigError("learning_rate, epochs, and hard_negatives must be >= 0")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must be in [0, 1)")
        if self.k_topic < 1 or self.k_topic > self.n_topics:
            raise ConfigError("k_topic must be in [1, n_topics]")
        if self.pq_subspaces < 1 or self.dim % self.pq_subspaces != 0:
            raise ConfigError("pq_subspaces must divide dim")
        if self.pq_centroids < 1:
            raise ConfigError("pq_centroids must be >= 1")
        if self.objective not in ("distill", "contrastive"):
            raise ConfigError(f"unknown objective {self.objective!r}")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")


@dataclass
class TrainBatch:
    query_ids: list[int]
    query_tokens: list[list[int]]
    candidates: list[list[int]]  # per query; the positive is always first
    doc_tokens: dict[int, list[int]]


@dataclass
class TrainResult:
    encoder: ToyEncoder
    codebook: PQCodebook
    history: list[dict] = field(default_factory=list)


def _softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max()
    e = np.exp(shifted)
    return e / e.sum()


def _log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max()
    return shifted - np.log(np.exp(shifted).sum())


def kd_loss(teacher_scores: Sequence[float], student_scores: Sequence[float]) -> float:
    """Cross-entropy between the teacher and student softmax distributions."""
    t = np.asarray(teacher_scores, dtype=np.float64)
    s = np.asarray(student_scores, dtype=np.float64)
    if t.ndim != 1 or t.shape != s.shape:
        raise ConfigError(f"score sequences must match, got {t.shape} vs {s.shape}")
    if len(t) == 0:
        raise ConfigError("candidate set must be nonempty")
    return float(-(_softmax(t) * _log_softmax(s)).sum())


def kd_loss_grad(teacher_scores: Sequence[float], student_scores: Sequence[float]) -> np.ndarray:
    """Gradient of kd_loss w.r.t. the student scores: softmax(s) - softmax(t)."""
    t = np.asarray(teacher_scores, dtype=np.float64)
    s = np.asarray(student_scores, dtype=np.float64)
    return _softmax(s) - _softmax(t)


def student_s1(q_mem_topic: np.ndarray, d_mem_topic: np.ndarray) -> float:
    """Inner product of (already template-masked) topic memberships."""
    return float(np.asarray(q_mem_topic, dtype=np.float64) @ np.asarray(d_mem_topic, dtype=np.float64))


def student_s2(q_mem_term: Mapping[int, float], d_mem_term: Mapping[int, float]) -> float:
    """Sparse dot product over shared term ids."""
    if len(d_mem_term) < len(q_mem_term):
        q_mem_term, d_mem_term = d_mem_term, q_mem_term
    return float(sum(w * d_mem_term[t] for t, w in q_mem_term.items() if t in d_mem_term))


def student_s3(q_emb: np.ndarray, cb: PQCodebook, d_code: np.ndarray) -> float:
    """Query state against the PQ-reconstructed document state."""
    return adc_score(cb, q_emb, d_code)


class _SeqState:
    """Forward cache for one token sequence."""

    __slots__ = (
        "tokens",
        "emb",
        "mean",
        "h0",
        "pre1",
        "act1",
        "pre2",
        "phi_raw",
        "mask",
        "term_val",
        "term_pos",
    )

    def __init__(self, params: Mapping[str, np.ndarray], tokens: Sequence[int], k_topic: int, use_template: bool):
        if len(tokens) == 0:
            raise DataError("cannot encode an empty token sequence")
        self.tokens = list(tokens)
        self.emb = params["token_emb"][np.asarray(tokens, dtype=np.intp)]
        self.mean = self.emb.mean(axis=0)
        self.h0 = params["seq_proj"] @ self.mean
        self.pre1 = self.emb @ params["mlp_w1"].T + params["mlp_b1"]
        self.act1 = np.maximum(self.pre1, 0.0)
        self.pre2 = self.act1 @ params["mlp_w2"] + float(params["mlp_b2"])
        scores = np.maximum(self.pre2, 0.0)
        self.phi_raw = params["topics"] @ self.h0 + params["topic_bias"]
        if use_template:
            order = np.argsort(-self.phi_raw, kind="stable")[:k_topic]
            self.mask = np.zeros_like(self.phi_raw)
            self.mask[order] = 1.0
        else:
            self.mask = np.ones_like(self.phi_raw)
        self.term_val: dict[int, float] = {}
        self.term_pos: dict[int, int] = {}
        for j, (tid, s) in enumerate(zip(self.tokens, scores)):
            if s > 0.0 and s > self.term_val.get(tid, 0.0):
                self.term_val[tid] = float(s)
                self.term_pos[tid] = j

    @property
    def phi_masked(self) -> np.ndarray:
        return self.phi_raw * self.mask


class _SeqGrad:
    __slots__ = ("g_phi", "g_h0", "g_term")

    def __init__(self, n_topics: int, dim: int):
        self.g_phi = np.zeros(n_topics)
        self.g_h0 = np.zeros(dim)
        self.g_term: dict[int, float] = {}


def _zero_grads(params: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.items()}


def _encode_state(centroids: np.ndarray, h0: np.ndarray) -> np.ndarray:
    m, k, sub = centroids.shape
    subs = h0.reshape(m, sub)
    code = np.empty(m, dtype=np.intp)
    for s in range(m):
        d2 = ((centroids[s] - subs[s]) ** 2).sum(axis=1)
        code[s] = int(d2.argmin())
    return code


def total_loss(
    params: Mapping[str, np.ndarray],
    batch: TrainBatch,
    teacher_probs: Mapping[int, np.ndarray],
    k_topic: int,
    use_template: bool = True,
    centroids: np.ndarray | None = None,
    compute_grads: bool = True,
) -> tuple[float, dict[str, np.ndarray] | None]:
    """Sum of the per-student distillation losses, averaged over the batch.

    ``teacher_probs`` maps each query id to its target distribution over that
    query's candidate list. When ``centroids`` is given the quantization
    student participates and its gradient lands in ``grads["centroids"]``.
    """
    if not batch.query_ids:
        raise DataError("empty training batch")
    n_queries = len(batch.query_ids)
    dim = params["token_emb"].shape[1]
    n_topics = params["topics"].shape[0]

    states: dict[tuple[str, int], _SeqState] = {}
    for qid, qtoks in zip(batch.query_ids, batch.query_tokens):
        states[("q", qid)] = _SeqState(params, qtoks, k_topic, use_template)
    for did in sorted(batch.doc_tokens):
        states[("d", did)] = _SeqState(params, batch.doc_tokens[did], k_topic, use_template)

    codes: dict[int, np.ndarray] = {}
    if centroids is not None:
        for did in sorted(batch.doc_tokens):
            codes[did] = _encode_state(centroids, states[("d", did)].h0)
        recon = {
            did: centroids[np.arange(centroids.shape[0]), code].reshape(-1)
            for did, code in codes.items()
        }

    loss = 0.0
    seq_grads: dict[tuple[str, int], _SeqGrad] = {}
    grads = _zero_grads(params) if compute_grads else None
    if compute_grads and centroids is not None:
        grads["centroids"] = np.zeros_like(centroids)

    def grad_for(key: tuple[str, int]) -> _SeqGrad:
        if key not in seq_grads:
            seq_grads[key] = _SeqGrad(n_topics, dim)
        return seq_grads[key]

    for qid, cand in zip(batch.query_ids, batch.candidates):
        qs = states[("q", qid)]
        p_target = np.asarray(teacher_probs[qid], dtype=np.float64)
        if p_target.shape != (len(cand),):
            raise ConfigError("teacher distribution does not match the candidate list")
        d_states = [states[("d", did)] for did in cand]

        s1 = np.array([student_s1(qs.phi_masked, ds.phi_masked) for ds in d_states])
        s2 = np.array([student_s2(qs.term_val, ds.term_val) for ds in d_states])
        loss += float(-(p_target * _log_softmax(s1)).sum())
        loss += float(-(p_target * _log_softmax(s2)).sum())
        if centroids is not None:
            s3 = np.array([float(qs.h0 @ recon[did]) for did in cand])
            loss += float(-(p_target * _log_softmax(s3)).sum())

        if not compute_grads:
            continue

        g_s1 = (_softmax(s1) - p_target) / n_queries
        g_s2 = (_softmax(s2) - p_target) / n_queries
        if centroids is not None:
            g_s3 = (_softmax(s3) - p_target) / n_queries

        q_grad = grad_for(("q", qid))
        for i, did in enumerate(cand):
            ds = d_states[i]
            d_grad = grad_for(("d", did))
            shared_mask = qs.mask * ds.mask
            q_grad.g_phi += g_s1[i] * shared_mask * ds.phi_raw
            d_grad.g_phi += g_s1[i] * shared_mask * qs.phi_raw
            if g_s2[i] != 0.0:
                for tid in qs.term_val.keys() & ds.term_val.keys():
                    q_grad.g_term[tid] = q_grad.g_term.get(tid, 0.0) + g_s2[i] * ds.term_val[tid]
                    d_grad.g_term[tid] = d_grad.g_term.get(tid, 0.0) + g_s2[i] * qs.term_val[tid]
            if centroids is not None:
                q_grad.g_h0 += g_s3[i] * recon[did]
                m, _, sub = centroids.shape
                grads["centroids"][np.arange(m), codes[did]] += g_s3[i] * qs.h0.reshape(m, sub)

    loss /= n_queries
    if not compute_grads:
        return loss, None

    w1_t = params["mlp_w1"].T
    proj_t = params["seq_proj"].T
    topics_t = params["topics"].T
    for key in sorted(seq_grads):
        state = states[key]
        sg = seq_grads[key]
        g_h0 = sg.g_h0.copy()
        if sg.g_phi.any():
            grads["topics"] += np.outer(sg.g_phi, state.h0)
            grads["topic_bias"] += sg.g_phi
            g_h0 += topics_t @ sg.g_phi
        g_emb = np.zeros_like(state.emb)
        for tid in sorted(sg.g_term):
            g_val = sg.g_term[tid]
            j = state.term_pos[tid]
            grads["mlp_w2"] += g_val * state.act1[j]
            grads["mlp_b2"] += g_val
            g_pre1 = (g_val * params["mlp_w2"]) * (state.pre1[j] > 0.0)
            grads["mlp_w1"] += np.outer(g_pre1, state.emb[j])
            grads["mlp_b1"] += g_pre1
            g_emb[j] += w1_t @ g_pre1
        if g_h0.any():
            grads["seq_proj"] += np.outer(g_h0, state.mean)
            g_emb += (proj_t @ g_h0) / len(state.tokens)
        np.add.at(grads["token_emb"], np.asarray(state.tokens, dtype=np.intp), g_emb)
    return loss, grads


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: Mapping[str, np.ndarray]) -> None:
        self.t += 1
        correct1 = 1.0 - self.beta1**self.t
        correct2 = 1.0 - self.beta2**self.t
        for name, param in self.params.items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            m_hat = self.m[name] / correct1
            v_hat = self.v[name] / correct2
            param -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def mine_hard_negatives(
    queries: Sequence[Query],
    docs: Sequence[Document],
    qrels: Qrels,
    vocab: Vocabulary,
    count: int,
    seed: int,
) -> dict[int, list[int]]:
    """Top non-relevant docs by shared non-stopword token count.

    Ties (including the common all-zero case) break by a seeded permutation
    so negatives are deterministic but not systematically the low doc ids.
    """
    doc_ids = sorted(d.doc_id for d in docs)
    perm = np.random.default_rng([seed, 7]).permutation(len(doc_ids))
    perm_rank = {doc_ids[i]: int(perm[i]) for i in range(len(doc_ids))}
    token_docs: dict[int, list[int]] = {}
    for doc in docs:
        for tid in set(doc.tokens):
            if not vocab.is_stopword(tid):
                token_docs.setdefault(tid, []).append(doc.doc_id)
    fill_order = sorted(doc_ids, key=lambda d: perm_rank[d])

    out: dict[int, list[int]] = {}
    for query in queries:
        relevant = qrels.relevant(query.query_id)
        overlap: dict[int, int] = {}
        for tid in {t for t in query.tokens if not vocab.is_stopword(t)}:
            for did in token_docs.get(tid, ()):
                overlap[did] = overlap.get(did, 0) + 1
        ranked = sorted(
            (d for d in overlap if d not in relevant),
            key=lambda d: (-overlap[d], perm_rank[d]),
        )
        negatives = ranked[:count]
        if len(negatives) < count:
            chosen = set(negatives)
            for did in fill_order:
                if did not in relevant and did not in chosen:
                    negatives.append(did)
                    chosen.add(did)
                    if len(negatives) == count:
                        break
        out[query.query_id] = negatives
    return out


def make_batches(
    query_ids: Sequence[int],
    positives: Mapping[int, int],
    negatives: Mapping[int, list[int]],
    qrels: Qrels,
    query_tokens: Mapping[int, list[int]],
    doc_tokens: Mapping[int, list[int]],
    batch_size: int,
) -> list[TrainBatch]:
    """Candidate set per query: its positive, its hard negatives, then the
    other in-batch positives (deduplicated, relevant docs filtered out)."""
    batches = []
    for start in range(0, len(query_ids), batch_size):
        chunk = list(query_ids[start : start + batch_size])
        batch_positives = [positives[q] for q in chunk]
        cands: list[list[int]] = []
        doc_map: dict[int, list[int]] = {}
        for qid in chunk:
            relevant = qrels.relevant(qid)
            cand = [positives[qid]]
            seen = {positives[qid]}
            for did in negatives.get(qid, []):
                if did not in seen and did not in relevant:
                    cand.append(did)
                    seen.add(did)
            for other in batch_positives:
                if other not in seen and other not in relevant:
                    cand.append(other)
                    seen.add(other)
            cands.append(cand)
            for did in cand:
                doc_map[did] = doc_tokens[did]
        batches.append(
            TrainBatch(
                query_ids=chunk,
                query_tokens=[query_tokens[q] for q in chunk],
                candidates=cands,
                doc_tokens=doc_map,
            )
        )
    return batches


def _teacher_distributions(
    batch: TrainBatch, teacher: Teacher, objective: str
) -> dict[int, np.ndarray]:
    out = {}
    for qid, cand in zip(batch.query_ids, batch.candidates):
        if objective == "distill":
            out[qid] = _softmax(teacher.scores(qid, cand))
        else:
            one_hot = np.zeros(len(cand))
            one_hot[0] = 1.0  # the positive leads every candidate list
            out[qid] = one_hot
    return out


def _epoch_loss(
    params: Mapping[str, np.ndarray],
    batches: Sequence[TrainBatch],
    teacher: Teacher,
    cfg: TrainConfig,
    centroids: np.ndarray | None,
) -> float:
    if not batches:
        return float("nan")
    total = 0.0
    for batch in batches:
        probs = _teacher_distributions(batch, teacher, cfg.objective)
        loss, _ = total_loss(
            params, batch, probs, cfg.k_topic, cfg.use_template, centroids, compute_grads=False
        )
        total += loss
    return total / len(batches)


def train(
    docs: Sequence[Document],
    queries: Sequence[Query],
    qrels: Qrels,
    teacher: Teacher,
    cfg: TrainConfig,
    vocab: Vocabulary,
) -> TrainResult:
    """Mini-batch Adam over the combined distillation objective.

    Warm-up epochs train the encoder alone; the codebook is then seeded by
    per-sub-space k-means on the current document states and fine-tuned
    jointly for the remaining epochs. Returns the best-validation snapshot.
    """
    cfg.validate()
    doc_by_id = {d.doc_id: d for d in docs}
    eligible: list[Query] = []
    for q in queries:
        relevant = qrels.relevant(q.query_id)
        if not relevant or not q.tokens:
            continue
        positive = min(relevant)
        if positive in doc_by_id and doc_by_id[positive].tokens:
            eligible.append(q)
    if not eligible:
        raise DataError("no usable training queries (need judgments and tokens)")

    rng = np.random.default_rng([cfg.seed, 1])
    order = rng.permutation(len(eligible))
    n_val = int(round(cfg.val_fraction * len(eligible)))
    n_val = min(n_val, len(eligible) - 1)
    val_queries = [eligible[i] for i in order[:n_val]]
    train_queries = [eligible[i] for i in order[n_val:]]

    negatives = mine_hard_negatives(
        eligible, docs, qrels, vocab, cfg.hard_negatives, cfg.seed
    )
    positives = {q.query_id: min(qrels.relevant(q.query_id)) for q in eligible}
    query_tokens = {q.query_id: q.tokens for q in eligible}
    doc_tokens = {d.doc_id: d.tokens for d in docs}

    enc = ToyEncoder.random(vocab.size, cfg.dim, cfg.n_topics, cfg.seed)
    params = enc.params()  # live views; Adam mutates the encoder in place
    val_ids = [q.query_id for q in val_queries]
    val_batches = make_batches(
        val_ids, positives, negatives, qrels, query_tokens, doc_tokens, cfg.batch_size
    )

    def epoch_batches(epoch: int) -> list[TrainBatch]:
        epoch_rng = np.random.default_rng([cfg.seed, 2, epoch])
        ids = [train_queries[i].query_id for i in epoch_rng.permutation(len(train_queries))]
        return make_batches(
            ids, positives, negatives, qrels, query_tokens, doc_tokens, cfg.batch_size
        )

    history: list[dict] = []
    warmup = cfg.warmup_epochs if cfg.warmup_epochs is not None else cfg.epochs // 3
    warmup = min(warmup, cfg.epochs)

    def run_stage(
        n_epochs: int,
        epoch_offset: int,
        centroids: np.ndarray | None,
        early_stop: bool,
    ) -> tuple[dict[str, np.ndarray] | None, np.ndarray | None]:
        opt_params = dict(params)
        if centroids is not None:
            opt_params["centroids"] = centroids
        opt = Adam(opt_params, cfg.learning_rate)
        # early stopping needs a validation signal; without one the final
        # state is the checkpoint
        monitor = early_stop and bool(val_batches)
        best_val = np.inf
        best_snapshot = None
        bad_epochs = 0
        for e in range(n_epochs):
            epoch = epoch_offset + e
            total = 0.0
            batches = epoch_batches(epoch)
            for batch in batches:
                probs = _teacher_distributions(batch, teacher, cfg.objective)
                loss, grads = total_loss(
                    params, batch, probs, cfg.k_topic, cfg.use_template, centroids
                )
                opt.step(grads)
                total += loss
            train_loss = total / max(len(batches), 1)
            val_loss = _epoch_loss(params, val_batches, teacher, cfg, centroids)
            history.append(
                {
                    "epoch": epoch,
                    "train_loss": train_loss,
                    "val_loss": val_loss,
                    "lr": cfg.learning_rate,
                }
            )
            if monitor:
                if val_loss < best_val - 1e-12:
                    best_val = val_loss
                    best_snapshot = {k: v.copy() for k, v in opt_params.items()}
                    bad_epochs = 0
                else:
                    bad_epochs += 1
                    if bad_epochs >= cfg.patience:
                        break
        return best_snapshot, centroids

    run_stage(warmup, 0, None, early_stop=False)

    all_doc_tokens = [d.tokens for d in docs if d.tokens]
    doc_states = sequence_states_batch(enc, all_doc_tokens)
    if doc_states.shape[0] < cfg.pq_centroids:
        raise DataError(
            f"need at least {cfg.pq_centroids} documents to seed the codebook"
        )
    codebook = train_codebook(doc_states, cfg.pq_subspaces, cfg.pq_centroids, cfg.seed)
    centroids = codebook.centroids.astype(np.float64)

    snapshot, _ = run_stage(cfg.epochs - warmup, warmup, centroids, early_stop=True)
    if snapshot is not None:
        for name in PARAM_FIELDS:
            params[name][...] = snapshot[name]
        centroids = snapshot["centroids"]

    final_enc = enc.quantized()
    final_cb = PQCodebook(centroids.astype(np.float32))
    return TrainResult(encoder=final_enc, codebook=final_cb, history=history)


def write_training_log(path: str, history: Iterable[Mapping]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,train_loss,val_loss,lr\n")
        for row in history:
            fh.write(
                f"{row['epoch']},{row['train_loss']:.6f},{row['val_loss']:.6f},{row['lr']:.3g}\n"
            )
