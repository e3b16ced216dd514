"""Trainable toy text encoder and entry-membership computations.

The encoder embeds tokens, pools them into a sequence-level state, and scores
two kinds of inverted-file entries: a dense vector of latent-topic affinities
and a sparse map of per-term impact weights (max over token occurrences,
clamped at zero by a ReLU so absent/suppressed terms carry no weight).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError
from . import fileio

ENCODER_MAGIC = b"BPE1"

# Checkpoint tensor order; also the canonical parameter order for training.
PARAM_FIELDS = (
    "token_emb",
    "seq_proj",
    "topics",
    "topic_bias",
    "mlp_w1",
    "mlp_b1",
    "mlp_w2",
    "mlp_b2",
)


@dataclass
class HiddenStates:
    h0: np.ndarray  # (d,) pooled sequence state
    per_token: np.ndarray  # (N, d)


@dataclass
class MembershipVector:
    """A query/document's weights over inverted-file entries.

    ``topic`` is dense over all latent topics; ``term`` is sparse and only
    holds strictly positive weights for terms present in the input.
    """

    topic: np.ndarray
    term: dict[int, float]


class ToyEncoder:
    def __init__(
        self,
        token_emb: np.ndarray,
        seq_proj: np.ndarray,
        topics: np.ndarray,
        topic_bias: np.ndarray,
        mlp_w1: np.ndarray,
        mlp_b1: np.ndarray,
        mlp_w2: np.ndarray,
        mlp_b2: np.ndarray,
    ):
        self.token_emb = np.asarray(token_emb, dtype=np.float64)
        self.seq_proj = np.asarray(seq_proj, dtype=np.float64)
        self.topics = np.asarray(topics, dtype=np.float64)
        self.topic_bias = np.asarray(topic_bias, dtype=np.float64)
        self.mlp_w1 = np.asarray(mlp_w1, dtype=np.float64)
        self.mlp_b1 = np.asarray(mlp_b1, dtype=np.float64)
        self.mlp_w2 = np.asarray(mlp_w2, dtype=np.float64)
        self.mlp_b2 = np.asarray(mlp_b2, dtype=np.float64).reshape(())
        self._validate()

    def _validate(self) -> None:
        w, d = self.token_emb.shape
        m = self.topics.shape[0]
        if self.seq_proj.shape != (d, d):
            raise ConfigError(f"seq_proj must be ({d}, {d}), got {self.seq_proj.shape}")
        if self.topics.shape != (m, d):
            raise ConfigError(f"topics must be ({m}, {d}), got {self.topics.shape}")
        if self.topic_bias.shape != (m,):
            raise ConfigError(f"topic_bias must be ({m},), got {self.topic_bias.shape}")
        if self.mlp_w1.shape != (d, d) or self.mlp_b1.shape != (d,):
            raise ConfigError("term-scorer first layer has inconsistent shape")
        if self.mlp_w2.shape != (d,):
            raise ConfigError(f"mlp_w2 must be ({d},), got {self.mlp_w2.shape}")
        for name in PARAM_FIELDS:
            if not np.isfinite(getattr(self, name)).all():
                raise ConfigError(f"encoder parameter {name} contains non-finite values")

    @property
    def vocab_size(self) -> int:
        return self.token_emb.shape[0]

    @property
    def dim(self) -> int:
        return self.token_emb.shape[1]

    @property
    def n_topics(self) -> int:
        return self.topics.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_FIELDS}

    def copy(self) -> "ToyEncoder":
        return ToyEncoder(*(getattr(self, name).copy() for name in PARAM_FIELDS))

    def quantized(self) -> "ToyEncoder":
        """Round every parameter through float32, the checkpoint precision."""
        return ToyEncoder(
            *(getattr(self, name).astype(np.float32).astype(np.float64) for name in PARAM_FIELDS)
        )

    @classmethod
    def random(cls, vocab_size: int, dim: int, n_topics: int, seed: int = 0) -> "ToyEncoder":
        if min(vocab_size, dim, n_topics) < 1:
            raise ConfigError("vocab_size, dim, and n_topics must all be >= 1")
        rng = np.random.default_rng([seed, 0xE5C])
        scale = 1.0 / np.sqrt(dim)
        return cls(
            token_emb=rng.normal(0.0, 1.0, (vocab_size, dim)),
            seq_proj=np.eye(dim) + rng.normal(0.0, 0.05, (dim, dim)),
            topics=rng.normal(0.0, scale, (n_topics, dim)),
            topic_bias=np.zeros(n_topics),
            mlp_w1=rng.normal(0.0, scale, (dim, dim)),
            mlp_b1=np.zeros(dim),
            mlp_w2=rng.normal(0.0, scale, dim),
            mlp_b2=np.asarray(0.25),
        )

    def save(self, path: str) -> None:
        with open(path, "wb") as fh:
            fh.write(ENCODER_MAGIC)
            fileio.write_u32(fh, self.vocab_size)
            fileio.write_u32(fh, self.dim)
            fileio.write_u32(fh, self.n_topics)
            for name in PARAM_FIELDS:
                fileio.write_f32_array(fh, getattr(self, name).reshape(-1))

    @classmethod
    def load(cls, path: str) -> "ToyEncoder":
        with open(path, "rb") as fh:
            fileio.check_magic(fh, ENCODER_MAGIC, "encoder checkpoint")
            w = fileio.read_u32(fh, "vocab size")
            d = fileio.read_u32(fh, "hidden dim")
            m = fileio.read_u32(fh, "topic count")
            shapes = {
                "token_emb": (w, d),
                "seq_proj": (d, d),
                "topics": (m, d),
                "topic_bias": (m,),
                "mlp_w1": (d, d),
                "mlp_b1": (d,),
                "mlp_w2": (d,),
                "mlp_b2": (),
            }
            tensors = {}
            for name in PARAM_FIELDS:
                shape = shapes[name]
                count = int(np.prod(shape)) if shape else 1
                tensors[name] = fileio.read_f32_array(fh, count, name).reshape(shape)
            trailing = fh.read(1)
            if trailing:
                raise fileio.FileFormatError("trailing bytes after encoder checkpoint")
        return cls(**tensors)


def encode(enc: ToyEncoder, tokens: Sequence[int]) -> HiddenStates:
    """Per-token hidden states plus the pooled sequence state."""
    if len(tokens) == 0:
        raise DataError("cannot encode an empty token sequence")
    per_token = enc.token_emb[np.asarray(tokens, dtype=np.intp)]
    h0 = enc.seq_proj @ per_token.mean(axis=0)
    return HiddenStates(h0=h0, per_token=per_token)


def topic_membership(enc: ToyEncoder, h0: np.ndarray) -> np.ndarray:
    return enc.topics @ np.asarray(h0, dtype=np.float64) + enc.topic_bias


def term_scores(enc: ToyEncoder, per_token: np.ndarray) -> np.ndarray:
    """ReLU-clamped two-layer scorer applied to each hidden state."""
    inner = np.maximum(per_token @ enc.mlp_w1.T + enc.mlp_b1, 0.0)
    return np.maximum(inner @ enc.mlp_w2 + float(enc.mlp_b2), 0.0)


def term_membership(
    enc: ToyEncoder, tokens: Sequence[int], hs: HiddenStates
) -> dict[int, float]:
    """Per-term weight: max score over the term's occurrences; zeros omitted."""
    if len(tokens) != hs.per_token.shape[0]:
        raise DataError("hidden states do not correspond to the token sequence")
    scores = term_scores(enc, hs.per_token)
    out: dict[int, float] = {}
    for tid, score in zip(tokens, scores):
        if score > 0.0:
            value = float(score)
            if value > out.get(tid, 0.0):
                out[tid] = value
    return out


def top_k_entries(values: np.ndarray | Mapping[int, float], k: int) -> list[int]:
    """Ids of the ``k`` largest-weight entries, ties broken by smaller id.

    May return fewer than ``k`` ids when a sparse map holds fewer entries.
    """
    if k < 0:
        raise ConfigError(f"k must be >= 0, got {k}")
    if k == 0:
        return []
    if isinstance(values, Mapping):
        ranked = sorted(values.items(), key=lambda kv: (-kv[1], kv[0]))
        return sorted(tid for tid, _ in ranked[:k])
    arr = np.asarray(values, dtype=np.float64)
    # Stable sort on negated values: equal weights keep ascending-id order.
    order = np.argsort(-arr, kind="stable")
    return sorted(int(i) for i in order[:k])


def apply_template_k(phi: np.ndarray, k: int) -> np.ndarray:
    """Zero every entry outside the top-``k``; selected entries pass through."""
    phi = np.asarray(phi, dtype=np.float64)
    if k > phi.shape[-1]:
        raise ConfigError(f"k={k} exceeds the number of entries {phi.shape[-1]}")
    if k < 0:
        raise ConfigError(f"k must be >= 0, got {k}")
    out = np.zeros_like(phi)
    if k == 0:
        return out
    keep = top_k_entries(phi, k)
    out[keep] = phi[keep]
    return out


def template_mask_rows(phi: np.ndarray, k: int) -> np.ndarray:
    """Row-wise 0/1 top-``k`` masks for a (n, M) matrix."""
    n, m = phi.shape
    if k > m or k < 0:
        raise ConfigError(f"k={k} out of range for {m} entries")
    mask = np.zeros_like(phi)
    if k == 0:
        return mask
    order = np.argsort(-phi, axis=1, kind="stable")[:, :k]
    np.put_along_axis(mask, order, 1.0, axis=1)
    return mask


def compute_memberships(enc: ToyEncoder, tokens: Sequence[int], k_topic: int) -> MembershipVector:
    """Topic memberships (top-``k_topic`` kept) and sparse term memberships."""
    hs = encode(enc, tokens)
    topic = apply_template_k(topic_membership(enc, hs.h0), k_topic)
    term = term_membership(enc, tokens, hs)
    return MembershipVector(topic=topic, term=term)


def sequence_states_batch(enc: ToyEncoder, token_seqs: Sequence[Sequence[int]]) -> np.ndarray:
    """Pooled states for many sequences at once; rows align with the input."""
    lengths = np.array([len(t) for t in token_seqs], dtype=np.intp)
    if len(lengths) == 0:
        return np.zeros((0, enc.dim))
    if (lengths == 0).any():
        raise DataError("cannot encode an empty token sequence")
    flat = np.concatenate([np.asarray(t, dtype=np.intp) for t in token_seqs])
    emb = enc.token_emb[flat]
    offsets = np.concatenate(([0], np.cumsum(lengths)[:-1]))
    means = np.add.reduceat(emb, offsets, axis=0) / lengths[:, None]
    return means @ enc.seq_proj.T


def compute_memberships_batch(
    enc: ToyEncoder,
    token_seqs: Sequence[Sequence[int]],
    k_topic: int,
    return_states: bool = False,
):
    """Vectorized equivalent of calling compute_memberships per sequence.

    With ``return_states`` the pooled sequence states come back too, so
    callers that also need embeddings avoid a second pass.
    """
    lengths = np.array([len(t) for t in token_seqs], dtype=np.intp)
    if len(lengths) == 0:
        return ([], np.zeros((0, enc.dim))) if return_states else []
    if (lengths == 0).any():
        raise DataError("cannot encode an empty token sequence")
    flat = np.concatenate([np.asarray(t, dtype=np.intp) for t in token_seqs])
    emb = enc.token_emb[flat]
    offsets = np.concatenate(([0], np.cumsum(lengths)[:-1]))
    means = np.add.reduceat(emb, offsets, axis=0) / lengths[:, None]
    h0 = means @ enc.seq_proj.T
    phi_topic = h0 @ enc.topics.T + enc.topic_bias
    masked = phi_topic * template_mask_rows(phi_topic, k_topic)

    scores = term_scores(enc, emb)
    out: list[MembershipVector] = []
    pos = 0
    for i, n in enumerate(lengths):
        term: dict[int, float] = {}
        seq_scores = scores[pos : pos + n]
        for tid, score in zip(token_seqs[i], seq_scores):
            if score > 0.0:
                value = float(score)
                if value > term.get(tid, 0.0):
                    term[tid] = value
        out.append(MembershipVector(topic=masked[i], term=term))
        pos += n
    if return_states:
        return out, h0
    return out
