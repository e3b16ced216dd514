"""The bi-phase inverted file: topic entries plus term entries.

Each entry owns a posting list of (doc_id, membership weight) pairs sorted by
doc id; PQ codes for every indexed document are stored alongside so search can
re-rank candidates without the original embeddings. Construction is
single-writer; a built or loaded index is immutable and safe to share across
concurrent searchers.
"""

from __future__ import annotations

import enum
import hashlib
import io
import struct
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import fileio
from .corpus import Document, Vocabulary
from .encoder import MembershipVector, ToyEncoder, compute_memberships_batch, top_k_entries
from .errors import (
    ChecksumError,
    ConfigError,
    DuplicateIdError,
    FileFormatError,
    TruncatedFileError,
    VersionError,
)
from .quantizer import PQCodebook

INDEX_MAGIC = b"BPIX"
INDEX_VERSION = 1


class Phase(enum.Enum):
    TOPIC = "topic"
    TERM = "term"


@dataclass(frozen=True)
class EntryId:
    phase: Phase
    entry: int


@dataclass
class PostingList:
    doc_ids: np.ndarray  # uint32, strictly increasing
    weights: np.ndarray  # float32, all > 0

    def __len__(self) -> int:
        return len(self.doc_ids)

    @classmethod
    def empty(cls) -> "PostingList":
        return cls(np.empty(0, dtype=np.uint32), np.empty(0, dtype=np.float32))


@dataclass
class IndexConfig:
    n_topics: int
    vocab_size: int
    dim: int
    m: int
    k: int
    k_topic: int = 8
    k_term: int = 16
    max_doc_tokens: int = 128
    max_query_tokens: int = 32

    def validate(self) -> None:
        if self.n_topics < 1 or self.vocab_size < 1 or self.dim < 1:
            raise ConfigError("n_topics, vocab_size, and dim must be >= 1")
        if self.m < 1 or self.dim % self.m != 0:
            raise ConfigError(f"m={self.m} must divide dim={self.dim}")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.k_topic < 0 or self.k_term < 0:
            raise ConfigError("k_topic and k_term must be >= 0")
        if self.max_doc_tokens < 1 or self.max_query_tokens < 1:
            raise ConfigError("token limits must be >= 1")


class BiPhaseIndex:
    def __init__(
        self,
        config: IndexConfig,
        vocab: Vocabulary,
        topic_lists: list[PostingList],
        term_lists: dict[int, PostingList],
        codebook: PQCodebook,
        code_doc_ids: np.ndarray,
        codes: np.ndarray,
    ):
        config.validate()
        if len(topic_lists) != config.n_topics:
            raise ConfigError("one posting list per topic entry is required")
        if vocab.size != config.vocab_size:
            raise ConfigError("vocabulary size does not match the index config")
        self.config = config
        self.vocab = vocab
        self.topic_lists = topic_lists
        self.term_lists = term_lists
        self.codebook = codebook
        self.code_doc_ids = np.ascontiguousarray(code_doc_ids, dtype=np.uint32)
        self.codes = codes
        self.doc_count = len(code_doc_ids)

    def posting_list(self, entry: EntryId) -> PostingList:
        if entry.phase is Phase.TOPIC:
            return self.topic_lists[entry.entry]
        return self.term_lists.get(entry.entry, PostingList.empty())

    def entry_ids(self) -> list[EntryId]:
        """Every entry carrying at least one posting, topics first."""
        out = [EntryId(Phase.TOPIC, i) for i in range(self.config.n_topics)]
        out.extend(EntryId(Phase.TERM, t) for t in sorted(self.term_lists))
        return out

    def has_doc(self, doc_id: int) -> bool:
        pos = np.searchsorted(self.code_doc_ids, doc_id)
        return pos < len(self.code_doc_ids) and self.code_doc_ids[pos] == doc_id

    def codes_for(self, doc_ids: np.ndarray) -> np.ndarray:
        pos = np.searchsorted(self.code_doc_ids, doc_ids)
        if (pos >= len(self.code_doc_ids)).any() or (
            self.code_doc_ids[np.minimum(pos, len(self.code_doc_ids) - 1)] != doc_ids
        ).any():
            raise ConfigError("requested codes for doc ids absent from the index")
        return self.codes[pos]

    # --- persistence ---------------------------------------------------

    def serialize(self) -> bytes:
        if self.codebook.k > 256:
            raise ConfigError("index persistence requires k <= 256")
        body = io.BytesIO()
        cfg = self.config
        for value in (
            cfg.k_topic,
            cfg.k_term,
            cfg.n_topics,
            cfg.vocab_size,
            cfg.m,
            cfg.k,
            cfg.dim,
            cfg.max_doc_tokens,
            cfg.max_query_tokens,
        ):
            fileio.write_u32(body, value)
        flags = self.vocab.stopword_flags()
        for tid, token in enumerate(self.vocab.tokens()):
            raw = token.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise ConfigError(f"token {tid} longer than 65535 bytes")
            body.write(struct.pack("<H", len(raw)))
            body.write(raw)
            body.write(struct.pack("<B", int(flags[tid])))

        def write_list(entry_id: int, plist: PostingList) -> None:
            fileio.write_u32(body, entry_id)
            fileio.write_u32(body, len(plist))
            body.write(np.ascontiguousarray(plist.doc_ids, dtype="<u4").tobytes())
            fileio.write_f32_array(body, plist.weights)

        fileio.write_u32(body, cfg.n_topics)
        for i, plist in enumerate(self.topic_lists):
            write_list(i, plist)
        fileio.write_u32(body, len(self.term_lists))
        for tid in sorted(self.term_lists):
            write_list(tid, self.term_lists[tid])

        fileio.write_u32(body, self.codebook.m)
        fileio.write_u32(body, self.codebook.k)
        fileio.write_u32(body, self.codebook.dim)
        fileio.write_f32_array(body, self.codebook.centroids.reshape(-1))
        fileio.write_u64(body, self.doc_count)
        body.write(np.ascontiguousarray(self.code_doc_ids, dtype="<u4").tobytes())
        body.write(self.codes.astype(np.uint8).tobytes())

        payload = body.getvalue()
        total = 4 + 4 + 8 + len(payload) + 4
        head = INDEX_MAGIC + struct.pack("<I", INDEX_VERSION) + struct.pack("<Q", total)
        data = head + payload
        return data + struct.pack("<I", fileio.crc32c(data))

    def digest(self) -> str:
        return hashlib.sha256(self.serialize()).hexdigest()

    def save(self, path: str) -> None:
        with open(path, "wb") as fh:
            fh.write(self.serialize())

    @classmethod
    def load(cls, path: str) -> "BiPhaseIndex":
        with open(path, "rb") as fh:
            data = fh.read()
        if len(data) < 16:
            raise TruncatedFileError(f"{path}: too short to be an index file")
        if data[:4] != INDEX_MAGIC:
            raise FileFormatError(f"{path}: bad magic {data[:4]!r}")
        version = struct.unpack("<I", data[4:8])[0]
        if version != INDEX_VERSION:
            raise VersionError(f"{path}: index version {version}, expected {INDEX_VERSION}")
        total = struct.unpack("<Q", data[8:16])[0]
        if len(data) < total:
            raise TruncatedFileError(f"{path}: expected {total} bytes, found {len(data)}")
        if len(data) > total:
            raise FileFormatError(f"{path}: {len(data) - total} trailing bytes")
        stored = struct.unpack("<I", data[-4:])[0]
        if fileio.crc32c(data[:-4]) != stored:
            raise ChecksumError(f"{path}: checksum mismatch")

        body = io.BytesIO(data[16:-4])
        vals = [fileio.read_u32(body, "config") for _ in range(9)]
        cfg = IndexConfig(
            k_topic=vals[0],
            k_term=vals[1],
            n_topics=vals[2],
            vocab_size=vals[3],
            m=vals[4],
            k=vals[5],
            dim=vals[6],
            max_doc_tokens=vals[7],
            max_query_tokens=vals[8],
        )
        tokens: list[str] = []
        stop_tokens: list[str] = []
        for _ in range(cfg.vocab_size):
            (tlen,) = struct.unpack("<H", fileio.read_exact(body, 2, "token length"))
            token = fileio.read_exact(body, tlen, "token").decode("utf-8")
            (flag,) = struct.unpack("<B", fileio.read_exact(body, 1, "stopword flag"))
            tokens.append(token)
            if flag:
                stop_tokens.append(token)
        vocab = Vocabulary(tokens, stop_tokens)

        def read_list() -> tuple[int, PostingList]:
            entry_id = fileio.read_u32(body, "entry id")
            length = fileio.read_u32(body, "posting length")
            ids = np.frombuffer(
                fileio.read_exact(body, 4 * length, "posting doc ids"), dtype="<u4"
            ).copy()
            ws = fileio.read_f32_array(body, length, "posting weights")
            return entry_id, PostingList(ids, ws)

        n_topic = fileio.read_u32(body, "topic list count")
        if n_topic != cfg.n_topics:
            raise FileFormatError(f"{path}: topic section holds {n_topic} lists, expected {cfg.n_topics}")
        topic_lists: list[PostingList] = [PostingList.empty()] * cfg.n_topics
        for _ in range(n_topic):
            entry_id, plist = read_list()
            if entry_id >= cfg.n_topics:
                raise FileFormatError(f"{path}: topic entry id {entry_id} out of range")
            topic_lists[entry_id] = plist
        n_term = fileio.read_u32(body, "term list count")
        term_lists: dict[int, PostingList] = {}
        for _ in range(n_term):
            entry_id, plist = read_list()
            if entry_id >= cfg.vocab_size:
                raise FileFormatError(f"{path}: term entry id {entry_id} out of range")
            term_lists[entry_id] = plist

        m = fileio.read_u32(body, "codebook m")
        k = fileio.read_u32(body, "codebook k")
        dim = fileio.read_u32(body, "codebook dim")
        if m == 0 or dim % m != 0:
            raise FileFormatError(f"{path}: codebook header has m={m}, dim={dim}")
        cents = fileio.read_f32_array(body, m * k * (dim // m), "centroids")
        codebook = PQCodebook(cents.reshape(m, k, dim // m))
        n_docs = fileio.read_u64(body, "doc count")
        code_ids = np.frombuffer(
            fileio.read_exact(body, 4 * n_docs, "code doc ids"), dtype="<u4"
        ).copy()
        codes = np.frombuffer(
            fileio.read_exact(body, n_docs * m, "codes"), dtype=np.uint8
        ).reshape(n_docs, m).copy()
        if body.read(1):
            raise FileFormatError(f"{path}: unexpected bytes after codes section")
        return cls(cfg, vocab, topic_lists, term_lists, codebook, code_ids, codes)

    # --- reporting -----------------------------------------------------

    def stats(self) -> dict:
        topic_lens = [len(p) for p in self.topic_lists]
        term_lens = [len(p) for p in self.term_lists.values()]
        n_topic = int(sum(topic_lens))
        n_term = int(sum(term_lens))

        def summary(lens: list[int]) -> dict:
            if not lens:
                return {"count": 0, "min": 0, "max": 0, "mean": 0.0, "total": 0}
            return {
                "count": len(lens),
                "min": int(min(lens)),
                "max": int(max(lens)),
                "mean": sum(lens) / len(lens),
                "total": int(sum(lens)),
            }

        posting_bytes = 8 * (n_topic + n_term)
        code_bytes = int(self.codes.size)
        centroid_bytes = int(self.codebook.centroids.size) * 4
        return {
            "doc_count": self.doc_count,
            "topic_postings": n_topic,
            "term_postings": n_term,
            "topic_list_lengths": summary(topic_lens),
            "term_list_lengths": summary(term_lens),
            "copies_per_doc": (n_topic + n_term) / self.doc_count if self.doc_count else 0.0,
            "bytes": posting_bytes + code_bytes + centroid_bytes,
        }


class IndexBuilder:
    """Single-writer accumulation of posting lists and codes."""

    def __init__(self, config: IndexConfig, vocab: Vocabulary, codebook: PQCodebook):
        config.validate()
        if codebook.dim != config.dim or codebook.m != config.m or codebook.k != config.k:
            raise ConfigError("codebook shape does not match the index config")
        self.config = config
        self.vocab = vocab
        self.codebook = codebook
        self._topic_acc: list[tuple[list[int], list[float]]] = [
            ([], []) for _ in range(config.n_topics)
        ]
        self._term_acc: dict[int, tuple[list[int], list[float]]] = {}
        self._codes: dict[int, np.ndarray] = {}

    def add_document(
        self,
        doc_id: int,
        mem: MembershipVector,
        code: np.ndarray,
        k_topic: int | None = None,
        k_term: int | None = None,
    ) -> None:
        """Archive one document into the posting lists of its top entries.

        Entries whose membership weight is not strictly positive are skipped
        even when they land inside the top-k selection.
        """
        if doc_id in self._codes:
            raise DuplicateIdError(f"doc id {doc_id} already indexed")
        if len(mem.topic) != self.config.n_topics:
            raise ConfigError("topic membership length does not match the config")
        k_topic = self.config.k_topic if k_topic is None else k_topic
        k_term = self.config.k_term if k_term is None else k_term
        for i in top_k_entries(mem.topic, min(k_topic, self.config.n_topics)):
            weight = float(mem.topic[i])
            if weight > 0.0:
                ids, ws = self._topic_acc[i]
                ids.append(doc_id)
                ws.append(weight)
        for tid in top_k_entries(mem.term, k_term):
            if tid >= self.config.vocab_size:
                raise ConfigError(f"term id {tid} outside the vocabulary")
            weight = float(mem.term[tid])
            if weight > 0.0:
                ids, ws = self._term_acc.setdefault(tid, ([], []))
                ids.append(doc_id)
                ws.append(weight)
        code = np.asarray(code)
        if code.shape != (self.config.m,):
            raise ConfigError(f"code must have length m={self.config.m}")
        self._codes[doc_id] = code

    def build(self) -> BiPhaseIndex:
        def finalize(ids: list[int], ws: list[float]) -> PostingList:
            id_arr = np.asarray(ids, dtype=np.uint32)
            w_arr = np.asarray(ws, dtype=np.float32)
            order = np.argsort(id_arr, kind="stable")
            return PostingList(id_arr[order], w_arr[order])

        topic_lists = [finalize(ids, ws) for ids, ws in self._topic_acc]
        term_lists = {
            tid: finalize(ids, ws) for tid, (ids, ws) in sorted(self._term_acc.items())
        }
        doc_ids = np.asarray(sorted(self._codes), dtype=np.uint32)
        if len(doc_ids):
            codes = np.stack([self._codes[int(d)] for d in doc_ids])
        else:
            codes = np.empty((0, self.config.m), dtype=self.codebook.code_dtype())
        return BiPhaseIndex(
            self.config, self.vocab, topic_lists, term_lists, self.codebook, doc_ids, codes
        )


def build(
    docs: Iterable[Document],
    enc: ToyEncoder,
    codebook: PQCodebook,
    config: IndexConfig,
    vocab: Vocabulary,
    chunk_size: int = 2048,
) -> BiPhaseIndex:
    """Stream tokenized documents through membership computation and coding."""
    from .quantizer import encode_batch

    if enc.vocab_size != config.vocab_size or enc.dim != config.dim:
        raise ConfigError("encoder shape does not match the index config")
    if enc.n_topics != config.n_topics:
        raise ConfigError("encoder topic count does not match the index config")
    builder = IndexBuilder(config, vocab, codebook)
    batch: list[Document] = []

    def flush() -> None:
        if not batch:
            return
        mems, states = compute_memberships_batch(
            enc, [d.tokens for d in batch], config.k_topic, return_states=True
        )
        codes = encode_batch(codebook, states)
        for doc, mem, code in zip(batch, mems, codes):
            builder.add_document(doc.doc_id, mem, code)
        batch.clear()

    for doc in docs:
        batch.append(doc)
        if len(batch) >= chunk_size:
            flush()
    flush()
    return builder.build()
