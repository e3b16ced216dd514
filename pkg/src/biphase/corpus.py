"""Corpus ingestion: TSV loading, tokenization, vocabulary, token-overlap analysis."""

from __future__ import annotations

import string
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Iterator

from .errors import ConfigError, DataError, DuplicateIdError

_MAX_U32 = 0xFFFFFFFF

# Punctuation splits tokens; "pie," and "(pie" both yield "pie".
_PUNCT_TABLE = str.maketrans({c: " " for c in string.punctuation})


@dataclass
class Document:
    doc_id: int
    text: str
    tokens: list[int] = field(default_factory=list)


@dataclass
class Query:
    query_id: int
    text: str
    tokens: list[int] = field(default_factory=list)


class Vocabulary:
    """Bijective token <-> dense-id mapping with a stopword flag per token."""

    def __init__(self, tokens: Iterable[str], stopwords: Iterable[str] = ()):
        self._id_to_token: list[str] = list(tokens)
        self._token_to_id = {t: i for i, t in enumerate(self._id_to_token)}
        if len(self._token_to_id) != len(self._id_to_token):
            raise ConfigError("vocabulary contains duplicate tokens")
        stopset = set(stopwords)
        self._stop = [t in stopset for t in self._id_to_token]

    def __len__(self) -> int:
        return len(self._id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    @property
    def size(self) -> int:
        return len(self._id_to_token)

    def id_of(self, token: str) -> int | None:
        return self._token_to_id.get(token)

    def token_of(self, token_id: int) -> str:
        return self._id_to_token[token_id]

    def is_stopword(self, token_id: int) -> bool:
        return self._stop[token_id]

    def stopword_flags(self) -> list[bool]:
        return list(self._stop)

    def tokens(self) -> list[str]:
        return list(self._id_to_token)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for token, stop in zip(self._id_to_token, self._stop):
                fh.write(f"{token}\t{int(stop)}\n")

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        tokens: list[str] = []
        stopwords: list[str] = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 2 or parts[1] not in ("0", "1"):
                    raise DataError(f"{path}:{lineno}: expected token<TAB>0|1")
                tokens.append(parts[0])
                if parts[1] == "1":
                    stopwords.append(parts[0])
        return cls(tokens, stopwords)


class Qrels:
    """Relevance judgments: query_id -> set of relevant doc_ids."""

    def __init__(self, judgments: dict[int, set[int]] | None = None):
        self._rel: dict[int, set[int]] = {q: set(d) for q, d in (judgments or {}).items()}

    def __len__(self) -> int:
        return len(self._rel)

    def __contains__(self, query_id: int) -> bool:
        return query_id in self._rel

    def add(self, query_id: int, doc_id: int) -> None:
        self._rel.setdefault(query_id, set()).add(doc_id)

    def relevant(self, query_id: int) -> set[int]:
        return set(self._rel.get(query_id, set()))

    def query_ids(self) -> list[int]:
        return sorted(self._rel)

    def validate_against(self, doc_ids: Iterable[int]) -> None:
        known = set(doc_ids)
        for qid, rel in self._rel.items():
            missing = rel - known
            if missing:
                raise DataError(
                    f"qrels for query {qid} reference unknown doc ids {sorted(missing)[:5]}"
                )


def default_stopwords() -> set[str]:
    text = resources.files("biphase").joinpath("data/stopwords.txt").read_text("utf-8")
    return {line.strip() for line in text.splitlines() if line.strip()}


def load_stopwords(path: str) -> set[str]:
    with open(path, encoding="utf-8") as fh:
        return {line.strip() for line in fh if line.strip()}


def split_text(text: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace."""
    return text.lower().translate(_PUNCT_TABLE).split()


def tokenize(text: str, vocab: Vocabulary, max_len: int) -> list[int]:
    """Map ``text`` to vocabulary ids, dropping OOV tokens, truncated to ``max_len``."""
    if max_len < 1:
        raise ConfigError(f"max_len must be >= 1, got {max_len}")
    out: list[int] = []
    for token in split_text(text):
        tid = vocab.id_of(token)
        if tid is not None:
            out.append(tid)
            if len(out) == max_len:
                break
    return out


def build_vocab(
    corpus: Iterable,
    min_freq: int = 1,
    stopword_list: Iterable[str] = (),
) -> Vocabulary:
    """Vocabulary of all tokens occurring at least ``min_freq`` times.

    Accepts Documents, Queries, or plain strings. Ids are assigned to tokens
    in lexicographic order, so the result is deterministic.
    """
    if min_freq < 1:
        raise ConfigError(f"min_freq must be >= 1, got {min_freq}")
    counts: Counter[str] = Counter()
    saw_any = False
    for item in corpus:
        saw_any = True
        text = getattr(item, "text", item)
        counts.update(split_text(text))
    if not saw_any:
        raise DataError("cannot build a vocabulary from an empty corpus")
    kept = sorted(t for t, n in counts.items() if n >= min_freq)
    if not kept:
        raise DataError(
            f"no token reaches min_freq={min_freq}; vocabulary would be empty"
        )
    return Vocabulary(kept, stopword_list)


def tokenize_documents(docs: Iterable[Document], vocab: Vocabulary, max_len: int) -> None:
    for doc in docs:
        doc.tokens = tokenize(doc.text, vocab, max_len)


def tokenize_queries(queries: Iterable[Query], vocab: Vocabulary, max_len: int) -> None:
    for q in queries:
        q.tokens = tokenize(q.text, vocab, max_len)


def _iter_id_text(path: str) -> Iterator[tuple[int, str]]:
    seen: set[int] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t", 1)
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected id<TAB>text")
            try:
                ident = int(parts[0])
            except ValueError:
                raise DataError(f"{path}:{lineno}: id {parts[0]!r} is not an integer") from None
            if not 0 <= ident <= _MAX_U32:
                raise DataError(f"{path}:{lineno}: id {ident} outside unsigned 32-bit range")
            if ident in seen:
                raise DuplicateIdError(f"{path}:{lineno}: duplicate id {ident}")
            seen.add(ident)
            yield ident, parts[1]


def iter_tsv_corpus(path: str) -> Iterator[Document]:
    for doc_id, text in _iter_id_text(path):
        yield Document(doc_id, text)


def load_tsv_corpus(path: str) -> list[Document]:
    return list(iter_tsv_corpus(path))


def iter_tsv_queries(path: str) -> Iterator[Query]:
    for query_id, text in _iter_id_text(path):
        yield Query(query_id, text)


def load_tsv_queries(path: str) -> list[Query]:
    return list(iter_tsv_queries(path))


def load_qrels(path: str) -> Qrels:
    qrels = Qrels()
    seen: set[tuple[int, int]] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected qid<TAB>docid")
            try:
                qid, did = int(parts[0]), int(parts[1])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer id") from None
            if (qid, did) in seen:
                raise DuplicateIdError(f"{path}:{lineno}: duplicate judgment ({qid}, {did})")
            seen.add((qid, did))
            qrels.add(qid, did)
    return qrels


def save_qrels(qrels: Qrels, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for qid in qrels.query_ids():
            for did in sorted(qrels.relevant(qid)):
                fh.write(f"{qid}\t{did}\n")


def overlap_analysis(
    queries: Iterable[Query],
    qrels: Qrels,
    corpus: Iterable[Document],
    vocab: Vocabulary,
) -> float:
    """Fraction of judged queries sharing a non-stopword token with a relevant doc.

    Both queries and corpus must already be tokenized against ``vocab``.
    """
    doc_tokens: dict[int, set[int]] = {}
    for doc in corpus:
        doc_tokens[doc.doc_id] = {t for t in doc.tokens if not vocab.is_stopword(t)}
    judged = 0
    overlapping = 0
    for query in queries:
        relevant = qrels.relevant(query.query_id)
        if not relevant:
            continue
        judged += 1
        qtoks = {t for t in query.tokens if not vocab.is_stopword(t)}
        for did in sorted(relevant):
            if did not in doc_tokens:
                raise DataError(f"qrels reference doc {did} absent from the corpus")
            if qtoks & doc_tokens[did]:
                overlapping += 1
                break
    if judged == 0:
        raise DataError("no query has relevance judgments")
    return overlapping / judged
