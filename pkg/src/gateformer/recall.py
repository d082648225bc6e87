"""Sparse, dense, and hybrid candidate recall over gated keywords.

Sparse recall is an exact inverted-index + Okapi BM25 ranker (k1=1.2,
b=0.75); dense recall is exact brute-force scaled inner product; hybrid
retrieves sparsely then re-ranks densely. No approximate pruning anywhere:
desk-scale corpora make exactness cheap.

Index file layout (little-endian):

    magic  b"GFIX"
    u32    format version (1)
    u32    n_docs
    f64    avg_len
    n_docs x (u16 id_len, id utf8 bytes, u32 doc_len)    # sorted by doc id
    u32    n_tokens
    per token (ascending token id):
        u32 token_id, u32 n_postings,
        n_postings x (u32 delta_doc_key, u32 tf)         # keys delta-coded
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .text import TokenSequence

K1 = 1.2
B = 0.75

MAGIC = b"GFIX"
VERSION = 1


def bm25_term_weight(
    tf: int,
    df: int,
    doc_len: int,
    avg_len: float,
    n_docs: int,
    k1: float = K1,
    b: float = B,
) -> float:
    """Okapi BM25 contribution of one term occurring tf times in a document."""
    if tf <= 0:
        return 0.0
    idf = math.log((n_docs - df + 0.5) / (df + 0.5) + 1.0)
    return idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * doc_len / avg_len))


@dataclass
class InvertedIndex:
    """Postings sorted ascending by internal doc key; keys index ``doc_ids``
    (the sorted external ids), so key order and id order coincide."""

    doc_ids: list[str]
    doc_lengths: list[int]
    postings: dict[int, list[tuple[int, int]]]  # token -> [(doc_key, tf)]
    avg_len: float

    @property
    def n_docs(self) -> int:
        return len(self.doc_ids)

    def key_of(self, doc_id: str) -> int:
        lo = np.searchsorted(np.asarray(self.doc_ids, dtype=object), doc_id)
        idx = int(lo)
        if idx >= len(self.doc_ids) or self.doc_ids[idx] != doc_id:
            raise KeyError(f"doc id not in index: {doc_id}")
        return idx


def build_index(docs: dict[str, TokenSequence]) -> InvertedIndex:
    """Deterministic index build; docs are keyed in sorted-id order."""
    if not docs:
        raise ValueError("cannot index an empty corpus")
    doc_ids = sorted(docs)
    doc_lengths = []
    postings: dict[int, list[tuple[int, int]]] = {}
    for key, doc_id in enumerate(doc_ids):
        seq = docs[doc_id]
        doc_lengths.append(len(seq))
        counts: dict[int, int] = {}
        for tok in seq.ids:
            counts[tok] = counts.get(tok, 0) + 1
        for tok, tf in counts.items():
            postings.setdefault(tok, []).append((key, tf))
    avg_len = sum(doc_lengths) / len(doc_lengths)
    return InvertedIndex(doc_ids, doc_lengths, postings, avg_len)


@dataclass
class UserQuery:
    """Weighted keyword bag for one user, deduplicated with weights summed."""

    keywords: list[tuple[int, float]]
    user_embedding: np.ndarray | None = None

    @classmethod
    def from_pairs(
        cls, pairs: list[tuple[int, float]], user_embedding: np.ndarray | None = None
    ) -> "UserQuery":
        merged: dict[int, float] = {}
        for tok, w in pairs:
            if w <= 0:
                raise ValueError(f"keyword weights must be positive, got {w}")
            merged[tok] = merged.get(tok, 0.0) + w
        keywords = sorted(merged.items())
        return cls(keywords=keywords, user_embedding=user_embedding)


def bm25_score(index: InvertedIndex, query: UserQuery, doc_id: str) -> float:
    """Weighted BM25 of one document for the query's keyword bag."""
    key = index.key_of(doc_id)
    doc_len = index.doc_lengths[key]
    score = 0.0
    for tok, weight in query.keywords:
        plist = index.postings.get(tok)
        if not plist:
            continue
        keys = [k for k, _ in plist]
        pos = int(np.searchsorted(keys, key))
        if pos < len(keys) and keys[pos] == key:
            tf = plist[pos][1]
            score += weight * bm25_term_weight(
                tf, len(plist), doc_len, index.avg_len, index.n_docs
            )
    return score


def recall_sparse(index: InvertedIndex, query: UserQuery, n: int) -> list[str]:
    """Exact BM25 top-n over the union of the query terms' postings."""
    if n < 1:
        raise ValueError("n must be >= 1")
    candidates: set[int] = set()
    for tok, _ in query.keywords:
        for key, _tf in index.postings.get(tok, ()):
            candidates.add(key)
    scored = []
    for key in sorted(candidates):
        doc_id = index.doc_ids[key]
        scored.append((-bm25_score(index, query, doc_id), key))
    scored.sort()
    return [index.doc_ids[key] for _, key in scored[:n]]


def recall_dense(
    user_embedding: np.ndarray, doc_embeddings: dict[str, np.ndarray], n: int
) -> list[str]:
    """Exact top-n by scaled inner product; ties broken by doc id."""
    if n < 1:
        raise ValueError("n must be >= 1")
    d = user_embedding.shape[0]
    scale = 1.0 / math.sqrt(d)
    scored = []
    for doc_id in sorted(doc_embeddings):
        e = doc_embeddings[doc_id]
        if e.shape[0] != d:
            raise ValueError(
                f"embedding dim mismatch: user {d} vs doc {doc_id} {e.shape[0]}"
            )
        scored.append((-float(user_embedding @ e) * scale, doc_id))
    scored.sort()
    return [doc_id for _, doc_id in scored[:n]]


def recall_hybrid(
    index: InvertedIndex,
    query: UserQuery,
    doc_embeddings: dict[str, np.ndarray],
    n_sparse: int,
    n: int,
) -> list[str]:
    """Sparse top-n_sparse, densely re-ranked, truncated to n."""
    if n > n_sparse:
        raise ValueError(f"n ({n}) must be <= n_sparse ({n_sparse})")
    if query.user_embedding is None:
        raise ValueError("hybrid recall needs a user embedding on the query")
    shortlist = recall_sparse(index, query, n_sparse)
    subset = {doc_id: doc_embeddings[doc_id] for doc_id in shortlist}
    if not subset:
        return []
    return recall_dense(query.user_embedding, subset, min(n, len(subset)))


def recall_at_k(results: list[str], relevant: set[str], k: int) -> float:
    """|top-k hits| / |relevant|; undefined (raises) for an empty relevant set."""
    if not relevant:
        raise ValueError("recall undefined for an empty relevant set")
    return len(set(results[:k]) & set(relevant)) / len(relevant)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_index(index: InvertedIndex, path) -> None:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<II", VERSION, index.n_docs)
    out += struct.pack("<d", index.avg_len)
    for doc_id, length in zip(index.doc_ids, index.doc_lengths):
        raw = doc_id.encode("utf-8")
        out += struct.pack("<H", len(raw))
        out += raw
        out += struct.pack("<I", length)
    tokens = sorted(index.postings)
    out += struct.pack("<I", len(tokens))
    for tok in tokens:
        plist = index.postings[tok]
        out += struct.pack("<II", tok, len(plist))
        prev = 0
        for key, tf in plist:
            out += struct.pack("<II", key - prev, tf)
            prev = key
    Path(path).write_bytes(bytes(out))


def load_index(path) -> InvertedIndex:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise ValueError(f"not an index file: {path}")
    off = 4
    version, n_docs = struct.unpack_from("<II", buf, off)
    off += 8
    if version != VERSION:
        raise ValueError(f"unsupported index version {version}")
    (avg_len,) = struct.unpack_from("<d", buf, off)
    off += 8
    doc_ids: list[str] = []
    doc_lengths: list[int] = []
    for _ in range(n_docs):
        (id_len,) = struct.unpack_from("<H", buf, off)
        off += 2
        doc_ids.append(buf[off:off + id_len].decode("utf-8"))
        off += id_len
        (length,) = struct.unpack_from("<I", buf, off)
        off += 4
        doc_lengths.append(length)
    (n_tokens,) = struct.unpack_from("<I", buf, off)
    off += 4
    postings: dict[int, list[tuple[int, int]]] = {}
    for _ in range(n_tokens):
        tok, n_post = struct.unpack_from("<II", buf, off)
        off += 8
        plist = []
        prev = 0
        for _ in range(n_post):
            delta, tf = struct.unpack_from("<II", buf, off)
            off += 8
            prev += delta
            plist.append((prev, tf))
        postings[tok] = plist
    return InvertedIndex(doc_ids, doc_lengths, postings, avg_len)
