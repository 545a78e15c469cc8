"""Retrieval over the guideline corpus: chunking, BM25, dense cosine.

Chunking is character-based sliding window (size 2,000, overlap 200, so
stride 1,800) over the truncated guideline texts; the final chunk of a
guideline may be shorter. BM25 is the Okapi variant with plus-one-smoothed
natural-log IDF:

    idf(t)   = ln(1 + (N - df + 0.5) / (df + 0.5))
    score(d) = sum_t idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len/avgdl))

summed over the unique query terms. Ranking returns scores in
non-increasing order with ties broken by ascending chunk_id; dense
retrieval shares the same top-k and tie rules, scoring by dot product of
unit vectors.

Index files are versioned little-endian binaries (layout documented next
to each writer) with a JSON sidecar recording the build parameters.
"""

from __future__ import annotations

import math
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import TruncatedGuideline
from .gateway import ChatRequest, EmbeddingBackend, embed
from .jsonlio import read_json, write_json
from .prompts import load_template

CHUNK_SIZE = 2000
CHUNK_OVERLAP = 200
DEFAULT_K = 10
DEFAULT_K1 = 1.2
DEFAULT_B = 0.75

EMPTY_CONTEXT_MARKER = "[sem contexto recuperado]"


@dataclass
class Chunk:
    chunk_id: int
    guideline_id: str
    start_offset: int
    text: str

    def to_dict(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "guideline_id": self.guideline_id,
            "start_offset": self.start_offset,
            "text": self.text,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Chunk":
        return cls(
            chunk_id=int(obj["chunk_id"]),
            guideline_id=obj["guideline_id"],
            start_offset=int(obj["start_offset"]),
            text=obj["text"],
        )


@dataclass
class RetrievalResult:
    ranked: list[tuple[int, float]] = field(default_factory=list)

    def chunk_ids(self) -> list[int]:
        return [cid for cid, _ in self.ranked]


def chunk_corpus(
    guidelines: list[TruncatedGuideline],
    size: int = CHUNK_SIZE,
    overlap: int = CHUNK_OVERLAP,
) -> list[Chunk]:
    """Sliding-window chunking covering each text completely; chunk ids are
    assigned sequentially across the corpus in input order."""
    if not (0 <= overlap < size):
        raise ValueError(f"require 0 <= overlap < size, got size={size} overlap={overlap}")
    stride = size - overlap
    chunks: list[Chunk] = []
    next_id = 0
    for g in guidelines:
        offset = 0
        n = len(g.text)
        while offset < n:
            piece = g.text[offset : offset + size]
            chunks.append(Chunk(next_id, g.id, offset, piece))
            next_id += 1
            if offset + size >= n:
                break
            offset += stride
    return chunks


_TERM_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize_terms(text: str) -> list[str]:
    """Unicode-lowercased maximal alphanumeric runs; diacritics preserved,
    digits kept (dosages are query-critical)."""
    return [m.group(0).lower() for m in _TERM_RE.finditer(text)]


@dataclass
class Bm25Index:
    postings: dict[str, list[tuple[int, int]]]  # term -> [(chunk_id, tf)]
    doc_length: dict[int, int]  # chunk_id -> token count
    avg_doc_length: float
    n_docs: int
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        return math.log(1.0 + (self.n_docs - df + 0.5) / (df + 0.5))


def build_bm25(chunks: list[Chunk], k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> Bm25Index:
    """Build the inverted index with standard Okapi statistics."""
    if not chunks:
        raise ValueError("cannot build a BM25 index over an empty corpus")
    postings: dict[str, list[tuple[int, int]]] = {}
    doc_length: dict[int, int] = {}
    for chunk in chunks:
        terms = tokenize_terms(chunk.text)
        doc_length[chunk.chunk_id] = len(terms)
        tf: dict[str, int] = {}
        for term in terms:
            tf[term] = tf.get(term, 0) + 1
        for term, count in tf.items():
            postings.setdefault(term, []).append((chunk.chunk_id, count))
    for plist in postings.values():
        plist.sort(key=lambda p: p[0])
    total = sum(doc_length.values())
    return Bm25Index(
        postings=postings,
        doc_length=doc_length,
        avg_doc_length=total / len(chunks),
        n_docs=len(chunks),
        k1=k1,
        b=b,
    )


def _top_k(scores: dict[int, float], k: int) -> RetrievalResult:
    ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0]))[: max(k, 0)]
    return RetrievalResult(ranked=[(cid, float(s)) for cid, s in ranked])


def query_bm25(index: Bm25Index, query: str, k: int = DEFAULT_K) -> RetrievalResult:
    """Score every chunk containing at least one query term; duplicate
    query terms count once. Empty query yields an empty result."""
    terms = sorted(set(tokenize_terms(query)))
    scores: dict[int, float] = {}
    for term in terms:
        plist = index.postings.get(term)
        if not plist:
            continue
        idf = index.idf(term)
        for chunk_id, tf in plist:
            length_norm = 1.0 - index.b + index.b * index.doc_length[chunk_id] / index.avg_doc_length
            contribution = idf * tf * (index.k1 + 1.0) / (tf + index.k1 * length_norm)
            scores[chunk_id] = scores.get(chunk_id, 0.0) + contribution
    return _top_k(scores, k)


@dataclass
class DenseIndex:
    chunk_ids: list[int]
    vectors: np.ndarray  # shape (n, dim), rows unit-normalized

    @property
    def dimension(self) -> int:
        return int(self.vectors.shape[1])


def build_dense(
    chunks: list[Chunk],
    backend: EmbeddingBackend,
    model_id: str = "text-embedding-3-small",
    batch_size: int = 128,
) -> DenseIndex:
    """Embed every chunk (unit-normalized by the gateway) into a dense index."""
    if not chunks:
        raise ValueError("cannot build a dense index over an empty corpus")
    vectors: list[list[float]] = []
    for start in range(0, len(chunks), batch_size):
        batch = [c.text for c in chunks[start : start + batch_size]]
        vectors.extend(embed(batch, backend, model_id=model_id))
    return DenseIndex(
        chunk_ids=[c.chunk_id for c in chunks],
        vectors=np.asarray(vectors, dtype=np.float64),
    )


def query_dense(
    index: DenseIndex,
    query_text: str,
    backend: EmbeddingBackend,
    k: int = DEFAULT_K,
    model_id: str = "text-embedding-3-small",
) -> RetrievalResult:
    """Cosine similarity as a dot product of unit vectors; same top-k and
    tie rules as BM25. k larger than the corpus returns every chunk."""
    query_vec = np.asarray(embed([query_text], backend, model_id=model_id)[0])
    sims = index.vectors @ query_vec
    scores = {cid: float(s) for cid, s in zip(index.chunk_ids, sims)}
    return _top_k(scores, k)


def assemble_rag_prompt(
    question: str,
    results: RetrievalResult,
    chunks: list[Chunk],
    model_id: str = "",
    max_output_tokens: int = 1024,
    prompts_dir: str | Path | None = None,
) -> ChatRequest:
    """Build the generation request: retrieved chunks in rank order, each
    prefixed by its guideline id, followed by the task text. Zero retrieved
    chunks produce an explicit empty-context marker."""
    by_id = {c.chunk_id: c for c in chunks}
    lines = []
    for chunk_id, _ in results.ranked:
        if chunk_id not in by_id:
            raise KeyError(f"unknown chunk_id in results: {chunk_id}")
        chunk = by_id[chunk_id]
        lines.append(f"[{chunk.guideline_id}] {chunk.text}")
    context = "\n\n".join(lines) if lines else EMPTY_CONTEXT_MARKER
    template = load_template("rag", prompts_dir)
    return ChatRequest(
        model_id=model_id,
        messages=[("user", template.format(context=context, task=question))],
        temperature=0.0,
        max_output_tokens=max_output_tokens,
    )


# --- persistence ---------------------------------------------------------
#
# bm25.idx layout (little-endian):
#   magic "BM25IDX1" (8 bytes)
#   u32 n_docs, f64 k1, f64 b, f64 avg_doc_length, u32 n_terms
#   n_docs x (u32 chunk_id, u32 doc_length)         sorted by chunk_id
#   per term, sorted lexicographically by UTF-8 bytes:
#     u16 term_len, term bytes, u32 n_postings, n_postings x (u32 id, u32 tf)
#
# dense.idx layout (little-endian):
#   magic "DENSEIX1" (8 bytes)
#   u32 n, u32 dim
#   n x u32 chunk_id
#   n*dim f64 row-major unit vectors

_BM25_MAGIC = b"BM25IDX1"
_DENSE_MAGIC = b"DENSEIX1"


def save_bm25(index: Bm25Index, idx_path: str | Path, meta_path: str | Path) -> None:
    out = bytearray()
    out += _BM25_MAGIC
    out += struct.pack("<IdddI", index.n_docs, index.k1, index.b, index.avg_doc_length,
                       len(index.postings))
    for chunk_id in sorted(index.doc_length):
        out += struct.pack("<II", chunk_id, index.doc_length[chunk_id])
    for term in sorted(index.postings, key=lambda t: t.encode("utf-8")):
        raw = term.encode("utf-8")
        out += struct.pack("<H", len(raw))
        out += raw
        plist = index.postings[term]
        out += struct.pack("<I", len(plist))
        for chunk_id, tf in plist:
            out += struct.pack("<II", chunk_id, tf)
    Path(idx_path).write_bytes(bytes(out))
    write_json(meta_path, {
        "format": _BM25_MAGIC.decode("ascii"),
        "n_docs": index.n_docs,
        "n_terms": len(index.postings),
        "k1": index.k1,
        "b": index.b,
        "avg_doc_length": index.avg_doc_length,
    })


def load_bm25(idx_path: str | Path) -> Bm25Index:
    data = Path(idx_path).read_bytes()
    if data[:8] != _BM25_MAGIC:
        raise ValueError(f"not a BM25 index file: {idx_path}")
    offset = 8
    n_docs, k1, b, avgdl, n_terms = struct.unpack_from("<IdddI", data, offset)
    offset += struct.calcsize("<IdddI")
    doc_length: dict[int, int] = {}
    for _ in range(n_docs):
        chunk_id, length = struct.unpack_from("<II", data, offset)
        offset += 8
        doc_length[chunk_id] = length
    postings: dict[str, list[tuple[int, int]]] = {}
    for _ in range(n_terms):
        (term_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        term = data[offset : offset + term_len].decode("utf-8")
        offset += term_len
        (n_postings,) = struct.unpack_from("<I", data, offset)
        offset += 4
        plist = []
        for _ in range(n_postings):
            chunk_id, tf = struct.unpack_from("<II", data, offset)
            offset += 8
            plist.append((chunk_id, tf))
        postings[term] = plist
    return Bm25Index(
        postings=postings,
        doc_length=doc_length,
        avg_doc_length=avgdl,
        n_docs=n_docs,
        k1=k1,
        b=b,
    )


def save_dense(
    index: DenseIndex, idx_path: str | Path, meta_path: str | Path, model_id: str = ""
) -> None:
    n, dim = index.vectors.shape
    out = bytearray()
    out += _DENSE_MAGIC
    out += struct.pack("<II", n, dim)
    for chunk_id in index.chunk_ids:
        out += struct.pack("<I", chunk_id)
    out += np.ascontiguousarray(index.vectors, dtype="<f8").tobytes()
    Path(idx_path).write_bytes(bytes(out))
    write_json(meta_path, {
        "format": _DENSE_MAGIC.decode("ascii"),
        "n_vectors": int(n),
        "dimension": int(dim),
        "model_id": model_id,
    })


def load_dense(idx_path: str | Path) -> DenseIndex:
    data = Path(idx_path).read_bytes()
    if data[:8] != _DENSE_MAGIC:
        raise ValueError(f"not a dense index file: {idx_path}")
    n, dim = struct.unpack_from("<II", data, 8)
    offset = 16
    chunk_ids = list(struct.unpack_from(f"<{n}I", data, offset))
    offset += 4 * n
    vectors = np.frombuffer(data, dtype="<f8", count=n * dim, offset=offset).reshape(n, dim)
    return DenseIndex(chunk_ids=chunk_ids, vectors=vectors.copy())
