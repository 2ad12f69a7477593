"""Turn a JSONL corpus into a binary embedding file, one row per document.

The output follows the engine's embedding file layout exactly (21-byte
header: magic "TPCL", format version u32, row count u64, dimension u32,
stage byte, then row-major little-endian float32), written here from the
documented byte layout so the two tools interoperate purely through the
file.  Rows keep corpus order.  No text preprocessing is applied before
encoding.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_MODEL = "sentence-transformers/all-MiniLM-L6-v2"

_MAGIC = b"TPCL"
_FORMAT_VERSION = 1
_STAGE_RAW = 0
_HEADER = struct.Struct("<4sIQIB")


@dataclass
class ExportJob:
    corpus_path: str
    output_path: str
    model: str = DEFAULT_MODEL
    batch_size: int = 64
    device: str | None = None
    # the engine applies its own normalization later, so pooled vectors are
    # exported unscaled by default; the flag exists for sensitivity checks
    normalize: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")


def read_corpus_texts(path) -> list[str]:
    """Document texts in file order from a JSONL corpus.

    Each non-blank line must be an object with ``doc_id`` and ``text``;
    duplicate ids are rejected so a bad corpus fails here rather than in the
    engine.
    """
    texts: list[str] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}: malformed JSON on line {lineno}: {e.msg}") from None
            if not isinstance(obj, dict) or "doc_id" not in obj or "text" not in obj:
                raise ValueError(f"{path}: line {lineno} must contain doc_id and text")
            doc_id = str(obj["doc_id"])
            if doc_id in seen:
                raise ValueError(f"{path}: duplicate doc_id {doc_id!r} on line {lineno}")
            seen.add(doc_id)
            texts.append(str(obj["text"]))
    if not texts:
        raise ValueError(f"{path}: corpus is empty")
    return texts


def write_embedding_file(matrix: np.ndarray, path) -> None:
    """Write a float matrix as a stage-raw binary embedding file."""
    matrix = np.ascontiguousarray(matrix, dtype=np.float32)
    if matrix.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {matrix.shape}")
    if not np.isfinite(matrix).all():
        raise ValueError("refusing to write non-finite embeddings")
    n_docs, dim = matrix.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(_MAGIC, _FORMAT_VERSION, n_docs, dim, _STAGE_RAW))
        f.write(matrix.astype("<f4").tobytes(order="C"))


def _load_default_encoder(job: ExportJob):
    try:
        from sentence_transformers import SentenceTransformer
    except ImportError as e:
        raise RuntimeError("sentence-transformers is not installed") from e
    try:
        return SentenceTransformer(job.model, device=job.device)
    except Exception as e:
        raise RuntimeError(f"could not load encoder model {job.model!r}: {e}") from e


def export(job: ExportJob, encoder=None) -> np.ndarray:
    """Encode every document of the corpus and write the embedding file.

    ``encoder`` defaults to the pretrained model named by the job; anything
    with a compatible ``encode(texts, ...)`` returning one vector per text
    works, which keeps the batching and file plumbing testable offline.
    Returns the exported matrix.
    """
    texts = read_corpus_texts(job.corpus_path)
    n_empty = sum(1 for t in texts if not t.strip())
    if n_empty:
        log.warning("%d document(s) have empty text; encoding them as-is", n_empty)
    if encoder is None:
        encoder = _load_default_encoder(job)

    chunks = []
    for start in range(0, len(texts), job.batch_size):
        batch = texts[start : start + job.batch_size]
        vectors = encoder.encode(
            batch,
            batch_size=job.batch_size,
            convert_to_numpy=True,
            normalize_embeddings=job.normalize,
            show_progress_bar=False,
        )
        vectors = np.asarray(vectors, dtype=np.float32)
        if vectors.shape[0] != len(batch):
            raise RuntimeError(
                f"encoder returned {vectors.shape[0]} rows for a batch of {len(batch)}"
            )
        chunks.append(vectors)
    matrix = np.vstack(chunks)
    write_embedding_file(matrix, job.output_path)
    log.info(
        "exported %d x %d embeddings to %s", matrix.shape[0], matrix.shape[1], job.output_path
    )
    return matrix
