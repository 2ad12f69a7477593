"""On-disk formats and in-memory containers shared across the pipeline.

Three artifacts move between tools: corpora (JSON-Lines), dense embedding
matrices (binary, little-endian float32) and topic assignments (CSV).  The
binary layout is fixed so that any producer can be paired with any consumer
without a parsing library:

    magic "TPCL" | version u32 | n_docs u64 | dim u32 | stage u8 | payload

followed by ``n_docs * dim`` float32 values in row-major order, everything
little-endian (21 header bytes total).
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

MAGIC = b"TPCL"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQIB")

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric characters, dropping empties."""
    return _TOKEN_RE.findall(text.lower())


class Stage(IntEnum):
    """Position of a matrix within the feature-extraction chain."""

    RAW = 0
    PCA_D = 1
    NORMALIZED = 2
    FEATURE_K1 = 3


@dataclass
class EmbeddingMatrix:
    """Dense row-per-document matrix; ``data[n]`` is the vector of document n."""

    data: np.ndarray
    stage: Stage = Stage.RAW

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError(f"embedding matrix must be 2-D, got shape {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise ValueError("embedding matrix contains non-finite entries")
        self.stage = Stage(self.stage)

    @property
    def n_docs(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass
class TopicAssignment:
    """Hard topic labels plus, optionally, the posterior matrix behind them.

    Invariants enforced at construction: labels lie in ``[0, k)``; when
    posteriors are present each row sums to one (1e-9) and the hard label is
    the row argmax with ties going to the lowest index.
    """

    h: np.ndarray
    k: int
    gamma: np.ndarray | None = None

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=np.int64)
        if self.h.ndim != 1:
            raise ValueError("assignment vector must be 1-D")
        if self.k < 1:
            raise ValueError(f"topic count must be >= 1, got {self.k}")
        if self.h.size and (self.h.min() < 0 or self.h.max() >= self.k):
            raise ValueError(f"topic values must lie in [0, {self.k})")
        if self.gamma is not None:
            self.gamma = np.ascontiguousarray(self.gamma, dtype=np.float64)
            if self.gamma.shape != (self.h.size, self.k):
                raise ValueError(
                    f"posterior matrix shape {self.gamma.shape} does not match "
                    f"{self.h.size} documents x {self.k} topics"
                )
            row_sums = self.gamma.sum(axis=1)
            if not np.allclose(row_sums, 1.0, rtol=0.0, atol=1e-9):
                raise ValueError("posterior rows must sum to 1 within 1e-9")
            if not np.array_equal(self.h, np.argmax(self.gamma, axis=1)):
                raise ValueError("hard labels must equal the posterior row argmax")

    @property
    def n_docs(self) -> int:
        return self.h.size

    @classmethod
    def from_gamma(cls, gamma: np.ndarray) -> "TopicAssignment":
        gamma = np.asarray(gamma, dtype=np.float64)
        return cls(h=np.argmax(gamma, axis=1), k=gamma.shape[1], gamma=gamma)


@dataclass
class Document:
    doc_id: str
    text: str
    gold_label: int | None = None


class Corpus:
    """Ordered document collection with optional human-assigned labels.

    Gold labels are dense integers; ``label_names`` (when given) maps them to
    display names and fixes the label range.  Tokenization is cached on first
    use since coherence and top-word analyses re-read it many times.
    """

    def __init__(self, docs: list[Document], label_names: list[str] | None = None):
        self.docs = list(docs)
        self.label_names = list(label_names) if label_names is not None else None
        seen: set[str] = set()
        for d in self.docs:
            if d.doc_id in seen:
                raise ValueError(f"duplicate doc_id {d.doc_id!r}")
            seen.add(d.doc_id)
        labeled = [d for d in self.docs if d.gold_label is not None]
        if labeled and len(labeled) != len(self.docs):
            raise ValueError("partial gold labels: either all documents carry one or none do")
        if labeled:
            lo = min(d.gold_label for d in labeled)
            hi = max(d.gold_label for d in labeled)
            if lo < 0:
                raise ValueError(f"gold labels must be non-negative, got {lo}")
            if self.label_names is not None and hi >= len(self.label_names):
                raise ValueError(
                    f"gold label {hi} out of range for {len(self.label_names)} label names"
                )
        self._tokens: list[list[str]] | None = None

    @property
    def n_docs(self) -> int:
        return len(self.docs)

    @property
    def has_gold_labels(self) -> bool:
        return bool(self.docs) and self.docs[0].gold_label is not None

    @property
    def n_labels(self) -> int:
        """Number of distinct gold classes (label-name count when names given)."""
        if self.label_names is not None:
            return len(self.label_names)
        if not self.has_gold_labels:
            return 0
        return int(max(d.gold_label for d in self.docs)) + 1

    def gold(self) -> np.ndarray:
        if not self.has_gold_labels:
            raise ValueError("corpus has no gold labels")
        return np.array([d.gold_label for d in self.docs], dtype=np.int64)

    def tokens(self) -> list[list[str]]:
        if self._tokens is None:
            self._tokens = [tokenize(d.text) for d in self.docs]
        return self._tokens


def write_embeddings(m: EmbeddingMatrix, path) -> None:
    """Write matrix ``m`` to ``path`` in the binary layout described above."""
    if not np.isfinite(m.data).all():
        raise ValueError("refusing to write non-finite embedding entries")
    payload = m.data.astype("<f4").tobytes(order="C")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, m.n_docs, m.dim, int(m.stage)))
        f.write(payload)


def read_embeddings(path) -> EmbeddingMatrix:
    """Read a binary embedding file, validating header and payload."""
    with open(path, "rb") as f:
        header = f.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise ValueError(f"{path}: truncated header ({len(header)} bytes)")
        magic, version, n_docs, dim, stage_code = _HEADER.unpack(header)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported format version {version}")
        payload = f.read()
    expected = n_docs * dim * 4
    if len(payload) < expected:
        raise ValueError(
            f"{path}: truncated payload ({len(payload)} bytes, expected {expected})"
        )
    if len(payload) > expected:
        raise ValueError(f"{path}: {len(payload) - expected} trailing bytes after payload")
    data = np.frombuffer(payload, dtype="<f4").reshape(n_docs, dim)
    if not np.isfinite(data).all():
        raise ValueError(f"{path}: payload contains non-finite entries")
    try:
        stage = Stage(stage_code)
    except ValueError:
        raise ValueError(f"{path}: unknown stage code {stage_code}") from None
    return EmbeddingMatrix(data=data, stage=stage)


def read_corpus(path, label_names: list[str] | None = None) -> Corpus:
    """Read a JSON-Lines corpus: one object per line with ``doc_id``, ``text``
    and optional ``gold_label``.  Label names, when known, come from the
    caller; the file format does not carry them."""
    docs: list[Document] = []
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
            gold = obj.get("gold_label")
            if gold is not None:
                if isinstance(gold, bool) or not isinstance(gold, int):
                    raise ValueError(f"{path}: line {lineno}: gold_label must be an integer")
            docs.append(Document(str(obj["doc_id"]), str(obj["text"]), gold))
    try:
        return Corpus(docs, label_names=label_names)
    except ValueError as e:
        raise ValueError(f"{path}: {e}") from None


def write_corpus(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for d in corpus.docs:
            obj: dict = {"doc_id": d.doc_id, "text": d.text}
            if d.gold_label is not None:
                obj["gold_label"] = d.gold_label
            f.write(json.dumps(obj, ensure_ascii=False) + "\n")


def write_assignment(a: TopicAssignment, path) -> None:
    """Write an assignment as CSV: ``doc_index,topic`` plus posterior columns
    ``p0..p{K-1}`` when posteriors are attached.  Posteriors are written with
    round-trip precision."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        if a.gamma is None:
            f.write("doc_index,topic\n")
            for i, t in enumerate(a.h):
                f.write(f"{i},{t}\n")
        else:
            cols = ",".join(f"p{j}" for j in range(a.k))
            f.write(f"doc_index,topic,{cols}\n")
            for i, t in enumerate(a.h):
                probs = ",".join(repr(float(g)) for g in a.gamma[i])
                f.write(f"{i},{t},{probs}\n")


def read_assignment(path) -> TopicAssignment:
    """Inverse of :func:`write_assignment`.

    Without posterior columns the topic count is inferred as ``max(topic)+1``;
    with them it equals the column count and out-of-range topics are rejected.
    """
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().rstrip("\n")
        fields = header.split(",")
        if fields[:2] != ["doc_index", "topic"]:
            raise ValueError(f"{path}: unexpected header {header!r}")
        gamma_cols = fields[2:]
        if gamma_cols and gamma_cols != [f"p{j}" for j in range(len(gamma_cols))]:
            raise ValueError(f"{path}: unexpected posterior columns {gamma_cols}")
        k_from_gamma = len(gamma_cols) or None
        hs: list[int] = []
        rows: list[list[float]] = []
        for lineno, line in enumerate(f, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(fields):
                raise ValueError(f"{path}: line {lineno} has {len(parts)} fields, expected {len(fields)}")
            idx, topic = int(parts[0]), int(parts[1])
            if idx != len(hs):
                raise ValueError(f"{path}: line {lineno}: doc_index {idx} out of order")
            if topic < 0 or (k_from_gamma is not None and topic >= k_from_gamma):
                raise ValueError(
                    f"{path}: line {lineno}: topic {topic} outside [0, {k_from_gamma})"
                )
            hs.append(topic)
            if k_from_gamma is not None:
                rows.append([float(p) for p in parts[2:]])
    if not hs:
        raise ValueError(f"{path}: no assignment rows")
    h = np.array(hs, dtype=np.int64)
    if k_from_gamma is None:
        return TopicAssignment(h=h, k=int(h.max()) + 1)
    return TopicAssignment(h=h, k=k_from_gamma, gamma=np.array(rows, dtype=np.float64))
