"""Evaluation mathematics for extracted topics.

Covers partition-agreement scores (adjusted Rand index and adjusted mutual
information with the exact hypergeometric expectation), sliding-window
co-occurrence statistics and the three coherence measures built on them,
uniform label noise with Spearman rank correlation for robustness studies,
and the descriptive tools (top words, contrastive word scores, greedy topic
matching, composition matrices) used to inspect topics qualitatively.

Everything here is a pure function of its inputs; randomized operations take
an explicit seed.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.special import gammaln
from scipy.stats import rankdata

from .embeddings_io import Corpus, TopicAssignment

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Partitions and agreement scores
# ---------------------------------------------------------------------------


@dataclass
class Partition:
    """Cluster labels for N items, values in ``[0, k)``."""

    labels: np.ndarray
    k: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1 or self.labels.size < 1:
            raise ValueError("partition needs a non-empty 1-D label vector")
        if self.labels.min() < 0 or self.labels.max() >= self.k:
            raise ValueError(f"labels must lie in [0, {self.k})")

    @property
    def n(self) -> int:
        return self.labels.size

    @classmethod
    def from_labels(cls, labels) -> "Partition":
        """Build a partition from arbitrary integer labels, compacting them."""
        labels = np.asarray(labels)
        _, dense = np.unique(labels, return_inverse=True)
        return cls(labels=dense.astype(np.int64), k=int(dense.max()) + 1)


def _as_partition(p) -> Partition:
    if isinstance(p, Partition):
        return p
    if isinstance(p, TopicAssignment):
        return Partition(labels=p.h, k=p.k)
    return Partition.from_labels(p)


def _contingency(u: Partition, v: Partition) -> np.ndarray:
    if u.n != v.n:
        raise ValueError(f"partition lengths differ: {u.n} vs {v.n}")
    flat = u.labels * v.k + v.labels
    return np.bincount(flat, minlength=u.k * v.k).reshape(u.k, v.k)


def _is_same_partition(cont: np.ndarray) -> bool:
    """True when the two partitions are identical up to relabeling."""
    return bool(
        np.all((cont > 0).sum(axis=1) <= 1) and np.all((cont > 0).sum(axis=0) <= 1)
    )


def _comb2_sum(counts: np.ndarray) -> int:
    counts = counts.astype(object)
    return int(sum(c * (c - 1) // 2 for c in counts.ravel() if c > 1))


def rand_index_components(u, v) -> dict:
    """Pair-count decomposition of two partitions.

    Returns ``a`` (pairs co-clustered in both), ``b`` (pairs separated in
    both) and ``n_pair = N(N-1)/2``, computed from the contingency table
    rather than by pair enumeration.
    """
    u, v = _as_partition(u), _as_partition(v)
    if u.n < 2:
        raise ValueError("rand index is undefined for fewer than 2 items")
    cont = _contingency(u, v)
    n_pair = u.n * (u.n - 1) // 2
    a = _comb2_sum(cont)
    same_u = _comb2_sum(cont.sum(axis=1))
    same_v = _comb2_sum(cont.sum(axis=0))
    b = n_pair - same_u - same_v + a
    return {"a": a, "b": b, "n_pair": n_pair}


def ari(u, v) -> float:
    """Adjusted Rand index: 1 for identical partitions, ~0 for chance.

    Exact integer arithmetic throughout; the single final division is the
    only floating-point step.  When the chance-adjustment denominator is zero
    (both partitions trivial) the value is 1 for equal partitions, else 0.
    """
    u, v = _as_partition(u), _as_partition(v)
    if u.n < 2:
        raise ValueError("adjusted Rand index needs N >= 2")
    cont = _contingency(u, v)
    n_pair = u.n * (u.n - 1) // 2
    sum_cells = _comb2_sum(cont)
    sum_u = _comb2_sum(cont.sum(axis=1))
    sum_v = _comb2_sum(cont.sum(axis=0))
    num = 2 * (n_pair * sum_cells - sum_u * sum_v)
    den = n_pair * (sum_u + sum_v) - 2 * sum_u * sum_v
    if den == 0:
        return 1.0 if _is_same_partition(cont) else 0.0
    return num / den


def expected_mutual_information(row_counts: np.ndarray, col_counts: np.ndarray, n: int) -> float:
    """Expectation of the mutual information under random permutations.

    Both marginals are held fixed and each contingency cell follows a
    hypergeometric law; the sum is evaluated exactly with log-factorial
    tables (natural log), which stays accurate up to corpus-scale N.
    """
    lgfact = gammaln(np.arange(n + 1) + 1.0)
    log_n = math.log(n)
    emi = 0.0
    for a_i in row_counts:
        a_i = int(a_i)
        if a_i == 0:
            continue
        for b_j in col_counts:
            b_j = int(b_j)
            if b_j == 0:
                continue
            lo = max(1, a_i + b_j - n)
            hi = min(a_i, b_j)
            nij = np.arange(lo, hi + 1)
            log_term = log_n + np.log(nij) - math.log(a_i) - math.log(b_j)
            log_weight = (
                lgfact[a_i]
                + lgfact[b_j]
                + lgfact[n - a_i]
                + lgfact[n - b_j]
                - lgfact[n]
                - lgfact[nij]
                - lgfact[a_i - nij]
                - lgfact[b_j - nij]
                - lgfact[n - a_i - b_j + nij]
            )
            emi += float(np.sum(nij / n * log_term * np.exp(log_weight)))
    return emi


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def mutual_information(cont: np.ndarray) -> float:
    """Mutual information (natural log) of a contingency table."""
    n = int(cont.sum())
    row = cont.sum(axis=1)
    col = cont.sum(axis=0)
    mi = 0.0
    for i, j in zip(*np.nonzero(cont)):
        nij = cont[i, j]
        mi += nij / n * (math.log(n) + math.log(nij) - math.log(row[i]) - math.log(col[j]))
    return mi


def ami(u, v) -> float:
    """Adjusted mutual information with arithmetic-mean entropy normalization.

    ``(MI - E[MI]) / (mean(H(U), H(V)) - E[MI])`` with the expectation from
    :func:`expected_mutual_information`.  Identical partitions score exactly
    1; the zero-denominator convention matches :func:`ari`.
    """
    u, v = _as_partition(u), _as_partition(v)
    if u.n < 2:
        raise ValueError("adjusted mutual information needs N >= 2")
    cont = _contingency(u, v)
    if _is_same_partition(cont):
        return 1.0
    n = u.n
    mi = mutual_information(cont)
    emi = expected_mutual_information(cont.sum(axis=1), cont.sum(axis=0), n)
    mean_h = 0.5 * (_entropy(cont.sum(axis=1), n) + _entropy(cont.sum(axis=0), n))
    denom = mean_h - emi
    if abs(denom) < 1e-12:
        return 0.0
    return (mi - emi) / denom


# ---------------------------------------------------------------------------
# Sliding-window co-occurrence and coherence
# ---------------------------------------------------------------------------


@dataclass
class CooccurrenceStats:
    """Window-frequency estimates of word and word-pair probabilities.

    ``p_pair`` keys are index pairs with ``i <= j``; a word paired with
    itself has probability ``p_word``.  Vocabulary indices follow
    lexicographic word order.
    """

    window_size: int
    vocab: dict[str, int]
    p_word: np.ndarray
    p_pair: dict[tuple[int, int], float]
    n_windows: int

    def prob_word(self, w: str) -> float:
        if w not in self.vocab:
            raise ValueError(f"unknown word {w!r}")
        return float(self.p_word[self.vocab[w]])

    def prob_pair(self, w1: str, w2: str) -> float:
        i, j = self.vocab.get(w1), self.vocab.get(w2)
        if i is None or j is None:
            missing = w1 if i is None else w2
            raise ValueError(f"unknown word {missing!r}")
        if i == j:
            return float(self.p_word[i])
        if i > j:
            i, j = j, i
        return self.p_pair.get((i, j), 0.0)


def build_cooccurrence(
    corpus: Corpus, window_size: int, restrict_vocab: set[str] | None = None
) -> CooccurrenceStats:
    """Count word and pair occurrences over sliding windows of the corpus.

    Windows of ``window_size`` tokens advance one token at a time through
    each document; a document shorter than the window contributes a single
    window (documents with no tokens contribute none).  A probability is the
    fraction of windows in which a word, or both words of a pair, appear.

    ``restrict_vocab`` limits counting to the given words without changing
    window boundaries, which keeps long-document corpora tractable when only
    a known word set (e.g. topic top words) matters.
    """
    if window_size < 1:
        raise ValueError(f"window size must be >= 1, got {window_size}")
    docs_tokens = corpus.tokens()
    words = {t for toks in docs_tokens for t in toks}
    if restrict_vocab is not None:
        words &= set(restrict_vocab)
    if not words:
        raise ValueError("corpus has no tokens (after vocabulary restriction)")
    vocab = {w: i for i, w in enumerate(sorted(words))}

    word_counts = np.zeros(len(vocab), dtype=np.int64)
    pair_counts: Counter = Counter()
    n_windows = 0
    for toks in docs_tokens:
        if not toks:
            continue
        ids = [vocab.get(t, -1) for t in toks]
        t_len = len(ids)
        n_win = max(t_len - window_size + 1, 1)
        n_windows += n_win
        for start in range(n_win):
            present = sorted({i for i in ids[start : start + window_size] if i >= 0})
            for i in present:
                word_counts[i] += 1
            pair_counts.update(combinations(present, 2))

    keep = word_counts > 0
    if restrict_vocab is not None and not keep.all():
        # restricted words absent from the corpus are dropped from the vocab
        remap = {old: new for new, old in enumerate(np.flatnonzero(keep))}
        vocab = {w: remap[i] for w, i in vocab.items() if keep[i]}
        word_counts = word_counts[keep]
        pair_counts = Counter({(remap[i], remap[j]): c for (i, j), c in pair_counts.items()})
    return CooccurrenceStats(
        window_size=window_size,
        vocab=vocab,
        p_word=word_counts / n_windows,
        p_pair={ij: c / n_windows for ij, c in pair_counts.items()},
        n_windows=n_windows,
    )


def pmi(stats: CooccurrenceStats, w1: str, w2: str, eps: float = 1e-12) -> float:
    """Pointwise mutual information; ``eps`` floors a never-seen joint."""
    p1 = stats.prob_word(w1)
    p2 = stats.prob_word(w2)
    p_joint = max(stats.prob_pair(w1, w2), eps)
    return math.log(p_joint / (p1 * p2))


def npmi(stats: CooccurrenceStats, w1: str, w2: str, eps: float = 1e-12) -> float:
    """Normalized PMI in [-1, 1]; 1 when the pair always co-occurs."""
    p_joint = max(stats.prob_pair(w1, w2), eps)
    if p_joint >= 1.0:
        # both words in every window: the perfectly-associated limit
        return 1.0
    value = -pmi(stats, w1, w2, eps=eps) / math.log(p_joint)
    return float(np.clip(value, -1.0, 1.0)) + 0.0


@dataclass
class TopicWords:
    """Per-topic ranked ``(word, score)`` lists, scores descending."""

    topics: list[list[tuple[str, float]]]
    n_top: int | None = None

    @property
    def n_topics(self) -> int:
        return len(self.topics)

    def words(self, t: int) -> list[str]:
        return [w for w, _ in self.topics[t]]


def _coherence_topic_words(
    topic_words: TopicWords, stats: CooccurrenceStats, n_top: int
) -> list[list[str]]:
    out = []
    for t, ranked in enumerate(topic_words.topics):
        words = [w for w, _ in ranked[:n_top] if w in stats.vocab]
        if len(words) < 2:
            raise ValueError(
                f"topic {t} has fewer than 2 top words in the co-occurrence vocabulary"
            )
        out.append(words)
    return out


def coherence_uci(topic_words: TopicWords, stats: CooccurrenceStats, n_top: int = 10) -> float:
    """Mean pairwise PMI over each topic's top words, averaged over topics."""
    per_topic = []
    for words in _coherence_topic_words(topic_words, stats, n_top):
        scores = [pmi(stats, w1, w2) for w1, w2 in combinations(words, 2)]
        per_topic.append(float(np.mean(scores)))
    return float(np.mean(per_topic))


def coherence_npmi(topic_words: TopicWords, stats: CooccurrenceStats, n_top: int = 10) -> float:
    """Mean pairwise NPMI over each topic's top words, averaged over topics."""
    per_topic = []
    for words in _coherence_topic_words(topic_words, stats, n_top):
        scores = [npmi(stats, w1, w2) for w1, w2 in combinations(words, 2)]
        per_topic.append(float(np.mean(scores)))
    return float(np.mean(per_topic))


def coherence_cv(topic_words: TopicWords, stats: CooccurrenceStats, n_top: int = 10) -> float:
    """Mean cosine similarity of NPMI context vectors over top-word pairs.

    Each top word's context vector lists its NPMI against every word of the
    same topic's top-word set.  A zero context vector contributes similarity
    0 to its pairs (logged, since it signals a word with no usable
    co-occurrence signal).
    """
    per_topic = []
    for t, words in enumerate(_coherence_topic_words(topic_words, stats, n_top)):
        vectors = np.array([[npmi(stats, wi, wj) for wj in words] for wi in words])
        norms = np.linalg.norm(vectors, axis=1)
        if (norms == 0.0).any():
            log.warning("topic %d has context vectors with no co-occurrence signal", t)
        sims = []
        for i, j in combinations(range(len(words)), 2):
            if norms[i] == 0.0 or norms[j] == 0.0:
                sims.append(0.0)
            else:
                sims.append(float(vectors[i] @ vectors[j] / (norms[i] * norms[j])))
        per_topic.append(float(np.mean(sims)))
    return float(np.mean(per_topic))


# ---------------------------------------------------------------------------
# Label noise and rank correlation
# ---------------------------------------------------------------------------


def apply_label_noise(u: Partition, p_n: float, k: int, seed: int) -> Partition:
    """Replace each label, independently with probability ``p_n``, by a
    uniform draw over all ``k`` labels (the current one included).

    The expected fraction of unchanged labels is ``1 - (k-1)/k * p_n``.
    """
    if not 0.0 <= p_n <= 1.0:
        raise ValueError(f"noise level must lie in [0, 1], got {p_n}")
    rng = np.random.default_rng(seed)
    labels = u.labels.copy()
    replace = rng.random(u.n) < p_n
    draws = rng.integers(0, k, size=u.n)
    labels[replace] = draws[replace]
    return Partition(labels=labels, k=max(k, u.k))


def spearman_rho(xs, ys) -> float:
    """Spearman rank correlation: Pearson correlation of average-tie ranks."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError("inputs must be 1-D vectors of equal length")
    if xs.size < 2:
        raise ValueError("need at least 2 observations")
    if np.all(xs == xs[0]) or np.all(ys == ys[0]):
        raise ValueError("rank correlation is undefined for a constant vector")
    rx = rankdata(xs)
    ry = rankdata(ys)
    return float(np.corrcoef(rx, ry)[0, 1])


# ---------------------------------------------------------------------------
# Topic descriptions
# ---------------------------------------------------------------------------


def top_words(corpus: Corpus, assignment, n: int | None = 20) -> TopicWords:
    """Rank tokens by raw frequency within each topic's documents.

    Ties break lexicographically.  ``n=None`` keeps every token, which turns
    each list into the topic's full term-frequency vector.  Empty topics
    yield empty lists (logged).
    """
    if n is not None and n < 1:
        raise ValueError("n must be >= 1")
    part = _as_partition(assignment)
    if part.n != corpus.n_docs:
        raise ValueError(f"assignment covers {part.n} docs, corpus has {corpus.n_docs}")
    docs_tokens = corpus.tokens()
    topics: list[list[tuple[str, float]]] = []
    for t in range(part.k):
        counts: Counter = Counter()
        for i in np.flatnonzero(part.labels == t):
            counts.update(docs_tokens[i])
        if not counts:
            log.warning("topic %d has no documents or no tokens", t)
            topics.append([])
            continue
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        if n is not None:
            ranked = ranked[:n]
        topics.append([(w, float(c)) for w, c in ranked])
    return TopicWords(topics=topics, n_top=n)


def delta_tfidf(
    corpus: Corpus, assignment, topic: int, n: int = 20, smoothing: float = 0.5
) -> list[tuple[str, float]]:
    """Contrast one topic's words against the rest of the corpus.

    ``score(w) = tf_topic(w) * log(N_rest * (df_topic(w)+s) /
    (N_topic * (df_rest(w)+s)))`` so words concentrated in the topic score
    high and words spread evenly score near zero.
    """
    part = _as_partition(assignment)
    if part.n != corpus.n_docs:
        raise ValueError(f"assignment covers {part.n} docs, corpus has {corpus.n_docs}")
    member = part.labels == topic
    n_topic = int(member.sum())
    n_rest = part.n - n_topic
    if n_topic == 0:
        raise ValueError(f"topic {topic} has no documents")
    if n_rest == 0:
        raise ValueError("cannot contrast a topic against an empty remainder")
    docs_tokens = corpus.tokens()
    tf: Counter = Counter()
    df_topic: Counter = Counter()
    df_rest: Counter = Counter()
    for i, toks in enumerate(docs_tokens):
        if member[i]:
            tf.update(toks)
            df_topic.update(set(toks))
        else:
            df_rest.update(set(toks))
    s = smoothing
    scored = [
        (w, tf[w] * math.log(n_rest * (df_topic[w] + s) / (n_topic * (df_rest[w] + s))))
        for w in tf
    ]
    scored.sort(key=lambda kv: (-kv[1], kv[0]))
    return scored[:n]


def greedy_match(
    words_a: TopicWords, words_b: TopicWords, vocab: list[str] | None = None
) -> list[tuple[int, int, float]]:
    """Greedily pair topics across two sides by cosine similarity.

    Topics are represented as term-frequency vectors from their ranked
    word/score lists over a shared vocabulary (the union of both sides by
    default; feed full-frequency lists from :func:`top_words` with ``n=None``
    to match on complete assigned-document term counts).  The globally most
    similar unmatched pair is taken repeatedly until one side is exhausted;
    pairs are returned in pick order.
    """
    if not words_a.topics or not words_b.topics:
        raise ValueError("both sides need at least one topic")
    if vocab is None:
        vocab = sorted(
            {w for tw in (words_a, words_b) for ranked in tw.topics for w, _ in ranked}
        )
    index = {w: i for i, w in enumerate(vocab)}

    def vectors(tw: TopicWords) -> np.ndarray:
        out = np.zeros((tw.n_topics, len(index)))
        for t, ranked in enumerate(tw.topics):
            for w, score in ranked:
                if w in index:
                    out[t, index[w]] = score
        return out

    va, vb = vectors(words_a), vectors(words_b)
    norm_a = np.linalg.norm(va, axis=1)
    norm_b = np.linalg.norm(vb, axis=1)
    denom = np.outer(norm_a, norm_b)
    with np.errstate(invalid="ignore", divide="ignore"):
        sims = np.where(denom > 0, va @ vb.T / np.where(denom > 0, denom, 1.0), 0.0)

    matches: list[tuple[int, int, float]] = []
    remaining = sims.copy()
    for _ in range(min(words_a.n_topics, words_b.n_topics)):
        i, j = np.unravel_index(int(np.argmax(remaining)), remaining.shape)
        matches.append((int(i), int(j), float(sims[i, j])))
        remaining[i, :] = -np.inf
        remaining[:, j] = -np.inf
    return matches


def composition_matrix(assignment, gold) -> np.ndarray:
    """Per-topic gold-label composition: entry (t, l) is the fraction of the
    documents in extracted topic t that carry gold label l.  Populated rows
    sum to 1; empty topics get an all-zero row (logged)."""
    a, g = _as_partition(assignment), _as_partition(gold)
    cont = _contingency(a, g).astype(np.float64)
    sizes = cont.sum(axis=1)
    empty = np.flatnonzero(sizes == 0)
    if empty.size:
        log.warning("empty extracted topic(s) %s in composition matrix", empty.tolist())
    out = np.zeros_like(cont)
    populated = sizes > 0
    out[populated] = cont[populated] / sizes[populated, None]
    return out


# ---------------------------------------------------------------------------
# Label-noise study (the data behind robustness curves)
# ---------------------------------------------------------------------------


@dataclass
class NoiseStudyRow:
    p_n: float
    replicate: int
    ari: float
    ami: float
    c_uci: float
    c_npmi: float
    c_v: float
    agreement: float


def _noise_seed(seed: int, level_index: int, replicate: int) -> int:
    return int(np.random.SeedSequence([seed, level_index, replicate]).generate_state(1)[0])


def run_noise_study(
    corpus: Corpus,
    gold: Partition,
    p_grid: list[float],
    replicates: int,
    seed: int,
    n_top: int = 10,
    uci_window: int = 10,
    cv_window: int = 110,
) -> list[NoiseStudyRow]:
    """Perturb gold labels at each noise level and re-score all five measures.

    Clustering scores compare the noisy labels to the clean ones; coherence
    is recomputed from fresh per-topic top words under the noisy labels, so
    the study reproduces how each measure reacts to degrading topic quality.
    """
    if gold.n != corpus.n_docs:
        raise ValueError(f"gold labels cover {gold.n} docs, corpus has {corpus.n_docs}")
    if replicates < 1:
        raise ValueError("need at least 1 replicate")
    stats_small = build_cooccurrence(corpus, uci_window)
    stats_large = (
        stats_small if cv_window == uci_window else build_cooccurrence(corpus, cv_window)
    )

    # flat token-id table for fast per-replicate top-word counting
    vocab = stats_small.vocab
    doc_ids = [np.array([vocab[t] for t in toks], dtype=np.int64) for toks in corpus.tokens()]
    flat_ids = np.concatenate([ids for ids in doc_ids if ids.size]) if doc_ids else np.array([], dtype=np.int64)
    doc_of_token = np.concatenate(
        [np.full(ids.size, i, dtype=np.int64) for i, ids in enumerate(doc_ids) if ids.size]
    )
    n_vocab = len(vocab)
    id_to_word = sorted(vocab, key=vocab.get)

    rows: list[NoiseStudyRow] = []
    for level_index, p_n in enumerate(p_grid):
        for replicate in range(replicates):
            noisy = apply_label_noise(gold, p_n, gold.k, _noise_seed(seed, level_index, replicate))
            token_labels = noisy.labels[doc_of_token]
            topics = []
            for t in range(gold.k):
                counts = np.bincount(flat_ids[token_labels == t], minlength=n_vocab)
                order = np.lexsort((np.arange(n_vocab), -counts))
                ranked = [
                    (id_to_word[i], float(counts[i])) for i in order[:n_top] if counts[i] > 0
                ]
                if len(ranked) < 2:
                    log.warning(
                        "noise level %.2f replicate %d: topic %d too small for coherence",
                        p_n,
                        replicate,
                        t,
                    )
                    continue
                topics.append(ranked)
            words = TopicWords(topics=topics, n_top=n_top)
            rows.append(
                NoiseStudyRow(
                    p_n=float(p_n),
                    replicate=replicate,
                    ari=ari(noisy, gold),
                    ami=ami(noisy, gold),
                    c_uci=coherence_uci(words, stats_small, n_top),
                    c_npmi=coherence_npmi(words, stats_small, n_top),
                    c_v=coherence_cv(words, stats_large, n_top),
                    agreement=float(np.mean(noisy.labels == gold.labels)),
                )
            )
    return rows
