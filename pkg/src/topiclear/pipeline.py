"""End-to-end topic extraction.

Seed features come from PCA (reduce to ``d`` dims, L2-normalize, reduce again
to ``k-1`` dims) and an initial mixture clustering.  The loop then alternates
fitting a discriminant projection against the current labels with reclustering
in the projected space, until the assignment vector stops changing or the
iteration cap is reached.

Every mixture fit is cold-started with a seed derived deterministically from
the run seed and the iteration index, and each assignment is relabeled into a
canonical order (descending cluster size, ties by lowest member index) so that
the exact-equality convergence test is insensitive to component numbering.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embeddings_io import EmbeddingMatrix, Stage, TopicAssignment
from .gmm import GmmModel, GmmOptions, gmm_fit, gmm_posteriors
from .reduction import LdaModel, PcaModel, l2_normalize, lda_fit, lda_transform, pca_fit, pca_transform


@dataclass
class PipelineConfig:
    """Run parameters; ``d`` is the intermediate feature dimension."""

    k: int
    d: int = 64
    max_adr_iter: int = 10
    seed: int = 0
    gmm_opts: GmmOptions = field(default_factory=GmmOptions)
    lda_reg: float | None = None

    def __post_init__(self):
        if self.k < 2:
            raise ValueError(f"topic count must be >= 2, got {self.k}")
        if self.d < self.k:
            raise ValueError(f"feature dimension {self.d} must be >= topic count {self.k}")
        if self.max_adr_iter < 1:
            raise ValueError("max_adr_iter must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass
class IterationStats:
    """Diagnostics for one refinement iteration."""

    changed_count: int
    gmm_log_likelihood: float
    gmm_ll_trace: np.ndarray


@dataclass
class PipelineResult:
    assignment: TopicAssignment
    iterations: int
    converged: bool
    history: list[IterationStats]
    pca: PcaModel
    lda: LdaModel
    gmm: GmmModel
    seed_gmm_ll_trace: np.ndarray


def derive_seed(seed: int, iteration: int) -> int:
    """Stable per-iteration seed for the mixture fits."""
    return int(np.random.SeedSequence([seed, iteration]).generate_state(1)[0])


def _canonical_order(h: np.ndarray, k: int) -> np.ndarray:
    """Cluster relabeling order: descending size, ties by lowest member index.

    Returns ``order`` with ``order[new_label] = old_label``.  The order
    depends only on the partition itself, never on component numbering, so
    identical partitions from independently seeded fits relabel identically.
    """
    sizes = np.bincount(h, minlength=k)
    first_member = np.full(k, h.size, dtype=np.int64)
    np.minimum.at(first_member, h, np.arange(h.size, dtype=np.int64))
    return np.lexsort((first_member, -sizes))


def canonicalize(a: TopicAssignment, model: GmmModel) -> tuple[TopicAssignment, GmmModel]:
    """Relabel an assignment (and permute the model accordingly)."""
    order = _canonical_order(a.h, a.k)
    gamma = a.gamma[:, order]
    relabeled = TopicAssignment(h=np.argmax(gamma, axis=1), k=a.k, gamma=gamma)
    permuted = GmmModel(
        k=model.k,
        weights=model.weights[order],
        means=model.means[order],
        covariances=model.covariances[order],
        log_likelihood_trace=model.log_likelihood_trace,
        n_iter=model.n_iter,
        converged=model.converged,
        seed=model.seed,
    )
    return relabeled, permuted


def extract_topics(x_raw: EmbeddingMatrix, cfg: PipelineConfig) -> PipelineResult:
    """Cluster raw document embeddings into ``cfg.k`` topics.

    Raises if the embeddings are not stage-raw, if there are fewer rows than
    topics, or if the clustering ever collapses below two populated topics
    (the discriminant step is undefined there).
    """
    if x_raw.stage != Stage.RAW:
        raise ValueError(f"expected raw embeddings, got stage {x_raw.stage.name}")
    if x_raw.n_docs < cfg.k:
        raise ValueError(f"{x_raw.n_docs} documents cannot form {cfg.k} topics")
    if x_raw.dim < cfg.d:
        raise ValueError(f"embedding dim {x_raw.dim} is below feature dimension {cfg.d}")

    pca = pca_fit(x_raw, cfg.d)
    y_d = l2_normalize(pca_transform(pca, x_raw))

    seed_pca = pca_fit(y_d, cfg.k - 1)
    features = pca_transform(seed_pca, y_d)
    gmm = gmm_fit(features, cfg.k, derive_seed(cfg.seed, 0), cfg.gmm_opts)
    assignment, gmm = canonicalize(gmm_posteriors(gmm, features), gmm)
    seed_trace = gmm.log_likelihood_trace

    lda: LdaModel | None = None
    history: list[IterationStats] = []
    converged = False
    for iteration in range(1, cfg.max_adr_iter + 1):
        if np.unique(assignment.h).size < 2:
            raise RuntimeError(
                f"clustering collapsed to a single populated topic before refinement "
                f"iteration {iteration}; cannot continue"
            )
        lda = lda_fit(y_d, assignment, reg=cfg.lda_reg)
        features = lda_transform(lda, y_d)
        gmm = gmm_fit(features, cfg.k, derive_seed(cfg.seed, iteration), cfg.gmm_opts)
        new_assignment, gmm = canonicalize(gmm_posteriors(gmm, features), gmm)
        changed = int(np.count_nonzero(new_assignment.h != assignment.h))
        history.append(
            IterationStats(
                changed_count=changed,
                gmm_log_likelihood=float(gmm.log_likelihood_trace[-1]),
                gmm_ll_trace=gmm.log_likelihood_trace,
            )
        )
        assignment = new_assignment
        if changed == 0:
            converged = True
            break

    return PipelineResult(
        assignment=assignment,
        iterations=len(history),
        converged=converged,
        history=history,
        pca=pca,
        lda=lda,
        gmm=gmm,
        seed_gmm_ll_trace=seed_trace,
    )
