"""Full-covariance Gaussian mixture fitted by EM.

The fit is deliberately self-contained rather than delegated to a library:
the refinement loop around it needs the per-EM-step mean log-likelihood
trace, a deterministic seed stream, and a fixed policy for components that
lose all their responsibility mass mid-fit.

Defaults (full covariances, ``max_iter=100``, ``tol=1e-3`` on the change in
mean log-likelihood, ``reg_covar=1e-6``, one k-means-initialized run) mirror
the conventional EM setup for this task.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import logsumexp

from .embeddings_io import EmbeddingMatrix, TopicAssignment

log = logging.getLogger(__name__)

_EMPTY_RESP_THRESHOLD = 1e-10


@dataclass
class GmmOptions:
    max_iter: int = 100
    tol: float = 1e-3
    reg_covar: float = 1e-6
    n_init: int = 1


@dataclass
class GmmModel:
    """Fitted mixture: weights, means, covariances plus fit diagnostics.

    ``log_likelihood_trace`` holds the mean per-sample log-likelihood before
    each M-step; EM guarantees it is non-decreasing (up to float noise)
    unless an empty component had to be re-seeded.
    """

    k: int
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    log_likelihood_trace: np.ndarray
    n_iter: int
    converged: bool
    seed: int

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def _kmeans_plus_plus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Distance-weighted greedy center seeding.

    Each new center is picked from ``2 + floor(log k)`` candidates drawn with
    probability proportional to squared distance, keeping the candidate that
    minimizes the resulting potential (the usual greedy k-means++ variant).
    """
    n = x.shape[0]
    n_trials = 2 + int(np.log(k))
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest_sq = ((x - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = closest_sq.sum()
        if total <= 0.0:
            candidates = rng.integers(n, size=n_trials)
        else:
            candidates = rng.choice(n, size=n_trials, p=closest_sq / total)
        best_closest = None
        for idx in candidates:
            trial = np.minimum(closest_sq, ((x - x[idx]) ** 2).sum(axis=1))
            if best_closest is None or trial.sum() < best_closest.sum():
                centers[j] = x[idx]
                best_closest = trial
        closest_sq = best_closest
    return centers


def _sq_distances(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d2 = (
        (x * x).sum(axis=1)[:, None]
        + (centers * centers).sum(axis=1)[None, :]
        - 2.0 * x @ centers.T
    )
    return np.maximum(d2, 0.0)


def _kmeans_labels(x: np.ndarray, k: int, rng: np.random.Generator, n_lloyd: int = 10) -> np.ndarray:
    """k-means++ seeding followed by a short fixed budget of Lloyd steps."""
    centers = _kmeans_plus_plus(x, k, rng)
    labels = np.argmin(_sq_distances(x, centers), axis=1)
    for _ in range(n_lloyd):
        for j in range(k):
            members = x[labels == j]
            if members.shape[0]:
                centers[j] = members.mean(axis=0)
        new_labels = np.argmin(_sq_distances(x, centers), axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return labels


def _log_gaussian_prob(x: np.ndarray, means: np.ndarray, covariances: np.ndarray) -> np.ndarray:
    """Per-component Gaussian log-densities, (n, k), via Cholesky factors."""
    n, d = x.shape
    k = means.shape[0]
    out = np.empty((n, k))
    const = d * np.log(2.0 * np.pi)
    for j in range(k):
        try:
            chol = np.linalg.cholesky(covariances[j])
        except np.linalg.LinAlgError:
            raise RuntimeError(
                f"covariance of component {j} is not positive definite"
            ) from None
        dev = (x - means[j]).T
        z = scipy.linalg.solve_triangular(chol, dev, lower=True)
        log_det = 2.0 * np.log(np.diag(chol)).sum()
        out[:, j] = -0.5 * (const + log_det + (z * z).sum(axis=0))
    return out


def _estimate_parameters(
    x: np.ndarray, resp: np.ndarray, reg_covar: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Weighted ML estimates from responsibilities, ridge added to covariances.

    Components whose total responsibility vanished are re-seeded at the most
    weakly explained point with the pooled data covariance, keeping the
    component count fixed.
    """
    n, d = x.shape
    k = resp.shape[1]
    nk = resp.sum(axis=0)
    empty = np.flatnonzero(nk < _EMPTY_RESP_THRESHOLD)
    if empty.size:
        log.warning("re-seeding %d empty mixture component(s)", empty.size)
        pooled = np.cov(x, rowvar=False, bias=True).reshape(d, d)
        pooled += reg_covar * np.eye(d)
        order = np.argsort(resp.max(axis=1), kind="stable")
        means = np.empty((k, d))
        covs = np.empty((k, d, d))
        for rank, j in enumerate(empty):
            means[j] = x[order[rank % n]]
            covs[j] = pooled
        nk = np.where(nk < _EMPTY_RESP_THRESHOLD, 1.0, nk)
        filled = np.setdiff1d(np.arange(k), empty)
        for j in filled:
            means[j] = resp[:, j] @ x / nk[j]
            dev = x - means[j]
            covs[j] = (resp[:, j] * dev.T) @ dev / nk[j] + reg_covar * np.eye(d)
        weights = np.full(k, 1.0 / n)
        weights[filled] = nk[filled] / n
        weights /= weights.sum()
        return weights, means, covs
    weights = nk / n
    means = resp.T @ x / nk[:, None]
    covs = np.empty((k, d, d))
    eye = reg_covar * np.eye(d)
    for j in range(k):
        dev = x - means[j]
        covs[j] = (resp[:, j] * dev.T) @ dev / nk[j] + eye
    return weights, means, covs


def _fit_single(
    x: np.ndarray, k: int, rng: np.random.Generator, opts: GmmOptions
) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[float], int, bool]:
    labels = _kmeans_labels(x, k, rng)
    resp = np.zeros((x.shape[0], k))
    resp[np.arange(x.shape[0]), labels] = 1.0
    weights, means, covs = _estimate_parameters(x, resp, opts.reg_covar)

    trace: list[float] = []
    prev_ll = -np.inf
    converged = False
    n_iter = 0
    for n_iter in range(1, opts.max_iter + 1):
        weighted = _log_gaussian_prob(x, means, covs) + np.log(weights)[None, :]
        log_norm = logsumexp(weighted, axis=1)
        ll = float(log_norm.mean())
        if not np.isfinite(ll):
            raise RuntimeError("EM produced a non-finite log-likelihood")
        trace.append(ll)
        resp = np.exp(weighted - log_norm[:, None])
        weights, means, covs = _estimate_parameters(x, resp, opts.reg_covar)
        if abs(ll - prev_ll) < opts.tol:
            converged = True
            break
        prev_ll = ll
    return weights, means, covs, trace, n_iter, converged


def gmm_fit(y: EmbeddingMatrix, k: int, seed: int, opts: GmmOptions | None = None) -> GmmModel:
    """Fit a k-component full-covariance mixture to the rows of ``y``.

    With ``opts.n_init > 1`` the model keeps the restart with the highest
    final mean log-likelihood; restarts draw from independent streams derived
    from ``seed``, so the whole fit is reproducible.
    """
    opts = opts or GmmOptions()
    x = y.data
    if k < 1:
        raise ValueError(f"component count must be >= 1, got {k}")
    if k > y.n_docs:
        raise ValueError(f"cannot fit {k} components to {y.n_docs} rows")
    if opts.n_init < 1:
        raise ValueError("n_init must be >= 1")

    best = None
    for child in np.random.SeedSequence(seed).spawn(opts.n_init):
        result = _fit_single(x, k, np.random.default_rng(child), opts)
        if best is None or result[3][-1] > best[3][-1]:
            best = result
    weights, means, covs, trace, n_iter, converged = best
    return GmmModel(
        k=k,
        weights=weights,
        means=means,
        covariances=covs,
        log_likelihood_trace=np.array(trace),
        n_iter=n_iter,
        converged=converged,
        seed=int(seed),
    )


def gmm_posteriors(model: GmmModel, y: EmbeddingMatrix) -> TopicAssignment:
    """Posterior membership of each row, plus the argmax hard assignment.

    Computed in log space with per-row normalization so narrow components in
    low-dimensional feature spaces cannot underflow.
    """
    if y.dim != model.dim:
        raise ValueError(f"dimension mismatch: matrix has {y.dim}, model expects {model.dim}")
    weighted = _log_gaussian_prob(y.data, model.means, model.covariances)
    weighted += np.log(model.weights)[None, :]
    gamma = np.exp(weighted - logsumexp(weighted, axis=1)[:, None])
    gamma /= gamma.sum(axis=1)[:, None]
    return TopicAssignment(h=np.argmax(gamma, axis=1), k=model.k, gamma=gamma)
