"""Linear feature extraction: principal components, row normalization and the
multiclass Fisher discriminant projection used to sharpen topic separation.

Both fits follow a fixed sign convention (the largest-magnitude entry of each
direction is positive) so repeated runs produce identical matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .embeddings_io import EmbeddingMatrix, Stage, TopicAssignment


def _fix_column_signs(cols: np.ndarray) -> np.ndarray:
    """Flip columns so the largest-magnitude entry of each is positive."""
    idx = np.argmax(np.abs(cols), axis=0)
    signs = np.sign(cols[idx, np.arange(cols.shape[1])])
    signs[signs == 0] = 1.0
    return cols * signs


@dataclass
class PcaModel:
    """Centered principal-component basis.

    ``components`` holds one principal direction per column (orthonormal);
    ``explained_variance`` is the per-direction sample variance of the
    training data, non-increasing.
    """

    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.components.shape[0]

    @property
    def output_dim(self) -> int:
        return self.components.shape[1]


def pca_fit(x: EmbeddingMatrix, d_out: int) -> PcaModel:
    """Fit a PCA basis via SVD of the centered data matrix.

    SVD of the centered matrix is preferred over an explicit covariance
    eigendecomposition for stability at the embedding dimensionalities in use.
    """
    n, d = x.n_docs, x.dim
    if n < 2:
        raise ValueError(f"PCA needs at least 2 rows, got {n}")
    if not 1 <= d_out <= min(n, d):
        raise ValueError(f"d_out={d_out} must lie in [1, min(n_docs, dim)={min(n, d)}]")
    mean = x.data.mean(axis=0)
    centered = x.data - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    components = _fix_column_signs(vt[:d_out].T)
    explained = (s[:d_out] ** 2) / (n - 1)
    return PcaModel(mean=mean, components=components, explained_variance=explained)


_TRANSFORM_STAGE = {Stage.RAW: Stage.PCA_D, Stage.NORMALIZED: Stage.FEATURE_K1}


def pca_transform(model: PcaModel, x: EmbeddingMatrix) -> EmbeddingMatrix:
    """Center rows by the training mean and project onto the fitted basis."""
    if x.dim != model.input_dim:
        raise ValueError(f"dimension mismatch: matrix has {x.dim}, model expects {model.input_dim}")
    projected = (x.data - model.mean) @ model.components
    stage = _TRANSFORM_STAGE.get(x.stage, Stage.PCA_D)
    return EmbeddingMatrix(data=projected, stage=stage)


def l2_normalize(x: EmbeddingMatrix) -> EmbeddingMatrix:
    """Scale each row to unit L2 norm."""
    norms = np.linalg.norm(x.data, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ValueError(f"cannot normalize zero row at index {zero[0]}")
    return EmbeddingMatrix(data=x.data / norms[:, None], stage=Stage.NORMALIZED)


@dataclass
class LdaModel:
    """Fisher discriminant projection onto a (k-1)-dimensional space.

    Columns of ``projection`` are generalized eigenvectors of the
    (regularized) within-class scatter against the between-class scatter,
    ordered by decreasing eigenvalue; they whiten the pooled within-class
    scatter.  ``trace_ratio`` records the separability objective
    tr(W'S_B W)/tr(W'S_W W) at the fitted projection for diagnostics.
    """

    projection: np.ndarray
    k: int
    regularization: float
    eigenvalues: np.ndarray
    trace_ratio: float

    @property
    def input_dim(self) -> int:
        return self.projection.shape[0]

    @property
    def output_dim(self) -> int:
        return self.projection.shape[1]


def scatter_matrices(x: np.ndarray, labels: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Within-class and between-class scatter of ``x`` under ``labels``.

    Classes without members are skipped; the global mean is taken over all
    rows.  Returns ``(s_within, s_between)`` as unnormalized scatter sums.
    """
    d = x.shape[1]
    global_mean = x.mean(axis=0)
    s_w = np.zeros((d, d))
    s_b = np.zeros((d, d))
    for c in range(k):
        members = x[labels == c]
        if members.shape[0] == 0:
            continue
        mu = members.mean(axis=0)
        centered = members - mu
        s_w += centered.T @ centered
        diff = (mu - global_mean)[:, None]
        s_b += members.shape[0] * (diff @ diff.T)
    return s_w, s_b


def lda_fit(y: EmbeddingMatrix, h: TopicAssignment, reg: float | None = None) -> LdaModel:
    """Fit the discriminant projection for ``h.k`` classes.

    The projection solves the symmetric-definite generalized eigenproblem
    ``S_B v = lambda (S_W + reg I) v`` and keeps the top ``k-1`` eigenvectors.
    When fewer than ``k`` classes are populated the projection still has
    ``k-1`` columns, padded by the next eigenvectors, so downstream feature
    dimensionality stays fixed.  ``reg=None`` selects the default ridge
    ``1e-6 * trace(S_W) / dim``, which keeps the problem well-posed when a
    class has fewer members than there are dimensions.
    """
    if reg is not None and reg < 0:
        raise ValueError(f"regularization must be >= 0, got {reg}")
    x = y.data
    k = h.k
    if h.n_docs != y.n_docs:
        raise ValueError(f"assignment covers {h.n_docs} docs, matrix has {y.n_docs}")
    n_populated = np.unique(h.h).size
    if n_populated < 2:
        raise ValueError("discriminant fit needs at least 2 populated classes")
    n_components = k - 1
    if n_components > y.dim:
        raise ValueError(
            f"cannot extract {n_components} discriminant directions from {y.dim}-dim data"
        )
    s_w, s_b = scatter_matrices(x, h.h, k)
    if not (np.isfinite(s_w).all() and np.isfinite(s_b).all()):
        raise ValueError("non-finite scatter matrices")
    if reg is None:
        reg = 1e-6 * np.trace(s_w) / y.dim
    s_w_reg = s_w + reg * np.eye(y.dim)
    eigvals, eigvecs = scipy.linalg.eigh(s_b, s_w_reg)
    order = np.argsort(eigvals)[::-1][:n_components]
    w = _fix_column_signs(eigvecs[:, order])
    eigvals = eigvals[order]
    num = float(np.trace(w.T @ s_b @ w))
    den = float(np.trace(w.T @ s_w @ w))
    trace_ratio = num / den if den > 0 else float("inf")
    return LdaModel(
        projection=w,
        k=k,
        regularization=float(reg),
        eigenvalues=eigvals,
        trace_ratio=trace_ratio,
    )


def lda_transform(model: LdaModel, y: EmbeddingMatrix) -> EmbeddingMatrix:
    """Project rows into the fitted discriminant space."""
    if y.dim != model.input_dim:
        raise ValueError(f"dimension mismatch: matrix has {y.dim}, model expects {model.input_dim}")
    return EmbeddingMatrix(data=y.data @ model.projection, stage=Stage.FEATURE_K1)
