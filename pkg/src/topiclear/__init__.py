"""Topic extraction by clustering sentence embeddings in an adaptively refined
discriminant space, plus the evaluation toolkit used to judge the results."""

__version__ = "0.1.0"

from .embeddings_io import (
    Corpus,
    Document,
    EmbeddingMatrix,
    Stage,
    TopicAssignment,
    read_assignment,
    read_corpus,
    read_embeddings,
    tokenize,
    write_assignment,
    write_embeddings,
)
from .gmm import GmmModel, GmmOptions, gmm_fit, gmm_posteriors
from .pipeline import PipelineConfig, PipelineResult, extract_topics
from .reduction import (
    LdaModel,
    PcaModel,
    l2_normalize,
    lda_fit,
    lda_transform,
    pca_fit,
    pca_transform,
)

__all__ = [
    "Corpus",
    "Document",
    "EmbeddingMatrix",
    "GmmModel",
    "GmmOptions",
    "LdaModel",
    "PcaModel",
    "PipelineConfig",
    "PipelineResult",
    "Stage",
    "TopicAssignment",
    "extract_topics",
    "gmm_fit",
    "gmm_posteriors",
    "l2_normalize",
    "lda_fit",
    "lda_transform",
    "pca_fit",
    "pca_transform",
    "read_assignment",
    "read_corpus",
    "read_embeddings",
    "tokenize",
    "write_assignment",
    "write_embeddings",
]
