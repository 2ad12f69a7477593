"""Batch exporter from JSONL corpora to binary embedding files using a
pretrained sentence encoder."""

__version__ = "0.1.0"

from .exporter import DEFAULT_MODEL, ExportJob, export, read_corpus_texts, write_embedding_file

__all__ = [
    "DEFAULT_MODEL",
    "ExportJob",
    "export",
    "read_corpus_texts",
    "write_embedding_file",
]
