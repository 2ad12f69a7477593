"""Exporter plumbing with a deterministic offline encoder, plus optional
integration tests against the real pretrained model.

Set ``SBERT_EXPORT_RUN_MODEL_TESTS=1`` to run the model-backed tests (they
download the encoder on first use).
"""

import hashlib
import json
import os

import numpy as np
import pytest

from sbert_export.cli import main
from sbert_export.exporter import ExportJob, export, read_corpus_texts

RUN_MODEL_TESTS = os.environ.get("SBERT_EXPORT_RUN_MODEL_TESTS") == "1"


class FakeEncoder:
    """Deterministic text-to-vector stub with the encoder call signature."""

    def __init__(self, dim=384):
        self.dim = dim
        self.calls = []

    def _vector(self, text: str) -> np.ndarray:
        digest = hashlib.sha256(text.encode("utf-8")).digest()
        seed = int.from_bytes(digest[:8], "little")
        return np.random.default_rng(seed).normal(size=self.dim).astype(np.float32)

    def encode(self, texts, batch_size=32, convert_to_numpy=True,
               normalize_embeddings=False, show_progress_bar=False):
        self.calls.append(list(texts))
        out = np.stack([self._vector(t) for t in texts])
        if normalize_embeddings:
            out = out / np.linalg.norm(out, axis=1, keepdims=True)
        return out


def _write_corpus(path, texts):
    with open(path, "w", encoding="utf-8") as f:
        for i, t in enumerate(texts):
            f.write(json.dumps({"doc_id": f"d{i}", "text": t}) + "\n")


class TestCorpusReading:
    def test_order_preserved(self, tmp_path):
        path = tmp_path / "c.jsonl"
        _write_corpus(path, ["first", "second", "third"])
        assert read_corpus_texts(path) == ["first", "second", "third"]

    def test_duplicate_ids_rejected(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text('{"doc_id": "a", "text": "x"}\n{"doc_id": "a", "text": "y"}\n')
        with pytest.raises(ValueError, match="duplicate"):
            read_corpus_texts(path)

    def test_malformed_line_reports_number(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text('{"doc_id": "a", "text": "x"}\n{bad\n')
        with pytest.raises(ValueError, match="line 2"):
            read_corpus_texts(path)

    def test_empty_corpus_rejected(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text("\n")
        with pytest.raises(ValueError, match="empty"):
            read_corpus_texts(path)


class TestExport:
    def test_shape_contract(self, tmp_path):
        """3-line corpus gives a 3 x 384 file the engine can read back."""
        corpus = tmp_path / "c.jsonl"
        out = tmp_path / "e.bin"
        _write_corpus(corpus, ["one", "two", "three"])
        matrix = export(ExportJob(str(corpus), str(out)), encoder=FakeEncoder())
        assert matrix.shape == (3, 384)

        topiclear_io = pytest.importorskip("topiclear.embeddings_io")
        back = topiclear_io.read_embeddings(out)
        assert back.n_docs == 3
        assert back.dim == 384
        assert back.stage == topiclear_io.Stage.RAW
        assert np.array_equal(back.data.astype(np.float32), matrix)

    def test_deterministic_bytes(self, tmp_path):
        corpus = tmp_path / "c.jsonl"
        _write_corpus(corpus, ["alpha", "beta", "gamma", "delta"])
        outs = []
        for name in ("a.bin", "b.bin"):
            out = tmp_path / name
            export(ExportJob(str(corpus), str(out)), encoder=FakeEncoder())
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_duplicated_sentence_self_similarity(self, tmp_path):
        corpus = tmp_path / "c.jsonl"
        out = tmp_path / "e.bin"
        _write_corpus(corpus, ["same sentence", "same sentence", "different"])
        matrix = export(ExportJob(str(corpus), str(out)), encoder=FakeEncoder())
        cos = matrix[0] @ matrix[1] / (np.linalg.norm(matrix[0]) * np.linalg.norm(matrix[1]))
        assert cos == pytest.approx(1.0, abs=1e-6)

    def test_batching_preserves_order(self, tmp_path):
        corpus = tmp_path / "c.jsonl"
        out = tmp_path / "e.bin"
        texts = [f"text number {i}" for i in range(10)]
        _write_corpus(corpus, texts)
        encoder = FakeEncoder(dim=16)
        matrix = export(ExportJob(str(corpus), str(out), batch_size=3), encoder=encoder)
        assert [len(c) for c in encoder.calls] == [3, 3, 3, 1]
        single = FakeEncoder(dim=16)
        expected = single.encode(texts)
        assert np.array_equal(matrix, expected)

    def test_empty_text_warns_but_exports(self, tmp_path, caplog):
        corpus = tmp_path / "c.jsonl"
        out = tmp_path / "e.bin"
        _write_corpus(corpus, ["", "something"])
        with caplog.at_level("WARNING"):
            matrix = export(ExportJob(str(corpus), str(out)), encoder=FakeEncoder(dim=8))
        assert matrix.shape == (2, 8)
        assert any("empty text" in r.message for r in caplog.records)

    def test_normalize_flag(self, tmp_path):
        corpus = tmp_path / "c.jsonl"
        out = tmp_path / "e.bin"
        _write_corpus(corpus, ["a", "b"])
        matrix = export(
            ExportJob(str(corpus), str(out), normalize=True), encoder=FakeEncoder(dim=8)
        )
        assert np.allclose(np.linalg.norm(matrix, axis=1), 1.0, atol=1e-6)

    def test_bad_batch_size(self, tmp_path):
        with pytest.raises(ValueError, match="batch size"):
            ExportJob("c", "o", batch_size=0)


class TestCli:
    def test_export_subcommand(self, tmp_path, monkeypatch):
        corpus = tmp_path / "c.jsonl"
        out = tmp_path / "e.bin"
        _write_corpus(corpus, ["hello", "world"])
        import sbert_export.exporter as mod

        monkeypatch.setattr(mod, "_load_default_encoder", lambda job: FakeEncoder(dim=12))
        rc = main(["export", "--corpus", str(corpus), "--out", str(out), "--batch-size", "2"])
        assert rc == 0
        assert out.stat().st_size == 21 + 2 * 12 * 4

    def test_missing_corpus_fails(self, tmp_path, capsys):
        rc = main(["export", "--corpus", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path / "e.bin")])
        assert rc != 0
        assert "error" in capsys.readouterr().err


@pytest.mark.skipif(not RUN_MODEL_TESTS, reason="SBERT_EXPORT_RUN_MODEL_TESTS not set")
class TestRealModel:
    def test_default_model_dim_and_determinism(self, tmp_path):
        corpus = tmp_path / "c.jsonl"
        _write_corpus(corpus, ["the cat sat on the mat", "a quick brown fox", ""])
        outs = []
        for name in ("a.bin", "b.bin"):
            out = tmp_path / name
            export(ExportJob(str(corpus), str(out)))
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]
        topiclear_io = pytest.importorskip("topiclear.embeddings_io")
        back = topiclear_io.read_embeddings(tmp_path / "a.bin")
        assert back.dim == 384
        norms = np.linalg.norm(back.data, axis=1)
        assert np.all(np.isfinite(norms)) and np.all(norms > 0)
