import numpy as np
import pytest

from chunkwise import chunking, corpus, model, tokenizer


@pytest.fixture(scope="session")
def small_corpus():
    return corpus.generate_corpus(n_classes=4, docs_per_class=10, seed=12)


@pytest.fixture(scope="session")
def small_vocab(small_corpus):
    return tokenizer.build_vocab(p for d in small_corpus for p in d.paragraphs)


@pytest.fixture
def worker_registry():
    """Collects workers started in a test and shuts them down afterwards."""
    workers = []
    yield workers
    for worker in workers:
        try:
            worker.shutdown()
        except Exception:
            pass


def make_chunk(body_ids, position):
    return chunking.EncodedChunk(
        token_ids=(tokenizer.CLS_ID, *body_ids, tokenizer.SEP_ID),
        doc_position=position,
    )


def tiny_model_config(vocab_size=12, n_classes=3, features=("np",), seed_dims=None):
    dims = seed_dims or {}
    return model.ModelConfig(
        vocab_size=vocab_size,
        n_classes=n_classes,
        embed_dim=dims.get("embed_dim", 4),
        encoder_layers=dims.get("encoder_layers", 1),
        encoder_heads=dims.get("encoder_heads", 2),
        encoder_ff_dim=dims.get("encoder_ff_dim", 6),
        lstm_hidden=dims.get("lstm_hidden", 3),
        feature_names=tuple(features),
        dropout=0.0,
        max_chunk_len=dims.get("max_chunk_len", 16),
    )


def tiny_sample(rng, vocab_size=12, n_chunks=2, features=("np",), label=1):
    chunks = []
    for pos in range(n_chunks):
        body_len = int(rng.integers(1, 6))
        body = rng.integers(4, vocab_size, size=body_len).tolist()
        chunks.append(make_chunk(body, pos))
    names = tuple(n for n in chunking.FEATURE_NAMES if n in features)
    feats = (
        chunking.FeatureVector(names=names, values=tuple(rng.normal(size=len(names))))
        if names
        else None
    )
    return chunking.ChunkSample(chunks=tuple(chunks), features=feats, label=label)
