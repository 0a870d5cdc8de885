import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chunkwise.tokenizer import (
    CLS_ID,
    PAD_ID,
    RESERVED_TOKENS,
    SEP_ID,
    UNK_ID,
    TokenizerConfig,
    Vocabulary,
    build_vocab,
    encode,
    split_tokens,
)


def test_reserved_ids_fixed():
    assert (PAD_ID, UNK_ID, CLS_ID, SEP_ID) == (0, 1, 2, 3)


def test_split_words_and_punctuation():
    assert split_tokens("Hello, world!") == ["hello", ",", "world", "!"]
    assert split_tokens("a-b c") == ["a", "-", "b", "c"]


def test_split_no_lowercase():
    assert split_tokens("Ab", lowercase=False) == ["Ab"]


def test_build_vocab_frequency_then_lexicographic():
    vocab = build_vocab(["a b", "a c"], TokenizerConfig(max_vocab=7))
    assert vocab.size == 7
    assert vocab.id_of("a") == 4  # most frequent right after reserved ids
    assert vocab.id_of("b") == 5 and vocab.id_of("c") == 6


def test_build_vocab_truncates_to_max():
    vocab = build_vocab(["a b", "a c"], TokenizerConfig(max_vocab=5))
    assert vocab.size == 5
    assert "a" in vocab and "b" not in vocab and "c" not in vocab


def test_build_vocab_min_frequency():
    vocab = build_vocab(["a a b"], TokenizerConfig(min_token_frequency=2))
    assert "a" in vocab and "b" not in vocab


def test_empty_text_contributes_nothing():
    vocab = build_vocab(["", "a"], TokenizerConfig())
    assert vocab.size == 5


def test_encode_basic():
    vocab = build_vocab(["a b", "a c"], TokenizerConfig(max_vocab=7))
    assert encode("a b", vocab) == [vocab.id_of("a"), vocab.id_of("b")]
    assert encode("zzz", vocab) == [UNK_ID]
    assert encode("", vocab) == []


def test_config_validation():
    with pytest.raises(ValueError):
        TokenizerConfig(max_vocab=3)
    with pytest.raises(ValueError):
        TokenizerConfig(min_token_frequency=0)


def test_vocabulary_rejects_bad_reserved():
    with pytest.raises(ValueError):
        Vocabulary({"<pad>": 1, "<unk>": 0, "<cls>": 2, "<sep>": 3})
    with pytest.raises(ValueError):
        Vocabulary({t: i for i, t in enumerate(RESERVED_TOKENS)} | {"x": 9})


def test_vocab_save_load_roundtrip(tmp_path):
    vocab = build_vocab(["alpha beta beta", "gamma"], TokenizerConfig(lowercase=False))
    path = tmp_path / "vocab.json"
    vocab.save(path)
    assert Vocabulary.load(path) == vocab


_texts = st.lists(st.text(max_size=40), min_size=1, max_size=8)


@given(texts=_texts)
@settings(max_examples=60)
def test_build_vocab_deterministic(texts):
    assert build_vocab(texts).to_json_dict() == build_vocab(texts).to_json_dict()


@given(texts=_texts, query=st.text(max_size=60))
@settings(max_examples=60)
def test_encode_ids_in_range_and_never_reserved(texts, query):
    vocab = build_vocab(texts, TokenizerConfig(max_vocab=30))
    ids = encode(query, vocab)
    assert all(0 <= i < vocab.size for i in ids)
    assert all(i not in (PAD_ID, CLS_ID, SEP_ID) for i in ids)
    assert len(ids) == len(split_tokens(query))
