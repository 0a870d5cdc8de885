import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chunkwise import corpus, evaluation, tokenizer
from chunkwise.chunking import SamplerConfig
from chunkwise.evaluation import (
    ConfusionMatrix,
    ScoreDistribution,
    distribution_table,
    evaluate_runs,
    per_class_f,
    per_class_table,
    weighted_f,
)
from chunkwise.model import init_params

from conftest import tiny_model_config


def brute_force_scores(y_true, y_pred, labels):
    """Independent reimplementation straight from the label lists."""
    per_class = {}
    for c in labels:
        tp = sum(1 for t, p in zip(y_true, y_pred) if t == c and p == c)
        fp = sum(1 for t, p in zip(y_true, y_pred) if t != c and p == c)
        fn = sum(1 for t, p in zip(y_true, y_pred) if t == c and p != c)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        per_class[c] = (
            2 * precision * recall / (precision + recall) if precision + recall else 0.0
        )
    weighted = sum(
        sum(1 for t in y_true if t == c) * per_class[c] for c in labels
    ) / len(y_true)
    return per_class, weighted


# ---------------------------------------------------------------------------

def test_diagonal_matrix_perfect_f1():
    cm = ConfusionMatrix.from_pairs(["a", "b", "c"], ["a", "b", "c"])
    assert per_class_f(cm) == {"a": 1.0, "b": 1.0, "c": 1.0}
    assert weighted_f(cm) == 1.0


def test_hand_case_two_thirds():
    cm = ConfusionMatrix.from_pairs(["A", "A", "B"], ["A", "B", "B"])
    scores = per_class_f(cm)
    assert scores["A"] == pytest.approx(2 / 3)
    assert scores["B"] == pytest.approx(2 / 3)
    assert weighted_f(cm) == pytest.approx(2 / 3)


def test_zero_support_zero_predictions_is_zero():
    cm = ConfusionMatrix(labels=["a", "b"], counts=np.array([[3, 0], [0, 0]]))
    scores = per_class_f(cm)
    assert scores["b"] == 0.0
    assert weighted_f(cm) == 1.0  # class b has zero weight


def test_absent_class_contributes_zero_weight():
    cm = ConfusionMatrix.from_pairs(["a", "a"], ["a", "b"], labels=["a", "b", "c"])
    w = weighted_f(cm)
    _, expected = brute_force_scores(["a", "a"], ["a", "b"], ["a", "b", "c"])
    assert w == pytest.approx(expected)


@given(
    n=st.integers(1, 60),
    n_labels=st.integers(1, 5),
    seed=st.integers(0, 10_000),
)
@settings(max_examples=100, deadline=None)
def test_oracle_equivalence_random_instances(n, n_labels, seed):
    rng = np.random.default_rng(seed)
    labels = [f"c{i}" for i in range(n_labels)]
    y_true = [labels[i] for i in rng.integers(0, n_labels, n)]
    y_pred = [labels[i] for i in rng.integers(0, n_labels, n)]
    cm = ConfusionMatrix.from_pairs(y_true, y_pred, labels=labels)
    expected_per_class, expected_weighted = brute_force_scores(y_true, y_pred, labels)
    got = per_class_f(cm)
    for label in labels:
        assert got[label] == pytest.approx(expected_per_class[label], abs=1e-12)
    assert weighted_f(cm) == pytest.approx(expected_weighted, abs=1e-12)


def test_confusion_matrix_validation():
    with pytest.raises(ValueError):
        ConfusionMatrix(labels=["a"], counts=np.array([[1, 2]]))
    with pytest.raises(ValueError):
        ConfusionMatrix(labels=["a"], counts=np.array([[-1]]))
    with pytest.raises(ValueError):
        ConfusionMatrix.from_pairs(["a"], [])
    with pytest.raises(ValueError):
        weighted_f(ConfusionMatrix(labels=["a"]))


# ---------------------------------------------------------------------------
# ScoreDistribution

def test_distribution_summary_ordering():
    dist = ScoreDistribution(scores=(0.3, 0.9, 0.5, 0.7))
    s = dist.summary()
    assert s["min"] <= s["q1"] <= s["q2"] <= s["q3"] <= s["max"]
    assert s["min"] == 0.3 and s["max"] == 0.9


def test_distribution_single_run_degenerate():
    dist = ScoreDistribution(scores=(0.42,))
    s = dist.summary()
    assert len(set(s.values())) == 1


def test_distribution_uses_corpus_quartile_convention():
    values = (0.1, 0.2, 0.3, 0.4)
    assert ScoreDistribution(values).q1 == corpus.quartiles(values)[0]


# ---------------------------------------------------------------------------
# evaluate_runs

@pytest.fixture(scope="module")
def eval_setup():
    docs = corpus.generate_corpus(n_classes=3, docs_per_class=6, seed=12)
    vocab = tokenizer.build_vocab(p for d in docs for p in d.paragraphs)
    cfg = tiny_model_config(vocab_size=vocab.size, n_classes=3, features=(),
                            seed_dims={"max_chunk_len": 128, "embed_dim": 8,
                                       "lstm_hidden": 6, "encoder_ff_dim": 12})
    params = init_params(cfg, seed=12)
    class_names = sorted({d.label for d in docs})
    return docs, vocab, params, class_names


def test_constant_model_zero_variance(eval_setup):
    docs, vocab, params, class_names = eval_setup
    constant = params.copy()
    constant["head.w"][...] = 0.0
    constant["head.b"][...] = np.array([5.0, 0.0, 0.0])
    result = evaluate_runs(constant, vocab, docs, SamplerConfig(sample_size=8),
                           class_names, n_runs=5, base_seed=12)
    assert result.distribution.min == result.distribution.max


def test_single_run_degenerate(eval_setup):
    docs, vocab, params, class_names = eval_setup
    result = evaluate_runs(params, vocab, docs, SamplerConfig(sample_size=8),
                           class_names, n_runs=1, base_seed=12)
    s = result.distribution.summary()
    assert s["min"] == s["q2"] == s["max"]


def test_evaluate_runs_deterministic(eval_setup):
    docs, vocab, params, class_names = eval_setup
    kw = dict(n_runs=4, base_seed=99)
    one = evaluate_runs(params, vocab, docs, SamplerConfig(sample_size=8), class_names, **kw)
    two = evaluate_runs(params, vocab, docs, SamplerConfig(sample_size=8), class_names, **kw)
    assert one.distribution == two.distribution
    assert one.per_class_median == two.per_class_median


def test_evaluate_runs_rejects_unlabeled(eval_setup):
    docs, vocab, params, class_names = eval_setup
    bad = [corpus.Document(id="u", paragraphs=("a b c",))]
    with pytest.raises(ValueError):
        evaluate_runs(params, vocab, bad, SamplerConfig(), class_names)


def test_report_tables_and_json(eval_setup):
    docs, vocab, params, class_names = eval_setup
    result = evaluate_runs(params, vocab, docs, SamplerConfig(sample_size=8),
                           class_names, n_runs=3, base_seed=12)
    table = distribution_table([("48 nc+np+app", 0.9, result.distribution)])
    header = table.splitlines()[0]
    for column in ("Min", "Q1", "Q2", "Q3", "Max", "Dev"):
        assert column in header
    cls_table = per_class_table(result.per_class_median, result.supports)
    assert all(label in cls_table for label in class_names)
    data = result.to_json_dict()
    assert set(data["weighted_f"]) == {"min", "q1", "q2", "q3", "max", "scores"}
    assert data["n_runs"] == 3
