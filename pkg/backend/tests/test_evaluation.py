import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from backend.app.data_loader import Split
from backend.app.evaluation import (
    EvalConfig,
    comparison_table,
    evaluate,
    format_report,
    metrics_rows,
    recall_at_cutoffs,
    recall_at_m,
    wmse,
)
from backend.app.models import EvalReport
from backend.app.wmf import FactorModel


def _brute_force_recall(scores, positives, exclusions, M):
    total = []
    for u in range(scores.shape[0]):
        if not positives[u]:
            continue
        ranked = sorted((j for j in range(scores.shape[1]) if j not in exclusions[u]), key=lambda j: (-scores[u, j], j))
        hits = len(set(ranked[:M]) & set(positives[u]))
        total.append(hits / len(positives[u]))
    return sum(total) / len(total)


# ------------------------------------------------------------------------------------
# recall
# ------------------------------------------------------------------------------------

def test_all_positives_in_top_m():
    scores = np.array([[0.9, 0.8, 0.1, 0.0]])
    assert recall_at_m(scores, [np.array([0, 1])], 2) == 1.0


def test_half_the_positives_in_top_m():
    scores = np.array([[0.9, 0.1, 0.8, 0.0, 0.7, 0.2]])
    assert recall_at_m(scores, [np.array([0, 1, 2, 3])], 2) == 0.5


def test_users_without_positives_are_skipped():
    scores = np.array([[0.9, 0.1], [0.1, 0.9]])
    assert recall_at_m(scores, [np.array([0]), np.array([], dtype=np.int64)], 1) == 1.0


def test_ties_rank_by_item_index():
    scores = np.zeros((1, 4))
    assert recall_at_m(scores, [np.array([0])], 1) == 1.0
    assert recall_at_m(scores, [np.array([3])], 1) == 0.0


def test_exclusions_are_not_ranked():
    scores = np.array([[0.9, 0.8, 0.1]])
    assert recall_at_m(scores, [np.array([1])], 1) == 0.0
    assert recall_at_m(scores, [np.array([1])], 1, [np.array([0])]) == 1.0


def test_sparse_rows_are_accepted():
    scores = np.array([[0.9, 0.8, 0.1], [0.0, 0.1, 0.2]])
    positives = sp.csr_matrix(np.array([[0, 1, 0], [0, 0, 1]], dtype=float))
    assert recall_at_m(scores, positives, 1) == 0.5


@pytest.mark.parametrize("seed", range(50))
def test_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    scores = np.round(rng.normal(size=(6, 20)), 1)
    positives, exclusions = [], []
    for _ in range(6):
        perm = rng.permutation(20)
        positives.append(perm[: rng.integers(0, 6)])
        exclusions.append(perm[10: 10 + rng.integers(0, 5)])
    if not any(p.size for p in positives):
        positives[0] = np.array([0])
    M = int(rng.integers(1, 16))
    expected = _brute_force_recall(scores, [set(p) for p in positives], [set(e) for e in exclusions], M)
    assert recall_at_m(scores, positives, M, exclusions) == pytest.approx(expected, abs=1e-12)


def test_recall_grows_with_m():
    rng = np.random.default_rng(1)
    scores = rng.normal(size=(8, 30))
    positives = [rng.choice(30, size=4, replace=False) for _ in range(8)]
    recalls = recall_at_cutoffs(scores, positives, range(1, 31))
    values = [recalls[m] for m in range(1, 31)]
    assert all(a <= b for a, b in zip(values, values[1:]))
    assert recalls[30] == 1.0


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(min_value=0, max_value=10_000), scale=st.floats(min_value=0.1, max_value=10.0))
def test_invariant_under_increasing_transform(seed, scale):
    rng = np.random.default_rng(seed)
    scores = rng.normal(size=(5, 12))
    positives = [rng.choice(12, size=3, replace=False) for _ in range(5)]
    base = recall_at_cutoffs(scores, positives, [1, 3, 5])
    assert recall_at_cutoffs(np.exp(scores), positives, [1, 3, 5]) == base
    assert recall_at_cutoffs(scale * scores + 7.0, positives, [1, 3, 5]) == base


def test_cutoff_larger_than_candidates():
    scores = np.zeros((1, 3))
    with pytest.raises(ValueError):
        recall_at_m(scores, [np.array([0])], 3, [np.array([1])])
    with pytest.raises(ValueError):
        recall_at_m(scores, [np.array([0])], 0)


# ------------------------------------------------------------------------------------
# wmse
# ------------------------------------------------------------------------------------

def test_wmse_examples(make_dataset):
    ds = make_dataset([0, 0], [0, 1], [1.0, 0.0], confidences=[1.0, 0.01])
    assert wmse(np.array([1.0, 0.0]), ds.train) == 0.0
    assert wmse(np.array([0.0, 0.0]), ds.train) == pytest.approx(1 / 1.01)


def test_wmse_empty_split(make_dataset):
    ds = make_dataset([0], [0], [1.0])
    with pytest.raises(ValueError):
        wmse(np.array([]), ds.test)


# ------------------------------------------------------------------------------------
# evaluate / reporting
# ------------------------------------------------------------------------------------

def test_evaluate_reports_both_recall_modes(make_dataset):
    # user 0 liked item 0 in train and item 1 in test; the model ranks item 0 first
    ds = make_dataset(
        [0, 0, 0, 1, 1],
        [0, 1, 2, 0, 2],
        [1.0, 1.0, 0.0, 1.0, 0.0],
        splits=["train", "test", "test", "train", "train"],
    )
    model = FactorModel(np.array([[1.0, 1.0]]), np.array([[3.0, 2.0, 1.0]]))
    report = evaluate(model, ds, EvalConfig(cutoffs=(1, 2)), round_index=4)
    assert report.round == 4
    assert report.recall_at == {1: 1.0, 2: 1.0}
    assert report.recall_at_all_items == {1: 0.0, 2: 1.0}
    assert report.wmse == pytest.approx(((2.0 - 1.0) ** 2 + 1.0) / 2)

    unfiltered = evaluate(model, ds, EvalConfig(cutoffs=(1,), exclude_seen=False))
    assert unfiltered.recall_at == {1: 0.0}


def test_evaluate_on_validation_split(make_dataset):
    ds = make_dataset([0, 0], [0, 1], [1.0, 1.0], splits=["train", "validation"])
    model = FactorModel(np.array([[1.0]]), np.array([[0.0, 1.0]]))
    report = evaluate(model, ds, EvalConfig(cutoffs=(1,)), split=Split.VALIDATION)
    assert report.recall_at == {1: 1.0}


def test_report_rows_and_table():
    reports = [
        EvalReport(round=0, recall_at={50: 0.1, 100: 0.2}, wmse=0.5),
        EvalReport(round=1, recall_at={50: 0.15, 100: 0.25}, wmse=0.4),
    ]
    rows = metrics_rows(reports)
    assert list(rows[1]) == ["round", "recall@50", "recall@100", "wmse"]
    assert rows[1]["recall@100"] == 0.25
    assert "recall@50=0.1000" in format_report(reports[0])

    table = comparison_table({"wmf": reports[0], "pecf": reports[1]})
    lines = table.strip().splitlines()
    assert "Recall@50" in lines[0] and "WMSE" in lines[0]
    assert lines[2].startswith("wmf") and lines[3].startswith("pecf")


def test_report_rejects_recall_outside_unit_interval():
    with pytest.raises(ValueError):
        EvalReport(recall_at={1: 1.5}, wmse=0.0)


def test_eval_config_sorts_cutoffs():
    assert EvalConfig(cutoffs=(200, 50, 100, 50)).cutoffs == (50, 100, 200)
