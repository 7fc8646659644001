import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radalign.evaluation import (
    UndefinedMetricError,
    ZeroShotProtocol,
    auc,
    average_precision_at_k,
    choose_threshold,
    classification_metrics,
    confusion_counts,
    fit_scaling_law,
    map_at_k,
    multilabel_metrics,
    recall_at_k,
    shares_positive,
    two_way_softmax,
    zero_shot_scores,
)


# --- brute-force oracles ---------------------------------------------------

def brute_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return total / (len(pos) * len(neg))


def brute_ranking(row, ids):
    return sorted(range(len(ids)), key=lambda j: (-row[j], ids[j]))


def brute_ap(row, rel, ids, k):
    ranked = brute_ranking(row, ids)
    total = sum(rel)
    if total == 0:
        return 0.0
    hits, acc = 0, 0.0
    for pos, j in enumerate(ranked[:k], start=1):
        if rel[j]:
            hits += 1
            acc += hits / pos
    return acc / min(k, total)


def brute_recall(S, query_ids, cand_ids, k):
    hits = 0
    for q, row in zip(query_ids, S):
        top = [cand_ids[j] for j in brute_ranking(list(row), cand_ids)[:k]]
        hits += q in top
    return hits / len(query_ids)


# --- AUC ------------------------------------------------------------------

@pytest.mark.parametrize("scores,labels,expected", [
    ((0.9, 0.1), (1, 0), 1.0),
    ((0.3, 0.3, 0.3, 0.3), (1, 0, 1, 0), 0.5),
    ((0.8, 0.7, 0.6, 0.2), (1, 0, 1, 0), 0.75),
])
def test_auc_examples(scores, labels, expected):
    assert auc(scores, labels) == expected


@pytest.mark.parametrize("labels", [(1, 1, 1), (0, 0)])
def test_auc_single_class_undefined(labels):
    with pytest.raises(UndefinedMetricError):
        auc([0.1] * len(labels), labels)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.booleans()), min_size=2, max_size=12))
def test_auc_matches_pair_enumeration(pairs):
    scores = [s / 4 for s, _ in pairs]
    labels = [y for _, y in pairs]
    if all(labels) or not any(labels):
        return
    assert abs(auc(scores, labels) - brute_auc(scores, labels)) < 1e-12


# --- thresholded metrics --------------------------------------------------

SIX_SCORES = (0.9, 0.8, 0.7, 0.4, 0.3, 0.2)
SIX_LABELS = (1, 0, 1, 1, 0, 0)


def test_confusion_table_by_hand():
    c = confusion_counts(np.array(SIX_SCORES) >= 0.5, SIX_LABELS)
    assert (c.tp, c.fp, c.tn, c.fn) == (2, 1, 2, 1)
    m = classification_metrics(SIX_SCORES, SIX_LABELS, "fixed", 0.5)
    assert m["accuracy"] == pytest.approx(4 / 6)
    for key in ("precision", "sensitivity", "specificity", "f1"):
        assert m[key] == pytest.approx(2 / 3)


def test_youden_threshold_by_hand():
    # J over candidate thresholds 0.9 .. 0.2: 1/3, 0, 1/3, 2/3, 1/3, 0
    assert choose_threshold(SIX_SCORES, SIX_LABELS) == 0.4
    m = classification_metrics(SIX_SCORES, SIX_LABELS)
    assert m["threshold"] == 0.4
    assert m["sensitivity"] == 1.0 and m["specificity"] == pytest.approx(2 / 3)
    assert m["precision"] == 0.75 and m["f1"] == pytest.approx(6 / 7) and m["accuracy"] == pytest.approx(5 / 6)


def test_separable_scores_give_perfect_metrics():
    m = classification_metrics([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
    assert all(m[k] == 1.0 for k in ("auc", "accuracy", "precision", "f1", "sensitivity", "specificity"))


def test_fixed_threshold():
    assert classification_metrics([0.6, 0.4], [1, 0], "fixed", 0.5)["accuracy"] == 1.0


def test_max_f1_policy_and_unknown_policy():
    t = choose_threshold(SIX_SCORES, SIX_LABELS, "max_f1")
    assert t == 0.4  # F1 6/7 beats 2/3 at 0.7 and 1/2 at 0.9
    with pytest.raises(ValueError):
        choose_threshold(SIX_SCORES, SIX_LABELS, "median")


def test_multilabel_skips_single_class_columns_and_stays_in_unit_interval():
    rng = np.random.default_rng(0)
    Y = rng.integers(0, 2, size=(40, 3))
    Y[:, 2] = 1
    rep = multilabel_metrics(rng.random((40, 3)), Y, ["a", "b", "c"])
    assert set(rep.per_class) == {"a", "b"}
    values = list(rep.scalars.values()) + [v for m in rep.per_class.values() for k, v in m.items() if k != "threshold"]
    assert all(0.0 <= v <= 1.0 for v in values)
    with pytest.raises(UndefinedMetricError):
        multilabel_metrics(rng.random((4, 1)), np.ones((4, 1)), ["a"])


# --- retrieval ------------------------------------------------------------

def test_ap_examples():
    assert average_precision_at_k([1, 1, 0, 0, 0], 5, 2) == 1.0
    assert average_precision_at_k([1, 0, 1], 3, 2) == pytest.approx(5 / 6)
    assert average_precision_at_k([0, 0, 0], 3, 0) == 0.0


def test_query_without_relevant_items_counts_as_zero():
    S = np.array([[0.9, 0.1], [0.5, 0.4]])
    R = np.array([[True, False], [False, False]])
    assert map_at_k(S, R, ["a", "b"], 2) == 0.5


def test_map_matches_brute_force_on_random_scores():
    rng = np.random.default_rng(1)
    ids = [f"c{j:03d}" for j in range(60)]
    S = rng.integers(0, 20, size=(200, 60)) / 20  # coarse grid forces ties
    R = rng.random((200, 60)) < 0.15
    for k in (5, 10, 50):
        expected = np.mean([brute_ap(list(S[q]), list(R[q]), ids, k) for q in range(200)])
        assert abs(map_at_k(S, R, ids, k) - expected) < 1e-12


def test_map_exclude_self():
    S = np.array([[9.0, 0.2, 0.1], [0.2, 9.0, 0.1], [0.1, 0.3, 9.0]])
    R = np.array([[1, 0, 1], [0, 1, 0], [1, 1, 1]], dtype=bool)
    # query 0: ranking (1, 2), relevant 2 -> AP 1/2; query 1: none -> 0; query 2: (1, 0), both relevant -> 1
    assert map_at_k(S, R, ["a", "b", "c"], 2, exclude_self=True) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        map_at_k(S, R, ["a", "b", "c"], 3, exclude_self=True)


def test_map_at_corpus_size_is_full_map():
    rng = np.random.default_rng(2)
    ids = [f"i{j}" for j in range(15)]
    S, R = rng.random((10, 15)), rng.random((10, 15)) < 0.3
    full = np.mean([sum((np.cumsum(R[q][brute_ranking(list(S[q]), ids)]) / np.arange(1, 16))[R[q][brute_ranking(list(S[q]), ids)]])
                    / max(R[q].sum(), 1) for q in range(10)])
    assert abs(map_at_k(S, R, ids, 15) - full) < 1e-12


def test_recall_examples():
    ids = ["a", "b", "c", "d", "e", "f", "g"]
    row = np.array([[7, 6, 5, 4, 3, 2, 1.0]])
    assert recall_at_k(row, ["c"], ids, 5) == 1.0
    assert recall_at_k(row, ["f"], ids, 5) == 0.0


def test_recall_tie_rule_is_observable():
    ids = ["e", "c", "a", "d", "b"]
    S = np.zeros((5, 5))
    assert recall_at_k(S, ids, ids, 2) == 2 / 5  # only "a" and "b" are among the two smallest ids


def test_recall_matches_brute_force():
    rng = np.random.default_rng(3)
    ids = [f"r{j:03d}" for j in range(80)]
    S = rng.integers(0, 10, size=(80, 80)) / 10
    for k in (5, 10, 50):
        assert recall_at_k(S, ids, ids, k) == brute_recall(S, ids, ids, k)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_rank_metrics_invariant_to_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    ids = [f"x{j}" for j in range(12)]
    S = rng.integers(-5, 6, size=(6, 12)).astype(float)
    R = rng.random((6, 12)) < 0.4
    T = np.exp(S) * 3 + 1
    assert map_at_k(S, R, ids, 5) == map_at_k(T, R, ids, 5)
    q = ids[:6]
    assert recall_at_k(S, q, ids, 3) == recall_at_k(T, q, ids, 3)
    recalls = [recall_at_k(S, q, ids, k) for k in range(1, 13)]
    assert all(a <= b for a, b in zip(recalls, recalls[1:]))


def test_shares_positive():
    A = np.array([[1, 0, 0], [0, 0, 0]])
    B = np.array([[1, 1, 0], [0, 1, 1]])
    assert shares_positive(A, B).tolist() == [[True, False], [False, False]]


# --- zero-shot ------------------------------------------------------------

def test_two_way_softmax_examples():
    assert two_way_softmax(0.3, 0.3) == 0.5
    assert abs(two_way_softmax(math.log(3), 0.0) - 0.75) < 1e-15


@settings(max_examples=300, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_zero_shot_complement_is_exact(a, b):
    s, f = two_way_softmax(a, b), two_way_softmax(b, a)
    assert 0.0 < s < 1.0
    assert s + f == 1.0


def test_zero_shot_scores_with_flipped_protocol():
    rng = np.random.default_rng(4)
    table = {}

    def embed(texts):
        return np.stack([table.setdefault(t, rng.normal(size=8)) for t in texts])

    proto = ZeroShotProtocol.from_templates(["Emphysema", "Atelectasis"])
    images = rng.normal(size=(5, 8))
    for l2 in (True, False):
        s = zero_shot_scores(images, proto, embed, l2)
        f = zero_shot_scores(images, proto.flipped(), embed, l2)
        assert s.shape == (5, 2) and np.all((s > 0) & (s < 1))
        assert np.all(s + f == 1.0)


def test_identical_prompt_embeddings_score_half():
    proto = ZeroShotProtocol(("x",), ("yes x",), ("no x",))
    scores = zero_shot_scores(np.ones((3, 4)), proto, lambda texts: np.ones((len(texts), 4)), True)
    assert np.all(scores == 0.5)


def test_protocol_needs_distinct_prompts():
    with pytest.raises(ValueError):
        ZeroShotProtocol(("x",), ("p",), ("p",))


# --- scaling law ----------------------------------------------------------

def test_power_law_recovered():
    fit = fit_scaling_law([(n, 2 * n ** 0.5) for n in (10, 40, 160, 640)])
    assert abs(fit.a - 2) / 2 < 1e-10 and abs(fit.b - 0.5) / 0.5 < 1e-10 and fit.residual < 1e-20


def test_flat_law():
    fit = fit_scaling_law([(n, 0.8) for n in (5, 50, 500)])
    assert abs(fit.b) < 1e-12 and abs(fit.a - 0.8) < 1e-12


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 100), st.floats(-2, 2), st.floats(1, 1e4), st.floats(1.5, 100))
def test_two_points_interpolate_exactly(a, b, n0, ratio):
    fit = fit_scaling_law([(n0, a * n0 ** b), (n0 * ratio, a * (n0 * ratio) ** b)])
    assert fit.residual < 1e-20
    assert abs(fit.a - a) / a < 1e-8 and abs(fit.b - b) < 1e-8


@pytest.mark.parametrize("points", [[(10, 1.0)], [(10, 1.0), (10, 2.0)], [(0, 1.0), (10, 2.0)], [(10, -1.0), (20, 2.0)]])
def test_scaling_fit_errors(points):
    with pytest.raises(ValueError):
        fit_scaling_law(points)
