import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose, assert_array_equal
from sklearn.metrics import adjusted_rand_score, silhouette_score

from degradenet.clustering import (
    AUDIT, LloydAudit, adjusted_rand_index, assignments_to_csv_text, kmeans, select_k, silhouette,
)
from degradenet.errors import InvalidInputError, UndefinedMetricError
from degradenet.numerics import make_rng

from oracles import blobs, brute_force_inertia


def test_k_one_is_global_mean():
    X = make_rng(0).normal(size=(30, 3))
    m = kmeans(X, 1, make_rng(1))
    assert_allclose(m.centroids[0], X.mean(axis=0), atol=1e-12)
    assert abs(m.inertia - np.sum((X - X.mean(axis=0)) ** 2)) < 1e-9


def test_four_point_square():
    X = np.array([[0, 0], [0, 1], [10, 0], [10, 1]], dtype=float)
    m = kmeans(X, 2, make_rng(3))
    assert m.assignments[0] == m.assignments[1] != m.assignments[2] == m.assignments[3]
    got = sorted(map(tuple, m.centroids))
    assert_allclose(got, [(0, 0.5), (10, 0.5)])
    assert abs(m.inertia - brute_force_inertia(X, 2)) < 1e-9


def test_twelve_points_match_exhaustive_optimum():
    X = make_rng(5).normal(size=(12, 2))
    m = kmeans(X, 3, make_rng(6), restarts=20)
    assert abs(m.inertia - brute_force_inertia(X, 3)) < 1e-9


@pytest.mark.parametrize("k", [0, 6])
def test_bad_k(k):
    with pytest.raises(InvalidInputError):
        kmeans(np.zeros((5, 2)), k, make_rng(0))


def test_non_finite_rows_rejected():
    X = np.ones((4, 2))
    X[1, 1] = np.nan
    with pytest.raises(InvalidInputError):
        kmeans(X, 2, make_rng(0))


def test_deterministic_given_seed():
    X = make_rng(2).normal(size=(40, 3))
    a, b = kmeans(X, 4, make_rng(9)), kmeans(X, 4, make_rng(9))
    assert_array_equal(a.assignments, b.assignments)
    assert a.inertia == b.inertia


@given(st.integers(0, 10_000), st.integers(1, 5))
def test_converged_centroids_are_member_means(seed, k):
    r = make_rng(seed)
    X = r.normal(size=(25, 3))
    m = kmeans(X, k, r, restarts=2)
    assert m.converged
    assert np.all((m.assignments >= 0) & (m.assignments < k))
    for c in range(k):
        members = X[m.assignments == c]
        assert len(members) > 0
        assert_allclose(m.centroids[c], members.mean(axis=0), atol=1e-9)
    # every recorded history is non-increasing
    assert all(b <= a * (1 + 1e-12) for a, b in zip(m.inertia_history, m.inertia_history[1:]))


def test_duplicate_rows_trigger_reseed_without_crashing():
    X = np.array([[0.0, 0.0]] * 6 + [[5.0, 5.0], [5.0, 6.0]])
    for seed in range(10):
        m = kmeans(X, 3, make_rng(seed), restarts=1)
        assert m.inertia >= 0
        assert np.all((m.assignments >= 0) & (m.assignments < 3))


def test_audit_flags_increases():
    audit = LloydAudit()
    audit.record([5.0, 4.0, 4.0])
    assert audit.violations == []
    audit.record([5.0, 5.5])
    assert len(audit.violations) == 1 and audit.runs == 2


def test_global_audit_sees_runs():
    before = AUDIT.runs
    kmeans(make_rng(0).normal(size=(10, 2)), 2, make_rng(0), restarts=3)
    assert AUDIT.runs == before + 3


# --- silhouette -----------------------------------------------------------------

def test_separated_blobs_score_high():
    X, y = blobs(make_rng(0), [[0, 0], [100, 0]], 20, 1.0)
    assert silhouette(X, y) > 0.9


def test_random_split_of_one_blob_is_near_zero():
    for seed in range(10):
        r = make_rng(seed)
        X = r.normal(size=(60, 2))
        assert abs(silhouette(X, r.integers(0, 2, 60))) < 0.2


def test_coincident_pairs_score_one():
    X = np.array([[0.0, 0.0], [0.0, 0.0], [3.0, 4.0], [3.0, 4.0]])
    assert silhouette(X, [0, 0, 1, 1]) == 1.0


@given(st.integers(0, 10_000), st.integers(2, 5))
def test_silhouette_matches_sklearn(seed, k):
    r = make_rng(seed)
    X = r.normal(size=(30, 3))
    labels = np.concatenate([np.arange(k), r.integers(0, k, 30 - k)])
    assert abs(silhouette(X, labels) - silhouette_score(X, labels)) < 1e-12


def test_singletons_contribute_zero():
    X = np.array([[0.0], [0.1], [5.0]])
    # point 3 is a singleton; the other two have a = 0.1 and b = 5.0 / 4.9
    expected = ((5.0 - 0.1) / 5.0 + (4.9 - 0.1) / 4.9) / 3
    assert abs(silhouette(X, [0, 0, 1]) - expected) < 1e-12


def test_silhouette_undefined_cases():
    with pytest.raises(UndefinedMetricError):
        silhouette(np.ones((4, 2)), [0, 0, 0, 0])
    with pytest.raises(UndefinedMetricError):
        silhouette(np.arange(3.0)[:, None], [0, 1, 2])


def test_relabeling_keeps_scores():
    X = make_rng(4).normal(size=(30, 2))
    m = kmeans(X, 3, make_rng(4))
    perm = np.array([2, 0, 1])[m.assignments]
    assert abs(silhouette(X, perm) - silhouette(X, m.assignments)) < 1e-12
    inertia = sum(np.sum((X[perm == c] - X[perm == c].mean(axis=0)) ** 2) for c in range(3))
    assert abs(inertia - m.inertia) < 1e-9


# --- select_k ------------------------------------------------------------------------

def test_three_blobs_pick_three():
    X, _ = blobs(make_rng(7), [[0, 0], [10, 0], [0, 10]], 25, 1.0)
    rep = select_k(X, 2, 6, make_rng(8))
    assert rep.chosen_k == 3
    assert rep.candidates == [2, 3, 4, 5, 6]
    assert rep.scores[1] == max(rep.scores)
    assert '"chosen_k": 3' in rep.to_json()


def test_single_candidate():
    X = make_rng(0).normal(size=(10, 2))
    assert select_k(X, 2, 2, make_rng(0)).chosen_k == 2


def test_scores_ignore_row_order():
    X, _ = blobs(make_rng(1), [[0, 0], [8, 0], [0, 8]], 10, 1.0)
    perm = make_rng(2).permutation(len(X))
    # enough restarts that both orders land on the same optimal partitions;
    # the silhouette of a given partition depends on distances only
    a = select_k(X, 2, 4, make_rng(3), restarts=60)
    b = select_k(X[perm], 2, 4, make_rng(3), restarts=60)
    for k in a.candidates:
        assert abs(a.models[k].inertia - b.models[k].inertia) < 1e-9
    assert_allclose(a.scores, b.scores, atol=1e-12)


@pytest.mark.parametrize("lo,hi", [(1, 3), (4, 3), (2, 10)])
def test_invalid_range(lo, hi):
    with pytest.raises(InvalidInputError):
        select_k(np.zeros((10, 2)) + np.arange(10)[:, None], lo, hi, make_rng(0))


def test_ties_go_to_smaller_k(monkeypatch):
    import degradenet.clustering as cl
    monkeypatch.setattr(cl, "silhouette", lambda X, a: 0.5)
    assert select_k(make_rng(0).normal(size=(12, 2)), 2, 5, make_rng(0)).chosen_k == 2


# --- ARI --------------------------------------------------------------------------------

def test_ari_identity_and_permutation():
    y = np.array([0, 0, 1, 1, 2, 2, 2])
    assert adjusted_rand_index(y, y) == 1.0
    assert abs(adjusted_rand_index(y, (y + 1) % 3) - 1.0) < 1e-12


@given(st.integers(0, 10_000), st.integers(1, 5), st.integers(1, 5))
def test_ari_matches_sklearn(seed, ka, kb):
    r = make_rng(seed)
    a, b = r.integers(0, ka, 40), r.integers(0, kb, 40)
    assert abs(adjusted_rand_index(a, b) - adjusted_rand_score(a, b)) < 1e-12


def test_ari_shape_mismatch():
    with pytest.raises(InvalidInputError):
        adjusted_rand_index([0, 1], [0, 1, 1])


def test_assignments_csv():
    assert assignments_to_csv_text(["a", "b"], np.array([1, 0])) == "participant_id,cluster\na,1\nb,0\n"
