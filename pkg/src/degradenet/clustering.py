"""K-means over trajectory embeddings, silhouette-based choice of K, and ARI.

Every Lloyd run reports its inertia sequence to a process-wide audit so the
test suite can assert that no run anywhere ever saw inertia go up.
"""
import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

from .errors import InvalidInputError, UndefinedMetricError

DEFAULT_RESTARTS = 10
DEFAULT_MAX_ITER = 300
# relative slack for inertia comparisons; a recomputed mean of unchanged
# members can differ from the previous one in the last bit
MONOTONE_RTOL = 1e-12


class LloydAudit:
    """Counts Lloyd runs and iterations where inertia increased."""

    def __init__(self):
        self.reset()

    def reset(self):
        self.runs = 0
        self.iterations = 0
        self.violations = []

    def record(self, history):
        self.runs += 1
        self.iterations += max(len(history) - 1, 0)
        for it in range(1, len(history)):
            prev, cur = history[it - 1], history[it]
            if cur > prev + MONOTONE_RTOL * max(prev, 1.0):
                self.violations.append((self.runs, it, prev, cur))


AUDIT = LloydAudit()


def _as_matrix(Z):
    values = getattr(Z, "values", Z)
    X = np.asarray(values, dtype=np.float64)
    if X.ndim != 2:
        raise InvalidInputError(f"expected a 2-D embedding matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("embedding matrix has non-finite entries")
    return X


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    iterations_run: int
    inertia_history: list = field(default_factory=list)
    converged: bool = True


def _inertia(X, centroids, labels):
    return float(np.sum((X - centroids[labels]) ** 2))


def _update(X, labels, k):
    counts = np.bincount(labels, minlength=k)
    sums = np.zeros((k, X.shape[1]))
    np.add.at(sums, labels, X)
    return sums / np.maximum(counts, 1)[:, None], counts


def _reseed_empty(X, centroids, labels, counts):
    """Move each emptied centroid onto the point farthest from its own centroid."""
    labels = labels.copy()
    for j in np.flatnonzero(counts == 0):
        d = np.sum((X - centroids[labels]) ** 2, axis=1)
        # never strip the last member from a cluster
        d[np.bincount(labels, minlength=len(centroids))[labels] <= 1] = -1.0
        far = int(np.argmax(d))
        labels[far] = j
        counts = np.bincount(labels, minlength=len(centroids))
    return labels


def _lloyd(X, k, rng, max_iter):
    n = X.shape[0]
    centroids = X[rng.choice(n, size=k, replace=False)].copy()
    labels = np.full(n, -1)
    history = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        new = np.argmin(cdist(X, centroids, "sqeuclidean"), axis=1)
        counts = np.bincount(new, minlength=k)
        if np.any(counts == 0):
            new = _reseed_empty(X, centroids, new, counts)
        if np.array_equal(new, labels):
            converged = True
            break
        labels = new
        centroids, _ = _update(X, labels, k)
        history.append(_inertia(X, centroids, labels))
    AUDIT.record(history)
    return ClusterModel(k=k, centroids=centroids, assignments=labels,
                        inertia=_inertia(X, centroids, labels), iterations_run=it,
                        inertia_history=history, converged=converged)


def kmeans(Z, k, rng, max_iter=DEFAULT_MAX_ITER, restarts=DEFAULT_RESTARTS):
    """Best-of-``restarts`` Lloyd's algorithm (lowest inertia wins, first on ties)."""
    X = _as_matrix(Z)
    if k < 1:
        raise InvalidInputError(f"k must be at least 1, got {k}")
    if k > X.shape[0]:
        raise InvalidInputError(f"k = {k} exceeds the {X.shape[0]} available rows")
    if restarts < 1 or max_iter < 1:
        raise InvalidInputError("restarts and max_iter must be positive")
    best = None
    for _ in range(restarts):
        model = _lloyd(X, k, rng, max_iter)
        if best is None or model.inertia < best.inertia:
            best = model
    return best


def silhouette(Z, assignments):
    X = _as_matrix(Z)
    labels = np.asarray(assignments)
    if labels.shape != (X.shape[0],):
        raise InvalidInputError("one assignment per row is required")
    clusters, labels = np.unique(labels, return_inverse=True)
    counts = np.bincount(labels)
    if len(clusters) < 2:
        raise UndefinedMetricError("silhouette needs at least two clusters")
    if counts.max() < 2:
        raise UndefinedMetricError("silhouette needs a cluster with at least two points")
    D = squareform(pdist(X))
    # sums[i, c] = total distance from point i to members of cluster c
    onehot = np.eye(len(clusters))[labels]
    sums = D @ onehot
    own = counts[labels]
    a = sums[np.arange(len(X)), labels] / np.maximum(own - 1, 1)
    means = sums / counts
    means[np.arange(len(X)), labels] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    s[own == 1] = 0.0
    return float(s.mean())


@dataclass
class KSelectionReport:
    candidates: list
    scores: list
    chosen_k: int
    models: dict = field(default_factory=dict, repr=False)

    def to_json(self):
        return json.dumps({
            "candidates": [int(k) for k in self.candidates],
            "silhouette": {str(k): s for k, s in zip(self.candidates, self.scores)},
            "inertia": {str(k): self.models[k].inertia for k in self.candidates if k in self.models},
            "chosen_k": int(self.chosen_k),
        }, indent=2)


def select_k(Z, k_min=2, k_max=8, rng=None, restarts=DEFAULT_RESTARTS):
    X = _as_matrix(Z)
    if rng is None:
        raise InvalidInputError("select_k needs an explicit rng")
    if not (2 <= k_min <= k_max <= X.shape[0] - 1):
        raise InvalidInputError(
            f"need 2 <= k_min <= k_max <= rows-1, got [{k_min}, {k_max}] for {X.shape[0]} rows")
    candidates = list(range(k_min, k_max + 1))
    scores, models = [], {}
    for k in candidates:
        models[k] = kmeans(X, k, rng, restarts=restarts)
        scores.append(silhouette(X, models[k].assignments))
    # np.argmax returns the first maximum, i.e. the smallest k on ties
    chosen = candidates[int(np.argmax(scores))]
    return KSelectionReport(candidates, scores, chosen, models)


def adjusted_rand_index(labels_a, labels_b):
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1:
        raise InvalidInputError("label vectors must be 1-D and the same length")
    n = a.size
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1))
    np.add.at(table, (ia, ib), 1)

    def pairs(x):
        return np.sum(x * (x - 1) / 2.0)

    index = pairs(table)
    sa, sb = pairs(table.sum(axis=1)), pairs(table.sum(axis=0))
    expected = sa * sb / (n * (n - 1) / 2.0) if n > 1 else 0.0
    max_index = (sa + sb) / 2.0
    if max_index == expected:
        # both partitions trivial (one cluster, or all singletons)
        return 1.0
    return float((index - expected) / (max_index - expected))


def assignments_to_csv_text(ids, assignments):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["participant_id", "cluster"])
    for pid, c in zip(ids, assignments):
        w.writerow([pid, int(c)])
    return buf.getvalue()
