"""Two-dimensional views of embeddings: PCA by power iteration and exact t-SNE."""
import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .errors import DegenerateDataError, InvalidInputError, NumericalFailureError
from .numerics import make_rng


@dataclass
class ProjectionResult:
    coords: np.ndarray
    method: str
    diagnostics: dict = field(default_factory=dict)


def _as_matrix(Z):
    X = np.asarray(getattr(Z, "values", Z), dtype=np.float64)
    if X.ndim != 2:
        raise InvalidInputError(f"expected a 2-D matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("matrix has non-finite entries")
    return X


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------

def power_iteration(A, tol=1e-14, max_iter=100000):
    """Dominant eigenpair of a symmetric positive semi-definite matrix."""
    # start from the heaviest column so the start is never orthogonal to a
    # direction that carries variance
    v = A[:, int(np.argmax(np.linalg.norm(A, axis=0)))].copy()
    v /= np.linalg.norm(v)
    for _ in range(max_iter):
        w = A @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0, v
        w /= norm
        if np.linalg.norm(w - v) < tol:
            v = w
            break
        v = w
    return float(v @ A @ v), v


def _orient(v):
    # sign convention: largest-magnitude component is positive
    return v if v[int(np.argmax(np.abs(v)))] >= 0 else -v


def pca_2d(Z):
    X = _as_matrix(Z)
    n, d = X.shape
    if n < 2:
        raise InvalidInputError("PCA needs at least two rows")
    Xc = X - X.mean(axis=0)
    C = Xc.T @ Xc / (n - 1)
    total = float(np.trace(C))
    if total <= 1e-300 or np.allclose(Xc, 0.0):
        raise DegenerateDataError("all rows are identical; there is no variance to project")
    comps, lams = [], []
    A = C.copy()
    for _ in range(min(2, d)):
        if np.abs(A).max() <= 1e-12 * total:
            # nothing left: any unit vector orthogonal to the found ones will do
            v = np.eye(d)[int(np.argmin(np.abs(comps[0])))] if comps else np.eye(d)[0]
            for u in comps:
                v = v - (v @ u) * u
            v /= np.linalg.norm(v)
            lam = 0.0
        else:
            lam, v = power_iteration(A)
        v = _orient(v)
        comps.append(v)
        lams.append(max(lam, 0.0))
        A = A - lam * np.outer(v, v)
    W = np.stack(comps, axis=1)
    coords = Xc @ W
    if coords.shape[1] < 2:
        coords = np.hstack([coords, np.zeros((n, 1))])
        lams.append(0.0)
    # exact zero column means: remove the residue of floating-point centring
    coords -= coords.mean(axis=0)
    ratio = [lam / total for lam in lams]
    return ProjectionResult(coords, "pca", {"explained_variance": lams,
                                            "explained_variance_ratio": ratio,
                                            "components": W.T})


# ---------------------------------------------------------------------------
# t-SNE
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TsneConfig:
    perplexity: float | None = None  # None means 30, capped at (n-1)/3
    iterations: int = 1000
    learning_rate: float = 200.0
    early_exaggeration_factor: float = 12.0
    early_exaggeration_iters: int = 250
    momentum: tuple = (0.5, 0.8)
    init_sd: float = 1e-4
    seed: int = 0

    def resolve_perplexity(self, n):
        limit = (n - 1) / 3.0
        if self.perplexity is None:
            return min(30.0, limit)
        if self.perplexity <= 1.0:
            raise InvalidInputError("perplexity must exceed 1")
        if self.perplexity > limit:
            raise InvalidInputError(
                f"perplexity {self.perplexity} is infeasible for {n} rows (limit (n-1)/3 = {limit:.3f})")
        return float(self.perplexity)

    def validate(self):
        if self.iterations < self.early_exaggeration_iters:
            raise InvalidInputError("iterations must be at least early_exaggeration_iters")
        if self.learning_rate <= 0 or self.early_exaggeration_factor < 1:
            raise InvalidInputError("need learning_rate > 0 and exaggeration factor >= 1")
        if self.init_sd <= 0:
            raise InvalidInputError("init_sd must be positive")
        if self.perplexity is not None and self.perplexity <= 1.0:
            raise InvalidInputError("perplexity must exceed 1")


def _row_affinities(d2, perplexity, tol=1e-5, max_iter=200):
    """Conditional p_{j|i} for one row of squared distances (self excluded).

    Binary search on the precision beta until the Shannon entropy (nats)
    matches log(perplexity) within ``tol``.
    """
    target = np.log(perplexity)
    d2 = d2 - d2.min()  # shift for stability; P is unchanged
    beta, lo, hi = 1.0, 0.0, np.inf
    for _ in range(max_iter):
        p = np.exp(-d2 * beta)
        s = p.sum()
        H = np.log(s) + beta * np.sum(d2 * p) / s
        diff = H - target
        if abs(diff) < tol:
            break
        if diff > 0:  # too flat, sharpen
            lo = beta
            beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
        else:
            hi = beta
            beta = (beta + lo) / 2.0
    return p / s, np.exp(H)


def joint_probabilities(X, perplexity):
    """Symmetrized P (sums to 1) and the perplexity achieved for every row."""
    n = X.shape[0]
    D = squareform(pdist(X, "sqeuclidean"))
    P = np.zeros((n, n))
    achieved = np.empty(n)
    idx = np.arange(n)
    for i in range(n):
        others = idx != i
        P[i, others], achieved[i] = _row_affinities(D[i, others], perplexity)
    P = (P + P.T) / (2.0 * n)
    return P, achieved


def _q_and_num(Y):
    num = 1.0 / (1.0 + squareform(pdist(Y, "sqeuclidean")))
    np.fill_diagonal(num, 0.0)
    return num / num.sum(), num


def kl_divergence(P, Q):
    mask = P > 0
    return float(np.sum(P[mask] * np.log(P[mask] / np.maximum(Q[mask], 1e-300))))


def tsne_2d(Z, config=None):
    config = config or TsneConfig()
    config.validate()
    X = _as_matrix(Z)
    n = X.shape[0]
    if n < 5:
        raise InvalidInputError("t-SNE needs at least 5 rows")
    perplexity = config.resolve_perplexity(n)
    P, achieved = joint_probabilities(X, perplexity)

    rng = make_rng(config.seed)
    Y = config.init_sd * rng.standard_normal((n, 2))
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    kl_initial = kl_divergence(P, _q_and_num(Y)[0])
    for it in range(config.iterations):
        early = it < config.early_exaggeration_iters
        Pe = P * config.early_exaggeration_factor if early else P
        momentum = config.momentum[0] if early else config.momentum[1]
        Q, num = _q_and_num(Y)
        W = (Pe - Q) * num
        grad = 4.0 * (W.sum(axis=1)[:, None] * Y - W @ Y)
        same = np.sign(grad) == np.sign(update)
        gains = np.maximum(np.where(same, gains * 0.8, gains + 0.2), 0.01)
        update = momentum * update - config.learning_rate * gains * grad
        Y = Y + update
        Y -= Y.mean(axis=0)
        if not np.all(np.isfinite(Y)):
            raise NumericalFailureError(it + 1)
    kl_final = kl_divergence(P, _q_and_num(Y)[0])
    if not np.isfinite(kl_final):
        raise NumericalFailureError(config.iterations)
    return ProjectionResult(Y, "tsne", {
        "kl_initial": kl_initial,
        "kl_final": kl_final,
        "iterations": config.iterations,
        "perplexity": perplexity,
        "perplexity_achieved": achieved,
    })


def coordinates_to_csv_text(ids, coords, clusters=None, planted=None):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["participant_id", "x", "y"]
    if clusters is not None:
        header.append("cluster")
    if planted is not None:
        header.append("planted_cluster")
    w.writerow(header)
    for i, pid in enumerate(ids):
        row = [pid, repr(float(coords[i, 0])), repr(float(coords[i, 1]))]
        if clusters is not None:
            row.append(int(clusters[i]))
        if planted is not None:
            row.append("" if planted[i] is None else int(planted[i]))
        w.writerow(row)
    return buf.getvalue()
