"""Ridge-stabilized linear regression on lagged scores, the comparison baseline.

A design row is the flattened history of waves 1..T-1 (ADL lags, then COG
lags when ``multi``) optionally followed by the encoded static vector. Each
target gets its own least-squares solve against the shared design matrix.
"""
import json
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .dataset import DYNAMIC_FEATURES
from .errors import ConsistencyError, InvalidInputError, ShapeError, SingularSystemError

DEFAULT_LAMBDA = 1e-6


@dataclass(frozen=True)
class DesignSpec:
    multi: bool = False
    use_features: bool = False


def _lag_features(spec, target):
    if spec.multi:
        return DYNAMIC_FEATURES
    if target not in DYNAMIC_FEATURES:
        raise InvalidInputError(f"unknown target {target!r}")
    return (target,)


def build_design(inputs, statics, spec, target="adl"):
    """Design row(s) for windowed inputs of shape (S, 2) or (N, S, 2).

    ``target`` picks the lagged score when ``spec.multi`` is false.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    statics = np.asarray(statics, dtype=np.float64)
    single = inputs.ndim == 2
    if single:
        inputs, statics = inputs[None], statics[None]
    if inputs.ndim != 3 or inputs.shape[2] != len(DYNAMIC_FEATURES):
        raise ShapeError(f"inputs must carry {len(DYNAMIC_FEATURES)} score columns, got shape {inputs.shape}")
    if statics.shape[0] != inputs.shape[0]:
        raise ShapeError("inputs and statics disagree on row count")
    cols = [DYNAMIC_FEATURES.index(f) for f in _lag_features(spec, target)]
    # (N, S, k) -> (N, k, S) so each score's history is contiguous
    parts = [inputs[:, :, cols].transpose(0, 2, 1).reshape(inputs.shape[0], -1)]
    if spec.use_features:
        parts.append(statics)
    rows = np.concatenate(parts, axis=1)
    return rows[0] if single else rows


@dataclass
class RegressionModel:
    coefficients: np.ndarray
    intercept: np.ndarray
    ridge_lambda: float
    design_spec: DesignSpec = DesignSpec()
    targets: tuple = ("adl",)

    @property
    def design_dim(self):
        return self.coefficients.shape[1]

    def to_json(self):
        doc = {
            "format": "degradenet.model",
            "version": 1,
            "kind": "ridge",
            "shape": {"out_dim": self.coefficients.shape[0], "design_dim": self.design_dim},
            "ridge_lambda": self.ridge_lambda,
            "design_spec": {"multi": self.design_spec.multi, "use_features": self.design_spec.use_features},
            "targets": list(self.targets),
            "arrays": {
                "coefficients": {"shape": list(self.coefficients.shape),
                                 "values": self.coefficients.ravel().tolist()},
                "intercept": {"shape": list(self.intercept.shape), "values": self.intercept.tolist()},
            },
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        if doc.get("format") != "degradenet.model" or doc.get("kind") != "ridge":
            raise ConsistencyError("not a serialized ridge model document")
        arr = doc["arrays"]
        return cls(
            coefficients=np.array(arr["coefficients"]["values"]).reshape(arr["coefficients"]["shape"]),
            intercept=np.array(arr["intercept"]["values"], dtype=np.float64),
            ridge_lambda=float(doc["ridge_lambda"]),
            design_spec=DesignSpec(**doc["design_spec"]),
            targets=tuple(doc["targets"]),
        )


def fit_ridge(rows, targets, lam=DEFAULT_LAMBDA):
    """Solve ``(XcᵀXc + λI) β = XcᵀYc`` on centred data; the intercept is not penalized."""
    X = np.asarray(rows, dtype=np.float64)
    Y = np.asarray(targets, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[0] < 1 or X.shape[0] != Y.shape[0]:
        raise ShapeError(f"need matching, non-empty row counts; got {X.shape[0]} and {Y.shape[0]}")
    if lam < 0:
        raise InvalidInputError("ridge lambda must be non-negative")
    x_mean = X.mean(axis=0)
    y_mean = Y.mean(axis=0)
    Xc = X - x_mean
    Yc = Y - y_mean
    A = Xc.T @ Xc + lam * np.eye(X.shape[1])
    eig = np.linalg.eigvalsh(A)
    if eig[0] <= 1e-12 * max(eig[-1], 1.0):
        raise SingularSystemError(
            "normal equations are singular (collinear or constant columns); use ridge lambda > 0")
    try:
        beta = linalg.cho_solve(linalg.cho_factor(A), Xc.T @ Yc)
    except linalg.LinAlgError as exc:
        raise SingularSystemError(f"{exc}; use ridge lambda > 0") from None
    return RegressionModel(coefficients=beta.T, intercept=y_mean - x_mean @ beta, ridge_lambda=lam)


def predict_regression(model, rows):
    """Linear prediction for one row or a stack of rows, in the targets' own (normalized) units."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.shape[-1] != model.design_dim:
        raise ShapeError(f"row length {rows.shape[-1]} does not match model width {model.design_dim}")
    return rows @ model.coefficients.T + model.intercept


def penalized_objective(model, rows, targets):
    Y = np.asarray(targets, dtype=np.float64).reshape(len(rows), -1)
    resid = Y - predict_regression(model, rows)
    return float(np.sum(resid ** 2) + model.ridge_lambda * np.sum(model.coefficients ** 2))


def fit_baseline(data, spec, targets=None, lam=DEFAULT_LAMBDA):
    """Fit a regression cell on normalized windowed data.

    With ``spec.multi`` one design (ADL+COG lags) predicts both scores;
    otherwise ``targets`` must hold one score name.
    """
    if targets is None:
        if not spec.multi:
            raise InvalidInputError("single-score regression needs an explicit target")
        targets = DYNAMIC_FEATURES
    targets = tuple(targets)
    inputs, statics, y = data.windowed()
    X = build_design(inputs, statics, spec, targets[0])
    cols = [DYNAMIC_FEATURES.index(t) for t in targets]
    model = fit_ridge(X, y[:, cols], lam)
    model.design_spec = spec
    model.targets = targets
    return model


def predict_baseline(model, data):
    """Raw-unit predictions (N, out_dim) for a normalized cohort."""
    inputs, statics, _ = data.windowed()
    X = build_design(inputs, statics, model.design_spec, model.targets[0])
    return data.stats.denormalize_dynamic(predict_regression(model, X), model.targets)
