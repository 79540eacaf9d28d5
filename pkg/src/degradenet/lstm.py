"""LSTM with static-feature fusion, trained by backpropagation through time.

Every gate sees the concatenation ``[h_{t-1}, x_t, s]`` of the previous hidden
state, the current dynamic input and the participant's static vector. The
final hidden state feeds a linear head that predicts the next wave, and also
serves as the trajectory embedding used for clustering.

All functions accept batched arrays: ``inputs`` is (B, S, dyn_dim) and
``statics`` is (B, static_dim), where S = T - 1 input waves. Single
trajectories can be passed with the batch axis dropped.
"""
import json
from dataclasses import dataclass, field

import numpy as np

from .dataset import DYNAMIC_FEATURES
from .errors import (
    ConsistencyError,
    InvalidInputError,
    ShapeError,
    TrainingDivergedError,
)
from .numerics import make_rng, sigmoid, xavier_init

GATES = ("f", "i", "C", "o")
PARAM_NAMES = ("W_f", "W_i", "W_C", "W_o", "b_f", "b_i", "b_C", "b_o", "W_y", "b_y")
FORMAT_VERSION = 1


@dataclass
class LstmParams:
    W_f: np.ndarray
    W_i: np.ndarray
    W_C: np.ndarray
    W_o: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_C: np.ndarray
    b_o: np.ndarray
    W_y: np.ndarray
    b_y: np.ndarray
    dyn_dim: int
    static_dim: int
    # which dynamic features are read as inputs and predicted as outputs
    targets: tuple = DYNAMIC_FEATURES

    def __post_init__(self):
        H = self.hidden_dim
        D = H + self.dyn_dim + self.static_dim
        for g in GATES:
            if getattr(self, f"W_{g}").shape != (H, D):
                raise ShapeError(f"W_{g} must be {(H, D)}, got {getattr(self, f'W_{g}').shape}")
            if getattr(self, f"b_{g}").shape != (H,):
                raise ShapeError(f"b_{g} must have length {H}")
        if self.W_y.ndim != 2 or self.W_y.shape[1] != H:
            raise ShapeError(f"W_y must have {H} columns")
        if self.b_y.shape != (self.W_y.shape[0],):
            raise ShapeError("b_y length must match W_y rows")
        if len(self.targets) != self.dyn_dim or self.out_dim != self.dyn_dim:
            raise ShapeError("dyn_dim and out_dim must both equal the number of targets")

    @property
    def hidden_dim(self):
        return self.b_f.shape[0]

    @property
    def out_dim(self):
        return self.W_y.shape[0]

    @property
    def input_dim(self):
        return self.hidden_dim + self.dyn_dim + self.static_dim

    def arrays(self):
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def stacked(self):
        """Gate weights stacked as (4H, D) in f, i, C, o order, plus the stacked bias."""
        W = np.concatenate([self.W_f, self.W_i, self.W_C, self.W_o], axis=0)
        b = np.concatenate([self.b_f, self.b_i, self.b_C, self.b_o])
        return W, b

    def copy(self):
        return LstmParams(**{k: v.copy() for k, v in self.arrays().items()},
                          dyn_dim=self.dyn_dim, static_dim=self.static_dim, targets=self.targets)

    def to_json(self):
        doc = {
            "format": "degradenet.model",
            "version": FORMAT_VERSION,
            "kind": "lstm",
            "shape": {
                "hidden_dim": self.hidden_dim,
                "dyn_dim": self.dyn_dim,
                "static_dim": self.static_dim,
                "out_dim": self.out_dim,
            },
            "targets": list(self.targets),
            "arrays": {name: {"shape": list(a.shape), "values": a.ravel().tolist()}
                       for name, a in self.arrays().items()},
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        if doc.get("format") != "degradenet.model" or doc.get("kind") != "lstm":
            raise ConsistencyError("not a serialized LSTM parameter document")
        if doc.get("version") != FORMAT_VERSION:
            raise ConsistencyError(f"unsupported model format version {doc.get('version')}")
        arrays = {name: np.array(spec["values"], dtype=np.float64).reshape(spec["shape"])
                  for name, spec in doc["arrays"].items()}
        return cls(**arrays, dyn_dim=doc["shape"]["dyn_dim"],
                   static_dim=doc["shape"]["static_dim"], targets=tuple(doc["targets"]))


def init_params(hidden_dim, dyn_dim, static_dim, rng, targets=None):
    """Xavier-uniform weights, zero biases except the forget gate (1.0)."""
    targets = tuple(targets) if targets is not None else DYNAMIC_FEATURES[:dyn_dim]
    D = hidden_dim + dyn_dim + static_dim
    weights = {f"W_{g}": xavier_init(hidden_dim, D, rng) for g in GATES}
    return LstmParams(
        **weights,
        b_f=np.ones(hidden_dim),
        b_i=np.zeros(hidden_dim),
        b_C=np.zeros(hidden_dim),
        b_o=np.zeros(hidden_dim),
        W_y=xavier_init(len(targets), hidden_dim, rng),
        b_y=np.zeros(len(targets)),
        dyn_dim=dyn_dim,
        static_dim=static_dim,
        targets=targets,
    )


def zero_params(hidden_dim, dyn_dim, static_dim, targets=None):
    targets = tuple(targets) if targets is not None else DYNAMIC_FEATURES[:dyn_dim]
    D = hidden_dim + dyn_dim + static_dim
    H = hidden_dim
    return LstmParams(
        W_f=np.zeros((H, D)), W_i=np.zeros((H, D)), W_C=np.zeros((H, D)), W_o=np.zeros((H, D)),
        b_f=np.zeros(H), b_i=np.zeros(H), b_C=np.zeros(H), b_o=np.zeros(H),
        W_y=np.zeros((len(targets), H)), b_y=np.zeros(len(targets)),
        dyn_dim=dyn_dim, static_dim=static_dim, targets=targets,
    )


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_dim, batch=None):
        shape = (hidden_dim,) if batch is None else (batch, hidden_dim)
        return cls(np.zeros(shape), np.zeros(shape))


# ---------------------------------------------------------------------------
# Forward
# ---------------------------------------------------------------------------

def _split_gates(pre, H):
    f = sigmoid(pre[..., :H])
    i = sigmoid(pre[..., H:2 * H])
    g = np.tanh(pre[..., 2 * H:3 * H])
    o = sigmoid(pre[..., 3 * H:])
    return f, i, g, o


def cell_forward(params, x_t, s, state):
    """One LSTM step. Returns ``(new_state, gates)`` with gates keyed f, i, o, c_tilde."""
    x_t = np.asarray(x_t, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if x_t.shape[-1] != params.dyn_dim or s.shape[-1] != params.static_dim:
        raise ShapeError(
            f"expected x of width {params.dyn_dim} and s of width {params.static_dim}, "
            f"got {x_t.shape[-1]} and {s.shape[-1]}")
    if state.h.shape[-1] != params.hidden_dim:
        raise ShapeError("state width does not match hidden_dim")
    W, b = params.stacked()
    z = np.concatenate([state.h, x_t, s], axis=-1)
    f, i, g, o = _split_gates(z @ W.T + b, params.hidden_dim)
    c = f * state.c + i * g
    h = o * np.tanh(c)
    return LstmState(h, c), {"f": f, "i": i, "o": o, "c_tilde": g}


@dataclass
class ForwardCache:
    """Everything the backward pass needs, one entry per input step."""
    params: LstmParams
    z: list = field(default_factory=list)
    f: list = field(default_factory=list)
    i: list = field(default_factory=list)
    g: list = field(default_factory=list)
    o: list = field(default_factory=list)
    c: list = field(default_factory=list)
    tanh_c: list = field(default_factory=list)
    h: list = field(default_factory=list)
    h_T: np.ndarray = None
    prediction: np.ndarray = None

    def step_predictions(self):
        """Output head applied to every step's hidden state, shape (B, S, out)."""
        return np.stack(self.h, axis=1) @ self.params.W_y.T + self.params.b_y


def _as_batch(params, inputs, statics):
    inputs = np.asarray(inputs, dtype=np.float64)
    statics = np.asarray(statics, dtype=np.float64)
    if inputs.ndim == 2:
        inputs = inputs[None]
    if statics.ndim == 1:
        statics = statics[None]
    if inputs.ndim != 3 or statics.ndim != 2:
        raise ShapeError("inputs must be (B, S, dyn) and statics (B, m)")
    if inputs.shape[1] == 0:
        raise InvalidInputError("input sequence is empty")
    if inputs.shape[2] != params.dyn_dim:
        raise ShapeError(f"inputs have {inputs.shape[2]} features, params expect {params.dyn_dim}")
    if statics.shape[1] != params.static_dim:
        raise ShapeError(f"statics have {statics.shape[1]} features, params expect {params.static_dim}")
    if statics.shape[0] != inputs.shape[0]:
        raise ShapeError("inputs and statics disagree on batch size")
    return inputs, statics


def forward_batch(params, inputs, statics):
    """Run the recurrence over all input steps from a zero state; returns a :class:`ForwardCache`."""
    inputs, statics = _as_batch(params, inputs, statics)
    B, S, _ = inputs.shape
    H = params.hidden_dim
    W, b = params.stacked()
    Wt = W.T
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    cache = ForwardCache(params)
    for t in range(S):
        z = np.concatenate([h, inputs[:, t, :], statics], axis=1)
        f, i, g, o = _split_gates(z @ Wt + b, H)
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        cache.z.append(z)
        cache.f.append(f)
        cache.i.append(i)
        cache.g.append(g)
        cache.o.append(o)
        cache.c.append(c)
        cache.tanh_c.append(tc)
        cache.h.append(h)
    cache.h_T = h
    # identity output activation: targets are unbounded continuous scores
    cache.prediction = h @ params.W_y.T + params.b_y
    return cache


def forward_trajectory(params, inputs, statics):
    """``(h_T, prediction)`` for one trajectory (or a batch, keeping the batch axis)."""
    single = np.asarray(inputs).ndim == 2
    cache = forward_batch(params, inputs, statics)
    if single:
        return cache.h_T[0], cache.prediction[0]
    return cache.h_T, cache.prediction


def loss_mse(predictions, targets):
    """Mean squared error over every sample and output dimension."""
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError(f"prediction shape {p.shape} does not match target shape {t.shape}")
    if p.size == 0:
        raise ShapeError("empty prediction set")
    return float(np.mean((p - t) ** 2))


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------

def cache_loss(cache, targets):
    """Batch MSE for final-step targets (B, out) or every-step targets (B, S, out)."""
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim == 3:
        return loss_mse(cache.step_predictions(), targets)
    return loss_mse(cache.prediction, np.reshape(targets, cache.prediction.shape))


def backward_bptt(params, cache, targets):
    """Gradients of the batch MSE w.r.t. every parameter, as a dict keyed like :data:`PARAM_NAMES`.

    ``targets`` of shape (B, out) score only the prediction from h_T; shape
    (B, S, out) scores the next-wave prediction made after every input step.
    """
    if cache.params is not params:
        raise ConsistencyError("forward cache was produced with a different parameter set")
    targets = np.asarray(targets, dtype=np.float64)
    H = params.hidden_dim
    W, _ = params.stacked()
    S = len(cache.z)

    if targets.ndim == 3:
        preds = cache.step_predictions()
        if targets.shape != preds.shape:
            raise ShapeError(f"targets {targets.shape} do not match step predictions {preds.shape}")
        dys = list((2.0 * (preds - targets) / targets.size).transpose(1, 0, 2))
    else:
        if targets.ndim == 1:
            targets = targets[None]
        if targets.shape != cache.prediction.shape:
            raise ShapeError(f"targets {targets.shape} do not match predictions {cache.prediction.shape}")
        dys = [None] * (S - 1) + [2.0 * (cache.prediction - targets) / targets.size]

    grads = {"W_y": np.zeros_like(params.W_y), "b_y": np.zeros_like(params.b_y)}
    dW = np.zeros_like(W)
    db = np.zeros(4 * H)
    dh = np.zeros_like(cache.h_T)
    dc = np.zeros_like(dh)
    for t in reversed(range(S)):
        if dys[t] is not None:
            grads["W_y"] += dys[t].T @ cache.h[t]
            grads["b_y"] += dys[t].sum(axis=0)
            dh = dh + dys[t] @ params.W_y
        f, i, g, o = cache.f[t], cache.i[t], cache.g[t], cache.o[t]
        tc = cache.tanh_c[t]
        c_prev = cache.c[t - 1] if t > 0 else np.zeros_like(dc)
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        da = np.concatenate([
            dc * c_prev * f * (1.0 - f),
            dc * g * i * (1.0 - i),
            dc * i * (1.0 - g * g),
            do * o * (1.0 - o),
        ], axis=1)
        dW += da.T @ cache.z[t]
        db += da.sum(axis=0)
        dh = da @ W[:, :H]
        dc = dc * f
    for k, gname in enumerate(GATES):
        grads[f"W_{gname}"] = dW[k * H:(k + 1) * H]
        grads[f"b_{gname}"] = db[k * H:(k + 1) * H]
    return grads


def loss_and_grads(params, inputs, statics, targets):
    cache = forward_batch(params, inputs, statics)
    return cache_loss(cache, targets), backward_bptt(params, cache, targets)


def numerical_gradients(params, batch, epsilon=1e-5):
    """Central finite differences of the batch loss for every parameter entry."""
    inputs, statics, targets = batch
    out = {}
    for name in PARAM_NAMES:
        arr = getattr(params, name)
        num = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = num.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + epsilon
            lp = cache_loss(forward_batch(params, inputs, statics), targets)
            flat[k] = orig - epsilon
            lm = cache_loss(forward_batch(params, inputs, statics), targets)
            flat[k] = orig
            gflat[k] = (lp - lm) / (2.0 * epsilon)
        out[name] = num
    return out


# Central differences carry roundoff of about eps * |loss| / epsilon ~ 1e-11, so
# a gradient entry far below 1e-6 has no meaningful relative error; below the
# floor the check is effectively an absolute one (|a - n| < 1e-4 * 1e-6).
RELATIVE_ERROR_FLOOR = 1e-6


def max_relative_error(analytic, numeric):
    worst = 0.0
    for name in PARAM_NAMES:
        a, n = analytic[name], numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), RELATIVE_ERROR_FLOOR)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def grad_check(params, batch, epsilon=1e-5, backward=None):
    """Worst per-entry relative error between BPTT and central differences.

    ``backward`` lets a test substitute a (deliberately broken) gradient routine.
    """
    inputs, statics, targets = batch
    backward = backward or backward_bptt
    cache = forward_batch(params, inputs, statics)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim < 3:
        targets = np.reshape(targets, cache.prediction.shape)
    analytic = backward(params, cache, targets)
    numeric = numerical_gradients(params, (inputs, statics, targets), epsilon)
    return max_relative_error(analytic, numeric)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    hidden_dim: int = 32
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 32
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    gradient_clip_norm: float = 5.0
    seed: int = 0
    # separate stream for mini-batch order; None shares the init stream
    shuffle_seed: int | None = None
    multi: bool = True
    use_features: bool = True
    # "last": loss on the wave-T prediction only; "all": next-wave loss after every input step
    loss_steps: str = "last"

    def validate(self):
        if self.hidden_dim < 1 or self.epochs < 1 or self.batch_size < 1:
            raise InvalidInputError("hidden_dim, epochs and batch_size must be >= 1")
        if self.learning_rate < 0:
            raise InvalidInputError("learning_rate must be non-negative")
        if self.optimizer not in ("sgd", "adam"):
            raise InvalidInputError(f"unknown optimizer {self.optimizer!r}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise InvalidInputError("Adam betas must lie in (0, 1)")
        if self.loss_steps not in ("last", "all"):
            raise InvalidInputError(f"loss_steps must be 'last' or 'all', got {self.loss_steps!r}")
        if not self.gradient_clip_norm > 0:
            raise InvalidInputError("gradient_clip_norm must be positive")


def select_inputs(data, targets, use_features, loss_steps="last"):
    """Pick the (inputs, statics, target) arrays a network for ``targets`` consumes.

    With ``loss_steps="all"`` the target array is (N, S, out): waves 2..T.
    """
    cols = [DYNAMIC_FEATURES.index(t) for t in targets]
    inputs, statics, y = data.windowed()
    statics = statics if use_features else np.zeros((len(data), 0))
    if loss_steps == "all":
        y = data.dynamic[:, 1:, :]
        return inputs[:, :, cols], statics, y[:, :, cols]
    return inputs[:, :, cols], statics, y[:, cols]


def clip_global_norm(grads, max_norm):
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.arrays().items()}
        self.v = {k: np.zeros_like(v) for k, v in params.arrays().items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        lr_t = self.lr * np.sqrt(1.0 - b2 ** self.t) / (1.0 - b1 ** self.t)
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            getattr(params, k)[...] -= lr_t * m / (np.sqrt(v) + self.eps)


class SGD:
    def __init__(self, params, lr):
        self.lr = lr

    def step(self, params, grads):
        for k, g in grads.items():
            getattr(params, k)[...] -= self.lr * g


def train(data, config, targets=None, callback=None):
    """Fit one network on a normalized :class:`~degradenet.dataset.CohortTensors`.

    ``targets`` defaults to both scores when ``config.multi`` and must name a
    single score otherwise. Returns ``(params, history)`` where ``history`` is
    the full-training-set loss after each epoch. ``callback(epoch, params,
    loss)`` runs after every epoch, e.g. for monitoring held-out error.
    """
    config.validate()
    if targets is None:
        if not config.multi:
            raise InvalidInputError("single-output training needs an explicit target")
        targets = DYNAMIC_FEATURES
    targets = tuple(targets)
    inputs, statics, y = select_inputs(data, targets, config.use_features, config.loss_steps)
    rng = make_rng(config.seed)
    params = init_params(config.hidden_dim, inputs.shape[2], statics.shape[1], rng, targets)
    if config.shuffle_seed is not None:
        rng = make_rng(config.shuffle_seed)
    if config.optimizer == "adam":
        opt = Adam(params, config.learning_rate, config.beta1, config.beta2, config.eps)
    else:
        opt = SGD(params, config.learning_rate)

    n = inputs.shape[0]
    history = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            _, grads = loss_and_grads(params, inputs[idx], statics[idx], y[idx])
            grads, _ = clip_global_norm(grads, config.gradient_clip_norm)
            opt.step(params, grads)
        loss = cache_loss(forward_batch(params, inputs, statics), y)
        if not np.isfinite(loss):
            raise TrainingDivergedError(epoch)
        history.append(loss)
        if callback is not None:
            callback(epoch, params, loss)
    return params, history


def predict_next(params, inputs, statics, stats):
    """Forward pass plus output head, mapped back to raw score units (unclamped)."""
    _, pred = forward_trajectory(params, inputs, statics)
    return stats.denormalize_dynamic(pred, params.targets)


def predict_cohort(params, data):
    """Raw-unit predictions (N, out_dim) for every trajectory in ``data``."""
    inputs, statics, _ = select_inputs(data, params.targets, params.static_dim > 0)
    return predict_next(params, inputs, statics, data.stats)


@dataclass
class EmbeddingMatrix:
    ids: list
    values: np.ndarray

    def __len__(self):
        return len(self.ids)

    def to_csv_text(self):
        H = self.values.shape[1]
        lines = ["participant_id," + ",".join(f"h{j}" for j in range(H))]
        for pid, row in zip(self.ids, self.values):
            lines.append(pid + "," + ",".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"


def extract_embeddings(params, data):
    """Final hidden state of every trajectory, rows in cohort order."""
    inputs, statics, _ = select_inputs(data, params.targets, params.static_dim > 0)
    return EmbeddingMatrix(list(data.ids), forward_batch(params, inputs, statics).h_T)
