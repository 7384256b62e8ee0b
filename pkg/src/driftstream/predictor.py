"""Record-to-sequence LSTM predictor.

Given the last S feature vectors the network predicts the next L records in
normalized raw-feature space. Everything runs in float64 numpy: forward,
backpropagation through time, Adam/SGD with L2 weight decay, and warm/cold
retraining used by drift adaptation.

The ``activation`` hyperparameter selects the cell nonlinearity (applied to
the candidate gate and the cell output, Keras-style); gates stay sigmoid
and the dense head is linear so predictions can track arbitrary signal
levels after a drift.

Parameter layout per layer l: ``Wx{l}`` (input, 4H), ``Wh{l}`` (H, 4H),
``b{l}`` (4H,), gate order [input, forget, cell, output]; dense head
``Wy`` (H, out), ``by`` (out,).
"""

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, NumericError, WindowTooShortError

MODEL_FORMAT = "driftstream-lstm/1"


@dataclass
class LstmHyperparams:
    epochs: int = 60
    learning_rate: float = 0.001
    optimizer: str = "adam"  # adam | sgd
    activation: str = "relu"  # cell nonlinearity: relu | tanh
    loss: str = "mse"  # mse | mae
    batch_size: int = 32
    hidden_units: int = 32
    num_layers: int = 1
    time_step: int = 24
    weight_decay: float = 6e-6
    seed: int = 0

    SEARCH_RANGES = {
        "epochs": (20, 100),
        "learning_rate": (0.0001, 0.01),
        "batch_size": (10, 50),
    }

    def validate_ranges(self):
        """Enforce the tuning search ranges (used at config/decode time)."""
        for name, (lo, hi) in self.SEARCH_RANGES.items():
            value = getattr(self, name)
            if not lo <= value <= hi:
                raise ConfigError(f"{name}={value} outside [{lo}, {hi}]")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer {self.optimizer!r} not in (adam, sgd)")
        if self.activation not in ("relu", "tanh"):
            raise ConfigError(f"activation {self.activation!r} not in (relu, tanh)")
        if self.loss not in ("mse", "mae"):
            raise ConfigError(f"loss {self.loss!r} not in (mse, mae)")
        return self


@dataclass
class LstmModel:
    input_dim: int
    hidden_units: int
    num_layers: int
    horizon: int
    target_dim: int
    activation: str
    params: dict = field(default_factory=dict)
    trained_on: int = 0

    @property
    def output_dim(self):
        return self.horizon * self.target_dim

    def copy(self):
        return LstmModel(
            input_dim=self.input_dim,
            hidden_units=self.hidden_units,
            num_layers=self.num_layers,
            horizon=self.horizon,
            target_dim=self.target_dim,
            activation=self.activation,
            params={k: v.copy() for k, v in self.params.items()},
            trained_on=self.trained_on,
        )

    def weight_keys(self):
        """Parameter names subject to weight decay (biases excluded)."""
        return [k for k in self.params if not k.startswith("b")]


@dataclass
class PredictedSequence:
    origin: int  # index of the record whose arrival produced the prediction
    horizon: int
    values: np.ndarray  # (horizon, target_dim), normalized raw space


@dataclass
class TrainResult:
    model: LstmModel
    epoch_losses: list
    wall_seconds: float


def init_model(hyperparams, input_dim, horizon, target_dim):
    """Seeded uniform(-k, k) init with k = 1/sqrt(hidden); forget bias 1."""
    if input_dim <= 0 or horizon <= 0 or target_dim <= 0:
        raise ConfigError("model dimensions must be positive")
    H = hyperparams.hidden_units
    rng = np.random.default_rng(hyperparams.seed)
    k = 1.0 / np.sqrt(H)
    params = {}
    for layer in range(hyperparams.num_layers):
        in_l = input_dim if layer == 0 else H
        params[f"Wx{layer}"] = rng.uniform(-k, k, size=(in_l, 4 * H))
        params[f"Wh{layer}"] = rng.uniform(-k, k, size=(H, 4 * H))
        b = rng.uniform(-k, k, size=4 * H)
        b[H : 2 * H] = 1.0
        params[f"b{layer}"] = b
    out = horizon * target_dim
    params["Wy"] = rng.uniform(-k, k, size=(H, out))
    params["by"] = rng.uniform(-k, k, size=out)
    return LstmModel(
        input_dim=input_dim,
        hidden_units=H,
        num_layers=hyperparams.num_layers,
        horizon=horizon,
        target_dim=target_dim,
        activation=hyperparams.activation,
        params=params,
    )


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _cell_act(activation, x):
    if activation == "tanh":
        return np.tanh(x)
    return np.maximum(x, 0.0)


def _cell_act_grad(activation, x, fx):
    # derivative expressed from input x and activation value fx
    if activation == "tanh":
        return 1.0 - fx ** 2
    return (x > 0).astype(np.float64)


def _run_layers(params, X, num_layers, H, activation, collect=False):
    """LSTM recurrence over a (B, S, in) batch; returns last hidden state.

    With collect=True also returns the per-step caches needed by BPTT.
    """
    B, S, _ = X.shape
    caches = []
    layer_in = X
    for layer in range(num_layers):
        Wx = params[f"Wx{layer}"]
        Wh = params[f"Wh{layer}"]
        b = params[f"b{layer}"]
        zx = layer_in.reshape(B * S, -1) @ Wx
        zx = zx.reshape(B, S, 4 * H)
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        hs = np.empty((B, S, H))
        if collect:
            gates = np.empty((B, S, 4 * H))
            zgs = np.empty((B, S, H))
            cs = np.empty((B, S, H))
            act_cs = np.empty((B, S, H))
        for t in range(S):
            z = zx[:, t] + h @ Wh + b
            i = _sigmoid(z[:, :H])
            f = _sigmoid(z[:, H : 2 * H])
            zg = z[:, 2 * H : 3 * H]
            g = _cell_act(activation, zg)
            o = _sigmoid(z[:, 3 * H :])
            c_prev = c
            c = f * c_prev + i * g
            ac = _cell_act(activation, c)
            h = o * ac
            hs[:, t] = h
            if collect:
                gates[:, t, :H] = i
                gates[:, t, H : 2 * H] = f
                gates[:, t, 2 * H : 3 * H] = g
                gates[:, t, 3 * H :] = o
                zgs[:, t] = zg
                cs[:, t] = c
                act_cs[:, t] = ac
        if collect:
            caches.append({"X": layer_in, "gates": gates, "zgs": zgs,
                           "cs": cs, "act_cs": act_cs, "hs": hs})
        layer_in = hs
    return (h, caches) if collect else h


def forward(model, context):
    """Predict the next ``horizon`` records from S feature vectors.

    Pure function of (model, context); safe to call concurrently on an
    immutable model.
    """
    context = np.asarray(context, dtype=np.float64)
    if context.ndim != 2:
        raise DataError("context must be a (S, input_dim) matrix")
    if context.shape[1] != model.input_dim:
        raise DataError(
            f"context dim {context.shape[1]} != model input dim {model.input_dim}"
        )
    h = _run_layers(model.params, context[None, :, :], model.num_layers,
                    model.hidden_units, model.activation)
    out = h @ model.params["Wy"] + model.params["by"]
    return out.reshape(model.horizon, model.target_dim)


def predict_sequence(model, context, origin):
    return PredictedSequence(origin=origin, horizon=model.horizon,
                             values=forward(model, context))


def loss_and_gradients(model, contexts, targets, hyperparams):
    """Full loss (data term + L2 penalty) and analytic gradients via BPTT."""
    params = model.params
    H = model.hidden_units
    act = model.activation
    B, S, _ = contexts.shape
    h_last, caches = _run_layers(params, contexts, model.num_layers, H, act,
                                 collect=True)
    out = h_last @ params["Wy"] + params["by"]
    diff = out - targets
    size = diff.size
    if hyperparams.loss == "mae":
        data_loss = np.abs(diff).mean()
        dout = np.sign(diff) / size
    else:
        data_loss = (diff ** 2).mean()
        dout = 2.0 * diff / size
    wd = hyperparams.weight_decay
    penalty = 0.0
    if wd:
        penalty = 0.5 * wd * sum(
            float((params[k] ** 2).sum()) for k in model.weight_keys()
        )
    loss = data_loss + penalty

    dzy = dout
    grads = {
        "Wy": h_last.T @ dzy,
        "by": dzy.sum(axis=0),
    }
    dh_top = dzy @ params["Wy"].T

    # walk layers top to bottom; dh_steps holds the gradient flowing into
    # each step's hidden output of the current layer
    dh_steps = np.zeros((B, S, H))
    dh_steps[:, S - 1] = dh_top
    for layer in range(model.num_layers - 1, -1, -1):
        cache = caches[layer]
        Wh = params[f"Wh{layer}"]
        Wx = params[f"Wx{layer}"]
        gates, zgs, cs, act_cs, hs = (cache["gates"], cache["zgs"],
                                      cache["cs"], cache["act_cs"],
                                      cache["hs"])
        X_l = cache["X"]
        dZ = np.empty((B, S, 4 * H))
        dWh = np.zeros_like(Wh)
        dh = np.zeros((B, H))
        dc = np.zeros((B, H))
        for t in range(S - 1, -1, -1):
            dh = dh + dh_steps[:, t]
            i = gates[:, t, :H]
            f = gates[:, t, H : 2 * H]
            g = gates[:, t, 2 * H : 3 * H]
            o = gates[:, t, 3 * H :]
            ac = act_cs[:, t]
            c_prev = cs[:, t - 1] if t > 0 else np.zeros((B, H))
            do = dh * ac
            dc = dc + dh * o * _cell_act_grad(act, cs[:, t], ac)
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            dz = np.empty((B, 4 * H))
            dz[:, :H] = di * i * (1.0 - i)
            dz[:, H : 2 * H] = df * f * (1.0 - f)
            dz[:, 2 * H : 3 * H] = dg * _cell_act_grad(act, zgs[:, t], g)
            dz[:, 3 * H :] = do * o * (1.0 - o)
            dZ[:, t] = dz
            h_prev = hs[:, t - 1] if t > 0 else np.zeros((B, H))
            dWh += h_prev.T @ dz
            dh = dz @ Wh.T
            dc = dc * f
        in_dim = X_l.shape[2]
        grads[f"Wx{layer}"] = X_l.reshape(B * S, in_dim).T @ dZ.reshape(B * S, 4 * H)
        grads[f"Wh{layer}"] = dWh
        grads[f"b{layer}"] = dZ.sum(axis=(0, 1))
        if layer > 0:
            dh_steps = (dZ.reshape(B * S, 4 * H) @ Wx.T).reshape(B, S, H)
    if wd:
        for k in model.weight_keys():
            grads[k] = grads[k] + wd * params[k]
    return loss, grads


class _AdamState:
    """Adam with the usual defaults (beta1 0.9, beta2 0.999, eps 1e-8)."""

    def __init__(self, params):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        b1, b2, eps = 0.9, 0.999, 1e-8
        for k in params:
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mhat = self.m[k] / (1 - b1 ** self.t)
            vhat = self.v[k] / (1 - b2 ** self.t)
            params[k] -= lr * mhat / (np.sqrt(vhat) + eps)


class _SgdState:
    def step(self, params, grads, lr):
        for k in params:
            params[k] -= lr * grads[k]


def train(model, contexts, targets, hyperparams, epochs=None):
    """Minibatch BPTT training; returns a new model, the input is untouched.

    Batch order is a fixed-seed permutation per epoch, so runs are
    deterministic under (seed, data).
    """
    contexts = np.asarray(contexts, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if len(contexts) == 0:
        raise DataError("training dataset is empty")
    if targets.shape != (len(contexts), model.output_dim):
        raise DataError(
            f"targets shape {targets.shape} != ({len(contexts)}, {model.output_dim})"
        )
    epochs = hyperparams.epochs if epochs is None else epochs
    model = model.copy()
    opt = _AdamState(model.params) if hyperparams.optimizer == "adam" else _SgdState()
    rng = np.random.default_rng(hyperparams.seed)
    n = len(contexts)
    bs = max(1, min(hyperparams.batch_size, n))
    losses = []
    start = time.perf_counter()
    for _ in range(epochs):
        order = rng.permutation(n)
        batch_losses = []
        for lo in range(0, n, bs):
            sel = order[lo : lo + bs]
            loss, grads = loss_and_gradients(model, contexts[sel], targets[sel],
                                             hyperparams)
            if not np.isfinite(loss):
                raise NumericError(
                    "training loss is not finite; learning rate "
                    f"{hyperparams.learning_rate} likely too large"
                )
            opt.step(model.params, grads, hyperparams.learning_rate)
            batch_losses.append(loss)
        losses.append(float(np.mean(batch_losses)))
    if epochs > 0:
        model.trained_on += n
    return TrainResult(model=model, epoch_losses=losses,
                       wall_seconds=time.perf_counter() - start)


def build_supervised_pairs(features, normalized, time_step, horizon):
    """Self-labeled pairs: S feature vectors -> next L normalized records."""
    features = np.asarray(features, dtype=np.float64)
    normalized = np.asarray(normalized, dtype=np.float64)
    n = len(features)
    if len(normalized) != n:
        raise DataError("features and normalized records must align")
    count = n - time_step - horizon + 1
    if count < 1:
        raise WindowTooShortError(
            f"window of {n} records cannot form a pair (need >= "
            f"{time_step + horizon})"
        )
    contexts = np.empty((count, time_step, features.shape[1]))
    targets = np.empty((count, horizon * normalized.shape[1]))
    for idx in range(count):
        end = idx + time_step
        contexts[idx] = features[idx:end]
        targets[idx] = normalized[end : end + horizon].ravel()
    return contexts, targets


def retrain(model, features, normalized, hyperparams, mode="warm"):
    """Refresh the model on a recent window of the stream.

    warm fine-tunes the existing weights for epochs/4 (at least 5) epochs;
    cold re-initializes from the hyperparameter seed and trains fully.
    """
    if mode not in ("warm", "cold"):
        raise ConfigError(f"retrain mode {mode!r} not in (warm, cold)")
    contexts, targets = build_supervised_pairs(
        features, normalized, hyperparams.time_step, model.horizon
    )
    if mode == "cold":
        fresh = init_model(hyperparams, model.input_dim, model.horizon,
                           model.target_dim)
        return train(fresh, contexts, targets, hyperparams)
    epochs = max(hyperparams.epochs // 4, 5)
    return train(model, contexts, targets, hyperparams, epochs=epochs)


# ---------------------------------------------------------------------------
# serialization


def save_model_npz(model, path):
    """Bit-exact binary round trip."""
    meta = dict(
        input_dim=model.input_dim,
        hidden_units=model.hidden_units,
        num_layers=model.num_layers,
        horizon=model.horizon,
        target_dim=model.target_dim,
        trained_on=model.trained_on,
    )
    np.savez(path, __meta__=json.dumps({**meta, "activation": model.activation,
                                        "format": MODEL_FORMAT}),
             **model.params)


def load_model_npz(path):
    data = np.load(path, allow_pickle=False)
    meta = json.loads(str(data["__meta__"]))
    if meta.get("format") != MODEL_FORMAT:
        raise ConfigError(f"unsupported model format {meta.get('format')!r}")
    params = {k: data[k] for k in data.files if k != "__meta__"}
    return LstmModel(
        input_dim=meta["input_dim"],
        hidden_units=meta["hidden_units"],
        num_layers=meta["num_layers"],
        horizon=meta["horizon"],
        target_dim=meta["target_dim"],
        activation=meta["activation"],
        params=params,
        trained_on=meta["trained_on"],
    )


def model_to_json(model):
    doc = {
        "format": MODEL_FORMAT,
        "input_dim": model.input_dim,
        "hidden_units": model.hidden_units,
        "num_layers": model.num_layers,
        "horizon": model.horizon,
        "target_dim": model.target_dim,
        "activation": model.activation,
        "trained_on": model.trained_on,
        "params": {k: v.tolist() for k, v in sorted(model.params.items())},
    }
    return json.dumps(doc, sort_keys=True)


def model_from_json(text):
    doc = json.loads(text)
    if doc.get("format") != MODEL_FORMAT:
        raise ConfigError(f"unsupported model format {doc.get('format')!r}")
    params = {k: np.asarray(v, dtype=np.float64) for k, v in doc["params"].items()}
    return LstmModel(
        input_dim=doc["input_dim"],
        hidden_units=doc["hidden_units"],
        num_layers=doc["num_layers"],
        horizon=doc["horizon"],
        target_dim=doc["target_dim"],
        activation=doc["activation"],
        params=params,
        trained_on=doc["trained_on"],
    )
