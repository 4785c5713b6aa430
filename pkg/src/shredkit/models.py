"""Network architectures and their training loop.

Three models share one set of building blocks:

* ``SdnModel``        shallow decoder from one measurement vector to the state,
* ``ShredModel``      LSTM stack over a lag window composed with a shallow decoder,
* ``ForecasterModel`` LSTM stack with a linear head predicting the next measurement.

All networks work on scaled data. ``ShredModel`` and ``SdnModel`` optionally
carry the state scaler so that their public prediction methods return
physical units.
"""

from dataclasses import dataclass, field

import numpy as np

from . import gradcore as gc
from .errors import InvalidArgumentError, ShapeError, TrainingDivergedError

GATES = ("o", "f", "i", "g")


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


# ---------------------------------------------------------------------------
# building blocks


@dataclass
class LstmCellWeights:
    """Gate matrices of shape (hidden, hidden + input) acting on ``[h_prev, v_t]``."""

    w_o: gc.Tensor
    w_f: gc.Tensor
    w_i: gc.Tensor
    w_g: gc.Tensor
    b_o: gc.Tensor
    b_f: gc.Tensor
    b_i: gc.Tensor
    b_g: gc.Tensor

    def __post_init__(self):
        shape = self.w_o.shape
        for gate in GATES:
            w, b = getattr(self, f"w_{gate}"), getattr(self, f"b_{gate}")
            if w.shape != shape or len(shape) != 2 or shape[1] <= shape[0]:
                raise ShapeError(f"gate matrix w_{gate} has shape {w.shape}, expected {shape}")
            if b.shape != (shape[0],):
                raise ShapeError(f"bias b_{gate} has shape {b.shape}, expected ({shape[0]},)")

    @classmethod
    def init(cls, input_size, hidden_size, rng):
        fan_in = hidden_size + input_size
        kw = {}
        for gate in GATES:
            kw[f"w_{gate}"] = gc.Tensor(
                _uniform(rng, (hidden_size, fan_in), fan_in), requires_grad=True
            )
        for gate in GATES:
            kw[f"b_{gate}"] = gc.Tensor(np.zeros(hidden_size), requires_grad=True)
        return cls(**kw)

    @property
    def hidden_size(self):
        return self.w_o.shape[0]

    @property
    def input_size(self):
        return self.w_o.shape[1] - self.w_o.shape[0]

    def named_parameters(self, prefix=""):
        names = [f"w_{g}" for g in GATES] + [f"b_{g}" for g in GATES]
        return [(prefix + n, getattr(self, n)) for n in names]

    def tensors(self):
        return [t for _, t in self.named_parameters()]


@dataclass
class LstmStack:
    layers: list

    def __post_init__(self):
        if not self.layers:
            raise InvalidArgumentError("an LSTM stack needs at least one layer")
        hidden = self.layers[0].hidden_size
        for depth, layer in enumerate(self.layers):
            if layer.hidden_size != hidden:
                raise ShapeError(f"layer {depth} hidden size {layer.hidden_size} != {hidden}")
            if depth and layer.input_size != hidden:
                raise ShapeError(f"layer {depth} input size {layer.input_size} != {hidden}")

    @classmethod
    def init(cls, input_size, hidden_size, num_layers, rng):
        layers = [
            LstmCellWeights.init(input_size if d == 0 else hidden_size, hidden_size, rng)
            for d in range(num_layers)
        ]
        return cls(layers)

    @property
    def num_layers(self):
        return len(self.layers)

    @property
    def hidden_size(self):
        return self.layers[0].hidden_size

    @property
    def input_size(self):
        return self.layers[0].input_size

    def named_parameters(self, prefix=""):
        out = []
        for d, layer in enumerate(self.layers):
            out += layer.named_parameters(f"{prefix}{d}.")
        return out


@dataclass
class DenseLayer:
    weight: gc.Tensor  # (out, in)
    bias: gc.Tensor

    @classmethod
    def init(cls, n_in, n_out, rng):
        return cls(
            gc.Tensor(_uniform(rng, (n_out, n_in), n_in), requires_grad=True),
            gc.Tensor(np.zeros(n_out), requires_grad=True),
        )

    def __call__(self, x):
        if x.shape[-1] != self.weight.shape[1]:
            raise ShapeError(f"dense: input shape {x.shape} incompatible with weight {self.weight.shape}")
        return gc.add(gc.matmul(x, gc.transpose(self.weight)), self.bias)

    def named_parameters(self, prefix=""):
        return [(prefix + "weight", self.weight), (prefix + "bias", self.bias)]


@dataclass
class ShallowDecoder:
    """Dense layers with ReLU between hidden layers and a linear output."""

    layers: list

    @classmethod
    def init(cls, input_size, hidden_sizes, output_size, rng):
        sizes = [input_size, *hidden_sizes, output_size]
        return cls([DenseLayer.init(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])])

    @property
    def input_size(self):
        return self.layers[0].weight.shape[1]

    @property
    def output_size(self):
        return self.layers[-1].weight.shape[0]

    @property
    def hidden_sizes(self):
        return [layer.weight.shape[0] for layer in self.layers[:-1]]

    def __call__(self, x):
        for layer in self.layers[:-1]:
            x = gc.relu(layer(x))
        return self.layers[-1](x)

    def named_parameters(self, prefix=""):
        out = []
        for d, layer in enumerate(self.layers):
            out += layer.named_parameters(f"{prefix}{d}.")
        return out


# ---------------------------------------------------------------------------
# LSTM evaluation


def _as_batch(x, ndim):
    """Promote an unbatched input to a batch of one; report whether we did."""
    t = gc.as_tensor(x)
    if t.value.ndim == ndim - 1:
        return gc.reshape(t, (1, *t.shape)), True
    if t.value.ndim != ndim:
        raise ShapeError(f"expected a {ndim - 1}-D or {ndim}-D input, got shape {t.shape}")
    return t, False


def lstm_cell_step(weights, h_prev, c_prev, v_t):
    """One LSTM recursion step built from elementary primitives.

    Accepts unbatched vectors or (batch, features) arrays and returns the
    new ``(h_t, c_t)`` tensors with the same batching.
    """
    h_prev, squeeze = _as_batch(h_prev, 2)
    c_prev, _ = _as_batch(c_prev, 2)
    v_t, _ = _as_batch(v_t, 2)
    hidden = weights.hidden_size
    if h_prev.shape[1] != hidden or c_prev.shape[1] != hidden:
        raise ShapeError(f"lstm_cell_step: state shapes {h_prev.shape}, {c_prev.shape} vs hidden {hidden}")
    if v_t.shape[1] != weights.input_size:
        raise ShapeError(f"lstm_cell_step: input shape {v_t.shape} vs input size {weights.input_size}")
    hv = gc.concat([h_prev, v_t])

    def gate(w, b):
        return gc.add(gc.matmul(hv, gc.transpose(w)), b)

    o = gc.sigmoid(gate(weights.w_o, weights.b_o))
    f = gc.sigmoid(gate(weights.w_f, weights.b_f))
    i = gc.sigmoid(gate(weights.w_i, weights.b_i))
    g = gc.tanh(gate(weights.w_g, weights.b_g))
    c = gc.add(gc.hadamard(f, c_prev), gc.hadamard(i, g))
    h = gc.hadamard(o, gc.tanh(c))
    if squeeze:
        return gc.take(h, 0), gc.take(c, 0)
    return h, c


def lstm_encode(stack, window, lag=None, fused=True):
    """Final top-layer hidden state after reading a window in temporal order.

    Parameters
    ----------
    stack : LstmStack
    window : array_like or Tensor, shape (k, sensors) or (batch, k, sensors)
    lag : int, optional
        Required window length; checked when given.
    fused : bool
        Use the fused sequence primitive (fast) or step-by-step composition
        of elementary primitives.
    """
    x, squeeze = _as_batch(window, 3)
    if lag is not None and x.shape[1] != lag:
        raise InvalidArgumentError(f"window has {x.shape[1]} steps, model lag is {lag}")
    if x.shape[2] != stack.input_size:
        raise ShapeError(f"window feature size {x.shape[2]} != encoder input size {stack.input_size}")
    if fused:
        seq = x
        for layer in stack.layers:
            seq = gc.lstm_sequence(seq, *layer.tensors())
        h = gc.take(seq, (slice(None), -1))
    else:
        nb, steps = x.shape[0], x.shape[1]
        inputs = [gc.take(x, (slice(None), t)) for t in range(steps)]
        for layer in stack.layers:
            h = gc.Tensor(np.zeros((nb, stack.hidden_size)))
            c = gc.Tensor(np.zeros((nb, stack.hidden_size)))
            outputs = []
            for v in inputs:
                h, c = lstm_cell_step(layer, h, c, v)
                outputs.append(h)
            inputs = outputs
    return gc.take(h, 0) if squeeze else h


# ---------------------------------------------------------------------------
# models


def _scale_out(y, scaler):
    """Map scaled network output back to physical units inside the graph."""
    if scaler is None:
        return y
    return gc.add(gc.hadamard(y, scaler.span), scaler.minimum)


@dataclass
class ShredModel:
    encoder: LstmStack
    decoder: ShallowDecoder
    lag: int
    sensor_scaler: object = None
    state_scaler: object = None
    sensors: tuple = None

    def __post_init__(self):
        if self.decoder.input_size != self.encoder.hidden_size:
            raise ShapeError(
                f"decoder input {self.decoder.input_size} != encoder hidden {self.encoder.hidden_size}"
            )

    kind = "shred"

    def named_parameters(self):
        return self.encoder.named_parameters("encoder.") + self.decoder.named_parameters("decoder.")

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def forward_batch(self, windows):
        """Scaled windows (batch, k, sensors) to scaled states (batch, m)."""
        return self.decoder(lstm_encode(self.encoder, windows, lag=self.lag))

    def predict(self, windows):
        """Physical-unit states for a batch of scaled windows, as an array."""
        with gc.no_grad():
            return _batched(lambda w: shred_forward(self, w).value, windows)


@dataclass
class SdnModel:
    decoder: ShallowDecoder
    sensor_scaler: object = None
    state_scaler: object = None
    sensors: tuple = None

    kind = "sdn"

    def named_parameters(self):
        return self.decoder.named_parameters("decoder.")

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def forward_batch(self, inputs):
        return self.decoder(gc.as_tensor(inputs))

    def predict(self, inputs):
        with gc.no_grad():
            return _batched(
                lambda y: _scale_out(sdn_forward(self.decoder, y), self.state_scaler).value, inputs
            )


@dataclass
class ForecasterModel:
    encoder: LstmStack
    head: DenseLayer
    lag: int
    sensor_scaler: object = None
    sensors: tuple = None

    def __post_init__(self):
        if self.head.weight.shape != (self.encoder.input_size, self.encoder.hidden_size):
            raise ShapeError(
                f"head shape {self.head.weight.shape} must map hidden size to sensor count"
            )

    kind = "forecaster"

    def named_parameters(self):
        return self.encoder.named_parameters("encoder.") + self.head.named_parameters("head.")

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def forward_batch(self, windows):
        return self.head(lstm_encode(self.encoder, windows, lag=self.lag))


def _batched(fn, inputs, size=512):
    inputs = np.asarray(inputs, dtype=np.float64)
    return np.concatenate([fn(inputs[s: s + size]) for s in range(0, len(inputs), size)])


def build_shred(n_sensors, state_dim, lag, hidden_size=64, num_layers=2,
                decoder_sizes=(350, 400), seed=0):
    rng = np.random.default_rng(seed)
    encoder = LstmStack.init(n_sensors, hidden_size, num_layers, rng)
    decoder = ShallowDecoder.init(hidden_size, decoder_sizes, state_dim, rng)
    return ShredModel(encoder, decoder, lag)


def build_sdn(n_sensors, state_dim, hidden_sizes=(350, 400), seed=0):
    rng = np.random.default_rng(seed)
    return SdnModel(ShallowDecoder.init(n_sensors, hidden_sizes, state_dim, rng))


def build_forecaster(n_sensors, lag, hidden_size=64, num_layers=2, seed=0):
    rng = np.random.default_rng(seed)
    encoder = LstmStack.init(n_sensors, hidden_size, num_layers, rng)
    return ForecasterModel(encoder, DenseLayer.init(hidden_size, n_sensors, rng), lag)


def shred_forward(model, window):
    """Full-state estimate in physical units from scaled measurement window(s)."""
    x, squeeze = _as_batch(window, 3)
    y = _scale_out(model.decoder(lstm_encode(model.encoder, x, lag=model.lag)), model.state_scaler)
    return gc.take(y, 0) if squeeze else y


def sdn_forward(decoder, y):
    """Evaluate a shallow decoder on one measurement vector or a batch of them."""
    x, squeeze = _as_batch(y, 2)
    if x.shape[1] != decoder.input_size:
        raise ShapeError(f"sdn_forward: measurement size {x.shape[1]} != decoder input {decoder.input_size}")
    out = decoder(x)
    return gc.take(out, 0) if squeeze else out


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 300
    batch_size: int = 64
    learning_rate: float = 1e-3
    early_stop_patience: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.max_epochs < 0:
            raise InvalidArgumentError(f"max_epochs must be nonnegative, got {self.max_epochs}")
        if self.batch_size < 1 or self.early_stop_patience < 1:
            raise InvalidArgumentError("batch_size and early_stop_patience must be positive")
        if self.learning_rate <= 0:
            raise InvalidArgumentError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.max_epochs and self.early_stop_patience > self.max_epochs:
            raise InvalidArgumentError("early_stop_patience cannot exceed max_epochs")


@dataclass(frozen=True)
class EpochLoss:
    epoch: int
    train: float
    validation: float


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)
    best_epoch: int = -1

    def __len__(self):
        return len(self.epochs)

    @property
    def validation(self):
        return [e.validation for e in self.epochs]

    @property
    def train(self):
        return [e.train for e in self.epochs]


def evaluate_loss(model, inputs, targets, batch_size=512):
    """Mean squared error of ``model`` over a whole split, without recording."""
    total = 0.0
    with gc.no_grad():
        for s in range(0, len(inputs), batch_size):
            pred = model.forward_batch(inputs[s: s + batch_size]).value
            total += np.sum((pred - targets[s: s + batch_size]) ** 2)
    return total / targets.size


def train(model, data, config, context=""):
    """Fit ``model`` to ``data`` with ADAM and validation early stopping.

    Parameters
    ----------
    model : ShredModel, SdnModel or ForecasterModel
    data : WindowedDataset-like
        Exposes ``inputs``, ``targets`` (scaled) and ``split`` with
        ``train`` / ``validation`` index arrays.
    config : TrainConfig
    context : str
        Attached to a divergence error to identify the run.

    Returns
    -------
    model, TrainHistory
        The model holds the parameters of the epoch with the lowest
        validation loss.
    """
    train_idx = np.asarray(data.split.train)
    val_idx = np.asarray(data.split.validation)
    if train_idx.size == 0 or val_idx.size == 0:
        raise InvalidArgumentError("training needs nonempty train and validation splits")
    history = TrainHistory()
    if config.max_epochs == 0:
        return model, history
    x_train, y_train = data.inputs[train_idx], data.targets[train_idx]
    x_val, y_val = data.inputs[val_idx], data.targets[val_idx]
    params = model.parameters()
    state = gc.AdamState.for_params(params, learning_rate=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    best = np.inf
    best_values = [p.value.copy() for p in params]
    stale = 0
    n = len(train_idx)
    for epoch in range(config.max_epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, config.batch_size):
            idx = order[s: s + config.batch_size]
            loss = gc.mse_loss(model.forward_batch(x_train[idx]), y_train[idx])
            gc.backward(loss)
            gc.adam_step(params, state)
            total += float(loss.value) * len(idx)
        train_loss = total / n
        val_loss = evaluate_loss(model, x_val, y_val)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise TrainingDivergedError(epoch, context)
        history.epochs.append(EpochLoss(epoch, train_loss, val_loss))
        if val_loss < best:
            best = val_loss
            history.best_epoch = epoch
            best_values = [p.value.copy() for p in params]
            stale = 0
        else:
            stale += 1
            if stale >= config.early_stop_patience:
                break
    for p, v in zip(params, best_values):
        p.value[...] = v
    return model, history


# ---------------------------------------------------------------------------
# forecasting


def forecaster_train_target(measurements, k):
    """Supervised pairs mapping each k-step window to the next measurement.

    Returns ``(windows, targets)`` of shapes (T - k, k, s) and (T - k, s),
    in temporal order.
    """
    y = np.asarray(measurements, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if k < 1:
        raise InvalidArgumentError(f"lag must be positive, got {k}")
    if len(y) <= k:
        raise InvalidArgumentError(f"series of length {len(y)} too short for lag {k}")
    n = len(y) - k
    windows = np.stack([y[t: t + k] for t in range(n)])
    return windows, y[k:].copy()


def rollout(model, seed_window, p):
    """Autoregressive forecast of ``p`` measurements following ``seed_window``."""
    if p < 1:
        raise InvalidArgumentError(f"forecast horizon must be at least 1, got {p}")
    window = np.array(seed_window, dtype=np.float64)
    if window.ndim != 2 or len(window) != model.lag:
        raise InvalidArgumentError(f"seed window must have shape ({model.lag}, sensors), got {window.shape}")
    out = np.empty((p, window.shape[1]))
    with gc.no_grad():
        for step in range(p):
            nxt = model.forward_batch(window[None]).value[0]
            out[step] = nxt
            window = np.vstack([window[1:], nxt])
    return out
