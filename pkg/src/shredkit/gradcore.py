"""Minimal reverse-mode automatic differentiation on dense float64 arrays, plus ADAM.

A :class:`Tensor` wraps a numpy array. Applying a primitive to tensors that
require gradients attaches the producing operation to the output; calling
:func:`backward` on a scalar loss orders those operations topologically (a
:class:`ComputationRecord`) and sweeps them in reverse, accumulating
``d loss / d leaf`` into the ``grad`` of every leaf tensor that asked for it.

Besides the elementary primitives there is one fused primitive,
:func:`lstm_sequence`, that runs a whole LSTM layer over a sequence with a
hand-written backward pass; it agrees with the same recursion composed from
elementary primitives and keeps training fast.
"""

import contextlib
import contextvars
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, ShapeError, StateError

_grad_enabled = contextvars.ContextVar("grad_enabled", default=True)


@contextlib.contextmanager
def no_grad():
    """Evaluate primitives without recording them."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


class Tensor:
    """Dense array node in the computation graph."""

    __slots__ = ("value", "requires_grad", "grad", "name", "op", "_parents", "_backward")

    def __init__(self, value, requires_grad=False, name=None):
        self.value = np.array(value, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self.op = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def is_leaf(self):
        return self.op is None

    def zero_grad(self):
        self.grad = None

    def numpy(self):
        return self.value

    def __repr__(self):
        tag = f", op={self.op}" if self.op else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __mul__(self, other):
        return hadamard(self, other)

    def __rmul__(self, other):
        return hadamard(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value, op, parents, backward):
    out = Tensor(value)
    if _grad_enabled.get() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.op = op
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(grad, shape):
    """Sum ``grad`` back down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementary primitives


def matmul(a, b):
    """Matrix product of 2-D tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.value, b.value

    def backward(g):
        return g @ bv.T, av.T @ g

    return _make(av @ bv, "matmul", (a, b), backward)


def add(a, b):
    """Elementwise sum with numpy broadcasting (e.g. a bias over the batch)."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _make(a.value + b.value, "add", (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), -_unbroadcast(g, sb)

    return _make(a.value - b.value, "sub", (a, b), backward)


def hadamard(a, b):
    """Elementwise product."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("hadamard", a, b)
    av, bv = a.value, b.value

    def backward(g):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return _make(av * bv, "hadamard", (a, b), backward)


def _sigmoid(x):
    # tanh form never overflows
    return 0.5 * np.tanh(0.5 * x) + 0.5


def sigmoid(x):
    x = as_tensor(x)
    y = _sigmoid(x.value)
    return _make(y, "sigmoid", (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.value)
    return _make(y, "tanh", (x,), lambda g: (g * (1.0 - y * y),))


def relu(x):
    x = as_tensor(x)
    pos = x.value > 0
    return _make(np.where(pos, x.value, 0.0), "relu", (x,), lambda g: (g * pos,))


def concat(tensors, axis=-1):
    """Join tensors along ``axis`` (the last one by default)."""
    tensors = [as_tensor(t) for t in tensors]
    try:
        value = np.concatenate([t.value for t in tensors], axis=axis)
    except ValueError:
        shapes = " and ".join(str(t.shape) for t in tensors)
        raise ShapeError(f"concat: incompatible shapes {shapes}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(value, "concat", tuple(tensors), backward)


def take(x, key):
    """Index or slice a tensor with any numpy basic/advanced index ``key``."""
    x = as_tensor(x)
    try:
        value = x.value[key]
    except IndexError as exc:
        raise ShapeError(f"slice: index {key!r} invalid for shape {x.shape}: {exc}") from None
    shape = x.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, key, g)
        return (out,)

    return _make(np.array(value), "slice", (x,), backward)


slice_ = take


def transpose(x):
    x = as_tensor(x)
    if x.value.ndim != 2:
        raise ShapeError(f"transpose: expected a 2-D tensor, got shape {x.shape}")
    return _make(x.value.T.copy(), "transpose", (x,), lambda g: (g.T,))


def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape
    try:
        value = x.value.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {old} to {shape}") from None
    return _make(value.copy(), "reshape", (x,), lambda g: (g.reshape(old),))


def reduce_sum(x):
    x = as_tensor(x)
    shape = x.shape
    return _make(np.array(x.value.sum()), "sum", (x,), lambda g: (np.full(shape, g),))


def mse_loss(prediction, target):
    """Mean over all entries of the squared difference."""
    prediction, target = as_tensor(prediction), as_tensor(target)
    if prediction.shape != target.shape:
        raise ShapeError(f"mse_loss: incompatible shapes {prediction.shape} and {target.shape}")
    diff = prediction.value - target.value
    n = diff.size

    def backward(g):
        d = (2.0 / n) * g * diff
        return d, -d

    return _make(np.array(np.mean(diff * diff)), "mse_loss", (prediction, target), backward)


# ---------------------------------------------------------------------------
# fused LSTM layer


def lstm_sequence(inputs, w_o, w_f, w_i, w_g, b_o, b_f, b_i, b_g):
    """Run one LSTM layer over a batch of sequences from zero initial state.

    ``inputs`` has shape (batch, steps, input_size); each gate matrix maps
    the concatenation ``[h_prev, v_t]`` to the hidden size, so it has shape
    (hidden, hidden + input_size). Returns the hidden states of every step,
    shape (batch, steps, hidden).
    """
    tensors = [as_tensor(t) for t in (inputs, w_o, w_f, w_i, w_g, b_o, b_f, b_i, b_g)]
    x = tensors[0].value
    if x.ndim != 3:
        raise ShapeError(f"lstm_sequence: inputs must be (batch, steps, features), got {x.shape}")
    nb, steps, nin = x.shape
    hidden = tensors[1].shape[0]
    for t in tensors[1:5]:
        if t.shape != (hidden, hidden + nin):
            raise ShapeError(
                f"lstm_sequence: gate matrix shape {t.shape} incompatible with inputs {x.shape}"
            )
    for t in tensors[5:]:
        if t.shape != (hidden,):
            raise ShapeError(f"lstm_sequence: bias shape {t.shape} incompatible with hidden {hidden}")

    w = np.concatenate([t.value for t in tensors[1:5]], axis=0)  # (4H, H + I), gates o f i g
    b = np.concatenate([t.value for t in tensors[5:]])
    wh, wx = w[:, :hidden], w[:, hidden:]
    h3 = 3 * hidden
    # time-major working arrays
    xt = np.ascontiguousarray(x.transpose(1, 0, 2))
    xproj = xt @ wx.T + b
    gates = np.empty((steps, nb, 4 * hidden))
    cells = np.zeros((steps + 1, nb, hidden))  # cells[t + 1] is c_t; cells[0] the zero state
    hs = np.zeros((steps + 1, nb, hidden))
    for t in range(steps):
        a = xproj[t] + hs[t] @ wh.T
        act = gates[t]
        act[:, :h3] = _sigmoid(a[:, :h3])
        act[:, h3:] = np.tanh(a[:, h3:])
        c = act[:, hidden: 2 * hidden] * cells[t] + act[:, 2 * hidden: h3] * act[:, h3:]
        cells[t + 1] = c
        hs[t + 1] = act[:, :hidden] * np.tanh(c)
    tanh_c = np.tanh(cells[1:])

    def backward(grad_h):
        grad_t = grad_h.transpose(1, 0, 2)
        dA = np.empty_like(gates)
        dh_next = np.zeros((nb, hidden))
        dc_next = np.zeros((nb, hidden))
        for t in range(steps - 1, -1, -1):
            act = gates[t]
            o, f = act[:, :hidden], act[:, hidden: 2 * hidden]
            i, g = act[:, 2 * hidden: h3], act[:, h3:]
            tc = tanh_c[t]
            dh = grad_t[t] + dh_next
            dc = dh * o * (1.0 - tc * tc) + dc_next
            da = dA[t]
            da[:, :hidden] = dh * tc * o * (1.0 - o)
            da[:, hidden: 2 * hidden] = dc * cells[t] * f * (1.0 - f)
            da[:, 2 * hidden: h3] = dc * g * i * (1.0 - i)
            da[:, h3:] = dc * i * (1.0 - g * g)
            dh_next = da @ wh
            dc_next = dc * f
        flat = dA.reshape(-1, 4 * hidden)
        dwh = flat.T @ hs[:-1].reshape(-1, hidden)
        dwx = flat.T @ xt.reshape(-1, nin)
        dw = np.concatenate([dwh, dwx], axis=1)
        db = flat.sum(axis=0)
        dx = (dA @ wx).transpose(1, 0, 2)
        return (dx, *np.split(dw, 4, axis=0), *np.split(db, 4))

    hs_out = np.ascontiguousarray(hs[1:].transpose(1, 0, 2))
    return _make(hs_out, "lstm_sequence", tuple(tensors), backward)


# ---------------------------------------------------------------------------
# reverse sweep


@dataclass
class ComputationRecord:
    """Recorded operations reachable from a tensor, inputs before outputs."""

    operations: list = field(default_factory=list)

    @classmethod
    def from_output(cls, out):
        order = []
        seen = set()
        stack = [(out, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        return cls([n for n in order if not n.is_leaf])

    def __len__(self):
        return len(self.operations)


def backward(loss):
    """Accumulate ``d loss / d leaf`` into every leaf tensor with ``requires_grad``."""
    if loss.value.size != 1:
        raise InvalidArgumentError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise InvalidArgumentError("loss is not connected to any tensor requiring gradients")
    if loss.is_leaf:
        loss.grad = (loss.grad if loss.grad is not None else 0.0) + np.ones(loss.shape)
        return
    record = ComputationRecord.from_output(loss)
    grads = {id(loss): np.ones(loss.shape)}
    for node in reversed(record.operations):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            if parent.is_leaf:
                parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
            elif id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg


# ---------------------------------------------------------------------------
# ADAM


@dataclass
class AdamState:
    """Moment accumulators and hyperparameters for a fixed parameter list."""

    first_moment: list
    second_moment: list
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0

    @classmethod
    def for_params(cls, params, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        if learning_rate <= 0 or epsilon <= 0:
            raise InvalidArgumentError("learning rate and epsilon must be positive")
        if not (0 < beta1 < 1 and 0 < beta2 < 1):
            raise InvalidArgumentError(f"betas must lie in (0, 1), got {beta1}, {beta2}")
        return cls(
            first_moment=[np.zeros(p.shape) for p in params],
            second_moment=[np.zeros(p.shape) for p in params],
            learning_rate=learning_rate,
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )


def adam_step(params, state):
    """One bias-corrected ADAM update in place; gradients are reset afterwards."""
    missing = [p.name or i for i, p in enumerate(params) if p.grad is None]
    if missing:
        raise StateError(f"adam_step: no gradient for parameters {missing}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, m, v in zip(params, state.first_moment, state.second_moment):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.value -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        p.grad = None
    return params, state
