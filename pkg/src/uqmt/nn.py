"""Small feed-forward networks on top of a numpy reverse-mode autodiff.

Everything here runs in float64 on the CPU. A :class:`Tensor` records the
operation that produced it and the tensors it was computed from; calling
:func:`backward` on a scalar tensor fills ``grad`` on every node of the graph.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    """Raised when a loss or gradient becomes non-finite during training."""


def _as_rng(rng: np.random.Generator | int | None) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A node in the computation graph."""

    __slots__ = ("value", "grad", "parents", "op", "name", "_backward")
    # make numpy arrays defer to our reflected operators
    __array_ufunc__ = None

    def __init__(self, value, parents: tuple["Tensor", ...] = (), op: str = "leaf",
                 name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.parents = parents
        self.op = op
        self.name = name
        self._backward: Callable[[np.ndarray], None] | None = None

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.value.shape})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    # arithmetic -----------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = _lift(other)
        out = Tensor(self.value + other.value, (self, other), "add")

        def _bw(g):
            self.grad += _unbroadcast(g, self.shape)
            other.grad += _unbroadcast(g, other.shape)

        out._backward = _bw
        return out

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        out = Tensor(-self.value, (self,), "neg")

        def _bw(g):
            self.grad -= g

        out._backward = _bw
        return out

    def __sub__(self, other) -> "Tensor":
        return self + (-_lift(other))

    def __rsub__(self, other) -> "Tensor":
        return _lift(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = _lift(other)
        out = Tensor(self.value * other.value, (self, other), "mul")

        def _bw(g):
            self.grad += _unbroadcast(g * other.value, self.shape)
            other.grad += _unbroadcast(g * self.value, other.shape)

        out._backward = _bw
        return out

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = _lift(other)
        out = Tensor(self.value / other.value, (self, other), "div")

        def _bw(g):
            self.grad += _unbroadcast(g / other.value, self.shape)
            other.grad += _unbroadcast(-g * self.value / other.value**2, other.shape)

        out._backward = _bw
        return out

    def __rtruediv__(self, other) -> "Tensor":
        return _lift(other) / self

    def __pow__(self, exponent: float) -> "Tensor":
        if isinstance(exponent, Tensor):
            raise TypeError("only constant exponents are supported")
        out = Tensor(self.value**exponent, (self,), "pow")

        def _bw(g):
            self.grad += g * exponent * self.value ** (exponent - 1)

        out._backward = _bw
        return out

    def __matmul__(self, other: "Tensor") -> "Tensor":
        other = _lift(other)
        out = Tensor(self.value @ other.value, (self, other), "matmul")

        def _bw(g):
            self.grad += g @ other.value.T
            other.grad += self.value.T @ g

        out._backward = _bw
        return out

    def __getitem__(self, index) -> "Tensor":
        out = Tensor(self.value[index], (self,), "slice")

        def _bw(g):
            np.add.at(self.grad, index, g)

        out._backward = _bw
        return out

    # elementwise functions ---------------------------------------------------

    def exp(self) -> "Tensor":
        val = np.exp(self.value)
        out = Tensor(val, (self,), "exp")

        def _bw(g):
            self.grad += g * val

        out._backward = _bw
        return out

    def log(self) -> "Tensor":
        out = Tensor(np.log(self.value), (self,), "log")

        def _bw(g):
            self.grad += g / self.value

        out._backward = _bw
        return out

    def tanh(self) -> "Tensor":
        val = np.tanh(self.value)
        out = Tensor(val, (self,), "tanh")

        def _bw(g):
            self.grad += g * (1.0 - val**2)

        out._backward = _bw
        return out

    def relu(self) -> "Tensor":
        mask = self.value > 0
        out = Tensor(self.value * mask, (self,), "relu")

        def _bw(g):
            self.grad += g * mask

        out._backward = _bw
        return out

    def clip(self, lo: float, hi: float) -> "Tensor":
        inside = (self.value >= lo) & (self.value <= hi)
        out = Tensor(np.clip(self.value, lo, hi), (self,), "clip")

        def _bw(g):
            self.grad += g * inside

        out._backward = _bw
        return out

    def abs(self) -> "Tensor":
        sign = np.sign(self.value)
        out = Tensor(np.abs(self.value), (self,), "abs")

        def _bw(g):
            self.grad += g * sign

        out._backward = _bw
        return out

    # reductions ---------------------------------------------------------------

    def sum(self) -> "Tensor":
        out = Tensor(self.value.sum(), (self,), "sum")

        def _bw(g):
            self.grad += np.broadcast_to(g, self.shape)

        out._backward = _bw
        return out

    def mean(self) -> "Tensor":
        n = self.value.size
        out = Tensor(self.value.mean(), (self,), "mean")

        def _bw(g):
            self.grad += np.broadcast_to(g / n, self.shape)

        out._backward = _bw
        return out


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, op="const")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    out = Tensor(np.concatenate([t.value for t in tensors], axis=axis), tuple(tensors), "concat")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def _bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            t.grad += np.take(g, np.arange(lo, hi), axis=axis)

    out._backward = _bw
    return out


# Elementwise helpers that work on Tensors and on plain numbers/arrays alike,
# so the loss functions can be written once.

def exp(x):
    return x.exp() if isinstance(x, Tensor) else np.exp(x)


def log_(x):
    return x.log() if isinstance(x, Tensor) else np.log(x)


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> dict[str, np.ndarray]:
    """Back-propagate from a scalar ``loss``.

    Gradients of every node reachable from ``loss`` are reset and recomputed,
    so calling this twice on the same graph gives the same result. Returns the
    gradients of all named leaves (the network parameters).
    """
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _topo_order(loss)
    for node in order:
        node.grad = np.zeros_like(node.value)
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)
    return {n.name: n.grad for n in order if n.op == "leaf" and n.name is not None}


# ---------------------------------------------------------------------------
# networks


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of a feed-forward network.

    With ``bottleneck_dim`` set, the last ``side_inputs`` input columns skip the
    first hidden layer: the remaining features go through the first hidden
    layer and a bottleneck projection, then the side inputs are concatenated
    and the rest of the hidden stack follows.
    """

    input_dim: int
    hidden_sizes: tuple[int, ...] = (64, 32)
    output_dim: int = 1
    dropout_rate: float = 0.15
    activation: str = "tanh"
    bottleneck_dim: int | None = None
    side_inputs: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.input_dim < 1 or any(h < 1 for h in self.hidden_sizes):
            raise ValueError("layer sizes must be positive")
        if self.output_dim not in (1, 2):
            raise ValueError(f"output_dim must be 1 or 2, got {self.output_dim}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.activation not in ("tanh", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.side_inputs:
            if self.bottleneck_dim is None or self.bottleneck_dim < 1:
                raise ValueError("side inputs need a positive bottleneck_dim")
            if not self.hidden_sizes or self.side_inputs >= self.input_dim:
                raise ValueError("side inputs need a hidden layer and at least one main feature")

    def layer_shapes(self) -> list[tuple[int, int]]:
        shapes = []
        if self.bottleneck_dim is None:
            widths = [self.input_dim, *self.hidden_sizes, self.output_dim]
            return list(zip(widths[:-1], widths[1:]))
        main = self.input_dim - self.side_inputs
        shapes.append((main, self.hidden_sizes[0]))
        shapes.append((self.hidden_sizes[0], self.bottleneck_dim))
        widths = [self.bottleneck_dim + self.side_inputs, *self.hidden_sizes[1:], self.output_dim]
        shapes.extend(zip(widths[:-1], widths[1:]))
        return shapes


class Mlp:
    """Weights for an :class:`MlpSpec`, as named leaf tensors."""

    def __init__(self, spec: MlpSpec, rng: np.random.Generator | int | None = None):
        self.spec = spec
        rng = _as_rng(rng)
        self.params: list[Tensor] = []
        for i, (fan_in, fan_out) in enumerate(spec.layer_shapes()):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.params.append(Tensor(rng.uniform(-limit, limit, (fan_in, fan_out)), name=f"W{i}"))
            self.params.append(Tensor(np.zeros((1, fan_out)), name=f"b{i}"))

    @property
    def n_params(self) -> int:
        return sum(p.value.size for p in self.params)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.value.ravel() for p in self.params])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params:
            raise ValueError(f"expected {self.n_params} weights, got {flat.size}")
        pos = 0
        for p in self.params:
            p.value = flat[pos:pos + p.value.size].reshape(p.value.shape).copy()
            p.grad = np.zeros_like(p.value)
            pos += p.value.size

    def copy(self) -> "Mlp":
        twin = Mlp.__new__(Mlp)
        twin.spec = self.spec
        twin.params = [Tensor(p.value.copy(), name=p.name) for p in self.params]
        return twin

    def __call__(self, batch, dropout_active: bool = False, rng=None) -> Tensor:
        return forward(self, batch, dropout_active, rng)

    def predict(self, batch, dropout_active: bool = False, rng=None) -> np.ndarray:
        return forward(self, batch, dropout_active, rng).value


def _activate(x: Tensor, kind: str) -> Tensor:
    return x.tanh() if kind == "tanh" else x.relu()


def _dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rng is None or rate == 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    return x * (keep / (1.0 - rate))


def forward(model: Mlp, batch, dropout_active: bool = False,
            rng: np.random.Generator | int | None = None) -> Tensor:
    """Run the network on ``batch`` (rows are examples).

    With ``dropout_active`` every hidden unit is zeroed with probability
    ``dropout_rate`` and the survivors are scaled by ``1/(1 - dropout_rate)``.
    """
    spec = model.spec
    x = batch if isinstance(batch, Tensor) else Tensor(np.atleast_2d(np.asarray(batch, dtype=np.float64)), op="input")
    if x.value.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ValueError(f"expected input of width {spec.input_dim}, got shape {x.shape}")
    drop_rng = _as_rng(rng) if dropout_active else None
    ws = model.params[0::2]
    bs = model.params[1::2]
    if spec.bottleneck_dim is None:
        h = x
        for W, b in zip(ws[:-1], bs[:-1]):
            h = _dropout(_activate(h @ W + b, spec.activation), spec.dropout_rate, drop_rng)
        return h @ ws[-1] + bs[-1]

    n_main = spec.input_dim - spec.side_inputs
    main, side = x[:, :n_main], x[:, n_main:]
    h = _dropout(_activate(main @ ws[0] + bs[0], spec.activation), spec.dropout_rate, drop_rng)
    h = _activate(h @ ws[1] + bs[1], spec.activation)
    h = concat([h, side], axis=1)
    for W, b in zip(ws[2:-1], bs[2:-1]):
        h = _dropout(_activate(h @ W + b, spec.activation), spec.dropout_rate, drop_rng)
    return h @ ws[-1] + bs[-1]


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_model(cls, model: Mlp, learning_rate: float = 1e-3, **kw) -> "AdamState":
        state = cls(learning_rate=learning_rate, **kw)
        for p in model.params:
            state.first_moment[p.name] = np.zeros_like(p.value)
            state.second_moment[p.name] = np.zeros_like(p.value)
        return state


def adam_step(model: Mlp, state: AdamState, grads: dict[str, np.ndarray]) -> None:
    """Apply one bias-corrected Adam update to ``model`` in place."""
    missing = [p.name for p in model.params if p.name not in grads]
    if missing:
        raise KeyError(f"no gradient for parameters {missing}")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {name} at step {state.step_count + 1}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for p in model.params:
        g = grads[p.name]
        m = state.first_moment[p.name] = b1 * state.first_moment[p.name] + (1 - b1) * g
        v = state.second_moment[p.name] = b2 * state.second_moment[p.name] + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p.value = p.value - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 40
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0


def fit(model: Mlp, n_examples: int, batch_loss: Callable[[Tensor, np.ndarray], Tensor],
        inputs: np.ndarray, config: TrainingConfig,
        rng: np.random.Generator | None = None) -> list[float]:
    """Minibatch Adam training loop.

    ``batch_loss(output, idx)`` maps the network output on ``inputs[idx]`` to a
    scalar loss. Shuffling and dropout masks both draw from ``rng`` (seeded from
    ``config.seed`` when omitted). Returns the mean training loss per epoch.
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    state = AdamState.for_model(model, config.learning_rate)
    history = []
    use_dropout = model.spec.dropout_rate > 0
    for epoch in range(config.epochs):
        order = rng.permutation(n_examples)
        total = 0.0
        for start in range(0, n_examples, config.batch_size):
            idx = order[start:start + config.batch_size]
            out = forward(model, inputs[idx], dropout_active=use_dropout, rng=rng)
            loss = batch_loss(out, idx)
            if not np.isfinite(loss.value):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            adam_step(model, state, backward(loss))
            total += float(loss.value) * len(idx)
        history.append(total / n_examples)
        log.debug("epoch %d loss %.6f", epoch, history[-1])
    return history


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: Mlp, path: str | Path) -> None:
    spec = asdict(model.spec)
    spec["hidden_sizes"] = list(spec["hidden_sizes"])
    payload = {"format": "uqmt-mlp", "version": CHECKPOINT_VERSION, "spec": spec,
               "weights": model.get_flat().tolist()}
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(path: str | Path) -> Mlp:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != "uqmt-mlp" or payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version {CHECKPOINT_VERSION} network checkpoint")
    spec = MlpSpec(**payload["spec"])
    model = Mlp(spec, rng=0)
    model.set_flat(np.array(payload["weights"], dtype=np.float64))
    return model
