"""Small numpy MLP with analytic backprop, replay memory and epsilon-greedy exploration."""
from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1


class MlpModel:
    """Feed-forward network: ReLU hidden layers, identity output.

    With ``residual=True`` the input is added to the output (input and output widths must
    agree), so zero output-layer weights make the network the identity map.

    Weights are stored ``(fan_in, fan_out)`` and applied as ``x @ W + b``.
    """

    def __init__(self, layer_sizes, rng: np.random.Generator | None = None, learning_rate: float = 1e-3,
                 momentum: float = 0.0, residual: bool = False):
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"invalid layer sizes {layer_sizes!r}")
        if residual and sizes[0] != sizes[-1]:
            raise ValueError("a residual network needs equal input and output widths")
        self.layer_sizes = tuple(sizes)
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.residual = residual
        self.steps = 0
        rng = np.random.default_rng() if rng is None else rng
        self.weights, self.biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))
        self.velocity = [np.zeros_like(p) for p in self.params]

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    def copy(self) -> "MlpModel":
        return copy.deepcopy(self)

    def forward(self, x) -> np.ndarray:
        return self.forward_cached(x)[0]

    def forward_cached(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n_inputs:
            raise ValueError(f"expected {self.n_inputs} input features, got {x.shape[-1]}")
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = z if i == last else np.maximum(z, 0.0)
            acts.append(h)
        out = h + x if self.residual else h
        return out, acts

    def backward(self, acts, grad_out):
        """Gradients of a scalar loss given ``dL/d output``.

        Returns ``(param_grads, grad_input)``; ``param_grads`` follows the ``params`` order.
        Leading batch dimensions are summed over.
        """
        grad_out = np.asarray(grad_out, dtype=float)
        g = grad_out
        grads = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            h_in = acts[i]
            h2 = h_in.reshape(-1, h_in.shape[-1])
            g2 = g.reshape(-1, g.shape[-1])
            grads[2 * i] = h2.T @ g2
            grads[2 * i + 1] = g2.sum(axis=0)
            g = g @ self.weights[i].T
            if i > 0:
                g = g * (acts[i] > 0)
        if self.residual:
            g = g + grad_out
        return grads, g

    def set_params(self, params) -> None:
        for i, p in enumerate(params):
            target = self.weights[i // 2] if i % 2 == 0 else self.biases[i // 2]
            if target.shape != np.shape(p):
                raise ValueError("parameter shape mismatch")
            target[...] = p

    def __eq__(self, other) -> bool:
        if not isinstance(other, MlpModel):
            return NotImplemented
        return (self.layer_sizes == other.layer_sizes and self.residual == other.residual
                and all(np.array_equal(a, b) for a, b in zip(self.params, other.params)))

    __hash__ = None


def forward(model: MlpModel, x) -> np.ndarray:
    return model.forward(x)


def td_loss_grad(q: np.ndarray, actions, targets) -> tuple[float, np.ndarray]:
    """Loss ``sum_i 1/2 (y_i - q_i[a_i])^2 / n`` and its gradient w.r.t. ``q`` (batched)."""
    q = np.atleast_2d(q)
    actions = np.atleast_1d(np.asarray(actions, dtype=np.int64))
    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    n = q.shape[0]
    rows = np.arange(n)
    err = q[rows, actions] - targets
    grad = np.zeros_like(q)
    grad[rows, actions] = err / n
    return float(0.5 * np.sum(err ** 2) / n), grad


def backward_td(model: MlpModel, x, action_index, td_target) -> list[np.ndarray]:
    """Gradient of ``1/2 (td_target - Q(x)[action_index])^2`` w.r.t. every parameter."""
    x = np.asarray(x, dtype=float)
    if not 0 <= int(action_index) < model.n_outputs:
        raise ValueError(f"action index {action_index} out of range")
    q, acts = model.forward_cached(x[None, :])
    _, g = td_loss_grad(q, [action_index], [td_target])
    grads, _ = model.backward(acts, g)
    return grads


def sgd_step(model: MlpModel, grads) -> MlpModel:
    """In-place descent step ``theta <- theta - lr * grad`` (heavy-ball when momentum > 0)."""
    params = model.params
    if len(grads) != len(params):
        raise ValueError("gradient list does not match the parameters")
    for p, g, v in zip(params, grads, model.velocity):
        if p.shape != np.shape(g):
            raise ValueError("gradient shape mismatch")
        if model.momentum:
            v *= model.momentum
            v -= model.learning_rate * g
            p += v
        else:
            p -= model.learning_rate * g
    model.steps += 1
    return model


def sync_target(online: MlpModel) -> MlpModel:
    return online.copy()


def epsilon_greedy(q, epsilon: float, rng: np.random.Generator) -> int:
    """Uniform random action with probability ``epsilon``, else the argmax (lowest index on ties).

    Exactly one uniform draw is consumed per call, plus one integer draw when exploring.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    q = np.asarray(q)
    if rng.random() < epsilon:
        return int(rng.integers(q.shape[-1]))
    return int(np.argmax(q))


def linear_epsilon(epoch: int, n_epochs: int, start: float, end: float, decay_fraction: float) -> float:
    """Linear decay from ``start`` to ``end`` over the first ``decay_fraction`` of training."""
    horizon = decay_fraction * n_epochs
    if horizon <= 0:
        return end
    frac = min(1.0, epoch / horizon)
    return start + (end - start) * frac


# --------------------------------------------------------------------------- replay

@dataclass
class Transition:
    state_a: np.ndarray
    state_b: np.ndarray
    action_a: int
    action_b: int
    reward_a: float
    reward_b: float
    next_state_a: np.ndarray
    next_state_b: np.ndarray


class ReplayBuffer:
    """Fixed-capacity ring of transitions with uniform sampling."""

    _fields = ("state_a", "state_b", "action_a", "action_b", "reward_a", "reward_b",
               "next_state_a", "next_state_b")

    def __init__(self, capacity: int, rng: np.random.Generator):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.rng = rng
        self.cursor = 0
        self.size = 0
        self._data: dict[str, np.ndarray] | None = None

    def __len__(self) -> int:
        return self.size

    def add(self, tr: Transition) -> None:
        values = {name: getattr(tr, name) for name in self._fields}
        for name in ("reward_a", "reward_b"):
            if not np.isfinite(values[name]):
                raise ValueError(f"{name} is not finite")
        if self._data is None:
            self._data = {}
            for name, v in values.items():
                v = np.asarray(v)
                dtype = np.int64 if name.startswith("action") else float
                self._data[name] = np.zeros((self.capacity,) + v.shape, dtype=dtype)
        for name, v in values.items():
            self._data[name][self.cursor] = v
        self.cursor = (self.cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch_size: int) -> np.ndarray:
        if batch_size > self.size:
            raise ValueError(f"cannot sample {batch_size} from {self.size} stored transitions")
        return self.rng.integers(self.size, size=batch_size)

    def sample(self, batch_size: int) -> dict[str, np.ndarray]:
        idx = self.sample_indices(batch_size)
        return {name: arr[idx] for name, arr in self._data.items()}


# --------------------------------------------------------------------------- checkpoints

def save_model(model: MlpModel, path: str | Path) -> None:
    """Write layer sizes and parameters to an ``.npz`` file (exact round trip)."""
    arrays = {f"p{i}": p for i, p in enumerate(model.params)}
    np.savez(path, version=np.array(CHECKPOINT_VERSION), layer_sizes=np.array(model.layer_sizes),
             residual=np.array(model.residual), learning_rate=np.array(model.learning_rate),
             momentum=np.array(model.momentum), **arrays)


def load_model(path: str | Path) -> MlpModel:
    with np.load(path) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        model = MlpModel(data["layer_sizes"].tolist(), rng=np.random.default_rng(0),
                         learning_rate=float(data["learning_rate"]), momentum=float(data["momentum"]),
                         residual=bool(data["residual"]))
        model.set_params([data[f"p{i}"] for i in range(len(model.params))])
    return model
