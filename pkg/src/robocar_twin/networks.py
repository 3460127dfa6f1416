"""Small fully connected networks with hand-written reverse mode.

Arrays are batched row-wise: inputs have shape ``(batch, features)`` and each
dense layer computes ``x @ weight + bias``. ``forward`` caches what
``backward`` needs, so a backward pass always refers to the latest forward
pass of the same network.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, ValidationError

LOGGER = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "tanh", "linear")


@dataclass(slots=True)
class Dense:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "linear"

    def __post_init__(self) -> None:
        if self.activation not in ACTIVATIONS:
            msg = f"Unknown activation {self.activation!r}"
            raise ValidationError(msg)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            msg = f"Dense layer shapes do not match: {self.weight.shape} and {self.bias.shape}"
            raise ValidationError(msg)

    @property
    def shape(self) -> tuple[int, int]:
        return int(self.weight.shape[0]), int(self.weight.shape[1])

    @classmethod
    def initialise(cls, n_in: int, n_out: int, activation: str, rng: np.random.Generator, *, limit: float | None = None) -> "Dense":
        """Uniform fan-in initialisation; ``limit`` overrides the bound (used for output layers)."""

        bound = limit if limit is not None else 1.0 / math.sqrt(n_in)
        return cls(
            weight=rng.uniform(-bound, bound, size=(n_in, n_out)),
            bias=rng.uniform(-bound, bound, size=n_out),
            activation=activation,
        )


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "tanh":
        return np.tanh(z)
    return z


def _activation_slope(z: np.ndarray, out: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return (z > 0.0).astype(float)
    if activation == "tanh":
        return 1.0 - out**2
    return np.ones_like(z)


def _as_batch(x: np.ndarray, width: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.shape[1] != width:
        msg = f"Expected {width} input features, got {x.shape[1]}"
        raise ValidationError(msg)
    return x


class Mlp:
    """Stack of dense layers."""

    def __init__(self, layers: Sequence[Dense]) -> None:
        if not layers:
            msg = "A network needs at least one layer"
            raise ValidationError(msg)
        for first, second in zip(layers, layers[1:]):
            if first.shape[1] != second.shape[0]:
                msg = f"Layer widths do not chain: {first.shape} then {second.shape}"
                raise ValidationError(msg)
        self.layers = list(layers)
        self._cache: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []

    @classmethod
    def build(cls, widths: Sequence[int], activations: Sequence[str], rng: np.random.Generator, *, output_limit: float | None = None) -> "Mlp":
        if len(widths) != len(activations) + 1:
            msg = "Need one activation per layer"
            raise ValidationError(msg)
        layers = []
        for index, activation in enumerate(activations):
            last = index == len(activations) - 1
            layers.append(
                Dense.initialise(widths[index], widths[index + 1], activation, rng, limit=output_limit if last else None)
            )
        return cls(layers)

    @property
    def n_in(self) -> int:
        return self.layers[0].shape[0]

    @property
    def n_out(self) -> int:
        return self.layers[-1].shape[1]

    def parameters(self) -> list[np.ndarray]:
        params: list[np.ndarray] = []
        for layer in self.layers:
            params.extend((layer.weight, layer.bias))
        return params

    def forward(self, x: np.ndarray) -> np.ndarray:
        out = _as_batch(x, self.n_in)
        self._cache = []
        for layer in self.layers:
            z = out @ layer.weight + layer.bias
            activated = _activate(z, layer.activation)
            self._cache.append((out, z, activated))
            out = activated
        if not np.all(np.isfinite(out)):
            msg = "Network produced non-finite activations"
            raise DomainError(msg)
        return out

    def backward(self, grad_out: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Parameter gradients (same order as :meth:`parameters`) and the input gradient."""

        if len(self._cache) != len(self.layers):
            msg = "backward called before forward"
            raise ValidationError(msg)
        grad = np.asarray(grad_out, dtype=float).reshape(self._cache[-1][2].shape)
        grads: list[np.ndarray] = []
        for layer, (inputs, z, activated) in zip(reversed(self.layers), reversed(self._cache)):
            grad_z = grad * _activation_slope(z, activated, layer.activation)
            grads.extend((grad_z.sum(axis=0), inputs.T @ grad_z))
            grad = grad_z @ layer.weight.T
        grads.reverse()
        return grads, grad

    def relu_pattern(self, x: np.ndarray) -> np.ndarray:
        """Signs of every ReLU pre-activation, to detect kinks in gradient checks."""

        self.forward(x)
        return np.concatenate(
            [(z > 0.0).ravel() for layer, (_, z, _) in zip(self.layers, self._cache) if layer.activation == "relu"]
            or [np.zeros(0, dtype=bool)]
        )

    def copy(self) -> "Mlp":
        return Mlp([Dense(layer.weight.copy(), layer.bias.copy(), layer.activation) for layer in self.layers])


class ActorNetwork:
    """``state -> scale * tanh(...)``; outputs are bounded by ``scale`` by construction."""

    def __init__(self, body: Mlp, scale: float) -> None:
        if body.n_out != 1 or body.layers[-1].activation != "tanh":
            msg = "Actor must end in a single tanh unit"
            raise ValidationError(msg)
        if not scale > 0:
            msg = "Actor output scale must be positive"
            raise ValidationError(msg)
        self.body = body
        self.scale = float(scale)

    @classmethod
    def build(cls, n_in: int, scale: float, rng: np.random.Generator, *, hidden: tuple[int, int] = (200, 200)) -> "ActorNetwork":
        body = Mlp.build((n_in, *hidden, 1), ("relu", "relu", "tanh"), rng, output_limit=3e-3)
        return cls(body, scale)

    def parameters(self) -> list[np.ndarray]:
        return self.body.parameters()

    def forward(self, states: np.ndarray) -> np.ndarray:
        return self.scale * self.body.forward(states)[:, 0]

    def backward(self, grad_actions: np.ndarray) -> list[np.ndarray]:
        grads, _ = self.body.backward(self.scale * np.asarray(grad_actions, dtype=float).reshape(-1, 1))
        return grads

    def copy(self) -> "ActorNetwork":
        return ActorNetwork(self.body.copy(), self.scale)


class CriticNetwork:
    """Two-path critic: ``Q = head(relu(state_path(s) + action_path(a)))``.

    Both paths end in linear layers of the same width; the ReLU is applied
    after the elementwise sum.
    """

    def __init__(self, state_path: Mlp, action_path: Mlp, head: Dense) -> None:
        if state_path.n_out != action_path.n_out or head.shape != (state_path.n_out, 1):
            msg = "Critic paths must share their output width and feed a single-output head"
            raise ValidationError(msg)
        self.state_path = state_path
        self.action_path = action_path
        self.head = head
        self._merged: np.ndarray | None = None
        self._hidden: np.ndarray | None = None

    @classmethod
    def build(
        cls,
        n_state: int,
        n_action: int,
        rng: np.random.Generator,
        *,
        state_hidden: tuple[int, int] = (200, 200),
        action_hidden: tuple[int, int] = (100, 200),
    ) -> "CriticNetwork":
        state_path = Mlp.build((n_state, *state_hidden), ("relu", "linear"), rng)
        action_path = Mlp.build((n_action, *action_hidden), ("relu", "linear"), rng)
        head = Dense.initialise(state_hidden[-1], 1, "linear", rng, limit=3e-3)
        return cls(state_path, action_path, head)

    def parameters(self) -> list[np.ndarray]:
        return [*self.state_path.parameters(), *self.action_path.parameters(), self.head.weight, self.head.bias]

    def forward(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        actions = np.asarray(actions, dtype=float)
        if actions.ndim < 2:
            actions = actions.reshape(-1, self.action_path.n_in)
        merged = self.state_path.forward(states) + self.action_path.forward(actions)
        hidden = np.maximum(merged, 0.0)
        self._merged, self._hidden = merged, hidden
        q = hidden @ self.head.weight + self.head.bias
        if not np.all(np.isfinite(q)):
            msg = "Critic produced non-finite values"
            raise DomainError(msg)
        return q[:, 0]

    def backward(self, grad_q: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Parameter gradients and ``dQ/da`` for the latest forward pass."""

        if self._merged is None or self._hidden is None:
            msg = "backward called before forward"
            raise ValidationError(msg)
        grad_q = np.asarray(grad_q, dtype=float).reshape(-1, 1)
        head_grads = [self._hidden.T @ grad_q, grad_q.sum(axis=0)]
        grad_merged = (grad_q @ self.head.weight.T) * (self._merged > 0.0)
        state_grads, _ = self.state_path.backward(grad_merged)
        action_grads, grad_actions = self.action_path.backward(grad_merged)
        return [*state_grads, *action_grads, *head_grads], grad_actions

    def copy(self) -> "CriticNetwork":
        head = Dense(self.head.weight.copy(), self.head.bias.copy(), self.head.activation)
        return CriticNetwork(self.state_path.copy(), self.action_path.copy(), head)


class Adam:
    """Adam optimiser updating a fixed list of parameter arrays in place."""

    def __init__(self, params: Sequence[np.ndarray], lr: float, *, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        if lr < 0:
            msg = "Learning rate must be non negative"
            raise ValidationError(msg)
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m = [np.zeros_like(p) for p in self.params]
        self._v = [np.zeros_like(p) for p in self.params]
        self.steps = 0

    def step(self, grads: Sequence[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            msg = "Gradient list does not match the parameter list"
            raise ValidationError(msg)
        self.steps += 1
        if self.lr == 0.0:
            return
        correction1 = 1.0 - self.beta1**self.steps
        correction2 = 1.0 - self.beta2**self.steps
        for param, grad, m, v in zip(self.params, grads, self._m, self._v):
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad**2
            param -= self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


def soft_update(target: Sequence[np.ndarray], source: Sequence[np.ndarray], tau: float) -> None:
    """Polyak averaging ``target <- tau*source + (1-tau)*target`` in place."""

    if not 0.0 <= tau <= 1.0:
        msg = "Soft-update rate must lie in [0, 1]"
        raise ValidationError(msg)
    for dst, src in zip(target, source):
        dst *= 1.0 - tau
        dst += tau * src


__all__ = [
    "ACTIVATIONS",
    "ActorNetwork",
    "Adam",
    "CriticNetwork",
    "Dense",
    "Mlp",
    "soft_update",
]
