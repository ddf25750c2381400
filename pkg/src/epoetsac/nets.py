"""Small dense networks with hand-rolled reverse-mode gradients.

Everything here is plain numpy. Layers store weights as (fan_in, fan_out)
matrices so a forward pass is x @ W + b. Parameters flatten losslessly to a
single vector, which is the currency of the ES optimizer and of crossover.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def relu(z):
    return np.maximum(z, 0.0)


def relu_grad(z):
    return (z > 0.0).astype(z.dtype)


def tanh_grad_from_out(out):
    return 1.0 - out * out


@dataclass
class MlpParams:
    weights: list[np.ndarray]  # each (fan_in, fan_out)
    biases: list[np.ndarray]
    hidden_activation: str = "tanh"  # tanh | relu
    output_activation: str = "linear"  # linear | tanh

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                         self.hidden_activation, self.output_activation)

    def flatten(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    def load_flat(self, flat: np.ndarray) -> None:
        offset = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = flat[offset:offset + w.size].reshape(w.shape).copy()
            offset += w.size
            self.biases[i] = flat[offset:offset + b.size].reshape(b.shape).copy()
            offset += b.size
        if offset != flat.size:
            raise ValueError(f"flat vector size {flat.size} does not match params ({offset})")

    @property
    def size(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)


def init_mlp(rng: np.random.Generator, sizes: list[int], hidden_activation: str = "tanh",
             output_activation: str = "linear", scale: float | None = None) -> MlpParams:
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        std = scale if scale is not None else 1.0 / np.sqrt(fan_in)
        weights.append(rng.normal(0.0, std, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases, hidden_activation, output_activation)


def zeros_like_params(params: MlpParams) -> MlpParams:
    return MlpParams([np.zeros_like(w) for w in params.weights],
                     [np.zeros_like(b) for b in params.biases],
                     params.hidden_activation, params.output_activation)


def forward(params: MlpParams, x: np.ndarray, with_cache: bool = False):
    """x: (batch, in) or (in,). Returns output, and caches when requested."""
    squeeze = x.ndim == 1
    h = np.atleast_2d(x)
    pre_acts = []
    acts = [h]
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        pre_acts.append(z)
        if i < last:
            h = np.tanh(z) if params.hidden_activation == "tanh" else relu(z)
        else:
            h = np.tanh(z) if params.output_activation == "tanh" else z
        acts.append(h)
    out = h[0] if squeeze else h
    if with_cache:
        return out, (pre_acts, acts)
    return out


def backward(params: MlpParams, cache, dout: np.ndarray):
    """Backprop dL/dout through the net. Returns (grads, dL/dinput)."""
    pre_acts, acts = cache
    d = np.atleast_2d(dout)
    last = len(params.weights) - 1
    if params.output_activation == "tanh":
        d = d * tanh_grad_from_out(acts[-1])
    grads = zeros_like_params(params)
    for i in range(last, -1, -1):
        grads.weights[i] = acts[i].T @ d
        grads.biases[i] = d.sum(axis=0)
        d = d @ params.weights[i].T
        if i > 0:
            if params.hidden_activation == "tanh":
                d = d * tanh_grad_from_out(acts[i])
            else:
                d = d * relu_grad(pre_acts[i - 1])
    return grads, d


def add_scaled(params: MlpParams, grads: MlpParams, scale: float) -> None:
    for i in range(len(params.weights)):
        params.weights[i] += scale * grads.weights[i]
        params.biases[i] += scale * grads.biases[i]


def soft_update(target: MlpParams, source: MlpParams, tau: float) -> None:
    """target <- tau * source + (1 - tau) * target, in place."""
    for i in range(len(target.weights)):
        target.weights[i] = tau * source.weights[i] + (1.0 - tau) * target.weights[i]
        target.biases[i] = tau * source.biases[i] + (1.0 - tau) * target.biases[i]


class Adam:
    """Standard Adam on a flat parameter vector."""

    def __init__(self, dim: int, beta1: float = 0.9, beta2: float = 0.999,
                 epsilon: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m = np.zeros(dim)
        self.v = np.zeros(dim)
        self.t = 0

    def step(self, grad: np.ndarray, lr: float) -> np.ndarray:
        """Returns the update to ADD to the parameters for an ascent step,
        i.e. pass the gradient of the objective being maximized."""
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return lr * m_hat / (np.sqrt(v_hat) + self.epsilon)

    def state_dict(self) -> dict:
        return {"m": self.m.copy(), "v": self.v.copy(), "t": self.t,
                "beta1": self.beta1, "beta2": self.beta2, "epsilon": self.epsilon}

    @classmethod
    def from_state(cls, state: dict) -> "Adam":
        opt = cls(state["m"].size, state["beta1"], state["beta2"], state["epsilon"])
        opt.m = state["m"].copy()
        opt.v = state["v"].copy()
        opt.t = state["t"]
        return opt
