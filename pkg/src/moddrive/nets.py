"""Tiny dense networks with hand-written forward/backward passes and Adam.

Everything is float64 numpy; weights are (out, in) matrices so a layer maps
x -> W @ x + b. Backward passes return gradients summed over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def arrays(self) -> list[np.ndarray]:
        """Flat parameter list in a fixed order: W1, b1, W2, b2, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec: np.ndarray) -> "MlpParams":
        out = self.copy()
        pos = 0
        for a in out.arrays():
            a[...] = vec[pos:pos + a.size].reshape(a.shape)
            pos += a.size
        return out


def init_mlp(dims: list[int], rng: np.random.Generator, final_scale: float = 1.0) -> MlpParams:
    """Xavier-uniform init; the last layer can be shrunk so initial outputs sit
    near zero (near-uniform heads, near-0.5 discriminator)."""
    weights, biases = [], []
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        if i == len(dims) - 2:
            w *= final_scale
        weights.append(w)
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def mlp_forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, list]:
    """ReLU MLP forward; accepts (in,) or (n, in). The cache holds the inputs
    of every layer for the backward pass."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.weights[0].shape[1]:
        raise ValueError(f"input dim {x.shape[-1]} != {params.weights[0].shape[1]}")
    last = len(params.weights) - 1
    if x.ndim == 1:
        h = x
        cache = [h]
        for i, (w, b) in enumerate(zip(params.weights, params.biases)):
            h = w @ h + b
            if i < last:
                h = np.maximum(h, 0.0)
            cache.append(h)
        return h, cache
    h = x
    cache = [h]
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if i < last:
            h = np.maximum(h, 0.0)
        cache.append(h)
    return h, cache


def mlp_backward(params: MlpParams, cache: list, grad_y: np.ndarray):
    """Exact reverse-mode gradients. Returns (grads_in_arrays_order, grad_x);
    gradients are summed over the batch rows of grad_y."""
    if len(cache) != len(params.weights) + 1:
        raise ValueError("cache does not match network depth")
    g = np.atleast_2d(np.asarray(grad_y, dtype=float))
    acts = [np.atleast_2d(c) for c in cache]
    grads_w = [None] * len(params.weights)
    grads_b = [None] * len(params.weights)
    last = len(params.weights) - 1
    for i in range(last, -1, -1):
        if i < last:
            g = g * (acts[i + 1] > 0.0)
        grads_w[i] = g.T @ acts[i]
        grads_b[i] = g.sum(axis=0)
        g = g @ params.weights[i]
    grads = []
    for gw, gb in zip(grads_w, grads_b):
        grads.extend([gw, gb])
    return grads, g


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @staticmethod
    def for_arrays(arrays: list[np.ndarray]) -> "AdamState":
        return AdamState([np.zeros_like(a) for a in arrays],
                         [np.zeros_like(a) for a in arrays])


def adam_update_arrays(arrays: list[np.ndarray], grads: list[np.ndarray],
                       state: AdamState, lr: float) -> tuple[list[np.ndarray], AdamState]:
    """Bias-corrected Adam on a list of arrays; returns fresh arrays/state."""
    t = state.t + 1
    new_arrays, new_m, new_v = [], [], []
    for a, g, m, v in zip(arrays, grads, state.m, state.v):
        m1 = ADAM_BETA1 * m + (1 - ADAM_BETA1) * g
        v1 = ADAM_BETA2 * v + (1 - ADAM_BETA2) * g * g
        m_hat = m1 / (1 - ADAM_BETA1**t)
        v_hat = v1 / (1 - ADAM_BETA2**t)
        new_arrays.append(a - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS))
        new_m.append(m1)
        new_v.append(v1)
    return new_arrays, AdamState(new_m, new_v, t)


def adam_update(params: MlpParams, grads: list[np.ndarray], state: AdamState,
                lr: float) -> tuple[MlpParams, AdamState]:
    arrays, new_state = adam_update_arrays(params.arrays(), grads, state, lr)
    n = len(params.weights)
    return MlpParams(arrays[0::2][:n], arrays[1::2][:n]), new_state


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out
