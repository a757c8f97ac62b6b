"""Minimal feed-forward networks with manual backprop (numpy only).

Hidden layers use tanh; the output layer is linear. Forward passes return
the cache needed for the matching backward pass, keeping both functions
pure so gradients can be checked against finite differences.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["MLP", "Adam", "global_grad_norm", "clip_grads_", "mlp_init", "orthogonal_init"]


def orthogonal_init(rows: int, cols: int, gain: float, rng: np.random.Generator) -> np.ndarray:
    a = rng.normal(size=(max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))  # undo QR sign ambiguity
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(gain * q[:rows, :cols])


@dataclass
class MLP:
    """Weights (out, in) and biases per layer; tanh between layers."""

    weights: list
    biases: list

    def copy(self) -> "MLP":
        return MLP([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def params(self) -> list:
        return [*self.weights, *self.biases]

    def forward(self, x: np.ndarray):
        """Returns (output, cache). x is (batch, in) or (in,)."""
        squeeze = x.ndim == 1
        h = np.atleast_2d(np.asarray(x, dtype=float))
        activations = [h]
        n_layers = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.T + b
            if i < n_layers - 1:
                h = np.tanh(h)
            activations.append(h)
        out = h[0] if squeeze else h
        return out, activations

    def backward(self, cache: list, grad_out: np.ndarray):
        """Parameter gradients for upstream grad_out on the forward output.

        Returns a list shaped like ``params()``: weight grads then bias grads.
        """
        grad = np.atleast_2d(np.asarray(grad_out, dtype=float))
        w_grads = [None] * len(self.weights)
        b_grads = [None] * len(self.biases)
        for i in range(len(self.weights) - 1, -1, -1):
            w_grads[i] = grad.T @ cache[i]
            b_grads[i] = grad.sum(axis=0)
            if i > 0:
                grad = grad @ self.weights[i]
                grad = grad * (1.0 - cache[i] ** 2)  # through tanh
        return [*w_grads, *b_grads]


def mlp_init(
    sizes: list[int],
    rng: np.random.Generator,
    hidden_gain: float = math.sqrt(2.0),
    out_gain: float = 1.0,
) -> MLP:
    weights, biases = [], []
    for i in range(len(sizes) - 1):
        gain = out_gain if i == len(sizes) - 2 else hidden_gain
        weights.append(orthogonal_init(sizes[i + 1], sizes[i], gain, rng))
        biases.append(np.zeros(sizes[i + 1]))
    return MLP(weights, biases)


def global_grad_norm(grads: list) -> float:
    return math.sqrt(sum(float((g * g).sum()) for g in grads))


def clip_grads_(grads: list, max_norm: float) -> float:
    """Scale grads in place so their global norm is at most max_norm."""
    norm = global_grad_norm(grads)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads:
            g *= scale
    return norm


class Adam:
    """Adam with bias correction; updates parameter arrays in place."""

    def __init__(self, params: list, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list) -> None:
        if len(grads) != len(self.params):
            raise ValueError("gradient list does not match parameters")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
