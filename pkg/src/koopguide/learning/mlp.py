"""Minimal fully-connected ReLU network with manual backprop (float64).

Hand-rolled on purpose: training must be bit-reproducible from a seed, and
the planners need exact input Jacobians of the trained nets.
"""
from __future__ import annotations

import numpy as np


class Mlp:
    """Feed-forward net; ReLU on hidden layers, linear output."""

    def __init__(self, sizes: list[int], rng: np.random.Generator | None = None):
        self.sizes = list(sizes)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(n_in)
            if rng is None:
                W = np.zeros((n_out, n_in))
                b = np.zeros(n_out)
            else:
                W = rng.uniform(-bound, bound, (n_out, n_in))
                b = rng.uniform(-bound, bound, n_out)
            self.weights.append(W)
            self.biases.append(b)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def forward(self, X: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Returns (output, cache of layer inputs) for a (K, n_in) batch."""
        A = np.asarray(X, dtype=float)
        cache = [A]
        for i in range(self.n_layers):
            Z = A @ self.weights[i].T + self.biases[i]
            A = np.maximum(Z, 0.0) if i < self.n_layers - 1 else Z
            cache.append(A)
        return A, cache

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.forward(X)[0]

    def backward(self, cache: list[np.ndarray], dY: np.ndarray):
        """Gradients of sum(dY * output) w.r.t. parameters and input.

        Returns ``(dWs, dbs, dX)`` matching the parameter shapes.
        """
        dWs = [None] * self.n_layers
        dbs = [None] * self.n_layers
        delta = np.asarray(dY, dtype=float)
        for i in reversed(range(self.n_layers)):
            if i < self.n_layers - 1:
                delta = delta * (cache[i + 1] > 0.0)
            dWs[i] = delta.T @ cache[i]
            dbs[i] = delta.sum(axis=0)
            delta = delta @ self.weights[i]
        return dWs, dbs, delta

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        """Input Jacobian (n_out, n_in) at a single point."""
        _, cache = self.forward(np.asarray(x, dtype=float).reshape(1, -1))
        J = self.weights[-1].copy()
        for i in reversed(range(self.n_layers - 1)):
            J = (J * (cache[i + 1][0] > 0.0)) @ self.weights[i]
        return J

    # --- flat parameter vector helpers (serialization, gradient checks) -----

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def from_vector(self, vec: np.ndarray) -> None:
        off = 0
        for i in range(self.n_layers):
            n = self.weights[i].size
            self.weights[i] = vec[off : off + n].reshape(self.weights[i].shape).copy()
            off += n
            n = self.biases[i].size
            self.biases[i] = vec[off : off + n].copy()
            off += n

    def copy(self) -> "Mlp":
        other = Mlp(self.sizes, rng=None)
        other.weights = [W.copy() for W in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other
