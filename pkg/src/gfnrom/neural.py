"""Dense feedforward blocks with hand-written reverse-mode gradients.

Just what the surrounding model needs: affine stacks with tanh, a toggle
for whether the last layer is activated, Glorot initialization, and the
two optimizers used for training.  Everything is float64 and batch-first:
inputs have shape (B, n_in).
"""

from __future__ import annotations

import numpy as np

__all__ = ["DenseNet", "glorot", "SGD", "Adam"]


def glorot(rng: np.random.Generator, n_out: int, n_in: int) -> np.ndarray:
    """Glorot-uniform weight matrix of shape (n_out, n_in)."""
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_out, n_in))


class DenseNet:
    """Affine layer stack; tanh after every layer, optionally not the last.

    ``weights[k]`` has shape (n_{k+1}, n_k).  An empty stack is the
    identity map, which keeps callers free of special cases.
    """

    def __init__(self, weights, biases, final_activation: bool = True):
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.final_activation = bool(final_activation)
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases length mismatch")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"bad shapes in layer {k}")
            if k and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ValueError(f"layer {k} does not chain with layer {k - 1}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"non-finite parameters in layer {k}")

    @classmethod
    def init(cls, sizes, rng: np.random.Generator, final_activation: bool = True):
        """Glorot-uniform weights and zero biases for the given layer sizes."""
        weights = [glorot(rng, sizes[k + 1], sizes[k]) for k in range(len(sizes) - 1)]
        biases = [np.zeros(sizes[k + 1]) for k in range(len(sizes) - 1)]
        return cls(weights, biases, final_activation)

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def sizes(self) -> list[int]:
        """Layer sizes [n_in, ..., n_out]; empty nets have no recorded size."""
        if not self.weights:
            return []
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def _activated(self, k: int) -> bool:
        return self.final_activation or k < len(self.weights) - 1

    def forward(self, x: np.ndarray) -> np.ndarray:
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = x @ w.T + b
            if self._activated(k):
                x = np.tanh(x)
        return x

    def forward_tape(self, x: np.ndarray):
        """Forward pass recording (input, output, activated) per layer."""
        tape = []
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = x @ w.T + b
            act = self._activated(k)
            y = np.tanh(a) if act else a
            tape.append((x, y, act))
            x = y
        return x, tape

    def backward(self, tape, gy: np.ndarray):
        """Gradients for a recorded forward pass.

        Returns (gx, gws, gbs) where gx is the gradient at the net input
        and gws/gbs are per-layer parameter gradients.
        """
        gws = [None] * len(self.weights)
        gbs = [None] * len(self.weights)
        for k in range(len(self.weights) - 1, -1, -1):
            x, y, act = tape[k]
            ga = gy * (1.0 - y * y) if act else gy
            gws[k] = ga.T @ x
            gbs[k] = ga.sum(axis=0)
            gy = ga @ self.weights[k]
        return gy, gws, gbs


class SGD:
    """Plain gradient descent with L2 decay folded into the gradient.

    Stateless, so parameter arrays may change shape between steps; the
    adaptive training mode depends on that.
    """

    def __init__(self, lr: float = 1e-3, l2: float = 1e-5):
        self.lr = float(lr)
        self.l2 = float(l2)

    def step(self, params, grads, decay) -> None:
        for p, g, d in zip(params, grads, decay):
            if d and self.l2:
                g = g + self.l2 * p
            p -= self.lr * g


class Adam:
    """Adam; the L2 term is added to the gradient of decayed parameters.

    Moment buffers are bound to parameter shapes, so shape-changing
    parameter sets are rejected.
    """

    def __init__(
        self,
        lr: float = 1e-3,
        l2: float = 1e-5,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.lr = float(lr)
        self.l2 = float(l2)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self._m = None
        self._v = None
        self._t = 0

    def step(self, params, grads, decay) -> None:
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        if len(params) != len(self._m) or any(
            p.shape != m.shape for p, m in zip(params, self._m)
        ):
            raise ValueError("parameter shapes changed under Adam")
        self._t += 1
        c1 = 1.0 - self.beta1**self._t
        c2 = 1.0 - self.beta2**self._t
        for p, g, d, m, v in zip(params, grads, decay, self._m, self._v):
            if d and self.l2:
                g = g + self.l2 * p
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
