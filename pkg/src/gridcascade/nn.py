"""Small dense networks with hand-written backprop, and Adam."""

from __future__ import annotations

import numpy as np

__all__ = ["MLP", "Adam"]


class MLP:
    """Fully connected network: ReLU hidden layers, configurable output.

    ``output`` is ``"linear"`` or ``"unit"`` (``(tanh(z) + 1) / 2``, so
    every output lies in [0, 1]).  Inputs are batches of shape
    ``(batch, sizes[0])``.
    """

    def __init__(self, sizes, output="linear", rng=None, final_scale=3e-3):
        if output not in ("linear", "unit"):
            raise ValueError(f"unknown output activation {output!r}")
        self.sizes = tuple(int(s) for s in sizes)
        self.output = output
        rng = np.random.default_rng(rng)
        self.params = []
        n_layers = len(self.sizes) - 1
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            bound = final_scale if i == n_layers - 1 else 1.0 / np.sqrt(fan_in)
            self.params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.params.append(rng.uniform(-bound, bound, size=fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.params) // 2

    def copy(self) -> "MLP":
        other = MLP.__new__(MLP)
        other.sizes, other.output = self.sizes, self.output
        other.params = [p.copy() for p in self.params]
        return other

    def forward(self, x):
        """Return ``(y, cache)``; ``cache`` feeds :meth:`backward`."""
        h = np.asarray(x, dtype=float)
        cache = [h]
        for i in range(self.n_layers):
            w, b = self.params[2 * i], self.params[2 * i + 1]
            z = h @ w + b
            if i < self.n_layers - 1:
                h = np.maximum(z, 0.0)
            elif self.output == "unit":
                h = 0.5 * (np.tanh(z) + 1.0)
            else:
                h = z
            cache.append(h)
        return h, cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, grad_out):
        """Gradients of ``sum(grad_out * y)`` w.r.t. the parameters and input."""
        g = np.asarray(grad_out, dtype=float)
        grads = [None] * len(self.params)
        for i in reversed(range(self.n_layers)):
            out = cache[i + 1]
            if i == self.n_layers - 1:
                if self.output == "unit":
                    # y = (tanh z + 1)/2  ->  dy/dz = 2 y (1 - y)
                    g = g * 2.0 * out * (1.0 - out)
            else:
                g = g * (out > 0)
            h = cache[i]
            grads[2 * i] = h.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.params[2 * i].T
        return grads, g


class Adam:
    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        """Update ``params`` in place to descend along ``grads``."""
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
