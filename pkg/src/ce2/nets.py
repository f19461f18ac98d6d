"""Two-layer numpy networks with hand-written backprop, plus optimizers."""
from __future__ import annotations

import numpy as np

ACTIVATIONS = ("tanh", "linear")


class MLP:
    """``x -> act(x W1 + b1) W2 + b2`` with optional sigmoid on the output."""

    def __init__(self, n_in: int, n_hidden: int, n_out: int, *, activation: str = "tanh",
                 out_sigmoid: bool = False, init_scale: float = 0.1,
                 rng: np.random.Generator | None = None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_in, self.n_hidden, self.n_out = n_in, n_hidden, n_out
        self.activation = activation
        self.out_sigmoid = out_sigmoid
        self.params = {
            "W1": rng.normal(0.0, init_scale, (n_in, n_hidden)),
            "b1": np.zeros(n_hidden),
            "W2": rng.normal(0.0, init_scale, (n_hidden, n_out)),
            "b2": np.zeros(n_out),
        }

    def forward(self, x: np.ndarray):
        p = self.params
        pre = x @ p["W1"] + p["b1"]
        h = np.tanh(pre) if self.activation == "tanh" else pre
        out = h @ p["W2"] + p["b2"]
        if self.out_sigmoid:
            out = 1.0 / (1.0 + np.exp(-out))
        return out, (x, h, out)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache, grad_out: np.ndarray):
        """Return ``(param_grads, grad_x)`` for upstream gradient ``grad_out``."""
        x, h, out = cache
        p = self.params
        g = grad_out * out * (1.0 - out) if self.out_sigmoid else grad_out
        grads = {"W2": h.T @ g, "b2": g.sum(axis=0)}
        gh = g @ p["W2"].T
        if self.activation == "tanh":
            gh = gh * (1.0 - h * h)
        grads["W1"] = x.T @ gh
        grads["b1"] = gh.sum(axis=0)
        return grads, gh @ p["W1"].T

    # flat parameter vector, fixed key order
    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in ("W1", "b1", "W2", "b2")])

    def set_flat(self, flat: np.ndarray) -> None:
        i = 0
        for k in ("W1", "b1", "W2", "b2"):
            n = self.params[k].size
            self.params[k] = np.asarray(flat[i:i + n], dtype=float).reshape(self.params[k].shape).copy()
            i += n
        if i != len(flat):
            raise ValueError(f"expected {i} parameters, got {len(flat)}")

    @staticmethod
    def flatten_grads(grads: dict) -> np.ndarray:
        return np.concatenate([grads[k].ravel() for k in ("W1", "b1", "W2", "b2")])


class Adam:
    def __init__(self, lr: float = 1e-3, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        for k, g in grads.items():
            m = self.m.get(k)
            if m is None:
                m = self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            v = self.v[k]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            mhat = m / (1 - self.b1 ** self.t)
            vhat = v / (1 - self.b2 ** self.t)
            params[k] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


class Momentum:
    def __init__(self, lr: float = 3e-4, momentum: float = 0.9):
        self.lr, self.momentum = lr, momentum
        self.vel: dict = {}

    def step(self, params: dict, grads: dict) -> None:
        for k, g in grads.items():
            v = self.vel.get(k)
            if v is None:
                v = self.vel[k] = np.zeros_like(g)
            v *= self.momentum
            v += g
            params[k] -= self.lr * v


def make_optimizer(name: str, lr: float):
    if name == "adam":
        return Adam(lr)
    if name in ("momentum", "sgd"):
        return Momentum(lr, 0.9 if name == "momentum" else 0.0)
    raise ValueError(f"unknown optimizer {name!r}")
