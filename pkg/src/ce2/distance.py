"""Temporal-distance regressor over embedding pairs and a BFS ground truth."""
from __future__ import annotations

from collections import deque

import numpy as np

from .nets import MLP, make_optimizer

UNREACHABLE = -1


class TemporalDistanceEstimator:
    """Directional estimate of normalised step count ``k / H`` between two embeddings.

    Output lies in ``[0, 1]`` (sigmoid head). Not symmetric by construction.
    """

    def __init__(self, dim: int, hidden: int = 32, lr: float = 1e-3, optimizer: str = "adam",
                 seed: int = 0, init_scale: float = 0.1):
        self.dim = dim
        self.net = MLP(2 * dim, hidden, 1, activation="tanh", out_sigmoid=True,
                       init_scale=init_scale, rng=np.random.default_rng(seed))
        self.opt = make_optimizer(optimizer, lr)

    def _input(self, e1, e2) -> np.ndarray:
        e1 = np.atleast_2d(np.asarray(e1, dtype=float))
        e2 = np.atleast_2d(np.asarray(e2, dtype=float))
        if e1.shape[-1] != self.dim or e2.shape[-1] != self.dim:
            raise ValueError(f"expected embeddings of dim {self.dim}, got {e1.shape[-1]} and {e2.shape[-1]}")
        return np.concatenate([e1, e2], axis=-1)

    def predict(self, e1, e2) -> np.ndarray:
        return self.net(self._input(e1, e2))[:, 0]

    def distance(self, e1, e2) -> float:
        return float(self.predict(e1, e2)[0])

    def loss_and_grads(self, e1, e2, targets):
        out, cache = self.net.forward(self._input(e1, e2))
        err = out[:, 0] - np.asarray(targets, dtype=float)
        loss = float(np.mean(err ** 2))
        grads, _ = self.net.backward(cache, (2.0 * err / len(err))[:, None])
        return loss, grads

    def train_step(self, e1, e2, k, H: int) -> float:
        """One optimizer step on MSE against ``k / H``; returns the pre-step loss."""
        k = np.asarray(k, dtype=float)
        if H < 1:
            raise ValueError("H must be >= 1")
        if np.any(k < 0) or np.any(k > H):
            raise ValueError("k must lie in [0, H]")
        loss, grads = self.loss_and_grads(e1, e2, k / H)
        self.opt.step(self.net.params, grads)
        return loss


def goal_reward(est: TemporalDistanceEstimator, embedder, s, g) -> float:
    """r^G(s, g) = -D_t(psi(s), psi(g))."""
    return -est.distance(embedder.embed(s), embedder.embed(g))


def bfs_all(free: np.ndarray, source: tuple[int, int]) -> np.ndarray:
    """Step counts from ``source`` to every cell (``-1`` for walls / unreachable)."""
    h, w = free.shape
    dist = np.full((h, w), UNREACHABLE, dtype=int)
    sx, sy = source
    if not (0 <= sx < w and 0 <= sy < h and free[sy, sx]):
        return dist
    dist[sy, sx] = 0
    q = deque([(sx, sy)])
    while q:
        x, y = q.popleft()
        for dx, dy in ((0, 1), (1, 0), (0, -1), (-1, 0)):
            nx, ny = x + dx, y + dy
            if 0 <= nx < w and 0 <= ny < h and free[ny, nx] and dist[ny, nx] < 0:
                dist[ny, nx] = dist[y, x] + 1
                q.append((nx, ny))
    return dist


class BfsOracle:
    """Exact shortest-path step counts over free cells (4-neighbourhood)."""

    def __init__(self, free: np.ndarray):
        self.free = np.asarray(free, dtype=bool)
        self._cache: dict[tuple[int, int], np.ndarray] = {}

    def from_cell(self, c: tuple[int, int]) -> np.ndarray:
        c = (int(c[0]), int(c[1]))
        if c not in self._cache:
            self._cache[c] = bfs_all(self.free, c)
        return self._cache[c]

    def distance(self, c1, c2) -> int:
        """Step count, or ``UNREACHABLE`` (-1) when disconnected."""
        x1, y1 = int(c1[0]), int(c1[1])
        x2, y2 = int(c2[0]), int(c2[1])
        h, w = self.free.shape
        for x, y in ((x1, y1), (x2, y2)):
            if not (0 <= x < w and 0 <= y < h and self.free[y, x]):
                raise ValueError(f"cell {(x, y)} is not free")
        return int(self.from_cell((x1, y1))[y2, x2])

    def matrix(self) -> np.ndarray:
        """All-pairs distances over flat cell ids (``-1`` off the free set)."""
        h, w = self.free.shape
        out = np.full((h * w, h * w), UNREACHABLE, dtype=int)
        for y in range(h):
            for x in range(w):
                if self.free[y, x]:
                    out[y * w + x] = self.from_cell((x, y)).reshape(-1)
        return out


def bfs_distance(oracle: BfsOracle, c1, c2) -> int:
    return oracle.distance(c1, c2)
