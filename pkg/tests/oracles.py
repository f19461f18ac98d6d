"""Independent reference computations used by the tests.

Nothing here calls into the package's numerical code paths; each oracle is
written from the defining formula.
"""
from __future__ import annotations

import itertools
import math

import networkx as nx
import numpy as np


def central_fd(f, x: np.ndarray, idx: int, h: float = 1e-6) -> float:
    x = x.copy()
    x0 = x[idx]
    x[idx] = x0 + h
    up = f(x)
    x[idx] = x0 - h
    down = f(x)
    return (up - down) / (2 * h)


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def grid_graph(free: np.ndarray) -> nx.Graph:
    """4-neighbour graph over free cells, nodes are ``(x, y)``."""
    h, w = free.shape
    g = nx.Graph()
    for y, x in itertools.product(range(h), range(w)):
        if not free[y, x]:
            continue
        g.add_node((x, y))
        for dx, dy in ((1, 0), (0, 1)):
            nx_, ny_ = x + dx, y + dy
            if nx_ < w and ny_ < h and free[ny_, nx_]:
                g.add_edge((x, y), (nx_, ny_))
    return g


def shortest_paths(free: np.ndarray) -> dict:
    return dict(nx.all_pairs_shortest_path_length(grid_graph(free)))


def mixture_density(z, centroids, weights, sigma2) -> float:
    """``sum_i w_i N(z | c_i, sigma2 I)`` written out term by term."""
    z = [float(v) for v in np.ravel(z)]
    d = len(z)
    total = 0.0
    for c, w in zip(centroids, weights):
        sq = sum((zi - float(ci)) ** 2 for zi, ci in zip(z, np.ravel(c)))
        total += float(w) * math.exp(-0.5 * sq / sigma2) / (2 * math.pi * sigma2) ** (d / 2)
    return total


def value_iteration(next_cell: np.ndarray, reward: np.ndarray, gamma: float, terminal=None,
                    iters: int = 2000) -> np.ndarray:
    """Q* for a deterministic tabular MDP.

    ``reward[c, a]`` is received on taking ``a`` in ``c``; ``terminal`` cells
    have value 0 and stop the recursion.
    """
    C, A = next_cell.shape
    q = np.zeros((C, A))
    for _ in range(iters):
        v = q.max(axis=1)
        if terminal is not None:
            v = np.where(terminal, 0.0, v)
        q = reward + gamma * v[next_cell]
    return q


def trajectory_tree_expectation(start: int, T: int, policy_probs, trans_probs, value) -> float:
    """Exact ``E[value(s_T)]`` by enumerating every action/next-state branch.

    ``policy_probs[s] -> {action: p}``, ``trans_probs[(s, a)] -> {s': p}``.
    """
    def rec(s, t):
        if t == T:
            return value[s]
        total = 0.0
        for a, pa in policy_probs[s].items():
            for s2, ps in trans_probs[(s, a)].items():
                total += pa * ps * rec(s2, t + 1)
        return total

    return rec(start, 0)


def max_min_holds(points: np.ndarray, chosen: list[int]) -> bool:
    """Replay FPS: every pick attains the maximal min-distance to earlier picks."""
    pts = np.asarray(points, dtype=float).reshape(len(points), -1)
    for k in range(1, len(chosen)):
        prev = pts[chosen[:k]]
        mind = [min(float(np.linalg.norm(p - q)) for q in prev) for p in pts]
        if mind[chosen[k]] < max(mind) - 1e-12:
            return False
    return True


def distance_to_set(free: np.ndarray, targets) -> dict:
    """Shortest-path steps from every free cell to the nearest cell in ``targets`` (``(x, y)`` tuples)."""
    return nx.multi_source_dijkstra_path_length(grid_graph(free), set(targets))
