"""World models for imagination: the true dynamics, and a bootstrapped tabular ensemble.

Both expose a per-state ``predict`` plus a vectorised cell-level ``step_cells``
used on hot paths (policy training, exploration-potential rollouts).
"""
from __future__ import annotations

from typing import Callable, Protocol

import numpy as np

from .env import EnvSpec, transition
from .replay import GO, ReplayBuffer, Trajectory


class DynamicsModel(Protocol):
    spec: EnvSpec

    def predict(self, state: np.ndarray, action: int, rng: np.random.Generator) -> np.ndarray: ...

    def step_cells(self, cells: np.ndarray, actions: np.ndarray, rng: np.random.Generator) -> np.ndarray: ...

    def fit(self, buffer: ReplayBuffer) -> None: ...

    def disagreement_table(self) -> np.ndarray: ...


def true_cell_table(spec: EnvSpec) -> np.ndarray:
    """``next_cell[c, a]`` from the true dynamics applied at cell centres."""
    centers = spec.cell_centers()
    table = np.empty((spec.n_cells, spec.n_actions), dtype=np.int64)
    for c in range(spec.n_cells):
        for a in range(spec.n_actions):
            if not spec.free.reshape(-1)[c]:
                table[c, a] = c
                continue
            table[c, a] = spec.cell_ids(transition(spec, centers[c], a))[0]
    return table


class OracleModel:
    """The environment's own transition function."""

    def __init__(self, spec: EnvSpec):
        self.spec = spec
        self.table = true_cell_table(spec)

    def predict(self, state, action, rng=None) -> np.ndarray:
        return transition(self.spec, state, action)

    def step_cells(self, cells, actions, rng=None) -> np.ndarray:
        return self.table[cells, actions]

    def fit(self, buffer: ReplayBuffer) -> None:
        pass

    def disagreement_table(self) -> np.ndarray:
        return np.zeros((self.spec.n_cells, self.spec.n_actions))

    def disagreement(self, state, action) -> float:
        return 0.0


class EmptyBuffer(ValueError):
    pass


class EnsembleTabularModel:
    """``B`` count-table models, each fitted on a bootstrap resample of the buffer's transitions.

    Unobserved ``(cell, action)`` pairs predict staying put.
    """

    def __init__(self, spec: EnvSpec, n_members: int = 5, seed: int = 0,
                 bootstrap_fraction: float = 1.0):
        self.spec = spec
        self.n_members = n_members
        self.bootstrap_fraction = bootstrap_fraction
        self.rng = np.random.default_rng(seed)
        C, A = spec.n_cells, spec.n_actions
        self.centers = spec.cell_centers()
        self.probs = np.zeros((n_members, C, A, C))
        ident = np.broadcast_to(np.eye(C)[:, None, :], (C, A, C))
        self.probs[:] = ident
        self.observed = np.zeros((n_members, C, A), dtype=bool)
        self._refresh()

    def _refresh(self):
        self.cum = np.cumsum(self.probs, axis=-1)
        self.mean_next = self.probs @ self.centers  # (B, C, A, 2)
        # population variance across members, summed over state dims
        self._disagreement = self.mean_next.var(axis=0).sum(axis=-1)

    def fit(self, buffer: ReplayBuffer) -> None:
        s, a, s2 = buffer.transitions("D")
        if len(s) == 0:
            raise EmptyBuffer("cannot fit on an empty buffer")
        self.fit_transitions(self.spec.cell_ids(s), a.astype(np.int64), self.spec.cell_ids(s2))

    def fit_transitions(self, c, a, c2) -> None:
        C, A = self.spec.n_cells, self.spec.n_actions
        n = len(c)
        m = max(1, int(round(self.bootstrap_fraction * n)))
        flat = (c * A + a) * C + c2
        for b in range(self.n_members):
            idx = self.rng.integers(n, size=m)
            counts = np.bincount(flat[idx], minlength=C * A * C).reshape(C, A, C).astype(float)
            tot = counts.sum(axis=-1)
            seen = tot > 0
            p = np.broadcast_to(np.eye(C)[:, None, :], (C, A, C)).copy()
            p[seen] = counts[seen] / tot[seen][:, None]
            self.probs[b] = p
            self.observed[b] = seen
        self._refresh()

    def step_cells(self, cells, actions, rng: np.random.Generator) -> np.ndarray:
        cells = np.asarray(cells)
        actions = np.asarray(actions)
        n = cells.size
        members = rng.integers(self.n_members, size=n)
        u = rng.random(n)
        cum = self.cum[members, cells.ravel(), actions.ravel()]
        nxt = np.argmax(cum > u[:, None] * cum[:, -1:], axis=1)
        return nxt.reshape(cells.shape)

    def predict(self, state, action, rng: np.random.Generator) -> np.ndarray:
        c = self.spec.cell_ids(np.asarray(state))[0]
        return self.centers[self.step_cells(np.array([c]), np.array([int(action)]), rng)[0]].copy()

    def disagreement_table(self) -> np.ndarray:
        return self._disagreement

    def disagreement(self, state, action) -> float:
        """Exploration reward r^E(s, a): spread of the members' mean next-state predictions."""
        c = self.spec.cell_ids(np.asarray(state))[0]
        return float(self._disagreement[c, int(action)])


Policy = Callable[[np.ndarray, "np.ndarray | None", np.random.Generator], int]


def imagine_rollout(model, policy: Policy, start, goal, T: int, rng: np.random.Generator) -> Trajectory:
    """Roll ``policy`` through ``model`` for exactly ``T`` steps."""
    if T < 1:
        raise ValueError("T must be >= 1")
    s = np.asarray(start, dtype=float)
    states = [s]
    actions = []
    for _ in range(T):
        a = int(policy(s, goal, rng))
        s = np.asarray(model.predict(s, a, rng), dtype=float)
        actions.append(a)
        states.append(s)
    return Trajectory(np.array(states), np.array(actions), [GO] * T,
                      None if goal is None else np.asarray(goal, dtype=float))


def disagreement(model, state, action) -> float:
    return model.disagreement(state, action)
