"""Tabular goal-reaching and exploration policies trained by Q-learning in imagination."""
from __future__ import annotations

import numpy as np

from .env import EnvSpec


def _greedy(q: np.ndarray) -> np.ndarray:
    # np.argmax picks the first maximum -> ties go to the lowest action index
    return np.argmax(q, axis=-1)


class _TabularPolicy:
    def __init__(self, spec: EnvSpec, gamma: float = 0.95, epsilon: float = 0.1, lr: float = 0.2):
        self.spec = spec
        self.gamma, self.epsilon, self.lr = gamma, epsilon, lr

    def _eps_greedy(self, q_rows: np.ndarray, greedy: bool, rng) -> np.ndarray:
        a = _greedy(q_rows)
        if greedy or self.epsilon <= 0:
            return a
        n = a.shape[0]
        flip = rng.random(n) < self.epsilon
        rand = rng.integers(self.spec.n_actions, size=n)
        return np.where(flip, rand, a)


class GoalPolicy(_TabularPolicy):
    """``Q[cell, goal_cell, action]`` with epsilon-greedy acting."""

    def __init__(self, spec: EnvSpec, **kw):
        super().__init__(spec, **kw)
        C = spec.n_cells
        self.q = np.zeros((C, C, spec.n_actions))

    def act_cells(self, cells, goal_cells, greedy: bool = False, rng=None) -> np.ndarray:
        cells = np.atleast_1d(cells)
        goal_cells = np.broadcast_to(np.atleast_1d(goal_cells), cells.shape)
        return self._eps_greedy(self.q[cells, goal_cells], greedy, rng)

    def act(self, s, g, greedy: bool = False, rng=None) -> int:
        c = self.spec.cell_ids(np.asarray(s))
        gc = self.spec.cell_ids(np.asarray(g))
        return int(self.act_cells(c, gc, greedy, rng)[0])

    def value(self, s, g) -> float:
        """V^G(s, g) = max_a Q."""
        c = self.spec.cell_ids(np.asarray(s))[0]
        gc = self.spec.cell_ids(np.asarray(g))[0]
        return float(self.q[c, gc].max())

    def as_callable(self, greedy: bool = False):
        return lambda s, g, rng: self.act(s, g, greedy, rng)


class ExplorePolicy(_TabularPolicy):
    """``Q[cell, action]`` maximising the ensemble-disagreement reward."""

    def __init__(self, spec: EnvSpec, **kw):
        super().__init__(spec, **kw)
        self.q = np.zeros((spec.n_cells, spec.n_actions))

    def act_cells(self, cells, greedy: bool = False, rng=None) -> np.ndarray:
        return self._eps_greedy(self.q[np.atleast_1d(cells)], greedy, rng)

    def act(self, s, g=None, greedy: bool = False, rng=None) -> int:
        return int(self.act_cells(self.spec.cell_ids(np.asarray(s)), greedy, rng)[0])

    def value_table(self) -> np.ndarray:
        return self.q.max(axis=1)

    def value(self, s) -> float:
        """V^E(s) = max_a Q(s, a)."""
        return float(self.q[self.spec.cell_ids(np.asarray(s))[0]].max())

    def as_callable(self, greedy: bool = False):
        return lambda s, g, rng: self.act(s, None, greedy, rng)


def value_explore(policy: ExplorePolicy, s) -> float:
    return policy.value(s)


def act_goal(policy: GoalPolicy, s, g, greedy: bool, rng) -> int:
    return policy.act(s, g, greedy, rng)


def temporal_reward_table(spec: EnvSpec, embedder, dist_est, goal_cells: np.ndarray) -> np.ndarray:
    """``R[c, j] = -D_t(psi(center c), psi(center goal_cells[j]))`` for every cell ``c``."""
    centers = spec.cell_centers()
    z = embedder.embed(centers)
    zg = z[goal_cells]
    C, G = len(centers), len(goal_cells)
    e1 = np.repeat(z, G, axis=0)
    e2 = np.tile(zg, (C, 1))
    return -dist_est.predict(e1, e2).reshape(C, G)


def train_goal_policy(policy: GoalPolicy, model, reward_table: np.ndarray, goal_cells: np.ndarray,
                      drive_goal_cells: np.ndarray, start_cells: np.ndarray, n_rollouts: int, T: int,
                      rng: np.random.Generator) -> None:
    """Q-learning along ``n_rollouts`` imagined rollouts of length ``T``.

    Each rollout acts epsilon-greedily toward a goal drawn from
    ``drive_goal_cells``; every transition updates Q for all of ``goal_cells``
    (the reward for arriving in ``s'`` is ``reward_table[s', goal]``, indexed
    by cell id on both axes).
    """
    if n_rollouts <= 0 or T <= 0 or len(goal_cells) == 0:
        return
    goal_cells = np.asarray(goal_cells)
    s = np.asarray(start_cells)[rng.integers(len(start_cells), size=n_rollouts)]
    g = np.asarray(drive_goal_cells)[rng.integers(len(drive_goal_cells), size=n_rollouts)]
    q = policy.q
    gcol = goal_cells[None, :]
    for _ in range(T):
        a = policy.act_cells(s, g, greedy=False, rng=rng)
        s2 = model.step_cells(s, a, rng)
        target = reward_table[s2[:, None], gcol] + policy.gamma * q[s2[:, None], gcol].max(axis=-1)
        cur = q[s[:, None], gcol, a[:, None]]
        q[s[:, None], gcol, a[:, None]] = cur + policy.lr * (target - cur)
        s = s2


def train_explore_policy(policy: ExplorePolicy, model, start_cells: np.ndarray, n_rollouts: int,
                         T: int, rng: np.random.Generator, reward_table: np.ndarray | None = None) -> None:
    """Q-learning on imagined rollouts with reward ``disagreement(s, a)`` at the transition origin."""
    if n_rollouts <= 0 or T <= 0:
        return
    r = model.disagreement_table() if reward_table is None else reward_table
    s = np.asarray(start_cells)[rng.integers(len(start_cells), size=n_rollouts)]
    q = policy.q
    for _ in range(T):
        a = policy.act_cells(s, greedy=False, rng=rng)
        s2 = model.step_cells(s, a, rng)
        target = r[s, a] + policy.gamma * q[s2].max(axis=-1)
        q[s, a] += policy.lr * (target - q[s, a])
        s = s2
