"""Trajectory storage with named partitions.

Every trajectory lives in the main store ``D``; appending to ``exp`` or
``egc`` also tags it with that partition. Eviction is FIFO over ``D`` and
drops the trajectory from every partition.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

GO, EXPLORE, GOAL_ROLLOUT = "go", "explore", "goal"
PARTITIONS = ("D", "exp", "egc")


class UnknownPartition(KeyError):
    pass


class EmptyPartition(ValueError):
    pass


@dataclass
class Trajectory:
    states: np.ndarray  # (T + 1, state_dim)
    actions: np.ndarray  # (T,)
    phases: list[str] = field(default_factory=list)
    goal: np.ndarray | None = None

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.actions = np.asarray(self.actions)
        if not self.phases:
            self.phases = [GO] * len(self.actions)
        if len(self.states) != len(self.actions) + 1:
            raise ValueError("need exactly one more state than actions")
        if len(self.phases) != len(self.actions):
            raise ValueError("one phase tag per action")
        if not phases_well_formed(self.phases):
            raise ValueError(f"interleaved phase tags: {self.phases}")

    def __len__(self) -> int:
        return len(self.actions)

    def to_dict(self) -> dict:
        return {
            "states": self.states.tolist(),
            "actions": self.actions.tolist(),
            "phases": list(self.phases),
            "goal": None if self.goal is None else np.asarray(self.goal).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        goal = d.get("goal")
        return cls(np.array(d["states"]), np.array(d["actions"]), list(d["phases"]),
                   None if goal is None else np.array(goal, dtype=float))


def phases_well_formed(phases) -> bool:
    """All go steps precede all explore steps; no tag reappears after it ends."""
    seen = []
    for p in phases:
        if not seen or seen[-1] != p:
            if p in seen:
                return False
            seen.append(p)
    if GO in seen and EXPLORE in seen and seen.index(GO) > seen.index(EXPLORE):
        return False
    return True


class ReplayBuffer:
    def __init__(self, capacity: int = 10_000):
        self.capacity = capacity
        self._items: deque[tuple[int, Trajectory, frozenset]] = deque()
        self._next_id = 0

    def __len__(self) -> int:
        return len(self._items)

    def append(self, traj: Trajectory, partition: str = "D") -> None:
        if partition not in PARTITIONS:
            raise UnknownPartition(partition)
        tags = frozenset({"D", partition})
        self._items.append((self._next_id, traj, tags))
        self._next_id += 1
        while len(self._items) > self.capacity:
            self._items.popleft()

    def trajectories(self, partition: str = "D") -> list[Trajectory]:
        if partition not in PARTITIONS:
            raise UnknownPartition(partition)
        return [t for _, t, tags in self._items if partition in tags]

    def size(self, partition: str = "D") -> int:
        return len(self.trajectories(partition))

    def all_states(self, partition: str = "D") -> np.ndarray:
        trajs = self.trajectories(partition)
        if not trajs:
            return np.zeros((0, 2))
        return np.concatenate([t.states for t in trajs])

    def transitions(self, partition: str = "D"):
        """Stacked ``(s, a, s')`` arrays over the partition."""
        trajs = self.trajectories(partition)
        if not trajs:
            return np.zeros((0, 2)), np.zeros(0, dtype=int), np.zeros((0, 2))
        s = np.concatenate([t.states[:-1] for t in trajs])
        a = np.concatenate([t.actions for t in trajs])
        s2 = np.concatenate([t.states[1:] for t in trajs])
        return s, a, s2

    def sample_state_batch(self, partition: str, n: int, rng: np.random.Generator) -> np.ndarray:
        """``n`` states uniformly (with replacement) over all states in the partition."""
        states = self.all_states(partition)
        if len(states) == 0:
            raise EmptyPartition(partition)
        return states[rng.integers(len(states), size=n)]

    def sample_recent_batch(self, partition: str, n_trajectories: int) -> list[Trajectory]:
        trajs = self.trajectories(partition)
        if n_trajectories <= 0:
            return []
        return trajs[-n_trajectories:]

    def sample_pair_batch(self, partition: str, n: int, k_max: int, rng: np.random.Generator):
        """``n`` same-trajectory pairs ``(s_t, s_{t+k}, k)``.

        The trajectory is drawn proportional to its state count, ``t`` uniform,
        then ``k`` uniform on ``[0, min(k_max, len - t)]``.
        """
        trajs = self.trajectories(partition)
        if not trajs:
            raise EmptyPartition(partition)
        return sample_pairs(trajs, n, k_max, rng)

    # -- json lines -----------------------------------------------------------
    def dump(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for _, t, tags in self._items:
                d = t.to_dict()
                d["partitions"] = sorted(tags)
                fh.write(json.dumps(d) + "\n")

    @classmethod
    def restore(cls, path: str | Path, capacity: int = 10_000) -> "ReplayBuffer":
        buf = cls(capacity)
        with open(path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                d = json.loads(line)
                parts = [p for p in d.get("partitions", ["D"]) if p != "D"]
                buf.append(Trajectory.from_dict(d), parts[0] if parts else "D")
        return buf


def sample_pairs(trajs: list[Trajectory], n: int, k_max: int, rng: np.random.Generator):
    lengths = np.array([len(t.states) for t in trajs])
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    flat = rng.integers(offsets[-1], size=n)
    ti = np.searchsorted(offsets, flat, side="right") - 1
    t = flat - offsets[ti]
    remaining = lengths[ti] - 1 - t
    hi = np.minimum(k_max, remaining)
    k = np.floor(rng.random(n) * (hi + 1)).astype(int)
    states = np.concatenate([tr.states for tr in trajs])
    s1 = states[flat]
    s2 = states[flat + k]
    return s1, s2, k
