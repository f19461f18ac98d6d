"""Goal selection strategies, the two-phase Go-Explore episode, and the training loops."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import agents
from .clustering import GMM, edge_indices
from .config import ExperimentConfig
from .distance import TemporalDistanceEstimator
from .env import EnvSpec, MazeEnv, sample_env_goal, success
from .latent import LatentSpace
from .model import EnsembleTabularModel
from .replay import EXPLORE, GO, GOAL_ROLLOUT, ReplayBuffer, Trajectory, sample_pairs

GMM_STRATEGIES = ("CE2", "CE2_G", "CE2_noPEG")


# -- density models -------------------------------------------------------------
class KDE:
    """Isotropic Gaussian kernel density; Silverman bandwidth by default."""

    def __init__(self, support: np.ndarray, bandwidth: float | None = None):
        self.support = np.atleast_2d(np.asarray(support, dtype=float))
        n, d = self.support.shape
        if bandwidth is None:
            sd = float(np.mean(self.support.std(axis=0))) if n > 1 else 0.0
            bandwidth = sd * (4.0 / ((d + 2) * n)) ** (1.0 / (d + 4))
        self.bandwidth = max(float(bandwidth), 1e-3)

    def density(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        d = self.support.shape[1]
        sq = ((x[:, None, :] - self.support[None, :, :]) ** 2).sum(-1)
        h2 = self.bandwidth ** 2
        k = np.exp(-0.5 * sq / h2) / (2 * np.pi * h2) ** (d / 2)
        return k.mean(axis=1)


# -- exploration potential ------------------------------------------------------
def exploration_potentials(goal_cells, goal_policy, explore_values: np.ndarray, model, K: int, T: int,
                           start_cell: int, rng: np.random.Generator, greedy: bool = False) -> np.ndarray:
    """Monte-Carlo ``P^E(g) ~ mean_k V^E(s_T^k)`` for each goal cell.

    ``K`` imagined rollouts of the goal policy per goal, all from ``start_cell``.
    """
    goal_cells = np.atleast_1d(np.asarray(goal_cells))
    n = len(goal_cells)
    g = np.repeat(goal_cells, K)
    s = np.full(n * K, start_cell, dtype=np.int64)
    for _ in range(T):
        a = goal_policy.act_cells(s, g, greedy=greedy, rng=rng)
        s = model.step_cells(s, a, rng)
    return np.asarray(explore_values)[s].reshape(n, K).mean(axis=1)


def exploration_potential(goal, goal_policy, explore_values, model, K, T, rng, start=None,
                          greedy: bool = False) -> float:
    spec = goal_policy.spec
    gc = spec.cell_ids(np.asarray(goal))[0]
    sc = spec.cell_ids(spec.start if start is None else np.asarray(start))[0]
    return float(exploration_potentials([gc], goal_policy, explore_values, model, K, T, sc, rng, greedy)[0])


# -- cluster-edge goals ---------------------------------------------------------------
@dataclass
class EdgeSet:
    candidates: np.ndarray  # latent samples
    edge_idx: np.ndarray  # indices into candidates, ascending density
    goals: np.ndarray  # decoded + snapped goals, one per edge

    @property
    def edges(self) -> np.ndarray:
        return self.candidates[self.edge_idx]


def edge_goals(gmm: GMM, latent: LatentSpace, spec: EnvSpec, n_candidate: int, n_edge: int,
               rng: np.random.Generator) -> EdgeSet:
    cand = gmm.sample(n_candidate, rng)
    idx = edge_indices(gmm, cand, n_edge)
    decoded = latent.decode_goal(cand[idx])
    goals = np.array([spec.snap_goal(g) for g in np.atleast_2d(decoded)])
    return EdgeSet(cand, idx, goals)


def ce2_select_goal(gmm, latent, goal_policy, explore_values, model, cfg, rng, spec=None,
                    return_edges: bool = False):
    """Sample candidates, keep the lowest-density edges, decode, return the max-potential goal."""
    spec = spec or goal_policy.spec
    es = edge_goals(gmm, latent, spec, cfg.n_candidate, cfg.n_edge, rng)
    t_go = cfg.T_go or spec.max_episode_len // 2
    pot = exploration_potentials(spec.cell_ids(es.goals), goal_policy, explore_values, model, cfg.K,
                                 t_go, spec.cell_ids(spec.start)[0], rng, cfg.potential_greedy)
    best = int(np.argmax(pot))
    return (es.goals[best], es, best) if return_edges else es.goals[best]


def ce2_nopeg_select_goal(gmm, latent, spec, cfg, rng, return_edges: bool = False):
    es = edge_goals(gmm, latent, spec, cfg.n_candidate, cfg.n_edge, rng)
    pick = int(rng.integers(len(es.goals)))
    return (es.goals[pick], es, pick) if return_edges else es.goals[pick]


def mega_select_goal(kde: KDE, replay_goals: np.ndarray, goal_value: np.ndarray | None = None,
                     threshold: float | None = None, keep_fraction: float = 0.5) -> np.ndarray:
    """Lowest-density replay goal among those passing the reachability filter.

    The filter keeps goals with ``goal_value >= threshold``; by default the
    threshold keeps the top ``keep_fraction`` by value. If nothing survives,
    the unfiltered argmin is returned.
    """
    replay_goals = np.atleast_2d(replay_goals)
    dens = kde.density(replay_goals)
    mask = np.ones(len(replay_goals), dtype=bool)
    if goal_value is not None:
        goal_value = np.asarray(goal_value, dtype=float)
        if threshold is None:
            threshold = float(np.quantile(goal_value, 1.0 - keep_fraction))
        mask = goal_value >= threshold
    if not mask.any():
        mask[:] = True
    masked = np.where(mask, dens, np.inf)
    return replay_goals[int(np.argmin(masked))]


def peg_select_goal(candidates: np.ndarray, goal_policy, explore_values, model, K, T, rng,
                    greedy: bool = False) -> np.ndarray:
    """Argmax of exploration potential over a candidate set (sample-and-argmax stand-in for MPPI)."""
    spec = goal_policy.spec
    candidates = np.atleast_2d(candidates)
    pot = exploration_potentials(spec.cell_ids(candidates), goal_policy, explore_values, model, K, T,
                                 spec.cell_ids(spec.start)[0], rng, greedy)
    return candidates[int(np.argmax(pot))]


def mega_peg_select_goal(kde: KDE, replay_goals, goal_policy, explore_values, model, K, T, rng,
                         top: int = 10, greedy: bool = False) -> np.ndarray:
    replay_goals = np.atleast_2d(replay_goals)
    dens = kde.density(replay_goals)
    order = np.argsort(dens, kind="stable")[:top]
    return peg_select_goal(replay_goals[order], goal_policy, explore_values, model, K, T, rng, greedy)


def uniform_state_samples(spec: EnvSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    pts = rng.uniform(spec.low, spec.high, size=(n, 2))
    return np.array([spec.snap_goal(p) for p in pts]) if spec.kind == "grid" else pts


# -- episodes --------------------------------------------------------------------
def go_explore_episode(env: MazeEnv, goal, goal_policy, explore_policy, T_go: int, T_explore: int,
                       rng: np.random.Generator, greedy: bool = False) -> Trajectory:
    """Go toward ``goal`` for at most ``T_go`` steps (stop once reached), then explore ``T_explore``."""
    if T_go + T_explore > env.spec.max_episode_len:
        raise ValueError("T_go + T_explore exceeds the episode limit")
    goal = np.asarray(goal, dtype=float)
    s = env.reset(goal=goal)
    states, actions, phases = [s], [], []
    for _ in range(T_go):
        if success(s, goal, env.spec):
            break
        a = goal_policy.act(s, goal, greedy, rng)
        s = env.step(a).next_state
        states.append(s)
        actions.append(a)
        phases.append(GO)
    for _ in range(T_explore):
        a = explore_policy.act(s, None, greedy, rng)
        s = env.step(a).next_state
        states.append(s)
        actions.append(a)
        phases.append(EXPLORE)
    return Trajectory(np.array(states), np.array(actions, dtype=int), phases, goal)


def goal_rollout_episode(env: MazeEnv, goal, goal_policy, rng, greedy: bool = False,
                         steps: int | None = None) -> Trajectory:
    goal = np.asarray(goal, dtype=float)
    s = env.reset(goal=goal)
    states, actions = [s], []
    for _ in range(steps or env.spec.max_episode_len):
        if success(s, goal, env.spec):
            break
        a = goal_policy.act(s, goal, greedy, rng)
        s = env.step(a).next_state
        states.append(s)
        actions.append(a)
    return Trajectory(np.array(states), np.array(actions, dtype=int), [GOAL_ROLLOUT] * len(actions), goal)


def random_episode(env: MazeEnv, rng: np.random.Generator) -> Trajectory:
    s = env.reset()
    states, actions = [s], []
    for _ in range(env.spec.max_episode_len):
        a = int(rng.integers(env.spec.n_actions))
        s = env.step(a).next_state
        states.append(s)
        actions.append(a)
    return Trajectory(np.array(states), np.array(actions, dtype=int), [EXPLORE] * len(actions))


def reverse_actions(spec: EnvSpec) -> np.ndarray:
    """Index of the opposite move for every action."""
    vecs = spec.actions
    return np.array([int(np.argmin(np.abs(vecs + v).sum(axis=1))) for v in vecs])


def persistent_walk_cells(model, start_cells: np.ndarray, T: int, spec: EnvSpec,
                          rng: np.random.Generator, keep: float = 0.8) -> np.ndarray:
    """Imagined non-reversing random walks; returns an ``(n, T + 1)`` array of cells.

    The previous action is repeated with probability ``keep``; a fresh action
    never undoes the previous move. A blocked move is replaced by a uniformly
    chosen non-reversing move that does go somewhere, if there is one.
    Few revisits keep step counts close to shortest-path distances.
    """
    n = len(start_cells)
    n_actions = spec.n_actions
    rev = reverse_actions(spec)
    all_actions = np.arange(n_actions)
    out = np.empty((n, T + 1), dtype=np.int64)
    out[:, 0] = start_cells
    a = rng.integers(n_actions, size=n)
    for t in range(T):
        fresh = rng.integers(n_actions - 1, size=n)
        fresh = fresh + (fresh >= rev[a])  # skip the reverse move
        prev = a
        a = np.where(rng.random(n) < keep, a, fresh)
        here = out[:, t]
        nxt = model.step_cells(here, a, rng)
        stuck = np.flatnonzero(nxt == here)
        if len(stuck):
            tries = np.broadcast_to(all_actions, (len(stuck), n_actions))
            moved = model.step_cells(np.repeat(here[stuck], n_actions).reshape(-1, n_actions), tries, rng)
            ok = (moved != here[stuck, None]) & (tries != rev[prev[stuck], None])
            pick = np.argmax(np.where(ok, rng.random(ok.shape), -1.0), axis=1)
            has = ok.any(axis=1)
            rows = stuck[has]
            a[rows] = pick[has]
            nxt[rows] = moved[has, pick[has]]
        out[:, t + 1] = nxt
    return out


# -- training loop ---------------------------------------------------------------------
@dataclass
class RoundMetrics:
    round: int
    episodes: int
    env_steps: int
    coverage: float
    success_rate: float
    elbo: float
    goal_log_density: float

    FIELDS = ("round", "episodes", "env_steps", "coverage", "success_rate", "elbo", "goal_log_density")

    def row(self) -> list[str]:
        return [str(self.round), str(self.episodes), str(self.env_steps), f"{self.coverage:.6f}",
                f"{self.success_rate:.6f}", f"{self.elbo:.6f}", f"{self.goal_log_density:.6f}"]


@dataclass
class Agent:
    """Every mutable component of one run, owned by a single training loop."""

    spec: EnvSpec
    cfg: ExperimentConfig
    seed: int
    model: EnsembleTabularModel = None
    latent: LatentSpace = None
    dist: TemporalDistanceEstimator = None
    gmm: GMM = None
    goal_policy: agents.GoalPolicy = None
    explore_policy: agents.ExplorePolicy = None
    buffer: ReplayBuffer = None
    env: MazeEnv = None
    rng: np.random.Generator = None
    visited: np.ndarray = None
    recent_goals: list = field(default_factory=list)
    episodes: int = 0
    env_steps: int = 0
    last_elbo: float = float("nan")
    gmm_batch_partitions: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    pending_goals: list = field(default_factory=list)

    @classmethod
    def build(cls, spec: EnvSpec, cfg: ExperimentConfig, seed: int) -> "Agent":
        ss = np.random.SeedSequence(seed)
        s_model, s_latent, s_dist, s_main = (int(x.generate_state(1)[0]) for x in ss.spawn(4))
        ac, lc = cfg.agent, cfg.latent
        a = cls(spec=spec, cfg=cfg, seed=seed)
        a.model = EnsembleTabularModel(spec, ac.ensemble_size, s_model, ac.bootstrap_fraction)
        a.latent = LatentSpace.build(spec.state_dim, lc.dim, hidden=lc.hidden, seed=s_latent,
                                     low=spec.low, high=spec.high, lr=lc.lr, optimizer=lc.optimizer,
                                     linear_norm=lc.linear_norm)
        dc = cfg.distance
        a.dist = TemporalDistanceEstimator(lc.dim, dc.hidden, dc.lr, dc.optimizer, seed=s_dist)
        gc = cfg.gmm
        a.gmm = GMM.create(gc.n_components, lc.dim, prior_strength=gc.prior_strength,
                           step_size=gc.step_size, init_sigma2=gc.init_sigma2)
        kw = dict(gamma=ac.gamma, epsilon=ac.epsilon, lr=ac.lr)
        a.goal_policy = agents.GoalPolicy(spec, **kw)
        a.explore_policy = agents.ExplorePolicy(spec, **kw)
        a.buffer = ReplayBuffer(cfg.train.capacity)
        a.env = MazeEnv(spec)
        a.rng = np.random.default_rng(s_main)
        a.visited = np.zeros(spec.n_cells, dtype=bool)
        return a

    # -- helpers ---------------------------------------------------------------
    @property
    def strategy(self) -> str:
        return self.cfg.strategy.name

    def _record(self, traj: Trajectory, partition: str) -> None:
        self.buffer.append(traj, partition)
        self.visited[self.spec.cell_ids(traj.states)] = True
        self.episodes += 1
        self.env_steps += len(traj)

    def coverage(self) -> float:
        free = self.spec.free.reshape(-1)
        return float(np.sum(self.visited & free) / np.sum(free))

    def cluster_partition(self) -> str:
        return "egc" if self.strategy == "CE2_G" else "exp"

    def _cluster_states(self, n: int) -> np.ndarray | None:
        part = self.cluster_partition()
        trajs = self.buffer.sample_recent_batch(part, self.cfg.gmm.recent_trajectories)
        if not trajs:
            return None
        self.gmm_batch_partitions.append(part)
        states = np.concatenate([t.states for t in trajs])
        return states[self.rng.integers(len(states), size=n)]

    def explore_values(self) -> np.ndarray:
        return self.explore_policy.value_table()

    # -- goal selection ------------------------------------------------------------
    def select_goal(self) -> tuple[np.ndarray, float]:
        """Exploration goal for the current strategy and its GMM log-density (nan if n/a)."""
        sc = self.cfg.strategy
        t_go, _ = self.cfg.horizons()
        name = self.strategy
        if name in ("CE2", "CE2_G"):
            g, es, best = ce2_select_goal(self.gmm, self.latent, self.goal_policy, self.explore_values(),
                                          self.model, sc, self.rng, self.spec, return_edges=True)
        elif name == "CE2_noPEG":
            g, es, best = ce2_nopeg_select_goal(self.gmm, self.latent, self.spec, sc, self.rng,
                                                return_edges=True)
        else:
            es = None
            if name == "RANDOM":
                g = uniform_state_samples(self.spec, 1, self.rng)[0]
            elif name in ("PEG", "PEG_G"):
                cand = uniform_state_samples(self.spec, sc.n_candidate, self.rng)
                g = peg_select_goal(cand, self.goal_policy, self.explore_values(), self.model, sc.K, t_go,
                                    self.rng, sc.potential_greedy)
            elif name in ("MEGA", "MEGA_G", "MEGA_PEG"):
                if len(self.buffer):
                    support = self.buffer.sample_state_batch("D", sc.mega_support, self.rng)
                else:  # nothing collected yet: the start state is the only known goal
                    support = self.spec.start[None].copy()
                kde = KDE(support)
                if name == "MEGA_PEG":
                    g = mega_peg_select_goal(kde, support, self.goal_policy, self.explore_values(), self.model,
                                             sc.K, t_go, self.rng, sc.mega_peg_top, sc.potential_greedy)
                else:
                    start_cell = self.spec.cell_ids(self.spec.start)[0]
                    vals = self.goal_policy.q[start_cell, self.spec.cell_ids(support)].max(axis=-1)
                    g = mega_select_goal(kde, support, vals, keep_fraction=sc.mega_keep_fraction)
            else:
                raise ValueError(f"strategy {name} has no exploration goal")
        self.recent_goals.append(np.asarray(g, dtype=float))
        self.pending_goals.append(np.asarray(g, dtype=float).tolist())
        if es is not None:
            self.recent_goals.extend(es.goals)
            logd = float(self.gmm.log_total_probability(es.edges[best])[0])
        else:
            logd = float("nan")
        self.recent_goals = self.recent_goals[-self.cfg.strategy.n_edge:]
        return np.asarray(g, dtype=float), logd

    # -- one round -----------------------------------------------------------------
    def collect(self) -> list[float]:
        t_go, t_ex = self.cfg.horizons()
        name = self.strategy
        densities = []
        for _ in range(self.cfg.train.episodes_per_round):
            alternating = name in ("PEG_G", "MEGA_G")
            if name == "GC_ONLY" or (alternating and self.episodes % 2 == 1):
                g = sample_env_goal(self.spec, self.rng)
                self._record(goal_rollout_episode(self.env, g, self.goal_policy, self.rng), "egc")
                continue
            g, logd = self.select_goal()
            densities.append(logd)
            traj = go_explore_episode(self.env, g, self.goal_policy, self.explore_policy, t_go, t_ex, self.rng)
            self._record(traj, "exp")
            if name == "CE2_G":
                eg = sample_env_goal(self.spec, self.rng)
                self._record(goal_rollout_episode(self.env, eg, self.goal_policy, self.rng), "egc")
        return densities

    def warmup(self) -> None:
        part = "egc" if self.strategy in ("CE2_G", "GC_ONLY") else "exp"
        for _ in range(self.cfg.train.warmup_episodes):
            self._record(random_episode(self.env, self.rng), part)

    def reassign_centroids(self) -> None:
        states = self._cluster_states(max(self.cfg.gmm.batch_size, self.gmm.n_components))
        if states is None:
            return
        self.gmm.assign_centroids(self.latent.embed(states), self.rng)

    def update_gmm(self) -> None:
        for _ in range(self.cfg.gmm.steps_per_round):
            states = self._cluster_states(self.cfg.gmm.batch_size)
            if states is None:
                return
            self.last_elbo = self.gmm.elbo_step(self.latent.embed(states))

    def update_world(self) -> None:
        """Model fit, then alternating temporal-distance and latent steps."""
        self.model.fit(self.buffer)
        dc, lc = self.cfg.distance, self.cfg.latent
        if dc.source == "real":
            trajs = self.buffer.trajectories("D")
        else:
            starts = self.spec.cell_ids(self.buffer.sample_state_batch("D", dc.rollouts, self.rng))
            cells = persistent_walk_cells(self.model, starts, dc.horizon, self.spec, self.rng)
            centers = self.spec.cell_centers()
            trajs = [Trajectory(centers[row], np.zeros(dc.horizon, dtype=int)) for row in cells]
        for _ in range(max(dc.steps_per_round, lc.steps_per_round)):
            if dc.steps_per_round:
                s1, s2, k = sample_pairs(trajs, dc.batch_size, dc.horizon, self.rng)
                self.dist.train_step(self.latent.embed(s1), self.latent.embed(s2), k, dc.horizon)
            if lc.steps_per_round:
                a = self.buffer.sample_state_batch("D", lc.batch_size, self.rng)
                b = self.buffer.sample_state_batch("D", lc.batch_size, self.rng)
                self.latent.train_step(self.dist, a, b)

    def update_policies(self) -> None:
        ac = self.cfg.agent
        t_go, _ = self.cfg.horizons()
        T = ac.imagination_horizon or t_go
        visited_cells = np.flatnonzero(self.visited)
        goal_cells = visited_cells
        drive = visited_cells
        if self.recent_goals:
            recent = np.unique(self.spec.cell_ids(np.array(self.recent_goals)))
            goal_cells = np.union1d(visited_cells, recent)
            # half of the driving goals from replay, half from recent exploration goals
            reps = max(1, len(visited_cells) // max(len(recent), 1))
            drive = np.concatenate([visited_cells, np.tile(recent, reps)])
        start_cells = self.spec.cell_ids(self.buffer.sample_state_batch("D", 256, self.rng))
        rewards = agents.temporal_reward_table(self.spec, self.latent.embedder, self.dist, goal_cells)
        full = np.zeros((self.spec.n_cells, self.spec.n_cells))
        full[:, goal_cells] = rewards
        agents.train_goal_policy(self.goal_policy, self.model, full, goal_cells, drive, start_cells,
                                 ac.goal_rollouts, T, self.rng)
        agents.train_explore_policy(self.explore_policy, self.model, start_cells, ac.explore_rollouts, T,
                                    self.rng)

    def snapshot(self, i: int) -> dict:
        """GMM state (raw and decoded centroids) plus goals selected since the previous snapshot."""
        snap = {"round": i, "strategy": self.strategy, "goals": self.pending_goals}
        self.pending_goals = []
        if self.strategy in GMM_STRATEGIES:
            snap.update(self.gmm.snapshot())
            snap["decoded_centroids"] = self.latent.decode_goal(self.gmm.centroids).tolist()
        return snap

    def run_round(self, i: int, eval_goals: list[np.ndarray]) -> RoundMetrics:
        uses_gmm = self.strategy in GMM_STRATEGIES
        reassign = uses_gmm and i % self.cfg.gmm.reassign_period == 0
        if reassign:
            self.reassign_centroids()
        densities = self.collect()
        self.update_world()
        if uses_gmm:
            self.update_gmm()
        if reassign or (not uses_gmm and i % self.cfg.gmm.reassign_period == 0):
            self.snapshots.append(self.snapshot(i))
        self.update_policies()
        sr = evaluate(self.goal_policy, self.env, eval_goals, self.cfg.eval.episodes, self.rng)
        dens = [d for d in densities if np.isfinite(d)]
        return RoundMetrics(i, self.episodes, self.env_steps, self.coverage(), sr,
                            self.last_elbo if uses_gmm else float("nan"),
                            float(np.mean(dens)) if dens else float("nan"))


def evaluate(goal_policy, env: MazeEnv, eval_goals, n_episodes: int = 1, rng=None) -> float:
    """Fraction of greedy goal-policy rollouts that reach their goal within the episode limit."""
    hits = total = 0
    for g in eval_goals:
        for _ in range(n_episodes):
            traj = goal_rollout_episode(env, g, goal_policy, rng, greedy=True)
            hits += success(traj.states[-1], g, env.spec)
            total += 1
    return hits / total if total else 0.0


def train_loop(agent: Agent, eval_goals, rounds: int | None = None, on_round=None) -> list[RoundMetrics]:
    """Generic loop; CE2 and CE2-G differ only in where clustering data comes from."""
    rounds = agent.cfg.train.rounds if rounds is None else rounds
    if len(agent.buffer) == 0:
        agent.warmup()
    rows = []
    for i in range(rounds):
        t0 = time.perf_counter()
        m = agent.run_round(i, eval_goals)
        rows.append(m)
        if on_round is not None:
            on_round(m, time.perf_counter() - t0)
    return rows


def train_loop_ce2(agent: Agent, eval_goals, rounds=None, on_round=None):
    if agent.strategy != "CE2":
        raise ValueError("agent is not configured for CE2")
    return train_loop(agent, eval_goals, rounds, on_round)


def train_loop_ce2g(agent: Agent, eval_goals, rounds=None, on_round=None):
    if agent.strategy != "CE2_G":
        raise ValueError("agent is not configured for CE2_G")
    if not agent.spec.goal_distribution:
        raise ValueError("CE2_G needs a non-empty environment goal distribution")
    return train_loop(agent, eval_goals, rounds, on_round)
