import numpy as np
import pytest

from ce2 import agents
from ce2.agents import ExplorePolicy, GoalPolicy, act_goal, value_explore
from ce2.distance import BfsOracle, TemporalDistanceEstimator
from ce2.env import MazeEnv, make_spec, success
from ce2.latent import Embedder
from ce2.model import OracleModel

from oracles import value_iteration


@pytest.fixture
def corridor():
    return make_spec("grid", layout="S......")


def bfs_reward_table(spec, H):
    bfs = BfsOracle(spec.free).matrix().astype(float)
    return -np.where(bfs < 0, H, bfs) / H


def test_zero_q_acts_lowest_index(corridor):
    p = GoalPolicy(corridor, epsilon=1.0)
    assert act_goal(p, [3, 0], [5, 0], greedy=True, rng=np.random.default_rng(0)) == 0
    # greedy ignores epsilon even when epsilon = 1
    p.q[3, 5, 1] = 1.0
    for seed in range(20):
        assert p.act([3, 0], [5, 0], greedy=True, rng=np.random.default_rng(seed)) == 1


def test_no_rollouts_no_change(corridor):
    p = GoalPolicy(corridor)
    model = OracleModel(corridor)
    cells = corridor.free_ids()
    agents.train_goal_policy(p, model, bfs_reward_table(corridor, 10), cells, cells, cells, 0, 10,
                             np.random.default_rng(0))
    assert not p.q.any()


def test_goal_policy_matches_value_iteration(corridor):
    spec = corridor
    model = OracleModel(spec)
    cells = spec.free_ids()
    R = bfs_reward_table(spec, 10)
    p = GoalPolicy(spec, epsilon=0.3)
    rng = np.random.default_rng(0)
    for _ in range(400):
        agents.train_goal_policy(p, model, R, cells, cells, cells, 64, 10, rng)
    for g in cells:
        reward = R[model.table, g]  # reward for arriving in next_cell[c, a]
        q_star = value_iteration(model.table, reward, p.gamma)
        for c in cells:
            if c == g:
                continue
            best = np.flatnonzero(np.isclose(q_star[c], q_star[c].max()))
            assert int(np.argmax(p.q[c, g])) in best
            # and the greedy move is toward the goal
            nxt = model.table[c, np.argmax(p.q[c, g])]
            assert abs(nxt - g) < abs(c - g)


def _steps_to_goal(policy, env, pairs):
    total = 0
    for s, g in pairs:
        env.reset()
        env.state = np.array(s, dtype=float)
        for t in range(env.spec.max_episode_len):
            if success(env.state, g, env.spec):
                break
            env.step(policy.act(env.state, g, greedy=True))
        total += t
    return total


def test_training_reduces_steps_to_goal():
    spec = make_spec("grid_four_rooms")
    model = OracleModel(spec)
    cells = spec.free_ids()
    p = GoalPolicy(spec)
    rng = np.random.default_rng(1)
    centers = spec.cell_centers()
    pairs = [(centers[a], centers[b]) for a, b in zip(rng.choice(cells, 20), rng.choice(cells, 20))]
    env = MazeEnv(spec)
    before = _steps_to_goal(p, env, pairs)
    R = bfs_reward_table(spec, 20)
    for _ in range(150):
        agents.train_goal_policy(p, model, R, cells, cells, cells, 64, 25, rng)
    after = _steps_to_goal(p, env, pairs)
    assert after < before


def test_explore_zero_disagreement(corridor):
    p = ExplorePolicy(corridor)
    agents.train_explore_policy(p, OracleModel(corridor), corridor.free_ids(), 32, 10,
                                np.random.default_rng(0))
    assert not p.value_table().any()
    assert value_explore(p, [2, 0]) == 0.0


def _explore_fixed_point(spec, reward, seed=0, rounds=400):
    model = OracleModel(spec)
    p = ExplorePolicy(spec, epsilon=0.5)
    rng = np.random.default_rng(seed)
    for _ in range(rounds):
        agents.train_explore_policy(p, model, spec.free_ids(), 32, 10, rng, reward_table=reward)
    return p, model


def test_explore_value_matches_value_iteration():
    spec = make_spec("grid", layout="S...")
    reward = np.random.default_rng(0).random((spec.n_cells, spec.n_actions))
    p, model = _explore_fixed_point(spec, reward)
    v_star = value_iteration(model.table, reward, p.gamma).max(axis=1)
    np.testing.assert_allclose(p.value_table(), v_star, atol=1e-2)


def test_explore_value_linear_in_reward_scale():
    spec = make_spec("grid", layout="S...")
    reward = np.random.default_rng(1).random((spec.n_cells, spec.n_actions))
    p1, _ = _explore_fixed_point(spec, reward, seed=3, rounds=50)
    p2, _ = _explore_fixed_point(spec, 2 * reward, seed=3, rounds=50)
    np.testing.assert_allclose(p2.value_table(), 2 * p1.value_table(), rtol=1e-12)


def test_explore_value_peaks_near_high_disagreement():
    spec = make_spec("grid_open", size=5)
    reward = np.zeros((spec.n_cells, spec.n_actions))
    hot = spec.cell_ids([[3, 3]])[0]
    reward[hot] = 1.0
    p, model = _explore_fixed_point(spec, reward, rounds=300)
    v = p.value_table()
    neighbours = set(model.table[hot]) | {hot}
    assert int(np.argmax(v)) in neighbours
    v_star = value_iteration(model.table, reward, p.gamma).max(axis=1)
    assert np.argmax(v_star) == hot


def test_explore_deterministic_under_seed():
    spec = make_spec("grid_open", size=4)
    reward = np.random.default_rng(2).random((spec.n_cells, spec.n_actions))
    a, _ = _explore_fixed_point(spec, reward, seed=5, rounds=5)
    b, _ = _explore_fixed_point(spec, reward, seed=5, rounds=5)
    np.testing.assert_array_equal(a.q, b.q)


def test_q_bounded():
    spec = make_spec("grid_open", size=4)
    reward = np.random.default_rng(3).random((spec.n_cells, spec.n_actions))
    p, _ = _explore_fixed_point(spec, reward, rounds=100)
    assert np.all(np.abs(p.q) <= reward.max() / (1 - p.gamma) + 1e-9)


def test_temporal_reward_table_shape_and_range():
    spec = make_spec("grid_open", size=4)
    emb = Embedder(2, 6, seed=0, low=spec.low, high=spec.high)
    est = TemporalDistanceEstimator(6, seed=0)
    goals = np.array([0, 5, 15])
    R = agents.temporal_reward_table(spec, emb, est, goals)
    assert R.shape == (spec.n_cells, 3)
    assert np.all((R <= 0) & (R >= -1))
    c = spec.cell_centers()
    assert R[7, 1] == pytest.approx(-est.distance(emb.embed(c[7]), emb.embed(c[5])))
