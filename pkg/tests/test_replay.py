import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ce2.replay import (
    EXPLORE,
    GO,
    EmptyPartition,
    ReplayBuffer,
    Trajectory,
    UnknownPartition,
    phases_well_formed,
)


def traj(n, offset=0.0, phases=None):
    states = np.stack([np.arange(n + 1) + offset, np.zeros(n + 1)], axis=1)
    return Trajectory(states, np.zeros(n, dtype=int), phases or [])


def test_append_and_superset():
    buf = ReplayBuffer()
    buf.append(traj(3))
    assert len(buf) == 1
    buf.append(traj(2), "egc")
    assert buf.size("egc") == 1 and buf.size("D") == 2 and buf.size("exp") == 0
    with pytest.raises(UnknownPartition):
        buf.append(traj(1), "nope")


def test_fifo_eviction():
    buf = ReplayBuffer(capacity=2)
    ts = [traj(1, offset=i) for i in range(3)]
    for t in ts:
        buf.append(t, "exp")
    assert buf.trajectories() == ts[1:]
    assert buf.trajectories("exp") == ts[1:]


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory(np.zeros((3, 2)), np.zeros(3, dtype=int))
    with pytest.raises(ValueError):
        Trajectory(np.zeros((4, 2)), np.zeros(3, dtype=int), [EXPLORE, GO, GO])
    assert phases_well_formed([GO, GO, EXPLORE])
    assert not phases_well_formed([GO, EXPLORE, GO])


def test_state_batch_single_state():
    buf = ReplayBuffer()
    buf.append(Trajectory(np.array([[2.0, 3.0]]), np.zeros(0, dtype=int)))
    out = buf.sample_state_batch("D", 3, np.random.default_rng(0))
    np.testing.assert_array_equal(out, [[2, 3]] * 3)
    with pytest.raises(EmptyPartition):
        buf.sample_state_batch("exp", 3, np.random.default_rng(0))


def test_state_batch_reproducible_and_uniform():
    buf = ReplayBuffer()
    buf.append(traj(9, offset=0))
    buf.append(traj(9, offset=100))
    a = buf.sample_state_batch("D", 50, np.random.default_rng(5))
    b = buf.sample_state_batch("D", 50, np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)
    big = buf.sample_state_batch("D", 10_000, np.random.default_rng(1))
    assert abs(np.mean(big[:, 0] < 100) - 0.5) < 0.02


def test_recent_batch_window():
    buf = ReplayBuffer()
    ts = [traj(1, offset=i) for i in range(5)]
    for t in ts:
        buf.append(t)
    assert buf.sample_recent_batch("D", 2) == ts[3:]
    assert buf.sample_recent_batch("D", 50) == ts
    extra = traj(1, offset=9)
    buf.append(extra)
    assert buf.sample_recent_batch("D", 2) == [ts[4], extra]


def test_pair_batch_examples():
    buf = ReplayBuffer()
    buf.append(traj(1))
    rng = np.random.default_rng(0)
    s1, s2, k = buf.sample_pair_batch("D", 200, 20, rng)
    # length-1 trajectory: t is 0 or 1, k in [0, remaining]
    assert set(k) <= {0, 1}
    np.testing.assert_array_equal(s2[:, 0] - s1[:, 0], k)
    one = ReplayBuffer()
    one.append(Trajectory(np.zeros((1, 2)), np.zeros(0, dtype=int)))
    _, _, k = one.sample_pair_batch("D", 100, 5, rng)
    assert np.all(k == 0)


def test_pair_k_histogram_uniform():
    # with t fixed at 0 the k law is uniform on [0, k_max]
    buf = ReplayBuffer()
    buf.append(traj(1000))
    rng = np.random.default_rng(3)
    _, _, k = buf.sample_pair_batch("D", 10_000, 4, rng)
    freq = np.bincount(k, minlength=5) / len(k)
    np.testing.assert_allclose(freq, 0.2, atol=0.03)


def test_dump_restore_roundtrip(tmp_path):
    buf = ReplayBuffer()
    buf.append(traj(3, phases=[GO, GO, EXPLORE]), "exp")
    buf.append(traj(2), "egc")
    buf.dump(tmp_path / "buf.jsonl")
    back = ReplayBuffer.restore(tmp_path / "buf.jsonl")
    assert back.size("exp") == 1 and back.size("egc") == 1
    np.testing.assert_array_equal(back.all_states(), buf.all_states())
    assert back.trajectories("exp")[0].phases == [GO, GO, EXPLORE]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.sampled_from(["D", "exp", "egc"]), max_size=30), st.integers(1, 8))
def test_superset_invariant(parts, cap):
    buf = ReplayBuffer(capacity=cap)
    for i, p in enumerate(parts):
        buf.append(traj(1, offset=i), p)
        d = [id(t) for t in buf.trajectories("D")]
        assert len(d) <= cap
        for q in ("exp", "egc"):
            assert {id(t) for t in buf.trajectories(q)} <= set(d)
