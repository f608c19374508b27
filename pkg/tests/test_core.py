from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pgser.core import GCTransition, TabularEnv, Trajectory, TransitionBatch, is_terminal, sparse_reward
from pgser.rng import STREAMS, stream


def test_sparse_reward_zero_only_on_match():
    assert sparse_reward(3, 3) == 0
    assert sparse_reward(3, 4) == -1


@given(st.integers(0, 50), st.integers(0, 50))
def test_sparse_reward_values(a, g):
    r = sparse_reward(a, g)
    assert r in (0, -1)
    assert (r == 0) == (a == g)


def test_is_terminal_matches_goal_map(open5):
    for s in range(open5.num_states):
        for g in range(open5.num_goals):
            assert is_terminal(open5, s, g) == (s == g)


def test_make_transition_rewards_next_state(open5):
    s = open5.state_of((1, 0))
    g = open5.state_of((0, 0))
    t = open5.make_transition(s, g, 2)  # left
    assert t.next_state == g and t.reward == 0 and t.done
    t = open5.make_transition(s, g, 3)
    assert t.reward == -1 and not t.done


def test_env_rejects_bad_tables():
    with pytest.raises(ValueError):
        TabularEnv(np.array([[0, 5]]), np.array([0]), num_goals=1, h_max=3)
    with pytest.raises(ValueError):
        TabularEnv(np.array([[0, 0]]), np.array([2]), num_goals=1, h_max=3)
    with pytest.raises(ValueError):
        TabularEnv(np.array([[0, 0]]), np.array([0]), num_goals=1, h_max=0)


def test_env_tables_are_read_only(open5):
    with pytest.raises(ValueError):
        open5.next_state[0, 0] = 1


def test_trajectory_validates_chain_and_goal():
    a = GCTransition(0, 2, 0, -1, 1, False)
    b = GCTransition(1, 2, 0, 0, 2, True)
    traj = Trajectory((a, b), 2, True)
    assert traj.states == [0, 1, 2]
    assert traj.episode_return == -2
    with pytest.raises(ValueError):
        Trajectory((b, a), 2, True)
    with pytest.raises(ValueError):
        Trajectory((a, GCTransition(1, 3, 0, -1, 2, False)), 2, True)


def test_batch_round_trip():
    items = [GCTransition(0, 2, 0, -1, 1, False), GCTransition(1, 2, 1, 0, 2, True)]
    batch = TransitionBatch.from_transitions(items)
    assert list(batch) == items
    both = TransitionBatch.concat([batch, batch.take(np.array([1]))])
    assert len(both) == 3 and both.transition(2) == items[1]
    assert len(TransitionBatch.from_transitions([])) == 0


def test_streams_are_reproducible_and_distinct():
    a = stream(5, "train", 1).random(4)
    assert np.array_equal(a, stream(5, "train", 1).random(4))
    assert not np.array_equal(a, stream(5, "train", 2).random(4))
    assert not np.array_equal(a, stream(6, "train", 1).random(4))
    draws = {name: stream(0, name).random() for name in STREAMS}
    assert len(set(draws.values())) == len(STREAMS)
    with pytest.raises(ValueError):
        stream(-1, "train")
