"""Random goal-swapping: relabel transitions with goals drawn from the dataset."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pgser.core import GCTransition, TabularEnv, TransitionBatch, sparse_reward


@dataclass(frozen=True)
class AugmentedTransition:
    base: GCTransition
    swapped_goal: int
    recomputed_reward: int
    recomputed_done: bool

    @property
    def transition(self) -> GCTransition:
        b = self.base
        return GCTransition(
            b.state, self.swapped_goal, b.action, self.recomputed_reward, b.next_state,
            self.recomputed_done,
        )


def _truncated(done, reward):
    # done without arrival means the step budget ran out; that survives a goal change
    return done & (reward != 0)


def goal_swap(t: GCTransition | AugmentedTransition, g_rand: int, env: TabularEnv) -> AugmentedTransition:
    """Replace the goal of ``t`` and recompute reward and done.

    Swapping an already augmented transition re-swaps its base, so a swap
    followed by a swap back to the original goal is the identity even when
    the base ended on the step budget.
    """
    if isinstance(t, AugmentedTransition):
        t = t.base
    r = sparse_reward(env.goal_of(t.next_state), g_rand)
    done = r == 0 or bool(_truncated(t.done, t.reward))
    return AugmentedTransition(t, int(g_rand), r, done)


def swap_goals(batch: TransitionBatch, goals: np.ndarray, state_goal: np.ndarray) -> TransitionBatch:
    """Vectorized :func:`goal_swap` over a batch."""
    goals = np.asarray(goals, dtype=np.int64)
    reward = np.where(state_goal[batch.next_state] == goals, 0, -1)
    done = (reward == 0) | _truncated(batch.done, batch.reward)
    return TransitionBatch(
        batch.state, goals, batch.action, reward, batch.next_state, done,
        np.ones(len(batch), dtype=bool),
    )


class SwapSampler:
    """Draws transitions uniformly from a buffer and pairs each with a uniform achieved goal."""

    def __init__(self, buffer, env: TabularEnv):
        self.transitions: TransitionBatch = buffer.transitions
        if len(self.transitions) == 0:
            raise ValueError("cannot goal-swap from an empty buffer")
        self.goal_set: np.ndarray = buffer.achieved_goals
        self.state_goal = env.state_goal

    def sample(self, n: int, rng: np.random.Generator) -> TransitionBatch:
        idx = rng.integers(len(self.transitions), size=n)
        goals = self.goal_set[rng.integers(len(self.goal_set), size=n)]
        return swap_goals(self.transitions.take(idx), goals, self.state_goal)


def sample_swap_batch(buffer, n: int, rng: np.random.Generator, env: TabularEnv) -> list[AugmentedTransition]:
    sampler = SwapSampler(buffer, env)
    idx = rng.integers(len(sampler.transitions), size=n)
    goals = sampler.goal_set[rng.integers(len(sampler.goal_set), size=n)]
    return [goal_swap(sampler.transitions.transition(i), int(g), env) for i, g in zip(idx, goals)]
