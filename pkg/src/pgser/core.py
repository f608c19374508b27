"""Goal-conditioned MDP primitives: sparse reward, termination, transitions.

Value semantics used throughout the package: every step taken from a state
that does not achieve the goal costs -1, and an episode ends as soon as the
agent occupies a goal state. With no discounting, the optimal value of
``(s, g)`` is therefore minus the shortest-path distance from ``s`` to ``g``.

The per-transition reward stored in datasets is the sparse reward evaluated
on the *next* state (0 on arrival, -1 otherwise).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


def sparse_reward(achieved: int, goal: int) -> int:
    """0 when the achieved goal equals the commanded goal, else -1."""
    return 0 if achieved == goal else -1


def is_terminal(env: "TabularEnv", s: int, g: int) -> bool:
    return bool(env.state_goal[s] == g)


@dataclass(frozen=True)
class GCTransition:
    state: int
    goal: int
    action: int
    reward: int
    next_state: int
    done: bool

    def as_row(self) -> list:
        return [self.state, self.action, self.reward, self.next_state, int(self.done)]


@dataclass(frozen=True)
class Trajectory:
    """Ordered transitions that share one commanded goal."""

    transitions: tuple[GCTransition, ...]
    commanded_goal: int
    success: bool
    tag: str = "random"

    def __post_init__(self) -> None:
        for t in self.transitions:
            if t.goal != self.commanded_goal:
                raise ValueError("all transitions must carry the commanded goal")
        for prev, nxt in zip(self.transitions, self.transitions[1:]):
            if prev.next_state != nxt.state:
                raise ValueError("transitions do not chain")

    def __len__(self) -> int:
        return len(self.transitions)

    @property
    def states(self) -> list[int]:
        """Visited states including the final next state."""
        if not self.transitions:
            return []
        return [t.state for t in self.transitions] + [self.transitions[-1].next_state]

    @property
    def episode_return(self) -> int:
        # one unit of cost per step; arrival ends the episode
        return -len(self.transitions)


@dataclass
class TabularEnv:
    """Deterministic finite goal-conditioned environment.

    ``next_state[s, a]`` is the transition table and ``state_goal[s]`` maps
    each state to the goal it achieves.
    """

    next_state: np.ndarray
    state_goal: np.ndarray
    num_goals: int
    h_max: int
    initial_states: np.ndarray | None = None
    goals: np.ndarray | None = None
    name: str = "tabular"

    def __post_init__(self) -> None:
        self.next_state = np.asarray(self.next_state, dtype=np.int64)
        self.state_goal = np.asarray(self.state_goal, dtype=np.int64)
        if self.next_state.ndim != 2:
            raise ValueError("next_state must be a (states, actions) table")
        if self.state_goal.shape != (self.next_state.shape[0],):
            raise ValueError("state_goal must map every state")
        if self.next_state.min() < 0 or self.next_state.max() >= self.num_states:
            raise ValueError("transition table points outside the state set")
        if self.state_goal.min() < 0 or self.state_goal.max() >= self.num_goals:
            raise ValueError("state_goal points outside the goal set")
        if self.h_max < 1:
            raise ValueError("h_max must be positive")
        if self.initial_states is None:
            self.initial_states = np.arange(self.num_states)
        if self.goals is None:
            self.goals = np.unique(self.state_goal)
        self.next_state.setflags(write=False)
        self.state_goal.setflags(write=False)

    @property
    def num_states(self) -> int:
        return self.next_state.shape[0]

    @property
    def num_actions(self) -> int:
        return self.next_state.shape[1]

    def step(self, s: int, a: int) -> int:
        return int(self.next_state[s, a])

    def goal_of(self, s: int) -> int:
        return int(self.state_goal[s])

    def make_transition(self, s: int, g: int, a: int) -> GCTransition:
        s2 = self.step(s, a)
        r = sparse_reward(self.goal_of(s2), g)
        return GCTransition(s, g, a, r, s2, r == 0)


@dataclass
class TransitionBatch:
    """Column-wise batch of transitions; the hot path of every learner."""

    state: np.ndarray
    goal: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_state: np.ndarray
    done: np.ndarray
    augmented: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        n = len(self.state)
        if self.augmented is None:
            self.augmented = np.zeros(n, dtype=bool)
        for name in ("goal", "action", "reward", "next_state", "done", "augmented"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name!r} has the wrong length")

    def __len__(self) -> int:
        return len(self.state)

    @classmethod
    def empty(cls) -> "TransitionBatch":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z, z, np.zeros(0, dtype=bool))

    @classmethod
    def from_transitions(cls, items: Iterable[GCTransition]) -> "TransitionBatch":
        items = list(items)
        if not items:
            return cls.empty()
        cols = np.array(
            [(t.state, t.goal, t.action, t.reward, t.next_state, t.done) for t in items],
            dtype=np.int64,
        )
        return cls(
            cols[:, 0], cols[:, 1], cols[:, 2], cols[:, 3], cols[:, 4], cols[:, 5].astype(bool)
        )

    @classmethod
    def concat(cls, parts: Sequence["TransitionBatch"]) -> "TransitionBatch":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty()
        return cls(
            *(np.concatenate([getattr(p, k) for p in parts]) for k in
              ("state", "goal", "action", "reward", "next_state", "done", "augmented"))
        )

    def take(self, idx: np.ndarray) -> "TransitionBatch":
        return TransitionBatch(
            self.state[idx], self.goal[idx], self.action[idx], self.reward[idx],
            self.next_state[idx], self.done[idx], self.augmented[idx],
        )

    def transition(self, i: int) -> GCTransition:
        return GCTransition(
            int(self.state[i]), int(self.goal[i]), int(self.action[i]),
            int(self.reward[i]), int(self.next_state[i]), bool(self.done[i]),
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self.transition(i)
