"""Exact shortest-path distances by breadth-first search from goal states."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from pgser.core import TabularEnv

UNREACHABLE = -1


@dataclass(frozen=True)
class DistanceOracle:
    """``dist[s, g]`` is the number of steps from ``s`` to goal ``g``, or ``UNREACHABLE``."""

    dist: np.ndarray
    next_state: np.ndarray

    def distance(self, s: int, g: int) -> int:
        return int(self.dist[s, g])

    def reachable(self, s, g):
        return self.dist[s, g] != UNREACHABLE

    def optimal_actions(self, s: int, g: int) -> np.ndarray:
        """Actions that strictly decrease the distance to ``g`` (empty if none)."""
        d = self.dist[s, g]
        if d <= 0:
            return np.zeros(0, dtype=np.int64)
        nd = self.dist[self.next_state[s], g]
        return np.flatnonzero((nd != UNREACHABLE) & (nd == d - 1))

    def optimal_q(self, h_max: int) -> np.ndarray:
        """Clipped optimal action values under the unit step-cost convention.

        ``Q[s, g, a] = 0`` when ``s`` already achieves ``g``; otherwise
        ``-1 - dist(step(s, a), g)``, with unreachable continuations and
        values below ``-h_max`` clipped to ``-h_max``.
        """
        nd = self.dist[self.next_state]  # (S, A, G)
        q = np.where(nd == UNREACHABLE, -float(h_max), -1.0 - nd)
        q = np.clip(q, -float(h_max), 0.0).transpose(0, 2, 1).copy()
        at_goal = self.dist == 0
        q[at_goal] = 0.0
        return q


def build_oracle(env: TabularEnv) -> DistanceOracle:
    S = env.num_states
    preds: list[list[int]] = [[] for _ in range(S)]
    for s in range(S):
        for s2 in set(int(x) for x in env.next_state[s]):
            preds[s2].append(s)

    dist = np.full((S, env.num_goals), UNREACHABLE, dtype=np.int64)
    for g in range(env.num_goals):
        sources = np.flatnonzero(env.state_goal == g)
        col = dist[:, g]
        col[sources] = 0
        queue = deque(int(s) for s in sources)
        while queue:
            s = queue.popleft()
            for p in preds[s]:
                if col[p] == UNREACHABLE:
                    col[p] = col[s] + 1
                    queue.append(p)
    dist.setflags(write=False)
    return DistanceOracle(dist, env.next_state)
