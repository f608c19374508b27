"""Replay buffers: the uniform dataset buffer with hindsight relabeling and a
sum-tree backed prioritized buffer for goal-swapped transitions."""

from __future__ import annotations

import csv
import math
import os
from pathlib import Path

import numpy as np

from pgser.augment import SwapSampler, swap_goals
from pgser.core import GCTransition, TabularEnv, TransitionBatch


class EmptyBufferError(RuntimeError):
    pass


def priority_from_q(q, h_max: float, alpha: float = 1.0, eps: float = 1e-3):
    """Map a clipped Q value in ``[-h_max, 0]`` to a strictly positive priority.

    ``((q + h_max) / h_max + eps) ** alpha``; works elementwise on arrays.
    """
    arr = np.asarray(q, dtype=np.float64)
    if np.any(arr < -h_max) or np.any(arr > 0) or np.any(np.isnan(arr)):
        raise ValueError(f"q outside the clipped range [-{h_max}, 0]")
    if eps <= 0 or alpha <= 0:
        raise ValueError("alpha and eps must be positive")
    p = ((arr + h_max) / h_max + eps) ** alpha
    return float(p) if np.ndim(q) == 0 else p


# -- sum tree -------------------------------------------------------------------


class SumTree:
    """Complete binary tree of priority sums, stored heap-style (root at index 1).

    Every internal node is recomputed as ``left + right`` rather than patched
    with a delta, so the sum invariant holds exactly in floating point.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = 1 << max(0, math.ceil(math.log2(capacity)))
        self.depth = self.capacity.bit_length() - 1
        self.nodes = np.zeros(2 * self.capacity, dtype=np.float64)

    @property
    def total(self) -> float:
        return float(self.nodes[1])

    @property
    def leaves(self) -> np.ndarray:
        return self.nodes[self.capacity:]

    def get(self, leaf: int) -> float:
        return float(self.nodes[self.capacity + leaf])

    def update(self, leaf: int, priority: float) -> None:
        if not 0 <= leaf < self.capacity:
            raise IndexError(leaf)
        if priority < 0 or not math.isfinite(priority):
            raise ValueError(f"bad priority {priority}")
        i = self.capacity + leaf
        self.nodes[i] = priority
        i //= 2
        while i >= 1:
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1]
            i //= 2

    def update_many(self, leaves: np.ndarray, priorities: np.ndarray) -> None:
        leaves = np.asarray(leaves, dtype=np.int64)
        self.nodes[self.capacity + leaves] = priorities
        lo, hi = self.capacity // 2, self.capacity
        while lo >= 1:
            self.nodes[lo:hi] = self.nodes[2 * lo:2 * hi:2] + self.nodes[2 * lo + 1:2 * hi:2]
            lo, hi = lo // 2, lo

    def find(self, u: np.ndarray) -> np.ndarray:
        """Leaf indices whose cumulative-priority interval contains each ``u``."""
        u = np.array(u, dtype=np.float64, copy=True)
        idx = np.ones(u.shape, dtype=np.int64)
        for _ in range(self.depth):
            left = 2 * idx
            lv = self.nodes[left]
            right = u >= lv
            u = np.where(right, u - lv, u)
            idx = left + right
        return idx - self.capacity

    def check(self) -> bool:
        inner = np.arange(1, self.capacity)
        return bool(np.all(self.nodes[inner] == self.nodes[2 * inner] + self.nodes[2 * inner + 1]))


# -- prioritized buffer -----------------------------------------------------------


_COLS = ("state", "goal", "action", "reward", "next_state", "done")


class PrioritizedBuffer:
    """Fixed-capacity store of augmented transitions sampled proportionally to priority.

    Once full, an insertion replaces the lowest-priority item.
    """

    def __init__(self, capacity: int, alpha: float = 1.0, eps: float = 1e-3):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.item_capacity = capacity
        self.alpha = alpha
        self.eps = eps
        self.tree = SumTree(capacity)
        self.size = 0
        self._data = {c: np.zeros(capacity, dtype=np.int64) for c in _COLS}

    def __len__(self) -> int:
        return self.size

    @property
    def priorities(self) -> np.ndarray:
        return self.tree.leaves[: self.size].copy()

    def items(self) -> TransitionBatch:
        cols = [self._data[c][: self.size] for c in _COLS]
        cols[-1] = cols[-1].astype(bool)
        return TransitionBatch(*cols, augmented=np.ones(self.size, dtype=bool))

    def _slots(self, n: int) -> np.ndarray:
        free = min(n, self.item_capacity - self.size)
        return np.arange(self.size, self.size + free)

    def insert(self, item: GCTransition, priority: float) -> int:
        if not priority > 0:
            raise ValueError("priority must be strictly positive")
        if self.size < self.item_capacity:
            leaf = self.size
            self.size += 1
        else:
            leaf = int(np.argmin(self.tree.leaves[: self.size]))
        for c in _COLS:
            self._data[c][leaf] = int(getattr(item, c))
        self.tree.update(leaf, float(priority))
        return leaf

    def insert_batch(self, batch: TransitionBatch, priorities: np.ndarray) -> int:
        """Append as many items as fit; returns the number stored."""
        priorities = np.asarray(priorities, dtype=np.float64)
        if np.any(priorities <= 0):
            raise ValueError("priorities must be strictly positive")
        slots = self._slots(len(batch))
        k = len(slots)
        for c in _COLS:
            self._data[c][slots] = getattr(batch, c)[:k]
        self.size += k
        self.tree.update_many(slots, priorities[:k])
        for i in range(k, len(batch)):
            self.insert(batch.transition(i), float(priorities[i]))
        return len(batch)

    def update(self, leaf: int, priority: float) -> None:
        if not 0 <= leaf < self.size:
            raise IndexError(leaf)
        if not priority > 0:
            raise ValueError("priority must be strictly positive")
        self.tree.update(leaf, float(priority))

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise EmptyBufferError("cannot sample from an empty prioritized buffer")
        u = rng.random(n) * self.tree.total
        # float rounding can push u past the last stored item
        return np.minimum(self.tree.find(u), self.size - 1)

    def take(self, idx: np.ndarray) -> TransitionBatch:
        d = self._data
        return TransitionBatch(
            d["state"][idx], d["goal"][idx], d["action"][idx], d["reward"][idx],
            d["next_state"][idx], d["done"][idx].astype(bool), np.ones(len(idx), dtype=bool),
        )

    def sample(self, n: int, rng: np.random.Generator) -> TransitionBatch:
        return self.take(self.sample_indices(n, rng))

    # -- CSV dump ---------------------------------------------------------------

    def dump_csv(self, path: str | os.PathLike) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        items = self.items()
        prios = self.priorities
        with open(tmp, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["s", "g", "a", "r", "s_next", "done", "priority"])
            for i in range(self.size):
                w.writerow([
                    items.state[i], items.goal[i], items.action[i], items.reward[i],
                    items.next_state[i], int(items.done[i]), repr(float(prios[i])),
                ])
        os.replace(tmp, path)
        return path

    @classmethod
    def load_csv(cls, path: str | os.PathLike, alpha: float = 1.0, eps: float = 1e-3) -> "PrioritizedBuffer":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: buffer dump is empty")
        buf = cls(len(rows), alpha, eps)
        cols = {k: np.array([int(r[k]) for r in rows], dtype=np.int64) for k in ("s", "g", "a", "r", "s_next", "done")}
        batch = TransitionBatch(cols["s"], cols["g"], cols["a"], cols["r"], cols["s_next"], cols["done"].astype(bool))
        buf.insert_batch(batch, np.array([float(r["priority"]) for r in rows]))
        return buf


# -- uniform dataset buffer -----------------------------------------------------------


class UniformBuffer:
    """Flat view of a dataset with per-transition trajectory bookkeeping."""

    def __init__(self, dataset, env: TabularEnv):
        self.env = env
        self.transitions: TransitionBatch = dataset.transitions()
        lengths = np.array([len(t) for t in dataset.trajectories], dtype=np.int64)
        self.traj_id = np.repeat(np.arange(len(lengths)), lengths)
        starts = np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(np.int64)
        self.step_index = np.arange(len(self.transitions)) - starts[self.traj_id]
        self.traj_end = (starts + lengths)[self.traj_id]
        self.achieved_goals = dataset.achieved_goals(env)

    def __len__(self) -> int:
        return len(self.transitions)

    def position(self, i: int) -> tuple[int, int]:
        return int(self.traj_id[i]), int(self.step_index[i])

    def transition(self, i: int) -> GCTransition:
        return self.transitions.transition(i)

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if len(self) == 0:
            raise EmptyBufferError("cannot sample from an empty dataset buffer")
        return rng.integers(len(self), size=n)

    def future_indices(self, idx: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Uniform draw among transitions at or after each index in its own trajectory."""
        idx = np.asarray(idx, dtype=np.int64)
        return rng.integers(idx, self.traj_end[idx])

    def relabel(self, idx: np.ndarray, rng: np.random.Generator) -> TransitionBatch:
        """Hindsight ("future") relabeling of the transitions at ``idx``."""
        fut = self.future_indices(idx, rng)
        goals = self.env.state_goal[self.transitions.next_state[fut]]
        out = swap_goals(self.transitions.take(idx), goals, self.env.state_goal)
        out.augmented[:] = False
        return out


def her_relabel(buf: UniformBuffer, index: int, rng: np.random.Generator) -> GCTransition:
    return buf.relabel(np.array([index]), rng).transition(0)


def mixed_sample(
    beta: UniformBuffer,
    beta_aug,
    batch: int,
    rho: float,
    her_ratio: float,
    rng: np.random.Generator,
    stats: dict | None = None,
) -> TransitionBatch:
    """``floor(rho * batch)`` items from ``beta_aug``, the rest uniformly from ``beta``.

    ``beta_aug`` is anything with ``sample(n, rng) -> TransitionBatch``: a
    :class:`PrioritizedBuffer` or a :class:`~pgser.augment.SwapSampler`.
    Dataset items are independently hindsight-relabeled with probability
    ``her_ratio``. If ``stats`` is given, the counters ``beta_samples``,
    ``her_relabeled`` and ``aug_samples`` are incremented.
    """
    if not 0.0 <= rho <= 1.0 or not 0.0 <= her_ratio <= 1.0:
        raise ValueError("rho and her_ratio must lie in [0, 1]")
    n_aug = math.floor(rho * batch)
    n_beta = batch - n_aug
    parts = []
    if n_beta:
        if beta is None or len(beta) == 0:
            raise EmptyBufferError("dataset buffer is empty")
        idx = beta.sample_indices(n_beta, rng)
        her = rng.random(n_beta) < her_ratio
        part = beta.transitions.take(idx)
        if her.any():
            rel = beta.relabel(idx[her], rng)
            for c in ("goal", "reward", "done"):
                getattr(part, c)[her] = getattr(rel, c)
        parts.append(part)
        if stats is not None:
            stats["beta_samples"] = stats.get("beta_samples", 0) + n_beta
            stats["her_relabeled"] = stats.get("her_relabeled", 0) + int(her.sum())
    if n_aug:
        if beta_aug is None or (hasattr(beta_aug, "__len__") and len(beta_aug) == 0):
            raise EmptyBufferError("augmented buffer is empty")
        parts.append(beta_aug.sample(n_aug, rng))
        if stats is not None:
            stats["aug_samples"] = stats.get("aug_samples", 0) + n_aug
    return TransitionBatch.concat(parts)


def fresh_swap_source(beta: UniformBuffer) -> SwapSampler:
    return SwapSampler(beta, beta.env)
