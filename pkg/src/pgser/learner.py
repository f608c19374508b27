"""Tabular offline Q-learning and the two-stage prioritized goal-swapping pipeline.

Backups use unit step cost and no discounting, so a converged table holds
``Q(s, g, a) = -1 - d(step(s, a), g)``, ``0`` once ``s`` achieves ``g``, and
the pessimistic floor ``-h_max`` for anything unreachable within the horizon.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from pgser.augment import SwapSampler
from pgser.core import GCTransition, TabularEnv, TransitionBatch
from pgser.replay import PrioritizedBuffer, UniformBuffer, mixed_sample, priority_from_q
from pgser.rng import stream

KINDS = ("plain", "dataset_constrained")
VARIANTS = ("baseline", "swap", "mem")

_MAGIC = b"PGQT"
_VERSION = 1
_HEADER = struct.Struct("<4sHBxIIId")


class QTableFormatError(ValueError):
    pass


class QTable:
    """Dense ``(state, goal, action)`` value table clipped to ``[-h_max, 0]``."""

    def __init__(self, num_states: int, num_goals: int, num_actions: int, h_max: int, kind: str = "plain"):
        if kind not in KINDS:
            raise ValueError(f"unknown learner kind {kind!r}")
        self.h_max = int(h_max)
        self.kind = kind
        self.values = np.full((num_states, num_goals, num_actions), -float(h_max))

    @classmethod
    def for_env(cls, env: TabularEnv, kind: str = "plain") -> "QTable":
        return cls(env.num_states, env.num_goals, env.num_actions, env.h_max, kind)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    def copy(self) -> "QTable":
        out = QTable(*self.shape, self.h_max, self.kind)
        out.values = self.values.copy()
        return out

    def __call__(self, s, g, a):
        return self.values[s, g, a]

    def state_values(self) -> np.ndarray:
        return self.values.max(axis=2)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, QTable)
            and self.h_max == other.h_max
            and self.kind == other.kind
            and np.array_equal(self.values, other.values)
        )

    # -- persistence ------------------------------------------------------------

    def to_bytes(self) -> bytes:
        S, G, A = self.shape
        head = _HEADER.pack(_MAGIC, _VERSION, KINDS.index(self.kind), S, G, A, float(self.h_max))
        return head + np.ascontiguousarray(self.values, dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "QTable":
        if len(data) < _HEADER.size:
            raise QTableFormatError("file shorter than header")
        magic, version, kind, S, G, A, h_max = _HEADER.unpack_from(data)
        if magic != _MAGIC:
            raise QTableFormatError("not a Q-table file")
        if version != _VERSION:
            raise QTableFormatError(f"unsupported version {version}")
        if kind >= len(KINDS):
            raise QTableFormatError(f"unknown kind code {kind}")
        body = data[_HEADER.size:]
        if len(body) != 8 * S * G * A:
            raise QTableFormatError("value block has the wrong size")
        q = cls(S, G, A, int(h_max), KINDS[kind])
        q.values = np.frombuffer(body, dtype="<f8").reshape(S, G, A).astype(np.float64)
        return q

    def save(self, path: str | os.PathLike) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(self.to_bytes())
        os.replace(tmp, path)
        return path

    @classmethod
    def load(cls, path: str | os.PathLike) -> "QTable":
        return cls.from_bytes(Path(path).read_bytes())

    def to_csv(self, path: str | os.PathLike) -> Path:
        path = Path(path)
        S, G, A = self.shape
        s, g, a = np.meshgrid(np.arange(S), np.arange(G), np.arange(A), indexing="ij")
        rows = np.column_stack([s.ravel(), g.ravel(), a.ravel()])
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("s,g,a,q\n")
            for (si, gi, ai), v in zip(rows.tolist(), self.values.ravel().tolist()):
                fh.write(f"{si},{gi},{ai},{v!r}\n")
        return path


@dataclass(frozen=True)
class DatasetActionMask:
    observed: np.ndarray  # (states, actions) bool

    @classmethod
    def from_dataset(cls, dataset, env: TabularEnv) -> "DatasetActionMask":
        obs = np.zeros((env.num_states, env.num_actions), dtype=bool)
        flat = dataset.transitions()
        obs[flat.state, flat.action] = True
        obs.setflags(write=False)
        return cls(obs)

    @classmethod
    def full(cls, env: TabularEnv) -> "DatasetActionMask":
        return cls(np.ones((env.num_states, env.num_actions), dtype=bool))


@dataclass(frozen=True)
class TrainSchedule:
    updates: int = 50_000
    batch_size: int = 64
    learning_rate: float = 0.25
    rho: float = 0.5
    her_ratio: float = 0.5
    rng_seed: int = 0

    def __post_init__(self):
        if self.updates < 0 or self.batch_size < 1:
            raise ValueError("updates must be >= 0 and batch_size >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")
        for name in ("rho", "her_ratio"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


def next_state_values(q: QTable, next_state, goal, mask: DatasetActionMask | None = None) -> np.ndarray:
    """``max_a' Q(s', g, a')``, restricted to dataset actions when a mask is given.

    A state with no observed action is absorbing at ``-h_max``.
    """
    rows = q.values[next_state, goal]  # (n, A)
    if mask is None:
        return rows.max(axis=1)
    allowed = mask.observed[next_state]
    v = np.where(allowed, rows, -np.inf).max(axis=1)
    return np.where(np.isneginf(v), -float(q.h_max), v)


def bellman_targets(q: QTable, batch: TransitionBatch, state_goal: np.ndarray, mask=None) -> np.ndarray:
    h = float(q.h_max)
    arrival = batch.done & (batch.reward == 0)
    boot = next_state_values(q, batch.next_state, batch.goal, mask)
    target = -1.0 + np.where(arrival, 0.0, boot)
    # a state that already achieves the goal is terminal: no further cost
    target = np.where(state_goal[batch.state] == batch.goal, 0.0, target)
    return np.clip(target, -h, 0.0)


def bellman_update(
    q: QTable,
    batch: TransitionBatch | GCTransition,
    lr: float,
    state_goal: np.ndarray,
    mask: DatasetActionMask | None = None,
) -> QTable:
    """One in-place batched Q-learning step; returns ``q``.

    Targets are computed from the table before the step. Entries hit several
    times in one batch move by the mean of their TD errors.
    """
    if isinstance(batch, GCTransition):
        batch = TransitionBatch.from_transitions([batch])
    if not 0.0 < lr <= 1.0:
        raise ValueError("lr must lie in (0, 1]")
    if q.kind == "dataset_constrained" and mask is None:
        raise ValueError("dataset_constrained learner needs an action mask")
    if q.kind == "plain":
        mask = None
    target = bellman_targets(q, batch, state_goal, mask)
    S, G, A = q.shape
    flat = (batch.state * G + batch.goal) * A + batch.action
    vals = q.values.reshape(-1)
    uniq, inv = np.unique(flat, return_inverse=True)
    delta = np.bincount(inv, weights=target - vals[flat]) / np.bincount(inv)
    vals[uniq] = np.clip(vals[uniq] + lr * delta, -float(q.h_max), 0.0)
    return q


def full_coverage_batch(env: TabularEnv) -> TransitionBatch:
    """Every ``(s, g, a)`` triple as one goal-relabeled transition."""
    S, A, G = env.num_states, env.num_actions, env.num_goals
    s, g, a = np.meshgrid(np.arange(S), np.arange(G), np.arange(A), indexing="ij")
    s, g, a = s.ravel(), g.ravel(), a.ravel()
    s2 = env.next_state[s, a]
    reward = np.where(env.state_goal[s2] == g, 0, -1)
    return TransitionBatch(s, g, a, reward, s2, reward == 0)


def sweep_to_convergence(
    q: QTable, batch: TransitionBatch, state_goal: np.ndarray, mask=None, lr: float = 1.0,
    tol: float = 0.0, max_sweeps: int = 10_000,
) -> int:
    """Repeat synchronous full-batch updates until the table stops changing."""
    for i in range(1, max_sweeps + 1):
        before = q.values.copy()
        bellman_update(q, batch, lr, state_goal, mask)
        if np.max(np.abs(q.values - before)) <= tol:
            return i
    raise RuntimeError(f"no convergence after {max_sweeps} sweeps")


def run_updates(
    q: QTable,
    beta: UniformBuffer,
    aug_source,
    schedule: TrainSchedule,
    rng: np.random.Generator,
    state_goal: np.ndarray,
    mask: DatasetActionMask | None,
    stats: dict | None = None,
) -> QTable:
    rho = schedule.rho if aug_source is not None else 0.0
    n_aug = 0
    for _ in range(schedule.updates):
        batch = mixed_sample(beta, aug_source, schedule.batch_size, rho, schedule.her_ratio, rng)
        n_aug += int(batch.augmented.sum())
        bellman_update(q, batch, schedule.learning_rate, state_goal, mask)
    if stats is not None:
        stats["augmented_samples"] = stats.get("augmented_samples", 0) + n_aug
        stats["updates"] = stats.get("updates", 0) + schedule.updates
    return q


def pretrain_q(
    dataset,
    env: TabularEnv,
    schedule: TrainSchedule,
    kind: str = "dataset_constrained",
    rng: np.random.Generator | None = None,
) -> QTable:
    """Offline Q-learning on dataset samples mixed with random goal swaps."""
    if dataset.num_transitions == 0:
        raise ValueError("cannot pretrain on an empty dataset")
    beta = UniformBuffer(dataset, env)
    mask = DatasetActionMask.from_dataset(dataset, env) if kind == "dataset_constrained" else None
    q = QTable.for_env(env, kind)
    rng = rng if rng is not None else stream(schedule.rng_seed, "pretrain")
    return run_updates(q, beta, SwapSampler(beta, env), schedule, rng, env.state_goal, mask)


def fill_priority_buffer(
    q: QTable,
    beta: UniformBuffer,
    capacity: int,
    rng: np.random.Generator,
    alpha: float = 1.0,
    eps: float = 1e-3,
    chunk: int = 4096,
) -> PrioritizedBuffer:
    """Fill a prioritized buffer with random goal swaps scored by the frozen table."""
    buf = PrioritizedBuffer(capacity, alpha, eps)
    sampler = SwapSampler(beta, beta.env)
    while len(buf) < capacity:
        batch = sampler.sample(min(chunk, capacity - len(buf)), rng)
        w = q.values[batch.state, batch.goal, batch.action]
        buf.insert_batch(batch, priority_from_q(w, q.h_max, alpha, eps))
    return buf


def train_agent(
    dataset,
    env: TabularEnv,
    schedule: TrainSchedule,
    variant: str,
    pretrained: QTable | None = None,
    buffer: PrioritizedBuffer | None = None,
    kind: str = "dataset_constrained",
    warm_start: bool = False,
    stats: dict | None = None,
    rng: np.random.Generator | None = None,
) -> QTable:
    """Retrain an agent with one of the three data regimes.

    ``baseline`` samples only the dataset (with hindsight relabeling), ``swap``
    mixes in fresh random goal swaps, ``mem`` mixes in draws from the
    prioritized buffer built from ``pretrained`` (or the given pre-filled ``buffer``).
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if variant == "mem" and pretrained is None and buffer is None:
        raise ValueError("the mem variant needs a pretrained Q-table (or a buffer filled from one)")
    if warm_start and pretrained is None:
        raise ValueError("warm start needs a pretrained Q-table")
    beta = UniformBuffer(dataset, env)
    mask = DatasetActionMask.from_dataset(dataset, env) if kind == "dataset_constrained" else None
    rng = rng if rng is not None else stream(schedule.rng_seed, "train")
    if variant == "baseline":
        source = None
    elif variant == "swap":
        source = SwapSampler(beta, env)
    else:
        if buffer is None:
            buffer = fill_priority_buffer(
                pretrained, beta, 10 * len(beta), stream(schedule.rng_seed, "buffer")
            )
        source = buffer
    if warm_start:
        q = pretrained.copy()
        q.kind = kind
    else:
        q = QTable.for_env(env, kind)
    return run_updates(q, beta, source, schedule, rng, env.state_goal, mask, stats)


def greedy_actions(q: QTable) -> np.ndarray:
    """``(states, goals)`` array of argmax actions; ties go to the lowest index."""
    return np.argmax(q.values, axis=2)


def greedy_policy(q: QTable) -> Callable[[int, int], int]:
    table = greedy_actions(q)

    def policy(s: int, g: int) -> int:
        return int(table[s, g])

    policy.table = table  # type: ignore[attr-defined]
    return policy
