"""Offline goal-conditioned datasets: expert/random generation and JSONL files.

File layout (one JSON object per line)::

    {"env": {"width": .., "height": .., "variant": .., "walls": [[x, y], ..]}, "seed": 0, "version": 1}
    {"goal": 12, "success": true, "tag": "expert", "steps": [[s, a, r, s_next, done], ..]}
    ...
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from pgser.core import GCTransition, TabularEnv, Trajectory, TransitionBatch, sparse_reward
from pgser.grid import GridSpec
from pgser.oracle import DistanceOracle, build_oracle
from pgser.rng import stream

FORMAT_VERSION = 1
TAGS = ("expert", "random")


class DatasetFormatError(ValueError):
    """Malformed dataset file; carries the 1-based line number and offending field."""

    def __init__(self, line: int, fld: str, message: str):
        self.line = line
        self.field = fld
        super().__init__(f"line {line}: field {fld!r}: {message}")


@dataclass
class OfflineDataset:
    trajectories: list[Trajectory]
    env_spec: GridSpec
    rng_seed: int = 0
    _flat: TransitionBatch | None = field(default=None, repr=False, compare=False)

    @property
    def provenance(self) -> list[str]:
        return [t.tag for t in self.trajectories]

    def count(self, tag: str) -> int:
        return sum(t.tag == tag for t in self.trajectories)

    @property
    def num_transitions(self) -> int:
        return sum(len(t) for t in self.trajectories)

    def transitions(self) -> TransitionBatch:
        if self._flat is None:
            self._flat = TransitionBatch.from_transitions(
                t for traj in self.trajectories for t in traj.transitions
            )
        return self._flat

    def achieved_goals(self, env: TabularEnv) -> np.ndarray:
        """Sorted distinct goals achieved by any visited state."""
        flat = self.transitions()
        states = np.concatenate([flat.state, flat.next_state])
        return np.unique(env.state_goal[states])


def _valid_pairs(env: TabularEnv, oracle: DistanceOracle) -> bool:
    d = oracle.dist[np.ix_(env.initial_states, env.goals)]
    return bool(np.any(d > 0))


def _sample_task(env: TabularEnv, oracle: DistanceOracle, rng: np.random.Generator):
    while True:
        s0 = int(env.initial_states[rng.integers(len(env.initial_states))])
        g = int(env.goals[rng.integers(len(env.goals))])
        if oracle.dist[s0, g] > 0:
            return s0, g


def expert_rollout(env, oracle, s0, g, noise, rng, tag="expert") -> Trajectory:
    """One episode from ``s0`` toward ``g``, capped at ``env.h_max`` steps."""
    steps = []
    s = s0
    for t in range(env.h_max):
        explore = noise >= 1.0 or (noise > 0.0 and rng.random() < noise)
        best = None if explore else oracle.optimal_actions(s, g)
        if best is None or len(best) == 0:
            a = int(rng.integers(env.num_actions))
        else:
            a = int(best[rng.integers(len(best))])
        s2 = env.step(s, a)
        r = sparse_reward(env.goal_of(s2), g)
        done = r == 0 or t == env.h_max - 1
        steps.append(GCTransition(s, g, a, r, s2, done))
        s = s2
        if r == 0:
            break
    success = env.goal_of(steps[-1].next_state) == g
    return Trajectory(tuple(steps), g, success, tag)


def generate_expert(
    env: TabularEnv,
    n: int,
    noise: float,
    rng: np.random.Generator,
    oracle: DistanceOracle | None = None,
    tag: str = "expert",
) -> list[Trajectory]:
    """Shortest-path rollouts; each step is uniformly random with probability ``noise``.

    Start/goal pairs are drawn uniformly and resampled until the goal is
    reachable and not already achieved at the start.
    """
    if not 0.0 <= noise <= 1.0:
        raise ValueError(f"noise must lie in [0, 1], got {noise}")
    if n < 0:
        raise ValueError("n must be non-negative")
    oracle = oracle or build_oracle(env)
    if not _valid_pairs(env, oracle):
        raise ValueError("environment has no reachable (start, goal) pair")
    out = []
    for child in rng.spawn(n):
        s0, g = _sample_task(env, oracle, child)
        out.append(expert_rollout(env, oracle, s0, g, noise, child, tag))
    return out


def generate_random(
    env: TabularEnv, n: int, rng: np.random.Generator, oracle: DistanceOracle | None = None
) -> list[Trajectory]:
    """Uniform-random-action rollouts toward sampled goals."""
    return generate_expert(env, n, 1.0, rng, oracle, tag="random")


def generate_dataset(
    env,
    n_expert: int,
    n_random: int,
    noise: float,
    seed: int,
) -> OfflineDataset:
    oracle = build_oracle(env)
    trajs = generate_expert(env, n_expert, noise, stream(seed, "dataset", 0), oracle)
    trajs += generate_random(env, n_random, stream(seed, "dataset", 1), oracle)
    return OfflineDataset(trajs, env.spec, seed)


def reward_inconsistencies(ds: OfflineDataset, env: TabularEnv) -> list[tuple[int, int]]:
    """(trajectory, step) positions whose stored reward or done flag disagrees with recomputation."""
    bad = []
    for i, traj in enumerate(ds.trajectories):
        for k, t in enumerate(traj.transitions):
            r = sparse_reward(env.goal_of(t.next_state), t.goal)
            last = k == len(traj) - 1
            if t.reward != r or (r == 0 and not t.done) or (t.done and not last):
                bad.append((i, k))
    return bad


# -- persistence ---------------------------------------------------------------


def _dump_trajectory(t: Trajectory) -> str:
    return json.dumps(
        {
            "goal": t.commanded_goal,
            "success": t.success,
            "tag": t.tag,
            "steps": [x.as_row() for x in t.transitions],
        }
    )


def dumps_dataset(ds: OfflineDataset) -> str:
    header = json.dumps({"env": ds.env_spec.to_dict(), "seed": ds.rng_seed, "version": FORMAT_VERSION})
    lines = [header] + [_dump_trajectory(t) for t in ds.trajectories]
    return "\n".join(lines) + "\n"


def save_dataset(ds: OfflineDataset, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(dumps_dataset(ds), encoding="utf-8")
    os.replace(tmp, path)
    return path


def _require(obj: dict, key: str, kind, line: int):
    if key not in obj:
        raise DatasetFormatError(line, key, "missing")
    val = obj[key]
    # bool is an int subclass; keep the two apart
    if kind is int and (isinstance(val, bool) or not isinstance(val, int)):
        raise DatasetFormatError(line, key, f"expected integer, got {type(val).__name__}")
    if kind is not int and not isinstance(val, kind):
        raise DatasetFormatError(line, key, f"expected {kind.__name__}, got {type(val).__name__}")
    return val


def _parse_trajectory(obj, line: int) -> Trajectory:
    if not isinstance(obj, dict):
        raise DatasetFormatError(line, "<record>", "expected a JSON object")
    goal = _require(obj, "goal", int, line)
    success = _require(obj, "success", bool, line)
    tag = _require(obj, "tag", str, line)
    if tag not in TAGS:
        raise DatasetFormatError(line, "tag", f"unknown tag {tag!r}")
    rows = _require(obj, "steps", list, line)
    if not rows:
        raise DatasetFormatError(line, "steps", "trajectory has no steps")
    steps = []
    for k, row in enumerate(rows):
        fld = f"steps[{k}]"
        if (
            not isinstance(row, list)
            or len(row) != 5
            or any(isinstance(v, bool) or not isinstance(v, int) for v in row)
        ):
            raise DatasetFormatError(line, fld, "expected [s, a, r, s_next, done] integers")
        s, a, r, s2, done = row
        if r not in (-1, 0) or done not in (0, 1) or min(s, a, s2) < 0:
            raise DatasetFormatError(line, fld, "value out of range")
        steps.append(GCTransition(s, goal, a, r, s2, bool(done)))
    try:
        return Trajectory(tuple(steps), goal, success, tag)
    except ValueError as e:
        raise DatasetFormatError(line, "steps", str(e)) from None


def loads_dataset(text: str) -> OfflineDataset:
    if not text:
        raise DatasetFormatError(1, "<header>", "empty file")
    if not text.endswith("\n"):
        raise DatasetFormatError(text.count("\n") + 1, "<record>", "truncated line")
    lines = text.split("\n")[:-1]
    objs = []
    for i, raw in enumerate(lines, start=1):
        try:
            objs.append(json.loads(raw))
        except json.JSONDecodeError as e:
            raise DatasetFormatError(i, "<record>", f"invalid JSON ({e.msg})") from None

    header = objs[0]
    if not isinstance(header, dict):
        raise DatasetFormatError(1, "<header>", "expected a JSON object")
    version = _require(header, "version", int, 1)
    if version != FORMAT_VERSION:
        raise DatasetFormatError(1, "version", f"unsupported version {version}")
    seed = _require(header, "seed", int, 1)
    env = _require(header, "env", dict, 1)
    try:
        spec = GridSpec.from_dict(env)
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetFormatError(1, "env", f"bad grid spec ({e})") from None

    trajs = [_parse_trajectory(obj, i) for i, obj in enumerate(objs[1:], start=2)]
    return OfflineDataset(trajs, spec, seed)


def load_dataset(path: str | os.PathLike) -> OfflineDataset:
    return loads_dataset(Path(path).read_text(encoding="utf-8"))


def iter_positive_transitions(ds: OfflineDataset) -> Iterable[GCTransition]:
    """Transitions of successful expert trajectories, the known-reachable class."""
    for traj in ds.trajectories:
        if traj.success and traj.tag == "expert":
            yield from traj.transitions
