"""Verification studies: Q-value separation, reachability classification,
policy evaluation and multi-seed significance testing."""

from __future__ import annotations

import csv
import json
import math
import os
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from pgser.augment import SwapSampler
from pgser.core import TabularEnv, TransitionBatch
from pgser.dataset import iter_positive_transitions
from pgser.learner import QTable
from pgser.oracle import UNREACHABLE, DistanceOracle, build_oracle
from pgser.replay import UniformBuffer

POSITIVE, NEGATIVE = "positive", "negative"


@dataclass(frozen=True)
class LabeledQSample:
    q: float
    label: str


def _arrays(samples: Sequence[LabeledQSample]) -> tuple[np.ndarray, np.ndarray]:
    q = np.array([s.q for s in samples], dtype=np.float64)
    y = np.array([s.label == POSITIVE for s in samples], dtype=bool)
    return q, y


def _require_both(y: np.ndarray) -> None:
    if y.all() or not y.any():
        raise ValueError("both positive and negative samples are required")


# -- Q-value collection ----------------------------------------------------------


def positive_pool(dataset) -> TransitionBatch:
    """Transitions of successful expert trajectories: known to lead to their goal."""
    return TransitionBatch.from_transitions(iter_positive_transitions(dataset))


def collect_labeled_q(
    q: QTable,
    dataset,
    env: TabularEnv,
    n_per_class: int,
    rng: np.random.Generator,
    negatives: str = "swap",
    oracle: DistanceOracle | None = None,
) -> list[LabeledQSample]:
    """Q values of successful-trajectory transitions vs random goal swaps.

    With ``negatives="unreachable"`` the swaps are restricted to goals that
    cannot be reached from the transition's next state.
    """
    pos = positive_pool(dataset)
    if len(pos) == 0:
        raise ValueError("dataset has no successful expert trajectories to use as positives")
    pick = pos.take(rng.integers(len(pos), size=n_per_class))
    qp = q.values[pick.state, pick.goal, pick.action]

    sampler = SwapSampler(UniformBuffer(dataset, env), env)
    if negatives == "swap":
        neg = sampler.sample(n_per_class, rng)
    elif negatives == "unreachable":
        oracle = oracle or build_oracle(env)
        parts, have = [], 0
        for _ in range(1000):
            b = sampler.sample(max(n_per_class, 256), rng)
            keep = oracle.dist[b.next_state, b.goal] == UNREACHABLE
            parts.append(b.take(np.flatnonzero(keep)))
            have += int(keep.sum())
            if have >= n_per_class:
                break
        else:
            raise ValueError("dataset yields no swaps onto unreachable goals")
        neg = TransitionBatch.concat(parts).take(np.arange(n_per_class))
    else:
        raise ValueError(f"unknown negatives mode {negatives!r}")
    qn = q.values[neg.state, neg.goal, neg.action]
    return [LabeledQSample(float(v), POSITIVE) for v in qp] + [
        LabeledQSample(float(v), NEGATIVE) for v in qn
    ]


# -- histogram -------------------------------------------------------------------


@dataclass
class QHistogram:
    edges: np.ndarray
    positive: np.ndarray
    negative: np.ndarray

    def to_csv(self, path: str | os.PathLike) -> Path:
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_left", "bin_right", "count_positive", "count_negative"])
            for i in range(len(self.positive)):
                w.writerow([repr(float(self.edges[i])), repr(float(self.edges[i + 1])),
                            int(self.positive[i]), int(self.negative[i])])
        return path


def q_histogram(samples: Sequence[LabeledQSample], bins: int, h_max: float) -> QHistogram:
    if bins < 2:
        raise ValueError("need at least two bins")
    if not samples:
        raise ValueError("no samples to histogram")
    q, y = _arrays(samples)
    edges = np.linspace(-float(h_max), 0.0, bins + 1)
    pos, _ = np.histogram(q[y], bins=edges)
    neg, _ = np.histogram(q[~y], bins=edges)
    return QHistogram(edges, pos, neg)


# -- classifiers -----------------------------------------------------------------


@dataclass(frozen=True)
class ThresholdFit:
    threshold: float
    train_accuracy: float

    def predict(self, q) -> np.ndarray:
        return np.asarray(q) >= self.threshold


def _threshold_scan(q: np.ndarray, y: np.ndarray) -> ThresholdFit:
    u = np.unique(q)
    # midpoints, plus one candidate below and above everything (all-positive / all-negative)
    cands = np.concatenate([[u[0] - 1.0], (u[:-1] + u[1:]) / 2.0, [u[-1] + 1.0]])
    pos = np.sort(q[y])
    neg = np.sort(q[~y])
    tp = len(pos) - np.searchsorted(pos, cands, side="left")
    tn = np.searchsorted(neg, cands, side="left")
    acc = (tp + tn) / len(q)
    best = int(np.argmax(acc))
    return ThresholdFit(float(cands[best]), float(acc[best]))


def fit_threshold_classifier(samples: Sequence[LabeledQSample]) -> ThresholdFit:
    """Best single cut on the Q value, predicting positive iff ``q >= threshold``."""
    q, y = _arrays(samples)
    _require_both(y)
    return _threshold_scan(q, y)


@dataclass(frozen=True)
class LogisticFit:
    weight: float
    bias: float
    train_accuracy: float

    def predict(self, q) -> np.ndarray:
        return self.weight * np.asarray(q) + self.bias >= 0.0

    @property
    def boundary(self) -> float:
        return -self.bias / self.weight


def _logistic(q: np.ndarray, y: np.ndarray, steps: int, lr: float) -> LogisticFit:
    mu = q.mean()
    sd = q.std() or 1.0
    x = (q - mu) / sd
    t = y.astype(np.float64)
    w = b = 0.0
    for _ in range(steps):
        p = 1.0 / (1.0 + np.exp(-(w * x + b)))
        err = p - t
        w -= lr * float(np.mean(err * x))
        b -= lr * float(np.mean(err))
    weight, bias = w / sd, b - w * mu / sd
    acc = float(np.mean((weight * q + bias >= 0.0) == y))
    return LogisticFit(weight, bias, acc)


def fit_logistic_1d(samples: Sequence[LabeledQSample], steps: int = 2000, lr: float = 0.5) -> LogisticFit:
    """Logistic regression on the scalar Q feature by full-batch gradient descent.

    The feature is standardized internally; the returned weight and bias act
    on raw Q values.
    """
    q, y = _arrays(samples)
    _require_both(y)
    return _logistic(q, y, steps, lr)


def holdout_accuracy(
    samples: Sequence[LabeledQSample], rng: np.random.Generator, steps: int = 2000, lr: float = 0.5
) -> dict[str, float]:
    """Fit on a random half and score on the other half."""
    q, y = _arrays(samples)
    _require_both(y)
    perm = rng.permutation(len(q))
    tr, te = perm[: len(q) // 2], perm[len(q) // 2:]
    _require_both(y[tr])
    thr = _threshold_scan(q[tr], y[tr])
    log = _logistic(q[tr], y[tr], steps, lr)
    return {
        "threshold": float(np.mean(thr.predict(q[te]) == y[te])),
        "logistic": float(np.mean(log.predict(q[te]) == y[te])),
    }


def separation_test(samples: Sequence[LabeledQSample]) -> dict[str, float]:
    """One-sided Welch test that positives carry higher Q values than negatives."""
    q, y = _arrays(samples)
    _require_both(y)
    pos, neg = q[y], q[~y]
    if pos.var() == 0.0 and neg.var() == 0.0:
        diff = pos.mean() - neg.mean()
        t = 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
        p = 0.5 if diff == 0.0 else float(diff < 0)
    else:
        with warnings.catch_warnings():
            # a constant class (all unreachable at the floor) is legitimate here
            warnings.simplefilter("ignore", RuntimeWarning)
            res = stats.ttest_ind(pos, neg, equal_var=False, alternative="greater")
        t, p = float(res.statistic), float(res.pvalue)
    return {"mean_positive": float(pos.mean()), "mean_negative": float(neg.mean()), "t": t, "p": p}


# -- evaluation ------------------------------------------------------------------


def sample_eval_pairs(
    env: TabularEnv, episodes: int, rng: np.random.Generator, oracle: DistanceOracle | None = None
) -> np.ndarray:
    """Uniform ``(start, goal)`` pairs among reachable pairs with positive distance."""
    oracle = oracle or build_oracle(env)
    d = oracle.dist[np.ix_(env.initial_states, env.goals)]
    si, gi = np.nonzero(d > 0)
    if len(si) == 0:
        raise ValueError("no reachable evaluation pairs")
    pick = rng.integers(len(si), size=episodes)
    return np.column_stack([env.initial_states[si[pick]], env.goals[gi[pick]]])


@dataclass(frozen=True)
class EpisodeStats:
    mean_return: float
    success_rate: float
    mean_length: float
    returns: tuple[float, ...] = ()


def rollout(policy: Callable[[int, int], int], env: TabularEnv, s: int, g: int) -> tuple[float, bool, int]:
    """Cumulative reward, success flag and length of one capped episode."""
    total = 0.0
    for t in range(env.h_max):
        if env.goal_of(s) == g:
            return total, True, t
        s = env.step(s, policy(s, g))
        total -= 1.0
    return total, env.goal_of(s) == g, env.h_max


def evaluate_policy(
    policy: Callable[[int, int], int],
    env: TabularEnv,
    episodes: int,
    rng: np.random.Generator | None = None,
    pairs: np.ndarray | None = None,
) -> EpisodeStats:
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    if pairs is None:
        pairs = sample_eval_pairs(env, episodes, rng)
    results = [rollout(policy, env, int(s), int(g)) for s, g in pairs[:episodes]]
    rets = tuple(r for r, _, _ in results)
    return EpisodeStats(
        mean_return=float(np.mean(rets)),
        success_rate=float(np.mean([ok for _, ok, _ in results])),
        mean_length=float(np.mean([n for _, _, n in results])),
        returns=rets,
    )


@dataclass
class EvalReport:
    """Per-seed evaluation results for one variant."""

    variant: str
    seeds: list[int] = field(default_factory=list)
    mean_return: list[float] = field(default_factory=list)
    success_rate: list[float] = field(default_factory=list)
    mean_length: list[float] = field(default_factory=list)

    def add(self, seed: int, ep: EpisodeStats) -> None:
        self.seeds.append(int(seed))
        self.mean_return.append(ep.mean_return)
        self.success_rate.append(ep.success_rate)
        self.mean_length.append(ep.mean_length)

    def aggregate(self) -> dict[str, float]:
        r = np.asarray(self.mean_return)
        return {
            "mean_return": float(r.mean()),
            "std_return": float(r.std(ddof=1)) if len(r) > 1 else 0.0,
            "mean_success_rate": float(np.mean(self.success_rate)),
            "mean_length": float(np.mean(self.mean_length)),
        }

    def to_dict(self) -> dict:
        d = asdict(self)
        d["aggregate"] = self.aggregate()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(d["variant"], list(d["seeds"]), list(d["mean_return"]),
                   list(d["success_rate"]), list(d["mean_length"]))


def save_reports(reports: Sequence[EvalReport], path: str | os.PathLike) -> Path:
    path = Path(path)
    payload = {"variants": [r.to_dict() for r in reports]}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_reports(path: str | os.PathLike) -> list[EvalReport]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return [EvalReport.from_dict(d) for d in data["variants"]]


# -- significance ------------------------------------------------------------------


def welch_t(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Two-sided Welch t-test; degenerate zero-variance cases are resolved explicitly."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("Welch's t-test needs at least two seeds per variant")
    se2 = a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b)
    diff = a.mean() - b.mean()
    if se2 == 0.0:
        if diff == 0.0:
            return 0.0, 1.0
        return math.copysign(math.inf, diff), 0.0
    res = stats.ttest_ind(a, b, equal_var=False)
    return float(res.statistic), float(res.pvalue)


@dataclass(frozen=True)
class Comparison:
    variant_a: str
    variant_b: str
    mean_a: float
    std_a: float
    mean_b: float
    std_b: float
    t: float
    p: float


def compare_variants(reports: Sequence[EvalReport]) -> list[Comparison]:
    """Pairwise Welch tests on per-seed mean returns, in the given variant order."""
    rows = []
    for i, ra in enumerate(reports):
        for rb in reports[i + 1:]:
            t, p = welch_t(ra.mean_return, rb.mean_return)
            a, b = np.asarray(ra.mean_return), np.asarray(rb.mean_return)
            rows.append(Comparison(ra.variant, rb.variant, float(a.mean()), float(a.std(ddof=1)),
                                   float(b.mean()), float(b.std(ddof=1)), t, p))
    return rows


def save_comparisons(rows: Sequence[Comparison], path: str | os.PathLike) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant_a", "variant_b", "mean_a", "std_a", "mean_b", "std_b", "t", "p"])
        for r in rows:
            w.writerow([r.variant_a, r.variant_b] + [repr(float(v)) for v in
                       (r.mean_a, r.std_a, r.mean_b, r.std_b, r.t, r.p)])
    return path
