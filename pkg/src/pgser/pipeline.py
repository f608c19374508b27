"""Experiment stages and the end-to-end pipeline.

Each stage writes one artifact plus a ``.key`` sidecar holding the content
hash of everything the artifact depends on; a stage whose sidecar matches is
skipped. All randomness is drawn from named streams of the master seed.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from pgser import __version__
from pgser.analysis import (
    EvalReport,
    EpisodeStats,
    collect_labeled_q,
    compare_variants,
    evaluate_policy,
    fit_logistic_1d,
    fit_threshold_classifier,
    holdout_accuracy,
    q_histogram,
    sample_eval_pairs,
    save_comparisons,
    save_reports,
    separation_test,
)
from pgser.config import ExperimentConfig
from pgser.dataset import OfflineDataset, generate_dataset, load_dataset, save_dataset
from pgser.learner import VARIANTS, QTable, fill_priority_buffer, greedy_policy, pretrain_q, train_agent
from pgser.replay import PrioritizedBuffer, UniformBuffer
from pgser.rng import stream

log = logging.getLogger(__name__)


class MissingArtifact(FileNotFoundError):
    pass


class StageFailure(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")


def file_hash(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _key(*parts) -> str:
    return hashlib.sha256(json.dumps(parts, sort_keys=True, default=str).encode()).hexdigest()


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".key")


def _cached(path: Path, key: str) -> bool:
    side = _sidecar(path)
    return path.exists() and side.exists() and side.read_text().strip() == key


def _mark(path: Path, key: str) -> None:
    side = _sidecar(path)
    tmp = side.with_name(side.name + ".tmp")
    tmp.write_text(key + "\n")
    os.replace(tmp, side)


def _require(path: Path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"{what} not found: {path}")
    return path


def _atomic_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)
    return path


class Layout:
    """Artifact paths inside an output directory."""

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)

    dataset = property(lambda self: self.root / "dataset.jsonl")
    pretrained = property(lambda self: self.root / "pretrain.qtbl")
    buffer = property(lambda self: self.root / "buffer.csv")
    eval_report = property(lambda self: self.root / "eval_report.json")
    significance = property(lambda self: self.root / "significance.csv")
    qhist = property(lambda self: self.root / "qhist.csv")
    classify = property(lambda self: self.root / "classify.json")
    manifest = property(lambda self: self.root / "manifest.json")

    def trained(self, variant: str, seed: int) -> Path:
        return self.root / "runs" / f"{variant}_seed{seed}.qtbl"

    def run_eval(self, variant: str, seed: int) -> Path:
        return self.root / "runs" / f"{variant}_seed{seed}.eval.json"


# -- stages --------------------------------------------------------------------------


def gen_data(cfg: ExperimentConfig, out: Path) -> Path:
    path = Layout(out).dataset
    key = _key("dataset", cfg.to_dict()["env"], cfg.to_dict()["dataset"], cfg.dataset_seed)
    if _cached(path, key):
        return path
    env = cfg.env.build()
    d = cfg.dataset
    ds = generate_dataset(env, d.n_expert, d.n_random, d.noise, cfg.dataset_seed)
    save_dataset(ds, path)
    _mark(path, key)
    return path


def _load_dataset(cfg: ExperimentConfig, path: Path) -> OfflineDataset:
    ds = load_dataset(_require(path, "dataset"))
    if ds.env_spec != cfg.env.grid_spec():
        raise ValueError("dataset was generated for a different environment")
    return ds


def pretrain(cfg: ExperimentConfig, out: Path, dataset_path: Path | None = None) -> Path:
    lay = Layout(out)
    dataset_path = Path(dataset_path or lay.dataset)
    _require(dataset_path, "dataset")
    path = lay.pretrained
    key = _key("pretrain", file_hash(dataset_path), cfg.to_dict()["pretrain"], cfg.env.h_max, cfg.seed)
    if _cached(path, key):
        return path
    env = cfg.env.build()
    ds = _load_dataset(cfg, dataset_path)
    st = cfg.pretrain
    q = pretrain_q(ds, env, st.schedule(cfg.seed), kind=st.learner, rng=stream(cfg.seed, "pretrain"))
    q.save(path)
    _mark(path, key)
    return path


def buffer_capacity(cfg: ExperimentConfig, ds: OfflineDataset) -> int:
    return cfg.buffer.capacity or 10 * ds.num_transitions


def fill_buffer(cfg: ExperimentConfig, out: Path, q_path: Path | None = None, dataset_path: Path | None = None) -> Path:
    lay = Layout(out)
    q_path = _require(Path(q_path or lay.pretrained), "pretrained Q-table")
    dataset_path = _require(Path(dataset_path or lay.dataset), "dataset")
    path = lay.buffer
    key = _key("buffer", file_hash(q_path), file_hash(dataset_path), cfg.to_dict()["buffer"], cfg.seed)
    if _cached(path, key):
        return path
    env = cfg.env.build()
    ds = _load_dataset(cfg, dataset_path)
    q = QTable.load(q_path)
    b = cfg.buffer
    buf = fill_priority_buffer(
        q, UniformBuffer(ds, env), buffer_capacity(cfg, ds), stream(cfg.seed, "buffer"), b.alpha, b.eps
    )
    buf.dump_csv(path)
    _mark(path, key)
    return path


def train(
    cfg: ExperimentConfig,
    out: Path,
    variant: str,
    run_seed: int,
    dataset_path: Path | None = None,
    buffer_path: Path | None = None,
    pretrained_path: Path | None = None,
) -> Path:
    lay = Layout(out)
    dataset_path = _require(Path(dataset_path or lay.dataset), "dataset")
    deps = [file_hash(dataset_path)]
    if variant == "mem":
        buffer_path = _require(Path(buffer_path or lay.buffer), "priority buffer (required by variant mem)")
        deps.append(file_hash(buffer_path))
    if cfg.train.warm_start:
        pretrained_path = _require(Path(pretrained_path or lay.pretrained), "pretrained Q-table (warm start)")
        deps.append(file_hash(pretrained_path))
    path = lay.trained(variant, run_seed)
    key = _key("train", variant, run_seed, deps, cfg.to_dict()["train"], cfg.env.h_max, cfg.seed)
    if _cached(path, key):
        return path
    env = cfg.env.build()
    ds = _load_dataset(cfg, dataset_path)
    buf = None
    if variant == "mem":
        buf = PrioritizedBuffer.load_csv(buffer_path, cfg.buffer.alpha, cfg.buffer.eps)
    pre = QTable.load(pretrained_path) if cfg.train.warm_start else None
    st = cfg.train
    q = train_agent(
        ds, env, st.schedule(run_seed), variant,
        pretrained=pre,
        buffer=buf, kind=st.learner, warm_start=st.warm_start,
        rng=stream(cfg.seed, "train", run_seed),
    )
    q.save(path)
    _mark(path, key)
    return path


def evaluate_table(cfg: ExperimentConfig, q_path: Path, run_seed: int) -> EpisodeStats:
    env = cfg.env.build()
    q = QTable.load(_require(q_path, "Q-table"))
    if q.shape != (env.num_states, env.num_goals, env.num_actions):
        raise ValueError("Q-table does not match the configured environment")
    pairs = sample_eval_pairs(env, cfg.eval.episodes, stream(cfg.seed, "eval", run_seed))
    return evaluate_policy(greedy_policy(q), env, cfg.eval.episodes, pairs=pairs)


def evaluate_run(cfg: ExperimentConfig, out: Path, variant: str, run_seed: int) -> Path:
    lay = Layout(out)
    q_path = _require(lay.trained(variant, run_seed), "trained Q-table")
    path = lay.run_eval(variant, run_seed)
    key = _key("eval", file_hash(q_path), cfg.to_dict()["eval"]["episodes"], cfg.to_dict()["env"], cfg.seed, run_seed)
    if _cached(path, key):
        return path
    ep = evaluate_table(cfg, q_path, run_seed)
    payload = {
        "variant": variant, "seed": run_seed, "mean_return": ep.mean_return,
        "success_rate": ep.success_rate, "mean_length": ep.mean_length, "returns": list(ep.returns),
    }
    _atomic_text(path, json.dumps(payload, sort_keys=True) + "\n")
    _mark(path, key)
    return path


def evaluate(cfg: ExperimentConfig, q_path: Path, variant: str | None = None) -> EvalReport:
    """Evaluate one table on every configured evaluation seed."""
    rep = EvalReport(variant or cfg.variant)
    for s in cfg.eval.seeds:
        rep.add(s, evaluate_table(cfg, Path(q_path), s))
    return rep


def _labeled(cfg: ExperimentConfig, q_path: Path, dataset_path: Path):
    env = cfg.env.build()
    ds = _load_dataset(cfg, _require(dataset_path, "dataset"))
    q = QTable.load(_require(q_path, "Q-table"))
    rng = stream(cfg.seed, "analysis")
    samples = collect_labeled_q(q, ds, env, cfg.analysis.n_per_class, rng, cfg.analysis.negatives)
    return samples, q, rng


def qhist(cfg: ExperimentConfig, out: Path, q_path: Path | None = None, dataset_path: Path | None = None) -> Path:
    lay = Layout(out)
    samples, q, _ = _labeled(cfg, Path(q_path or lay.pretrained), Path(dataset_path or lay.dataset))
    q_histogram(samples, cfg.analysis.bins, q.h_max).to_csv(lay.qhist)
    return lay.qhist


def classify(cfg: ExperimentConfig, out: Path, q_path: Path | None = None, dataset_path: Path | None = None) -> Path:
    lay = Layout(out)
    samples, _, rng = _labeled(cfg, Path(q_path or lay.pretrained), Path(dataset_path or lay.dataset))
    thr = fit_threshold_classifier(samples)
    lg = fit_logistic_1d(samples)
    held = holdout_accuracy(samples, rng)
    report = {
        "negatives": cfg.analysis.negatives,
        "n_per_class": cfg.analysis.n_per_class,
        "separation": separation_test(samples),
        "threshold": {"threshold": thr.threshold, "train_accuracy": thr.train_accuracy,
                      "holdout_accuracy": held["threshold"]},
        "logistic": {"weight": lg.weight, "bias": lg.bias, "train_accuracy": lg.train_accuracy,
                     "holdout_accuracy": held["logistic"]},
    }
    _atomic_text(lay.classify, json.dumps(report, indent=2, sort_keys=True) + "\n")
    return lay.classify


# -- pipeline ------------------------------------------------------------------------


def _train_and_eval(cfg_dict: dict, out: str, variant: str, seed: int) -> tuple[str, str]:
    from pgser.config import from_dict

    cfg = from_dict(cfg_dict)
    q_path = train(cfg, Path(out), variant, seed)
    ev_path = evaluate_run(cfg, Path(out), variant, seed)
    return str(q_path), str(ev_path)


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except MissingArtifact:
        raise
    except Exception as e:  # noqa: BLE001
        raise StageFailure(name, e) from e


def run_pipeline(cfg: ExperimentConfig, out: str | os.PathLike | None = None, jobs: int = 1,
                 variants: tuple[str, ...] = VARIANTS) -> dict:
    """gen-data -> pretrain -> fill-buffer -> train x variants x seeds -> evaluate -> compare."""
    started = time.time()
    out = Path(out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    lay = Layout(out)
    log.info("pipeline %s -> %s", cfg.name, out)

    ds_path = _stage("gen-data", gen_data, cfg, out)
    q_path = _stage("pretrain", pretrain, cfg, out, ds_path)
    buf_path = _stage("fill-buffer", fill_buffer, cfg, out, q_path, ds_path) if "mem" in variants else None

    tasks = [(v, s) for v in variants for s in cfg.eval.seeds]
    cfg_dict = cfg.to_dict()
    try:
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as ex:
                futs = [ex.submit(_train_and_eval, cfg_dict, str(out), v, s) for v, s in tasks]
                results = [f.result() for f in futs]
        else:
            results = [_train_and_eval(cfg_dict, str(out), v, s) for v, s in tasks]
    except MissingArtifact:
        raise
    except Exception as e:  # noqa: BLE001
        raise StageFailure("train", e) from e

    reports = []
    for v in variants:
        rep = EvalReport(v)
        for s in cfg.eval.seeds:
            d = json.loads(lay.run_eval(v, s).read_text())
            rep.add(s, EpisodeStats(d["mean_return"], d["success_rate"], d["mean_length"]))
        reports.append(rep)
    save_reports(reports, lay.eval_report)
    if len(cfg.eval.seeds) >= 2 and len(reports) >= 2:
        _stage("compare", lambda: save_comparisons(compare_variants(reports), lay.significance))

    artifacts = {
        "dataset": str(ds_path),
        "pretrained": str(q_path),
        "buffer": str(buf_path) if buf_path else None,
        "trained": [q for q, _ in results],
        "run_evals": [e for _, e in results],
        "eval_report": str(lay.eval_report),
        "significance": str(lay.significance) if lay.significance.exists() else None,
    }
    manifest = {
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "artifacts": artifacts,
        "wall_clock_seconds": round(time.time() - started, 3),
        "version": __version__,
    }
    _atomic_text(lay.manifest, json.dumps(manifest, indent=2) + "\n")
    return manifest


def write_manifest(cfg: ExperimentConfig, out: Path, artifacts: dict, started: float) -> Path:
    manifest = {
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "artifacts": {k: str(v) for k, v in artifacts.items()},
        "wall_clock_seconds": round(time.time() - started, 3),
        "version": __version__,
    }
    return _atomic_text(Layout(out).manifest, json.dumps(manifest, indent=2) + "\n")
