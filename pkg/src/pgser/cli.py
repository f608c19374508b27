"""Command-line entry point: ``pgser <command> --config PATH|PRESET [options]``.

Exit codes: 0 success, 2 config validation error, 3 missing artifact, 4 stage failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

from pgser import config as configlib
from pgser import pipeline
from pgser.analysis import save_reports
from pgser.config import ConfigError
from pgser.learner import VARIANTS

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_STAGE = 0, 2, 3, 4

log = logging.getLogger("pgser")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="config file or bundled preset name")
    common.add_argument("--seed", type=int, default=None, help="override the master seed")
    common.add_argument("--out", default=None, help="output directory (default: config output_dir)")
    common.add_argument("--jobs", type=int, default=1, help="parallel training runs")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="pgser", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", parents=[common], help="generate the offline dataset")
    sp = sub.add_parser("pretrain", parents=[common], help="pretrain Q with random goal swapping")
    sp.add_argument("--dataset")
    sp = sub.add_parser("fill-buffer", parents=[common], help="fill the prioritized swap buffer")
    sp.add_argument("--dataset")
    sp.add_argument("--qtable")
    sp = sub.add_parser("train", parents=[common], help="retrain one variant for every eval seed")
    sp.add_argument("--dataset")
    sp.add_argument("--buffer")
    sp.add_argument("--pretrained")
    sp.add_argument("--variant", choices=VARIANTS)
    sp = sub.add_parser("evaluate", parents=[common], help="evaluate a Q-table's greedy policy")
    sp.add_argument("--qtable", required=True)
    sp.add_argument("--variant", default=None, help="label for the report")
    for name, hlp in (("qhist", "Q-value histogram CSV"), ("classify", "reachability classifiers")):
        sp = sub.add_parser(name, parents=[common], help=hlp)
        sp.add_argument("--dataset")
        sp.add_argument("--qtable")
    sub.add_parser("pipeline", parents=[common], help="run every stage for all variants and seeds")
    return p


def _load_config(args) -> configlib.ExperimentConfig:
    cfg = configlib.load(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if getattr(args, "variant", None) and args.command == "train":
        cfg = dataclasses.replace(cfg, variant=args.variant)
    return cfg.validate()


def _run(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    cmd = args.command
    opt = lambda name: getattr(args, name, None)  # noqa: E731

    if cmd == "pipeline":
        manifest = pipeline.run_pipeline(cfg, out, jobs=args.jobs)
        print(json.dumps(manifest["artifacts"], indent=2))
        sig = pipeline.Layout(out).significance
        if sig.exists():
            print(sig.read_text(), end="")
        return EXIT_OK

    stages = {
        "gen-data": lambda: {"dataset": pipeline.gen_data(cfg, out)},
        "pretrain": lambda: {"pretrained": pipeline.pretrain(cfg, out, opt("dataset"))},
        "fill-buffer": lambda: {"buffer": pipeline.fill_buffer(cfg, out, opt("qtable"), opt("dataset"))},
        "qhist": lambda: {"qhist": pipeline.qhist(cfg, out, opt("qtable"), opt("dataset"))},
        "classify": lambda: {"classify": pipeline.classify(cfg, out, opt("qtable"), opt("dataset"))},
    }
    if cmd in stages:
        artifacts = _stage(cmd, stages[cmd])
    elif cmd == "train":
        artifacts = {
            f"{cfg.variant}_seed{s}": _stage(cmd, pipeline.train, cfg, out, cfg.variant, s,
                                             opt("dataset"), opt("buffer"), opt("pretrained"))
            for s in cfg.eval.seeds
        }
    elif cmd == "evaluate":
        rep = _stage(cmd, pipeline.evaluate, cfg, Path(args.qtable), opt("variant"))
        path = save_reports([rep], out / f"eval_{rep.variant}.json")
        print(json.dumps(rep.aggregate(), indent=2))
        artifacts = {"eval_report": path}
    else:  # pragma: no cover - argparse rejects unknown commands
        raise AssertionError(cmd)
    pipeline.write_manifest(cfg, out, artifacts, started)
    for k, v in artifacts.items():
        print(f"{k}: {v}")
    return EXIT_OK


def _stage(name, fn, *a):
    try:
        return fn(*a)
    except (pipeline.MissingArtifact, ConfigError):
        raise
    except Exception as e:  # noqa: BLE001
        raise pipeline.StageFailure(name, e) from e


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _run(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (pipeline.MissingArtifact, FileNotFoundError) as e:
        print(f"missing artifact: {e}", file=sys.stderr)
        return EXIT_MISSING
    except pipeline.StageFailure as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
