"""Command-line entry point: ``nnif --config run.yaml [--stage NAME]``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_config, override
from .pipeline import STAGES, Pipeline, PipelineError

log = logging.getLogger("nnif")

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2


def _pipeline(config: RunConfig, run_dir=None, force=False, stage=None) -> Pipeline:
    root = Path(run_dir) if run_dir is not None else Path("runs") / config.name
    forced = () if not force else (STAGES if stage in (None, "all") else (stage,))
    return Pipeline(config, root, forced)


def cmd_train(config, run_dir=None, force=False):
    return _pipeline(config, run_dir, force, "train").run("train")


def cmd_attack(config, run_dir=None, force=False):
    return _pipeline(config, run_dir, force, "attack").run("attack")


def cmd_influence(config, run_dir=None, force=False):
    return _pipeline(config, run_dir, force, "influence").run("influence")


def cmd_features(config, run_dir=None, force=False):
    return _pipeline(config, run_dir, force, "features").run("features")


def cmd_detect(config, run_dir=None, force=False):
    return _pipeline(config, run_dir, force, "detect").run("detect")


def cmd_eval(config, run_dir=None, force=False):
    return _pipeline(config, run_dir, force, "eval").run("eval")


def cmd_all(config, run_dir=None, force=False):
    return _pipeline(config, run_dir, force).run()


COMMANDS = {"train": cmd_train, "attack": cmd_attack, "influence": cmd_influence, "features": cmd_features,
            "detect": cmd_detect, "eval": cmd_eval, "all": cmd_all}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nnif", description=__doc__)
    p.add_argument("--config", type=Path, help="YAML or JSON run configuration (defaults apply when omitted)")
    p.add_argument("--run-dir", type=Path, help="run directory (default runs/<name>)")
    p.add_argument("--seed", type=int, help="run this single seed instead of the configured list")
    p.add_argument("--stage", choices=[*STAGES, "all"], default="all")
    p.add_argument("--force", action="store_true", help="rebuild the selected stage even if cached")
    p.add_argument("--layers", choices=["embedding", "all"])
    p.add_argument("--subsample-frac", type=float, help="fraction of training points scored for influence")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        cfg = override(cfg, args.seed, args.layers, args.subsample_frac)
        built = COMMANDS[args.stage](cfg, args.run_dir, args.force)
    except (ConfigError, PipelineError) as exc:
        print(f"nnif: error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception:
        log.exception("internal error")
        return EXIT_INTERNAL
    print(f"{args.stage}: {len(built)} artifact(s) rebuilt")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
