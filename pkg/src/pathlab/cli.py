"""Command-line interface: ``pathlab run`` and ``pathlab list``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import rng
from .experiments import ConfigError, ExperimentConfig, emit, list_experiments, run_experiment

log = logging.getLogger("pathlab")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pathlab", description="path-space expectation experiments")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: PATHLAB_NUM_THREADS or all cores)")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--experiment", "-e", help="registry id, e.g. E3")
    run.add_argument("--config", help="JSON file with ExperimentConfig keys")
    run.add_argument("--seed", type=int, help="base seed")
    run.add_argument("--samples", type=int, help="Monte Carlo sample budget")
    run.add_argument("--dt", type=float, help="time step of the simulation lattice")
    run.add_argument("--out", help="output directory")
    run.add_argument("--format", choices=("csv", "json"), help="output format")

    ls = sub.add_parser("list", help="list the experiment registry")
    ls.add_argument("--json", action="store_true", help="print a JSON array")
    ls.add_argument("--tag", help="only entries carrying this tag")
    return p


def _config(args) -> ExperimentConfig:
    data = {}
    if args.config:
        data = ExperimentConfig.from_file(args.config).to_dict()
    overrides = {"experiment": args.experiment, "base_seed": args.seed,
                 "n_samples": args.samples, "dt": args.dt, "out": args.out,
                 "format": args.format}
    data.update({k: v for k, v in overrides.items() if v is not None})
    if "experiment" not in data:
        raise ConfigError("an experiment id is required (--experiment or config file)")
    return ExperimentConfig.from_dict(data)


def _list(args) -> int:
    rows = list_experiments(args.tag)
    if args.json:
        print(json.dumps(rows, indent=2))
        return 0
    for r in rows:
        print(f"{r['id']:<4}{r['name']:<48}[{', '.join(r['tags'])}]")
        print(f"    {r['description']}")
        print(f"    anchor: {r['anchor']}")
    return 0


def _run(args) -> int:
    cfg = _config(args)
    log.info("running %s", cfg.experiment)
    result = run_experiment(cfg, write=False)
    if cfg.out is not None:
        for path in emit(result, cfg.out, cfg.format):
            log.info("wrote %s", path)
    status = "PASS" if result.passed else "FAIL"
    numbers = ", ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                        for k, v in result.headline.items())
    print(f"{cfg.experiment} {status} ({result.wall_clock:.1f} s): {numbers}")
    return 0 if result.passed else 1


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    rng.configure_threads(args.threads)
    try:
        if args.command == "list":
            return _list(args)
        return _run(args)
    except (ConfigError, OSError, json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
