"""Command line entry point: ``vaprl run|compare|ablate|trace``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import harness, report
from .envs import DemoGenerationError
from .learner import MemoryGuardError
from .mdp import ConfigError


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--preset", choices=sorted(harness.PRESETS))
    p.add_argument("--seed", type=int, help="run a single seed (overrides seeds)")
    p.add_argument("--out", help="output directory (alias of --output_dir)")
    for f in dataclasses.fields(harness.RunConfig):
        p.add_argument(f"--{f.name}", dest=f"cfg_{f.name}", metavar=f.name.upper())


def _config(args) -> harness.RunConfig:
    cfg = harness.preset(args.preset) if args.preset else harness.RunConfig()
    if args.config:
        cfg = harness.RunConfig.from_text(Path(args.config).read_text(), base=cfg)
    for f in dataclasses.fields(harness.RunConfig):
        raw = getattr(args, f"cfg_{f.name}")
        if raw is not None:
            setattr(cfg, f.name, harness.RunConfig.parse_value(f.name, raw))
    if args.seed is not None:
        cfg.seeds = [args.seed]
    if args.out:
        cfg.output_dir = args.out
    return cfg


def cmd_run(args) -> int:
    cfg = _config(args)
    metrics = harness.run_experiment(cfg)
    for row in metrics.summary()[-1:]:
        se = "" if row["stderr"] is None else f" +- {row['stderr']:.3f}"
        print(f"{cfg.strategy}: step {row['step']} success {row['mean']:.3f}{se} "
              f"interventions {row['interventions']:.0f}")
    print(f"wrote {cfg.output_dir}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    results = harness.run_ablation(cfg)
    for name, metrics in results.items():
        print(f"{name}: final success {metrics.final().mean():.3f}")
    report.emit_summary([Path(cfg.output_dir) / name for name in results], cfg.output_dir)
    print(f"wrote {cfg.output_dir}")
    return 0


def cmd_compare(args) -> int:
    files = report.emit_summary(args.inputs, args.out)
    sys.stdout.write(files["interventions.csv"])
    return 0


def cmd_trace(args) -> int:
    series = report.read_trace(args.input)
    if not series:
        raise ConfigError(f"no curriculum trace in {args.input}")
    print("seed,n_subgoals,spearman,final_decile_max,final_decile_mean")
    for seed, (steps, dists) in sorted(series.items()):
        st = report.trend_stats(steps, dists)
        print(f"{seed},{st.n_subgoals},{st.spearman:.4f},{st.final_decile_max:.4f},{st.final_decile_mean:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vaprl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train one strategy over the configured seeds")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate", help="reset ablation: vaprl_reset, oracle_reset, uniform_reset")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("compare", help="merge run directories into comparison artifacts")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("trace", help="curriculum trend statistics of a vaprl run")
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_trace)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DemoGenerationError, MemoryGuardError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
