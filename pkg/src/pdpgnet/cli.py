"""Command line: genmap | train | evaluate | static | compare.

Failures print a single ``error: <kind>: <message>`` line on stderr and exit
with status 1 (2 for usage errors, as argparse does).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError, PdpgNetError
from .harness import RL_KINDS, STATIC_KINDS, ExperimentConfig, compare_runs, load_artifacts, run_experiment
from .rsrp_map import generate_map, save_map

log = logging.getLogger("pdpgnet")


def _load(args):
    return ExperimentConfig.load(args.config, seed=args.seed, output_dir=getattr(args, "out", None))


def cmd_genmap(args):
    cfg = ExperimentConfig.load(args.config, seed=args.seed)
    tensor = generate_map(cfg.map_gen_config(), cfg.tilts(), cfg.raw["scenario"]["bs_positions"])
    out = Path(args.out or Path(cfg.raw["output_dir"]) / "map.bin")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_map(tensor, out)
    print(f"wrote {out} shape={tensor.shape}")


def cmd_train(args):
    cfg = _load(args)
    if cfg.kind not in RL_KINDS:
        raise ConfigError(f"train needs an RL agent kind {RL_KINDS}, config has {cfg.kind!r}")
    art = run_experiment(cfg)
    print(f"wrote {art.out_dir}")


def cmd_evaluate(args):
    cfg = _load(args)
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise ConfigError(f"checkpoint not found: {ckpt}")
    art = run_experiment(cfg, checkpoint=ckpt)
    print(f"wrote {art.out_dir}")


def cmd_static(args):
    cfg = _load(args)
    if cfg.kind not in STATIC_KINDS:
        raise ConfigError(f"static needs a static agent kind {STATIC_KINDS}, config has {cfg.kind!r}")
    art = run_experiment(cfg)
    print(f"wrote {art.out_dir}")


def cmd_compare(args):
    runs = [load_artifacts(d) for d in args.runs]
    rows = compare_runs(runs, args.out)
    print(json.dumps(rows, indent=2))


def build_parser():
    p = argparse.ArgumentParser(prog="pdpgnet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="JSON experiment config")
        sp.add_argument("--seed", type=int, default=None, help="override scenario.seed")
        sp.add_argument("--out", default=None, help="output path (directory; map file for genmap)")

    common(sub.add_parser("genmap", help="generate and save a synthetic RSRP map"))
    common(sub.add_parser("train", help="train an RL agent over the horizon"))
    ev = sub.add_parser("evaluate", help="run a trained checkpoint without learning or noise")
    common(ev)
    ev.add_argument("--checkpoint", required=True)
    common(sub.add_parser("static", help="run a static brute-force benchmark"))
    cp = sub.add_parser("compare", help="summarise and compare run directories")
    common(cp, config_required=False)
    cp.add_argument("runs", nargs="*", help="run directories")
    return p


COMMANDS = {"genmap": cmd_genmap, "train": cmd_train, "evaluate": cmd_evaluate, "static": cmd_static,
            "compare": cmd_compare}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "compare" and not args.runs:
        parser.error("compare needs at least one run directory")
    try:
        COMMANDS[args.command](args)
    except PdpgNetError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
