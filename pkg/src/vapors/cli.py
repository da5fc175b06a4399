"""Command-line entry point: ``vapors <subcommand> [options]``.

Exit codes: 0 on success, 1 on runtime failure, 2 on usage errors
(bad arguments, missing or malformed input files, invalid configs).
The output directory defaults to ``$VAPORS_OUT`` when ``--out`` is absent.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config
from .dynamics.checkpoint import CheckpointError, load_checkpoint
from .dynamics.model import LatentDynamics, TrainingError
from .grids import GridFormatError, as_mask, read_pbm, read_pgm
from .harness import POLICIES, PRESETS, ExperimentConfig, label_tool, run_experiment
from .planner import plan, run_acquire_only_episode, run_heuristic_episode, run_random_episode
from .platesim import PlateSim, PrimitiveKind, Spread, one_hot

OUT_ENV = "VAPORS_OUT"
DEFAULT_OUT = "vapors_out"


class UsageError(Exception):
    pass


def parse_seed_range(text: str) -> tuple[int, ...]:
    """``"3"`` -> (3,);  ``"0..9"`` -> 0, 1, ..., 9 (inclusive)."""
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo, hi = int(a), int(b)
        else:
            lo = hi = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed range {text!r}; use N or A..B") from None
    if hi < lo:
        raise argparse.ArgumentTypeError(f"empty seed range {text!r}")
    return tuple(range(lo, hi + 1))


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="TOML configuration file (defaults built in)")
    p.add_argument("--seed", type=int, default=0, help="master random seed")
    p.add_argument("--out", type=Path, help=f"output directory (default: ${OUT_ENV} or ./{DEFAULT_OUT})")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="vapors", description="Plate-clearing simulation, training and planning.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sim-collect", parents=[common], help="roll out baseline policies and save episode logs")
    p.add_argument("--policy", choices=("random", "acquire", "heuristic"), default="random")
    p.add_argument("--episodes", type=int, default=5)
    p.add_argument("--n-items", type=int, default=15)
    p.add_argument("--budget", type=int, default=8)
    p.add_argument("--spread", choices=[s.value for s in Spread], default=Spread.HALF_SPREAD.value)

    sub.add_parser("train", parents=[common], help="train the latent dynamics model")

    p = sub.add_parser("plan", parents=[common], help="choose the next primitive for an observation history")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--obs", type=Path, nargs="+", required=True, help="mask images (PGM or PBM), oldest first")
    p.add_argument(
        "--prims", nargs="*", default=[],
        help="primitives executed between the observations (Acquire/Rearrange)",
    )

    p = sub.add_parser("eval", parents=[common], help="run the plate-clearance experiment")
    p.add_argument("--policy", action="append", choices=POLICIES, help="repeatable; default: all")
    p.add_argument("--seeds", type=parse_seed_range, default=tuple(range(20)), help="A..B inclusive")
    p.add_argument("--ckpt", type=Path, help="model checkpoint (required for the vapors policy)")
    p.add_argument("--preset", choices=sorted(PRESETS), default="beans")
    p.add_argument("--spread", choices=[s.value for s in Spread], default=Spread.HALF_SPREAD.value)

    p = sub.add_parser("label", parents=[common], help="background-subtraction mask from two grayscale captures")
    p.add_argument("--empty", type=Path, required=True)
    p.add_argument("--current", type=Path, required=True)
    p.add_argument("--thresh", type=float, default=20.0)
    p.add_argument("--mask-name", default="mask.pbm")
    return parser


def _out_dir(args) -> Path:
    if args.out is not None:
        return args.out
    return Path(os.environ.get(OUT_ENV) or DEFAULT_OUT)


def _read_mask(path: Path) -> np.ndarray:
    if path.suffix.lower() == ".pbm":
        return read_pbm(path)
    return as_mask(read_pgm(path) > 0)


def cmd_sim_collect(args, config) -> int:
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    sim = PlateSim(config.plate, config.render, budget=args.budget)
    policy_cfg = dataclasses.replace(
        config.policy, horizon=min(config.policy.horizon, args.budget), budget=args.budget
    )
    rng = np.random.default_rng(args.seed)
    for i in range(args.episodes):
        ep_seed = args.seed * 100_003 + i
        if args.policy == "random":
            ep = run_random_episode(sim, args.budget, ep_seed, rng, args.n_items, args.spread, config.perception)
        elif args.policy == "acquire":
            ep = run_acquire_only_episode(sim, policy_cfg, ep_seed, args.n_items, args.spread, config.perception)
        else:
            ep = run_heuristic_episode(sim, policy_cfg, ep_seed, args.n_items, args.spread, config.perception)
        ep.save(out / f"{args.policy}_ep{i:03d}.jsonl")
    print(f"wrote {args.episodes} episode logs to {out}")
    return 0


def cmd_train(args, config) -> int:
    from .trainer import train

    out = _out_dir(args)
    result = train(config, args.seed, out)
    print(f"metrics: {result.metrics_path}")
    print(f"checkpoint: {result.checkpoint}")
    return 0


def cmd_plan(args, config) -> int:
    if not args.ckpt.is_file():
        raise FileNotFoundError(f"checkpoint not found: {args.ckpt}")
    if len(args.prims) != len(args.obs) - 1:
        raise UsageError(f"need {len(args.obs) - 1} --prims for {len(args.obs)} observations")
    try:
        kinds = [PrimitiveKind.from_label(p) for p in args.prims]
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    params, _ = load_checkpoint(args.ckpt, config.model)
    obs = [_read_mask(p).astype(np.float32) for p in args.obs]
    prims = [one_hot(k).astype(np.float32) for k in kinds]
    result = plan(obs, prims, LatentDynamics(params), config.policy)
    payload = {
        "chosen": result.chosen.label,
        "best_sequence": [k.label for k in result.best_sequence],
        "predicted_return": result.predicted_return,
        "candidates": {"-".join(k.label for k in s): r for s, r in result.all_candidates.items()},
    }
    text = json.dumps(payload, indent=2, sort_keys=True)
    print(text)
    if args.out is not None or os.environ.get(OUT_ENV):
        out = _out_dir(args)
        out.mkdir(parents=True, exist_ok=True)
        (out / "plan.json").write_text(text + "\n")
    return 0


def cmd_eval(args, config) -> int:
    policies = tuple(dict.fromkeys(args.policy)) if args.policy else POLICIES
    exp = ExperimentConfig(
        preset=args.preset,
        seeds=args.seeds,
        policies=policies,
        spread=args.spread,
        alpha=config.plate.alpha,
        out_dir=str(_out_dir(args)),
        checkpoint=None if args.ckpt is None else str(args.ckpt),
        horizon=config.policy.horizon,
        heuristic_threshold=config.policy.heuristic_threshold,
    )
    result = run_experiment(exp, config)
    for name, c in result.curves.items():
        print(f"{name:10s} final cumulative pickup {c.mean[-1]:.3f} +/- {c.stderr[-1]:.3f} (n={c.n})")
    return 0


def cmd_label(args, config) -> int:
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    mask = label_tool(args.empty, args.current, out / args.mask_name, args.thresh)
    print(f"wrote {out / args.mask_name} ({int(mask.sum())} foreground pixels)")
    return 0


COMMANDS = {
    "sim-collect": cmd_sim_collect,
    "train": cmd_train,
    "plan": cmd_plan,
    "eval": cmd_eval,
    "label": cmd_label,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = load_config(args.config)
        return COMMANDS[args.command](args, config)
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"vapors: error: {exc}", file=sys.stderr)
        return 2
    except (UsageError, ConfigError, CheckpointError, GridFormatError) as exc:
        print(f"vapors: error: {exc}", file=sys.stderr)
        return 2
    except TrainingError as exc:
        print(f"vapors: training failed: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"vapors: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level guard
        print(f"vapors: runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
