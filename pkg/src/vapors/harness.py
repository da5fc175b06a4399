"""Plate-clearance experiments and the self-supervised labeling tool.

``run_experiment`` plays every policy on the same seeded initial plates and
writes one JSON-lines log per (policy, seed), a per-step clearance curve
file and a summary table.  The curve file holds nothing that cannot be
recomputed from the logs.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import Config, ConfigError, PolicyConfig
from .dynamics.checkpoint import load_checkpoint
from .dynamics.model import LatentDynamics
from .episodes import EpisodeLog
from .grids import read_pgm, write_pbm
from .perception import background_subtract_label
from .planner import run_acquire_only_episode, run_heuristic_episode, run_vapors_episode
from .platesim import PlateSim, Spread

POLICIES = ("vapors", "acquire", "heuristic")

# Task presets: item count and action budget per episode.
PRESETS = {
    "beans": {"n_items": 15, "budget": 8},
    # Stand-in for a noodle portion: many small granular items.
    "spaghetti": {"n_items": 40, "budget": 10},
}


@dataclass(frozen=True)
class ExperimentConfig:
    preset: str = "beans"
    seeds: tuple[int, ...] = tuple(range(20))
    policies: tuple[str, ...] = POLICIES
    spread: str = Spread.HALF_SPREAD.value
    alpha: float = 0.66
    out_dir: str = "results"
    checkpoint: str | None = None
    horizon: int = 4
    heuristic_threshold: float = 0.25

    def __post_init__(self) -> None:
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if not self.seeds:
            raise ConfigError("seed range must be nonempty")
        unknown = set(self.policies) - set(POLICIES)
        if unknown or not self.policies:
            raise ConfigError(f"policies must be a nonempty subset of {POLICIES}, got {self.policies}")
        Spread(self.spread)

    @property
    def n_items(self) -> int:
        return PRESETS[self.preset]["n_items"]

    @property
    def budget(self) -> int:
        return PRESETS[self.preset]["budget"]

    def policy_config(self) -> PolicyConfig:
        cfg = PolicyConfig(
            horizon=min(self.horizon, self.budget),
            budget=self.budget,
            heuristic_threshold=self.heuristic_threshold,
        )
        cfg.validate()
        return cfg


@dataclass
class ClearanceCurve:
    """Mean and standard error of cumulative pickup fraction at steps ``0..budget``."""

    policy: str
    mean: np.ndarray
    stderr: np.ndarray
    n: int


@dataclass
class ExperimentResult:
    curves: dict[str, ClearanceCurve]
    logs: dict[str, list[EpisodeLog]]
    files: list[Path] = field(default_factory=list)


def clearance_curve(policy: str, logs: Sequence[EpisodeLog], steps: int) -> ClearanceCurve:
    """Across-seed mean and ``std(ddof=1) / sqrt(n)`` of the cumulative pickup fraction.

    A single seed has no spread estimate; its standard error is reported as 0.
    """
    data = np.stack([ep.cumulative_pickup_fraction(steps) for ep in logs])
    n = len(logs)
    stderr = data.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(steps + 1)
    return ClearanceCurve(policy, data.mean(axis=0), stderr, n)


def _write_curves(path: Path, curves: dict[str, ClearanceCurve]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy", "step", "mean", "stderr"])
        for name, c in curves.items():
            for step, (m, s) in enumerate(zip(c.mean, c.stderr)):
                w.writerow([name, step, repr(float(m)), repr(float(s))])


def _write_summary(path: Path, curves: dict[str, ClearanceCurve], logs: dict[str, list[EpisodeLog]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy", "n_seeds", "final_mean", "final_stderr", "mean_items_acquired", "cleared_fraction"])
        for name, c in curves.items():
            eps = logs[name]
            w.writerow([
                name,
                c.n,
                repr(float(c.mean[-1])),
                repr(float(c.stderr[-1])),
                repr(float(np.mean([e.total_pickup for e in eps]))),
                repr(float(np.mean([e.cleared for e in eps]))),
            ])


def run_experiment(exp: ExperimentConfig, config: Config | None = None) -> ExperimentResult:
    """Play every requested policy over the seed range and write the results.

    The VAPORS checkpoint is loaded (and validated) before any episode runs.
    """
    config = (config or Config()).validate()
    plate = dataclasses.replace(config.plate, alpha=exp.alpha)
    policy_cfg = exp.policy_config()

    model = None
    if "vapors" in exp.policies:
        if exp.checkpoint is None:
            raise FileNotFoundError("the vapors policy needs a checkpoint")
        ckpt = Path(exp.checkpoint)
        if not ckpt.is_file():
            raise FileNotFoundError(f"checkpoint not found: {ckpt}")
        params, _ = load_checkpoint(ckpt, config.model)
        model = LatentDynamics(params)

    out = Path(exp.out_dir)
    log_dir = out / "logs"
    log_dir.mkdir(parents=True, exist_ok=True)
    sim = PlateSim(plate, config.render, budget=exp.budget)

    logs: dict[str, list[EpisodeLog]] = {}
    files: list[Path] = []
    for policy in exp.policies:
        logs[policy] = []
        for seed in exp.seeds:
            if policy == "vapors":
                ep = run_vapors_episode(sim, model, policy_cfg, seed, exp.n_items, exp.spread, config.perception)
            elif policy == "acquire":
                ep = run_acquire_only_episode(sim, policy_cfg, seed, exp.n_items, exp.spread, config.perception)
            else:
                ep = run_heuristic_episode(sim, policy_cfg, seed, exp.n_items, exp.spread, config.perception)
            path = log_dir / f"{policy}_seed{seed}.jsonl"
            ep.save(path)
            files.append(path)
            logs[policy].append(ep)

    curves = {p: clearance_curve(p, logs[p], exp.budget) for p in exp.policies}
    _write_curves(out / "curves.csv", curves)
    _write_summary(out / "summary.csv", curves, logs)
    files += [out / "curves.csv", out / "summary.csv"]
    return ExperimentResult(curves, logs, files)


def curves_from_logs(log_dir: str | Path, budget: int) -> dict[str, ClearanceCurve]:
    """Rebuild clearance curves from saved episode logs alone."""
    grouped: dict[str, list[EpisodeLog]] = {}
    for path in sorted(Path(log_dir).glob("*.jsonl")):
        ep = EpisodeLog.load(path)
        grouped.setdefault(ep.policy, []).append(ep)
    return {p: clearance_curve(p, eps, budget) for p, eps in grouped.items()}


def label_tool(empty: str | Path, current: str | Path, out: str | Path, thresh: float = 20.0) -> np.ndarray:
    """Background-subtract two grayscale PGM captures and write the mask as PBM."""
    a = read_pgm(empty)
    b = read_pgm(current)
    if a.shape != b.shape:
        raise ValueError(f"image sizes differ: {a.shape[::-1]} vs {b.shape[::-1]}")
    mask = background_subtract_label(a, b, thresh)
    write_pbm(out, mask)
    return mask
