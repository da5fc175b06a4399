"""Replay-driven training of the latent dynamics model.

The loop alternates gradient updates on windows sampled from a replay store
with periodic collection of fresh episodes by the (exploring) planner.
Everything is driven by one integer seed, so two runs with the same config
write byte-identical metrics and checkpoints.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import Config
from .dynamics.checkpoint import save_checkpoint
from .dynamics.model import (
    LatentDynamics,
    ModelParams,
    TrainBatch,
    TrainingError,
    decode_reward,
    loss_and_grad,
    posterior_encode,
)
from .episodes import EpisodeLog
from .planner import planner_chooser, run_episode, run_random_episode
from .platesim import PlateSim, PrimitiveKind, Spread, one_hot

log = logging.getLogger(__name__)

METRIC_FIELDS = ("step", "recon", "kl", "reward_mse", "total")


# ---------------------------------------------------------------------------
# Replay


@dataclass
class _EpisodeArrays:
    obs: np.ndarray  # (T + 1, G, G)
    actions: np.ndarray  # (T + 1, K); row 0 is zero
    rewards: np.ndarray  # (T + 1,); entry 0 unused


def episode_arrays(episode: EpisodeLog, min_obs: int = 0, n_primitives: int = len(PrimitiveKind)) -> _EpisodeArrays:
    """Stack an episode into model inputs.

    Episodes that end early (plate cleared) are extended with absorbing
    steps: the empty mask persists, the primitive repeats Acquire and the
    reward is zero.
    """
    obs = [np.asarray(o, dtype=np.float32) for o in episode.observations()]
    acts = [np.zeros(n_primitives, np.float32)]
    rewards = [0.0]
    for t in episode.transitions:
        acts.append(one_hot(t.primitive, n_primitives).astype(np.float32))
        rewards.append(t.reward)
    while len(obs) < min_obs:
        obs.append(np.zeros_like(obs[-1]))
        acts.append(one_hot(PrimitiveKind.ACQUIRE, n_primitives).astype(np.float32))
        rewards.append(0.0)
    return _EpisodeArrays(np.stack(obs), np.stack(acts), np.asarray(rewards, dtype=np.float32))


def plate_symmetry(grids: np.ndarray, code: int) -> np.ndarray:
    """Apply one of the eight symmetries of the square about pixel ``(G/2, G/2)``.

    Masks are centered on pixel ``G // 2`` (not on the grid's geometric
    center), so a reflection maps index ``i`` to ``G - i`` modulo ``G``.
    Row/column 0 lies outside the plate and stays empty under every code.
    Bits of ``code``: 1 = mirror columns, 2 = mirror rows, 4 = transpose.
    """
    out = grids
    if code & 1:
        out = np.roll(np.flip(out, axis=-1), 1, axis=-1)
    if code & 2:
        out = np.roll(np.flip(out, axis=-2), 1, axis=-2)
    if code & 4:
        out = np.swapaxes(out, -1, -2)
    return out


class ReplayStore:
    """Append-only episode storage with window sampling inside episodes.

    With ``augment`` each sampled window is mapped through a random plate
    symmetry; rewards depend only on item counts and hull areas, which the
    symmetries preserve.
    """

    def __init__(self, seq_len: int, n_primitives: int = len(PrimitiveKind), augment: bool = False):
        self.seq_len = seq_len
        self.augment = augment
        self.n_primitives = n_primitives
        self.episodes: list[EpisodeLog] = []
        self._arrays: list[_EpisodeArrays] = []

    def __len__(self) -> int:
        return len(self.episodes)

    def append(self, episode: EpisodeLog) -> None:
        self.episodes.append(episode)
        self._arrays.append(episode_arrays(episode, self.seq_len, self.n_primitives))

    def windows(self) -> list[tuple[int, int]]:
        """Every valid ``(episode, start)`` pair."""
        out = []
        for e, arr in enumerate(self._arrays):
            out.extend((e, s) for s in range(len(arr.obs) - self.seq_len + 1))
        return out

    def sample_windows(self, rng: np.random.Generator, batch_size: int) -> list[tuple[int, int]]:
        """Uniform over episodes, then uniform over start offsets within the episode."""
        if not self.episodes:
            raise ValueError("cannot sample from an empty replay store")
        out = []
        for _ in range(batch_size):
            e = int(rng.integers(len(self._arrays)))
            n_starts = len(self._arrays[e].obs) - self.seq_len + 1
            out.append((e, int(rng.integers(n_starts))))
        return out

    def make_batch(self, windows, noise: np.ndarray, batch_id: int = 0, symmetries=None) -> TrainBatch:
        sl = slice
        L = self.seq_len
        obs = np.stack([self._arrays[e].obs[sl(s, s + L)] for e, s in windows])
        if symmetries is not None:
            obs = np.stack([plate_symmetry(o, int(c)) for o, c in zip(obs, symmetries)])
        acts = np.stack([self._arrays[e].actions[sl(s, s + L)] for e, s in windows]).copy()
        rew = np.stack([self._arrays[e].rewards[sl(s, s + L)] for e, s in windows])
        # The first step of a window has no preceding primitive in view.
        acts[:, 0] = 0.0
        return TrainBatch(obs, acts, rew, noise.astype(np.float32), batch_id)

    def sample(self, rng: np.random.Generator, batch_size: int, latent_dim: int, batch_id: int = 0) -> TrainBatch:
        windows = self.sample_windows(rng, batch_size)
        noise = rng.standard_normal((batch_size, self.seq_len, latent_dim))
        symmetries = rng.integers(8, size=batch_size) if self.augment else None
        return self.make_batch(windows, noise, batch_id, symmetries)


# ---------------------------------------------------------------------------
# Optimizer


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    lr: float = 1e-3
    eps: float = 1e-4
    clip_norm: float = 1000.0
    beta1: float = 0.9
    beta2: float = 0.999
    skipped: int = 0
    last_grad_norm: float = 0.0
    last_skipped: bool = False

    @classmethod
    def for_params(cls, params: ModelParams, **hyper) -> "OptimizerState":
        return cls(m=params.zeros_like(), v=params.zeros_like(), **hyper)


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))


def clip_by_global_norm(grads: dict[str, np.ndarray], clip_norm: float) -> tuple[dict[str, np.ndarray], float]:
    norm = global_norm(grads)
    if norm > clip_norm:
        scale = clip_norm / norm
        return {k: g * g.dtype.type(scale) for k, g in grads.items()}, norm
    return grads, norm


def adam_step(
    params: ModelParams, grads: dict[str, np.ndarray], opt: OptimizerState
) -> tuple[ModelParams, OptimizerState]:
    """One clipped Adam update with bias correction.

    Non-finite gradients leave parameters and moments untouched; the returned
    state records the skip.
    """
    if set(grads) != set(params.tensors):
        raise ValueError("gradient names do not match parameter names")
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {params[name].shape}")
    norm = global_norm(grads)
    if not math.isfinite(norm):
        log.warning("non-finite gradient at optimizer step %d; update skipped", opt.step)
        return params, dataclasses.replace(
            opt, skipped=opt.skipped + 1, last_grad_norm=norm, last_skipped=True
        )
    grads, _ = clip_by_global_norm(grads, opt.clip_norm)

    t = opt.step + 1
    b1, b2 = opt.beta1, opt.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_p, new_m, new_v = {}, {}, {}
    for name, p in params.tensors.items():
        g = grads[name].astype(np.float64)
        m = b1 * opt.m[name] + (1.0 - b1) * g
        v = b2 * opt.v[name] + (1.0 - b2) * g * g
        update = opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
        new_p[name] = (p - update).astype(p.dtype)
        new_m[name] = m.astype(opt.m[name].dtype)
        new_v[name] = v.astype(opt.v[name].dtype)
    return ModelParams(params.cfg, new_p), dataclasses.replace(
        opt, m=new_m, v=new_v, step=t, last_grad_norm=norm, last_skipped=False
    )


# ---------------------------------------------------------------------------
# Training loop


@dataclass
class TrainResult:
    params: ModelParams
    metrics_path: Path
    checkpoint: Path
    checkpoints: list[Path] = field(default_factory=list)
    replay: ReplayStore | None = None
    episodes_collected: int = 0
    metrics: list[dict[str, float]] = field(default_factory=list)


def exploration_rate(index: int, n_collections: int, start: float, end: float) -> float:
    """Linear decay from ``start`` (first collection) to ``end`` (last)."""
    if n_collections <= 1:
        return start
    return start + (end - start) * index / (n_collections - 1)


def n_collections(updates: int, collect_every: int) -> int:
    """Collections happen before updates ``0, k, 2k, ...``."""
    return 0 if collect_every <= 0 else -(-updates // collect_every)


def _write_metrics(path: Path, rows: list[dict[str, float]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_FIELDS)
        for r in rows:
            writer.writerow([r["step"]] + [repr(float(r[k])) for k in METRIC_FIELDS[1:]])


def train(config: Config, seed: int, out: str | Path, params: ModelParams | None = None) -> TrainResult:
    """Run the interleaved collect/update schedule and write its artifacts to ``out``.

    Writes ``metrics.csv`` (one row per update) and ``ckpt_<step>.bin`` every
    ``checkpoint_every`` updates plus at the end; ``ckpt_0.bin`` holds the
    initialization so a good checkpoint always exists.
    """
    config.validate()
    sched = config.train
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)

    seeds = np.random.SeedSequence(seed)
    init_seq, replay_seq, collect_seq = seeds.spawn(3)
    params = params or ModelParams.init(config.model, int(init_seq.generate_state(1)[0]))
    replay_rng = np.random.default_rng(replay_seq)
    collect_rng = np.random.default_rng(collect_seq)

    sim = PlateSim(config.plate, config.render, budget=sched.episode_budget)
    replay = ReplayStore(sched.seq_len, config.model.n_primitives, sched.augment)
    spreads = list(Spread)

    def episode_setup():
        return int(collect_rng.integers(2**31)), spreads[int(collect_rng.integers(len(spreads)))]

    for _ in range(sched.seed_episodes):
        ep_seed, spread = episode_setup()
        replay.append(
            run_random_episode(
                sim, sched.episode_budget, ep_seed, collect_rng, sched.n_items, spread, config.perception
            )
        )

    opt = OptimizerState.for_params(
        params,
        lr=sched.lr,
        eps=sched.eps,
        clip_norm=sched.clip_norm,
        beta1=sched.beta1,
        beta2=sched.beta2,
    )
    metrics_path = out / "metrics.csv"
    policy_cfg = dataclasses.replace(config.policy, budget=sched.episode_budget)
    policy_cfg = dataclasses.replace(policy_cfg, horizon=min(policy_cfg.horizon, policy_cfg.budget))
    total_collections = n_collections(sched.updates, sched.collect_every)
    checkpoints = [save_checkpoint(out / "ckpt_0.bin", params, 0)]
    rows: list[dict[str, float]] = []
    collected = 0

    try:
        for step in range(sched.updates):
            if sched.collect_every > 0 and step % sched.collect_every == 0:
                eps = exploration_rate(collected, total_collections, sched.explore_start, sched.explore_end)
                chooser = planner_chooser(LatentDynamics(params), policy_cfg, eps, collect_rng)
                ep_seed, spread = episode_setup()
                replay.append(
                    run_episode(
                        sim, chooser, "vapors-train", ep_seed, sched.episode_budget,
                        sched.n_items, spread, config.perception,
                    )
                )
                collected += 1
            batch = replay.sample(replay_rng, sched.batch_size, config.model.latent_dim, batch_id=step + 1)
            total, (recon, kl, rew), grads = loss_and_grad(batch, params, config.loss)
            params, opt = adam_step(params, grads, opt)
            if not params.all_finite():
                raise TrainingError("parameters became non-finite", step + 1)
            rows.append({"step": step + 1, "recon": recon, "kl": kl, "reward_mse": rew, "total": total})
            done = step + 1
            if (sched.checkpoint_every > 0 and done % sched.checkpoint_every == 0) or done == sched.updates:
                checkpoints.append(save_checkpoint(out / f"ckpt_{done}.bin", params, done))
    except TrainingError:
        _write_metrics(metrics_path, rows)
        log.error("training aborted; last good checkpoint is %s", checkpoints[-1])
        raise
    _write_metrics(metrics_path, rows)
    return TrainResult(
        params=params,
        metrics_path=metrics_path,
        checkpoint=checkpoints[-1],
        checkpoints=checkpoints,
        replay=replay,
        episodes_collected=collected,
        metrics=rows,
    )


def read_metrics(path: str | Path) -> list[dict[str, float]]:
    with open(path, newline="") as fh:
        return [
            {k: (int(v) if k == "step" else float(v)) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]


def reward_predictions(params: ModelParams, episodes: list[EpisodeLog]) -> tuple[np.ndarray, np.ndarray]:
    """Filtered reward-head means and logged rewards for every transition.

    Each episode is posterior-encoded; the reward decoded from the latent at
    step ``t >= 1`` is paired with the reward logged for transition ``t``.
    """
    predicted, actual = [], []
    for ep in episodes:
        if not ep.transitions:
            continue
        arr = episode_arrays(ep, n_primitives=params.cfg.n_primitives)
        states = posterior_encode(arr.obs, arr.actions[1:], params)
        for t in range(1, len(arr.obs)):
            predicted.append(float(decode_reward(states[t], params)))
            actual.append(float(arr.rewards[t]))
    return np.asarray(predicted), np.asarray(actual)
