"""High-level primitive selection and the closed perception-action loops.

``plan`` scores every primitive sequence of the receding horizon by the sum
of rewards the latent model decodes along its imagined rollout and returns
the best one.  The episode runners couple a primitive chooser with mask
perception and the plate simulator; the two baselines replace the planner by
fixed rules.
"""

from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np

from .config import PerceptionConfig, PolicyConfig
from .episodes import EpisodeLog
from .perception import instantiate_action
from .platesim import PlateSim, PrimitiveKind, Spread, one_hot


class RewardImaginer(Protocol):
    """Anything that can score primitive sequences from an observation history."""

    n_primitives: int

    def imagine_rewards(
        self,
        history_obs: Sequence[np.ndarray],
        history_prims: Sequence[np.ndarray],
        sequences: Sequence[Sequence[int]],
    ) -> np.ndarray: ...


@dataclass(frozen=True)
class PlanResult:
    chosen: PrimitiveKind
    best_sequence: tuple[PrimitiveKind, ...]
    predicted_return: float
    all_candidates: dict[tuple[PrimitiveKind, ...], float]


TIE_RTOL = 1e-9


def candidate_sequences(n_primitives: int, horizon: int) -> list[tuple[int, ...]]:
    """All ``n_primitives ** horizon`` sequences in lexicographic index order."""
    return list(itertools.product(range(n_primitives), repeat=horizon))


def plan(
    history_obs: Sequence[np.ndarray],
    history_prims: Sequence[np.ndarray],
    model: RewardImaginer,
    cfg: PolicyConfig = PolicyConfig(),
) -> PlanResult:
    """Exhaustive receding-horizon search over primitive sequences.

    Ties go to the lexicographically smallest sequence.  Returns within a
    relative ``TIE_RTOL`` of the maximum count as tied, so the choice does
    not hinge on summation round-off (and is invariant to positive reward
    scaling).
    """
    if len(history_obs) == 0:
        raise ValueError("planning needs at least one observation")
    if len(history_prims) != len(history_obs) - 1:
        raise ValueError("history needs exactly one primitive between consecutive observations")
    seqs = candidate_sequences(model.n_primitives, cfg.horizon)
    rewards = np.asarray(model.imagine_rewards(history_obs, history_prims, seqs), dtype=np.float64)
    if rewards.shape != (len(seqs), cfg.horizon):
        raise ValueError(f"reward model returned shape {rewards.shape}, expected {(len(seqs), cfg.horizon)}")
    returns = rewards.sum(axis=1)
    top = returns.max()
    best = int(np.flatnonzero(returns >= top - TIE_RTOL * abs(top))[0])
    as_kinds = [tuple(PrimitiveKind(k) for k in s) for s in seqs]
    return PlanResult(
        chosen=as_kinds[best][0],
        best_sequence=as_kinds[best],
        predicted_return=float(returns[best]),
        all_candidates={s: float(r) for s, r in zip(as_kinds, returns)},
    )


# ---------------------------------------------------------------------------
# Episode loops

# chooser(history_obs, history_prims) -> primitive to execute next
Chooser = Callable[[list[np.ndarray], list[np.ndarray]], PrimitiveKind]


def run_episode(
    sim: PlateSim,
    chooser: Chooser,
    policy_name: str,
    seed: int,
    budget: int,
    n_items: int = 15,
    spread: Spread | str = Spread.HALF_SPREAD,
    perception: PerceptionConfig = PerceptionConfig(),
) -> EpisodeLog:
    """Observe, choose, instantiate and execute until the budget runs out or the plate is clear."""
    spread = Spread(spread)
    state = dataclasses.replace(sim.reset(seed, n_items, spread), budget=budget)
    mask = sim.render_mask(state)
    log = EpisodeLog(
        policy=policy_name,
        seed=seed,
        spread=spread.value,
        alpha=sim.cfg.alpha,
        initial_count=state.initial_count,
        initial_coverage=state.initial_coverage,
        budget=budget,
        initial_obs=mask,
    )
    history_obs = [mask.astype(np.float32)]
    history_prims: list[np.ndarray] = []
    for _ in range(budget):
        if not mask.any():
            break
        kind = chooser(history_obs, history_prims)
        action = instantiate_action(
            mask,
            kind,
            sim.calibration,
            sigma=perception.blur_sigma,
            crop_size=perception.crop_size,
            acquire_pitch=sim.cfg.acquire_pitch,
        )
        state, _, record = sim.step(state, action)
        log.transitions.append(record)
        mask = record.obs_after
        history_obs.append(mask.astype(np.float32))
        history_prims.append(one_hot(kind).astype(np.float32))
    log.cleared = not mask.any()
    return log


def planner_chooser(
    model: RewardImaginer,
    cfg: PolicyConfig,
    explore: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Chooser:
    """Planner-backed chooser; with ``explore > 0`` a random primitive replaces the plan that often."""

    def choose(history_obs, history_prims):
        if explore > 0.0 and rng is not None and rng.random() < explore:
            return PrimitiveKind(int(rng.integers(model.n_primitives)))
        return plan(history_obs, history_prims, model, cfg).chosen

    return choose


def run_vapors_episode(
    sim: PlateSim,
    model: RewardImaginer,
    cfg: PolicyConfig,
    seed: int,
    n_items: int = 15,
    spread: Spread | str = Spread.HALF_SPREAD,
    perception: PerceptionConfig = PerceptionConfig(),
) -> EpisodeLog:
    return run_episode(
        sim, planner_chooser(model, cfg), "vapors", seed, cfg.budget, n_items, spread, perception
    )


def run_acquire_only_episode(
    sim: PlateSim,
    cfg: PolicyConfig,
    seed: int,
    n_items: int = 15,
    spread: Spread | str = Spread.HALF_SPREAD,
    perception: PerceptionConfig = PerceptionConfig(),
) -> EpisodeLog:
    return run_episode(
        sim, lambda obs, prims: PrimitiveKind.ACQUIRE, "acquire", seed, cfg.budget, n_items, spread, perception
    )


def mask_coverage_fraction(mask: np.ndarray, plate: np.ndarray) -> float:
    """Set mask pixels on the plate divided by the number of plate pixels."""
    plate = np.asarray(plate, dtype=bool)
    total = int(plate.sum())
    return float(np.count_nonzero(np.asarray(mask)[plate])) / total if total else 0.0


def heuristic_choice(fraction: float, threshold: float) -> PrimitiveKind:
    return PrimitiveKind.REARRANGE if fraction > threshold else PrimitiveKind.ACQUIRE


def run_heuristic_episode(
    sim: PlateSim,
    cfg: PolicyConfig,
    seed: int,
    n_items: int = 15,
    spread: Spread | str = Spread.HALF_SPREAD,
    perception: PerceptionConfig = PerceptionConfig(),
) -> EpisodeLog:
    plate = sim.plate_pixels()

    def choose(history_obs, history_prims):
        return heuristic_choice(mask_coverage_fraction(history_obs[-1], plate), cfg.heuristic_threshold)

    return run_episode(sim, choose, "heuristic", seed, cfg.budget, n_items, spread, perception)


def run_random_episode(
    sim: PlateSim,
    budget: int,
    seed: int,
    rng: np.random.Generator,
    n_items: int = 15,
    spread: Spread | str = Spread.HALF_SPREAD,
    perception: PerceptionConfig = PerceptionConfig(),
) -> EpisodeLog:
    """Uniformly random primitives; used to warm up the replay store."""

    def choose(history_obs, history_prims):
        return PrimitiveKind(int(rng.integers(len(PrimitiveKind))))

    return run_episode(sim, choose, "random", seed, budget, n_items, spread, perception)
