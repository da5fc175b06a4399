"""Episode logs and their JSON-lines serialization.

A log file holds one header line (``"type": "episode"``) followed by one
``"type": "transition"`` line per executed primitive.  Masks are stored as
row-major run-length encodings; floats use ``repr`` round-tripping so a
reloaded log reproduces every stored number bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

import numpy as np

from .grids import rle_decode, rle_encode
from .platesim import LowLevelAction, PrimitiveKind, TransitionRecord, reward_from_terms


@dataclass
class EpisodeLog:
    policy: str
    seed: int
    spread: str
    alpha: float
    initial_count: int
    initial_coverage: float
    budget: int
    initial_obs: np.ndarray | None = None
    transitions: list[TransitionRecord] = field(default_factory=list)
    cleared: bool = False

    def __len__(self) -> int:
        return len(self.transitions)

    @property
    def total_pickup(self) -> int:
        return sum(t.pickup_count for t in self.transitions)

    def cumulative_pickup_fraction(self, steps: int | None = None) -> np.ndarray:
        """Cumulative fraction of the initial items acquired after each step.

        Entry 0 is the initial state; an episode that ended early keeps its
        final value for the remaining steps.
        """
        steps = self.budget if steps is None else steps
        out = np.zeros(steps + 1)
        n0 = self.initial_count
        running = 0
        for k in range(1, steps + 1):
            if k <= len(self.transitions):
                running += self.transitions[k - 1].pickup_count
            out[k] = running / n0 if n0 > 0 else 0.0
        return out

    def observations(self) -> list[np.ndarray]:
        if self.transitions:
            return [self.transitions[0].obs_before] + [t.obs_after for t in self.transitions]
        return [] if self.initial_obs is None else [self.initial_obs]

    def recompute_reward(self, t: TransitionRecord) -> float:
        return reward_from_terms(
            t.pickup_count,
            t.coverage_before,
            t.coverage_after,
            self.alpha,
            self.initial_count,
            self.initial_coverage,
        )

    # -- serialization -------------------------------------------------------

    def header(self) -> dict[str, Any]:
        return {
            "type": "episode",
            "policy": self.policy,
            "seed": self.seed,
            "spread": self.spread,
            "alpha": self.alpha,
            "initial_count": self.initial_count,
            "initial_coverage": self.initial_coverage,
            "budget": self.budget,
            "n_transitions": len(self.transitions),
            "cleared": self.cleared,
            "initial_obs": None if self.initial_obs is None else rle_encode(self.initial_obs),
        }

    def lines(self) -> Iterator[str]:
        yield json.dumps(self.header(), sort_keys=True)
        for i, t in enumerate(self.transitions):
            yield json.dumps(transition_to_dict(t, i), sort_keys=True)

    def to_jsonl(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @classmethod
    def from_jsonl(cls, text: str) -> "EpisodeLog":
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        if not rows or rows[0].get("type") != "episode":
            raise ValueError("episode log must start with an episode header")
        h = rows[0]
        log = cls(
            policy=h["policy"],
            seed=int(h["seed"]),
            spread=h["spread"],
            alpha=float(h["alpha"]),
            initial_count=int(h["initial_count"]),
            initial_coverage=float(h["initial_coverage"]),
            budget=int(h["budget"]),
            initial_obs=None if h.get("initial_obs") is None else rle_decode(h["initial_obs"]),
            cleared=bool(h["cleared"]),
        )
        log.transitions = [transition_from_dict(r) for r in rows[1:]]
        if len(log.transitions) != h["n_transitions"]:
            raise ValueError("transition count does not match the header")
        return log

    @classmethod
    def load(cls, path: str | Path) -> "EpisodeLog":
        return cls.from_jsonl(Path(path).read_text(encoding="utf-8"))


def transition_to_dict(t: TransitionRecord, index: int) -> dict[str, Any]:
    return {
        "type": "transition",
        "index": index,
        "primitive": t.primitive.label,
        "action": t.action.to_dict(),
        "reward": t.reward,
        "pickup_count": t.pickup_count,
        "coverage_before": t.coverage_before,
        "coverage_after": t.coverage_after,
        "misexecuted": t.misexecuted,
        "obs_before": rle_encode(t.obs_before),
        "obs_after": rle_encode(t.obs_after),
    }


def transition_from_dict(d: dict[str, Any]) -> TransitionRecord:
    return TransitionRecord(
        obs_before=rle_decode(d["obs_before"]),
        primitive=PrimitiveKind.from_label(d["primitive"]),
        action=LowLevelAction.from_dict(d["action"]),
        reward=float(d["reward"]),
        obs_after=rle_decode(d["obs_after"]),
        pickup_count=int(d["pickup_count"]),
        coverage_before=float(d["coverage_before"]),
        coverage_after=float(d["coverage_after"]),
        misexecuted=bool(d["misexecuted"]),
    )
