"""Seeded 2D granular plate simulator.

Items are points with a circular footprint on a disk-shaped plate.  Two
primitives act on the plate:

* ``Acquire`` removes up to ``capacity`` items lying within the acquisition
  radius of the target point, nearest first, each succeeding with
  probability ``acquire_prob``;
* ``Rearrange`` pushes every item within the capture radius of the segment
  far -> dense a fraction ``push_fraction`` of the way towards the dense
  point, with isotropic Gaussian noise, then clamps it back onto the plate.

Items do not pile up: after sampling and after every push the remaining
items settle so that centers stay ``min_separation`` apart, which keeps the
item count visible in the segmentation mask.

States are immutable values: ``step`` returns a new state and never mutates
its input, and the generator state travels inside the plate state so that
a seed plus an action sequence fully determines an episode.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, replace
from typing import Any, Optional

import numpy as np

from .config import ConfigError, PlateConfig, RenderConfig
from .geometry import hull_area
from .grids import Calibration

log = logging.getLogger(__name__)

Vec2 = tuple[float, float]
Vec3 = tuple[float, float, float]


class PrimitiveKind(enum.IntEnum):
    ACQUIRE = 0
    REARRANGE = 1

    @property
    def label(self) -> str:
        return "Acquire" if self is PrimitiveKind.ACQUIRE else "Rearrange"

    @classmethod
    def from_label(cls, label: str) -> "PrimitiveKind":
        key = label.strip().lower()
        for kind in cls:
            if kind.label.lower() == key or kind.name.lower() == key:
                return kind
        raise ValueError(f"unknown primitive {label!r}")


N_PRIMITIVES = len(PrimitiveKind)

# Separation direction for exactly coincident items (radians per pair index).
_GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


def one_hot(kind: Optional[PrimitiveKind], n: int = N_PRIMITIVES) -> np.ndarray:
    """One-hot primitive vector; ``None`` gives the zero vector."""
    vec = np.zeros(n, dtype=np.float64)
    if kind is not None:
        vec[int(kind)] = 1.0
    return vec


class Spread(str, enum.Enum):
    CLUSTERED = "clustered"
    HALF_SPREAD = "half"
    FULL_SPREAD = "full"


class EpisodeOver(RuntimeError):
    """``step`` called on a state whose action budget is exhausted."""


@dataclass(frozen=True)
class FoodItem:
    id: int
    position: Vec2
    footprint_radius: float
    acquired: bool = False


@dataclass(frozen=True)
class PlateState:
    items: tuple[FoodItem, ...]
    plate_center: Vec2
    plate_radius: float
    step_index: int
    budget: int
    rng_state: dict
    initial_count: int
    initial_coverage: float

    @property
    def remaining(self) -> tuple[FoodItem, ...]:
        return tuple(it for it in self.items if not it.acquired)

    @property
    def n_acquired(self) -> int:
        return sum(1 for it in self.items if it.acquired)


@dataclass(frozen=True)
class LowLevelAction:
    """Continuous instantiation of a primitive.

    Acquire carries ``(x_d, y_d, z_d, roll, pitch)``; Rearrange additionally
    carries the push origin ``far_point`` and is always untilted.
    """

    kind: PrimitiveKind
    dense_point: Vec3
    far_point: Optional[Vec3] = None
    roll: float = 0.0
    pitch: float = 0.0

    def __post_init__(self) -> None:
        if self.kind is PrimitiveKind.ACQUIRE and self.far_point is not None:
            raise ValueError("Acquire actions take no far point")
        if self.kind is PrimitiveKind.REARRANGE:
            if self.far_point is None:
                raise ValueError("Rearrange actions need a far point")
            if self.pitch != 0.0:
                raise ValueError("Rearrange actions are untilted (pitch 0)")
        if not 0.0 <= self.roll < 360.0:
            raise ValueError(f"roll must lie in [0, 360), got {self.roll}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.label,
            "dense_point": list(self.dense_point),
            "far_point": None if self.far_point is None else list(self.far_point),
            "roll": self.roll,
            "pitch": self.pitch,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "LowLevelAction":
        far = d.get("far_point")
        return cls(
            kind=PrimitiveKind.from_label(d["kind"]),
            dense_point=tuple(float(v) for v in d["dense_point"]),
            far_point=None if far is None else tuple(float(v) for v in far),
            roll=float(d["roll"]),
            pitch=float(d["pitch"]),
        )


@dataclass(frozen=True)
class TransitionRecord:
    obs_before: np.ndarray
    primitive: PrimitiveKind
    action: LowLevelAction
    reward: float
    obs_after: np.ndarray
    pickup_count: int
    coverage_before: float
    coverage_after: float
    misexecuted: bool = False


# ---------------------------------------------------------------------------
# Reward pieces


def compute_coverage(state: PlateState) -> float:
    """Convex-hull area (m^2) of the unacquired item positions."""
    return hull_area(it.position for it in state.items if not it.acquired)


def compute_pickup(before: PlateState, after: PlateState) -> int:
    return after.n_acquired - before.n_acquired


def reward_from_terms(
    pickup: int,
    coverage_before: float,
    coverage_after: float,
    alpha: float,
    initial_count: int,
    initial_coverage: float,
) -> float:
    """Weighted pickup gain plus coverage loss, both normalized per episode.

    The pickup gain is ``pickup / N0``; the coverage loss is the per-step
    hull-area reduction divided by the initial hull area ``C0``.  A zero
    normalizer zeroes its term.
    """
    gain = pickup / initial_count if initial_count > 0 else 0.0
    loss = (coverage_before - coverage_after) / initial_coverage if initial_coverage > 0 else 0.0
    return alpha * gain + (1.0 - alpha) * loss


def reward(before: PlateState, after: PlateState, alpha: float) -> float:
    return reward_from_terms(
        compute_pickup(before, after),
        compute_coverage(before),
        compute_coverage(after),
        alpha,
        before.initial_count,
        before.initial_coverage,
    )


# ---------------------------------------------------------------------------


def _point_segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.linalg.norm(p - a, axis=-1)
    t = np.clip(((p - a) @ ab) / denom, 0.0, 1.0)
    closest = a + t[..., None] * ab
    return np.linalg.norm(p - closest, axis=-1)


def packing_capacity(cfg: PlateConfig) -> int:
    """Hexagonal-packing bound on how many footprints fit on the plate.

    Each item occupies a disc of radius ``max(footprint, separation / 2)``.
    """
    ratio = cfg.plate_radius / max(cfg.footprint_radius, 0.5 * cfg.min_separation)
    return int(math.floor(math.pi / (2.0 * math.sqrt(3.0)) * ratio * ratio))


class PlateSim:
    """Plate environment bound to one configuration."""

    def __init__(
        self,
        plate: PlateConfig | None = None,
        render: RenderConfig | None = None,
        budget: int = 8,
    ):
        self.cfg = plate or PlateConfig()
        self.cfg.validate()
        self.render_cfg = render or RenderConfig()
        self.budget = budget
        self.calibration = Calibration.from_config(self.cfg, self.render_cfg)
        self._px_x, self._px_y = self.calibration.pixel_centers(
            self.render_cfg.width, self.render_cfg.height
        )

    # -- initial states ----------------------------------------------------

    def _sample_positions(self, rng: np.random.Generator, n: int, spread: Spread) -> np.ndarray:
        cfg = self.cfg
        limit = cfg.item_limit_radius
        cx, cy = cfg.plate_center

        def uniform_disk(radius: float, size: int) -> np.ndarray:
            r = radius * np.sqrt(rng.random(size))
            theta = 2.0 * np.pi * rng.random(size)
            return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)

        if spread is Spread.FULL_SPREAD:
            offsets = uniform_disk(limit, n)
            return offsets + np.array([cx, cy])

        if spread is Spread.HALF_SPREAD:
            radius = min(cfg.half_spread_frac * cfg.plate_radius, limit)
            center = uniform_disk(limit - radius, 1)[0]
            return uniform_disk(radius, n) + center + np.array([cx, cy])

        # Clustered: Gaussian blob, rejection-sampled onto the plate.
        std = cfg.cluster_std_frac * cfg.plate_radius
        center = uniform_disk(0.5 * limit, 1)[0]
        out = np.empty((n, 2))
        filled = 0
        while filled < n:
            cand = center + std * rng.standard_normal(2)
            if cand @ cand <= limit * limit:
                out[filled] = cand
                filled += 1
        return out + np.array([cx, cy])

    def reset(self, seed: int, n_items: int, spread: Spread | str = Spread.HALF_SPREAD) -> PlateState:
        spread = Spread(spread)
        if n_items < 0:
            raise ConfigError("n_items must be non-negative")
        cap = packing_capacity(self.cfg)
        if n_items > cap:
            raise ConfigError(f"{n_items} items exceed the plate packing capacity of {cap}")
        rng = np.random.default_rng(seed)
        pos = self._sample_positions(rng, n_items, spread) if n_items else np.zeros((0, 2))
        pos = self.settle(pos)
        items = tuple(
            FoodItem(i, (float(p[0]), float(p[1])), self.cfg.footprint_radius) for i, p in enumerate(pos)
        )
        c0 = hull_area(it.position for it in items)
        return PlateState(
            items=items,
            plate_center=tuple(self.cfg.plate_center),
            plate_radius=self.cfg.plate_radius,
            step_index=0,
            budget=self.budget,
            rng_state=rng.bit_generator.state,
            initial_count=n_items,
            initial_coverage=c0,
        )

    # -- dynamics ------------------------------------------------------------

    def _on_plate(self, point) -> bool:
        cx, cy = self.cfg.plate_center
        return math.hypot(point[0] - cx, point[1] - cy) <= self.cfg.plate_radius

    def settle(self, positions: np.ndarray) -> np.ndarray:
        """Push overlapping items apart until centers are ``min_separation`` apart.

        Jacobi relaxation: every pair closer than the separation moves apart
        symmetrically by half the deficit, then items are clamped onto the
        plate.  Coincident pairs separate along a fixed pair-dependent
        direction, so the result is a deterministic function of the input.
        Runs ``settle_iterations`` sweeps at most, stopping early once no pair
        overlaps by more than 1e-9 m; dense piles may keep a small residual
        overlap.
        """
        pos = np.array(positions, dtype=np.float64).reshape(-1, 2)
        d_min = self.cfg.min_separation
        n = len(pos)
        if d_min <= 0 or n < 2:
            return pos
        i, j = np.triu_indices(n, k=1)
        angle = (i * n + j) * _GOLDEN_ANGLE
        fallback = np.stack([np.cos(angle), np.sin(angle)], axis=-1)
        for _ in range(self.cfg.settle_iterations):
            diff = pos[i] - pos[j]
            dist = np.hypot(diff[:, 0], diff[:, 1])
            deficit = d_min - dist
            if deficit.max() <= 1e-9:
                break
            close = dist > 1e-12
            unit = np.where(close[:, None], diff / np.where(close, dist, 1.0)[:, None], fallback)
            shift = 0.5 * np.clip(deficit, 0.0, None)[:, None] * unit
            move = np.zeros_like(pos)
            np.add.at(move, i, shift)
            np.add.at(move, j, -shift)
            pos = self._clamp_all(pos + move)
        return pos

    def _clamp_all(self, pos: np.ndarray) -> np.ndarray:
        c = np.asarray(self.cfg.plate_center, dtype=np.float64)
        d = pos - c
        r = np.hypot(d[:, 0], d[:, 1])
        limit = self.cfg.item_limit_radius
        scale = np.where(r > limit, limit / np.where(r > 0, r, 1.0), 1.0)
        return c + d * scale[:, None]

    def _clamp(self, p: np.ndarray) -> np.ndarray:
        c = np.asarray(self.cfg.plate_center, dtype=np.float64)
        d = p - c
        r = float(np.hypot(d[0], d[1]))
        limit = self.cfg.item_limit_radius
        if r > limit:
            d = d * (limit / r)
        return c + d

    def _acquire(self, items: list[FoodItem], action: LowLevelAction, rng: np.random.Generator) -> None:
        cfg = self.cfg
        tx, ty = action.dense_point[0], action.dense_point[1]
        cands = []
        for idx, it in enumerate(items):
            if it.acquired:
                continue
            dist = math.hypot(it.position[0] - tx, it.position[1] - ty)
            if dist <= cfg.acquire_radius:
                cands.append((dist, it.id, idx))
        cands.sort()
        taken = 0
        for _, _, idx in cands:
            if taken >= cfg.capacity:
                break
            if rng.random() < cfg.acquire_prob:
                items[idx] = replace(items[idx], acquired=True)
                taken += 1

    def _rearrange(self, items: list[FoodItem], action: LowLevelAction, rng: np.random.Generator) -> None:
        cfg = self.cfg
        dense = np.array(action.dense_point[:2], dtype=np.float64)
        far = np.array(action.far_point[:2], dtype=np.float64)
        for idx, it in enumerate(items):
            if it.acquired:
                continue
            p = np.array(it.position, dtype=np.float64)
            if _point_segment_distance(p, far, dense) > cfg.capture_radius:
                continue
            moved = p + cfg.push_fraction * (dense - p) + cfg.push_noise * rng.standard_normal(2)
            moved = self._clamp(moved)
            items[idx] = replace(it, position=(float(moved[0]), float(moved[1])))
        live = [idx for idx, it in enumerate(items) if not it.acquired]
        settled = self.settle([items[idx].position for idx in live])
        for idx, p in zip(live, settled):
            items[idx] = replace(items[idx], position=(float(p[0]), float(p[1])))

    def step(self, state: PlateState, action: LowLevelAction) -> tuple[PlateState, float, TransitionRecord]:
        if state.step_index >= state.budget:
            raise EpisodeOver(f"action budget of {state.budget} already used")
        rng = np.random.default_rng()
        rng.bit_generator.state = state.rng_state
        items = list(state.items)

        points = [action.dense_point] + ([action.far_point] if action.far_point is not None else [])
        misexecuted = not all(self._on_plate(p) for p in points)
        if misexecuted:
            log.info("step %d: action target off the plate, executing as a no-op", state.step_index)
        elif action.kind is PrimitiveKind.ACQUIRE:
            self._acquire(items, action, rng)
        else:
            self._rearrange(items, action, rng)

        after = replace(
            state,
            items=tuple(items),
            step_index=state.step_index + 1,
            rng_state=rng.bit_generator.state,
        )
        pickup = compute_pickup(state, after)
        cov_b = compute_coverage(state)
        cov_a = compute_coverage(after)
        r = reward_from_terms(
            pickup, cov_b, cov_a, self.cfg.alpha, state.initial_count, state.initial_coverage
        )
        record = TransitionRecord(
            obs_before=self.render_mask(state),
            primitive=action.kind,
            action=action,
            reward=r,
            obs_after=self.render_mask(after),
            pickup_count=pickup,
            coverage_before=cov_b,
            coverage_after=cov_a,
            misexecuted=misexecuted,
        )
        return after, r, record

    # -- rendering -----------------------------------------------------------

    def _grid_coords(self, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
        if (width, height) == (self.render_cfg.width, self.render_cfg.height):
            return self._px_x, self._px_y
        return self.calibration.pixel_centers(width, height)

    def item_footprints(self, state: PlateState, width: int | None = None, height: int | None = None) -> np.ndarray:
        width = width or self.render_cfg.width
        height = height or self.render_cfg.height
        x, y = self._grid_coords(width, height)
        mask = np.zeros((height, width), dtype=bool)
        for it in state.items:
            if it.acquired:
                continue
            dx = x - it.position[0]
            dy = y - it.position[1]
            mask |= dx * dx + dy * dy <= it.footprint_radius * it.footprint_radius
        return mask

    def render_mask(self, state: PlateState, width: int | None = None, height: int | None = None) -> np.ndarray:
        """Binary occupancy grid of the unacquired item footprints."""
        return self.item_footprints(state, width, height).astype(np.uint8)

    def background(self, width: int | None = None, height: int | None = None, noise_seed: int | None = None) -> np.ndarray:
        """Empty-plate grayscale field: a horizontal ramp plus optional sensor noise."""
        rc = self.render_cfg
        width = width or rc.width
        height = height or rc.height
        u = np.arange(width, dtype=np.float64)
        ramp = rc.background_gradient * (u / max(width - 1, 1) - 0.5)
        field = np.broadcast_to(rc.background_level + ramp, (height, width)).copy()
        if noise_seed is not None and rc.background_noise > 0:
            field += rc.background_noise * np.random.default_rng(noise_seed).standard_normal((height, width))
        return np.clip(field, 0.0, 255.0)

    def render_gray(
        self,
        state: PlateState,
        width: int | None = None,
        height: int | None = None,
        noise_seed: int | None = None,
    ) -> np.ndarray:
        gray = self.background(width, height, noise_seed)
        gray[self.item_footprints(state, width, height)] = self.render_cfg.item_level
        return gray

    def plate_pixels(self, width: int | None = None, height: int | None = None) -> np.ndarray:
        """Pixels whose centers fall on the plate disk."""
        width = width or self.render_cfg.width
        height = height or self.render_cfg.height
        x, y = self._grid_coords(width, height)
        cx, cy = self.cfg.plate_center
        return (x - cx) ** 2 + (y - cy) ** 2 <= self.cfg.plate_radius**2

    # -- helpers for tests and tools -------------------------------------------

    def state_from_positions(
        self,
        positions,
        step_index: int = 0,
        seed: int = 0,
        budget: int | None = None,
    ) -> PlateState:
        """Build a state with items at explicit positions (all unacquired)."""
        items = tuple(
            FoodItem(i, (float(p[0]), float(p[1])), self.cfg.footprint_radius) for i, p in enumerate(positions)
        )
        return PlateState(
            items=items,
            plate_center=tuple(self.cfg.plate_center),
            plate_radius=self.cfg.plate_radius,
            step_index=step_index,
            budget=self.budget if budget is None else budget,
            rng_state=np.random.default_rng(seed).bit_generator.state,
            initial_count=len(items),
            initial_coverage=hull_area(it.position for it in items),
        )
