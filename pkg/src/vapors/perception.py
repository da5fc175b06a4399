"""Mask-space perception for instantiating primitives.

A binary food mask is blurred with a Gaussian kernel; the brightest pixel
of the blur is where food is densest (acquisition target and push
destination), the dimmest *food* pixel is the sparsest (push origin).
Pixels map to the plate through an affine :class:`~vapors.grids.Calibration`.
"""

from __future__ import annotations

import math

import numpy as np

from .grids import Calibration, as_mask
from .platesim import LowLevelAction, PrimitiveKind

# Values within this relative distance of the extremum count as tied.
TIE_RTOL = 1e-9


class PerceptionError(Exception):
    pass


class EmptyPlate(PerceptionError):
    """No food pixels left in the observation."""


class DegeneratePush(PerceptionError, ValueError):
    """Push origin and destination coincide."""


class IsotropicCrop(PerceptionError):
    """Crop has no dominant principal axis."""


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian taps with radius ``ceil(3 * sigma)``."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _convolve_axis(grid: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    radius = len(taps) // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (radius, radius)
    padded = np.pad(grid, pad)
    out = np.zeros_like(grid, dtype=np.float64)
    n = grid.shape[axis]
    for offset, w in enumerate(taps):
        sl = [slice(None), slice(None)]
        sl[axis] = slice(offset, offset + n)
        out += w * padded[tuple(sl)]
    return out


def gaussian_blur(mask: np.ndarray, sigma: float = 3.0) -> np.ndarray:
    """Separable Gaussian blur with zero padding; output has the input's shape."""
    taps = gaussian_kernel(sigma)
    grid = np.asarray(mask, dtype=np.float64)
    return _convolve_axis(_convolve_axis(grid, taps, axis=1), taps, axis=0)


def _first_tied(values: np.ndarray, target: float) -> int:
    tol = TIE_RTOL * max(abs(target), 1e-300)
    hits = np.flatnonzero(np.abs(values - target) <= tol)
    return int(hits[0])


def densest_pixel(blurred: np.ndarray) -> tuple[int, int]:
    """``(u, v)`` of the maximum; ties go to the row-major-first pixel."""
    blurred = np.asarray(blurred, dtype=np.float64)
    flat = blurred.ravel()
    peak = float(flat.max()) if flat.size else 0.0
    if peak <= 0.0:
        raise EmptyPlate("blurred mask has no positive pixels")
    idx = _first_tied(flat, peak)
    v, u = divmod(idx, blurred.shape[1])
    return u, v


def furthest_pixel(blurred: np.ndarray, mask: np.ndarray) -> tuple[int, int]:
    """``(u, v)`` of the dimmest blurred value among set mask pixels.

    Restricting to food pixels keeps the push origin on food instead of an
    empty plate corner.
    """
    blurred = np.asarray(blurred, dtype=np.float64)
    mask = as_mask(mask)
    if blurred.shape != mask.shape:
        raise ValueError("blurred grid and mask differ in shape")
    food = mask.ravel().astype(bool)
    if not food.any():
        raise EmptyPlate("mask has no set pixels")
    flat = np.where(food, blurred.ravel(), np.inf)
    low = float(flat.min())
    tol = TIE_RTOL * max(abs(low), 1e-300)
    hits = np.flatnonzero(food & (np.abs(flat - low) <= tol))
    v, u = divmod(int(hits[0]), blurred.shape[1])
    return u, v


def push_angle(dense: tuple[float, float], far: tuple[float, float]) -> float:
    """Direction from ``dense`` to ``far`` in degrees, in ``[0, 360)``."""
    dx = far[0] - dense[0]
    dy = far[1] - dense[1]
    if dx == 0.0 and dy == 0.0:
        raise DegeneratePush("dense and far points coincide")
    angle = math.degrees(math.atan2(dy, dx)) % 360.0
    return 0.0 if angle >= 360.0 else angle


def deproject(u: int, v: int, calib: Calibration, width: int = 64, height: int = 64) -> tuple[float, float, float]:
    if not (0 <= u < width and 0 <= v < height):
        raise ValueError(f"pixel ({u}, {v}) outside a {width}x{height} grid")
    x, y = calib.pixel_to_plate(u, v)
    return x, y, calib.z0


def background_subtract_label(empty: np.ndarray, current: np.ndarray, thresh: float = 20.0) -> np.ndarray:
    """Mask of pixels whose absolute difference from the empty plate exceeds ``thresh``."""
    empty = np.asarray(empty, dtype=np.float64)
    current = np.asarray(current, dtype=np.float64)
    if empty.shape != current.shape:
        raise ValueError(f"grid shapes differ: {empty.shape} vs {current.shape}")
    return (np.abs(current - empty) > thresh).astype(np.uint8)


def dice_loss(pred: np.ndarray, gt: np.ndarray) -> float:
    """``1 - 2TP / (2TP + FN + FP)``; two empty masks score 0."""
    pred = as_mask(pred).astype(bool)
    gt = as_mask(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    denom = 2 * tp + fn + fp
    if denom == 0:
        return 0.0
    return 1.0 - 2.0 * tp / denom


def crop_around(mask: np.ndarray, u: int, v: int, size: int) -> np.ndarray:
    """``size x size`` window centered on ``(u, v)``, zero-filled past the borders."""
    mask = as_mask(mask)
    h, w = mask.shape
    size = min(size, h, w)
    half = size // 2
    out = np.zeros((size, size), dtype=np.uint8)
    v0, u0 = v - half, u - half
    sv = slice(max(v0, 0), min(v0 + size, h))
    su = slice(max(u0, 0), min(u0 + size, w))
    out[sv.start - v0 : sv.stop - v0, su.start - u0 : su.stop - u0] = mask[sv, su]
    return out


def principal_axis_orientation(crop: np.ndarray) -> float:
    """Roll orthogonal to the main axis of the set pixels, in ``[0, 180)`` degrees."""
    crop = as_mask(crop)
    v, u = np.nonzero(crop)
    if len(u) < 2:
        raise IsotropicCrop("fewer than two set pixels")
    du = u - u.mean()
    dv = v - v.mean()
    cuu = float(du @ du) / len(u)
    cvv = float(dv @ dv) / len(u)
    cuv = float(du @ dv) / len(u)
    scale = cuu + cvv
    if scale == 0.0 or (abs(cuu - cvv) <= 1e-12 * scale and abs(cuv) <= 1e-12 * scale):
        raise IsotropicCrop("covariance has no dominant direction")
    axis = 0.5 * math.degrees(math.atan2(2.0 * cuv, cuu - cvv))
    roll = (axis + 90.0) % 180.0
    return 0.0 if roll >= 180.0 else roll


def instantiate_action(
    mask: np.ndarray,
    kind: PrimitiveKind,
    calib: Calibration,
    sigma: float = 3.0,
    crop_size: int = 15,
    acquire_pitch: float = 80.0,
) -> LowLevelAction:
    """Turn a primitive choice into a concrete action from the food mask."""
    mask = as_mask(mask)
    if not mask.any():
        raise EmptyPlate("cannot instantiate an action on an empty mask")
    h, w = mask.shape
    blurred = gaussian_blur(mask, sigma)
    ud, vd = densest_pixel(blurred)
    dense = deproject(ud, vd, calib, w, h)

    if kind is PrimitiveKind.ACQUIRE:
        try:
            roll = principal_axis_orientation(crop_around(mask, ud, vd, crop_size))
        except IsotropicCrop:
            roll = 0.0
        return LowLevelAction(PrimitiveKind.ACQUIRE, dense, roll=roll, pitch=acquire_pitch)

    uf, vf = furthest_pixel(blurred, mask)
    far = deproject(uf, vf, calib, w, h)
    try:
        roll = push_angle(dense[:2], far[:2])
    except DegeneratePush:
        roll = 0.0
    return LowLevelAction(PrimitiveKind.REARRANGE, dense, far_point=far, roll=roll, pitch=0.0)
