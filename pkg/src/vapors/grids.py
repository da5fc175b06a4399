"""Observation grids, plate-to-pixel calibration and grid file formats.

Grids are plain numpy arrays indexed ``[v, u]`` (row ``v``, column ``u``):

* an *ObsGrid* is a ``uint8`` array of zeros and ones (binary mask);
* a *GrayGrid* is a ``float64`` array with values in ``[0, 255]``.

Masks travel through episode logs as row-major run-length encodings, and
through the CLI as PGM (P5) and PBM (P1/P4) files.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import PlateConfig, RenderConfig


class GridFormatError(ValueError):
    """Malformed grid file or encoding."""


def as_mask(grid: np.ndarray) -> np.ndarray:
    arr = np.asarray(grid)
    if arr.ndim != 2:
        raise GridFormatError(f"mask must be 2-D, got shape {arr.shape}")
    if not np.all((arr == 0) | (arr == 1)):
        raise GridFormatError("mask values must be 0 or 1")
    return arr.astype(np.uint8, copy=False)


@dataclass(frozen=True)
class Calibration:
    """Affine map between pixel indices ``(u, v)`` and plate-frame meters.

    ``to_plate`` is a 2x3 matrix ``[[a, b, tx], [c, d, ty]]`` applied to
    ``(u, v, 1)``; ``z0`` is the plate-surface height.
    """

    to_plate: tuple[tuple[float, float, float], tuple[float, float, float]]
    z0: float = 0.0

    def __post_init__(self) -> None:
        det = self.matrix[0, 0] * self.matrix[1, 1] - self.matrix[0, 1] * self.matrix[1, 0]
        if det == 0.0:
            raise ValueError("calibration map is not invertible")

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.to_plate, dtype=np.float64)

    @classmethod
    def centered(
        cls,
        width: int,
        height: int,
        field_of_view: float,
        center: tuple[float, float] = (0.0, 0.0),
        z0: float = 0.0,
    ) -> "Calibration":
        """Square pixels; pixel ``(width // 2, height // 2)`` sits on ``center``."""
        s = field_of_view / width
        return cls(
            to_plate=(
                (s, 0.0, center[0] - s * (width // 2)),
                (0.0, s, center[1] - s * (height // 2)),
            ),
            z0=z0,
        )

    @classmethod
    def from_config(cls, plate: PlateConfig, render: RenderConfig) -> "Calibration":
        return cls.centered(
            render.width, render.height, render.field_of_view, plate.plate_center, render.plate_height
        )

    @property
    def pixel_size(self) -> float:
        m = self.matrix
        return float(np.sqrt(abs(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0])))

    def pixel_to_plate(self, u: float, v: float) -> tuple[float, float]:
        m = self.matrix
        return (
            float(m[0, 0] * u + m[0, 1] * v + m[0, 2]),
            float(m[1, 0] * u + m[1, 1] * v + m[1, 2]),
        )

    def plate_to_pixel(self, x: float, y: float) -> tuple[float, float]:
        m = self.matrix
        a = m[:, :2]
        u, v = np.linalg.solve(a, np.array([x - m[0, 2], y - m[1, 2]]))
        return float(u), float(v)

    def pixel_centers(self, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
        """Plate coordinates of every pixel center, each shaped ``(height, width)``."""
        m = self.matrix
        v, u = np.mgrid[0:height, 0:width].astype(np.float64)
        x = m[0, 0] * u + m[0, 1] * v + m[0, 2]
        y = m[1, 0] * u + m[1, 1] * v + m[1, 2]
        return x, y


# ---------------------------------------------------------------------------
# Run-length encoding used in episode logs


def rle_encode(mask: np.ndarray) -> dict:
    """Row-major runs alternating 0s and 1s, always starting with a 0-run."""
    mask = as_mask(mask)
    flat = mask.ravel()
    runs: list[int] = []
    current = 0
    count = 0
    for bit in flat.tolist():
        if bit == current:
            count += 1
        else:
            runs.append(count)
            current = bit
            count = 1
    runs.append(count)
    return {"h": int(mask.shape[0]), "w": int(mask.shape[1]), "runs": runs}


def rle_decode(enc: dict) -> np.ndarray:
    h, w, runs = int(enc["h"]), int(enc["w"]), enc["runs"]
    if sum(runs) != h * w:
        raise GridFormatError(f"run lengths sum to {sum(runs)}, expected {h * w}")
    values = np.zeros(len(runs), dtype=np.uint8)
    values[1::2] = 1
    flat = np.repeat(values, np.asarray(runs, dtype=np.int64))
    return flat.reshape(h, w)


# ---------------------------------------------------------------------------
# Netpbm files


def _read_tokens(data: bytes, count: int, pos: int = 0) -> tuple[list[bytes], int]:
    tokens: list[bytes] = []
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise GridFormatError("truncated netpbm header")
        tokens.append(data[start:pos])
    return tokens, pos


def write_pgm(path: str | Path, gray: np.ndarray) -> None:
    """Binary (P5) 8-bit PGM; values are rounded and clipped to [0, 255]."""
    arr = np.clip(np.rint(np.asarray(gray, dtype=np.float64)), 0, 255).astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    """Read P5 (binary) or P2 (plain) PGM into a float64 gray grid."""
    data = Path(path).read_bytes()
    (magic,), pos = _read_tokens(data, 1)
    if magic == b"P5":
        (w, h, maxval), pos = _read_tokens(data, 3, pos)
        w, h, maxval = int(w), int(h), int(maxval)
        if maxval > 255:
            raise GridFormatError("16-bit PGM is not supported")
        pos += 1  # single whitespace byte after maxval
        raw = data[pos : pos + w * h]
        if len(raw) != w * h:
            raise GridFormatError("truncated PGM pixel data")
        arr = np.frombuffer(raw, dtype=np.uint8).reshape(h, w)
    elif magic == b"P2":
        (w, h, maxval), pos = _read_tokens(data, 3, pos)
        w, h, maxval = int(w), int(h), int(maxval)
        vals, _ = _read_tokens(data, w * h, pos)
        arr = np.array([int(t) for t in vals], dtype=np.int64).reshape(h, w)
    else:
        raise GridFormatError(f"not a PGM file (magic {magic!r})")
    out = arr.astype(np.float64)
    if maxval != 255:
        out *= 255.0 / maxval
    return out


def write_pbm(path: str | Path, mask: np.ndarray, plain: bool = True) -> None:
    """PBM mask; 1 means a set (foreground) pixel, as in the netpbm convention."""
    mask = as_mask(mask)
    h, w = mask.shape
    with open(path, "wb") as fh:
        if plain:
            fh.write(f"P1\n{w} {h}\n".encode("ascii"))
            for row in mask:
                fh.write((" ".join(str(int(b)) for b in row) + "\n").encode("ascii"))
        else:
            fh.write(f"P4\n{w} {h}\n".encode("ascii"))
            fh.write(np.packbits(mask, axis=1).tobytes())


def read_pbm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    (magic,), pos = _read_tokens(data, 1)
    (w, h), pos = _read_tokens(data, 2, pos)
    w, h = int(w), int(h)
    if magic == b"P1":
        # Plain PBM digits need not be whitespace separated.
        body = data[pos:]
        lines = [ln.split(b"#", 1)[0] for ln in body.splitlines()]
        digits = [c for c in b"".join(lines) if c in (ord("0"), ord("1"))]
        if len(digits) < w * h:
            raise GridFormatError("truncated PBM pixel data")
        return (np.array(digits[: w * h], dtype=np.uint8) - ord("0")).reshape(h, w)
    if magic == b"P4":
        pos += 1
        row_bytes = (w + 7) // 8
        raw = data[pos : pos + row_bytes * h]
        if len(raw) != row_bytes * h:
            raise GridFormatError("truncated PBM pixel data")
        packed = np.frombuffer(raw, dtype=np.uint8).reshape(h, row_bytes)
        return np.unpackbits(packed, axis=1)[:, :w].astype(np.uint8)
    raise GridFormatError(f"not a PBM file (magic {magic!r})")
