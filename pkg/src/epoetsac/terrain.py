"""Heightmap composition: random bowl part + CPPN part, with the elevation
schedule, export formats, and the height-variance difficulty measure.

A TerrainSpec is the persisted form of a terrain. Realizing it is pure, so
checkpoints only carry specs, never grids.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import cppn
from .seeding import substream

BOWL_WEIGHT = 0.3
CPPN_WEIGHT = 0.7
ELEVATION_STEP = 0.01


@dataclass(frozen=True)
class BowlParams:
    rng_seed: int
    coarse_resolution: int = 8
    threshold: float = 0.0  # subtrahend applied to the cosine field; non-decreasing over a run


@dataclass(frozen=True)
class Heightmap:
    grid: np.ndarray  # normalized heights in [0, 1], shape (resolution, resolution)
    resolution: int
    elevation_z: float  # world-units vertical scale

    def world_grid(self) -> np.ndarray:
        return self.grid * self.elevation_z

    def __eq__(self, other):
        if not isinstance(other, Heightmap):
            return NotImplemented
        return (self.resolution == other.resolution
                and self.elevation_z == other.elevation_z
                and np.array_equal(self.grid, other.grid))


@dataclass(frozen=True)
class TerrainSpec:
    genome: cppn.CppnGenome
    bowl: BowlParams
    elevation_z: float
    resolution: int
    iteration: int = 0
    bowl_weight: float = BOWL_WEIGHT
    cppn_weight: float = CPPN_WEIGHT


def minmax_normalize(grid: np.ndarray) -> np.ndarray:
    """Min-max to [0, 1]; a constant grid maps to all-zeros."""
    lo = float(grid.min())
    hi = float(grid.max())
    if hi - lo <= 0.0:
        return np.zeros_like(grid)
    return (grid - lo) / (hi - lo)


def _bilinear_upsample(coarse: np.ndarray, resolution: int) -> np.ndarray:
    n = coarse.shape[0]
    if n == resolution:
        return coarse.copy()
    src = np.linspace(0.0, n - 1.0, resolution)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n - 1)
    frac = src - i0
    # separable bilinear interpolation: rows then columns
    rows = coarse[i0, :] * (1.0 - frac)[:, None] + coarse[i1, :] * frac[:, None]
    out = rows[:, i0] * (1.0 - frac)[None, :] + rows[:, i1] * frac[None, :]
    return out


def generate_bowl(params: BowlParams, resolution: int) -> np.ndarray:
    """Coarse uniform field -> bilinear upsample -> cos(2*pi*u) - threshold ->
    clamp at zero -> min-max normalize."""
    if resolution < 2:
        raise ValueError(f"resolution must be >= 2, got {resolution}")
    if params.coarse_resolution > resolution:
        raise ValueError("coarse_resolution must not exceed resolution")
    rng = substream(params.rng_seed, "bowl")
    coarse = rng.random((params.coarse_resolution, params.coarse_resolution))
    u = _bilinear_upsample(coarse, resolution)
    b = np.cos(2.0 * np.pi * u) - params.threshold
    b = np.maximum(b, 0.0)
    return minmax_normalize(b)


def compose_heightmap(spec: TerrainSpec) -> Heightmap:
    bowl_grid = generate_bowl(spec.bowl, spec.resolution)
    cppn_grid = minmax_normalize(cppn.query_grid(spec.genome, spec.resolution))
    grid = spec.bowl_weight * bowl_grid + spec.cppn_weight * cppn_grid
    return Heightmap(grid=grid, resolution=spec.resolution, elevation_z=spec.elevation_z)


def elevation_at(initial_elevation: float, iteration: int,
                 step: float = ELEVATION_STEP) -> float:
    return initial_elevation + step * iteration


def height_variance(heightmap: Heightmap) -> float:
    """Population variance of world-unit heights; the difficulty signal."""
    world = heightmap.world_grid()
    return float(np.mean((world - world.mean()) ** 2))


def export_heightmap(heightmap: Heightmap, path: str, format: str) -> None:
    if format == "csv":
        _export_csv(heightmap, path)
    elif format == "pgm":
        _export_pgm(heightmap, path)
    else:
        raise ValueError(f"unknown export format {format!r}")


def _export_csv(heightmap: Heightmap, path: str) -> None:
    world = heightmap.world_grid()
    try:
        with open(path, "w") as fh:
            fh.write(f"{heightmap.resolution},{heightmap.elevation_z!r}\n")
            for row in world:
                fh.write(",".join(f"{v:.9g}" for v in row) + "\n")
    except OSError as exc:
        raise IOError(f"failed to write heightmap csv to {path}: {exc}") from exc


def import_heightmap_csv(path: str) -> Heightmap:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        resolution = int(header[0])
        elevation_z = float(header[1])
        rows = [np.array([float(v) for v in line.split(",")]) for line in fh if line.strip()]
    world = np.vstack(rows)
    if world.shape != (resolution, resolution):
        raise ValueError(f"csv grid shape {world.shape} does not match header {resolution}")
    grid = world / elevation_z if elevation_z != 0 else world
    return Heightmap(grid=grid, resolution=resolution, elevation_z=elevation_z)


def _export_pgm(heightmap: Heightmap, path: str) -> None:
    """16-bit binary PGM; heights mapped linearly [0, elevation_z] -> [0, 65535]."""
    world = heightmap.world_grid()
    scale = 65535.0 / heightmap.elevation_z if heightmap.elevation_z > 0 else 0.0
    pixels = np.clip(np.rint(world * scale), 0, 65535).astype(">u2")
    try:
        with open(path, "wb") as fh:
            fh.write(f"P5\n{heightmap.resolution} {heightmap.resolution}\n65535\n".encode())
            fh.write(pixels.tobytes())
    except OSError as exc:
        raise IOError(f"failed to write heightmap pgm to {path}: {exc}") from exc


def read_pgm_pixels(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P5":
            raise ValueError("not a binary PGM file")
        width, height = map(int, fh.readline().split())
        maxval = int(fh.readline())
        if maxval != 65535:
            raise ValueError("expected 16-bit PGM")
        data = np.frombuffer(fh.read(), dtype=">u2")
    return data.reshape(height, width).astype(np.int64)
