"""Relay-wall scan geometry and time-resolved measurement containers.

Every length in the toolkit is in meters, and time is always expressed as
optical path length (meters), so the speed of light never appears in any
formula.  Bin ``k`` of a transient covers optical paths
``[path_offset + k*bin_length, path_offset + (k+1)*bin_length)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np


class FalloffMode(Enum):
    """Radiometric model applied when weighting hidden-surface returns.

    LAMBERTIAN keeps the signed cosine term; RETROREFLECTIVE drops it and
    keeps only the inverse-square distance attenuation.
    """

    LAMBERTIAN = "lambertian"
    RETROREFLECTIVE = "retroreflective"


class Pairing(Enum):
    """How the laser and scan point lists combine into measurement pairs."""

    CARTESIAN = "cartesian"  # all L x S combinations, pair = il * S + is
    PAIRED = "paired"        # L == S, pair i couples laser i with scan i


def as_point3(p, name: str = "point") -> np.ndarray:
    """Validate an (x, y, z) position and return it as a float64 array."""
    arr = np.asarray(p, dtype=np.float64)
    if arr.shape != (3,):
        raise ValueError(f"{name} must have shape (3,), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite, got {arr}")
    return arr


def as_points(points, name: str = "points") -> np.ndarray:
    """Validate an (N, 3) point array and return a float64 copy."""
    arr = np.array(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"{name} must have shape (N, 3), got {arr.shape}")
    if arr.shape[0] < 1:
        raise ValueError(f"{name} must contain at least one point")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


@dataclass(frozen=True)
class ScanGeometry:
    """Laser and scan point sets on an arbitrary relay wall.

    The wall is represented only by its sampled point coordinates, so no
    planarity or regularity is ever assumed by the propagation model.
    ``laser_grid_shape`` / ``scan_grid_shape`` record the (nx, ny) layout
    when the points were generated on a regular grid; stride-based
    subsampling requires them.
    """

    laser_points: np.ndarray
    scan_points: np.ndarray
    confocal: bool
    falloff_mode: FalloffMode = FalloffMode.LAMBERTIAN
    pairing: Pairing = Pairing.PAIRED
    laser_grid_shape: tuple[int, int] | None = None
    scan_grid_shape: tuple[int, int] | None = None

    def __post_init__(self):
        lasers = as_points(self.laser_points, "laser_points")
        scans = as_points(self.scan_points, "scan_points")
        lasers.setflags(write=False)
        scans.setflags(write=False)
        object.__setattr__(self, "laser_points", lasers)
        object.__setattr__(self, "scan_points", scans)
        if not isinstance(self.falloff_mode, FalloffMode):
            object.__setattr__(self, "falloff_mode", FalloffMode(self.falloff_mode))
        if not isinstance(self.pairing, Pairing):
            object.__setattr__(self, "pairing", Pairing(self.pairing))
        if self.pairing is Pairing.PAIRED and len(lasers) != len(scans):
            raise ValueError(
                f"paired geometry needs equally long lists, got "
                f"{len(lasers)} lasers and {len(scans)} scan points"
            )
        if self.confocal:
            if self.pairing is not Pairing.PAIRED:
                raise ValueError("confocal geometry must use paired pairing")
            if not np.array_equal(lasers, scans):
                raise ValueError("confocal geometry requires laser_points == scan_points")
        for shape, count, name in (
            (self.laser_grid_shape, len(lasers), "laser_grid_shape"),
            (self.scan_grid_shape, len(scans), "scan_grid_shape"),
        ):
            if shape is not None:
                gx, gy = shape
                if gx < 1 or gy < 1 or gx * gy != count:
                    raise ValueError(f"{name} {shape} inconsistent with {count} points")

    @property
    def n_lasers(self) -> int:
        return len(self.laser_points)

    @property
    def n_scans(self) -> int:
        return len(self.scan_points)

    @property
    def n_pairs(self) -> int:
        if self.pairing is Pairing.PAIRED:
            return self.n_lasers
        return self.n_lasers * self.n_scans

    def pair_indices(self) -> tuple[np.ndarray, np.ndarray]:
        """Per measurement pair, the (laser index, scan index) arrays."""
        if self.pairing is Pairing.PAIRED:
            idx = np.arange(self.n_lasers)
            return idx, idx
        il = np.repeat(np.arange(self.n_lasers), self.n_scans)
        isc = np.tile(np.arange(self.n_scans), self.n_lasers)
        return il, isc

    def pair_points(self) -> tuple[np.ndarray, np.ndarray]:
        """Per measurement pair, the (P, 3) laser and scan coordinates."""
        il, isc = self.pair_indices()
        return self.laser_points[il], self.scan_points[isc]

    def wall_centroid(self) -> np.ndarray:
        """Mean position of all wall sample points."""
        allpts = np.concatenate([self.laser_points, self.scan_points], axis=0)
        return allpts.mean(axis=0)


def _grid_points(width: float, height: float, nx: int, ny: int) -> np.ndarray:
    """Centers of a regular nx-by-ny partition of a width-by-height rectangle.

    Returned in row-major order with x fastest: index = iy * nx + ix.
    """
    if width <= 0 or height <= 0:
        raise ValueError(f"wall dimensions must be positive, got {width} x {height}")
    if nx < 1 or ny < 1:
        raise ValueError(f"grid resolution must be >= 1, got {nx} x {ny}")
    xs = (np.arange(nx) + 0.5) * (width / nx) - width / 2.0
    ys = (np.arange(ny) + 0.5) * (height / ny) - height / 2.0
    gx, gy = np.meshgrid(xs, ys, indexing="xy")  # gy varies along rows
    return np.column_stack([gx.ravel(), gy.ravel()])


def make_planar_confocal_geometry(
    wall_width: float,
    wall_height: float,
    nx: int,
    ny: int,
    z_plane: float,
    falloff_mode: FalloffMode = FalloffMode.LAMBERTIAN,
) -> ScanGeometry:
    """Confocal scan grid on a planar wall at ``z = z_plane``.

    Points are the centers of a regular nx-by-ny partition of the wall
    rectangle, centered on the z axis.
    """
    xy = _grid_points(wall_width, wall_height, nx, ny)
    pts = np.column_stack([xy, np.full(len(xy), float(z_plane))])
    return ScanGeometry(
        laser_points=pts,
        scan_points=pts,
        confocal=True,
        falloff_mode=falloff_mode,
        pairing=Pairing.PAIRED,
        laser_grid_shape=(nx, ny),
        scan_grid_shape=(nx, ny),
    )


def make_cylindrical_confocal_geometry(
    wall_width: float,
    wall_height: float,
    nx: int,
    ny: int,
    z_plane: float,
    sag_deg: float,
    falloff_mode: FalloffMode = FalloffMode.LAMBERTIAN,
) -> ScanGeometry:
    """Confocal scan grid on a cylindrical arc bulging toward the scene.

    The wall curves along x with half-angle ``sag_deg``: the columns at
    x = +-width/2 sit at ``z = z_plane`` and the central column bulges to
    ``z_plane + R*(1 - cos(sag))`` where ``R = (width/2)/sin(sag)``.
    """
    if not (0.0 < sag_deg < 90.0):
        raise ValueError(f"sag_deg must be in (0, 90), got {sag_deg}")
    if wall_width <= 0 or wall_height <= 0:
        raise ValueError("wall dimensions must be positive")
    if nx < 1 or ny < 1:
        raise ValueError("grid resolution must be >= 1")
    sag = np.deg2rad(sag_deg)
    radius = (wall_width / 2.0) / np.sin(sag)
    thetas = sag * (2.0 * (np.arange(nx) + 0.5) / nx - 1.0)
    ys = (np.arange(ny) + 0.5) * (wall_height / ny) - wall_height / 2.0
    xs = radius * np.sin(thetas)
    zs = z_plane + radius * (np.cos(thetas) - np.cos(sag))
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    gz, _ = np.meshgrid(zs, ys, indexing="xy")
    pts = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
    return ScanGeometry(
        laser_points=pts,
        scan_points=pts,
        confocal=True,
        falloff_mode=falloff_mode,
        pairing=Pairing.PAIRED,
        laser_grid_shape=(nx, ny),
        scan_grid_shape=(nx, ny),
    )


def with_single_laser(g: ScanGeometry, laser_point) -> ScanGeometry:
    """Non-confocal variant of ``g``: one fixed laser, same scan points."""
    laser = as_point3(laser_point, "laser_point")
    return ScanGeometry(
        laser_points=laser[None, :],
        scan_points=g.scan_points,
        confocal=False,
        falloff_mode=g.falloff_mode,
        pairing=Pairing.CARTESIAN,
        laser_grid_shape=(1, 1),
        scan_grid_shape=g.scan_grid_shape,
    )


def grid_kept_indices(grid_shape: tuple[int, int], stride: int) -> np.ndarray:
    """Flat point indices kept when subsampling a regular grid by ``stride``.

    Grid layout must match ``_grid_points``: index = iy * nx + ix.
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    gx, gy = grid_shape
    if stride > gx or stride > gy:
        raise ValueError(f"stride {stride} exceeds grid axis of shape {grid_shape}")
    ix = np.arange(0, gx, stride)
    iy = np.arange(0, gy, stride)
    return (iy[:, None] * gx + ix[None, :]).ravel()


def subsample_geometry(g: ScanGeometry, stride: int) -> ScanGeometry:
    """Keep every stride-th wall point per axis of a regular-grid geometry."""
    if stride == 1:
        return g
    if g.laser_grid_shape is None or g.scan_grid_shape is None:
        raise ValueError("subsample_geometry requires grid shapes on the geometry")
    if g.pairing is Pairing.PAIRED:
        if g.laser_grid_shape != g.scan_grid_shape:
            raise ValueError("paired geometry needs matching laser/scan grids")
        kept = grid_kept_indices(g.laser_grid_shape, stride)
        gx, gy = g.laser_grid_shape
        new_shape = (len(range(0, gx, stride)), len(range(0, gy, stride)))
        return replace(
            g,
            laser_points=g.laser_points[kept],
            scan_points=g.scan_points[kept],
            laser_grid_shape=new_shape,
            scan_grid_shape=new_shape,
        )
    kept_l = grid_kept_indices(g.laser_grid_shape, stride)
    kept_s = grid_kept_indices(g.scan_grid_shape, stride)
    lx, ly = g.laser_grid_shape
    sx, sy = g.scan_grid_shape
    return replace(
        g,
        laser_points=g.laser_points[kept_l],
        scan_points=g.scan_points[kept_s],
        laser_grid_shape=(len(range(0, lx, stride)), len(range(0, ly, stride))),
        scan_grid_shape=(len(range(0, sx, stride)), len(range(0, sy, stride))),
    )


@dataclass(frozen=True)
class TransientVolume:
    """Time-resolved photon histograms, one row per measurement pair.

    ``data`` has shape (P, T).  Rows follow the pair order of the owning
    geometry (see ``Pairing``).  ``bin_length`` is meters of optical path
    per time bin; ``path_offset`` is the optical path at the start of
    bin 0 (device and wall calibration already removed).
    """

    data: np.ndarray
    bin_length: float
    path_offset: float = 0.0

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"data must be 2-D [pairs, bins], got shape {arr.shape}")
        if arr.shape[1] < 1:
            raise ValueError("need at least one time bin")
        if not np.all(np.isfinite(arr)):
            raise ValueError("transient data must be finite")
        if not (self.bin_length > 0):
            raise ValueError(f"bin_length must be positive, got {self.bin_length}")
        if not np.isfinite(self.path_offset):
            raise ValueError("path_offset must be finite")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "bin_length", float(self.bin_length))
        object.__setattr__(self, "path_offset", float(self.path_offset))

    @property
    def n_pairs(self) -> int:
        return self.data.shape[0]

    @property
    def n_bins(self) -> int:
        return self.data.shape[1]
