"""Vertex-centered reconstruction field and bin-centered active domain.

The hidden volume is an axis-aligned box divided into nx*ny*nz grid bins.
Optimization variables (albedo and a free 3-vector normal) live on the
(nx+1)*(ny+1)*(nz+1) vertices; occupancy bookkeeping lives on the bins.
A bin is active iff its mask entry is true.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import as_point3


@dataclass
class VoxelField:
    """Albedo and normal variables on the vertices of a hidden-volume grid.

    ``rho`` has shape (nx+1, ny+1, nz+1) and stays element-wise >= 0 (the
    optimizer projects after every step); ``normal`` has an extra trailing
    axis of size 3 and is unconstrained during optimization.
    """

    origin: np.ndarray
    extent: np.ndarray
    resolution: tuple[int, int, int]
    rho: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        self.origin = as_point3(self.origin, "origin")
        self.extent = as_point3(self.extent, "extent")
        if np.any(self.extent <= 0):
            raise ValueError(f"extent must be positive, got {self.extent}")
        self.resolution = tuple(int(n) for n in self.resolution)
        if len(self.resolution) != 3 or any(n < 1 for n in self.resolution):
            raise ValueError(f"resolution must be three positive ints, got {self.resolution}")
        vshape = self.vertex_shape
        self.rho = np.asarray(self.rho, dtype=np.float64)
        self.normal = np.asarray(self.normal, dtype=np.float64)
        if self.rho.shape != vshape:
            raise ValueError(f"rho shape {self.rho.shape} != vertex shape {vshape}")
        if self.normal.shape != vshape + (3,):
            raise ValueError(f"normal shape {self.normal.shape} != {vshape + (3,)}")
        if not (np.all(np.isfinite(self.rho)) and np.all(np.isfinite(self.normal))):
            raise ValueError("field values must be finite")
        if np.any(self.rho < 0):
            raise ValueError("rho must be element-wise >= 0")

    @classmethod
    def uniform(cls, origin, extent, resolution, rho0: float, normal0) -> "VoxelField":
        """Field with constant albedo ``rho0`` and constant normal ``normal0``."""
        resolution = tuple(int(n) for n in resolution)
        vshape = tuple(n + 1 for n in resolution)
        rho = np.full(vshape, float(rho0))
        normal = np.broadcast_to(as_point3(normal0, "normal0"), vshape + (3,)).copy()
        return cls(origin, extent, resolution, rho, normal)

    @property
    def vertex_shape(self) -> tuple[int, int, int]:
        nx, ny, nz = self.resolution
        return (nx + 1, ny + 1, nz + 1)

    @property
    def cell_size(self) -> np.ndarray:
        return self.extent / np.asarray(self.resolution, dtype=np.float64)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.cell_size))

    @property
    def center(self) -> np.ndarray:
        return self.origin + 0.5 * self.extent

    def bin_centers(self, axis: int) -> np.ndarray:
        """Centers of the grid bins along one axis (0=x, 1=y, 2=z)."""
        n = self.resolution[axis]
        step = self.extent[axis] / n
        return self.origin[axis] + (np.arange(n) + 0.5) * step

    def bin_center_positions(self, bin_indices: np.ndarray) -> np.ndarray:
        """(N, 3) world positions of the centers of the given (N, 3) bins."""
        idx = np.asarray(bin_indices, dtype=np.float64)
        return self.origin + (idx + 0.5) * self.cell_size


@dataclass(frozen=True)
class ActiveDomain:
    """Boolean occupancy mask over the grid bins, with a cached count.

    The active set never grows except through grid expansion, where each
    active coarse bin maps onto all of its children.
    """

    mask: np.ndarray
    active_count: int = -1  # recomputed at construction

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.ndim != 3:
            raise ValueError(f"mask must be 3-D, got shape {mask.shape}")
        mask = np.ascontiguousarray(mask)
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "active_count", int(mask.sum()))

    @classmethod
    def full(cls, resolution) -> "ActiveDomain":
        return cls(np.ones(tuple(int(n) for n in resolution), dtype=bool))

    @property
    def resolution(self) -> tuple[int, int, int]:
        return self.mask.shape

    @property
    def n_bins(self) -> int:
        return int(self.mask.size)

    @property
    def active_ratio(self) -> float:
        return self.active_count / self.n_bins


def vertex_to_bin_mean(vertex_values: np.ndarray) -> np.ndarray:
    """Average the 8 corner-vertex values of every grid bin.

    Input shape (nx+1, ny+1, nz+1) -> output shape (nx, ny, nz).
    """
    v = np.asarray(vertex_values, dtype=np.float64)
    if v.ndim != 3 or any(n < 2 for n in v.shape):
        raise ValueError(f"expected a 3-D vertex array, got shape {v.shape}")
    out = (
        v[:-1, :-1, :-1] + v[:-1, :-1, 1:] + v[:-1, 1:, :-1] + v[:-1, 1:, 1:]
        + v[1:, :-1, :-1] + v[1:, :-1, 1:] + v[1:, 1:, :-1] + v[1:, 1:, 1:]
    )
    out *= 0.125
    return out
