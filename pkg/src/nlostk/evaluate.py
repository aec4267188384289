"""Turn reconstructed fields into reportable artifacts: albedo volumes,
maximum-intensity projections, depth maps, error metrics, and oriented
point clouds ready for external surface meshing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates

from .errors import NoOverlapError
from .geometry import FalloffMode, as_point3
from .grid import ActiveDomain, VoxelField, vertex_to_bin_mean


@dataclass(frozen=True)
class DepthMap:
    """Per-lateral-cell depth (meters along z) with a validity mask."""

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if values.ndim != 2 or values.shape != valid.shape:
            raise ValueError(
                f"values/valid must be matching 2-D arrays, got {values.shape} vs {valid.shape}"
            )
        if not np.all(np.isfinite(values[valid])):
            raise ValueError("valid depth entries must be finite")
        values.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class PointCloud:
    """Oriented points with a scalar intensity attribute."""

    points: np.ndarray
    normals: np.ndarray
    intensities: np.ndarray

    def __len__(self) -> int:
        return len(self.points)


def effective_albedo(field: VoxelField, falloff_mode: FalloffMode = FalloffMode.LAMBERTIAN) -> np.ndarray:
    """Per-vertex exported albedo.

    During optimization the albedo and the normal magnitude are entangled
    (only their product enters the forward model), so the export uses
    rho * |n| for lambertian walls and plain rho for retroreflective ones.
    """
    if falloff_mode is FalloffMode.LAMBERTIAN:
        return field.rho * np.linalg.norm(field.normal, axis=-1)
    return field.rho.copy()


def bin_albedo(field: VoxelField, falloff_mode: FalloffMode = FalloffMode.LAMBERTIAN) -> np.ndarray:
    """Per-bin effective albedo: mean of the 8 corner-vertex values."""
    return vertex_to_bin_mean(effective_albedo(field, falloff_mode))


def max_intensity_projection(volume: np.ndarray) -> np.ndarray:
    """Per-column maximum along z: (nx, ny, nz) -> (nx, ny)."""
    vol = np.asarray(volume, dtype=np.float64)
    if vol.ndim != 3:
        raise ValueError(f"expected a 3-D volume, got shape {vol.shape}")
    return vol.max(axis=2)


def depth_from_argmax(volume: np.ndarray, z_coords: np.ndarray, threshold_frac: float) -> DepthMap:
    """Depth of the per-column maximum, masked by a relative threshold.

    A column is valid iff its maximum is positive and reaches
    ``threshold_frac`` of the global maximum; ties take the first
    (nearest-wall) slice.
    """
    vol = np.asarray(volume, dtype=np.float64)
    if vol.ndim != 3:
        raise ValueError(f"expected a 3-D volume, got shape {vol.shape}")
    if not (0.0 <= threshold_frac < 1.0):
        raise ValueError(f"threshold_frac must lie in [0, 1), got {threshold_frac}")
    z_coords = np.asarray(z_coords, dtype=np.float64)
    if z_coords.shape != (vol.shape[2],):
        raise ValueError(
            f"z_coords must have length {vol.shape[2]}, got shape {z_coords.shape}"
        )
    col_max = vol.max(axis=2)
    global_max = vol.max()
    valid = (col_max > 0.0) & (col_max >= threshold_frac * global_max)
    depth = z_coords[np.argmax(vol, axis=2)]
    depth = np.where(valid, depth, 0.0)
    return DepthMap(depth, valid)


def depth_map_from_field(
    field: VoxelField,
    domain: ActiveDomain,
    threshold_frac: float = 0.05,
    falloff_mode: FalloffMode = FalloffMode.LAMBERTIAN,
) -> DepthMap:
    """Depth map of a reconstruction: masked albedo volume -> argmax depth."""
    vol = masked_albedo_volume(field, domain, falloff_mode)
    return depth_from_argmax(vol, field.bin_centers(2), threshold_frac)


def masked_albedo_volume(
    field: VoxelField,
    domain: ActiveDomain,
    falloff_mode: FalloffMode = FalloffMode.LAMBERTIAN,
) -> np.ndarray:
    """Effective albedo per bin, zeroed outside the active domain.

    Pruned bins keep stale vertex values, so every exported volume masks
    them out.
    """
    if domain.resolution != field.resolution:
        raise ValueError("field and domain resolutions disagree")
    return np.where(domain.mask, bin_albedo(field, falloff_mode), 0.0)


def _bilinear_resize(values: np.ndarray, valid: np.ndarray, shape: tuple[int, int]):
    """Align-corners bilinear resize; a target pixel stays valid only when
    every contributing source pixel is valid."""
    src_nx, src_ny = values.shape
    nx, ny = shape
    xs = np.arange(nx) * ((src_nx - 1) / (nx - 1)) if nx > 1 else np.zeros(1)
    ys = np.arange(ny) * ((src_ny - 1) / (ny - 1)) if ny > 1 else np.zeros(1)
    cx, cy = np.meshgrid(xs, ys, indexing="ij")
    coords = np.stack([cx.ravel(), cy.ravel()])
    filled = np.where(valid, values, 0.0)
    out = map_coordinates(filled, coords, order=1, mode="nearest").reshape(shape)
    vmask = map_coordinates(valid.astype(np.float64), coords, order=1, mode="nearest")
    return out, vmask.reshape(shape) >= 1.0 - 1e-9


def depth_metrics(pred: DepthMap, truth: DepthMap, upsample: bool = False) -> tuple[float, float]:
    """MAE and RMSE (meters) over the jointly valid pixels.

    With ``upsample`` the prediction is bilinearly resized to the truth's
    resolution first; otherwise the shapes must already match.
    """
    if pred.shape != truth.shape:
        if not upsample:
            raise ValueError(
                f"shape mismatch {pred.shape} vs {truth.shape}; pass upsample=True"
            )
        values, valid = _bilinear_resize(pred.values, pred.valid, truth.shape)
    else:
        values, valid = pred.values, pred.valid
    joint = valid & truth.valid
    if not joint.any():
        raise NoOverlapError("no jointly valid pixels between the two depth maps")
    err = values[joint] - truth.values[joint]
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err * err)))
    return mae, rmse


def export_point_cloud(
    field: VoxelField,
    domain: ActiveDomain,
    threshold_frac: float,
    wall_centroid=None,
    falloff_mode: FalloffMode = FalloffMode.LAMBERTIAN,
) -> PointCloud:
    """One oriented point per active bin whose effective albedo reaches
    ``threshold_frac`` of the maximum.

    Positions are bin centers; normals are the normalized mean of the 8
    corner normals, sign-flipped toward ``wall_centroid`` when given, so
    Poisson-style meshing receives consistently oriented input.
    """
    if not (0.0 <= threshold_frac <= 1.0):
        raise ValueError(f"threshold_frac must lie in [0, 1], got {threshold_frac}")
    vol = masked_albedo_volume(field, domain, falloff_mode)
    peak = vol.max()
    keep = domain.mask & (vol > 0.0) & (vol >= threshold_frac * peak)
    idx = np.argwhere(keep)
    if len(idx) == 0:
        return PointCloud(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0))
    positions = field.bin_center_positions(idx)
    normals = vertex_to_bin_mean_vector(field.normal)[keep]
    lengths = np.linalg.norm(normals, axis=1)
    safe = np.where(lengths > 0, lengths, 1.0)
    normals = normals / safe[:, None]
    if wall_centroid is not None:
        toward_wall = as_point3(wall_centroid, "wall_centroid") - positions
        flip = np.einsum("ij,ij->i", normals, toward_wall) < 0.0
        normals[flip] *= -1.0
    return PointCloud(positions, normals, vol[keep])


def vertex_to_bin_mean_vector(vertex_vectors: np.ndarray) -> np.ndarray:
    """Per-bin mean of corner-vertex vectors: (..., 3) vertex -> bin array."""
    return np.stack(
        [vertex_to_bin_mean(vertex_vectors[..., c]) for c in range(3)], axis=-1
    )
