"""Stratified per-bin sampling of the hidden volume and trilinear
vertex interpolation, with the transpose scatter used for gradients.

Randomness is counter-based: each uniform is a pure integer hash of
(seed, bin index, lane), so a bin's sample position depends only on its
own key.  Sampling is therefore order-independent, parallel-safe, and
bit-reproducible across runs and platforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyDomainError
from .grid import ActiveDomain, VoxelField

_U64 = np.uint64
_GAMMA = _U64(0x9E3779B97F4A7C15)
_MUL1 = _U64(0xBF58476D1CE4E5B9)
_MUL2 = _U64(0x94D049BB133111EB)
_TO_UNIT = float(2.0 ** -53)

# Corner k of a bin, as (dx, dy, dz) offsets with x the most significant bit.
_CORNERS = np.array([(k >> 2 & 1, k >> 1 & 1, k & 1) for k in range(8)], dtype=np.int64)


def _mix64(x: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer, vectorized over uint64 arrays (wrapping)."""
    x = (x + _GAMMA).astype(_U64)
    x ^= x >> _U64(30)
    x *= _MUL1
    x ^= x >> _U64(27)
    x *= _MUL2
    x ^= x >> _U64(31)
    return x


def _seed_u64(seed: int) -> np.ndarray:
    """Wrap an arbitrary Python int into a length-1 uint64 array."""
    return np.asarray([int(seed) & 0xFFFF_FFFF_FFFF_FFFF], dtype=_U64)


def hashed_uniforms(seed: int, keys: np.ndarray, lanes: int) -> np.ndarray:
    """Uniforms in [0, 1) addressed by (seed, key, lane); shape (len(keys), lanes)."""
    base = _mix64(_seed_u64(seed))[0]
    streams = np.asarray(keys, dtype=_U64)[:, None] * _U64(lanes) + np.arange(lanes, dtype=_U64)
    bits = _mix64(base + streams * _GAMMA)
    return (bits >> _U64(11)).astype(np.float64) * _TO_UNIT


def mix_seed(seed: int, salt: int) -> int:
    """Derive a child seed, e.g. per optimization step."""
    return int(_mix64(_mix64(_seed_u64(seed)) ^ _mix64(_seed_u64(salt)))[0])


@dataclass(frozen=True)
class SampleBatch:
    """One sample point per active grid bin.

    ``weights[i]`` are the trilinear weights of sample i over its 8
    surrounding vertices (order given by ``_CORNERS``); they are >= 0 and
    sum to 1.  ``vertex_ids`` are flat indices into the C-order raveled
    vertex arrays of the owning field.
    """

    positions: np.ndarray
    bin_indices: np.ndarray
    vertex_ids: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.positions)


def stratified_sample(field: VoxelField, domain: ActiveDomain, seed: int) -> SampleBatch:
    """Draw one uniform point inside every active bin.

    Deterministic for a fixed seed; each bin's point depends only on
    (seed, flat bin index), so sub-domains of the same grid sample the
    shared bins identically.
    """
    if domain.resolution != field.resolution:
        raise ValueError(
            f"domain resolution {domain.resolution} != field resolution {field.resolution}"
        )
    if domain.active_count < 1:
        raise EmptyDomainError("cannot sample from an empty domain")
    bins = np.argwhere(domain.mask)  # C-order, deterministic
    flat = np.ravel_multi_index(bins.T, domain.resolution)
    frac = hashed_uniforms(seed, flat, lanes=3)
    positions = field.origin + (bins + frac) * field.cell_size
    corner_idx = bins[:, None, :] + _CORNERS[None, :, :]
    vertex_ids = np.ravel_multi_index(
        (corner_idx[..., 0], corner_idx[..., 1], corner_idx[..., 2]), field.vertex_shape
    )
    lo = 1.0 - frac
    w = np.where(_CORNERS[None, :, :] == 1, frac[:, None, :], lo[:, None, :])
    weights = w[..., 0] * w[..., 1] * w[..., 2]
    return SampleBatch(positions, bins, vertex_ids, weights)


def interpolate(field: VoxelField, batch: SampleBatch) -> tuple[np.ndarray, np.ndarray]:
    """Albedo and normal at each sample: trilinear blend of 8 vertices."""
    if batch.vertex_ids.size and batch.vertex_ids.max() >= field.rho.size:
        raise ValueError("sample batch indexes outside the field's vertex grid")
    rho_corners = field.rho.ravel()[batch.vertex_ids]
    n_corners = field.normal.reshape(-1, 3)[batch.vertex_ids]
    rho = (rho_corners * batch.weights).sum(axis=1)
    normals = (n_corners * batch.weights[..., None]).sum(axis=1)
    return rho, normals


def scatter_gradients(
    batch: SampleBatch,
    point_grads: tuple[np.ndarray, np.ndarray],
    resolution: tuple[int, int, int],
) -> tuple[np.ndarray, np.ndarray]:
    """Exact transpose of ``interpolate``: push per-point gradients back to
    the vertices, weighting each by its trilinear coefficient.

    ``resolution`` is the bin resolution (nx, ny, nz); returns gradient
    arrays shaped like the vertex fields.
    """
    d_rho, d_n = point_grads
    d_rho = np.asarray(d_rho, dtype=np.float64)
    d_n = np.asarray(d_n, dtype=np.float64)
    if len(d_rho) != len(batch) or len(d_n) != len(batch):
        raise ValueError(
            f"gradient lengths ({len(d_rho)}, {len(d_n)}) != batch size {len(batch)}"
        )
    vshape = tuple(int(n) + 1 for n in resolution)
    n_vertices = int(np.prod(vshape))
    if batch.vertex_ids.size and batch.vertex_ids.max() >= n_vertices:
        raise ValueError("sample batch indexes outside the given resolution")
    ids = batch.vertex_ids.ravel()
    g_rho = np.bincount(
        ids, weights=(batch.weights * d_rho[:, None]).ravel(), minlength=n_vertices
    ).reshape(vshape)
    g_n = np.empty(vshape + (3,))
    for c in range(3):
        g_n[..., c] = np.bincount(
            ids, weights=(batch.weights * d_n[:, c, None]).ravel(), minlength=n_vertices
        ).reshape(vshape)
    return g_rho, g_n
