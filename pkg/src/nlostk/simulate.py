"""Synthetic hidden scenes and a brute-force transient renderer.

The renderer re-evaluates the measurement model with plain scalar loops,
independent of the vectorized synthesis path, so the two implementations
can verify each other.  Unlike the reconstructor it clamps the cosine term
at zero: physical surfaces only emit from their front side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError
from .evaluate import DepthMap
from .geometry import FalloffMode, ScanGeometry, TransientVolume, as_point3

SCENE_KINDS = ("plane_patch", "sphere_cap", "two_planes", "letter_grid")

# 5x5 bitmaps, rows top to bottom.
_LETTER_BITMAPS = {
    "H": ("X...X", "X...X", "XXXXX", "X...X", "X...X"),
    "I": ("XXXXX", "..X..", "..X..", "..X..", "XXXXX"),
    "L": ("X....", "X....", "X....", "X....", "XXXXX"),
    "N": ("X...X", "XX..X", "X.X.X", "X..XX", "X...X"),
    "O": ("XXXXX", "X...X", "X...X", "X...X", "XXXXX"),
    "S": ("XXXXX", "X....", "XXXXX", "....X", "XXXXX"),
    "T": ("XXXXX", "..X..", "..X..", "..X..", "..X.."),
    "U": ("X...X", "X...X", "X...X", "X...X", "XXXXX"),
}


@dataclass(frozen=True)
class Surfel:
    """Discrete surface element: position, albedo, unit normal, area (m^2)."""

    position: np.ndarray
    albedo: float
    normal: np.ndarray
    area: float

    def __post_init__(self):
        pos = as_point3(self.position, "position")
        nrm = as_point3(self.normal, "normal")
        if abs(np.linalg.norm(nrm) - 1.0) > 1e-9:
            raise ValueError(f"normal must be unit length, got |n|={np.linalg.norm(nrm)}")
        if self.albedo < 0:
            raise ValueError("albedo must be >= 0")
        if not (self.area > 0):
            raise ValueError("area must be positive")
        pos.setflags(write=False)
        nrm.setflags(write=False)
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "normal", nrm)
        object.__setattr__(self, "albedo", float(self.albedo))
        object.__setattr__(self, "area", float(self.area))


def _tangent_basis(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two orthonormal vectors spanning the plane perpendicular to ``normal``."""
    helper = np.array([0.0, 1.0, 0.0]) if abs(normal[0]) > 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(helper, normal)
    u /= np.linalg.norm(u)
    v = np.cross(normal, u)
    return u, v


def make_plane_patch(
    width: float,
    height: float,
    center,
    normal=(0.0, 0.0, -1.0),
    albedo: float = 1.0,
    nu: int = 10,
    nv: int = 10,
) -> list[Surfel]:
    """Rectangular patch of nu*nv surfels; per-surfel area = total/count."""
    if width <= 0 or height <= 0 or nu < 1 or nv < 1:
        raise ValueError("plane_patch needs positive dimensions and counts")
    center = as_point3(center, "center")
    nrm = as_point3(normal, "normal")
    nrm = nrm / np.linalg.norm(nrm)
    u, v = _tangent_basis(nrm)
    area = (width * height) / (nu * nv)
    surfels = []
    for j in range(nv):
        for i in range(nu):
            a = ((i + 0.5) / nu - 0.5) * width
            b = ((j + 0.5) / nv - 0.5) * height
            surfels.append(Surfel(center + a * u + b * v, albedo, nrm, area))
    return surfels


def make_sphere_cap(
    radius: float,
    center,
    axis=(0.0, 0.0, -1.0),
    cap_angle_deg: float = 60.0,
    albedo: float = 1.0,
    n_rings: int = 8,
    n_sectors: int = 16,
) -> list[Surfel]:
    """Spherical cap around ``axis`` with outward normals.

    Surfels are placed on an equal-area lattice in (cos(theta), phi), so a
    uniform per-surfel area of cap_area/count is exact.
    """
    if radius <= 0 or not (0 < cap_angle_deg <= 90) or n_rings < 1 or n_sectors < 1:
        raise ValueError("sphere_cap needs positive radius, angle in (0, 90], counts >= 1")
    center = as_point3(center, "center")
    axis = as_point3(axis, "axis")
    axis = axis / np.linalg.norm(axis)
    u, v = _tangent_basis(axis)
    cos_cap = math.cos(math.radians(cap_angle_deg))
    cap_area = 2.0 * math.pi * radius * radius * (1.0 - cos_cap)
    area = cap_area / (n_rings * n_sectors)
    surfels = []
    for k in range(n_rings):
        cos_t = 1.0 - (k + 0.5) * (1.0 - cos_cap) / n_rings
        sin_t = math.sqrt(max(0.0, 1.0 - cos_t * cos_t))
        for j in range(n_sectors):
            phi = 2.0 * math.pi * (j + 0.5) / n_sectors
            direction = cos_t * axis + sin_t * (math.cos(phi) * u + math.sin(phi) * v)
            surfels.append(Surfel(center + radius * direction, albedo, direction, area))
    return surfels


def make_two_planes(
    width: float,
    height: float,
    depths,
    centers_xy=((-0.06, 0.0), (0.06, 0.0)),
    albedo: float = 1.0,
    nu: int = 8,
    nv: int = 8,
) -> list[Surfel]:
    """Two wall-facing patches at the given z depths."""
    z1, z2 = (float(d) for d in depths)
    (x1, y1), (x2, y2) = centers_xy
    return make_plane_patch(width, height, (x1, y1, z1), albedo=albedo, nu=nu, nv=nv) + \
        make_plane_patch(width, height, (x2, y2, z2), albedo=albedo, nu=nu, nv=nv)


def make_letter_grid(
    letter: str,
    size: float,
    center,
    albedo: float = 1.0,
    cell_subdiv: int = 2,
) -> list[Surfel]:
    """Wall-facing letter built from the lit cells of a 5x5 bitmap."""
    bitmap = _LETTER_BITMAPS.get(letter.upper())
    if bitmap is None:
        raise ValueError(f"unknown letter {letter!r}; have {sorted(_LETTER_BITMAPS)}")
    if size <= 0 or cell_subdiv < 1:
        raise ValueError("letter_grid needs positive size and cell_subdiv")
    center = as_point3(center, "center")
    cell = size / 5.0
    surfels = []
    for row, line in enumerate(bitmap):
        for col, ch in enumerate(line):
            if ch != "X":
                continue
            cx = center[0] + (col - 2) * cell
            cy = center[1] + (2 - row) * cell  # row 0 is the top of the glyph
            surfels.extend(
                make_plane_patch(
                    cell, cell, (cx, cy, center[2]),
                    albedo=albedo, nu=cell_subdiv, nv=cell_subdiv,
                )
            )
    return surfels


def make_scene(kind: str, params: dict) -> list[Surfel]:
    """Build one of the named scene kinds from a parameter mapping."""
    builders = {
        "plane_patch": make_plane_patch,
        "sphere_cap": make_sphere_cap,
        "two_planes": make_two_planes,
        "letter_grid": make_letter_grid,
    }
    if kind not in builders:
        raise ValueError(f"unknown scene kind {kind!r}; have {SCENE_KINDS}")
    return builders[kind](**params)


def render(
    surfels: list[Surfel],
    g: ScanGeometry,
    bin_length: float,
    path_offset: float,
    n_bins: int,
    photon_scale: float | None = None,
    noise_seed: int = 0,
) -> TransientVolume:
    """Ground-truth transients by direct per-surfel, per-pair accumulation.

    Each surfel adds ``albedo * max(Phi, 0) * Upsilon * area`` at its
    arrival bin (``Upsilon * area`` alone for retroreflective walls).  With
    ``photon_scale`` set, every bin value v is replaced by
    ``Poisson(v * photon_scale) / photon_scale`` using the seeded RNG.
    """
    if not (bin_length > 0):
        raise ValueError(f"bin_length must be positive, got {bin_length}")
    if n_bins < 1:
        raise ValueError("need at least one time bin")
    lasers, scans = g.pair_points()
    n_pairs = len(lasers)
    lambertian = g.falloff_mode is FalloffMode.LAMBERTIAN
    data = np.zeros((n_pairs, n_bins))
    for srf in surfels:
        px, py, pz = srf.position
        nx, ny, nz = srf.normal
        amp = srf.albedo * srf.area
        for k in range(n_pairs):
            lx, ly, lz = lasers[k]
            dxl, dyl, dzl = lx - px, ly - py, lz - pz
            dl = math.sqrt(dxl * dxl + dyl * dyl + dzl * dzl)
            sx, sy, sz = scans[k]
            dxs, dys, dzs = sx - px, sy - py, sz - pz
            ds = math.sqrt(dxs * dxs + dys * dys + dzs * dzs)
            if dl == 0.0 or ds == 0.0:
                raise DegenerateGeometryError("surfel coincides with a wall point")
            b = math.floor((dl + ds - path_offset) / bin_length)
            if not (0 <= b < n_bins):
                continue
            upsilon = 1.0 / ((dl * dl) * (ds * ds))
            if lambertian:
                phi = (dxl * nx + dyl * ny + dzl * nz) / dl
                if phi <= 0.0:
                    continue  # physical emission is one-sided
                data[k, int(b)] += amp * (phi * upsilon)
            else:
                data[k, int(b)] += amp * upsilon
    if photon_scale is not None:
        if photon_scale <= 0:
            raise ValueError("photon_scale must be positive")
        rng = np.random.default_rng(noise_seed)
        data = rng.poisson(data * photon_scale).astype(np.float64) / photon_scale
    return TransientVolume(data, bin_length, path_offset)


def surfel_arrays(surfels: list[Surfel]) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Stack a surfel list into (positions, albedos, normals, areas) arrays."""
    if not surfels:
        return (np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)), np.zeros(0))
    return (
        np.stack([s.position for s in surfels]),
        np.array([s.albedo for s in surfels]),
        np.stack([s.normal for s in surfels]),
        np.array([s.area for s in surfels]),
    )


def scene_depth_map(surfels: list[Surfel], bounds, lateral_resolution) -> DepthMap:
    """Reference depth map of a scene: nearest surfel z per lateral cell.

    Uses the same lateral grid convention as a reconstruction field over
    ``bounds``, so the result compares directly against recovered depth maps.
    """
    lo = np.asarray(bounds[0], dtype=np.float64)
    hi = np.asarray(bounds[1], dtype=np.float64)
    nx, ny = (int(n) for n in lateral_resolution)
    cell = (hi[:2] - lo[:2]) / np.array([nx, ny], dtype=np.float64)
    values = np.full((nx, ny), np.inf)
    for srf in surfels:
        ij = np.floor((srf.position[:2] - lo[:2]) / cell).astype(int)
        if 0 <= ij[0] < nx and 0 <= ij[1] < ny:
            values[ij[0], ij[1]] = min(values[ij[0], ij[1]], srf.position[2])
    valid = np.isfinite(values)
    values[~valid] = 0.0
    return DepthMap(values, valid)
