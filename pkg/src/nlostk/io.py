"""On-disk formats: transient bundles, volume and depth-map files, PGM/PNG
images, ascii PLY point clouds, and trace CSVs.

A "bundle" is a pair of sibling files sharing a base path: ``<base>.json``
(metadata sidecar) plus ``<base>.raw`` (little-endian float32, C order).
JSON floats use shortest round-trip formatting, so write -> read -> write
reproduces files byte for byte.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable

import numpy as np
from PIL import Image

from .evaluate import DepthMap, PointCloud
from .geometry import FalloffMode, Pairing, ScanGeometry, TransientVolume
from .optim import TraceRecord

BUNDLE_VERSION = 1


def _base_path(path) -> Path:
    p = Path(path)
    if p.suffix in (".json", ".raw"):
        p = p.with_suffix("")
    return p


def _write_raw(path: Path, array: np.ndarray) -> None:
    np.asarray(array, dtype="<f4").tofile(path)


def _read_raw(path: Path, shape: tuple[int, ...]) -> np.ndarray:
    data = np.fromfile(path, dtype="<f4")
    expected = int(np.prod(shape))
    if data.size != expected:
        raise ValueError(f"{path}: expected {expected} float32 values, found {data.size}")
    return data.reshape(shape).astype(np.float64)


def _write_sidecar(path: Path, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _read_sidecar(path: Path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def write_transient_bundle(path, tv: TransientVolume, g: ScanGeometry) -> Path:
    """Write a transient bundle; returns the base path used."""
    if tv.n_pairs != g.n_pairs:
        raise ValueError(f"volume has {tv.n_pairs} pairs but geometry defines {g.n_pairs}")
    base = _base_path(path)
    geometry = {
        "confocal": g.confocal,
        "pairing": g.pairing.value,
        "falloff_mode": g.falloff_mode.value,
        "laser_points": g.laser_points.tolist(),
        "scan_points": g.scan_points.tolist(),
        "laser_grid_shape": list(g.laser_grid_shape) if g.laser_grid_shape else None,
        "scan_grid_shape": list(g.scan_grid_shape) if g.scan_grid_shape else None,
    }
    doc = {
        "version": BUNDLE_VERSION,
        "kind": "transients",
        "shape": [tv.n_pairs, tv.n_bins],
        "bin_length_m": tv.bin_length,
        "path_offset_m": tv.path_offset,
        "geometry": geometry,
    }
    _write_sidecar(base.with_suffix(".json"), doc)
    _write_raw(base.with_suffix(".raw"), tv.data)
    return base


def read_transient_bundle(path) -> tuple[TransientVolume, ScanGeometry]:
    base = _base_path(path)
    doc = _read_sidecar(base.with_suffix(".json"))
    if doc.get("kind", "transients") != "transients":
        raise ValueError(f"{base}: not a transient bundle (kind={doc.get('kind')!r})")
    shape = tuple(int(n) for n in doc["shape"])
    geo = doc["geometry"]
    g = ScanGeometry(
        laser_points=np.asarray(geo["laser_points"], dtype=np.float64),
        scan_points=np.asarray(geo["scan_points"], dtype=np.float64),
        confocal=bool(geo["confocal"]),
        falloff_mode=FalloffMode(geo["falloff_mode"]),
        pairing=Pairing(geo["pairing"]),
        laser_grid_shape=tuple(geo["laser_grid_shape"]) if geo.get("laser_grid_shape") else None,
        scan_grid_shape=tuple(geo["scan_grid_shape"]) if geo.get("scan_grid_shape") else None,
    )
    data = _read_raw(base.with_suffix(".raw"), shape)
    tv = TransientVolume(data, float(doc["bin_length_m"]), float(doc["path_offset_m"]))
    if tv.n_pairs != g.n_pairs:
        raise ValueError(f"{base}: sidecar shape inconsistent with geometry pairing")
    return tv, g


def write_volume(path, volume: np.ndarray, origin, extent, extra: dict | None = None) -> Path:
    """Write an (nx, ny, nz) scalar volume with its bounding-box metadata."""
    vol = np.asarray(volume, dtype=np.float64)
    if vol.ndim != 3:
        raise ValueError(f"expected a 3-D volume, got shape {vol.shape}")
    base = _base_path(path)
    doc = {
        "version": BUNDLE_VERSION,
        "kind": "volume",
        "shape": list(vol.shape),
        "origin_m": [float(v) for v in origin],
        "extent_m": [float(v) for v in extent],
    }
    if extra:
        doc.update(extra)
    _write_sidecar(base.with_suffix(".json"), doc)
    _write_raw(base.with_suffix(".raw"), vol)
    return base


def read_volume(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    base = _base_path(path)
    doc = _read_sidecar(base.with_suffix(".json"))
    if doc.get("kind") != "volume":
        raise ValueError(f"{base}: not a volume file (kind={doc.get('kind')!r})")
    shape = tuple(int(n) for n in doc["shape"])
    vol = _read_raw(base.with_suffix(".raw"), shape)
    return vol, np.asarray(doc["origin_m"]), np.asarray(doc["extent_m"])


def write_depth_map(path, dm: DepthMap) -> Path:
    """Write a depth map; invalid pixels are stored as NaN."""
    base = _base_path(path)
    doc = {
        "version": BUNDLE_VERSION,
        "kind": "depth_map",
        "shape": list(dm.shape),
    }
    values = np.where(dm.valid, dm.values, np.nan)
    _write_sidecar(base.with_suffix(".json"), doc)
    _write_raw(base.with_suffix(".raw"), values)
    return base


def read_depth_map(path) -> DepthMap:
    base = _base_path(path)
    doc = _read_sidecar(base.with_suffix(".json"))
    if doc.get("kind") != "depth_map":
        raise ValueError(f"{base}: not a depth-map file (kind={doc.get('kind')!r})")
    shape = tuple(int(n) for n in doc["shape"])
    raw = np.fromfile(base.with_suffix(".raw"), dtype="<f4")
    if raw.size != int(np.prod(shape)):
        raise ValueError(f"{base}: raw size does not match sidecar shape")
    values = raw.reshape(shape).astype(np.float64)
    valid = np.isfinite(values)
    values = np.where(valid, values, 0.0)
    return DepthMap(values, valid)


def file_kind(path) -> str:
    """Peek at a bundle sidecar and report its kind."""
    return str(_read_sidecar(_base_path(path).with_suffix(".json")).get("kind", "transients"))


def _normalize_u16(img: np.ndarray) -> np.ndarray:
    """Min-max normalize to the 16-bit range; constant images map to zeros."""
    arr = np.asarray(img, dtype=np.float64)
    lo, hi = arr.min(), arr.max()
    if hi <= lo:
        return np.zeros(arr.shape, dtype=np.uint16)
    scaled = np.rint((arr - lo) / (hi - lo) * 65535.0)
    return scaled.astype(np.uint16)


def write_image(img: np.ndarray, path, format: str | None = None) -> None:
    """Write a 2-D array as a 16-bit grayscale PGM or PNG image.

    Values are min-max normalized to 0-65535.  The array is indexed
    (ix, iy); image rows run along y, so the file has height ny, width nx.
    """
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {arr.shape}")
    fmt = (format or Path(path).suffix.lstrip(".")).lower()
    pixels = _normalize_u16(arr).T  # rows = y
    try:
        if fmt == "pgm":
            with open(path, "wb") as fh:
                fh.write(f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n65535\n".encode("ascii"))
                fh.write(pixels.astype(">u2").tobytes())
        elif fmt == "png":
            Image.fromarray(pixels, mode="I;16").save(path, format="PNG")
        else:
            raise ValueError(f"unsupported image format {fmt!r} (use pgm or png)")
    except OSError as exc:
        raise OSError(f"failed writing image {path}: {exc}") from exc


def write_ply(cloud: PointCloud, path) -> None:
    """Ascii PLY with x y z nx ny nz intensity per vertex."""
    try:
        with open(path, "w", encoding="ascii") as fh:
            fh.write("ply\nformat ascii 1.0\n")
            fh.write(f"element vertex {len(cloud)}\n")
            for prop in ("x", "y", "z", "nx", "ny", "nz", "intensity"):
                fh.write(f"property float {prop}\n")
            fh.write("end_header\n")
            for p, n, a in zip(cloud.points, cloud.normals, cloud.intensities):
                fh.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g} {n[0]:.9g} {n[1]:.9g} {n[2]:.9g} {a:.9g}\n")
    except OSError as exc:
        raise OSError(f"failed writing point cloud {path}: {exc}") from exc


def write_csv(trace: Iterable[TraceRecord], path, zero_timings: bool = False) -> None:
    """Trace CSV with header step,loss,active_ratio,iter_seconds.

    ``zero_timings`` writes 0.0 in the timing column so repeated runs with
    the same seed produce byte-identical files.
    """
    try:
        with open(path, "w", newline="", encoding="ascii") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "loss", "active_ratio", "iter_seconds"])
            for rec in trace:
                secs = 0.0 if zero_timings else rec.iter_seconds
                writer.writerow([rec.step, repr(rec.loss), repr(rec.active_ratio), repr(secs)])
    except OSError as exc:
        raise OSError(f"failed writing trace {path}: {exc}") from exc
