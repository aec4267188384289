"""Reconstruction driver: Adam-based transient fitting with periodic soft
domain reduction and coarse-to-fine grid expansion.

Each step draws one random point per active bin, interpolates the vertex
variables to the points, synthesizes predicted transients, and pushes the
sum-of-squares residual gradient back through the exact adjoint to the
vertices.  Every ``reduction_period`` steps the per-bin albedo is blurred
with a small Gaussian and bins below a relative threshold are deactivated;
at scheduled steps the grid is subdivided and variables are interpolated
onto the finer lattice.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates

from . import forward, sampling
from .errors import EmptyDomainError, ReconstructionAborted
from .geometry import Pairing, ScanGeometry, TransientVolume, grid_kept_indices, subsample_geometry
from .grid import ActiveDomain, VoxelField, vertex_to_bin_mean


@dataclass
class ReconstructionConfig:
    """Schedules, thresholds and seeds for the reconstruction loop.

    Defaults: learning rate 0.1, domain reduction every 50 steps at 2% of
    the maximum blurred albedo, a 2000-step budget, and a 16 -> 32 -> 64
    resolution ladder with expansions at steps 300 and 800.
    """

    steps_total: int = 2000
    learning_rate: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    reduction_period: int = 50
    reduction_threshold_frac: float = 0.02
    blur_sigma_bins: float = 1.0
    blur_kernel_radius: int = 1
    resolution_ladder: tuple[tuple[int, int, int], ...] = (
        (16, 16, 16),
        (32, 32, 32),
        (64, 64, 64),
    )
    expansion_steps: tuple[int, ...] = (300, 800)
    transient_coarse_to_fine: tuple[tuple[int, int], ...] | None = None
    falloff_terms: str = "both"
    init_rho: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        if self.steps_total < 1:
            raise ValueError("steps_total must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise ValueError("adam betas must lie in [0, 1)")
        if self.adam_eps <= 0:
            raise ValueError("adam_eps must be positive")
        if self.reduction_period < 1:
            raise ValueError("reduction_period must be >= 1")
        if not (0.0 < self.reduction_threshold_frac < 1.0):
            raise ValueError("reduction_threshold_frac must lie in (0, 1)")
        if self.blur_sigma_bins <= 0:
            raise ValueError("blur_sigma_bins must be positive")
        if self.blur_kernel_radius < 0:
            raise ValueError("blur_kernel_radius must be >= 0")
        ladder = tuple(tuple(int(n) for n in res) for res in self.resolution_ladder)
        if not ladder or any(len(res) != 3 or min(res) < 1 for res in ladder):
            raise ValueError("resolution_ladder must contain (nx, ny, nz) triples")
        for coarse, fine in zip(ladder, ladder[1:]):
            if not all(f > c for f, c in zip(fine, coarse)):
                raise ValueError("resolution_ladder must increase strictly per axis")
        steps = tuple(int(s) for s in self.expansion_steps)
        if len(steps) != len(ladder) - 1:
            raise ValueError("need exactly one expansion step per ladder rung after the first")
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError("expansion_steps must be strictly increasing")
        if steps and (steps[0] < 1 or steps[-1] >= self.steps_total):
            raise ValueError("expansion_steps must lie inside [1, steps_total)")
        if self.transient_coarse_to_fine is not None:
            for stride, until in self.transient_coarse_to_fine:
                if stride < 1 or until < 1:
                    raise ValueError("transient ladder entries must be positive")
        if self.falloff_terms not in forward.FALLOFF_TERMS:
            raise ValueError(f"falloff_terms must be one of {forward.FALLOFF_TERMS}")
        if self.init_rho <= 0:
            raise ValueError("init_rho must be positive or the first reduction prunes everything")


@dataclass
class AdamState:
    """First/second moment accumulators for the vertex variables."""

    m_rho: np.ndarray
    v_rho: np.ndarray
    m_normal: np.ndarray
    v_normal: np.ndarray
    step_count: int = 0

    @classmethod
    def zeros(cls, field: VoxelField) -> "AdamState":
        return cls(
            m_rho=np.zeros_like(field.rho),
            v_rho=np.zeros_like(field.rho),
            m_normal=np.zeros_like(field.normal),
            v_normal=np.zeros_like(field.normal),
        )


@dataclass(frozen=True)
class TraceRecord:
    """Per-step progress record emitted by the reconstruction loop."""

    step: int
    loss: float
    active_ratio: float
    iter_seconds: float


def loss(predicted: TransientVolume, measured: TransientVolume) -> float:
    """Sum of squared element-wise differences between two volumes."""
    if predicted.data.shape != measured.data.shape:
        raise ValueError(
            f"volume shapes differ: {predicted.data.shape} vs {measured.data.shape}"
        )
    diff = predicted.data - measured.data
    return float(np.dot(diff.ravel(), diff.ravel()))


def adam_step(
    field: VoxelField,
    grads: tuple[np.ndarray, np.ndarray],
    state: AdamState,
    cfg: ReconstructionConfig,
) -> None:
    """One bias-corrected Adam update on rho and normal, in place.

    Albedo is projected to max(rho, 0) afterwards so the field invariant
    rho >= 0 always holds.
    """
    g_rho, g_n = grads
    if g_rho.shape != field.rho.shape or g_n.shape != field.normal.shape:
        raise ValueError("gradient shapes do not match the field")
    state.step_count += 1
    t = state.step_count
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for param, grad, m, v in (
        (field.rho, g_rho, state.m_rho, state.v_rho),
        (field.normal, g_n, state.m_normal, state.v_normal),
    ):
        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * grad * grad
        param -= cfg.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + cfg.adam_eps)
    np.maximum(field.rho, 0.0, out=field.rho)


def reduce_active_mask(
    bin_albedo: np.ndarray,
    mask: np.ndarray,
    threshold_frac: float,
    blur_sigma_bins: float,
    blur_kernel_radius: int,
) -> np.ndarray:
    """Blur the masked per-bin albedo and keep bins above the relative threshold.

    Inactive bins contribute zero to the blur (zero-padded borders too).
    A bin survives iff its blurred value is positive and reaches
    ``threshold_frac`` of the maximum blurred value; zero-albedo regions are
    always prunable, so a fully collapsed field yields an empty mask.
    The active set never gains bins.
    """
    masked = np.where(mask, bin_albedo, 0.0)
    if blur_kernel_radius > 0:
        blurred = gaussian_filter(
            masked, sigma=blur_sigma_bins, mode="constant", cval=0.0,
            radius=blur_kernel_radius,
        )
    else:
        blurred = masked
    peak = blurred.max() if blurred.size else 0.0
    return mask & (blurred > 0.0) & (blurred >= threshold_frac * peak)


def soft_domain_reduction(
    field: VoxelField, domain: ActiveDomain, cfg: ReconstructionConfig
) -> ActiveDomain:
    """Deactivate bins whose blurred albedo falls below the relative threshold."""
    if domain.resolution != field.resolution:
        raise ValueError("field and domain resolutions disagree")
    new_mask = reduce_active_mask(
        vertex_to_bin_mean(field.rho),
        domain.mask,
        cfg.reduction_threshold_frac,
        cfg.blur_sigma_bins,
        cfg.blur_kernel_radius,
    )
    if not new_mask.any():
        raise EmptyDomainError("domain reduction deactivated every bin")
    return ActiveDomain(new_mask)


def expand_grid(
    field: VoxelField, domain: ActiveDomain, new_resolution
) -> tuple[VoxelField, ActiveDomain]:
    """Subdivide the grid to ``new_resolution`` (integer multiple per axis).

    New vertex values are trilinear interpolations of the coarse field;
    every active coarse bin activates all of its children.
    """
    new_res = tuple(int(n) for n in new_resolution)
    old_res = field.resolution
    factors = []
    for new_n, old_n in zip(new_res, old_res):
        if new_n % old_n != 0 or new_n < old_n:
            raise ValueError(
                f"new resolution {new_res} is not an integer multiple of {old_res}"
            )
        factors.append(new_n // old_n)
    # i * old / new (not i * (old/new)) so shared lattice points map exactly
    axes = [
        np.arange(new_n + 1, dtype=np.float64) * old_n / new_n
        for new_n, old_n in zip(new_res, old_res)
    ]
    cx, cy, cz = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([cx.ravel(), cy.ravel(), cz.ravel()])
    vshape = tuple(n + 1 for n in new_res)
    rho = map_coordinates(field.rho, coords, order=1, mode="nearest").reshape(vshape)
    normal = np.empty(vshape + (3,))
    for c in range(3):
        normal[..., c] = map_coordinates(
            field.normal[..., c], coords, order=1, mode="nearest"
        ).reshape(vshape)
    new_field = VoxelField(field.origin, field.extent, new_res, rho, normal)
    mask = domain.mask
    for axis, f in enumerate(factors):
        mask = np.repeat(mask, f, axis=axis)
    return new_field, ActiveDomain(mask)


def downsample_transients(
    tv: TransientVolume, g: ScanGeometry, stride: int
) -> tuple[TransientVolume, ScanGeometry]:
    """Keep every stride-th measurement pair per wall-grid axis.

    Pure subsampling (no averaging), consistent with ``subsample_geometry``;
    used by the optional spatial coarse-to-fine schedule on the transients.
    """
    if tv.n_pairs != g.n_pairs:
        raise ValueError(f"volume has {tv.n_pairs} pairs, geometry {g.n_pairs}")
    if stride == 1:
        return tv, g
    g2 = subsample_geometry(g, stride)
    if g.pairing is Pairing.PAIRED:
        kept = grid_kept_indices(g.laser_grid_shape, stride)
    else:
        kept_l = grid_kept_indices(g.laser_grid_shape, stride)
        kept_s = grid_kept_indices(g.scan_grid_shape, stride)
        kept = (kept_l[:, None] * g.n_scans + kept_s[None, :]).ravel()
    return TransientVolume(tv.data[kept], tv.bin_length, tv.path_offset), g2


def initial_normal(volume_center: np.ndarray, wall_centroid: np.ndarray) -> np.ndarray:
    """Unit vector from the hidden-volume center toward the relay wall."""
    d = wall_centroid - volume_center
    norm = np.linalg.norm(d)
    if norm == 0.0:
        return np.array([0.0, 0.0, -1.0])
    return d / norm


def _transient_ladder(
    measured: TransientVolume,
    g: ScanGeometry,
    schedule: Sequence[tuple[int, int]] | None,
    steps_total: int,
) -> list[tuple[int, TransientVolume, ScanGeometry]]:
    """Materialize the optional transient coarse-to-fine levels.

    Returns (last step of level, volume, geometry) tuples in step order,
    always ending with the full-resolution level.
    """
    levels: list[tuple[int, TransientVolume, ScanGeometry]] = []
    if schedule:
        for stride, until in sorted(schedule, key=lambda e: e[1]):
            tv2, g2 = downsample_transients(measured, g, stride)
            levels.append((int(until), tv2, g2))
    levels.append((steps_total, measured, g))
    return levels


def reconstruct(
    measured: TransientVolume,
    g: ScanGeometry,
    bounds,
    cfg: ReconstructionConfig,
    progress_sink: Callable[[TraceRecord], None] | None = None,
    threads: int = 1,
) -> tuple[VoxelField, ActiveDomain, list[TraceRecord]]:
    """Reconstruct albedo and normals of the hidden volume inside ``bounds``.

    ``bounds`` is the (lo, hi) corner pair of the hidden-volume box.  Each
    trace record reports the loss and the active ratio the step ran with;
    records are appended to the returned list and forwarded to
    ``progress_sink`` as they are produced.

    Raises ``ReconstructionAborted`` (carrying the last state and trace) if
    the domain empties or the loss turns non-finite.
    """
    cfg.validate()
    if measured.n_pairs != g.n_pairs:
        raise ValueError(
            f"measured volume has {measured.n_pairs} pairs, geometry defines {g.n_pairs}"
        )
    lo = np.asarray(bounds[0], dtype=np.float64)
    hi = np.asarray(bounds[1], dtype=np.float64)
    extent = hi - lo
    if lo.shape != (3,) or hi.shape != (3,) or np.any(extent <= 0):
        raise ValueError(f"bounds must enclose a positive volume, got lo={lo}, hi={hi}")

    ladder = [tuple(int(n) for n in res) for res in cfg.resolution_ladder]
    field = VoxelField.uniform(
        lo, extent, ladder[0], cfg.init_rho,
        initial_normal(lo + 0.5 * extent, g.wall_centroid()),
    )
    domain = ActiveDomain.full(ladder[0])
    state = AdamState.zeros(field)
    levels = _transient_ladder(measured, g, cfg.transient_coarse_to_fine, cfg.steps_total)
    expansion_at = {step: res for step, res in zip(cfg.expansion_steps, ladder[1:])}
    trace: list[TraceRecord] = []

    def emit(record: TraceRecord) -> None:
        trace.append(record)
        if progress_sink is not None:
            progress_sink(record)

    level_idx = 0
    for step in range(1, cfg.steps_total + 1):
        t0 = time.perf_counter()
        while level_idx < len(levels) - 1 and step > levels[level_idx][0]:
            level_idx += 1
        _, meas_eff, g_eff = levels[level_idx]
        active_ratio = domain.active_ratio

        batch = sampling.stratified_sample(field, domain, sampling.mix_seed(cfg.seed, step))
        rho_p, n_p = sampling.interpolate(field, batch)
        predicted = forward.synthesize(
            batch.positions, rho_p, n_p, g_eff, field.cell_volume,
            meas_eff.bin_length, meas_eff.path_offset, meas_eff.n_bins,
            falloff_terms=cfg.falloff_terms, threads=threads,
        )
        step_loss = loss(predicted, meas_eff)
        if not np.isfinite(step_loss):
            emit(TraceRecord(step, step_loss, active_ratio, time.perf_counter() - t0))
            raise ReconstructionAborted(
                f"non-finite loss at step {step}", field, domain, trace
            )
        residual = TransientVolume(
            2.0 * (predicted.data - meas_eff.data), meas_eff.bin_length, meas_eff.path_offset
        )
        point_grads = forward.adjoint(
            residual, batch.positions, rho_p, n_p, g_eff, field.cell_volume,
            falloff_terms=cfg.falloff_terms, threads=threads,
        )
        grads = sampling.scatter_gradients(batch, point_grads, field.resolution)
        adam_step(field, grads, state, cfg)

        if step % cfg.reduction_period == 0:
            try:
                domain = soft_domain_reduction(field, domain, cfg)
            except EmptyDomainError:
                emit(TraceRecord(step, step_loss, active_ratio, time.perf_counter() - t0))
                raise ReconstructionAborted(
                    f"domain emptied at step {step}", field, domain, trace
                ) from None
        if step in expansion_at:
            field, domain = expand_grid(field, domain, expansion_at[step])
            state = AdamState.zeros(field)  # moment shapes change; no carry-over
        emit(TraceRecord(step, step_loss, active_ratio, time.perf_counter() - t0))
    return field, domain, trace
