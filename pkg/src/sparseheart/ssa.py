"""Slice Shifting Algorithm: iterative in-plane motion correction.

Each slice is repeatedly aligned, by integer-pixel in-plane translation, to
the image formed by the intersections of all other slices with its plane.
The per-move optimizer is an exhaustive search over a square pixel window,
so every applied shift is the global SSD minimum for that window.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NoIntersections
from .slicing import SliceLabelMap, SliceStack

DEFAULT_MAX_ITERS = 5
DEFAULT_WINDOW_PX = 10


@dataclass(frozen=True)
class IntersectionImage:
    """Labels from other slices resampled onto one slice's pixel lattice.

    ``valid`` marks pixels that lie within half a pixel spacing of at least
    one other slice's plane (and inside its extent); where several slices
    contribute, the nearest plane wins.
    """

    labels: np.ndarray  # uint8, moving-slice lattice
    valid: np.ndarray  # bool, same shape


@dataclass
class ShiftState:
    """Per-slice shift bookkeeping for one SSA run.

    Shifts are integer pixel pairs; cumulative shifts are the exact sum of
    the per-iteration log.
    """

    per_iteration_px: list = field(default_factory=list)  # [iter][slice] -> (di, dj)
    ssd_per_iteration: list = field(default_factory=list)  # total SSD before each iter
    iterations: int = 0
    converged: bool = False
    drift_px: list = field(default_factory=list)  # [slice] -> (di, dj) gauge fix
    drift_mm: tuple = (0.0, 0.0, 0.0)  # estimated common-mode 3D translation

    def cumulative_px(self, n_slices: int) -> list[tuple[int, int]]:
        total = [(0, 0)] * n_slices
        for it in self.per_iteration_px:
            total = [(a + da, b + db) for (a, b), (da, db) in zip(total, it)]
        if self.drift_px:
            total = [
                (a + da, b + db) for (a, b), (da, db) in zip(total, self.drift_px)
            ]
        return total


def build_intersection(stack: SliceStack, moving_index: int) -> IntersectionImage:
    """Resample all other slices' labels onto the moving slice's lattice.

    A moving pixel is valid when its 3D position lies within half a pixel
    spacing of another slice's plane and inside that slice's extent;
    contributors are resolved by nearest plane distance.
    """
    if len(stack) < 2:
        raise ValueError("intersection needs a stack with at least 2 slices")
    moving = stack.slices[moving_index]
    pts = moving.plane.pixel_positions()  # (w, h, 3)
    flat = pts.reshape(-1, 3)
    best_dist = np.full(flat.shape[0], np.inf)
    labels = np.zeros(flat.shape[0], dtype=np.uint8)
    for j, other in enumerate(stack.slices):
        if j == moving_index:
            continue
        plane = other.plane
        rel = flat - plane.origin_vec
        d = np.abs(rel @ plane.normal)
        sel = d <= 0.5 * plane.in_plane_spacing
        if not np.any(sel):
            continue
        w, h = plane.extent
        a = rel[sel] @ plane.u_vec / plane.in_plane_spacing + (w - 1) / 2.0
        b = rel[sel] @ plane.v_vec / plane.in_plane_spacing + (h - 1) / 2.0
        ia = np.rint(a).astype(np.int64)
        ib = np.rint(b).astype(np.int64)
        ok = (ia >= 0) & (ia < w) & (ib >= 0) & (ib < h)
        idx = np.flatnonzero(sel)[ok]
        closer = d[idx] < best_dist[idx]
        idx = idx[closer]
        labels[idx] = other.pixels[ia[ok][closer], ib[ok][closer]]
        best_dist[idx] = d[idx]
    valid = np.isfinite(best_dist)
    if not np.any(valid):
        raise NoIntersections(
            f"slice {moving_index} has no intersection with any other slice"
        )
    shape = moving.pixels.shape
    return IntersectionImage(labels=labels.reshape(shape), valid=valid.reshape(shape))


def ssd_at_shift(
    moving: SliceLabelMap, inter: IntersectionImage, shift: tuple[int, int]
) -> float:
    """One-hot SSD between the shifted moving labels and the intersection
    labels over valid pixels; pixels shifted outside compare as background."""
    di, dj = int(shift[0]), int(shift[1])
    grid = _ssd_over_window(moving.pixels, inter, max(abs(di), abs(dj)))
    w = (grid.shape[0] - 1) // 2
    return float(grid[di + w, dj + w])


def _ssd_over_window(
    pixels: np.ndarray, inter: IntersectionImage, window_px: int
) -> np.ndarray:
    """SSD for every integer shift in the +-window square.

    Labels differ -> the one-hot squared difference contributes 2, so
    SSD = 2 * mismatch count on the valid mask.
    """
    w = int(window_px)
    xi, yi = np.nonzero(inter.valid)
    target = inter.labels[xi, yi]
    padded = np.zeros(
        (pixels.shape[0] + 2 * w, pixels.shape[1] + 2 * w), dtype=np.uint8
    )
    padded[w : w + pixels.shape[0], w : w + pixels.shape[1]] = pixels
    shifts = np.arange(-w, w + 1)
    # moved(i, j) = pixels[i - di, j - dj]
    gi = xi[None, :] - shifts[:, None] + w  # (2w+1, npix)
    out = np.empty((2 * w + 1, 2 * w + 1), dtype=np.int64)
    for kj, dj in enumerate(shifts):
        gj = yi[None, :] - dj + w
        vals = padded[gi, gj]  # (2w+1, npix)
        out[:, kj] = 2 * np.count_nonzero(vals != target[None, :], axis=1)
    return out


def best_shift(
    moving: SliceLabelMap, inter: IntersectionImage, window_px: int
) -> tuple[int, int]:
    """Argmin of SSD over the window; ties prefer the smaller L2 norm, then
    lexicographic (di, dj) order."""
    grid = _ssd_over_window(moving.pixels, inter, window_px)
    shifts = np.arange(-window_px, window_px + 1)
    di, dj = np.meshgrid(shifts, shifts, indexing="ij")
    flat = np.stack(
        [grid.ravel(), (di**2 + dj**2).ravel(), di.ravel(), dj.ravel()], axis=1
    )
    order = np.lexsort((flat[:, 3], flat[:, 2], flat[:, 1], flat[:, 0]))
    k = order[0]
    return int(flat[k, 2]), int(flat[k, 3])


def total_stack_ssd(stack: SliceStack) -> float:
    """Sum over slices of the zero-shift SSD against their intersections;
    slices without intersections contribute 0."""
    total = 0.0
    for i in range(len(stack)):
        try:
            inter = build_intersection(stack, i)
        except NoIntersections:
            continue
        total += ssd_at_shift(stack.slices[i], inter, (0, 0))
    return total


def _remove_common_drift(
    stack: SliceStack, state: ShiftState
) -> tuple[SliceStack, ShiftState]:
    """Gauge fix: mutual alignment leaves a near-flat mode where every slice
    slides by the in-plane projection of one 3D translation. Such coherent
    drift keeps intersections consistent but makes the stack show stale
    cross-sections (each plane still carries its original section), which
    corrupts any 3D reconstruction built from it. Estimate that translation
    from the corrections actually applied (least squares over per-slice
    projections) and subtract its integer-pixel projection from every slice.
    """
    cumulative = state.cumulative_px(len(stack))
    if all(c == (0, 0) for c in cumulative):
        return stack, state
    rows = np.asarray(
        [vec for sl in stack.slices for vec in (sl.plane.u_vec, sl.plane.v_vec)]
    )
    rhs = np.asarray(
        [
            comp * sl.plane.in_plane_spacing
            for sl, c in zip(stack.slices, cumulative)
            for comp in c
        ]
    )
    t, *_ = np.linalg.lstsq(rows, rhs, rcond=None)
    # outlier guard: when a few isolated corrections (genuinely misplaced
    # slices, not a shared drift) dominate the fit, dropping them should
    # collapse the residual of the remaining slices to ~0. Only in that
    # case prefer the trimmed fit; otherwise the spread is ordinary
    # per-slice corruption and the full fit is the common mode.
    resid = rhs - rows @ t
    per_slice = np.hypot(resid[0::2], resid[1::2])
    keep = per_slice <= 4.0 * np.median(per_slice)
    if 2 <= keep.sum() < len(per_slice):
        mask = np.repeat(keep, 2)
        t_trim, *_ = np.linalg.lstsq(rows[mask], rhs[mask], rcond=None)
        resid_trim = rhs[mask] - rows[mask] @ t_trim
        kept_norm = np.hypot(resid_trim[0::2], resid_trim[1::2])
        if np.median(kept_norm) < 0.25 * np.median(per_slice):
            t = t_trim
    state.drift_mm = tuple(float(x) for x in t)
    drift: list[tuple[int, int]] = []
    for i, sl in enumerate(stack.slices):
        sp = sl.plane.in_plane_spacing
        di = -int(np.rint(float(t @ sl.plane.u_vec) / sp))
        dj = -int(np.rint(float(t @ sl.plane.v_vec) / sp))
        drift.append((di, dj))
        if (di, dj) != (0, 0):
            stack = stack.with_slice(i, sl.shifted(di * sp, dj * sp))
    state.drift_px = drift
    return stack, state


def correct(
    stack: SliceStack,
    max_iters: int = DEFAULT_MAX_ITERS,
    window_px: int = DEFAULT_WINDOW_PX,
    remove_drift: bool = True,
) -> tuple[SliceStack, ShiftState]:
    """Run SSA: per iteration, visit slices in stack order (LAX first, then
    SAX base to apex), apply each slice's SSD-minimizing integer-pixel shift
    immediately, and stop after an all-zero iteration or max_iters. A final
    gauge-fixing pass removes the common-mode translation of the applied
    corrections (see _remove_common_drift); disable with remove_drift=False.
    """
    if len(stack) == 0:
        raise ValueError("empty stack")
    state = ShiftState()
    for _ in range(max_iters):
        state.ssd_per_iteration.append(total_stack_ssd(stack))
        iter_shifts: list[tuple[int, int]] = []
        for i in range(len(stack)):
            sl = stack.slices[i]
            try:
                inter = build_intersection(stack, i)
            except (NoIntersections, ValueError):
                iter_shifts.append((0, 0))
                continue
            di, dj = best_shift(sl, inter, window_px)
            iter_shifts.append((di, dj))
            if (di, dj) != (0, 0):
                sp = sl.plane.in_plane_spacing
                stack = stack.with_slice(i, sl.shifted(di * sp, dj * sp))
        state.per_iteration_px.append(iter_shifts)
        state.iterations += 1
        if all(s == (0, 0) for s in iter_shifts):
            state.converged = True
            break
    if remove_drift:
        stack, state = _remove_common_drift(stack, state)
    return stack, state
