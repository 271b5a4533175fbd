"""SAX/LAX slice planning, extraction, breath-hold corruption and
rasterization of a slice stack back into a sparse volume.

A slice plane's pixel (i, j) sits at

    origin + (i - (w-1)/2) * spacing * u_axis + (j - (h-1)/2) * spacing * v_axis

so ``origin`` is always the center of the pixel lattice. In-plane motion is
modelled by translating the plane origin (pixel arrays are never resampled);
``applied_shift`` accumulates the (du, dv) mm translation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import nifti
from .errors import EmptyPlan
from .grids import CardiacFrame, Grid3, LabelVolume, sample_labels

LAX_VIEWS = ("LAX2CH", "LAX3CH", "LAX4CH")
LAX_ANGLES_DEG = {"LAX2CH": 0.0, "LAX3CH": 60.0, "LAX4CH": 120.0}
DEFAULT_IN_PLANE_SPACING = 1.25
DEFAULT_HEART_EXTENT = 200.0
DEFAULT_SAX_SPACING = 10.0
DEFAULT_SAX_COUNT = 10
DEFAULT_INPLANE_RANGE = 8.0
DEFAULT_PLAN_RANGE = 2.0

CoverageMask = np.ndarray  # bool array on a Grid3 lattice


@dataclass(frozen=True)
class SlicePlane:
    origin: tuple[float, float, float]
    u_axis: tuple[float, float, float]
    v_axis: tuple[float, float, float]
    in_plane_spacing: float
    extent: tuple[int, int]
    view: str  # "SAX<k>" or one of LAX_VIEWS

    def __post_init__(self):
        u = np.asarray(self.u_axis, float)
        v = np.asarray(self.v_axis, float)
        if abs(np.linalg.norm(u) - 1) > 1e-8 or abs(np.linalg.norm(v) - 1) > 1e-8:
            raise ValueError("plane axes must be unit vectors")
        if abs(u @ v) > 1e-9:
            raise ValueError("plane axes must be orthogonal")

    @property
    def normal(self) -> np.ndarray:
        return np.cross(self.u_axis, self.v_axis)

    @property
    def u_vec(self) -> np.ndarray:
        return np.asarray(self.u_axis, float)

    @property
    def v_vec(self) -> np.ndarray:
        return np.asarray(self.v_axis, float)

    @property
    def origin_vec(self) -> np.ndarray:
        return np.asarray(self.origin, float)

    def pixel_positions(self) -> np.ndarray:
        """mm position of every pixel center, shape extent + (3,)."""
        w, h = self.extent
        ii = (np.arange(w) - (w - 1) / 2.0) * self.in_plane_spacing
        jj = (np.arange(h) - (h - 1) / 2.0) * self.in_plane_spacing
        return (
            self.origin_vec
            + ii[:, None, None] * self.u_vec
            + jj[None, :, None] * self.v_vec
        )

    def translated(self, du_mm: float, dv_mm: float) -> "SlicePlane":
        origin = self.origin_vec + du_mm * self.u_vec + dv_mm * self.v_vec
        return replace(self, origin=tuple(origin))


@dataclass(frozen=True)
class SliceLabelMap:
    plane: SlicePlane
    pixels: np.ndarray  # 2D uint8 channel indices, shape = plane.extent
    applied_shift: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.uint8)
        if px.shape != tuple(self.plane.extent):
            raise ValueError("pixel array shape does not match plane extent")
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)
        if not np.all(np.isfinite(self.applied_shift)):
            raise ValueError("applied_shift must be finite")

    def shifted(self, du_mm: float, dv_mm: float) -> "SliceLabelMap":
        return SliceLabelMap(
            plane=self.plane.translated(du_mm, dv_mm),
            pixels=self.pixels,
            applied_shift=(
                self.applied_shift[0] + du_mm,
                self.applied_shift[1] + dv_mm,
            ),
        )


@dataclass(frozen=True)
class SliceStack:
    """Ordered slices: LAX views first, then SAX base-to-apex."""

    slices: tuple[SliceLabelMap, ...]
    channels: int

    def __post_init__(self):
        object.__setattr__(self, "slices", tuple(self.slices))
        n_sax = sum(1 for s in self.slices if s.plane.view.startswith("SAX"))
        if n_sax < 1:
            raise ValueError("a stack needs at least one SAX slice")
        seen_sax = False
        for s in self.slices:
            if s.plane.view.startswith("SAX"):
                seen_sax = True
            elif seen_sax:
                raise ValueError("LAX views must precede SAX slices")

    def __len__(self) -> int:
        return len(self.slices)

    def with_slice(self, index: int, sl: SliceLabelMap) -> "SliceStack":
        slices = list(self.slices)
        slices[index] = sl
        return SliceStack(slices=tuple(slices), channels=self.channels)


def plan_slices(
    frame: CardiacFrame,
    heart_extent_mm: float = DEFAULT_HEART_EXTENT,
    sax_spacing_mm: float = DEFAULT_SAX_SPACING,
    sax_count: int = DEFAULT_SAX_COUNT,
    lax_views=LAX_VIEWS,
    in_plane_spacing: float = DEFAULT_IN_PLANE_SPACING,
) -> list[SlicePlane]:
    """SAX planes perpendicular to the long axis, centered on the frame
    origin and ordered base to apex, plus LAX planes containing the long
    axis at 0/60/120 degrees from axis_x for the 2/3/4-chamber views."""
    if sax_spacing_mm <= 0:
        raise ValueError("sax_spacing_mm must be > 0")
    lax_views = tuple(sorted(set(lax_views), key=LAX_VIEWS.index))
    if sax_count < 1 and not lax_views:
        raise EmptyPlan("no SAX slices and no LAX views requested")
    # odd pixel counts put the plane origin on a pixel center, which keeps
    # SAX and LAX sample lattices coincident along shared axes (slice
    # intersections then reproduce each other's labels exactly on clean data)
    n_px = int(round(heart_extent_mm / in_plane_spacing)) | 1
    extent = (n_px, n_px)
    planes: list[SlicePlane] = []
    for view in lax_views:
        ang = np.deg2rad(LAX_ANGLES_DEG[view])
        u = np.cos(ang) * frame.axis_x_vec + np.sin(ang) * frame.axis_y_vec
        planes.append(
            SlicePlane(
                origin=tuple(frame.origin_vec),
                u_axis=tuple(u),
                v_axis=tuple(frame.long_axis_vec),
                in_plane_spacing=in_plane_spacing,
                extent=extent,
                view=view,
            )
        )
    offsets = (np.arange(sax_count) - (sax_count - 1) / 2.0) * sax_spacing_mm
    for k, off in enumerate(offsets[::-1]):  # base (+long_axis) first
        planes.append(
            SlicePlane(
                origin=tuple(frame.origin_vec + off * frame.long_axis_vec),
                u_axis=tuple(frame.axis_x_vec),
                v_axis=tuple(frame.axis_y_vec),
                in_plane_spacing=in_plane_spacing,
                extent=extent,
                view=f"SAX{k:02d}",
            )
        )
    return planes


def extract_slice(vol: LabelVolume, plane: SlicePlane) -> SliceLabelMap:
    """Nearest hard-label sample of ``vol`` on the plane's pixel lattice."""
    if plane.extent[0] < 1 or plane.extent[1] < 1:
        raise ValueError("plane extent must be positive")
    pixels = sample_labels(vol, plane.pixel_positions())
    return SliceLabelMap(plane=plane, pixels=pixels, applied_shift=(0.0, 0.0))


def extract_stack(
    vol: LabelVolume, planes: list[SlicePlane]
) -> SliceStack:
    return SliceStack(
        slices=tuple(extract_slice(vol, p) for p in planes),
        channels=vol.channels,
    )


def corrupt_stack(
    stack: SliceStack,
    rng_seed: int,
    inplane_range_mm: float = DEFAULT_INPLANE_RANGE,
    plan_range_mm: float = DEFAULT_PLAN_RANGE,
) -> SliceStack:
    """Breath-hold and planning corruption: each slice gets an independent
    uniform in-plane translation (recorded in applied_shift) and a uniform
    perturbation of its origin along the plane normal."""
    if inplane_range_mm < 0 or plan_range_mm < 0:
        raise ValueError("corruption ranges must be >= 0")
    rng = np.random.default_rng(rng_seed)
    out = []
    for sl in stack.slices:
        du, dv = rng.uniform(-inplane_range_mm, inplane_range_mm, size=2)
        dn = rng.uniform(-plan_range_mm, plan_range_mm)
        moved = sl.shifted(du, dv)
        plane = replace(
            moved.plane, origin=tuple(moved.plane.origin_vec + dn * moved.plane.normal)
        )
        out.append(replace(moved, plane=plane))
    return SliceStack(slices=tuple(out), channels=stack.channels)


def rasterize_stack(
    stack: SliceStack, target: Grid3
) -> tuple[LabelVolume, CoverageMask]:
    """Paint each slice into the target grid: a voxel takes the nearest
    pixel label of a slice when its center lies within half a voxel
    diagonal of the slice plane and inside its extent. Later slices win
    conflicts; uncovered voxels stay background with mask False."""
    centers = target.voxel_centers().reshape(-1, 3)
    labels = np.zeros(centers.shape[0], dtype=np.uint8)
    mask = np.zeros(centers.shape[0], dtype=bool)
    half_diag = 0.5 * float(np.linalg.norm(target.spacing_vec))
    for sl in stack.slices:
        plane = sl.plane
        rel_d = centers @ plane.normal - plane.origin_vec @ plane.normal
        slab = np.abs(rel_d) <= half_diag
        if not np.any(slab):
            continue
        rel = centers[slab] - plane.origin_vec
        w, h = plane.extent
        a = rel @ plane.u_vec / plane.in_plane_spacing + (w - 1) / 2.0
        b = rel @ plane.v_vec / plane.in_plane_spacing + (h - 1) / 2.0
        ia = np.rint(a).astype(np.int64)
        ib = np.rint(b).astype(np.int64)
        ok = (ia >= 0) & (ia < w) & (ib >= 0) & (ib < h)
        idx = np.flatnonzero(slab)[ok]
        labels[idx] = sl.pixels[ia[ok], ib[ok]]
        mask[idx] = True
    labels[~mask] = 0
    vol = LabelVolume.from_labels(target, labels.reshape(target.dims), stack.channels)
    return vol, mask.reshape(target.dims)


# --- stack serialization: one 2D .nii per slice + a JSON sidecar ---------


def save_stack(stack: SliceStack, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, sl in enumerate(stack.slices):
        fname = f"slice_{k:03d}.nii"
        nifti.write_array(
            out_dir / fname,
            sl.pixels.astype(np.uint8),
            spacing=(sl.plane.in_plane_spacing, sl.plane.in_plane_spacing, 1.0),
        )
        entries.append(
            {
                "file": fname,
                "view": sl.plane.view,
                "origin_mm": list(sl.plane.origin),
                "u_axis": list(sl.plane.u_axis),
                "v_axis": list(sl.plane.v_axis),
                "in_plane_spacing_mm": sl.plane.in_plane_spacing,
                "extent_px": list(sl.plane.extent),
                "applied_shift_mm": list(sl.applied_shift),
            }
        )
    sidecar = out_dir / "stack.json"
    sidecar.write_text(
        json.dumps({"channels": stack.channels, "slices": entries}, indent=2)
    )
    return sidecar


def load_stack(sidecar_path) -> SliceStack:
    sidecar_path = Path(sidecar_path)
    if sidecar_path.is_dir():
        sidecar_path = sidecar_path / "stack.json"
    meta = json.loads(sidecar_path.read_text())
    slices = []
    for entry in meta["slices"]:
        pixels, _ = nifti.read_array(sidecar_path.parent / entry["file"])
        plane = SlicePlane(
            origin=tuple(entry["origin_mm"]),
            u_axis=tuple(entry["u_axis"]),
            v_axis=tuple(entry["v_axis"]),
            in_plane_spacing=float(entry["in_plane_spacing_mm"]),
            extent=tuple(entry["extent_px"]),
            view=entry["view"],
        )
        slices.append(
            SliceLabelMap(
                plane=plane,
                pixels=pixels.astype(np.uint8),
                applied_shift=tuple(entry["applied_shift_mm"]),
            )
        )
    return SliceStack(slices=tuple(slices), channels=int(meta["channels"]))
