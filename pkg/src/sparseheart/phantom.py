"""Deterministic parametric 5-chamber heart phantoms.

Ellipsoid-based analytic shapes so cross-sections, volumes and topology all
have closed forms; realism is explicitly not the goal. The layout is built
in a canonical frame (long axis = +z, right heart toward +x) with margins
that survive seed jitter, and the right atrium is offset to -60 degrees
about the long axis so that only the 4-chamber LAX plane (at 120 degrees,
which also contains the 300-degree direction) cuts it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import OverlapConflict
from .grids import DEFAULT_CHANNELS, Grid3, LabelVolume, default_grid

LVM, LV, RV, RA, LA = 1, 2, 3, 4, 5
_CHANNEL_BY_NAME = {"LVM": LVM, "LV": LV, "RV": RV, "RA": RA, "LA": LA}

# nominal geometry, mm, canonical frame centered on the LV long axis
_NOMINAL = {
    "lv_center": (0.0, 0.0, -15.0),
    "lv_radii": (22.0, 22.0, 32.0),
    "shell_mm": 10.0,
    "rv_center": (56.0, 0.0, -10.0),
    "rv_radii": (14.0, 17.0, 22.0),
    "la_center": (0.0, 0.0, 34.0),
    "la_radii": (15.0, 15.0, 13.0),
    "ra_lateral_mm": 42.0,
    "ra_angle_deg": -60.0,
    "ra_z": 28.0,
    "ra_radii": (14.0, 14.0, 14.0),
    "cup_fraction": 0.9,  # cap height as a fraction of the LV z radius
}

JITTER_CENTER_MM = 2.0
JITTER_RADII_FRACTION = 0.05


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int] = (160, 160, 160)
    spacing_mm: float = 1.25
    seed: int = 0
    channels: int = DEFAULT_CHANNELS
    jitter: bool = True
    overrides: dict = field(default_factory=dict)

    def grid(self) -> Grid3:
        return default_grid(self.dims, (self.spacing_mm,) * 3)


def _chamber_params(spec: PhantomSpec) -> dict:
    params = dict(_NOMINAL)
    params.update(spec.overrides)
    if not spec.jitter:
        return params
    rng = np.random.default_rng(spec.seed)
    out = dict(params)
    for key in ("lv_center", "rv_center", "la_center"):
        out[key] = tuple(
            np.asarray(params[key]) + rng.uniform(-JITTER_CENTER_MM, JITTER_CENTER_MM, 3)
        )
    for key in ("lv_radii", "rv_radii", "la_radii", "ra_radii"):
        out[key] = tuple(
            np.asarray(params[key])
            * rng.uniform(1 - JITTER_RADII_FRACTION, 1 + JITTER_RADII_FRACTION, 3)
        )
    out["ra_z"] = params["ra_z"] + rng.uniform(-JITTER_CENTER_MM, JITTER_CENTER_MM)
    out["ra_lateral_mm"] = params["ra_lateral_mm"] + rng.uniform(
        -JITTER_CENTER_MM, JITTER_CENTER_MM
    )
    return out


def _inside(points, center, radii) -> np.ndarray:
    center = np.asarray(center, float)
    radii = np.asarray(radii, float)
    if np.any(radii <= 0):
        raise OverlapConflict(f"degenerate chamber radii {tuple(radii)}")
    q = (points - center) / radii
    return np.einsum("...k,...k->...", q, q) <= 1.0


def _chamber_masks(grid: Grid3, params: dict) -> dict:
    pts = grid.voxel_centers()
    lv_c = np.asarray(params["lv_center"])
    lv_r = np.asarray(params["lv_radii"])
    outer_r = lv_r + params["shell_mm"]
    lv = _inside(pts, lv_c, lv_r)
    cap_z = lv_c[2] + params["cup_fraction"] * lv_r[2]
    shell = _inside(pts, lv_c, outer_r) & ~lv & (pts[..., 2] <= cap_z)
    rv = _inside(pts, params["rv_center"], params["rv_radii"])
    la = _inside(pts, params["la_center"], params["la_radii"])
    ang = np.deg2rad(params["ra_angle_deg"])
    ra_center = (
        params["ra_lateral_mm"] * np.cos(ang),
        params["ra_lateral_mm"] * np.sin(ang),
        params["ra_z"],
    )
    ra = _inside(pts, ra_center, params["ra_radii"])
    return {LVM: shell, LV: lv, RV: rv, RA: ra, LA: la}


def _landmarks(params: dict) -> dict:
    lv_c = np.asarray(params["lv_center"])
    lv_r = np.asarray(params["lv_radii"])
    la_c = np.asarray(params["la_center"])
    la_r = np.asarray(params["la_radii"])
    rv_c = np.asarray(params["rv_center"])
    rv_r = np.asarray(params["rv_radii"])
    lv_top = lv_c[2] + lv_r[2]
    la_bottom = la_c[2] - la_r[2]
    mv = (lv_c[0], lv_c[1], 0.5 * (lv_top + la_bottom))
    tv = tuple(rv_c + np.array([-0.5 * rv_r[0], 0.0, 0.45 * rv_r[2]]))
    apex = (lv_c[0], lv_c[1], lv_c[2] - lv_r[2] - params["shell_mm"])
    return {"mv": tuple(map(float, mv)), "tv": tuple(map(float, tv)),
            "apex": tuple(map(float, apex))}


def generate(spec: PhantomSpec) -> tuple[LabelVolume, dict]:
    """Hard 6-channel phantom volume plus {mv, tv, apex} landmarks (mm).

    Raises OverlapConflict when chambers collide or a chamber rasterizes to
    zero voxels on the requested grid.
    """
    grid = spec.grid()
    params = _chamber_params(spec)
    masks = _chamber_masks(grid, params)
    labels = np.zeros(grid.dims, dtype=np.uint8)
    for ch, mask in masks.items():
        if not np.any(mask):
            raise OverlapConflict(f"channel {ch} rasterizes to zero voxels")
        clash = mask & (labels != 0)
        if np.any(clash):
            raise OverlapConflict(
                f"channel {ch} overlaps an earlier chamber in {int(clash.sum())} voxels"
            )
        labels[mask] = ch
    vol = LabelVolume.from_labels(grid, labels, spec.channels)
    return vol, _landmarks(params)


def generate_broken(spec: PhantomSpec, defect: str) -> LabelVolume:
    """Phantom with an injected topology defect.

    ``defect`` is "handle:<LABEL>" (drills a tunnel through the chamber,
    genus 1) or "split:<LABEL>" (cuts the chamber into two components).
    Removed voxels become background; other channels are untouched.
    """
    kind, _, name = defect.partition(":")
    if kind not in ("handle", "split") or name not in _CHANNEL_BY_NAME:
        raise ValueError(f"unknown defect {defect!r}")
    channel = _CHANNEL_BY_NAME[name]
    grid = spec.grid()
    params = _chamber_params(spec)
    vol, _ = generate(spec)
    labels = vol.labels()
    target = labels == channel
    pts = grid.voxel_centers()
    center = pts[target].mean(axis=0)
    sp = spec.spacing_mm
    if kind == "handle":
        radius = max(4.0, 1.6 * sp)
        tunnel = (pts[..., 1] - center[1]) ** 2 + (pts[..., 2] - center[2]) ** 2 <= radius**2
        labels[target & tunnel] = 0
    else:
        slab = np.abs(pts[..., 2] - center[2]) <= 1.1 * sp
        labels[target & slab] = 0
    return LabelVolume.from_labels(grid, labels, spec.channels)
