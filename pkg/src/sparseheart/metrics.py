"""Dice and Hausdorff agreement between hard label volumes.

Hausdorff is the exact symmetric max-min distance (100th percentile)
between boundary voxel centers in mm; a boundary voxel is a foreground
voxel with at least one of its 6 neighbors background or off the grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import EmptySet, GridMismatch
from .grids import FOREGROUND_LABELS, LabelVolume

_CROSS = ndimage.generate_binary_structure(3, 1)


@dataclass(frozen=True)
class LabelMetrics:
    labels: tuple[str, ...]
    dice: tuple[float, ...]
    hausdorff_mm: tuple[float, ...]

    def as_dict(self) -> dict:
        return {
            name: {"dice": d, "hd_mm": h}
            for name, d, h in zip(self.labels, self.dice, self.hausdorff_mm)
        }


def _check(pred: LabelVolume, gt: LabelVolume) -> None:
    if not pred.grid.same_lattice(gt.grid):
        raise GridMismatch("pred and gt must share one grid")


def dice(pred: LabelVolume, gt: LabelVolume, label: int) -> float:
    """2|P n G| / (|P| + |G|); 1.0 when both sets are empty."""
    _check(pred, gt)
    p = pred.labels() == label
    g = gt.labels() == label
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / denom


def boundary_voxels(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels with a 6-neighbor background voxel or on the hull."""
    eroded = ndimage.binary_erosion(mask, structure=_CROSS, border_value=0)
    return mask & ~eroded


def hausdorff(pred: LabelVolume, gt: LabelVolume, label: int) -> float:
    """Exact symmetric Hausdorff distance between boundary voxel centers, mm."""
    _check(pred, gt)
    p = pred.labels() == label
    g = gt.labels() == label
    if not p.any() or not g.any():
        raise EmptySet(f"label {label} empty in pred or gt")
    grid = pred.grid
    bp = grid.index_to_world(np.argwhere(boundary_voxels(p)))
    bg = grid.index_to_world(np.argwhere(boundary_voxels(g)))
    d_pg = cKDTree(bg).query(bp)[0].max()
    d_gp = cKDTree(bp).query(bg)[0].max()
    return float(max(d_pg, d_gp))


def evaluate_case(pred: LabelVolume, gt: LabelVolume) -> LabelMetrics:
    """Dice and Hausdorff for the five foreground labels in report order
    (LVM, LV, RV, RA, LA)."""
    _check(pred, gt)
    dices = []
    hds = []
    for label in range(1, gt.channels):
        dices.append(dice(pred, gt, label))
        hds.append(hausdorff(pred, gt, label))
    names = (
        FOREGROUND_LABELS
        if gt.channels == len(FOREGROUND_LABELS) + 1
        else tuple(f"label{c}" for c in range(1, gt.channels))
    )
    return LabelMetrics(labels=tuple(names), dice=tuple(dices), hausdorff_mm=tuple(hds))
