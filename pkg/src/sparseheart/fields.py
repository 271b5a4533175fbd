"""Transformation model: rigid-affine transforms, stationary velocity
fields and dense deformation fields.

Deformation fields store the absolute mapped mm position of every voxel
center; the displacement u = positions - identity is derived where needed.
The SVF exponential uses scaling and squaring with trilinear field
self-composition; sample positions are clamped to the grid hull during
self-composition, which breaks pure diffeomorphism only at the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridTooSmall
from .grids import Grid3, LabelVolume, sample_channels, trilinear_multi

DEFAULT_EXP_STEPS = 6

FORWARD = "forward"
INVERSE = "inverse"


class AffineTransform:
    """3x3 linear part plus mm translation, with a cached inverse."""

    def __init__(self, linear=None, translation=(0.0, 0.0, 0.0)):
        lin = np.eye(3) if linear is None else np.asarray(linear, float)
        if lin.shape != (3, 3):
            raise ValueError("linear part must be 3x3")
        det = np.linalg.det(lin)
        if abs(det) <= 1e-9:
            raise ValueError(f"linear part is singular (det={det:.3g})")
        self.linear = lin
        self.translation = np.asarray(translation, float)
        self._inv_linear = np.linalg.inv(lin)

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls()

    @classmethod
    def from_params(cls, params: np.ndarray) -> "AffineTransform":
        """12-vector: row-major linear part then translation."""
        params = np.asarray(params, float)
        return cls(linear=params[:9].reshape(3, 3), translation=params[9:12])

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([self.linear.ravel(), self.translation])

    def apply(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, float)
        return pts @ self.linear.T + self.translation

    def apply_inverse(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, float)
        return (pts - self.translation) @ self._inv_linear.T

    def inverse(self) -> "AffineTransform":
        return AffineTransform(
            linear=self._inv_linear,
            translation=-self._inv_linear @ self.translation,
        )

    def compose_affine(self, other: "AffineTransform") -> "AffineTransform":
        """self after other: (self o other)(x) = self(other(x))."""
        return AffineTransform(
            linear=self.linear @ other.linear,
            translation=self.linear @ other.translation + self.translation,
        )

    @classmethod
    def rotation(cls, axis, angle_deg: float, center=(0.0, 0.0, 0.0)) -> "AffineTransform":
        """Rotation about an axis through ``center``."""
        axis = np.asarray(axis, float)
        axis = axis / np.linalg.norm(axis)
        a = np.deg2rad(angle_deg)
        kx, ky, kz = axis
        cross = np.array([[0, -kz, ky], [kz, 0, -kx], [-ky, kx, 0]])
        rot = np.eye(3) + np.sin(a) * cross + (1 - np.cos(a)) * (cross @ cross)
        center = np.asarray(center, float)
        return cls(linear=rot, translation=center - rot @ center)


@dataclass(frozen=True)
class VelocityField:
    """Stationary per-voxel velocity in mm on a Grid3."""

    grid: Grid3
    values: np.ndarray  # dims + (3,)

    def __post_init__(self):
        vals = np.asarray(self.values, np.float64)
        if vals.shape != self.grid.dims + (3,):
            raise ValueError("velocity array must have shape dims + (3,)")
        if not np.all(np.isfinite(vals)):
            raise ValueError("velocity must be finite")
        object.__setattr__(self, "values", vals)

    @classmethod
    def zero(cls, grid: Grid3) -> "VelocityField":
        return cls(grid, np.zeros(grid.dims + (3,)))

    def scaled(self, factor: float) -> "VelocityField":
        return VelocityField(self.grid, self.values * factor)


@dataclass(frozen=True)
class DeformationField:
    """Absolute mapped mm position of every voxel center."""

    grid: Grid3
    positions: np.ndarray  # dims + (3,)
    tag: str = FORWARD

    def __post_init__(self):
        pos = np.asarray(self.positions, np.float64)
        if pos.shape != self.grid.dims + (3,):
            raise ValueError("positions array must have shape dims + (3,)")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        object.__setattr__(self, "positions", pos)

    @classmethod
    def identity(cls, grid: Grid3, tag: str = FORWARD) -> "DeformationField":
        return cls(grid, grid.voxel_centers(), tag=tag)

    def displacement(self) -> np.ndarray:
        return self.positions - self.grid.voxel_centers()

    def evaluate(self, pts: np.ndarray) -> np.ndarray:
        """Trilinear evaluation at arbitrary mm points; the displacement is
        interpolated (clamped to the hull) and added back to the query."""
        return pts + _interp_vectors(self.grid, self.displacement(), pts)


def _interp_vectors(grid: Grid3, vectors: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Trilinear interpolation of a per-voxel 3-vector field at mm points,
    with sample indices clamped to the grid hull."""
    pts = np.asarray(pts, float)
    idx = grid.world_to_index(pts).reshape(-1, 3)
    return trilinear_multi(np.asarray(vectors, np.float64), idx).reshape(pts.shape)


def exp_svf(v: VelocityField, steps: int = DEFAULT_EXP_STEPS) -> DeformationField:
    """Scaling-and-squaring exponential: u0 = v / 2**steps, then
    u <- u + u o (I + u) repeated ``steps`` times; phi = I + u.
    exp_svf(-v) yields the inverse map."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    centers = v.grid.voxel_centers()
    u = v.values / (2.0**steps)
    for _ in range(steps):
        u = u + _interp_vectors(v.grid, u, centers + u)
    return DeformationField(v.grid, centers + u, tag=FORWARD)


def compose(T: AffineTransform, phi: DeformationField, order: str) -> DeformationField:
    """Full map from affine and non-rigid parts.

    order=FORWARD: Phi(x) = T(phi(x)), using phi = exp_svf(v).
    order=INVERSE: Phi^-1(x) = phi_inv(T^-1(x)), using phi_inv = exp_svf(-v),
    so that Phi o Phi^-1 is approximately the identity.
    """
    if order == FORWARD:
        pos = T.apply(phi.positions.reshape(-1, 3)).reshape(phi.positions.shape)
        return DeformationField(phi.grid, pos, tag=FORWARD)
    if order == INVERSE:
        centers = phi.grid.voxel_centers()
        pts = T.apply_inverse(centers.reshape(-1, 3)).reshape(centers.shape)
        return DeformationField(phi.grid, phi.evaluate(pts), tag=INVERSE)
    raise ValueError(f"unknown composition order {order!r}")


def warp(vol: LabelVolume, field: DeformationField, mode: str = "linear") -> LabelVolume:
    """Pull-back warp: output voxel x takes vol sampled at field(x);
    out-of-bounds samples become background."""
    data = sample_channels(vol, field.positions, mode)
    return LabelVolume(field.grid, data)


def warp_mask(mask: np.ndarray, grid: Grid3, field: DeformationField) -> np.ndarray:
    """Nearest-neighbor warp of a boolean mask alongside a volume."""
    vol = LabelVolume(
        grid,
        np.stack([(~mask).astype(np.float32), mask.astype(np.float32)], axis=-1),
    )
    warped = warp(vol, field, mode="nearest")
    return warped.data[..., 1] > 0.5


def laplacian_energy(u: np.ndarray, grid: Grid3) -> float:
    """Sum over interior voxels of the squared 6-neighbor discrete vector
    Laplacian of the displacement field u (per-axis spacing scaled)."""
    if any(d < 3 for d in grid.dims):
        raise GridTooSmall("laplacian needs >= 3 voxels per axis")
    u = np.asarray(u, float)
    lap = np.zeros_like(u)
    sp = grid.spacing_vec
    for ax in range(3):
        sl_c = [slice(1, -1) if a == ax else slice(None) for a in range(3)]
        sl_p = [slice(2, None) if a == ax else slice(None) for a in range(3)]
        sl_m = [slice(None, -2) if a == ax else slice(None) for a in range(3)]
        lap[tuple(sl_c)] += (
            u[tuple(sl_p)] - 2.0 * u[tuple(sl_c)] + u[tuple(sl_m)]
        ) / sp[ax] ** 2
    interior = lap[1:-1, 1:-1, 1:-1, :]
    return float(np.sum(interior**2))
