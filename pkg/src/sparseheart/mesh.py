"""Isosurface extraction and Euler-characteristic topology validation.

Vertices are welded by exact (lattice-edge) integer key, never by floating
point proximity, so V - E + F is a purely combinatorial quantity.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EmptySurface
from .grids import Grid3, LabelVolume, LABEL_NAMES
from .mc_tables import CUBE_VERTEX_OFFSETS, EDGE_TABLE, EDGE_VERTEX_PAIRS, TRI_TABLE

# axis of each cube edge and its lower endpoint (as a cube-vertex id)
_EDGE_AXIS = np.array([0, 1, 0, 1, 0, 1, 0, 1, 2, 2, 2, 2])
_EDGE_LOWER = np.array([0, 1, 3, 0, 4, 5, 7, 4, 0, 1, 2, 3])


@dataclass(frozen=True)
class SurfaceMesh:
    vertices: np.ndarray  # (nv, 3) mm
    triangles: np.ndarray  # (nf, 3) vertex indices

    def __post_init__(self):
        verts = np.asarray(self.vertices, float).reshape(-1, 3)
        tris = np.asarray(self.triangles, np.int64).reshape(-1, 3)
        if tris.size and tris.max() >= len(verts):
            raise ValueError("triangle index out of range")
        if tris.size and (
            np.any(tris[:, 0] == tris[:, 1])
            or np.any(tris[:, 1] == tris[:, 2])
            or np.any(tris[:, 0] == tris[:, 2])
        ):
            raise ValueError("degenerate triangle (repeated vertex index)")
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "triangles", tris)

    @property
    def counts(self) -> tuple[int, int, int]:
        """(V, E, F) with E counted as unique undirected vertex pairs."""
        v = len(self.vertices)
        f = len(self.triangles)
        pairs = np.concatenate(
            [self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [0, 2]]]
        )
        pairs = np.sort(pairs, axis=1)
        e = len(np.unique(pairs, axis=0))
        return v, e, f


def marching_cubes(
    field: np.ndarray, iso: float = 0.5, grid: Grid3 | None = None
) -> SurfaceMesh:
    """Classic 256-configuration marching cubes with linear edge
    interpolation; shared cell edges produce shared (welded) vertices.

    ``field`` is sampled at voxel centers; with a ``grid`` the vertices come
    out in mm, otherwise in index units.
    """
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 3 or any(d < 2 for d in field.shape):
        raise ValueError("field must be 3D with >= 2 samples per axis")
    if not np.all(np.isfinite(field)):
        raise ValueError("field must be finite")
    nx, ny, nz = field.shape

    below = field < iso
    ci = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int64)
    for bit, (ox, oy, oz) in enumerate(CUBE_VERTEX_OFFSETS):
        ci |= (
            below[ox : ox + nx - 1, oy : oy + ny - 1, oz : oz + nz - 1].astype(np.int64)
            << bit
        )
    crossed = EDGE_TABLE[ci]
    cells = np.argwhere(crossed != 0)
    if len(cells) == 0:
        raise EmptySurface(f"no cell crosses iso={iso}")
    cell_bits = crossed[cells[:, 0], cells[:, 1], cells[:, 2]]

    # global key of each (cell, edge): lattice point of the lower endpoint + axis
    lower = cells[:, None, :] + CUBE_VERTEX_OFFSETS[_EDGE_LOWER][None, :, :]
    keys = (
        (lower[..., 0] * ny + lower[..., 1]) * nz + lower[..., 2]
    ) * 3 + _EDGE_AXIS[None, :]

    edge_active = (cell_bits[:, None] >> np.arange(12)[None, :]) & 1
    active_keys = np.unique(keys[edge_active.astype(bool)])

    # interpolated vertex per active lattice edge
    axis = active_keys % 3
    p = active_keys // 3
    p0 = np.stack([p // (ny * nz), (p // nz) % ny, p % nz], axis=1)
    p1 = p0.copy()
    p1[np.arange(len(p1)), axis] += 1
    f0 = field[p0[:, 0], p0[:, 1], p0[:, 2]]
    f1 = field[p1[:, 0], p1[:, 1], p1[:, 2]]
    t = np.clip((iso - f0) / (f1 - f0), 0.0, 1.0)
    verts_idx = p0.astype(float)
    verts_idx[np.arange(len(t)), axis] += t
    if grid is not None:
        vertices = grid.index_to_world(verts_idx)
    else:
        vertices = verts_idx

    # triangles: map (cell, edge) through the key table into vertex ids
    tri_edges = TRI_TABLE[ci[cells[:, 0], cells[:, 1], cells[:, 2]]]  # (nc, 16)
    rows, cols = np.nonzero(tri_edges >= 0)
    flat_keys = keys[rows, tri_edges[rows, cols]]
    vert_ids = np.searchsorted(active_keys, flat_keys)
    triangles = vert_ids.reshape(-1, 3)
    return SurfaceMesh(vertices=vertices, triangles=triangles)


def euler_characteristic(mesh: SurfaceMesh) -> int:
    v, e, f = mesh.counts
    return v - e + f


def _padded_channel(vol: LabelVolume, channel: int) -> tuple[np.ndarray, Grid3]:
    """Channel field with one background voxel of padding so surfaces close
    even when the label touches the volume boundary."""
    field = np.pad(vol.data[..., channel].astype(np.float64), 1)
    g = vol.grid
    origin = g.origin_vec - g.axes_matrix @ g.spacing_vec
    grid = Grid3(
        dims=tuple(d + 2 for d in g.dims),
        spacing=g.spacing,
        origin=tuple(origin),
        axes=g.axes,
    )
    return field, grid


def check_topology(vol: LabelVolume) -> dict:
    """Per-foreground-channel mesh topology report.

    pass requires both chi == 2 and a single connected component (two
    spheres also sum to chi = 4, so the component count is explicit).
    Empty channels fail with chi undefined.
    """
    report = {}
    names = LABEL_NAMES if vol.channels == len(LABEL_NAMES) else None
    for c in range(1, vol.channels):
        name = names[c] if names else f"label{c}"
        binary = vol.data[..., c] > 0.5
        n_comp = int(ndimage.label(binary)[1])
        field, grid = _padded_channel(vol, c)
        entry = {"channel": c, "components": n_comp}
        try:
            mesh = marching_cubes(field, iso=0.5, grid=grid)
        except EmptySurface:
            entry.update({"V": 0, "E": 0, "F": 0, "chi": None, "pass": False})
            report[name] = entry
            continue
        v, e, f = mesh.counts
        chi = v - e + f
        entry.update(
            {"V": v, "E": e, "F": f, "chi": chi, "pass": chi == 2 and n_comp == 1}
        )
        report[name] = entry
    return report


def extract_channel_mesh(vol: LabelVolume, channel: int) -> SurfaceMesh:
    field, grid = _padded_channel(vol, channel)
    return marching_cubes(field, iso=0.5, grid=grid)


def write_stl(mesh: SurfaceMesh, path) -> None:
    """Binary STL."""
    tris = mesh.triangles
    verts = mesh.vertices
    with open(path, "wb") as f:
        f.write(b"\x00" * 80)
        f.write(struct.pack("<I", len(tris)))
        for tri in tris:
            a, b, c = verts[tri]
            n = np.cross(b - a, c - a)
            norm = np.linalg.norm(n)
            n = n / norm if norm > 0 else n
            f.write(struct.pack("<3f", *n))
            for p in (a, b, c):
                f.write(struct.pack("<3f", *p))
            f.write(struct.pack("<H", 0))


def write_obj(mesh: SurfaceMesh, path) -> None:
    """ASCII Wavefront OBJ."""
    with open(path, "w") as f:
        for v in mesh.vertices:
            f.write(f"v {v[0]:.6f} {v[1]:.6f} {v[2]:.6f}\n")
        for tri in mesh.triangles:
            f.write(f"f {tri[0] + 1} {tri[1] + 1} {tri[2] + 1}\n")
