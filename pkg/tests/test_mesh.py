import numpy as np
import pytest

from sparseheart import mesh
from sparseheart.errors import EmptySurface
from sparseheart.grids import LabelVolume, default_grid

from .conftest import small_phantom


def ellipsoid_field(dims, center, radii):
    idx = np.stack(np.meshgrid(*[np.arange(d) for d in dims], indexing="ij"), axis=-1)
    rel = (idx - np.asarray(center)) / np.asarray(radii)
    return 1.0 - np.sum(rel**2, axis=-1)  # > 0 inside


def torus_field(dims, center, major, minor):
    idx = np.stack(np.meshgrid(*[np.arange(d) for d in dims], indexing="ij"), axis=-1)
    rel = idx - np.asarray(center, float)
    ring = np.hypot(np.hypot(rel[..., 0], rel[..., 1]) - major, rel[..., 2])
    return minor - ring  # > 0 inside the tube


def brute_force_counts(m: mesh.SurfaceMesh):
    """V/E/F by explicit set construction over triangle tuples."""
    v = len(m.vertices)
    edges = set()
    faces = 0
    for a, b, c in m.triangles:
        faces += 1
        for p, q in ((a, b), (b, c), (a, c)):
            edges.add((min(p, q), max(p, q)))
    return v, len(edges), faces


class TestMarchingCubes:
    @pytest.mark.parametrize("seed", range(10))
    def test_ellipsoid_chi_2(self, seed):
        rng = np.random.default_rng(seed)
        dims = (24, 24, 24)
        center = 11.5 + rng.uniform(-1.5, 1.5, 3)
        radii = rng.uniform(4.0, 9.0, 3)
        m = mesh.marching_cubes(ellipsoid_field(dims, center, radii), iso=0.0)
        assert mesh.euler_characteristic(m) == 2

    @pytest.mark.parametrize("seed", range(5))
    def test_torus_chi_0(self, seed):
        rng = np.random.default_rng(100 + seed)
        dims = (32, 32, 24)
        center = np.array([15.5, 15.5, 11.5]) + rng.uniform(-0.5, 0.5, 3)
        major = rng.uniform(7.0, 10.0)
        minor = rng.uniform(2.5, 4.0)
        m = mesh.marching_cubes(torus_field(dims, center, major, minor), iso=0.0)
        assert mesh.euler_characteristic(m) == 0

    def test_counts_match_brute_force(self):
        m = mesh.marching_cubes(
            ellipsoid_field((16, 16, 16), (7.5, 7.5, 7.5), (5, 4, 6)), iso=0.0
        )
        assert m.counts == brute_force_counts(m)

    def test_vertices_welded_across_cells(self):
        m = mesh.marching_cubes(
            ellipsoid_field((16, 16, 16), (7.5, 7.5, 7.5), (5, 5, 5)), iso=0.0
        )
        # closed surface: every edge is shared by exactly two triangles
        pairs = np.concatenate(
            [m.triangles[:, [0, 1]], m.triangles[:, [1, 2]], m.triangles[:, [0, 2]]]
        )
        pairs = np.sort(pairs, axis=1)
        _, counts = np.unique(pairs, axis=0, return_counts=True)
        assert np.all(counts == 2)
        # no duplicated vertex positions (welding is exact, not proximity)
        assert len(np.unique(np.round(m.vertices, 9), axis=0)) == len(m.vertices)

    def test_grid_maps_vertices_to_mm(self):
        field = ellipsoid_field((16, 16, 16), (7.5, 7.5, 7.5), (5, 5, 5))
        from sparseheart.grids import Grid3

        grid = Grid3(dims=(16, 16, 16), spacing=(2.0, 2.0, 2.0),
                     origin=(10.0, 0.0, -4.0))
        m_idx = mesh.marching_cubes(field, iso=0.0)
        m_mm = mesh.marching_cubes(field, iso=0.0, grid=grid)
        np.testing.assert_allclose(
            m_mm.vertices, grid.index_to_world(m_idx.vertices), atol=1e-12
        )

    def test_empty_surface_raises(self):
        with pytest.raises(EmptySurface):
            mesh.marching_cubes(np.zeros((8, 8, 8)), iso=0.5)

    def test_invalid_field_rejected(self):
        with pytest.raises(ValueError):
            mesh.marching_cubes(np.zeros((8, 8)), iso=0.5)
        bad = np.zeros((8, 8, 8))
        bad[2, 2, 2] = np.nan
        with pytest.raises(ValueError):
            mesh.marching_cubes(bad, iso=0.5)


class TestSurfaceMeshValidation:
    def test_degenerate_triangle_rejected(self):
        with pytest.raises(ValueError):
            mesh.SurfaceMesh(vertices=np.zeros((3, 3)), triangles=[[0, 0, 1]])

    def test_out_of_range_index_rejected(self):
        with pytest.raises(ValueError):
            mesh.SurfaceMesh(vertices=np.zeros((3, 3)), triangles=[[0, 1, 7]])


class TestCheckTopology:
    def test_phantom_passes_all_channels(self):
        vol, _ = small_phantom(seed=0)
        report = mesh.check_topology(vol)
        assert set(report) == {"LVM", "LV", "RV", "RA", "LA"}
        for name, entry in report.items():
            assert entry["pass"], (name, entry)
            assert entry["chi"] == 2 and entry["components"] == 1

    def test_two_spheres_fail_via_component_count(self):
        grid = default_grid((20, 20, 20), (1.0, 1.0, 1.0))
        labels = np.zeros(grid.dims, np.uint8)
        for c in ((5, 5, 5), (14, 14, 14)):
            f = ellipsoid_field(grid.dims, c, (3, 3, 3))
            labels[f > 0] = 1
        vol = LabelVolume.from_labels(grid, labels, 2)
        entry = mesh.check_topology(vol)["label1"]
        assert entry["components"] == 2
        assert not entry["pass"]

    def test_torus_label_fails(self):
        grid = default_grid((32, 32, 24), (1.0, 1.0, 1.0))
        labels = (torus_field(grid.dims, (15.5, 15.5, 11.5), 8.0, 3.0) > 0).astype(np.uint8)
        vol = LabelVolume.from_labels(grid, labels, 2)
        entry = mesh.check_topology(vol)["label1"]
        assert entry["chi"] == 0 and not entry["pass"]

    def test_empty_channel_fails(self):
        grid = default_grid((8, 8, 8), (1.0, 1.0, 1.0))
        vol = LabelVolume.from_labels(grid, np.zeros(grid.dims, np.uint8), 2)
        entry = mesh.check_topology(vol)["label1"]
        assert entry["chi"] is None and not entry["pass"]

    def test_boundary_touching_label_still_closed(self):
        grid = default_grid((10, 10, 10), (1.0, 1.0, 1.0))
        labels = np.zeros(grid.dims, np.uint8)
        labels[0:5, 2:7, 2:7] = 1  # touches the x=0 face
        vol = LabelVolume.from_labels(grid, labels, 2)
        entry = mesh.check_topology(vol)["label1"]
        assert entry["chi"] == 2 and entry["pass"]


@pytest.fixture(scope="module")
def sphere_mesh():
    return mesh.marching_cubes(
        ellipsoid_field((12, 12, 12), (5.5, 5.5, 5.5), (4, 4, 4)), iso=0.0
    )


class TestExport:
    def test_stl(self, tmp_path, sphere_mesh):
        path = tmp_path / "m.stl"
        mesh.write_stl(sphere_mesh, path)
        data = path.read_bytes()
        import struct

        (n,) = struct.unpack_from("<I", data, 80)
        assert n == len(sphere_mesh.triangles)
        assert len(data) == 84 + 50 * n

    def test_obj(self, tmp_path, sphere_mesh):
        path = tmp_path / "m.obj"
        mesh.write_obj(sphere_mesh, path)
        lines = path.read_text().splitlines()
        assert sum(1 for l in lines if l.startswith("v ")) == len(sphere_mesh.vertices)
        assert sum(1 for l in lines if l.startswith("f ")) == len(sphere_mesh.triangles)
        # OBJ indices are 1-based
        first_face = next(l for l in lines if l.startswith("f "))
        assert all(int(tok) >= 1 for tok in first_face.split()[1:])
