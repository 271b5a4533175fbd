import numpy as np
import pytest

from sparseheart import nifti
from sparseheart.errors import NiftiFormatError
from sparseheart.grids import Grid3, default_grid


class TestArrayRoundtrip:
    def test_uint8_3d(self, tmp_path, rng):
        grid = Grid3(dims=(5, 6, 7), spacing=(1.5, 2.0, 1.0), origin=(-2, 3, 0.5))
        arr = rng.integers(0, 6, (5, 6, 7)).astype(np.uint8)
        path = tmp_path / "labels.nii"
        nifti.write_array(path, arr, grid=grid)
        back, back_grid = nifti.read_array(path)
        np.testing.assert_array_equal(back, arr)
        assert back.dtype == np.uint8
        assert back_grid.same_lattice(grid)

    def test_float32_4d(self, tmp_path, rng):
        grid = default_grid((4, 4, 4), (2.0, 2.0, 2.0))
        arr = rng.random((4, 4, 4, 6)).astype(np.float32)
        path = tmp_path / "soft.nii"
        nifti.write_array(path, arr, grid=grid)
        back, back_grid = nifti.read_array(path)
        np.testing.assert_allclose(back, arr)
        assert back_grid.same_lattice(grid)

    def test_2d_slice(self, tmp_path, rng):
        arr = rng.integers(0, 3, (9, 11)).astype(np.uint8)
        path = tmp_path / "slice.nii"
        nifti.write_array(path, arr)
        back, _ = nifti.read_array(path)
        np.testing.assert_array_equal(back, arr)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.nii"
        path.write_bytes(b"\x00" * 400)
        with pytest.raises(NiftiFormatError):
            nifti.read_array(path)

    def test_truncated_rejected(self, tmp_path, rng):
        grid = default_grid((4, 4, 4), (1.0, 1.0, 1.0))
        path = tmp_path / "trunc.nii"
        nifti.write_array(path, rng.integers(0, 2, (4, 4, 4)).astype(np.uint8),
                          grid=grid)
        data = path.read_bytes()
        path.write_bytes(data[:-10])
        with pytest.raises(NiftiFormatError):
            nifti.read_array(path)


class TestVolumesAndFields:
    def test_label_volume_hard_roundtrip(self, tmp_path, phantom32):
        vol, _ = phantom32
        path = tmp_path / "vol.nii"
        nifti.write_label_volume(path, vol)
        back = nifti.read_label_volume(path, channels=vol.channels)
        np.testing.assert_array_equal(back.labels(), vol.labels())
        assert back.grid.same_lattice(vol.grid)

    def test_label_volume_soft_roundtrip(self, tmp_path, phantom32):
        vol, _ = phantom32
        path = tmp_path / "soft.nii"
        nifti.write_label_volume(path, vol, hard=False)
        back = nifti.read_label_volume(path)
        np.testing.assert_allclose(back.data, vol.data)

    def test_vector_field_roundtrip(self, tmp_path, rng):
        grid = default_grid((4, 5, 6), (1.0, 2.0, 3.0))
        field = rng.normal(0, 2, (4, 5, 6, 3))
        path = tmp_path / "field.nii"
        nifti.write_vector_field(path, field, grid)
        back, back_grid = nifti.read_vector_field(path)
        np.testing.assert_allclose(back, field.astype(np.float32))
        assert back_grid.same_lattice(grid)

    def test_vector_field_shape_validation(self, tmp_path):
        grid = default_grid((4, 4, 4), (1.0, 1.0, 1.0))
        with pytest.raises(ValueError):
            nifti.write_vector_field(tmp_path / "x.nii", np.zeros((4, 4, 4, 2)), grid)
