import json

import numpy as np
import pytest

from sparseheart import slicing
from sparseheart.errors import EmptyPlan
from sparseheart.grids import build_cardiac_frame, sample_labels


@pytest.fixture(scope="module")
def frame():
    return build_cardiac_frame((0, 0, 25), (45, 5, 10), (0, 0, -55))


class TestPlanSlices:
    def test_sax_geometry(self, frame):
        planes = slicing.plan_slices(frame, heart_extent_mm=120.0,
                                     in_plane_spacing=2.0)
        sax = [p for p in planes if p.view.startswith("SAX")]
        assert len(sax) == slicing.DEFAULT_SAX_COUNT
        for p in sax:
            # perpendicular to the long axis
            np.testing.assert_allclose(
                np.abs(p.normal @ frame.long_axis_vec), 1.0, atol=1e-9
            )
        # ordered base (toward mv) to apex, 10 mm apart
        heights = [p.origin_vec @ frame.long_axis_vec for p in sax]
        diffs = np.diff(heights)
        np.testing.assert_allclose(diffs, -slicing.DEFAULT_SAX_SPACING, atol=1e-9)
        assert heights[0] > heights[-1]

    def test_lax_geometry(self, frame):
        planes = slicing.plan_slices(frame, heart_extent_mm=120.0,
                                     in_plane_spacing=2.0)
        lax = {p.view: p for p in planes if p.view.startswith("LAX")}
        assert list(lax) == list(slicing.LAX_VIEWS)
        for view, p in lax.items():
            # the plane contains the long axis
            assert abs(p.normal @ frame.long_axis_vec) < 1e-9
            ang = np.deg2rad(slicing.LAX_ANGLES_DEG[view])
            expected_u = (np.cos(ang) * frame.axis_x_vec
                          + np.sin(ang) * frame.axis_y_vec)
            np.testing.assert_allclose(p.u_vec, expected_u, atol=1e-9)

    def test_lax_before_sax(self, frame):
        planes = slicing.plan_slices(frame, heart_extent_mm=120.0,
                                     in_plane_spacing=2.0)
        views = [p.view for p in planes]
        assert views[:3] == list(slicing.LAX_VIEWS)
        assert all(v.startswith("SAX") for v in views[3:])

    def test_extent_is_odd(self, frame):
        for extent_mm, spacing in ((200.0, 1.25), (120.0, 2.0), (100.0, 2.0)):
            planes = slicing.plan_slices(frame, heart_extent_mm=extent_mm,
                                         in_plane_spacing=spacing)
            for p in planes:
                assert p.extent[0] % 2 == 1 and p.extent[1] % 2 == 1

    def test_empty_plan_rejected(self, frame):
        with pytest.raises(EmptyPlan):
            slicing.plan_slices(frame, sax_count=0, lax_views=())


class TestExtract:
    def test_slice_pixels_match_volume(self, phantom32, stack32):
        vol, _ = phantom32
        for sl in stack32.slices[:4]:
            expected = sample_labels(vol, sl.plane.pixel_positions())
            np.testing.assert_array_equal(sl.pixels, expected)

    def test_center_pixel_position_is_origin(self, stack32):
        sl = stack32.slices[0]
        w, h = sl.plane.extent
        pos = sl.plane.pixel_positions()
        np.testing.assert_allclose(pos[(w - 1) // 2, (h - 1) // 2],
                                   sl.plane.origin_vec, atol=1e-9)


class TestCorruption:
    def test_deterministic_and_recorded(self, stack32):
        a = slicing.corrupt_stack(stack32, rng_seed=7)
        b = slicing.corrupt_stack(stack32, rng_seed=7)
        c = slicing.corrupt_stack(stack32, rng_seed=8)
        for sa, sb in zip(a.slices, b.slices):
            assert sa.applied_shift == sb.applied_shift
            np.testing.assert_array_equal(sa.plane.origin, sb.plane.origin)
        assert any(
            sa.applied_shift != sc.applied_shift
            for sa, sc in zip(a.slices, c.slices)
        )

    def test_shift_moves_origin_not_pixels(self, stack32):
        sl = stack32.slices[0]
        moved = sl.shifted(4.0, -2.0)
        np.testing.assert_array_equal(moved.pixels, sl.pixels)
        delta = moved.plane.origin_vec - sl.plane.origin_vec
        np.testing.assert_allclose(
            delta, 4.0 * sl.plane.u_vec - 2.0 * sl.plane.v_vec, atol=1e-12
        )
        assert moved.applied_shift == (4.0, -2.0)
        again = moved.shifted(-1.0, 1.0)
        assert again.applied_shift == (3.0, -1.0)

    def test_ranges_respected(self, stack32):
        corrupted = slicing.corrupt_stack(stack32, rng_seed=3,
                                          inplane_range_mm=5.0, plan_range_mm=1.0)
        for orig, moved in zip(stack32.slices, corrupted.slices):
            du, dv = moved.applied_shift
            assert abs(du) <= 5.0 and abs(dv) <= 5.0
            normal_move = (moved.plane.origin_vec - orig.plane.origin_vec) @ \
                orig.plane.normal
            inplane = (moved.plane.origin_vec - orig.plane.origin_vec
                       - normal_move * orig.plane.normal)
            np.testing.assert_allclose(
                np.linalg.norm(inplane), np.hypot(du, dv), atol=1e-9
            )
            assert abs(normal_move) <= 1.0


class TestRasterize:
    def test_clean_stack_high_fidelity(self, phantom32, stack32):
        vol, _ = phantom32
        sparse, mask = slicing.rasterize_stack(stack32, vol.grid)
        assert mask.any() and not mask.all()
        agree = (sparse.labels()[mask] == vol.labels()[mask]).mean()
        assert agree > 0.97
        # uncovered voxels are background
        assert np.all(sparse.labels()[~mask] == 0)

    def test_mask_voxels_near_planes(self, phantom32, stack32):
        vol, _ = phantom32
        _, mask = slicing.rasterize_stack(stack32, vol.grid)
        centers = vol.grid.voxel_centers()
        half_diag = 0.5 * np.linalg.norm(vol.grid.spacing_vec)
        dist = np.min(
            np.stack(
                [
                    np.abs((centers - s.plane.origin_vec) @ s.plane.normal)
                    for s in stack32.slices
                ]
            ),
            axis=0,
        )
        assert not np.any(mask & (dist > half_diag + 1e-9))


class TestStackSerialization:
    def test_roundtrip(self, tmp_path, stack32):
        corrupted = slicing.corrupt_stack(stack32, rng_seed=5)
        sidecar = slicing.save_stack(corrupted, tmp_path / "stack")
        back = slicing.load_stack(sidecar)
        assert len(back) == len(corrupted)
        assert back.channels == corrupted.channels
        for a, b in zip(corrupted.slices, back.slices):
            np.testing.assert_array_equal(a.pixels, b.pixels)
            np.testing.assert_allclose(a.plane.origin, b.plane.origin, atol=1e-6)
            np.testing.assert_allclose(a.plane.u_axis, b.plane.u_axis, atol=1e-9)
            np.testing.assert_allclose(a.applied_shift, b.applied_shift, atol=1e-9)
            assert a.plane.view == b.plane.view

    def test_sidecar_is_json(self, tmp_path, stack32):
        sidecar = slicing.save_stack(stack32, tmp_path / "stack")
        meta = json.loads(sidecar.read_text())
        assert len(meta["slices"]) == len(stack32)
