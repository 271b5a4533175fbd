import numpy as np
import pytest
from scipy import ndimage

from sparseheart import mesh, phantom
from sparseheart.errors import OverlapConflict
from sparseheart.grids import FOREGROUND_LABELS


def spec32(seed=0, **kwargs):
    return phantom.PhantomSpec(dims=(32, 32, 32), spacing_mm=6.0, seed=seed, **kwargs)


class TestGenerate:
    def test_deterministic(self):
        a, la = phantom.generate(spec32(seed=3))
        b, lb = phantom.generate(spec32(seed=3))
        np.testing.assert_array_equal(a.labels(), b.labels())
        assert la == lb

    def test_seeds_differ(self):
        a, _ = phantom.generate(spec32(seed=3))
        b, _ = phantom.generate(spec32(seed=4))
        assert not np.array_equal(a.labels(), b.labels())

    def test_all_channels_present(self):
        vol, _ = phantom.generate(spec32())
        labels = vol.labels()
        for c in range(1, 6):
            assert np.any(labels == c), f"channel {c} empty"

    def test_one_hot(self):
        vol, _ = phantom.generate(spec32())
        np.testing.assert_allclose(vol.data.sum(axis=-1), 1.0)
        assert set(np.unique(vol.data)) <= {0.0, 1.0}

    def test_chambers_disjoint_by_construction(self):
        vol, _ = phantom.generate(spec32())
        # hard labels imply disjoint; verify each chamber is one blob
        for c in range(1, 6):
            n = ndimage.label(vol.labels() == c)[1]
            assert n == 1, (FOREGROUND_LABELS[c - 1], n)

    def test_landmarks_geometry(self):
        vol, lm = phantom.generate(spec32())
        assert set(lm) == {"mv", "tv", "apex"}
        mv, tv, apex = (np.asarray(lm[k]) for k in ("mv", "tv", "apex"))
        # apex below the mitral valve along z, tv displaced laterally
        assert apex[2] < mv[2]
        assert abs(tv[0] - mv[0]) > 10.0
        # landmarks inside the grid hull
        lo = vol.grid.origin_vec
        hi = vol.grid.index_to_world(np.array(vol.grid.dims) - 1.0)
        for p in (mv, tv, apex):
            assert np.all(p >= lo - 1e-9) and np.all(p <= hi + 1e-9)

    def test_no_jitter_matches_nominal(self):
        a, la = phantom.generate(spec32(seed=1, jitter=False))
        b, lb = phantom.generate(spec32(seed=2, jitter=False))
        np.testing.assert_array_equal(a.labels(), b.labels())
        assert la == lb

    def test_overrides_respected(self):
        base, _ = phantom.generate(spec32(jitter=False))
        big, _ = phantom.generate(
            spec32(jitter=False, overrides={"rv_radii": (18.0, 20.0, 26.0)})
        )
        assert (big.labels() == 3).sum() > (base.labels() == 3).sum()

    def test_overlap_conflict_raised(self):
        with pytest.raises(OverlapConflict):
            phantom.generate(
                spec32(jitter=False, overrides={"rv_center": (0.0, 0.0, -15.0)})
            )

    def test_empty_chamber_raises(self):
        with pytest.raises(OverlapConflict):
            phantom.generate(
                spec32(jitter=False, overrides={"ra_radii": (1.0, 1.0, 1.0)})
            )

    def test_topology_clean_at_finer_scale(self):
        vol, _ = phantom.generate(
            phantom.PhantomSpec(dims=(48, 48, 48), spacing_mm=4.0, seed=0)
        )
        report = mesh.check_topology(vol)
        assert all(entry["pass"] for entry in report.values()), report


class TestGenerateBroken:
    @pytest.mark.parametrize("defect,expect", [
        ("handle:LA", dict(chi=0, components=1)),
        ("split:RA", dict(components=2)),
        # the tunnel pierces the cup-shaped shell twice -> genus 2
        ("handle:LVM", dict(chi=-2, components=1)),
    ])
    def test_defects_break_topology(self, defect, expect):
        spec = phantom.PhantomSpec(dims=(48, 48, 48), spacing_mm=4.0, seed=0)
        vol = phantom.generate_broken(spec, defect)
        name = defect.split(":")[1]
        entry = mesh.check_topology(vol)[name]
        assert not entry["pass"]
        for key, val in expect.items():
            assert entry[key] == val, (defect, entry)

    def test_other_channels_untouched(self):
        spec = spec32()
        intact, _ = phantom.generate(spec)
        broken = phantom.generate_broken(spec, "split:RA")
        for c in (1, 2, 3, 5):
            np.testing.assert_array_equal(
                broken.labels() == c, intact.labels() == c
            )
        assert (broken.labels() == 4).sum() < (intact.labels() == 4).sum()

    def test_unknown_defect_rejected(self):
        for bad in ("drill:LA", "handle:XX", "handle", ""):
            with pytest.raises(ValueError):
                phantom.generate_broken(spec32(), bad)
