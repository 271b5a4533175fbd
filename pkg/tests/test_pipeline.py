import json
from pathlib import Path

import numpy as np
import pytest

from sparseheart import nifti, phantom, pipeline
from sparseheart import registration as reg

# fast plumbing-test configuration: correctness of the orchestration is
# what matters here, not reconstruction quality
FAST_CFG = pipeline.CaseConfig(
    registration=reg.RegistrationConfig(
        lam=0.01, step_size=2.0, max_steps=2, affine_steps=5,
        svf_smoothing_sigma=6.0, affine_smoothing_sigma=3.0, exp_steps=2,
    )
)

CASE_KW = dict(dims=(32, 32, 32), spacing_mm=6.0, in_plane_spacing=3.0)


@pytest.fixture(scope="module")
def cohort(tmp_path_factory):
    root = tmp_path_factory.mktemp("cohort")
    pipeline.make_cohort(root, n=2, seed=10, **CASE_KW)
    return root


@pytest.fixture(scope="module")
def atlas():
    vol, _ = phantom.generate(
        phantom.PhantomSpec(dims=(32, 32, 32), spacing_mm=6.0, seed=99)
    )
    return vol


class TestMakeCase:
    def test_files_written(self, tmp_path):
        manifest = pipeline.make_case(tmp_path / "c0", seed=1, **CASE_KW)
        for rel in manifest["files"].values():
            assert (tmp_path / "c0" / rel).exists(), rel
        assert (tmp_path / "c0" / "case.json").exists()

    def test_deterministic(self, tmp_path):
        a = pipeline.make_case(tmp_path / "a", seed=2, **CASE_KW)
        b = pipeline.make_case(tmp_path / "b", seed=2, **CASE_KW)
        va = nifti.read_label_volume(tmp_path / "a" / "dense_gt.nii")
        vb = nifti.read_label_volume(tmp_path / "b" / "dense_gt.nii")
        np.testing.assert_array_equal(va.labels(), vb.labels())
        assert a["seed"] == b["seed"]

    def test_corrupted_differs_from_clean(self, tmp_path):
        pipeline.make_case(tmp_path / "c", seed=3, **CASE_KW)
        from sparseheart import slicing

        clean = slicing.load_stack(tmp_path / "c" / "stack_clean" / "stack.json")
        corrupted = slicing.load_stack(tmp_path / "c" / "stack" / "stack.json")
        assert any(
            s.applied_shift != (0.0, 0.0) for s in corrupted.slices
        )
        assert all(s.applied_shift == (0.0, 0.0) for s in clean.slices)


class TestMakeCohort:
    def test_manifest(self, cohort):
        manifest = json.loads((cohort / "cohort.json").read_text())
        assert manifest["cases"] == ["case_000", "case_001"]
        for name in manifest["cases"]:
            assert (cohort / name / "dense_gt.nii").exists()

    def test_n_validated(self, tmp_path):
        with pytest.raises(ValueError):
            pipeline.make_cohort(tmp_path, n=0)


class TestComboSpec:
    def test_known_names(self):
        for name in pipeline.COMBOS:
            spec = pipeline.ComboSpec(name)
            assert spec.use_ssa == name.startswith("SSA")
            assert spec.use_external == ("EXT" in name)
            assert spec.use_dense_repair == name.endswith("DREG")

    def test_unknown_rejected(self):
        with pytest.raises(ValueError):
            pipeline.ComboSpec("DREG-ONLY")


class TestRunCase:
    def test_sreg_outputs(self, cohort, atlas, tmp_path):
        report = pipeline.run_case(
            cohort / "case_000", pipeline.ComboSpec("SREG"), atlas, FAST_CFG,
            out_dir=tmp_path / "out",
        )
        assert report.combo == "SREG"
        assert set(report.dice) == {"LVM", "LV", "RV", "RA", "LA"}
        for f in ("sparse.nii", "prediction.nii", "report.json",
                  "loss_trace_sparse.csv"):
            assert (tmp_path / "out" / f).exists(), f
        # provenance sidecars
        prov = json.loads((tmp_path / "out" / "prediction.json").read_text())
        assert prov["stage"] == "densify"
        assert prov["config_hash"] == FAST_CFG.digest()

    def test_ssa_combo_writes_shifts(self, cohort, atlas, tmp_path):
        report = pipeline.run_case(
            cohort / "case_000", pipeline.ComboSpec("SSA-SREG"), atlas, FAST_CFG,
            out_dir=tmp_path / "out",
        )
        assert report.ssa_iterations is not None
        shifts = json.loads((tmp_path / "out" / "shifts.json").read_text())
        assert len(shifts["cumulative_px"]) > 0

    def test_ext_with_prediction_skips_registration(self, cohort, atlas, tmp_path):
        gt = nifti.read_label_volume(cohort / "case_000" / "dense_gt.nii")
        pred_path = tmp_path / "external.nii"
        nifti.write_label_volume(pred_path, gt)
        report = pipeline.run_case(
            cohort / "case_000",
            pipeline.ComboSpec("EXT", prediction_path=str(pred_path)),
            atlas, FAST_CFG, out_dir=tmp_path / "out",
        )
        # external prediction == GT, so dice is exact
        assert all(d == 1.0 for d in report.dice.values())
        assert not (tmp_path / "out" / "loss_trace_sparse.csv").exists()

    def test_dense_repair_writes_repaired(self, cohort, atlas, tmp_path):
        gt = nifti.read_label_volume(cohort / "case_000" / "dense_gt.nii")
        pred_path = tmp_path / "external.nii"
        nifti.write_label_volume(pred_path, gt)
        pipeline.run_case(
            cohort / "case_000",
            pipeline.ComboSpec("EXT-DREG", prediction_path=str(pred_path)),
            atlas, FAST_CFG, out_dir=tmp_path / "out",
        )
        assert (tmp_path / "out" / "repaired.nii").exists()
        assert (tmp_path / "out" / "loss_trace_dense.csv").exists()

    def test_atlas_resampled_when_grids_differ(self, cohort, tmp_path):
        coarse, _ = phantom.generate(
            phantom.PhantomSpec(dims=(16, 16, 16), spacing_mm=12.0, seed=99)
        )
        report = pipeline.run_case(
            cohort / "case_000", pipeline.ComboSpec("SREG"), coarse, FAST_CFG,
            out_dir=tmp_path / "out",
        )
        assert set(report.dice) == {"LVM", "LV", "RV", "RA", "LA"}


@pytest.fixture(scope="module")
def reports(cohort, atlas, tmp_path_factory):
    csv_path = tmp_path_factory.mktemp("csv") / "report.csv"
    rs = pipeline.run_experiment(
        cohort, pipeline.ComboSpec("SREG"), atlas, cfg=FAST_CFG, out_csv=csv_path
    )
    return rs, csv_path


class TestExperimentAndReports:
    def test_one_report_per_case(self, reports):
        rs, _ = reports
        assert [r.case for r in rs] == ["case_000", "case_001"]

    def test_csv_layout(self, reports):
        _, csv_path = reports
        lines = csv_path.read_text().strip().splitlines()
        assert lines[0] == "case,combo,label,dice,hd_mm,topology_pass"
        assert len(lines) == 1 + 2 * 5  # 2 cases x 5 labels

    def test_summarize(self, reports):
        rs, _ = reports
        summary = pipeline.summarize(rs)
        assert set(summary) == {"LVM", "LV", "RV", "RA", "LA"}
        for entry in summary.values():
            assert 0.0 <= entry["dice_mean"] <= 1.0
            assert entry["hd_mean"] >= 0.0


class TestAblation:
    def test_view_set_validation(self, cohort, atlas):
        with pytest.raises(ValueError):
            pipeline.run_ablation(
                cohort, pipeline.ComboSpec("SREG"), atlas, view_sets=("2/3",)
            )

    def test_rows_and_deltas(self, cohort, atlas):
        table = pipeline.run_ablation(
            cohort, pipeline.ComboSpec("SREG"), atlas,
            view_sets=("2/3/4", "4"), cfg=FAST_CFG,
        )
        assert [row["views"] for row in table["rows"]] == ["2/3/4", "4"]
        first = table["rows"][0]
        assert all(abs(v) < 1e-12 for v in first["delta"].values())
        for row in table["rows"]:
            assert set(row["dice"]) == {"LVM", "LV", "RV", "RA", "LA"}
