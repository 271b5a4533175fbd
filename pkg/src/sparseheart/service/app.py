"""FastAPI application wrapping the reconstruction toolkit.

Every endpoint reads inputs from and writes outputs to server-side paths;
domain errors surface as 422 responses with the exception class name.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__, metrics, mesh, nifti, phantom, pipeline, slicing, ssa
from .. import registration as reg
from ..errors import SparseHeartError
from ..grids import build_cardiac_frame, default_grid
from . import schemas as s


def _registration_config(settings: s.RegistrationSettings) -> reg.RegistrationConfig:
    return reg.RegistrationConfig(**settings.model_dump())


def _case_config(request) -> pipeline.CaseConfig:
    return pipeline.CaseConfig(
        registration=_registration_config(request.registration),
        ssa_max_iters=request.ssa_max_iters,
        ssa_window_px=request.ssa_window_px,
    )


def _case_report(r: pipeline.ExperimentReport) -> s.CaseReport:
    return s.CaseReport(
        case=r.case,
        combo=r.combo,
        dice=r.dice,
        hd_mm=r.hd_mm,
        topology_passed={k: v["pass"] for k, v in r.topology.items()},
        ssa_iterations=r.ssa_iterations,
        wall_time_s=r.wall_time_s,
    )


def create_app() -> FastAPI:
    app = FastAPI(title="sparseheart", version=__version__)

    @app.exception_handler(SparseHeartError)
    async def _domain_error(request: Request, exc: SparseHeartError):
        return JSONResponse(
            status_code=422,
            content={"error": type(exc).__name__, "detail": str(exc)},
        )

    @app.exception_handler(ValueError)
    async def _value_error(request: Request, exc: ValueError):
        return JSONResponse(status_code=422, content={"error": "ValueError",
                                                      "detail": str(exc)})

    @app.exception_handler(FileNotFoundError)
    async def _missing_file(request: Request, exc: FileNotFoundError):
        return JSONResponse(status_code=404, content={"error": "FileNotFoundError",
                                                      "detail": str(exc)})

    @app.get("/health", response_model=s.HealthResponse)
    def health():
        return s.HealthResponse(status="ok", version=__version__)

    @app.post("/phantom", response_model=s.PhantomResponse)
    def make_phantom(req: s.PhantomRequest):
        out = Path(req.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        spec = phantom.PhantomSpec(
            dims=req.dims, spacing_mm=req.spacing_mm, seed=req.seed, jitter=req.jitter
        )
        if req.defect:
            vol = phantom.generate_broken(spec, req.defect)
            path = out / "phantom_broken.nii"
            nifti.write_label_volume(path, vol)
            return s.PhantomResponse(
                volume_path=str(path), landmarks_path=None, landmarks=None
            )
        vol, landmarks = phantom.generate(spec)
        path = out / "phantom.nii"
        nifti.write_label_volume(path, vol)
        lm_path = out / "landmarks.json"
        lm_path.write_text(json.dumps(landmarks, indent=2))
        return s.PhantomResponse(
            volume_path=str(path), landmarks_path=str(lm_path), landmarks=landmarks
        )

    @app.post("/cohort", response_model=s.CohortResponse)
    def make_cohort(req: s.CohortRequest):
        manifest_path = pipeline.make_cohort(
            req.out_dir,
            n=req.n,
            seed=req.seed,
            dims=tuple(req.dims),
            spacing_mm=req.spacing_mm,
            sax_count=req.sax_count,
            sax_spacing_mm=req.sax_spacing_mm,
            inplane_range_mm=req.inplane_range_mm,
            plan_range_mm=req.plan_range_mm,
            in_plane_spacing=req.in_plane_spacing,
        )
        manifest = json.loads(Path(manifest_path).read_text())
        return s.CohortResponse(manifest_path=str(manifest_path),
                                cases=manifest["cases"])

    @app.post("/slice", response_model=s.StackResponse)
    def slice_volume(req: s.SliceRequest):
        vol = nifti.read_label_volume(req.volume_path)
        landmarks = json.loads(Path(req.landmarks_path).read_text())
        frame = build_cardiac_frame(
            landmarks["mv"], landmarks["tv"], landmarks["apex"]
        )
        planes = slicing.plan_slices(
            frame,
            heart_extent_mm=req.heart_extent_mm,
            sax_spacing_mm=req.sax_spacing_mm,
            sax_count=req.sax_count,
            lax_views=tuple(req.lax_views),
            in_plane_spacing=req.in_plane_spacing,
        )
        stack = slicing.extract_stack(vol, planes)
        path = slicing.save_stack(stack, req.out_dir)
        return s.StackResponse(stack_path=str(path), n_slices=len(stack))

    @app.post("/corrupt", response_model=s.StackResponse)
    def corrupt(req: s.CorruptRequest):
        stack = slicing.load_stack(req.stack_path)
        corrupted = slicing.corrupt_stack(
            stack,
            rng_seed=req.seed,
            inplane_range_mm=req.inplane_range_mm,
            plan_range_mm=req.plan_range_mm,
        )
        path = slicing.save_stack(corrupted, req.out_dir)
        return s.StackResponse(stack_path=str(path), n_slices=len(corrupted))

    @app.post("/rasterize", response_model=s.RasterizeResponse)
    def rasterize(req: s.RasterizeRequest):
        stack = slicing.load_stack(req.stack_path)
        grid = default_grid(tuple(req.dims), (req.spacing_mm,) * 3)
        vol, mask = slicing.rasterize_stack(stack, grid)
        out = Path(req.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        vol_path = out / "sparse.nii"
        mask_path = out / "coverage_mask.nii"
        nifti.write_label_volume(vol_path, vol)
        nifti.write_array(mask_path, mask.astype(np.uint8), grid=grid)
        return s.RasterizeResponse(
            volume_path=str(vol_path),
            mask_path=str(mask_path),
            covered_voxels=int(mask.sum()),
        )

    @app.post("/ssa", response_model=s.SsaResponse)
    def run_ssa(req: s.SsaRequest):
        stack = slicing.load_stack(req.stack_path)
        t0 = time.perf_counter()
        corrected, state = ssa.correct(stack, req.max_iters, req.window_px)
        wall = time.perf_counter() - t0
        out = Path(req.out_dir)
        path = slicing.save_stack(corrected, out / "stack_corrected")
        shifts_path = out / "shifts.json"
        shifts_path.write_text(
            json.dumps(
                {
                    "per_iteration_px": state.per_iteration_px,
                    "cumulative_px": state.cumulative_px(len(corrected)),
                    "ssd_per_iteration": state.ssd_per_iteration,
                    "converged": state.converged,
                },
                indent=2,
            )
        )
        return s.SsaResponse(
            corrected_stack_path=str(path),
            shifts_path=str(shifts_path),
            iterations=state.iterations,
            converged=state.converged,
            ssd_per_iteration=list(state.ssd_per_iteration),
            wall_time_s=wall,
        )

    @app.post("/register", response_model=s.RegisterResponse)
    def run_register(req: s.RegisterRequest):
        target = nifti.read_label_volume(req.target_path, channels=6)
        atlas = nifti.read_label_volume(req.atlas_path, channels=6)
        mask = None
        if req.mask_path:
            arr, _ = nifti.read_array(req.mask_path)
            mask = arr.astype(bool)
        cfg = _registration_config(req.config)
        result = reg.register(target, atlas, mode=req.mode, mask=mask, cfg=cfg)
        out = Path(req.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        prediction = reg.densify(result, atlas)
        pred_path = out / "prediction.nii"
        nifti.write_label_volume(pred_path, prediction)
        trace_path = out / "loss_trace.csv"
        result.write_loss_trace(trace_path)
        vel_path = out / "velocity.nii"
        nifti.write_vector_field(vel_path, result.v.values, target.grid)
        (out / "affine.json").write_text(
            json.dumps(
                {
                    "linear": result.T.linear.tolist(),
                    "translation": result.T.translation.tolist(),
                },
                indent=2,
            )
        )
        final = dict(result.final_losses)
        return s.RegisterResponse(
            prediction_path=str(pred_path),
            loss_trace_path=str(trace_path),
            velocity_path=str(vel_path),
            affine_linear=result.T.linear.tolist(),
            affine_translation=result.T.translation.tolist(),
            steps=int(final.pop("step")),
            final_losses={k: float(v) for k, v in final.items()},
        )

    @app.post("/mesh-check", response_model=s.MeshCheckResponse)
    def mesh_check(req: s.MeshCheckRequest):
        vol = nifti.read_label_volume(req.volume_path)
        report = mesh.check_topology(vol)
        channels = {
            name: s.ChannelTopology(
                channel=entry["channel"],
                components=entry["components"],
                V=entry["V"],
                E=entry["E"],
                F=entry["F"],
                chi=entry["chi"],
                passed=entry["pass"],
            )
            for name, entry in report.items()
        }
        return s.MeshCheckResponse(
            channels=channels,
            all_passed=all(c.passed for c in channels.values()),
        )

    @app.post("/metrics", response_model=s.MetricsResponse)
    def run_metrics(req: s.MetricsRequest):
        pred = nifti.read_label_volume(req.pred_path, channels=6)
        gt = nifti.read_label_volume(req.gt_path, channels=6)
        result = metrics.evaluate_case(pred, gt)
        return s.MetricsResponse(labels=result.as_dict())

    @app.post("/experiment", response_model=s.ExperimentResponse)
    def run_experiment(req: s.ExperimentRequest):
        atlas = nifti.read_label_volume(req.atlas_path, channels=6)
        reports = pipeline.run_experiment(
            req.cohort_dir,
            pipeline.ComboSpec(req.combo),
            atlas,
            cfg=_case_config(req),
            out_csv=req.out_csv,
        )
        return s.ExperimentResponse(
            combo=req.combo,
            reports=[_case_report(r) for r in reports],
            summary=pipeline.summarize(reports),
            csv_path=req.out_csv,
        )

    @app.post("/ablation", response_model=s.AblationResponse)
    def run_ablation(req: s.AblationRequest):
        atlas = nifti.read_label_volume(req.atlas_path, channels=6)
        table = pipeline.run_ablation(
            req.cohort_dir,
            pipeline.ComboSpec(req.combo),
            atlas,
            view_sets=tuple(req.view_sets),
            cfg=_case_config(req),
        )
        return s.AblationResponse(
            model=table["model"],
            rows=[s.AblationRow(**row) for row in table["rows"]],
        )

    return app


app = create_app()
