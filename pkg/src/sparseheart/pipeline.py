"""Experiment orchestration: case directories, model combinations,
LAX-view ablation and report emission.

Six combinations are runnable (analogs of the evaluated model zoo):

  SREG          sparse registration of the atlas to the rasterized stack
  SSA-SREG      slice-shift correction first, then sparse registration
  EXT           external dense prediction import (falls back to SREG
                densification when no prediction file is supplied)
  SSA-EXT       as EXT but on the motion-corrected stack
  EXT-DREG      external prediction followed by dense-mode repair
  SSA-EXT-DREG  all three stages

Every emitted volume gets a JSON provenance sidecar (stage, inputs,
config hash).
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import metrics, mesh, nifti, phantom, slicing, ssa
from . import registration as reg
from .grids import FOREGROUND_LABELS, LabelVolume, build_cardiac_frame

COMBOS = ("SREG", "SSA-SREG", "EXT", "SSA-EXT", "EXT-DREG", "SSA-EXT-DREG")
ABLATION_VIEWS = {
    "2/3/4": ("LAX2CH", "LAX3CH", "LAX4CH"),
    "2/4": ("LAX2CH", "LAX4CH"),
    "4": ("LAX4CH",),
}


@dataclass(frozen=True)
class ComboSpec:
    name: str
    prediction_path: str | None = None  # external dense prediction for EXT stages

    def __post_init__(self):
        if self.name not in COMBOS:
            raise ValueError(f"unknown combo {self.name!r}; expected one of {COMBOS}")

    @property
    def use_ssa(self) -> bool:
        return self.name.startswith("SSA")

    @property
    def use_external(self) -> bool:
        return "EXT" in self.name

    @property
    def use_dense_repair(self) -> bool:
        return self.name.endswith("DREG")


@dataclass(frozen=True)
class CaseConfig:
    registration: reg.RegistrationConfig = field(default_factory=reg.RegistrationConfig)
    ssa_max_iters: int = ssa.DEFAULT_MAX_ITERS
    ssa_window_px: int = ssa.DEFAULT_WINDOW_PX

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class ExperimentReport:
    case: str
    combo: str
    dice: dict
    hd_mm: dict
    topology: dict
    ssa_iterations: int | None = None
    wall_time_s: float = 0.0

    def as_dict(self) -> dict:
        return {
            "case": self.case,
            "combo": self.combo,
            "dice": self.dice,
            "hd_mm": self.hd_mm,
            "topology": {
                k: {"chi": v["chi"], "components": v["components"], "pass": v["pass"]}
                for k, v in self.topology.items()
            },
            "ssa_iterations": self.ssa_iterations,
            "wall_time_s": self.wall_time_s,
        }


def _write_provenance(nii_path: Path, stage: str, inputs: list, cfg: CaseConfig) -> None:
    sidecar = nii_path.with_suffix(".json")
    sidecar.write_text(
        json.dumps(
            {"stage": stage, "inputs": [str(p) for p in inputs],
             "config_hash": cfg.digest()},
            indent=2,
        )
    )


def make_case(
    case_dir,
    seed: int,
    dims=(160, 160, 160),
    spacing_mm: float = 1.25,
    sax_count: int = slicing.DEFAULT_SAX_COUNT,
    sax_spacing_mm: float = slicing.DEFAULT_SAX_SPACING,
    inplane_range_mm: float = slicing.DEFAULT_INPLANE_RANGE,
    plan_range_mm: float = slicing.DEFAULT_PLAN_RANGE,
    in_plane_spacing: float | None = None,
) -> dict:
    """One phantom case: dense GT, landmarks, planned + corrupted stacks."""
    case_dir = Path(case_dir)
    case_dir.mkdir(parents=True, exist_ok=True)
    spec = phantom.PhantomSpec(dims=tuple(dims), spacing_mm=spacing_mm, seed=seed)
    vol, landmarks = phantom.generate(spec)
    nifti.write_label_volume(case_dir / "dense_gt.nii", vol)
    (case_dir / "landmarks.json").write_text(json.dumps(landmarks, indent=2))
    frame = build_cardiac_frame(landmarks["mv"], landmarks["tv"], landmarks["apex"])
    planes = slicing.plan_slices(
        frame,
        sax_count=sax_count,
        sax_spacing_mm=sax_spacing_mm,
        in_plane_spacing=in_plane_spacing or spacing_mm,
        heart_extent_mm=dims[0] * spacing_mm,
    )
    stack = slicing.extract_stack(vol, planes)
    slicing.save_stack(stack, case_dir / "stack_clean")
    corrupted = slicing.corrupt_stack(
        stack, rng_seed=seed, inplane_range_mm=inplane_range_mm,
        plan_range_mm=plan_range_mm,
    )
    slicing.save_stack(corrupted, case_dir / "stack")
    manifest = {
        "seed": seed,
        "dims": list(dims),
        "spacing_mm": spacing_mm,
        "inplane_range_mm": inplane_range_mm,
        "plan_range_mm": plan_range_mm,
        "files": {
            "dense_gt": "dense_gt.nii",
            "landmarks": "landmarks.json",
            "stack": "stack/stack.json",
            "stack_clean": "stack_clean/stack.json",
        },
    }
    (case_dir / "case.json").write_text(json.dumps(manifest, indent=2))
    return manifest


def make_cohort(cohort_dir, n: int, seed: int = 0, **case_kwargs) -> Path:
    """n phantom cases with deterministic per-case seeds plus a manifest."""
    if n < 1:
        raise ValueError("cohort needs n >= 1")
    cohort_dir = Path(cohort_dir)
    cohort_dir.mkdir(parents=True, exist_ok=True)
    cases = []
    for k in range(n):
        name = f"case_{k:03d}"
        make_case(cohort_dir / name, seed=seed + k, **case_kwargs)
        cases.append(name)
    manifest = {"n": n, "seed": seed, "cases": cases, "case_kwargs": case_kwargs}
    path = cohort_dir / "cohort.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def _load_case(case_dir: Path):
    gt = nifti.read_label_volume(case_dir / "dense_gt.nii")
    stack = slicing.load_stack(case_dir / "stack" / "stack.json")
    return gt, stack


def _filter_views(stack: slicing.SliceStack, keep_lax) -> slicing.SliceStack:
    keep = tuple(keep_lax)
    slices = tuple(
        s for s in stack.slices
        if s.plane.view.startswith("SAX") or s.plane.view in keep
    )
    return slicing.SliceStack(slices=slices, channels=stack.channels)


def run_case(
    case_dir,
    combo: ComboSpec,
    atlas: LabelVolume,
    cfg: CaseConfig | None = None,
    keep_lax=slicing.LAX_VIEWS,
    out_dir=None,
) -> ExperimentReport:
    """Execute one combo on one case: optional SSA, rasterize, densify via
    sparse registration or external import, optional dense-mode repair,
    then metrics + topology against the dense GT."""
    cfg = cfg or CaseConfig()
    case_dir = Path(case_dir)
    out_dir = Path(out_dir) if out_dir else case_dir / f"out_{combo.name}"
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()

    gt, stack = _load_case(case_dir)
    stack = _filter_views(stack, keep_lax)
    ssa_iters = None
    if combo.use_ssa:
        stack, state = ssa.correct(stack, cfg.ssa_max_iters, cfg.ssa_window_px)
        ssa_iters = state.iterations
        slicing.save_stack(stack, out_dir / "stack_corrected")
        (out_dir / "shifts.json").write_text(
            json.dumps(
                {
                    "per_iteration_px": state.per_iteration_px,
                    "cumulative_px": state.cumulative_px(len(stack)),
                    "converged": state.converged,
                },
                indent=2,
            )
        )

    if not atlas.grid.same_lattice(gt.grid):
        from .grids import resample

        atlas = resample(atlas, gt.grid, mode="nearest")

    sparse_vol, mask = slicing.rasterize_stack(stack, gt.grid)
    nifti.write_label_volume(out_dir / "sparse.nii", sparse_vol)
    _write_provenance(out_dir / "sparse.nii", "rasterize", [case_dir], cfg)

    if combo.use_external and combo.prediction_path:
        prediction = nifti.read_label_volume(combo.prediction_path)
    else:
        sreg = reg.register(
            sparse_vol, atlas, mode=reg.SPARSE, mask=mask, cfg=cfg.registration
        )
        sreg.write_loss_trace(out_dir / "loss_trace_sparse.csv")
        prediction = reg.densify(sreg, atlas)
    nifti.write_label_volume(out_dir / "prediction.nii", prediction)
    _write_provenance(out_dir / "prediction.nii", "densify", [case_dir], cfg)

    if combo.use_dense_repair:
        dreg = reg.register(prediction, atlas, mode=reg.DENSE, cfg=cfg.registration)
        dreg.write_loss_trace(out_dir / "loss_trace_dense.csv")
        prediction = reg.densify(dreg, atlas)
        nifti.write_label_volume(out_dir / "repaired.nii", prediction)
        _write_provenance(out_dir / "repaired.nii", "dense-repair", [case_dir], cfg)

    result = metrics.evaluate_case(prediction, gt)
    topo = mesh.check_topology(prediction)
    report = ExperimentReport(
        case=case_dir.name,
        combo=combo.name,
        dice=dict(zip(result.labels, result.dice)),
        hd_mm=dict(zip(result.labels, result.hausdorff_mm)),
        topology=topo,
        ssa_iterations=ssa_iters,
        wall_time_s=time.perf_counter() - t0,
    )
    (out_dir / "report.json").write_text(json.dumps(report.as_dict(), indent=2))
    return report


def run_experiment(
    cohort_dir, combo: ComboSpec, atlas: LabelVolume,
    cfg: CaseConfig | None = None, out_csv=None,
) -> list[ExperimentReport]:
    """Run one combo over a cohort; optionally emit a per-case CSV."""
    cohort_dir = Path(cohort_dir)
    manifest = json.loads((cohort_dir / "cohort.json").read_text())
    reports = [
        run_case(cohort_dir / name, combo, atlas, cfg) for name in manifest["cases"]
    ]
    if out_csv:
        write_report_csv(reports, out_csv)
    return reports


def write_report_csv(reports: list[ExperimentReport], path) -> None:
    import csv

    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["case", "combo", "label", "dice", "hd_mm", "topology_pass"])
        for r in reports:
            for label in r.dice:
                writer.writerow(
                    [r.case, r.combo, label, f"{r.dice[label]:.6f}",
                     f"{r.hd_mm[label]:.6f}", r.topology[label]["pass"]]
                )


def summarize(reports: list[ExperimentReport]) -> dict:
    """Mean and std Dice / HD per label over a cohort run."""
    out = {}
    labels = list(reports[0].dice) if reports else []
    for label in labels:
        d = np.array([r.dice[label] for r in reports])
        h = np.array([r.hd_mm[label] for r in reports])
        out[label] = {
            "dice_mean": float(d.mean()),
            "dice_std": float(d.std()),
            "hd_mean": float(h.mean()),
            "hd_std": float(h.std()),
        }
    return out


def run_ablation(
    cohort_dir, combo: ComboSpec, atlas: LabelVolume,
    view_sets=("2/3/4", "2/4", "4"), cfg: CaseConfig | None = None,
) -> dict:
    """Per-label mean Dice for each retained-LAX-view set plus the drop
    relative to the full-view row (the 4-chamber view is always retained)."""
    for vs in view_sets:
        if vs not in ABLATION_VIEWS:
            raise ValueError(f"unknown view set {vs!r}")
        if "LAX4CH" not in ABLATION_VIEWS[vs]:
            raise ValueError("the 4-chamber view must always be retained")
    cohort_dir = Path(cohort_dir)
    manifest = json.loads((cohort_dir / "cohort.json").read_text())
    table = {}
    for vs in view_sets:
        reports = [
            run_case(
                cohort_dir / name, combo, atlas, cfg,
                keep_lax=ABLATION_VIEWS[vs],
                out_dir=cohort_dir / name / f"out_{combo.name}_views_{vs.replace('/', '')}",
            )
            for name in manifest["cases"]
        ]
        table[vs] = {
            label: float(np.mean([r.dice[label] for r in reports]))
            for label in FOREGROUND_LABELS
        }
    base = table[view_sets[0]]
    result = {"model": combo.name, "rows": []}
    for vs in view_sets:
        row = {"views": vs, "dice": table[vs],
               "delta": {k: base[k] - table[vs][k] for k in base}}
        result["rows"].append(row)
    return result
