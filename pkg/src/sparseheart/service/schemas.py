"""Pydantic request/response models for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field

# ---- shared ---------------------------------------------------------------


class RegistrationSettings(BaseModel):
    """Mirror of RegistrationConfig; every field optional so the server
    defaults apply unless overridden."""

    lam: float = 2000.0
    step_size: float = 0.001
    max_steps: int = 100
    affine_steps: int = 60
    convergence_tol: float = 1e-4
    svf_smoothing_sigma: float = 4.0
    affine_smoothing_sigma: float = 3.0
    exp_steps: int = 6


class HealthResponse(BaseModel):
    status: str
    version: str


# ---- phantom / cohort -----------------------------------------------------


class PhantomRequest(BaseModel):
    out_dir: str
    dims: tuple[int, int, int] = (160, 160, 160)
    spacing_mm: float = 1.25
    seed: int = 0
    jitter: bool = True
    defect: str | None = Field(
        default=None, description='optional "handle:<LABEL>" or "split:<LABEL>"'
    )


class PhantomResponse(BaseModel):
    volume_path: str
    landmarks_path: str | None
    landmarks: dict[str, tuple[float, float, float]] | None


class CohortRequest(BaseModel):
    out_dir: str
    n: int = Field(ge=1)
    seed: int = 0
    dims: tuple[int, int, int] = (160, 160, 160)
    spacing_mm: float = 1.25
    sax_count: int = 10
    sax_spacing_mm: float = 10.0
    inplane_range_mm: float = 8.0
    plan_range_mm: float = 2.0
    in_plane_spacing: float | None = None


class CohortResponse(BaseModel):
    manifest_path: str
    cases: list[str]


# ---- slicing --------------------------------------------------------------


class SliceRequest(BaseModel):
    volume_path: str
    landmarks_path: str
    out_dir: str
    sax_count: int = 10
    sax_spacing_mm: float = 10.0
    lax_views: list[str] = ["LAX2CH", "LAX3CH", "LAX4CH"]
    in_plane_spacing: float = 1.25
    heart_extent_mm: float = 200.0


class StackResponse(BaseModel):
    stack_path: str
    n_slices: int


class CorruptRequest(BaseModel):
    stack_path: str
    out_dir: str
    seed: int = 0
    inplane_range_mm: float = 8.0
    plan_range_mm: float = 2.0


class RasterizeRequest(BaseModel):
    stack_path: str
    out_dir: str
    dims: tuple[int, int, int] = (160, 160, 160)
    spacing_mm: float = 1.25


class RasterizeResponse(BaseModel):
    volume_path: str
    mask_path: str
    covered_voxels: int


# ---- SSA ------------------------------------------------------------------


class SsaRequest(BaseModel):
    stack_path: str
    out_dir: str
    max_iters: int = 5
    window_px: int = 10


class SsaResponse(BaseModel):
    corrected_stack_path: str
    shifts_path: str
    iterations: int
    converged: bool
    ssd_per_iteration: list[float]
    wall_time_s: float


# ---- registration ---------------------------------------------------------


class RegisterRequest(BaseModel):
    target_path: str
    atlas_path: str
    mode: str = Field(pattern="^(sparse|dense)$")
    mask_path: str | None = None
    out_dir: str
    config: RegistrationSettings = Field(default_factory=RegistrationSettings)


class RegisterResponse(BaseModel):
    prediction_path: str
    loss_trace_path: str
    velocity_path: str
    affine_linear: list[list[float]]
    affine_translation: list[float]
    steps: int
    final_losses: dict[str, float]


# ---- mesh / metrics -------------------------------------------------------


class MeshCheckRequest(BaseModel):
    volume_path: str


class ChannelTopology(BaseModel):
    channel: int
    components: int
    V: int | None
    E: int | None
    F: int | None
    chi: int | None
    passed: bool


class MeshCheckResponse(BaseModel):
    channels: dict[str, ChannelTopology]
    all_passed: bool


class MetricsRequest(BaseModel):
    pred_path: str
    gt_path: str


class MetricsResponse(BaseModel):
    labels: dict[str, dict[str, float]]  # label -> {dice, hd_mm}


# ---- experiments ----------------------------------------------------------


class ExperimentRequest(BaseModel):
    cohort_dir: str
    combo: str
    atlas_path: str
    out_csv: str | None = None
    registration: RegistrationSettings = Field(default_factory=RegistrationSettings)
    ssa_max_iters: int = 5
    ssa_window_px: int = 10


class CaseReport(BaseModel):
    case: str
    combo: str
    dice: dict[str, float]
    hd_mm: dict[str, float]
    topology_passed: dict[str, bool]
    ssa_iterations: int | None
    wall_time_s: float


class ExperimentResponse(BaseModel):
    combo: str
    reports: list[CaseReport]
    summary: dict[str, dict[str, float]]
    csv_path: str | None


class AblationRequest(BaseModel):
    cohort_dir: str
    combo: str = "SSA-SREG"
    atlas_path: str
    view_sets: list[str] = ["2/3/4", "2/4", "4"]
    registration: RegistrationSettings = Field(default_factory=RegistrationSettings)
    ssa_max_iters: int = 5
    ssa_window_px: int = 10


class AblationRow(BaseModel):
    views: str
    dice: dict[str, float]
    delta: dict[str, float]


class AblationResponse(BaseModel):
    model: str
    rows: list[AblationRow]
