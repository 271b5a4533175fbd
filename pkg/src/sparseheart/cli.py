"""Thin command-line client for the HTTP service.

By default every command talks to an in-process application instance;
pass --url to target a running server instead. Option values resolve as
CLI flag > config-file entry (JSON or TOML, sectioned by command name) >
built-in default.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if p.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(p.read_text())
    return json.loads(p.read_text())


def _client(url: str | None):
    if url:
        import httpx

        return httpx.Client(base_url=url, timeout=None)
    from fastapi.testclient import TestClient

    from .service.app import app

    return TestClient(app)


def _post(ctx, endpoint: str, payload: dict) -> dict:
    with _client(ctx.obj["url"]) as client:
        response = client.post(endpoint, json=payload)
    body = response.json()
    if response.status_code != 200:
        click.echo(json.dumps(body, indent=2), err=True)
        sys.exit(1)
    return body


def _resolve(ctx, command: str, **cli_values) -> dict:
    """CLI flag > config section > caller default (the dict values here are
    (cli_value, default) pairs; cli_value None means 'not given')."""
    section = ctx.obj["config"].get(command, {})
    out = {}
    for key, (value, default) in cli_values.items():
        out[key] = value if value is not None else section.get(key, default)
    return out


def _echo(body: dict) -> None:
    click.echo(json.dumps(body, indent=2))


@click.group()
@click.option("--url", default=None, help="Base URL of a running service; "
              "defaults to an in-process instance.")
@click.option("--config", "config_path", default=None,
              help="JSON or TOML config file with per-command defaults.")
@click.pass_context
def main(ctx, url, config_path):
    """Sparse-to-dense cardiac label reconstruction toolkit."""
    ctx.ensure_object(dict)
    ctx.obj["url"] = url
    ctx.obj["config"] = _load_config(config_path)


@main.command()
@click.option("--out", "out_dir", required=True)
@click.option("--dims", default=None, type=int, help="cubic grid size")
@click.option("--spacing", default=None, type=float)
@click.option("--seed", default=None, type=int)
@click.option("--no-jitter", is_flag=True, default=False)
@click.option("--defect", default=None, help='"handle:<LABEL>" or "split:<LABEL>"')
@click.pass_context
def phantom(ctx, out_dir, dims, spacing, seed, no_jitter, defect):
    """Generate a deterministic 5-chamber phantom (plus landmarks)."""
    v = _resolve(ctx, "phantom", dims=(dims, 160), spacing=(spacing, 1.25),
                 seed=(seed, 0), defect=(defect, None))
    _echo(_post(ctx, "/phantom", {
        "out_dir": out_dir,
        "dims": [v["dims"]] * 3,
        "spacing_mm": v["spacing"],
        "seed": v["seed"],
        "jitter": not no_jitter,
        "defect": v["defect"],
    }))


@main.command()
@click.option("--out", "out_dir", required=True)
@click.option("--n", required=True, type=int)
@click.option("--seed", default=None, type=int)
@click.option("--dims", default=None, type=int)
@click.option("--spacing", default=None, type=float)
@click.option("--sax-count", default=None, type=int)
@click.option("--sax-spacing", default=None, type=float)
@click.option("--inplane-range", default=None, type=float)
@click.option("--plan-range", default=None, type=float)
@click.option("--in-plane-spacing", default=None, type=float)
@click.pass_context
def cohort(ctx, out_dir, n, seed, dims, spacing, sax_count, sax_spacing,
           inplane_range, plan_range, in_plane_spacing):
    """Generate a seeded phantom cohort with clean and corrupted stacks."""
    v = _resolve(ctx, "cohort", seed=(seed, 0), dims=(dims, 160),
                 spacing=(spacing, 1.25), sax_count=(sax_count, 10),
                 sax_spacing=(sax_spacing, 10.0), inplane_range=(inplane_range, 8.0),
                 plan_range=(plan_range, 2.0),
                 in_plane_spacing=(in_plane_spacing, None))
    _echo(_post(ctx, "/cohort", {
        "out_dir": out_dir, "n": n, "seed": v["seed"], "dims": [v["dims"]] * 3,
        "spacing_mm": v["spacing"], "sax_count": v["sax_count"],
        "sax_spacing_mm": v["sax_spacing"], "inplane_range_mm": v["inplane_range"],
        "plan_range_mm": v["plan_range"], "in_plane_spacing": v["in_plane_spacing"],
    }))


@main.command("slice")
@click.option("--volume", required=True)
@click.option("--landmarks", required=True)
@click.option("--out", "out_dir", required=True)
@click.option("--sax-count", default=None, type=int)
@click.option("--sax-spacing", default=None, type=float)
@click.option("--lax-views", default=None, help="comma list, e.g. LAX2CH,LAX4CH")
@click.option("--in-plane-spacing", default=None, type=float)
@click.option("--extent", default=None, type=float, help="field of view, mm")
@click.pass_context
def slice_cmd(ctx, volume, landmarks, out_dir, sax_count, sax_spacing, lax_views,
              in_plane_spacing, extent):
    """Extract a SAX + LAX slice stack from a dense volume."""
    v = _resolve(ctx, "slice", sax_count=(sax_count, 10),
                 sax_spacing=(sax_spacing, 10.0),
                 lax_views=(lax_views, "LAX2CH,LAX3CH,LAX4CH"),
                 in_plane_spacing=(in_plane_spacing, 1.25), extent=(extent, 200.0))
    _echo(_post(ctx, "/slice", {
        "volume_path": volume, "landmarks_path": landmarks, "out_dir": out_dir,
        "sax_count": v["sax_count"], "sax_spacing_mm": v["sax_spacing"],
        "lax_views": [x for x in v["lax_views"].split(",") if x],
        "in_plane_spacing": v["in_plane_spacing"], "heart_extent_mm": v["extent"],
    }))


@main.command()
@click.option("--stack", required=True)
@click.option("--out", "out_dir", required=True)
@click.option("--seed", default=None, type=int)
@click.option("--inplane-range", default=None, type=float)
@click.option("--plan-range", default=None, type=float)
@click.pass_context
def corrupt(ctx, stack, out_dir, seed, inplane_range, plan_range):
    """Apply seeded breath-hold / planning corruption to a stack."""
    v = _resolve(ctx, "corrupt", seed=(seed, 0), inplane_range=(inplane_range, 8.0),
                 plan_range=(plan_range, 2.0))
    _echo(_post(ctx, "/corrupt", {
        "stack_path": stack, "out_dir": out_dir, "seed": v["seed"],
        "inplane_range_mm": v["inplane_range"], "plan_range_mm": v["plan_range"],
    }))


@main.command()
@click.option("--stack", required=True)
@click.option("--out", "out_dir", required=True)
@click.option("--dims", default=None, type=int)
@click.option("--spacing", default=None, type=float)
@click.pass_context
def rasterize(ctx, stack, out_dir, dims, spacing):
    """Paint a slice stack into a 3D grid (sparse volume + coverage mask)."""
    v = _resolve(ctx, "rasterize", dims=(dims, 160), spacing=(spacing, 1.25))
    _echo(_post(ctx, "/rasterize", {
        "stack_path": stack, "out_dir": out_dir, "dims": [v["dims"]] * 3,
        "spacing_mm": v["spacing"],
    }))


@main.command()
@click.option("--stack", required=True)
@click.option("--out", "out_dir", required=True)
@click.option("--max-iters", default=None, type=int)
@click.option("--window", default=None, type=int)
@click.option("--time", "show_time", is_flag=True, default=False,
              help="print per-case wall time")
@click.pass_context
def ssa(ctx, stack, out_dir, max_iters, window, show_time):
    """Slice-shift motion correction on a stack."""
    v = _resolve(ctx, "ssa", max_iters=(max_iters, 5), window=(window, 10))
    body = _post(ctx, "/ssa", {
        "stack_path": stack, "out_dir": out_dir,
        "max_iters": v["max_iters"], "window_px": v["window"],
    })
    _echo(body)
    if show_time:
        click.echo(f"wall time: {body['wall_time_s']:.2f} s", err=True)


@main.command()
@click.option("--target", required=True)
@click.option("--atlas", required=True)
@click.option("--mode", type=click.Choice(["sparse", "dense"]), required=True)
@click.option("--mask", default=None)
@click.option("--out", "out_dir", required=True)
@click.option("--lambda", "lam", default=None, type=float)
@click.option("--step", default=None, type=float)
@click.option("--max-steps", default=None, type=int)
@click.option("--affine-steps", default=None, type=int)
@click.option("--sigma", default=None, type=float, help="velocity smoothing, mm")
@click.option("--affine-sigma", default=None, type=float)
@click.option("--tol", default=None, type=float)
@click.option("--exp-steps", default=None, type=int)
@click.pass_context
def register(ctx, target, atlas, mode, mask, out_dir, lam, step, max_steps,
             affine_steps, sigma, affine_sigma, tol, exp_steps):
    """Variational atlas registration; emits prediction + loss trace."""
    v = _resolve(ctx, "register", lam=(lam, 2000.0), step=(step, 0.001),
                 max_steps=(max_steps, 100), affine_steps=(affine_steps, 60),
                 sigma=(sigma, 4.0), affine_sigma=(affine_sigma, 3.0),
                 tol=(tol, 1e-4), exp_steps=(exp_steps, 6))
    _echo(_post(ctx, "/register", {
        "target_path": target, "atlas_path": atlas, "mode": mode,
        "mask_path": mask, "out_dir": out_dir,
        "config": {
            "lam": v["lam"], "step_size": v["step"], "max_steps": v["max_steps"],
            "affine_steps": v["affine_steps"], "convergence_tol": v["tol"],
            "svf_smoothing_sigma": v["sigma"],
            "affine_smoothing_sigma": v["affine_sigma"],
            "exp_steps": v["exp_steps"],
        },
    }))


@main.command("mesh-check")
@click.option("--volume", required=True)
@click.pass_context
def mesh_check(ctx, volume):
    """Per-channel Euler characteristic / connectivity report."""
    body = _post(ctx, "/mesh-check", {"volume_path": volume})
    _echo(body)
    if not body["all_passed"]:
        sys.exit(2)


@main.command()
@click.option("--pred", required=True)
@click.option("--gt", required=True)
@click.pass_context
def metrics(ctx, pred, gt):
    """Dice and Hausdorff between two hard label volumes."""
    _echo(_post(ctx, "/metrics", {"pred_path": pred, "gt_path": gt}))


def _registration_payload(v: dict) -> dict:
    return {
        "lam": v["lam"], "step_size": v["step"], "max_steps": v["max_steps"],
        "affine_steps": v["affine_steps"],
        "svf_smoothing_sigma": v["sigma"], "exp_steps": v["exp_steps"],
    }


@main.command()
@click.option("--cohort", "cohort_dir", required=True)
@click.option("--combo", required=True)
@click.option("--atlas", required=True)
@click.option("--out", "out_csv", default=None)
@click.option("--lambda", "lam", default=None, type=float)
@click.option("--step", default=None, type=float)
@click.option("--max-steps", default=None, type=int)
@click.option("--affine-steps", default=None, type=int)
@click.option("--sigma", default=None, type=float)
@click.option("--exp-steps", default=None, type=int)
@click.pass_context
def experiment(ctx, cohort_dir, combo, atlas, out_csv, lam, step, max_steps,
               affine_steps, sigma, exp_steps):
    """Run one model combination over a cohort; emits a per-case CSV."""
    v = _resolve(ctx, "experiment", lam=(lam, 2000.0), step=(step, 0.001),
                 max_steps=(max_steps, 100), affine_steps=(affine_steps, 60),
                 sigma=(sigma, 4.0), exp_steps=(exp_steps, 6))
    _echo(_post(ctx, "/experiment", {
        "cohort_dir": cohort_dir, "combo": combo, "atlas_path": atlas,
        "out_csv": out_csv, "registration": _registration_payload(v),
    }))


@main.command()
@click.option("--cohort", "cohort_dir", required=True)
@click.option("--combo", default="SSA-SREG")
@click.option("--atlas", required=True)
@click.option("--views", default="2/3/4|2/4|4",
              help="view sets separated by '|', e.g. '2/3/4|2/4|4'")
@click.option("--lambda", "lam", default=None, type=float)
@click.option("--step", default=None, type=float)
@click.option("--max-steps", default=None, type=int)
@click.option("--affine-steps", default=None, type=int)
@click.option("--sigma", default=None, type=float)
@click.option("--exp-steps", default=None, type=int)
@click.pass_context
def ablation(ctx, cohort_dir, combo, atlas, views, lam, step, max_steps,
             affine_steps, sigma, exp_steps):
    """LAX-view ablation table (mean Dice and drop per retained view set)."""
    v = _resolve(ctx, "ablation", lam=(lam, 2000.0), step=(step, 0.001),
                 max_steps=(max_steps, 100), affine_steps=(affine_steps, 60),
                 sigma=(sigma, 4.0), exp_steps=(exp_steps, 6))
    _echo(_post(ctx, "/ablation", {
        "cohort_dir": cohort_dir, "combo": combo, "atlas_path": atlas,
        "view_sets": views.split("|"), "registration": _registration_payload(v),
    }))


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
