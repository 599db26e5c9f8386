"""Batch front door for every pipeline stage, plus the service launcher.

Commands stay deterministic: identical inputs and flags give byte-identical
outputs.  Failures exit non-zero with one JSON error object on stderr.
"""

import csv
import dataclasses
import functools
import io
import json
import re
import sys
from pathlib import Path

import click
import numpy as np

from .consensus import border_mask, consensus_labels, f1_score, save_staple, staple
from .ift import SeedSet, ift_sc
from .mesh import border_mesh, export_mesh, laplacian_smooth, marching_cubes
from .tiling import TilePlan, extract_tile, plan_tiles, stitch
from .volume import LabelMap, load_labels, load_volume, save_labels, save_volume


def _machine_errors(f):
    @functools.wraps(f)
    def run(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except (ValueError, OSError) as exc:
            payload = {"error": type(exc).__name__, "message": str(exc)}
            sys.stderr.write(json.dumps(payload) + "\n")
            raise SystemExit(1)

    return run


def _parse_dims(ctx, param, value):
    parts = value.split(",")
    if len(parts) != 3:
        raise click.BadParameter("expected three comma-separated extents, e.g. 128,128,200")
    try:
        return tuple(int(p) for p in parts)
    except ValueError:
        raise click.BadParameter(f"non-integer extent in {value!r}")


@click.group()
def main():
    """Tiled collaborative 3D segmentation toolkit."""


@main.command()
@click.option("--dims", required=True, callback=_parse_dims, help="Volume extents x,y,z.")
@click.option("--tile", "tile_size", type=int, required=True, help="Cubic tile edge length.")
@click.option("--overlap", type=float, default=0.10, show_default=True)
@click.option("--border", type=float, default=0.10, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), default=None, help="Write JSON here instead of stdout.")
@_machine_errors
def plan(dims, tile_size, overlap, border, out):
    """Print the tile plan for a volume as JSON."""
    p = plan_tiles(dims, tile_size, overlap, border)
    text = p.to_json()
    if out is not None:
        out.write_text(text + "\n")
        click.echo(f"{len(p)} tiles -> {out}", err=True)
    else:
        click.echo(text)


@main.command()
@click.option("--volume", "volume_path", required=True, type=click.Path(path_type=Path))
@click.option("--plan", "plan_path", required=True, type=click.Path(path_type=Path))
@click.option("--tile", "tile_id", type=int, required=True)
@click.option("--out", required=True, type=click.Path(path_type=Path))
@_machine_errors
def extract(volume_path, plan_path, tile_id, out):
    """Copy one tile's context block out of a volume."""
    vol = load_volume(volume_path)
    p = TilePlan.from_json(plan_path.read_text())
    context, core_offset = extract_tile(vol, p, tile_id)
    save_volume(out, context)
    t = p.tile(tile_id)
    click.echo(
        json.dumps(
            {
                "tile": tile_id,
                "context_origin": list(t.context.origin),
                "context_extent": list(t.context.extent),
                "core_offset": list(core_offset),
                "core_extent": list(t.core.extent),
            }
        )
    )


@main.command()
@click.option("--volume", "volume_path", required=True, type=click.Path(path_type=Path))
@click.option("--seeds", "seeds_path", required=True, type=click.Path(path_type=Path),
              help="JSON list of {x, y, z, label}.")
@click.option("--out", required=True, type=click.Path(path_type=Path))
@_machine_errors
def segment(volume_path, seeds_path, out):
    """Grow a label raster from seed points."""
    vol = load_volume(volume_path)
    spots = json.loads(seeds_path.read_text())
    points = [(s["x"], s["y"], s["z"], s["label"]) for s in spots]
    forest = ift_sc(vol, SeedSet.from_points(vol.dims, points))
    save_labels(out, forest.labelmap())


@main.command()
@click.option("--volume", "volume_path", required=True, type=click.Path(path_type=Path))
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--staple-out", type=click.Path(path_type=Path), default=None,
              help="Also persist the posterior raster and rater profile.")
@click.option("--min-cell-voxels", type=int, default=8, show_default=True)
@click.argument("rasters", nargs=-1, required=True, type=click.Path(path_type=Path))
@_machine_errors
def consensus(volume_path, out, staple_out, min_cell_voxels, rasters):
    """Fuse label rasters from several raters into one."""
    vol = load_volume(volume_path)
    maps = [load_labels(p) for p in rasters]
    masks = [border_mask(m) for m in maps]
    result = staple(masks)
    fused = consensus_labels(vol, result, maps, min_cell_voxels=min_cell_voxels)
    save_labels(out, fused)
    if staple_out is not None:
        save_staple(staple_out, result)
    reference = result.consensus_mask()
    click.echo(
        json.dumps(
            {
                "iterations": result.iterations,
                "informative": result.informative,
                "p": [round(float(v), 6) for v in result.p],
                "q": [round(float(v), 6) for v in result.q],
                "f1": {str(p): round(f1_score(m, reference), 6) for p, m in zip(rasters, masks)},
            }
        )
    )


@main.command()
@click.option("--plan", "plan_path", required=True, type=click.Path(path_type=Path))
@click.option("--tiles", "tiles_dir", required=True, type=click.Path(path_type=Path),
              help="Directory of core label rasters named tile_<id>.")
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--partial", is_flag=True, help="Zero-fill tiles with no raster instead of failing.")
@_machine_errors
def stitch_cmd(plan_path, tiles_dir, out, partial):
    """Assemble fused tile rasters into one global label map."""
    p = TilePlan.from_json(plan_path.read_text())
    tile_labels = {}
    for f in tiles_dir.glob("tile_*.json"):
        m = re.fullmatch(r"tile_(\d+)", f.stem)
        if m:
            tile_labels[int(m.group(1))] = load_labels(f.parent / f.stem)
    if partial:
        for t in p.tiles:
            if t.id not in tile_labels:
                e = t.core.extent
                tile_labels[t.id] = LabelMap(e, np.zeros(e[0] * e[1] * e[2], dtype=np.uint32))
    fused = stitch(p, tile_labels)
    save_labels(out, fused)
    click.echo(json.dumps({"dims": list(fused.dims), "labels": int(fused.labels.max(initial=0))}))


main.add_command(stitch_cmd, name="stitch")


@main.command()
@click.option("--labels", "labels_path", required=True, type=click.Path(path_type=Path))
@click.option("--label", type=int, default=None, help="Surface of one label.")
@click.option("--border", "border_flag", is_flag=True, help="Surface of the inter-cell border instead.")
@click.option("--smooth", type=int, default=3, show_default=True)
@click.option("--lam", type=float, default=0.5, show_default=True)
@click.option("--out", required=True, type=click.Path(path_type=Path))
@_machine_errors
def mesh(labels_path, label, border_flag, smooth, lam, out):
    """Export a triangle surface as a Wavefront OBJ file."""
    if (label is None) == (not border_flag):
        raise click.UsageError("pass exactly one of --label or --border")
    lm = load_labels(labels_path)
    surface = border_mesh(border_mask(lm)) if border_flag else marching_cubes(lm, label)
    if smooth:
        surface = laplacian_smooth(surface, smooth, lam)
    out.write_text(export_mesh(surface))
    click.echo(
        json.dumps({"vertices": len(surface.vertices), "triangles": len(surface.triangles)})
    )


_SCORE_COLUMNS = ("user", "tiles", "count", "f1_mean", "f1_sd", "ops_mean", "time_mean_s")


def _score_rows(report: dict) -> list[dict]:
    rows = []
    for user in sorted(report["users"]):
        u = report["users"][user]
        rows.append(
            {
                "user": user,
                "tiles": " ".join(str(t) for t in u["tiles"]),
                "count": u["count"],
                "f1_mean": f"{u['f1_mean']:.4f}",
                "f1_sd": f"{u['f1_sd']:.4f}",
                "ops_mean": f"{u['ops_mean']:.2f}",
                "time_mean_s": f"{u['time_mean_s']:.3f}",
            }
        )
    return rows


def _score_figures(report: dict, out_dir: Path) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    users = sorted(report["users"])
    made = []

    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(users)), 3.2))
    f1 = [report["users"][u]["f1_mean"] for u in users]
    sd = [report["users"][u]["f1_sd"] for u in users]
    ax.bar(range(len(users)), f1, yerr=sd, capsize=4, color="#4878a8")
    ax.set_xticks(range(len(users)), users)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("mean F1 vs consensus")
    ax.set_title("Agreement by user")
    fig.tight_layout()
    path = out_dir / "f1_by_user.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    made.append(path)

    fig, axes = plt.subplots(1, 2, figsize=(max(6.0, 2.0 * len(users)), 3.2))
    ops = [report["users"][u]["ops_mean"] for u in users]
    secs = [report["users"][u]["time_mean_s"] for u in users]
    axes[0].bar(range(len(users)), ops, color="#6a9a58")
    axes[0].set_xticks(range(len(users)), users)
    axes[0].set_ylabel("mean ops per tile")
    axes[1].bar(range(len(users)), secs, color="#b08a4a")
    axes[1].set_xticks(range(len(users)), users)
    axes[1].set_ylabel("mean seconds per tile")
    fig.suptitle("Effort by user")
    fig.tight_layout()
    path = out_dir / "effort_by_user.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    made.append(path)
    return made


@main.command()
@click.option("--data", "data_dir", required=True, type=click.Path(path_type=Path),
              help="Service data directory.")
@click.option("--project", "pid", default=None, help="Project id (optional when only one exists).")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), default=None,
              help="Directory for scores.csv and the rendered figures.")
@_machine_errors
def score(data_dir, pid, out_dir):
    """Tabulate per-user agreement and effort for a project."""
    from .service.config import ServiceConfig
    from .service.workflow import Workflow

    wf = Workflow(ServiceConfig(data_dir=str(data_dir)))
    ids = sorted(wf.projects)
    if pid is None:
        if len(ids) != 1:
            raise click.UsageError(f"--project required; found {ids or 'no projects'}")
        pid = ids[0]
    report = wf.scores(pid)

    rows = _score_rows(report)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=_SCORE_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    text = buf.getvalue()
    click.echo(text, nl=False)

    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "scores.csv").write_text(text)
        made = _score_figures(report, out_dir)
        click.echo(
            json.dumps({"csv": str(out_dir / "scores.csv"), "figures": [str(m) for m in made]}),
            err=True,
        )


@main.command()
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=None, help="Overrides the config file port.")
@click.option("--data", "data_dir", type=click.Path(path_type=Path), default=None)
@click.option("--k", type=int, default=None, help="Results per tile before consensus.")
@_machine_errors
def serve(config_path, host, port, data_dir, k):
    """Run the collaboration service."""
    import uvicorn

    from .service.app import create_app
    from .service.config import ServiceConfig

    cfg = ServiceConfig.load(path=config_path)
    overrides = {}
    if port is not None:
        overrides["port"] = port
    if data_dir is not None:
        overrides["data_dir"] = str(data_dir)
    if k is not None:
        overrides["results_per_tile"] = k
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    uvicorn.run(create_app(cfg), host=host, port=cfg.port)


if __name__ == "__main__":
    main()
