import json

import numpy as np
import pytest
from click.testing import CliRunner

from tileseg.cli import main
from tileseg.service import ServiceConfig, Workflow
from tileseg.volume import LabelMap, Volume3D, load_labels, save_labels, save_volume

from oracles import parse_obj_ref


runner = CliRunner()


def run_ok(*args):
    result = runner.invoke(main, [str(a) for a in args])
    assert result.exit_code == 0, result.output + getattr(result, "stderr", "")
    return result


def two_chamber_volume(dims=(10, 8, 6), wall_x=5):
    nx, ny, nz = dims
    a = np.zeros((nz, ny, nx), dtype=np.uint8)
    a[:, :, wall_x] = 200
    return Volume3D(dims, a.reshape(-1))


def test_plan_reports_the_expected_tiling(tmp_path):
    r = run_ok("plan", "--dims", "128,128,200", "--tile", "40",
               "--overlap", "0.1", "--border", "0.1")
    d = json.loads(r.output)
    assert len(d["tiles"]) == 96
    assert d["tile_size"] == 40

    out = tmp_path / "plan.json"
    run_ok("plan", "--dims", "128,128,200", "--tile", "40", "--out", out)
    assert len(json.loads(out.read_text())["tiles"]) == 96


def test_plan_rejects_malformed_dims():
    result = runner.invoke(main, ["plan", "--dims", "128x128", "--tile", "40"])
    assert result.exit_code != 0


def test_segment_single_seed_labels_everything(tmp_path):
    vol = Volume3D((4, 4, 4), np.zeros(64, dtype=np.uint8))
    save_volume(tmp_path / "vol", vol)
    (tmp_path / "seeds.json").write_text(json.dumps([{"x": 1, "y": 1, "z": 1, "label": 7}]))
    run_ok("segment", "--volume", tmp_path / "vol",
           "--seeds", tmp_path / "seeds.json", "--out", tmp_path / "labels")
    lm = load_labels(tmp_path / "labels")
    assert (lm.labels == 7).all()


def test_segment_splits_chambers_and_is_byte_deterministic(tmp_path):
    save_volume(tmp_path / "vol", two_chamber_volume())
    seeds = [{"x": 1, "y": 1, "z": 1, "label": 1}, {"x": 8, "y": 1, "z": 1, "label": 2}]
    (tmp_path / "seeds.json").write_text(json.dumps(seeds))
    for name in ("a", "b"):
        run_ok("segment", "--volume", tmp_path / "vol",
               "--seeds", tmp_path / "seeds.json", "--out", tmp_path / name)
    first = (tmp_path / "a.raw").read_bytes()
    assert first == (tmp_path / "b.raw").read_bytes()
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    lm = load_labels(tmp_path / "a").as_3d()
    assert (lm[:, :, :5] == 1).all()
    assert (lm[:, :, 6:] == 2).all()


def test_extract_writes_the_context_block(tmp_path):
    vol = Volume3D((12, 12, 8), np.arange(12 * 12 * 8, dtype=np.uint16) % 251)
    save_volume(tmp_path / "vol", vol)
    r = run_ok("plan", "--dims", "12,12,8", "--tile", "8",
               "--overlap", "0.5", "--border", "0", "--out", tmp_path / "plan.json")
    r = run_ok("extract", "--volume", tmp_path / "vol", "--plan", tmp_path / "plan.json",
               "--tile", "0", "--out", tmp_path / "t0")
    meta = json.loads(r.output)
    assert meta["tile"] == 0
    header = json.loads((tmp_path / "t0.json").read_text())
    assert header["dims"] == meta["context_extent"]


def test_consensus_of_identical_inputs_is_identity_up_to_relabeling(tmp_path):
    vol = two_chamber_volume()
    save_volume(tmp_path / "vol", vol)
    a = np.ones((6, 8, 10), dtype=np.uint32)
    a[:, :, 6:] = 2
    lm = LabelMap((10, 8, 6), a.reshape(-1))
    for name in ("r1", "r2", "r3"):
        save_labels(tmp_path / name, lm)
    r = run_ok("consensus", "--volume", tmp_path / "vol", "--out", tmp_path / "fused",
               "--staple-out", tmp_path / "post",
               tmp_path / "r1", tmp_path / "r2", tmp_path / "r3")
    report = json.loads(r.output)
    assert all(v == 1.0 for v in report["f1"].values())
    assert len(report["p"]) == 3

    fused = load_labels(tmp_path / "fused").labels
    pairs = set(zip(lm.labels.tolist(), fused.tolist()))
    assert len(pairs) == len(set(p[0] for p in pairs)) == len(set(p[1] for p in pairs))
    assert (tmp_path / "post.raw").exists()


def test_stitch_assembles_cores_and_partial_zero_fills(tmp_path):
    run_ok("plan", "--dims", "12,12,8", "--tile", "8", "--overlap", "0.5",
           "--border", "0", "--out", tmp_path / "plan.json")
    plan = json.loads((tmp_path / "plan.json").read_text())
    tiles = tmp_path / "tiles"
    tiles.mkdir()
    for t in plan["tiles"]:
        e = t["core"]["extent"]
        save_labels(tiles / f"tile_{t['id']}",
                    LabelMap(tuple(e), np.ones(e[0] * e[1] * e[2], dtype=np.uint32)))
    r = run_ok("stitch", "--plan", tmp_path / "plan.json", "--tiles", tiles,
               "--out", tmp_path / "whole")
    whole = load_labels(tmp_path / "whole")
    assert whole.dims == (12, 12, 8)
    assert (whole.labels == 1).all()

    missing = tiles / "tile_0.json"
    missing.unlink()
    (tiles / "tile_0.raw").unlink()
    result = runner.invoke(main, ["stitch", "--plan", str(tmp_path / "plan.json"),
                                  "--tiles", str(tiles), "--out", str(tmp_path / "broken")])
    assert result.exit_code == 1
    err = json.loads(result.stderr.strip().splitlines()[-1])
    assert "0" in err["message"]

    run_ok("stitch", "--plan", tmp_path / "plan.json", "--tiles", tiles,
           "--out", tmp_path / "part", "--partial")
    part = load_labels(tmp_path / "part").as_3d()
    assert (part[:, :6, :6] == 0).all()  # the zero-filled core
    assert (part[:, :, 6:] != 0).any()


def test_mesh_exports_a_parsable_obj(tmp_path):
    a = np.zeros((6, 6, 6), dtype=np.uint32)
    a[2:4, 2:4, 2:4] = 5
    save_labels(tmp_path / "labels", LabelMap((6, 6, 6), a.reshape(-1)))
    r = run_ok("mesh", "--labels", tmp_path / "labels", "--label", "5",
               "--smooth", "2", "--out", tmp_path / "cell.obj")
    stats = json.loads(r.output)
    verts, tris = parse_obj_ref((tmp_path / "cell.obj").read_text())
    assert len(verts) == stats["vertices"]
    assert len(tris) == stats["triangles"] > 0

    result = runner.invoke(main, ["mesh", "--labels", str(tmp_path / "labels"),
                                  "--label", "5", "--border",
                                  "--out", str(tmp_path / "x.obj")])
    assert result.exit_code != 0


def test_failures_emit_machine_readable_json(tmp_path):
    result = runner.invoke(main, ["segment", "--volume", str(tmp_path / "absent"),
                                  "--seeds", str(tmp_path / "none.json"),
                                  "--out", str(tmp_path / "out")])
    assert result.exit_code == 1
    err = json.loads(result.stderr.strip().splitlines()[-1])
    assert err["error"] and err["message"]


def seeded_project(tmp_path):
    """A finished one-tile project with two users, built without HTTP."""
    cfg = ServiceConfig(data_dir=str(tmp_path / "data"), tile_size=8,
                        overlap_fraction=0.0, border_fraction=0.0, results_per_tile=2)
    wf = Workflow(cfg)
    vol = two_chamber_volume((8, 8, 8), wall_x=4)
    pid = wf.create_project(vol).id
    for user in ("ana", "bo"):
        desc = wf.next_tile(pid, user)
        token = desc["session"]
        wf.apply_op(token, {"op": "add", "polyline": [[1, 1, 1], [2, 6, 6]]})
        wf.apply_op(token, {"op": "add", "polyline": [[6, 1, 1], [6, 6, 6]]})
        wf.finish(token, "done")
    wf.consensus(pid, 0)  # join the background fusion
    return pid


def test_score_writes_csv_and_figures_deterministically(tmp_path):
    seeded_project(tmp_path)

    outputs = []
    for name in ("report1", "report2"):
        r = run_ok("score", "--data", tmp_path / "data", "--out", tmp_path / name)
        csv_text = (tmp_path / name / "scores.csv").read_text()
        assert r.stdout == csv_text
        f1_png = (tmp_path / name / "f1_by_user.png").read_bytes()
        effort_png = (tmp_path / name / "effort_by_user.png").read_bytes()
        assert f1_png[:8] == b"\x89PNG\r\n\x1a\n"
        assert effort_png[:8] == b"\x89PNG\r\n\x1a\n"
        outputs.append((csv_text, f1_png, effort_png))

    assert outputs[0] == outputs[1]

    lines = outputs[0][0].splitlines()
    assert lines[0] == "user,tiles,count,f1_mean,f1_sd,ops_mean,time_mean_s"
    assert len(lines) == 3
    assert lines[1].startswith("ana,0,1,1.0000,0.0000,2.00,")
    assert lines[2].startswith("bo,0,1,1.0000,0.0000,2.00,")


def test_score_requires_project_when_ambiguous(tmp_path):
    (tmp_path / "data").mkdir()
    result = runner.invoke(main, ["score", "--data", str(tmp_path / "data")])
    assert result.exit_code != 0
