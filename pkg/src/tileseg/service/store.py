"""File-backed project persistence.

One directory per project:

    <root>/<project id>/
        project.json            id, K, plan, creation params
        volume.json / .raw      the full image stack
        preseg.json / .raw      optional pre-segmentation
        tasks.json              per-tile skip lists
        submissions/tile_<t>/<user>.labels.{json,raw}   core-cropped result
        submissions/tile_<t>/<user>.meta.json           op count, elapsed
        consensus/tile_<t>.labels.{json,raw}            fused labels
        consensus/tile_<t>.staple.{json,raw}            posterior + p,q
        consensus/tile_<t>.meta.json                    per-user F1

Submissions are discovered by listing the directory, so a crash between
writes never corrupts bookkeeping: whatever finished writing is counted,
nothing else is.  JSON writes go through a temp file + rename.
"""

from __future__ import annotations

import json
import os
import uuid
from pathlib import Path

from ..consensus import StapleResult, load_staple, save_staple
from ..volume import LabelMap, Volume3D, load_labels, load_volume, save_labels, save_volume

__all__ = ["ProjectStore"]


def _write_json_atomic(path: Path, obj) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2) + "\n")
    os.replace(tmp, path)


class ProjectStore:
    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    # -- project lifecycle -------------------------------------------------

    def new_project_id(self) -> str:
        return uuid.uuid4().hex[:12]

    def project_ids(self) -> list[str]:
        return sorted(
            d.name for d in self.root.iterdir() if (d / "project.json").exists()
        )

    def project_dir(self, pid: str) -> Path:
        return self.root / pid

    def write_project(self, pid: str, meta: dict, volume: Volume3D, preseg: LabelMap | None):
        d = self.project_dir(pid)
        d.mkdir(parents=True, exist_ok=True)
        save_volume(d / "volume", volume)
        if preseg is not None:
            save_labels(d / "preseg", preseg)
        _write_json_atomic(d / "project.json", meta)

    def read_project(self, pid: str) -> tuple[dict, Volume3D, LabelMap | None]:
        d = self.project_dir(pid)
        meta = json.loads((d / "project.json").read_text())
        volume = load_volume(d / "volume")
        preseg = load_labels(d / "preseg") if (d / "preseg.json").exists() else None
        return meta, volume, preseg

    def write_preseg(self, pid: str, preseg: LabelMap) -> None:
        save_labels(self.project_dir(pid) / "preseg", preseg)

    # -- per-tile task state ----------------------------------------------

    def read_skips(self, pid: str) -> dict[int, list[str]]:
        path = self.project_dir(pid) / "tasks.json"
        if not path.exists():
            return {}
        raw = json.loads(path.read_text())
        return {int(t): list(users) for t, users in raw.get("skips", {}).items()}

    def write_skips(self, pid: str, skips: dict[int, list[str]]) -> None:
        obj = {"skips": {str(t): users for t, users in sorted(skips.items())}}
        _write_json_atomic(self.project_dir(pid) / "tasks.json", obj)

    def _tile_dir(self, pid: str, tile_id: int) -> Path:
        return self.project_dir(pid) / "submissions" / f"tile_{tile_id}"

    def write_submission(
        self, pid: str, tile_id: int, user: str, labels: LabelMap, meta: dict
    ) -> None:
        d = self._tile_dir(pid, tile_id)
        d.mkdir(parents=True, exist_ok=True)
        save_labels(d / f"{user}.labels", labels)
        _write_json_atomic(d / f"{user}.meta.json", meta)

    def submission_users(self, pid: str, tile_id: int) -> list[str]:
        d = self._tile_dir(pid, tile_id)
        if not d.is_dir():
            return []
        users = []
        for meta in d.glob("*.meta.json"):
            user = meta.name[: -len(".meta.json")]
            if (d / f"{user}.labels.json").exists():
                users.append(user)
        return sorted(users)

    def read_submission(self, pid: str, tile_id: int, user: str) -> tuple[LabelMap, dict]:
        d = self._tile_dir(pid, tile_id)
        labels = load_labels(d / f"{user}.labels")
        meta = json.loads((d / f"{user}.meta.json").read_text())
        return labels, meta

    # -- consensus products ------------------------------------------------

    def _consensus_base(self, pid: str, tile_id: int) -> Path:
        d = self.project_dir(pid) / "consensus"
        d.mkdir(parents=True, exist_ok=True)
        return d / f"tile_{tile_id}"

    def write_consensus(
        self,
        pid: str,
        tile_id: int,
        labels: LabelMap,
        staple_result: StapleResult | None,
        meta: dict,
    ) -> None:
        base = self._consensus_base(pid, tile_id)
        save_labels(Path(str(base) + ".labels"), labels)
        if staple_result is not None:
            save_staple(Path(str(base) + ".staple"), staple_result)
        _write_json_atomic(Path(str(base) + ".meta.json"), meta)

    def has_consensus(self, pid: str, tile_id: int) -> bool:
        base = self.project_dir(pid) / "consensus" / f"tile_{tile_id}"
        return Path(str(base) + ".meta.json").exists()

    def read_consensus(self, pid: str, tile_id: int) -> tuple[LabelMap, dict]:
        base = self.project_dir(pid) / "consensus" / f"tile_{tile_id}"
        labels = load_labels(Path(str(base) + ".labels"))
        meta = json.loads(Path(str(base) + ".meta.json").read_text())
        return labels, meta

    def read_staple(self, pid: str, tile_id: int) -> StapleResult | None:
        base = self.project_dir(pid) / "consensus" / f"tile_{tile_id}"
        if not Path(str(base) + ".staple.json").exists():
            return None
        return load_staple(Path(str(base) + ".staple"))
