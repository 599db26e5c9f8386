"""Multi-user tile workflow: dispatch, live sessions, fusion, stitching.

All segmentation happens server-side.  Clients open a session on a tile,
stream editing operations, and receive label deltas; K completed results
per tile trigger consensus fusion, and fused tiles stitch into the global
map.  Everything durable lives in the ProjectStore; live sessions are
memory-only by design, so a restart reverts in-progress tiles to open
without touching completed submissions.
"""

from __future__ import annotations

import statistics
import threading
import time
import uuid
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..consensus import border_mask, consensus_labels, f1_score, staple
from ..dift import DiftStats
from ..mesh import border_mesh, laplacian_smooth, marching_cubes
from ..session import EditSession
from ..tiling import TilePlan, crop_context, extract_tile, plan_tiles, stitch
from ..volume import LabelMap, Volume3D
from .config import ServiceConfig
from .store import ProjectStore

__all__ = [
    "ServiceError",
    "NotFoundError",
    "ConflictError",
    "LiveSession",
    "ProjectState",
    "Workflow",
]


class ServiceError(ValueError):
    pass


class NotFoundError(ServiceError):
    pass


class ConflictError(ServiceError):
    pass


@dataclass
class LiveSession:
    token: str
    project_id: str
    tile_id: int
    user: str
    editor: EditSession
    mode: str  # "scratch" | "correction"
    started: float = field(default_factory=time.monotonic)
    op_count: int = 0
    closed: bool = False
    lock: threading.RLock = field(default_factory=threading.RLock)


@dataclass
class ProjectState:
    id: str
    volume: Volume3D
    plan: TilePlan
    preseg: LabelMap | None
    k: int
    skips: dict[int, list[str]]
    submissions: dict[int, list[str]]  # tile -> users with stored results
    lock: threading.RLock = field(default_factory=threading.RLock)
    consensus_futures: dict[int, Future] = field(default_factory=dict)


def _stats_dict(stats: DiftStats, n: int) -> dict:
    return {
        "orphaned": stats.orphaned,
        "frontier": stats.frontier,
        "reevaluated": stats.reevaluated,
        "rounds": stats.rounds,
        "touched_fraction": round(stats.touched_fraction(n), 6),
    }


class Workflow:
    def __init__(self, config: ServiceConfig):
        self.config = config
        self.store = ProjectStore(config.data_dir)
        self.projects: dict[str, ProjectState] = {}
        self.sessions: dict[str, LiveSession] = {}
        self.lock = threading.RLock()
        self.executor = ThreadPoolExecutor(max_workers=2)
        for pid in self.store.project_ids():
            self.projects[pid] = self._load_project(pid)

    # -- projects ----------------------------------------------------------

    def _load_project(self, pid: str) -> ProjectState:
        meta, volume, preseg = self.store.read_project(pid)
        plan = TilePlan.from_json(meta["plan"])
        submissions = {
            t.id: self.store.submission_users(pid, t.id) for t in plan.tiles
        }
        return ProjectState(
            id=pid,
            volume=volume,
            plan=plan,
            preseg=preseg,
            k=int(meta["k"]),
            skips=self.store.read_skips(pid),
            submissions=submissions,
        )

    def create_project(
        self,
        volume: Volume3D,
        tile_size: int | None = None,
        overlap_fraction: float | None = None,
        border_fraction: float | None = None,
        k: int | None = None,
        preseg: LabelMap | None = None,
    ) -> ProjectState:
        cfg = self.config
        tile_size = cfg.tile_size if tile_size is None else tile_size
        overlap_fraction = cfg.overlap_fraction if overlap_fraction is None else overlap_fraction
        border_fraction = cfg.border_fraction if border_fraction is None else border_fraction
        k = cfg.results_per_tile if k is None else k
        if k < 1:
            raise ServiceError(f"results per tile must be >= 1, got {k}")
        if preseg is not None and preseg.dims != volume.dims:
            raise ServiceError(
                f"pre-segmentation dims {preseg.dims} do not match volume dims {volume.dims}"
            )
        plan = plan_tiles(volume.dims, tile_size, overlap_fraction, border_fraction)
        pid = self.store.new_project_id()
        meta = {
            "id": pid,
            "k": k,
            "tile_size": tile_size,
            "overlap_fraction": overlap_fraction,
            "border_fraction": border_fraction,
            "plan": plan.to_json(),
        }
        self.store.write_project(pid, meta, volume, preseg)
        state = ProjectState(
            id=pid,
            volume=volume,
            plan=plan,
            preseg=preseg,
            k=k,
            skips={},
            submissions={t.id: [] for t in plan.tiles},
        )
        with self.lock:
            self.projects[pid] = state
        return state

    def project(self, pid: str) -> ProjectState:
        with self.lock:
            if pid not in self.projects:
                raise NotFoundError(f"no project {pid}")
            return self.projects[pid]

    def set_presegmentation(self, pid: str, preseg: LabelMap) -> None:
        p = self.project(pid)
        with p.lock:
            if preseg.dims != p.volume.dims:
                raise ServiceError(
                    f"pre-segmentation dims {preseg.dims} do not match volume dims {p.volume.dims}"
                )
            if any(p.submissions.values()):
                raise ConflictError("project already has submissions; pre-segmentation is frozen")
            self.store.write_preseg(pid, preseg)
            p.preseg = preseg

    def task_status(self, p: ProjectState, tile_id: int) -> str:
        if self.store.has_consensus(p.id, tile_id):
            return "consensus_ready"
        if len(p.submissions.get(tile_id, [])) >= p.k:
            return "done_pending_consensus"
        with self.lock:
            live = any(
                s.project_id == p.id and s.tile_id == tile_id and not s.closed
                for s in self.sessions.values()
            )
        return "in_progress" if live else "open"

    def project_info(self, pid: str) -> dict:
        p = self.project(pid)
        with p.lock:
            tiles = []
            for t in p.plan.tiles:
                tiles.append(
                    {
                        "tile_id": t.id,
                        "status": self.task_status(p, t.id),
                        "submissions": sorted(p.submissions.get(t.id, [])),
                        "skips": sorted(p.skips.get(t.id, [])),
                    }
                )
        return {
            "id": p.id,
            "dims": list(p.volume.dims),
            "k": p.k,
            "tile_count": len(p.plan),
            "has_presegmentation": p.preseg is not None,
            "plan": p.plan.to_json(),
            "tiles": tiles,
        }

    # -- dispatch and sessions --------------------------------------------

    def next_tile(self, pid: str, user: str) -> dict | None:
        """Pick the open tile this user hasn't touched, fewest submissions
        first, then lowest id; open a live session on it."""
        p = self.project(pid)
        with p.lock:
            best = None
            for t in p.plan.tiles:
                subs = p.submissions.get(t.id, [])
                if user in subs or user in p.skips.get(t.id, []):
                    continue
                if len(subs) >= p.k:
                    continue
                key = (len(subs), t.id)
                if best is None or key < best[0]:
                    best = (key, t.id)
            if best is None:
                return None
            tile_id = best[1]

            with self.lock:
                for s in list(self.sessions.values()):
                    if s.project_id == pid and s.user == user and not s.closed:
                        s.closed = True  # a user drives one session at a time
                        del self.sessions[s.token]

            context_volume, core_offset = extract_tile(p.volume, p.plan, tile_id)
            if p.preseg is not None:
                t = p.plan.tile(tile_id)
                block = p.preseg.as_3d()[t.context.slices()].copy()
                tile_preseg = LabelMap(t.context.extent, block.reshape(-1))
                mode = "correction"
            else:
                tile_preseg = None
                mode = "scratch"
            editor = EditSession(context_volume, presegmentation=tile_preseg, tile_ref=(pid, tile_id))
            session = LiveSession(
                token=uuid.uuid4().hex,
                project_id=pid,
                tile_id=tile_id,
                user=user,
                editor=editor,
                mode=mode,
            )
            with self.lock:
                self.sessions[session.token] = session
        return {
            "tile": tile_id,
            "session": session.token,
            "mode": mode,
            "context_dims": list(context_volume.dims),
            "core_dims": list(p.plan.tile(tile_id).core.extent),
            "core_offset": list(core_offset),
            "core_origin": list(p.plan.tile(tile_id).core.origin),
        }

    def session(self, token: str) -> LiveSession:
        with self.lock:
            if token not in self.sessions:
                raise NotFoundError(f"no session {token}")
            return self.sessions[token]

    def apply_op(self, token: str, payload: dict) -> dict:
        s = self.session(token)
        with s.lock:
            if s.closed:
                raise ConflictError("session is closed")
            if not isinstance(payload, dict) or "op" not in payload:
                raise ServiceError("operation payload needs an 'op' field")
            op = payload["op"]
            editor = s.editor

            def arg(name):
                if name not in payload:
                    raise ServiceError(f"operation '{op}' needs '{name}'")
                return payload[name]

            if op == "add":
                delta = editor.add(arg("polyline"))
            elif op == "extend":
                delta = editor.extend(int(arg("label")), arg("polyline"))
            elif op == "split":
                delta = editor.split(int(arg("label")), arg("polyline"))
            elif op == "remove":
                delta = editor.remove(int(arg("scribble")))
            elif op == "merge":
                delta = editor.merge(int(arg("a")), int(arg("b")))
            elif op == "undo":
                delta = editor.undo()
            elif op == "redo":
                delta = editor.redo()
            elif op == "erase_all":
                delta = editor.erase_all()
            else:
                raise ServiceError(f"unknown operation '{op}'")

            noop = delta is None
            if not noop:
                s.op_count += 1
            response = {
                "runs": [] if noop else [list(r) for r in delta.changed],
                "noop": noop,
                "stats": {} if noop else _stats_dict(delta.stats, editor.volume.size),
            }
            if op in ("add", "extend", "split") and editor.cursor > 0:
                record = editor.op_log[editor.cursor - 1]
                response["scribble"] = record.created.id
                response["label"] = editor.alias.find(record.created.label)
            return response

    def session_labels(self, token: str) -> LabelMap:
        s = self.session(token)
        with s.lock:
            return s.editor.labelmap()

    def session_volume(self, token: str) -> Volume3D:
        s = self.session(token)
        return s.editor.volume

    # -- finishing and fusion ---------------------------------------------

    def finish(self, token: str, verdict: str) -> dict:
        if verdict not in ("done", "skip"):
            raise ServiceError(f"verdict must be 'done' or 'skip', got '{verdict}'")
        s = self.session(token)
        with s.lock:
            if s.closed:
                raise ConflictError("session already finished")
            s.closed = True
        with self.lock:
            self.sessions.pop(token, None)

        p = self.project(s.project_id)
        with p.lock:
            tile_id = s.tile_id
            subs = p.submissions.setdefault(tile_id, [])
            if verdict == "skip":
                skippers = p.skips.setdefault(tile_id, [])
                if s.user not in skippers:
                    skippers.append(s.user)
                    self.store.write_skips(p.id, p.skips)
                return {"tile": tile_id, "status": self.task_status(p, tile_id), "submissions": len(subs)}

            if s.user in subs:
                raise ConflictError(f"user {s.user} already submitted tile {tile_id}")
            if len(subs) >= p.k:
                raise ConflictError(f"tile {tile_id} already has {p.k} submissions")
            core_labels = crop_context(s.editor.labelmap(), p.plan, tile_id)
            elapsed = time.monotonic() - s.started
            self.store.write_submission(
                p.id,
                tile_id,
                s.user,
                core_labels,
                {"user": s.user, "op_count": s.op_count, "elapsed_s": round(elapsed, 3)},
            )
            subs.append(s.user)
            if len(subs) >= p.k:
                p.consensus_futures[tile_id] = self.executor.submit(
                    self._compute_consensus, p.id, tile_id
                )
            return {"tile": tile_id, "status": self.task_status(p, tile_id), "submissions": len(subs)}

    def _core_volume(self, p: ProjectState, tile_id: int) -> Volume3D:
        t = p.plan.tile(tile_id)
        block = p.volume.as_3d()[t.core.slices()].copy()
        return Volume3D(t.core.extent, block.reshape(-1), p.volume.spacing)

    def _compute_consensus(self, pid: str, tile_id: int) -> None:
        p = self.project(pid)
        with p.lock:
            if self.store.has_consensus(pid, tile_id):
                return
            users = sorted(p.submissions.get(tile_id, []))
            maps = []
            metas = {}
            for u in users:
                lm, meta = self.store.read_submission(pid, tile_id, u)
                maps.append(lm)
                metas[u] = meta
            masks = [border_mask(m) for m in maps]

            if len(maps) == 1:
                # k=1 projects: a lone result needs no fusion
                fused = maps[0]
                result = None
                f1 = {users[0]: 1.0}
                em = {"iterations": 0, "informative": False, "p": [], "q": []}
            elif not any(m.bits.any() for m in masks):
                # every rater drew one undivided cell: nothing to fuse
                core = p.plan.tile(tile_id).core.extent
                fused = LabelMap(core, np.ones(core[0] * core[1] * core[2], dtype=np.uint32))
                result = None
                f1 = {u: 1.0 for u in users}
                em = {"iterations": 0, "informative": False, "p": [], "q": []}
            else:
                result = staple(masks)
                fused = consensus_labels(self._core_volume(p, tile_id), result, maps)
                reference = result.consensus_mask()
                f1 = {u: f1_score(masks[i], reference) for i, u in enumerate(users)}
                em = {
                    "iterations": result.iterations,
                    "informative": result.informative,
                    "p": [float(v) for v in result.p],
                    "q": [float(v) for v in result.q],
                }
            meta = {
                "tile": tile_id,
                "users": users,
                "f1": f1,
                "em": em,
                "submission_meta": metas,
            }
            self.store.write_consensus(pid, tile_id, fused, result, meta)

    def consensus(self, pid: str, tile_id: int) -> tuple[LabelMap, dict]:
        p = self.project(pid)
        if not 0 <= tile_id < len(p.plan):
            raise NotFoundError(f"no tile {tile_id}")
        if not self.store.has_consensus(pid, tile_id):
            with p.lock:
                have = len(p.submissions.get(tile_id, []))
            if have < p.k:
                raise ConflictError(
                    f"tile {tile_id} has {have} of {p.k} submissions; consensus not available"
                )
            future = p.consensus_futures.get(tile_id)
            if future is not None:
                future.result()
            else:
                self._compute_consensus(pid, tile_id)  # reload path after a restart
        return self.store.read_consensus(pid, tile_id)

    def stitched(self, pid: str, partial: bool = False) -> LabelMap:
        p = self.project(pid)
        tile_labels: dict[int, LabelMap] = {}
        missing: list[int] = []
        for t in p.plan.tiles:
            with p.lock:
                have = len(p.submissions.get(t.id, []))
            if have >= p.k or self.store.has_consensus(pid, t.id):
                labels, _ = self.consensus(pid, t.id)
                tile_labels[t.id] = labels
            else:
                missing.append(t.id)
        if missing and not partial:
            raise ConflictError(f"tiles without consensus: {missing}")
        for t_id in missing:
            core = p.plan.tile(t_id).core.extent
            tile_labels[t_id] = LabelMap(core, np.zeros(core[0] * core[1] * core[2], dtype=np.uint32))
        return stitch(p.plan, tile_labels)

    # -- meshes ------------------------------------------------------------

    @staticmethod
    def _meshes_of(labels: LabelMap, smooth_iterations: int, lam: float) -> dict:
        out: dict = {"labels": {}}
        for lab in np.unique(labels.labels).tolist():
            if lab == 0:
                continue
            mesh = laplacian_smooth(marching_cubes(labels, lab), smooth_iterations, lam)
            out["labels"][str(lab)] = mesh.to_dict()
        wall = laplacian_smooth(border_mesh(border_mask(labels)), smooth_iterations, lam)
        out["border"] = wall.to_dict()
        return out

    def session_meshes(self, token: str, smooth_iterations: int = 3, lam: float = 0.5) -> dict:
        s = self.session(token)
        with s.lock:
            labels = s.editor.labelmap()
        return self._meshes_of(labels, smooth_iterations, lam)

    def tile_meshes(self, pid: str, tile_id: int, smooth_iterations: int = 3, lam: float = 0.5) -> dict:
        labels, _ = self.consensus(pid, tile_id)
        return self._meshes_of(labels, smooth_iterations, lam)

    # -- reporting ---------------------------------------------------------

    def scores(self, pid: str) -> dict:
        p = self.project(pid)
        per_user: dict[str, dict] = {}
        fused_tiles = []
        for t in p.plan.tiles:
            if not self.store.has_consensus(pid, t.id):
                continue
            fused_tiles.append(t.id)
            _, meta = self.store.read_consensus(pid, t.id)
            for u, score in meta["f1"].items():
                entry = per_user.setdefault(
                    u, {"tiles": {}, "ops": [], "times": []}
                )
                entry["tiles"][t.id] = score
                sub = meta.get("submission_meta", {}).get(u, {})
                if "op_count" in sub:
                    entry["ops"].append(sub["op_count"])
                if "elapsed_s" in sub:
                    entry["times"].append(sub["elapsed_s"])

        users = {}
        for u, entry in sorted(per_user.items()):
            f1s = [entry["tiles"][t] for t in sorted(entry["tiles"])]
            users[u] = {
                "tiles": {str(t): entry["tiles"][t] for t in sorted(entry["tiles"])},
                "count": len(f1s),
                "f1_mean": statistics.fmean(f1s) if f1s else None,
                "f1_sd": statistics.stdev(f1s) if len(f1s) > 1 else 0.0,
                "ops_mean": statistics.fmean(entry["ops"]) if entry["ops"] else None,
                "time_mean_s": statistics.fmean(entry["times"]) if entry["times"] else None,
            }

        with p.lock:
            open_tiles = [
                t.id
                for t in p.plan.tiles
                if len(p.submissions.get(t.id, [])) < p.k
                and not self.store.has_consensus(pid, t.id)
            ]
            all_users = {u for subs in p.submissions.values() for u in subs} | {
                u for sk in p.skips.values() for u in sk
            }
            skipped_by_all = [
                t
                for t in open_tiles
                if all_users
                and all_users <= set(p.skips.get(t, [])) | set(p.submissions.get(t, []))
                and not p.submissions.get(t, [])
            ]
        return {
            "project": pid,
            "users": users,
            "fused_tiles": fused_tiles,
            "open_tiles": open_tiles,
            "skipped_by_all": skipped_by_all,
        }
