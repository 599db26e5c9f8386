"""Interactive editing on one tile: scribbles in, label deltas out.

A session owns the context-padded tile volume, the live scribbles, a
union-find over their labels (so merging is a relabel, never a recompute)
and the settled forest.  Every user-facing operation reduces to a SeedEdit
applied differentially; the operation log stores each edit together with
its precomputed inverse plus the scribble bookkeeping needed to roll the
metadata back, which makes undo a differential replay rather than a state
snapshot.

Labels are handed out by a monotonic counter and never reused, even across
undo; a redone operation recreates its scribble with the recorded label, so
replay is bit-exact.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .dift import DiftStats, ForestDelta, SeedEdit, update_forest
from .ift import Forest, SeedSet, ift_sc
from .volume import LabelMap, Volume3D, coords_from_index, rle_diff

__all__ = [
    "SessionError",
    "Scribble",
    "LabelAlias",
    "EditSession",
    "rasterize_scribble",
    "geodesic_center",
    "init_from_presegmentation",
    "op_add",
    "op_extend",
    "op_remove",
    "op_split",
    "op_merge",
    "op_undo",
    "op_redo",
    "op_erase_all",
]


class SessionError(ValueError):
    """Bad operation arguments (unknown ids/labels, empty polylines...)."""


# ---------------------------------------------------------------------------
# rasterization and geodesic centers


def _round_half_away(a: np.ndarray) -> np.ndarray:
    return np.copysign(np.floor(np.abs(a) + 0.5), a).astype(np.int64)


def rasterize_scribble(dims, polyline) -> set[int]:
    """Voxels under a polyline: 3D digital segments between consecutive points.

    Points may be fractional (they come from a drawing plane); each is
    rounded half-away-from-zero to the grid first.  A segment is sampled at
    max(|dx|,|dy|,|dz|)+1 evenly spaced positions, so the result is a
    26-connected chain containing both endpoints.  A single point maps to
    its own voxel.
    """
    pts = np.atleast_2d(np.asarray(polyline, dtype=np.float64))
    if pts.size == 0:
        raise SessionError("polyline has no points")
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise SessionError("polyline points must be (x, y, z) triples")
    ipts = _round_half_away(pts)
    nx, ny, nz = dims
    for x, y, z in ipts:
        if not (0 <= x < nx and 0 <= y < ny and 0 <= z < nz):
            raise SessionError(f"polyline point ({x},{y},{z}) outside dims {tuple(dims)}")
    out: set[int] = set()
    prev = ipts[0]
    out.add(int(prev[0] + nx * (prev[1] + ny * prev[2])))
    for cur in ipts[1:]:
        steps = int(np.max(np.abs(cur - prev)))
        for i in range(1, steps + 1):
            p = _round_half_away(prev + (cur - prev) * (i / steps))
            out.add(int(p[0] + nx * (p[1] + ny * p[2])))
        prev = cur
    return out


def _or_shifted(arr: np.ndarray) -> np.ndarray:
    """True where any in-grid 6-neighbor of a True cell sits."""
    out = np.zeros_like(arr)
    out[1:, :, :] |= arr[:-1, :, :]
    out[:-1, :, :] |= arr[1:, :, :]
    out[:, 1:, :] |= arr[:, :-1, :]
    out[:, :-1, :] |= arr[:, 1:, :]
    out[:, :, 1:] |= arr[:, :, :-1]
    out[:, :, :-1] |= arr[:, :, 1:]
    return out


def geodesic_center(dims, region) -> int:
    """Deepest-interior voxel of a region, by BFS distance from its boundary.

    ``region`` is a boolean mask or an iterable of linear indices.  Boundary
    means a region voxel with an in-grid 6-neighbor outside the region;
    positions beyond the grid do not count as outside.  Distances are
    measured inside the region only (multi-source BFS), the argmax wins and
    ties go to the smallest linear index.  A disconnected region is reduced
    to its largest 6-connected component first, with a warning.  If the
    region fills the whole grid there is no boundary; every voxel is then
    equally deep and the smallest index is returned.
    """
    nx, ny, nz = dims
    n = nx * ny * nz
    if isinstance(region, (set, frozenset)):
        region = sorted(region)
    region = np.asarray(region)
    if region.dtype == bool:
        flat = region.reshape(-1)
        if flat.size != n:
            raise SessionError(f"region mask has {flat.size} entries, grid has {n}")
        flat = flat.copy()
    else:
        flat = np.zeros(n, dtype=bool)
        flat[region.reshape(-1).astype(np.int64)] = True
    if not flat.any():
        raise SessionError("region is empty")

    mask3 = flat.reshape(nz, ny, nx)
    comp, ncomp = ndimage.label(mask3, structure=ndimage.generate_binary_structure(3, 1))
    if ncomp > 1:
        warnings.warn(
            f"region has {ncomp} connected components; using the largest",
            stacklevel=2,
        )
        counts = np.bincount(comp.reshape(-1))
        counts[0] = 0
        mask3 = comp == np.argmax(counts)

    boundary = mask3 & _or_shifted(~mask3)
    dist = np.full(mask3.shape, -1, dtype=np.int32)
    dist[boundary] = 0
    frontier = boundary
    level = 0
    while frontier.any():
        frontier = _or_shifted(frontier) & mask3 & (dist < 0)
        level += 1
        dist[frontier] = level
    dist[~mask3] = -2  # keep voxels outside the kept component out of the argmax
    return int(np.argmax(dist.reshape(-1)))


def init_from_presegmentation(volume: Volume3D, labelmap: LabelMap) -> SeedSet:
    """One seed per nonzero label, placed at the label's geodesic center."""
    if labelmap.dims != volume.dims:
        raise SessionError(f"labelmap dims {labelmap.dims} != volume dims {volume.dims}")
    seeds = SeedSet()
    for lab in np.unique(labelmap.labels):
        if lab == 0:
            continue
        seeds.add(geodesic_center(volume.dims, labelmap.labels == lab), int(lab))
    return seeds


# ---------------------------------------------------------------------------
# session state


@dataclass
class Scribble:
    """One drawn stroke.  ``label`` is the raw session label; display labels
    resolve through the session's alias table."""

    id: int
    label: int
    polyline: list[tuple]
    voxels: set[int]

    def copy(self) -> "Scribble":
        return Scribble(self.id, self.label, list(self.polyline), set(self.voxels))


class LabelAlias:
    """Union-find over labels; merge points one class at another."""

    def __init__(self):
        self._parent: dict[int, int] = {}

    def find(self, lab: int) -> int:
        path = []
        while lab in self._parent:
            path.append(lab)
            lab = self._parent[lab]
        for p in path:
            self._parent[p] = lab
        return lab

    def union(self, into: int, absorbed: int) -> None:
        ra, rb = self.find(into), self.find(absorbed)
        if ra != rb:
            self._parent[rb] = ra

    def snapshot(self) -> dict[int, int]:
        return dict(self._parent)

    def restore(self, snap: dict[int, int]) -> None:
        self._parent = dict(snap)


@dataclass
class _OpRecord:
    kind: str
    edit: SeedEdit | None = None
    inverse: SeedEdit | None = None
    created: Scribble | None = None  # scribble this op introduced
    removed: list = field(default_factory=list)  # scribbles it killed (pre-op copies)
    stolen: dict[int, frozenset] = field(default_factory=dict)  # id -> voxels taken over
    alias_before: dict | None = None
    merge_pair: tuple[int, int] | None = None


class EditSession:
    """All mutable editing state for one tile."""

    def __init__(self, volume: Volume3D, presegmentation: LabelMap | None = None, tile_ref=None):
        self.volume = volume
        self.tile_ref = tile_ref
        self.alias = LabelAlias()
        self.scribbles: dict[int, Scribble] = {}
        self.op_log: list[_OpRecord] = []
        self.cursor = 0
        self._next_scribble_id = 1
        self._next_label = 1
        if presegmentation is not None:
            for v, lab in sorted(init_from_presegmentation(volume, presegmentation).items()):
                s = Scribble(self._next_scribble_id, lab, [coords_from_index(volume.dims, v)], {v})
                self.scribbles[s.id] = s
                self._next_scribble_id += 1
                self._next_label = max(self._next_label, lab + 1)
        self.forest: Forest | None = (
            ift_sc(volume, self.seed_set()) if self.scribbles else None
        )
        self._initial_scribbles = {sid: s.copy() for sid, s in self.scribbles.items()}
        self._initial_forest = self.forest.copy() if self.forest is not None else None

    # -- queries ----------------------------------------------------------

    def seed_set(self) -> SeedSet:
        """Current engine seeds: scribble voxels with alias-resolved labels."""
        seeds = SeedSet()
        for s in self.scribbles.values():
            lab = self.alias.find(s.label)
            for v in s.voxels:
                seeds.add(v, lab)
        return seeds

    def live_labels(self) -> set[int]:
        return {self.alias.find(s.label) for s in self.scribbles.values()}

    def labelmap(self) -> LabelMap:
        return LabelMap(self.volume.dims, self._label_snapshot())

    def _label_snapshot(self) -> np.ndarray:
        if self.forest is None:
            return np.zeros(self.volume.size, dtype=np.uint32)
        return self.forest.label.copy()

    # -- engine plumbing --------------------------------------------------

    def _resettle(self, pre_seeds: SeedSet, edit: SeedEdit) -> DiftStats:
        """Bring the forest in line with the current scribbles.

        Handles the unsegmented transitions in both directions; in the
        common case it delegates to the differential engine.
        """
        post = self.seed_set()
        if self.forest is None:
            if len(post):
                self.forest = ift_sc(self.volume, post)
                return DiftStats(reevaluated=self.volume.size, rounds=1)
            return DiftStats()
        if not len(post):
            self.forest = None
            return DiftStats(orphaned=self.volume.size)
        self.forest, _, stats = update_forest(self.volume, self.forest, pre_seeds, edit)
        return stats

    def _relabel_from_roots(self) -> None:
        if self.forest is None:
            return
        lut = np.zeros(self.volume.size, dtype=np.uint32)
        for v, lab in self.seed_set().items():
            lut[v] = lab
        self.forest.label[:] = lut[self.forest.root]

    def _push(self, rec: _OpRecord) -> None:
        del self.op_log[self.cursor :]  # new edits truncate the redo tail
        self.op_log.append(rec)
        self.cursor += 1

    def _delta(self, old_labels: np.ndarray, stats: DiftStats) -> ForestDelta:
        return ForestDelta(rle_diff(old_labels, self._label_snapshot()), stats)

    # -- scribble-introducing operations ----------------------------------

    def _add_scribble(self, kind: str, label: int, polyline) -> ForestDelta:
        vox = rasterize_scribble(self.volume.dims, polyline)
        old = self._label_snapshot()
        pre_seeds = self.seed_set()

        scr = Scribble(self._next_scribble_id, label, [tuple(p) for p in polyline], set(vox))
        self._next_scribble_id += 1
        stolen: dict[int, frozenset] = {}
        died: list[Scribble] = []
        for sid, other in list(self.scribbles.items()):
            common = other.voxels & vox
            if common:
                stolen[sid] = frozenset(common)
                other.voxels -= common
                if not other.voxels:
                    died.append(Scribble(other.id, other.label, other.polyline, set(common)))
                    del self.scribbles[sid]
        self.scribbles[scr.id] = scr

        resolved = self.alias.find(label)
        edit = SeedEdit(added={v: resolved for v in vox})
        inverse = edit.inverse(pre_seeds)
        stats = self._resettle(pre_seeds, edit)
        self._push(
            _OpRecord(kind, edit=edit, inverse=inverse, created=scr.copy(), removed=died, stolen=stolen)
        )
        return self._delta(old, stats)

    def add(self, polyline) -> ForestDelta:
        """New scribble under the next unused label."""
        label = self._next_label
        self._next_label += 1
        return self._add_scribble("add", label, polyline)

    def extend(self, target_label: int, polyline) -> ForestDelta:
        """New scribble carrying an existing label into more territory."""
        resolved = self.alias.find(int(target_label))
        if resolved not in self.live_labels():
            raise SessionError(f"unknown label {target_label}")
        return self._add_scribble("extend", resolved, polyline)

    def split(self, label: int, polyline) -> ForestDelta:
        """Competing scribble inside ``label``'s region; otherwise an add."""
        if self.alias.find(int(label)) not in self.live_labels():
            raise SessionError(f"unknown label {label}")
        fresh = self._next_label
        self._next_label += 1
        return self._add_scribble("split", fresh, polyline)

    # -- the other operations ---------------------------------------------

    def remove(self, scribble_id: int) -> ForestDelta:
        scr = self.scribbles.get(int(scribble_id))
        if scr is None:
            raise SessionError(f"unknown scribble id {scribble_id}")
        old = self._label_snapshot()
        pre_seeds = self.seed_set()
        del self.scribbles[scr.id]
        edit = SeedEdit(removed=frozenset(scr.voxels))
        inverse = edit.inverse(pre_seeds)
        stats = self._resettle(pre_seeds, edit)
        self._push(_OpRecord("remove", edit=edit, inverse=inverse, removed=[scr]))
        return self._delta(old, stats)

    def merge(self, label_a: int, label_b: int) -> ForestDelta:
        """Fold label_b's class into label_a.  Pure relabel, no engine work."""
        ra, rb = self.alias.find(int(label_a)), self.alias.find(int(label_b))
        live = self.live_labels()
        if ra not in live:
            raise SessionError(f"unknown label {label_a}")
        if rb not in live:
            raise SessionError(f"unknown label {label_b}")
        old = self._label_snapshot()
        if ra == rb:
            return ForestDelta([], DiftStats())  # already one class; nothing to log
        snap = self.alias.snapshot()
        self.alias.union(ra, rb)
        if self.forest is not None:
            self.forest.label[self.forest.label == rb] = ra
        self._push(_OpRecord("merge", alias_before=snap, merge_pair=(ra, rb)))
        return self._delta(old, DiftStats())

    def undo(self) -> ForestDelta | None:
        """Roll back the op before the cursor; None when there is none."""
        if self.cursor == 0:
            return None
        rec = self.op_log[self.cursor - 1]
        old = self._label_snapshot()
        stats = DiftStats()
        if rec.kind == "merge":
            self.alias.restore(rec.alias_before)
            self._relabel_from_roots()
        else:
            pre_seeds = self.seed_set()
            if rec.created is not None:
                del self.scribbles[rec.created.id]
            for snap in rec.removed:
                self.scribbles[snap.id] = snap.copy()
            for sid, taken in rec.stolen.items():
                self.scribbles[sid].voxels |= taken
            stats = self._resettle(pre_seeds, rec.inverse)
        self.cursor -= 1
        return self._delta(old, stats)

    def redo(self) -> ForestDelta | None:
        """Reapply the op at the cursor; None when at the tail."""
        if self.cursor == len(self.op_log):
            return None
        rec = self.op_log[self.cursor]
        old = self._label_snapshot()
        stats = DiftStats()
        if rec.kind == "merge":
            ra, rb = rec.merge_pair
            self.alias.union(ra, rb)
            if self.forest is not None:
                self.forest.label[self.forest.label == rb] = ra
        else:
            pre_seeds = self.seed_set()
            for sid, taken in rec.stolen.items():
                self.scribbles[sid].voxels -= taken
                if not self.scribbles[sid].voxels:
                    del self.scribbles[sid]
            for snap in rec.removed:
                self.scribbles.pop(snap.id, None)
            if rec.created is not None:
                self.scribbles[rec.created.id] = rec.created.copy()
            stats = self._resettle(pre_seeds, rec.edit)
        self.cursor += 1
        return self._delta(old, stats)

    def erase_all(self) -> ForestDelta:
        """Back to the session's initial seeds; the op log does not survive."""
        old = self._label_snapshot()
        self.scribbles = {sid: s.copy() for sid, s in self._initial_scribbles.items()}
        self.alias = LabelAlias()
        self.forest = self._initial_forest.copy() if self._initial_forest is not None else None
        self.op_log = []
        self.cursor = 0
        return self._delta(old, DiftStats())


# spec-shaped free functions; the session object carries the behavior


def op_add(session: EditSession, polyline) -> ForestDelta:
    return session.add(polyline)


def op_extend(session: EditSession, target_label: int, polyline) -> ForestDelta:
    return session.extend(target_label, polyline)


def op_remove(session: EditSession, scribble_id: int) -> ForestDelta:
    return session.remove(scribble_id)


def op_split(session: EditSession, label: int, polyline) -> ForestDelta:
    return session.split(label, polyline)


def op_merge(session: EditSession, label_a: int, label_b: int) -> ForestDelta:
    return session.merge(label_a, label_b)


def op_undo(session: EditSession) -> ForestDelta | None:
    return session.undo()


def op_redo(session: EditSession) -> ForestDelta | None:
    return session.redo()


def op_erase_all(session: EditSession) -> ForestDelta:
    return session.erase_all()
