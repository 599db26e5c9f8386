"""Overlapping tile decomposition and stitching of per-tile labelings.

A plan slices the volume into cubic core boxes that overlap by a fixed
number of voxels, each wrapped in a slightly larger context box shown to
editors for orientation; context voxels are advisory and never appear in
results.  Stitching runs in four steps: per-tile labels get globally
unique provisional ids, labels of core-overlapping tiles are united when
their shared-region Jaccard reaches 0.5, each voxel takes its value from
the covering tile with the nearest core center, and the surviving ids are
compacted to 1..L.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from math import ceil, floor

import numpy as np

from .volume import LabelMap, Volume3D

__all__ = [
    "TilingError",
    "Box",
    "Tile",
    "TilePlan",
    "plan_tiles",
    "extract_tile",
    "crop_context",
    "stitch",
]


class TilingError(ValueError):
    """Bad plan parameters, unknown tile ids, or incomplete stitch input."""


def _round_half_up(x: float) -> int:
    return int(floor(x + 0.5))


@dataclass(frozen=True)
class Box:
    """Axis-aligned voxel box: ``origin`` inclusive, ``extent`` in voxels."""

    origin: tuple[int, int, int]
    extent: tuple[int, int, int]

    @property
    def end(self) -> tuple[int, int, int]:
        return tuple(o + e for o, e in zip(self.origin, self.extent))

    @property
    def volume(self) -> int:
        ex, ey, ez = self.extent
        return ex * ey * ez

    def slices(self) -> tuple[slice, slice, slice]:
        """Index object for (nz, ny, nx)-shaped arrays."""
        (ox, oy, oz), (ex, ey, ez) = self.origin, self.extent
        return (slice(oz, oz + ez), slice(oy, oy + ey), slice(ox, ox + ex))

    def center(self) -> tuple[float, float, float]:
        return tuple(o + (e - 1) / 2 for o, e in zip(self.origin, self.extent))

    def intersect(self, other: "Box") -> "Box | None":
        lo = tuple(max(a, b) for a, b in zip(self.origin, other.origin))
        hi = tuple(min(a, b) for a, b in zip(self.end, other.end))
        if any(h <= l for l, h in zip(lo, hi)):
            return None
        return Box(lo, tuple(h - l for l, h in zip(lo, hi)))


@dataclass(frozen=True)
class Tile:
    id: int
    core: Box
    context: Box


@dataclass
class TilePlan:
    dims: tuple[int, int, int]
    tile_size: int
    overlap_fraction: float
    border_fraction: float
    overlap: int  # voxels shared by consecutive cores
    border: int  # context padding per side, voxels
    stride: int
    counts: tuple[int, int, int]
    tiles: list[Tile]

    def __len__(self):
        return len(self.tiles)

    def tile(self, tile_id: int) -> Tile:
        if not 0 <= tile_id < len(self.tiles):
            raise TilingError(f"tile id {tile_id} outside plan of {len(self.tiles)} tiles")
        return self.tiles[tile_id]

    def to_json(self) -> str:
        return json.dumps(
            {
                "dims": list(self.dims),
                "tile_size": self.tile_size,
                "overlap_fraction": self.overlap_fraction,
                "border_fraction": self.border_fraction,
                "overlap": self.overlap,
                "border": self.border,
                "stride": self.stride,
                "counts": list(self.counts),
                "tiles": [
                    {
                        "id": t.id,
                        "core": {"origin": list(t.core.origin), "extent": list(t.core.extent)},
                        "context": {
                            "origin": list(t.context.origin),
                            "extent": list(t.context.extent),
                        },
                    }
                    for t in self.tiles
                ],
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "TilePlan":
        d = json.loads(text)
        tiles = [
            Tile(
                t["id"],
                Box(tuple(t["core"]["origin"]), tuple(t["core"]["extent"])),
                Box(tuple(t["context"]["origin"]), tuple(t["context"]["extent"])),
            )
            for t in d["tiles"]
        ]
        return cls(
            tuple(d["dims"]),
            d["tile_size"],
            d["overlap_fraction"],
            d["border_fraction"],
            d["overlap"],
            d["border"],
            d["stride"],
            tuple(d["counts"]),
            tiles,
        )


def _axis_origins(D: int, T: int, stride: int) -> list[int]:
    if T >= D:
        return [0]
    count = ceil((D - T) / stride) + 1
    # only the final origin can hit the clamp; the result stays strictly
    # increasing because earlier origins sit below D - T by construction
    return [min(i * stride, D - T) for i in range(count)]


def plan_tiles(
    dims, tile_size: int, overlap_fraction: float = 0.10, border_fraction: float = 0.10
) -> TilePlan:
    """Cubic tiling with the stated overlap and context border.

    Overlap and border are ``round(fraction * T)`` voxels (half rounds up);
    per-axis tile count is ``ceil((D - T) / stride) + 1`` with the last tile
    clamped to the volume face, so consecutive cores share exactly the
    overlap except possibly the final pair, which shares at least it.
    """
    nx, ny, nz = (int(d) for d in dims)
    T = int(tile_size)
    if T < 1:
        raise TilingError(f"tile size must be >= 1, got {T}")
    if min(nx, ny, nz) < 1:
        raise TilingError(f"dims must be positive, got {dims}")
    if not 0 <= overlap_fraction < 1:
        raise TilingError(f"overlap fraction must be in [0, 1), got {overlap_fraction}")
    if border_fraction < 0:
        raise TilingError(f"border fraction must be >= 0, got {border_fraction}")
    overlap = _round_half_up(overlap_fraction * T)
    border = _round_half_up(border_fraction * T)
    stride = T - overlap
    if stride < 1:
        raise TilingError(f"overlap of {overlap} voxels leaves no stride for tile size {T}")

    per_axis = [_axis_origins(D, T, stride) for D in (nx, ny, nz)]
    counts = tuple(len(a) for a in per_axis)
    tiles = []
    tid = 0
    for iz in range(counts[2]):
        for iy in range(counts[1]):
            for ix in range(counts[0]):
                origin = (per_axis[0][ix], per_axis[1][iy], per_axis[2][iz])
                extent = tuple(
                    min(T, D) for D in (nx, ny, nz)
                )
                core = Box(origin, extent)
                ctx_origin = tuple(max(0, o - border) for o in origin)
                ctx_end = tuple(
                    min(D, o + e + border) for o, e, D in zip(origin, extent, (nx, ny, nz))
                )
                context = Box(ctx_origin, tuple(b - a for a, b in zip(ctx_origin, ctx_end)))
                tiles.append(Tile(tid, core, context))
                tid += 1
    return TilePlan(
        (nx, ny, nz),
        T,
        float(overlap_fraction),
        float(border_fraction),
        overlap,
        border,
        stride,
        counts,
        tiles,
    )


def extract_tile(volume: Volume3D, plan: TilePlan, tile_id: int):
    """Copy a tile's context block out of the volume.

    Returns (context sub-volume, core offset inside it); the offset lets a
    client draw the advisory border distinctly from the editable core.
    """
    if volume.dims != plan.dims:
        raise TilingError(f"volume dims {volume.dims} != plan dims {plan.dims}")
    t = plan.tile(tile_id)
    block = volume.as_3d()[t.context.slices()].copy()
    sub = Volume3D(t.context.extent, block.reshape(-1), volume.spacing)
    offset = tuple(c - o for c, o in zip(t.core.origin, t.context.origin))
    return sub, offset


def crop_context(labels: LabelMap, plan: TilePlan, tile_id: int) -> LabelMap:
    """Restrict a context-box label map to the tile's core box."""
    t = plan.tile(tile_id)
    if labels.dims != t.context.extent:
        raise TilingError(
            f"tile {tile_id}: label dims {labels.dims} != context extent {t.context.extent}"
        )
    (ox, oy, oz) = tuple(c - o for c, o in zip(t.core.origin, t.context.origin))
    (ex, ey, ez) = t.core.extent
    block = labels.as_3d()[oz : oz + ez, oy : oy + ey, ox : ox + ex].copy()
    return LabelMap(t.core.extent, block.reshape(-1))


class _UnionFind:
    """Dense union-find over 0..n-1 with path halving; smaller root wins."""

    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        p = self.parent
        while p[x] != x:
            p[x] = p[p[x]]
            x = p[x]
        return x

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if rb < ra:
            ra, rb = rb, ra
        self.parent[rb] = ra


def _matched_pairs(a: np.ndarray, b: np.ndarray):
    """Label pairs of two co-registered regions with Jaccard >= 0.5."""
    both = (a != 0) & (b != 0)
    if not both.any():
        return
    codes = (a[both].astype(np.uint64) << np.uint64(32)) | b[both].astype(np.uint64)
    pairs, inter = np.unique(codes, return_counts=True)
    la, ca = np.unique(a[a != 0], return_counts=True)
    lb, cb = np.unique(b[b != 0], return_counts=True)
    size_a = dict(zip(la.tolist(), ca.tolist()))
    size_b = dict(zip(lb.tolist(), cb.tolist()))
    for code, i in zip(pairs.tolist(), inter.tolist()):
        hi, lo = int(code >> np.uint64(32)), int(code & np.uint64(0xFFFFFFFF))
        union = size_a[hi] + size_b[lo] - i
        if 2 * i >= union:  # Jaccard >= 0.5 without float division
            yield hi, lo


def stitch(plan: TilePlan, tile_labels) -> LabelMap:
    """Fuse per-tile core label maps into one global map.

    ``tile_labels`` maps tile id -> core LabelMap (a sequence indexed by id
    works too).  Voxels covered by several cores take the label of the tile
    whose core center is nearest (ties to the lower id); matched labels are
    united before writing, and the output labels are compacted to 1..L in
    ascending provisional order, so the result does not depend on input
    ordering.
    """
    if not isinstance(tile_labels, dict):
        tile_labels = {i: m for i, m in enumerate(tile_labels)}
    missing = [t.id for t in plan.tiles if t.id not in tile_labels]
    if missing:
        raise TilingError(f"stitch is missing tiles {missing}")
    for t in plan.tiles:
        if tile_labels[t.id].dims != t.core.extent:
            raise TilingError(
                f"tile {t.id}: label dims {tile_labels[t.id].dims} != core extent {t.core.extent}"
            )

    # (a) globally unique provisional labels per (tile, local label)
    provisional: dict[tuple[int, int], int] = {}
    next_id = 1
    locals_of: dict[int, np.ndarray] = {}
    for t in plan.tiles:
        labs = np.unique(tile_labels[t.id].labels)
        labs = labs[labs != 0]
        locals_of[t.id] = labs
        for lab in labs.tolist():
            provisional[(t.id, int(lab))] = next_id
            next_id += 1
    uf = _UnionFind(next_id)

    # (b) unite well-matched labels of every core-overlapping tile pair
    for ti in plan.tiles:
        for tj in plan.tiles:
            if tj.id <= ti.id:
                continue
            shared = ti.core.intersect(tj.core)
            if shared is None:
                continue
            off_i = tuple(s - o for s, o in zip(shared.origin, ti.core.origin))
            off_j = tuple(s - o for s, o in zip(shared.origin, tj.core.origin))
            (ex, ey, ez) = shared.extent
            view_i = tile_labels[ti.id].as_3d()[
                off_i[2] : off_i[2] + ez, off_i[1] : off_i[1] + ey, off_i[0] : off_i[0] + ex
            ]
            view_j = tile_labels[tj.id].as_3d()[
                off_j[2] : off_j[2] + ez, off_j[1] : off_j[1] + ey, off_j[0] : off_j[0] + ex
            ]
            for a, b in _matched_pairs(view_i.reshape(-1), view_j.reshape(-1)):
                uf.union(provisional[(ti.id, a)], provisional[(tj.id, b)])

    # (c) nearest-core-center ownership, lower id on ties
    nx, ny, nz = plan.dims
    out = np.zeros((nz, ny, nx), dtype=np.uint32)
    best = np.full((nz, ny, nx), np.inf, dtype=np.float64)
    for t in plan.tiles:  # ascending id + strict improvement = ties to lower id
        cx, cy, cz = t.core.center()
        (ox, oy, oz), (ex, ey, ez) = t.core.origin, t.core.extent
        dz = (np.arange(oz, oz + ez, dtype=np.float64) - cz) ** 2
        dy = (np.arange(oy, oy + ey, dtype=np.float64) - cy) ** 2
        dx = (np.arange(ox, ox + ex, dtype=np.float64) - cx) ** 2
        score = dz[:, None, None] + dy[None, :, None] + dx[None, None, :]
        sl = t.core.slices()
        take = score < best[sl]
        # resolve local labels through the union-find as they are written
        local = tile_labels[t.id].as_3d()
        mapped = np.zeros_like(local)
        for lab in locals_of[t.id].tolist():
            mapped[local == lab] = uf.find(provisional[(t.id, int(lab))])
        out[sl] = np.where(take, mapped, out[sl])
        best[sl] = np.where(take, score, best[sl])

    # (d) compact to 1..L in ascending provisional-root order
    flat = out.reshape(-1)
    present = np.unique(flat)
    present = present[present != 0]
    lut = np.zeros(int(present.max()) + 1 if present.size else 1, dtype=np.uint32)
    for k, root in enumerate(present.tolist(), start=1):
        lut[root] = k
    return LabelMap(plan.dims, lut[flat])
