"""Seeded region growing as a spanning forest on the 6-connected voxel graph.

Every voxel ends up attached to exactly one seed.  The cost map is the
classic barrier height: cost(t) = min over paths from any seed of the
largest intensity crossed (each vertex after the origin weighs its own
intensity; a seed's trivial path costs 0).  Ties are settled by two further
per-voxel quantities with no reference to visit order: hops(t) is the
breadth-first distance from the seed set along descent arcs (arcs u->t with
max(cost(u), I(t)) == cost(t), i.e. arcs that extend an optimal route), and
root(t) is the smallest root among descent predecessors one hop level below.
All three are pure functions of (volume, seed set), which is what lets the
differential engine reproduce a from-scratch run bit for bit.

Operationally the drain pops voxels in lexicographic (cost, hops, root)
order and relaxes neighbors with that composite key; the popped value is
final because later pops can never produce a better offer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._kernels import INF_COST, MAX_GRID_VOXELS
from .volume import LabelMap, Volume3D, linear_index

__all__ = ["EngineError", "SeedSet", "Forest", "ift_sc", "forests_equal"]


class EngineError(ValueError):
    """Invalid seeds or a grid outside engine limits."""


class SeedSet:
    """Mapping voxel index -> label (labels are >= 1)."""

    def __init__(self, spots: dict[int, int] | None = None):
        self.spots: dict[int, int] = {}
        if spots:
            for voxel, lab in spots.items():
                self.add(int(voxel), int(lab))

    @classmethod
    def from_points(cls, dims, points) -> "SeedSet":
        """Build from (x, y, z, label) tuples."""
        s = cls()
        for x, y, z, lab in points:
            s.add(linear_index(dims, x, y, z), lab)
        return s

    def add(self, voxel: int, lab: int) -> None:
        if lab < 1 or lab > 0xFFFFFFFF:
            raise EngineError(f"seed label must be in 1..2^32-1, got {lab}")
        self.spots[int(voxel)] = int(lab)

    def remove(self, voxel: int) -> None:
        if voxel not in self.spots:
            raise EngineError(f"voxel {voxel} is not a seed")
        del self.spots[voxel]

    def items(self):
        return self.spots.items()

    def copy(self) -> "SeedSet":
        s = SeedSet()
        s.spots = dict(self.spots)
        return s

    def __len__(self):
        return len(self.spots)

    def __contains__(self, voxel):
        return voxel in self.spots

    def __getitem__(self, voxel):
        return self.spots[voxel]

    def __eq__(self, other):
        return isinstance(other, SeedSet) and self.spots == other.spots


@dataclass
class Forest:
    """Settled forest: per-voxel path cost, hop count, seed root, canonical
    predecessor (-1 at seeds) and propagated label."""

    dims: tuple[int, int, int]
    cost: np.ndarray  # u32, INF_COST where unreached
    hops: np.ndarray  # u32
    root: np.ndarray  # i64, -1 where unreached
    pred: np.ndarray  # i64, -1 at roots
    label: np.ndarray  # u32, 0 where unreached

    def labelmap(self) -> LabelMap:
        return LabelMap(self.dims, self.label.copy())

    def copy(self) -> "Forest":
        return Forest(
            self.dims,
            self.cost.copy(),
            self.hops.copy(),
            self.root.copy(),
            self.pred.copy(),
            self.label.copy(),
        )


def forests_equal(a: Forest, b: Forest) -> bool:
    return (
        a.dims == b.dims
        and np.array_equal(a.cost, b.cost)
        and np.array_equal(a.hops, b.hops)
        and np.array_equal(a.root, b.root)
        and np.array_equal(a.pred, b.pred)
        and np.array_equal(a.label, b.label)
    )


def _check_grid(volume: Volume3D) -> np.ndarray:
    if volume.size >= MAX_GRID_VOXELS:
        raise EngineError(
            f"grid has {volume.size} voxels, engine supports fewer than {MAX_GRID_VOXELS}; "
            "process it as tiles"
        )
    return np.ascontiguousarray(volume.values, dtype=np.uint16)


def _check_seeds(seeds, n: int) -> list[tuple[int, int]]:
    entries = sorted((int(v), int(lab)) for v, lab in seeds.items())
    if not entries:
        raise EngineError("seed set is empty")
    for voxel, lab in entries:
        if not 0 <= voxel < n:
            raise EngineError(f"seed voxel {voxel} outside grid of {n} voxels")
        if lab < 1 or lab > 0xFFFFFFFF:
            raise EngineError(f"seed label must be in 1..2^32-1, got {lab}")
    return entries


def ift_sc(volume: Volume3D, seeds) -> Forest:
    """Conquer the whole grid from ``seeds`` and return the settled forest.

    ``seeds`` is a SeedSet or any voxel->label mapping with .items().
    """
    intens = _check_grid(volume)
    n = volume.size
    entries = _check_seeds(seeds, n)

    cost = np.full(n, INF_COST, np.uint32)
    hops = np.zeros(n, np.uint32)
    root = np.full(n, -1, np.int64)
    pred = np.full(n, -1, np.int64)
    label = np.zeros(n, np.uint32)

    init_vox = np.array([v for v, _ in entries], np.int64)
    cost[init_vox] = 0
    root[init_vox] = init_vox
    label[init_vox] = np.array([lab for _, lab in entries], np.uint32)
    init_key = _kernels.pack_keys(cost[init_vox], hops[init_vox], root[init_vox])

    nx, ny, nz = volume.dims
    _kernels.drain(intens, nx, ny, nz, cost, hops, root, pred, label, init_vox, init_key)
    scratch = np.empty(n, np.int64)
    bad = _kernels.canonical_preds(intens, nx, ny, nz, cost, hops, root, pred, scratch)
    if bad:
        raise AssertionError(f"settled forest left {bad} voxels without a witness predecessor")
    return Forest(volume.dims, cost, hops, root, pred, label)
