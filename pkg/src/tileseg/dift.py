"""Differential updates of a settled forest under seed edits.

Removing seeds orphans exactly the voxels rooted at them; those are reset
and reconquered from the surviving front plus any freshly added seeds.
Because path scores are history-free (see ift module), the updated forest is
bit-identical to a from-scratch run on the edited seed set, only cheaper:
work scales with the region that actually changes hands.

One wrinkle: a change can leave nearby voxels holding values that nothing
justifies any more.  When a voxel's value improves, voxels that derived
their hop level or root from its old value keep tiebreak components that are
now too good, and the relaxation drain can only ever lower values, never
raise them.  After each drain the witness pass flags such voxels; they are
invalidated together with their whole derived subtree and resettled in a
second round, which the chain structure guarantees is enough (with a full
recompute as a defensive last resort).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from ._kernels import INF_COST
from .ift import EngineError, Forest, SeedSet, _check_grid
from .volume import Volume3D, rle_diff

__all__ = [
    "SeedEdit",
    "DiftStats",
    "ForestDelta",
    "apply_seed_edit",
    "update_forest",
    "seeds_of_forest",
]


@dataclass(frozen=True)
class SeedEdit:
    """One batch of seed changes.

    ``added`` maps voxel -> label and may target voxels that are already
    seeds (that reassigns their label).  ``removed`` voxels must currently be
    seeds and must not also appear in ``added``.
    """

    added: dict[int, int] = field(default_factory=dict)
    removed: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "added", {int(v): int(lab) for v, lab in self.added.items()})
        object.__setattr__(self, "removed", frozenset(int(v) for v in self.removed))

    def inverse(self, seeds: SeedSet) -> "SeedEdit":
        """Edit that undoes self, given the seed set it was applied to."""
        back_added = {v: seeds[v] for v in self.removed}
        back_removed = set()
        for v in self.added:
            if v in seeds:
                back_added[v] = seeds[v]  # label reassignment rolls back
            else:
                back_removed.add(v)
        return SeedEdit(back_added, frozenset(back_removed))

    @property
    def empty(self) -> bool:
        return not self.added and not self.removed


@dataclass
class DiftStats:
    """Work accounting for one differential update."""

    orphaned: int = 0  # voxels reset (removed roots' trees + invalidations)
    frontier: int = 0  # surviving voxels that re-entered the queue
    reevaluated: int = 0  # voxels finalized by the drains
    rounds: int = 0

    def touched_fraction(self, n: int) -> float:
        return self.reevaluated / n if n else 0.0


@dataclass
class ForestDelta:
    """What one edit changed, in wire-friendly form.

    ``changed`` holds (start, length, label) runs covering exactly the voxels
    whose label differs from before, carrying the new labels: replaying them
    onto the previous label map reproduces the updated one.  ``stats`` keeps
    the engine work accounting for the same edit.
    """

    changed: list[tuple[int, int, int]]
    stats: DiftStats = field(default_factory=DiftStats)

    @property
    def empty(self) -> bool:
        return not self.changed


def seeds_of_forest(forest: Forest) -> SeedSet:
    """Recover the seed set a forest was grown from.

    Seeds are the self-rooted zero-cost voxels; their labels are read back
    from the label array.
    """
    n = forest.cost.size
    vox = np.flatnonzero((forest.cost == 0) & (forest.root == np.arange(n)))
    seeds = SeedSet()
    for v in vox:
        seeds.add(int(v), int(forest.label[v]))
    return seeds


def _validate_edit(edit: SeedEdit, seeds: SeedSet, n: int) -> None:
    overlap = edit.removed & set(edit.added)
    if overlap:
        raise EngineError(f"edit adds and removes the same voxels: {sorted(overlap)[:5]}")
    for v in edit.removed:
        if v not in seeds:
            raise EngineError(f"cannot remove voxel {v}: not a seed")
    for v, lab in edit.added.items():
        if not 0 <= v < n:
            raise EngineError(f"seed voxel {v} outside grid of {n} voxels")
        if lab < 1 or lab > 0xFFFFFFFF:
            raise EngineError(f"seed label must be in 1..2^32-1, got {lab}")


def _neighbors_of_mask(mask3):
    """Voxels 6-adjacent to the mask (mask itself included)."""
    reach = mask3.copy()
    reach[1:, :, :] |= mask3[:-1, :, :]
    reach[:-1, :, :] |= mask3[1:, :, :]
    reach[:, 1:, :] |= mask3[:, :-1, :]
    reach[:, :-1, :] |= mask3[:, 1:, :]
    reach[:, :, 1:] |= mask3[:, :, :-1]
    reach[:, :, :-1] |= mask3[:, :, 1:]
    return reach


def _reset_and_collect_frontier(dims, arrays, orphan_flat):
    """Clear orphaned voxels and return the surviving conquered border."""
    cost, hops, root, pred, label = arrays
    nx, ny, nz = dims
    reach = _neighbors_of_mask(orphan_flat.reshape(nz, ny, nx))
    cost[orphan_flat] = INF_COST
    hops[orphan_flat] = 0
    root[orphan_flat] = -1
    pred[orphan_flat] = -1
    label[orphan_flat] = 0
    survivor = (cost != INF_COST) & reach.reshape(-1)
    return np.flatnonzero(survivor).astype(np.int64)


def update_forest(
    volume: Volume3D, forest: Forest, seeds: SeedSet, edit: SeedEdit
) -> tuple[Forest, SeedSet, DiftStats]:
    """Apply ``edit`` and resettle only the affected region.

    Returns (new forest, new seed set, stats); inputs are left untouched.
    Callers that track their own seed bookkeeping (the edit session does)
    use this directly; ``apply_seed_edit`` wraps it with seed recovery and
    a label delta for callers that only hold the forest.
    """
    intens = _check_grid(volume)
    n = volume.size
    if forest.dims != volume.dims:
        raise EngineError(f"forest dims {forest.dims} != volume dims {volume.dims}")
    _validate_edit(edit, seeds, n)

    new_seeds = seeds.copy()
    for v in edit.removed:
        new_seeds.remove(v)
    for v, lab in edit.added.items():
        new_seeds.add(v, lab)
    if len(new_seeds) == 0:
        raise EngineError("edit would leave the seed set empty")

    out = forest.copy()
    cost, hops, root, pred, label = out.cost, out.hops, out.root, out.pred, out.label
    arrays = (cost, hops, root, pred, label)
    nx, ny, nz = volume.dims
    stats = DiftStats()
    scratch = np.empty(n, np.int64)

    frontier = np.empty(0, np.int64)
    if edit.removed:
        removed = np.fromiter(edit.removed, np.int64, len(edit.removed))
        orphan = np.isin(root, removed)
        stats.orphaned = int(orphan.sum())
        frontier = _reset_and_collect_frontier(volume.dims, arrays, orphan)
        stats.frontier = frontier.size

    pushed = []
    for v, lab in sorted(edit.added.items()):
        if cost[v] == 0 and root[v] == v:
            # already a seed: only the label can differ
            if label[v] != lab:
                label[root == v] = lab
            continue
        cost[v] = 0
        hops[v] = 0
        root[v] = v
        pred[v] = -1
        label[v] = lab
        pushed.append(v)

    def run_drain(init_vox):
        if init_vox.size:
            init_key = _kernels.pack_keys(cost[init_vox], hops[init_vox], root[init_vox])
            stats.reevaluated += _kernels.drain(
                intens, nx, ny, nz, cost, hops, root, pred, label, init_vox, init_key
            )
        stats.rounds += 1
        return _kernels.canonical_preds(intens, nx, ny, nz, cost, hops, root, pred, scratch)

    bad = run_drain(np.unique(np.concatenate((frontier, np.array(pushed, np.int64)))))
    if bad:
        # values derived from something that changed: invalidate those
        # subtrees wholesale and resettle them from their surroundings
        closure = _kernels.subtree_closure(pred, scratch[:bad].copy(), n).astype(bool)
        stats.orphaned += int(closure.sum())
        frontier2 = _reset_and_collect_frontier(volume.dims, arrays, closure)
        stats.frontier += frontier2.size
        bad = run_drain(frontier2)
    if bad:
        # should be unreachable; prefer a full resettle over a wrong forest
        everything = np.ones(n, bool)
        seed_vox = np.array(sorted(v for v, _ in new_seeds.items()), np.int64)
        everything[seed_vox] = False
        _reset_and_collect_frontier(volume.dims, arrays, everything)
        for v, lab in new_seeds.items():
            cost[v] = 0
            hops[v] = 0
            root[v] = v
            pred[v] = -1
            label[v] = lab
        bad = run_drain(seed_vox)
        if bad:
            raise AssertionError(f"forest left {bad} voxels without a witness predecessor")
    return out, new_seeds, stats


def apply_seed_edit(volume: Volume3D, forest: Forest, edit: SeedEdit) -> tuple[Forest, ForestDelta]:
    """Edit the seeds of a settled forest; report what changed.

    The current seed set is recovered from the forest itself, so the forest
    is the only state a caller needs to keep.  The returned delta's runs
    replay onto the old label map to give the new one exactly.
    """
    seeds = seeds_of_forest(forest)
    out, _, stats = update_forest(volume, forest, seeds, edit)
    return out, ForestDelta(rle_diff(forest.label, out.label), stats)
