"""Fusing several independent segmentations of one tile.

The fusion never compares labels directly (raters invent their own label
ids); it compares region borders.  Each rater's label map becomes a binary
border mask, the masks go through binary STAPLE (EM estimation of a latent
consensus border plus per-rater sensitivity p and specificity q), and the
thresholded posterior is turned back into a full label map: connected
non-border components become the cells, dust components get merged into
their largest neighbor, and the border voxels themselves are absorbed by
seeded region growing on the tile intensities.  Raters are then scored by
F1 against the consensus border.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .ift import SeedSet, ift_sc
from .volume import LabelMap, Volume3D

__all__ = [
    "ConsensusError",
    "BorderMask",
    "StapleResult",
    "border_mask",
    "staple",
    "consensus_labels",
    "f1_score",
    "save_staple",
    "load_staple",
]

DEFAULT_RESULTS_PER_TILE = 3  # raters per tile before fusion


class ConsensusError(ValueError):
    """Degenerate fusion input (no borders anywhere, no cells, bad dims)."""


@dataclass
class BorderMask:
    """Per-voxel flag: true iff some 6-neighbor carries a different label."""

    dims: tuple[int, int, int]
    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.ascontiguousarray(np.asarray(self.bits, dtype=bool).reshape(-1))

    def as_3d(self) -> np.ndarray:
        nx, ny, nz = self.dims
        return self.bits.reshape(nz, ny, nx)

    @property
    def size(self) -> int:
        return self.bits.size


def border_mask(labelmap: LabelMap) -> BorderMask:
    """Mark voxels whose 6-neighborhood crosses a label interface.

    Volume faces do not count as interfaces, so a constant map has no
    border at all.
    """
    a = labelmap.as_3d()
    out = np.zeros(a.shape, dtype=bool)
    for axis in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        diff = a[tuple(lo)] != a[tuple(hi)]
        out[tuple(lo)] |= diff
        out[tuple(hi)] |= diff
    return BorderMask(labelmap.dims, out.reshape(-1))


@dataclass
class StapleResult:
    """EM output: border posterior and per-rater performance estimates."""

    dims: tuple[int, int, int]
    W: np.ndarray  # posterior P(border) per voxel, float64
    p: np.ndarray  # sensitivity per rater
    q: np.ndarray  # specificity per rater
    iterations: int
    informative: bool  # False when every rater converged to chance level (p + q = 1)
    log_likelihoods: list[float] = field(default_factory=list)

    def consensus_mask(self) -> BorderMask:
        return BorderMask(self.dims, self.W >= 0.5)


def staple(masks, prior=None, max_iter: int = 100, tol: float = 1e-6) -> StapleResult:
    """Binary STAPLE over K border masks.

    E-step: W_i = a_i / (a_i + b_i) with
      a_i = prior_i * prod_j p_j^{d_ij} (1-p_j)^{1-d_ij}
      b_i = (1-prior_i) * prod_j (1-q_j)^{d_ij} q_j^{1-d_ij}
    M-step: p_j = sum W_i d_ij / sum W_i,  q_j = sum (1-W_i)(1-d_ij) / sum (1-W_i).

    ``prior`` may be None (voxelwise vote fraction, the default), a scalar
    (uniform Bernoulli prior; this is the choice that recovers generator
    p,q on synthetic data, since the vote prior reuses the votes the
    likelihood already counts), or a per-voxel array.  p and q start at
    0.99.  Iteration stops when max |dW| < tol or at max_iter, always after
    an M-step so p,q match the reported W.  The marginal log-likelihood
    sum_i log(a_i + b_i) is recorded each iteration; EM guarantees it never
    decreases, and the implementation asserts that.  Raters whose EM
    estimates sit at chance level (p + q = 1, e.g. two exactly
    complementary raters) pin W to the prior; the result is then flagged
    ``informative=False``.
    """
    if len(masks) < 2:
        raise ConsensusError(f"need at least 2 raters, got {len(masks)}")
    dims = masks[0].dims
    for m in masks:
        if m.dims != dims:
            raise ConsensusError(f"mask dims differ: {m.dims} vs {dims}")
    D = np.stack([m.bits for m in masks]).astype(np.float64)  # K x n
    K, n = D.shape
    if not D.any():
        raise ConsensusError("all masks are empty; the border prior is undefined")
    if D.all():
        raise ConsensusError("all masks are full; the border prior is undefined")
    if prior is None:
        prior = D.mean(axis=0)
    elif np.ndim(prior) == 0:
        prior = np.full(n, float(prior))
    else:
        prior = np.asarray(prior, dtype=np.float64).reshape(-1)
        if prior.size != n:
            raise ConsensusError(f"prior has {prior.size} entries, masks have {n}")
    if prior.min() < 0.0 or prior.max() > 1.0:
        raise ConsensusError("prior probabilities must lie in [0, 1]")

    p = np.full(K, 0.99)
    q = np.full(K, 0.99)
    w_prev = prior.copy()
    lls: list[float] = []
    W = w_prev
    iterations = 0
    for iterations in range(1, max_iter + 1):
        a = prior.copy()
        b = 1.0 - prior
        for j in range(K):
            d = D[j]
            a *= np.where(d == 1.0, p[j], 1.0 - p[j])
            b *= np.where(d == 1.0, 1.0 - q[j], q[j])
        total = a + b
        W = np.where(total > 0, a / np.where(total > 0, total, 1.0), prior)
        ll = float(np.log(total[total > 0]).sum())
        if lls:
            assert ll >= lls[-1] - 1e-9, f"EM log-likelihood decreased: {lls[-1]} -> {ll}"
        lls.append(ll)

        wsum = W.sum()
        csum = n - wsum
        for j in range(K):
            d = D[j]
            if wsum > 0:
                p[j] = float((W * d).sum() / wsum)
            if csum > 0:
                q[j] = float(((1.0 - W) * (1.0 - d)).sum() / csum)
        np.clip(p, 1e-12, 1 - 1e-12, out=p)
        np.clip(q, 1e-12, 1 - 1e-12, out=q)

        if float(np.abs(W - w_prev).max()) < tol:
            break
        w_prev = W
    informative = bool(float((p + q - 1.0).min()) > 1e-3)
    return StapleResult(dims, W, p, q, iterations, informative, lls)


def _merge_dust(comp: np.ndarray, border: np.ndarray, dims, min_cell_voxels: int) -> np.ndarray:
    """Fold components below the size floor into their largest neighbor.

    Components only ever touch through border voxels, so the neighbor
    search walks outward through the border region (BFS) and collects the
    components reached first; the largest of those absorbs the dust (ties
    to the smaller component id).  A component with no reachable neighbor
    stays as it is.
    """
    nx, ny, nz = dims
    counts = np.bincount(comp.reshape(-1))
    parent = list(range(len(counts)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    small = [c for c in range(1, len(counts)) if 0 < counts[c] < min_cell_voxels]
    flat = comp.reshape(-1)
    border_flat = border.reshape(-1)
    n = flat.size
    for c in small:
        root_c = find(c)
        if counts[root_c] >= min_cell_voxels:
            continue  # already grew past the floor through earlier merges
        seen = np.zeros(n, dtype=bool)
        frontier = np.flatnonzero(flat == c)
        seen[frontier] = True
        hit: set[int] = set()
        while frontier.size and not hit:
            nbrs = []
            for step, guard in (
                (-1, frontier % nx > 0),
                (1, frontier % nx < nx - 1),
                (-nx, (frontier // nx) % ny > 0),
                (nx, (frontier // nx) % ny < ny - 1),
                (-nx * ny, frontier // (nx * ny) > 0),
                (nx * ny, frontier // (nx * ny) < nz - 1),
            ):
                nbrs.append(frontier[guard] + step)
            cand = np.unique(np.concatenate(nbrs))
            cand = cand[~seen[cand]]
            seen[cand] = True
            labs = flat[cand]
            for other in np.unique(labs[labs != 0]).tolist():
                if find(other) != root_c:
                    hit.add(find(other))
            frontier = cand[border_flat[cand]]  # keep walking through border only
        if hit:
            target = max(hit, key=lambda x: (counts[x], -x))
            counts[target] += counts[root_c]
            counts[root_c] = 0
            parent[root_c] = target
    lut = np.arange(len(counts))
    for c in range(1, len(counts)):
        lut[c] = find(c)
    return lut[comp]


def consensus_labels(
    volume: Volume3D, result: StapleResult, rater_maps, min_cell_voxels: int = 8
) -> LabelMap:
    """Turn the fused border posterior back into a complete label map.

    W >= 0.5 is the consensus border; 6-connected components of everything
    else become cells; dust components below ``min_cell_voxels`` merge into
    their largest neighbor; finally the border voxels are absorbed by
    seeded growth on the tile intensities, so the output labels every
    voxel.  The rater maps only feed validation here: the fused geometry
    comes entirely from the posterior.
    """
    if result.dims != volume.dims:
        raise ConsensusError(f"staple dims {result.dims} != volume dims {volume.dims}")
    for m in rater_maps:
        if m.dims != volume.dims:
            raise ConsensusError(f"rater dims {m.dims} != volume dims {volume.dims}")
    nx, ny, nz = volume.dims
    border = (result.W >= 0.5).reshape(nz, ny, nx)
    cells = ~border
    comp, ncomp = ndimage.label(cells, structure=ndimage.generate_binary_structure(3, 1))
    if ncomp == 0:
        raise ConsensusError("consensus border covers everything; no cells remain")
    comp = _merge_dust(comp, border, volume.dims, min_cell_voxels)

    # compact ids, then absorb the border voxels by barrier growth
    present = np.unique(comp)
    present = present[present != 0]
    lut = np.zeros(int(present.max()) + 1, dtype=np.uint32)
    for k, c in enumerate(present.tolist(), start=1):
        lut[c] = k
    labels = lut[comp].reshape(-1)
    if not border.any():
        return LabelMap(volume.dims, labels)
    seeds = SeedSet()
    for v in np.flatnonzero(labels != 0).tolist():
        seeds.add(v, int(labels[v]))
    return ift_sc(volume, seeds).labelmap()


def f1_score(rater: BorderMask, consensus: BorderMask) -> float:
    """F1 of two border masks; empty-vs-empty counts as perfect agreement."""
    if rater.dims != consensus.dims:
        raise ConsensusError(f"mask dims differ: {rater.dims} vs {consensus.dims}")
    a = rater.bits
    b = consensus.bits
    tp = int((a & b).sum())
    fp = int((a & ~b).sum())
    fn = int((~a & b).sum())
    if tp == fp == fn == 0:
        return 1.0
    return 2 * tp / (2 * tp + fp + fn)


def save_staple(path, result: StapleResult) -> None:
    """JSON sidecar (p, q, iterations) + little-endian f32 posterior blob."""
    path = Path(path)
    header = {
        "dims": list(result.dims),
        "dtype": "f32",
        "order": "x-fastest",
        "endianness": "little",
        "p": [float(v) for v in result.p],
        "q": [float(v) for v in result.q],
        "iterations": result.iterations,
        "informative": result.informative,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    (path.parent / (path.name + ".json")).write_text(json.dumps(header, indent=2) + "\n")
    (path.parent / (path.name + ".raw")).write_bytes(result.W.astype("<f4").tobytes())


def load_staple(path) -> StapleResult:
    path = Path(path)
    header = json.loads((path.parent / (path.name + ".json")).read_text())
    dims = tuple(header["dims"])
    n = dims[0] * dims[1] * dims[2]
    blob = (path.parent / (path.name + ".raw")).read_bytes()
    if len(blob) != 4 * n:
        raise ConsensusError(f"{path}: posterior blob is {len(blob)} bytes, expected {4 * n}")
    W = np.frombuffer(blob, dtype="<f4").astype(np.float64)
    return StapleResult(
        dims,
        W,
        np.asarray(header["p"], dtype=np.float64),
        np.asarray(header["q"], dtype=np.float64),
        int(header["iterations"]),
        bool(header.get("informative", True)),
    )
