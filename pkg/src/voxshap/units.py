"""Interpretable-unit partitions of the receptive-field crop.

Three partition kinds: whole organs, regular face-centred-cubic (FCC)
supervoxels laid out in physical mm, and hybrid units that split each FCC
cell along organ boundaries. Unit id 0 always means "excluded" (background
that is never a feature).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .grid import LabelVolume, Triple

# Unit cell offsets of the FCC lattice, in units of the pitch S:
# the cell corner plus the three face centres.
_FCC_OFFSETS = np.array(
    [[0.0, 0.0, 0.0], [0.5, 0.5, 0.0], [0.5, 0.0, 0.5], [0.0, 0.5, 0.5]]
)

# Voxels per chunk when scanning voxel-to-center distances; bounds the
# (chunk x centers) distance matrix.
_ASSIGN_CHUNK_BUDGET = 1 << 22


@dataclass(frozen=True)
class FccConfig:
    """Granularity of the FCC tessellation. The lattice is anchored at the crop's min corner."""

    scale_mm: float = 40.0

    def __post_init__(self):
        if not self.scale_mm > 0:
            raise ValidationError(f"FCC scale_mm must be > 0, got {self.scale_mm}")


@dataclass(frozen=True)
class UnitMap:
    """Per-voxel unit ids on the crop grid: 0 = excluded, features are 1..num_units."""

    data: np.ndarray
    spacing_mm: tuple[float, float, float]
    num_units: int
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValidationError(f"unit map must be 3D, got shape {data.shape}")
        if data.max(initial=0) > self.num_units:
            raise ValidationError("unit id exceeds num_units")
        present = np.bincount(data.ravel(), minlength=self.num_units + 1)[1:]
        if self.num_units > 0 and (present == 0).any():
            missing = np.nonzero(present == 0)[0] + 1
            raise ValidationError(f"unit ids with no voxels: {missing.tolist()}")
        dtype = np.uint16 if self.num_units < 2**16 else np.uint32
        data = np.ascontiguousarray(data, dtype=dtype)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing_mm", tuple(float(s) for s in self.spacing_mm))

    @property
    def dims(self) -> Triple:
        return self.data.shape

    def voxel_counts(self) -> np.ndarray:
        """Voxels per unit id, index 1..num_units (index 0 is the excluded count)."""
        return np.bincount(self.data.ravel(), minlength=self.num_units + 1)


def partition_full_organs(labels: LabelVolume) -> UnitMap:
    """One unit per distinct nonzero label in the crop, ids in ascending label order."""
    organ_labels = np.unique(labels.data)
    organ_labels = organ_labels[organ_labels != 0]
    if organ_labels.size == 0:
        raise ValidationError("no organs in crop")
    # searchsorted maps label -> 1-based rank; background stays 0
    ids = np.searchsorted(organ_labels, labels.data) + 1
    ids[labels.data == 0] = 0
    return UnitMap(
        data=ids,
        spacing_mm=labels.spacing_mm,
        num_units=int(organ_labels.size),
        provenance={"kind": "organs", "labels": organ_labels.tolist()},
    )


def fcc_centers(dims: Triple, spacing_mm, cfg: FccConfig) -> np.ndarray:
    """FCC lattice centers (mm) covering the crop's physical extent padded by S/2.

    Cubic cells of pitch S are anchored at the crop's min corner; each cell
    contributes its corner and three face centres. Enumeration order is
    lexicographic by cell index, then offset index, and is part of the
    contract (nearest-center ties break toward the lowest index).
    """
    s = cfg.scale_mm
    extent = np.asarray(dims, dtype=np.float64) * np.asarray(spacing_mm, dtype=np.float64)
    hi = extent + s / 2
    n_cells = np.floor(hi / s).astype(int) + 1
    ii, jj, kk = np.meshgrid(*(np.arange(n) for n in n_cells), indexing="ij")
    corners = np.stack([ii, jj, kk], axis=-1).reshape(-1, 3) * s
    centers = (corners[:, None, :] + _FCC_OFFSETS[None, :, :] * s).reshape(-1, 3)
    keep = (centers <= hi[None, :]).all(axis=1)
    return centers[keep]


def _nearest_center(dims: Triple, spacing_mm, centers: np.ndarray) -> np.ndarray:
    """Index of the nearest center per voxel; exact ties pick the lowest index.

    Distances are evaluated in float64 over all voxel-center pairs (chunked
    over voxels) so that results are deterministic and reproducible by a
    brute-force scan.
    """
    coords = [(np.arange(dims[a], dtype=np.float64) + 0.5) * spacing_mm[a] for a in range(3)]
    gx, gy, gz = np.meshgrid(*coords, indexing="ij")
    voxels = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
    chunk = max(1, _ASSIGN_CHUNK_BUDGET // max(len(centers), 1))
    out = np.empty(len(voxels), dtype=np.int64)
    for start in range(0, len(voxels), chunk):
        block = voxels[start : start + chunk]
        d2 = ((block[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        out[start : start + chunk] = np.argmin(d2, axis=1)
    return out.reshape(dims)


def partition_fcc(dims: Triple, spacing_mm, cfg: FccConfig) -> UnitMap:
    """Assign every voxel to its nearest FCC lattice center; empty centers are dropped."""
    centers = fcc_centers(dims, spacing_mm, cfg)
    assign = _nearest_center(dims, spacing_mm, centers)
    used = np.unique(assign)
    remap = np.zeros(len(centers), dtype=np.int64)
    remap[used] = np.arange(1, len(used) + 1)
    return UnitMap(
        data=remap[assign],
        spacing_mm=tuple(spacing_mm),
        num_units=int(len(used)),
        provenance={"kind": "fcc", "scale_mm": cfg.scale_mm},
    )


def partition_hybrid(fcc: UnitMap, labels: LabelVolume, min_fragment: int = 0) -> UnitMap:
    """Split each FCC cell along organ labels; background is excluded.

    Unit ids are compacted in (fcc id, label) lexicographic order. Fragments
    below min_fragment voxels (0 disables) are merged into their largest
    face-adjacent unit of the same organ, when one exists.
    """
    if fcc.dims != labels.dims:
        raise ValidationError(f"fcc dims {fcc.dims} != label dims {labels.dims}")
    fg = labels.data != 0
    if not fg.any():
        raise ValidationError("no organs in crop")
    n_labels = int(labels.data.max()) + 1
    key = fcc.data.astype(np.int64) * n_labels + labels.data
    key[~fg] = 0
    ids = np.searchsorted(np.unique(key[fg]), key) + 1
    ids[~fg] = 0
    if min_fragment > 0:
        ids = _merge_small_fragments(ids, labels.data, min_fragment)
        ids = _compact_ids(ids, key)
    m = int(ids.max())
    return UnitMap(
        data=ids,
        spacing_mm=labels.spacing_mm,
        num_units=m,
        provenance={
            "kind": "hybrid",
            "scale_mm": fcc.provenance.get("scale_mm"),
            "min_fragment": min_fragment,
        },
    )


def _unit_adjacency(ids: np.ndarray) -> set[tuple[int, int]]:
    """Pairs of distinct nonzero unit ids sharing a voxel face."""
    pairs: set[tuple[int, int]] = set()
    for axis in range(3):
        a = np.moveaxis(ids, axis, 0)[:-1].ravel()
        b = np.moveaxis(ids, axis, 0)[1:].ravel()
        touch = (a != b) & (a > 0) & (b > 0)
        for u, v in zip(a[touch].tolist(), b[touch].tolist()):
            pairs.add((min(u, v), max(u, v)))
    return pairs


def _merge_small_fragments(ids: np.ndarray, labels: np.ndarray, min_fragment: int) -> np.ndarray:
    counts = np.bincount(ids.ravel())
    organ_of = np.zeros(len(counts), dtype=np.int64)
    flat_ids, flat_labels = ids.ravel(), labels.ravel()
    nz = flat_ids > 0
    organ_of[flat_ids[nz]] = flat_labels[nz]

    neighbors: dict[int, set[int]] = {u: set() for u in range(1, len(counts))}
    for u, v in _unit_adjacency(ids):
        neighbors[u].add(v)
        neighbors[v].add(u)

    # resolve[u] follows merges so later fragments see updated targets
    resolve = np.arange(len(counts), dtype=np.int64)
    small = sorted((u for u in range(1, len(counts)) if 0 < counts[u] < min_fragment),
                   key=lambda u: (counts[u], u))
    for u in small:
        if resolve[u] != u:
            continue
        cands = {int(resolve[v]) for v in neighbors[u]}
        cands = {v for v in cands if v != u and organ_of[v] == organ_of[u]}
        if not cands:
            continue
        target = max(cands, key=lambda v: (counts[v], -v))
        resolve[resolve == u] = target
        counts[target] += counts[u]
        counts[u] = 0
        neighbors[target] |= neighbors[u]
    return resolve[ids]


def _compact_ids(ids: np.ndarray, order_key: np.ndarray) -> np.ndarray:
    """Renumber surviving ids 1..M ordered by their minimum (fcc, label) key."""
    survivors = np.unique(ids[ids > 0])
    first_key = np.full(int(ids.max()) + 1, np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(first_key, ids.ravel(), order_key.ravel())
    ranked = survivors[np.argsort(first_key[survivors], kind="stable")]
    remap = np.zeros(int(ids.max()) + 1, dtype=np.int64)
    remap[ranked] = np.arange(1, len(ranked) + 1)
    return remap[ids]
