"""Baseline patch-logit cache and cache-aware coalition inference.

The cache holds one baseline logit block per patch origin, built from a
single sliding-window pass over the unperturbed crop. A coalition's
inference then reuses the block for every patch whose box contains no
perturbed voxel (hit) and recomputes only the touched patches (miss),
fusing both through the same accumulation path as uncached inference.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import PredictorError, ValidationError
from .grid import Triple, Volume
from .infer import LogitVolume, PatchGrid, PatchPredictor, fuse_patches

# Patch counts below this use the direct per-patch mask scan; above it a
# 3D summed-area table makes every box test O(1).
_SAT_MIN_PATCHES = 16


@dataclass(frozen=True)
class CacheStats:
    """Hit/miss accounting for one coalition; hits + misses = number of patches."""

    hits: int
    misses: int

    @property
    def total(self) -> int:
        return self.hits + self.misses

    @property
    def hit_rate(self) -> float:
        return self.hits / self.total if self.total else 0.0


@dataclass(frozen=True)
class PatchLogitCache:
    """Immutable baseline logits keyed by patch origin, plus the fused baseline."""

    grid: PatchGrid
    entries: dict[Triple, np.ndarray]
    baseline: LogitVolume
    num_classes: int
    content_hash: str

    @property
    def memory_bytes(self) -> int:
        return sum(block.nbytes for block in self.entries.values())


def crop_content_hash(crop: Volume, grid: PatchGrid, predictor_id: str) -> str:
    """Hash identifying what the cache was built from; mismatches invalidate it."""
    h = hashlib.sha256()
    h.update(crop.data.ravel(order="F").tobytes())
    h.update(json.dumps([list(grid.patch_size), list(grid.step), len(grid.origins)]).encode())
    h.update(predictor_id.encode())
    return h.hexdigest()


def build_cache(
    crop: Volume,
    grid: PatchGrid,
    pred: PatchPredictor,
    weights: np.ndarray,
    predictor_id: str = "",
) -> PatchLogitCache:
    """One predictor call per grid origin on the unperturbed crop."""
    entries: dict[Triple, np.ndarray] = {}
    for origin in grid.origins:
        patch = crop.data[grid.patch_slices(origin)]
        try:
            logits = pred.predict(patch)
        except Exception as e:
            raise PredictorError(f"baseline predict failed at patch origin {origin}: {e}") from e
        logits = np.asarray(logits, dtype=np.float32)
        logits.setflags(write=False)
        entries[origin] = logits
    baseline = fuse_patches(
        ((o, entries[o]) for o in grid.origins),
        crop.dims,
        pred.num_classes,
        weights,
        crop.spacing_mm,
    )
    return PatchLogitCache(
        grid=grid,
        entries=entries,
        baseline=baseline,
        num_classes=pred.num_classes,
        content_hash=crop_content_hash(crop, grid, predictor_id),
    )


def _summed_area_table(mask: np.ndarray) -> np.ndarray:
    sat = mask.astype(np.int64)
    for axis in range(3):
        np.cumsum(sat, axis=axis, out=sat)
    return np.pad(sat, ((1, 0), (1, 0), (1, 0)))


def _box_sum(sat: np.ndarray, origin: Triple, size: Triple) -> int:
    x0, y0, z0 = origin
    x1, y1, z1 = (o + s for o, s in zip(origin, size))
    return int(
        sat[x1, y1, z1] - sat[x0, y1, z1] - sat[x1, y0, z1] - sat[x1, y1, z0]
        + sat[x0, y0, z1] + sat[x0, y1, z0] + sat[x1, y0, z0] - sat[x0, y0, z0]
    )


def cached_predict(
    perturbed: Volume,
    pmask: np.ndarray,
    cache: PatchLogitCache,
    pred: PatchPredictor,
    weights: np.ndarray,
    use_sat: bool | None = None,
) -> tuple[LogitVolume, CacheStats]:
    """Fused logits for a perturbed crop, reusing baseline blocks for untouched patches.

    A patch is a hit iff its box contains no set voxel of the perturbation
    mask. use_sat selects the O(1) summed-area box test (None = auto by
    patch count); both tests are exact and give identical hit sets.
    """
    grid = cache.grid
    if pmask.shape != perturbed.dims:
        raise ValidationError(f"perturbation mask shape {pmask.shape} != crop dims {perturbed.dims}")
    if cache.baseline.dims != perturbed.dims:
        raise ValidationError(f"cache built for dims {cache.baseline.dims}, got {perturbed.dims}")
    if use_sat is None:
        use_sat = len(grid.origins) >= _SAT_MIN_PATCHES
    sat = _summed_area_table(pmask) if use_sat else None

    hits = 0

    def run():
        nonlocal hits
        for origin in grid.origins:
            if sat is not None:
                touched = _box_sum(sat, origin, grid.patch_size) > 0
            else:
                touched = bool(pmask[grid.patch_slices(origin)].any())
            if touched:
                patch = perturbed.data[grid.patch_slices(origin)]
                try:
                    logits = pred.predict(patch)
                except Exception as e:
                    raise PredictorError(f"predict failed at patch origin {origin}: {e}") from e
                yield origin, logits
            else:
                hits += 1
                yield origin, cache.entries[origin]

    fused = fuse_patches(run(), perturbed.dims, cache.num_classes, weights, perturbed.spacing_mm)
    stats = CacheStats(hits=hits, misses=len(grid.origins) - hits)
    return fused, stats


def expected_speedup(hit_rate: float) -> float:
    """Idealized coalition-inference speedup 1/(1-h); h = 1 reports unbounded (inf)."""
    if not 0.0 <= hit_rate <= 1.0:
        raise ValidationError(f"hit rate must be in [0, 1], got {hit_rate}")
    if hit_rate == 1.0:
        return float("inf")
    return 1.0 / (1.0 - hit_rate)


# On-disk spill: JSON header + one binary entries file of
# (origin: 3 x u32 LE, payload length: u64 LE, payload: raw f32 LE logits).

def write_cache(cache: PatchLogitCache, path) -> Path:
    header_path = Path(path)
    if header_path.suffix != ".json":
        header_path = header_path.with_suffix(header_path.suffix + ".json")
    entries_path = header_path.with_suffix(".bin")
    header = {
        "voxshap_cache": 1,
        "content_hash": cache.content_hash,
        "num_classes": cache.num_classes,
        "grid": {
            "patch_size": list(cache.grid.patch_size),
            "step": list(cache.grid.step),
            "origins": [list(o) for o in cache.grid.origins],
        },
        "dims": list(cache.baseline.dims),
        "spacing_mm": list(cache.baseline.spacing_mm),
    }
    header_path.parent.mkdir(parents=True, exist_ok=True)
    header_path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    with entries_path.open("wb") as f:
        for origin in cache.grid.origins:
            block = cache.entries[origin]
            payload = block.astype("<f4", copy=False).tobytes()
            f.write(struct.pack("<IIIQ", *origin, len(payload)))
            f.write(payload)
    return header_path


def read_cache(path, weights: np.ndarray, expected_hash: str | None = None) -> PatchLogitCache:
    """Reload a spilled cache; the fused baseline is rebuilt from the entries.

    weights must be the same fusion weights the run uses; refusing identical
    entries with identical weights reproduces the original baseline bytes.
    """
    header_path = Path(path)
    entries_path = header_path.with_suffix(".bin")
    header = json.loads(header_path.read_text())
    if header.get("voxshap_cache") != 1:
        raise ValidationError(f"{header_path}: not a cache header")
    if expected_hash is not None and header["content_hash"] != expected_hash:
        raise ValidationError(
            f"{header_path}: cache content hash mismatch (stale cache for this crop/grid/predictor)"
        )
    grid = PatchGrid(
        patch_size=tuple(header["grid"]["patch_size"]),
        step=tuple(header["grid"]["step"]),
        origins=tuple(tuple(o) for o in header["grid"]["origins"]),
    )
    num_classes = int(header["num_classes"])
    dims = tuple(header["dims"])
    block_shape = (num_classes, *grid.patch_size)
    block_count = int(np.prod(block_shape))
    entries: dict[Triple, np.ndarray] = {}
    with entries_path.open("rb") as f:
        for _ in grid.origins:
            rec = f.read(20)
            if len(rec) != 20:
                raise ValidationError(f"{entries_path}: truncated entry record")
            ox, oy, oz, length = struct.unpack("<IIIQ", rec)
            if length != block_count * 4:
                raise ValidationError(f"{entries_path}: bad payload length {length}")
            payload = f.read(length)
            if len(payload) != length:
                raise ValidationError(f"{entries_path}: truncated payload")
            block = np.frombuffer(payload, dtype="<f4").reshape(block_shape).copy()
            block.setflags(write=False)
            entries[(ox, oy, oz)] = block
    baseline = fuse_patches(
        ((o, entries[o]) for o in grid.origins),
        dims,
        num_classes,
        weights,
        tuple(header["spacing_mm"]),
    )
    return PatchLogitCache(
        grid=grid,
        entries=entries,
        baseline=baseline,
        num_classes=num_classes,
        content_hash=header["content_hash"],
    )
