"""Volumetric raster types, ROI geometry, and receptive-field support.

All rasters share one indexing convention: ``data[x, y, z]`` with dims
``(nx, ny, nz)`` and linear index ``x + nx*(y + ny*z)`` (x fastest).
Arrays are frozen after construction so instances can be shared across
threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

Triple = tuple[int, int, int]


def linear_index(x: int, y: int, z: int, dims: Triple) -> int:
    nx, ny, _ = dims
    return x + nx * (y + ny * z)


def delinearize(i: int, dims: Triple) -> Triple:
    nx, ny, _ = dims
    x = i % nx
    y = (i // nx) % ny
    z = i // (nx * ny)
    return (x, y, z)


def _validate_grid(data: np.ndarray, spacing_mm: tuple[float, float, float]) -> None:
    if data.ndim != 3:
        raise ValidationError(f"raster must be 3D, got shape {data.shape}")
    if min(data.shape) < 1:
        raise ValidationError(f"raster dims must all be >= 1, got {data.shape}")
    if len(spacing_mm) != 3 or any(not (s > 0) for s in spacing_mm):
        raise ValidationError(f"spacing_mm must be three positive reals, got {spacing_mm}")


def _frozen(data: np.ndarray) -> np.ndarray:
    data.setflags(write=False)
    return data


@dataclass(frozen=True)
class Volume:
    """Scalar intensity raster in HU, float32."""

    data: np.ndarray
    spacing_mm: tuple[float, float, float]

    def __post_init__(self):
        _validate_grid(self.data, self.spacing_mm)
        object.__setattr__(self, "data", _frozen(np.ascontiguousarray(self.data, dtype=np.float32)))
        object.__setattr__(self, "spacing_mm", tuple(float(s) for s in self.spacing_mm))

    @property
    def dims(self) -> Triple:
        return self.data.shape


@dataclass(frozen=True)
class LabelVolume:
    """Non-negative integer organ labels on the same grid as the companion Volume; 0 is background."""

    data: np.ndarray
    spacing_mm: tuple[float, float, float]

    def __post_init__(self):
        _validate_grid(self.data, self.spacing_mm)
        data = np.asarray(self.data)
        if not np.issubdtype(data.dtype, np.integer):
            raise ValidationError(f"labels must be integer, got dtype {data.dtype}")
        if data.min(initial=0) < 0:
            raise ValidationError("labels must be non-negative")
        dtype = np.uint16 if data.max(initial=0) < 2**16 else np.uint32
        object.__setattr__(self, "data", _frozen(np.ascontiguousarray(data, dtype=dtype)))
        object.__setattr__(self, "spacing_mm", tuple(float(s) for s in self.spacing_mm))

    @property
    def dims(self) -> Triple:
        return self.data.shape


@dataclass(frozen=True)
class RoiMask:
    """Binary region-of-interest mask. Scores are computed over its set voxels.

    Emptiness is checked where an ROI is consumed (bounding-box and score
    construction), not here, so that cropping can produce intermediate
    empty masks.
    """

    data: np.ndarray
    spacing_mm: tuple[float, float, float]

    def __post_init__(self):
        _validate_grid(self.data, self.spacing_mm)
        data = np.asarray(self.data)
        if not np.issubdtype(data.dtype, np.integer) and data.dtype != np.bool_:
            raise ValidationError(f"ROI mask must be integer or bool, got dtype {data.dtype}")
        if not np.isin(data, (0, 1)).all():
            raise ValidationError("ROI mask values must be 0 or 1")
        object.__setattr__(self, "data", _frozen(np.ascontiguousarray(data, dtype=np.uint8)))
        object.__setattr__(self, "spacing_mm", tuple(float(s) for s in self.spacing_mm))

    @property
    def dims(self) -> Triple:
        return self.data.shape

    @property
    def num_set(self) -> int:
        return int(self.data.sum())


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box with inclusive voxel index corners."""

    min: Triple
    max: Triple

    def __post_init__(self):
        if any(lo > hi for lo, hi in zip(self.min, self.max)):
            raise ValidationError(f"BBox min must be <= max, got {self.min}..{self.max}")
        if any(lo < 0 for lo in self.min):
            raise ValidationError(f"BBox min must be non-negative, got {self.min}")
        object.__setattr__(self, "min", tuple(int(v) for v in self.min))
        object.__setattr__(self, "max", tuple(int(v) for v in self.max))

    @property
    def extents(self) -> Triple:
        return tuple(hi - lo + 1 for lo, hi in zip(self.min, self.max))

    @property
    def slices(self) -> tuple[slice, slice, slice]:
        return tuple(slice(lo, hi + 1) for lo, hi in zip(self.min, self.max))

    def contains(self, other: "BBox") -> bool:
        return all(a <= b for a, b in zip(self.min, other.min)) and all(
            a >= b for a, b in zip(self.max, other.max)
        )

    def within(self, dims: Triple) -> bool:
        return all(hi < d for hi, d in zip(self.max, dims))


def tight_bbox(roi: RoiMask) -> BBox:
    """Minimal axis-aligned box around the set voxels."""
    idx = np.nonzero(roi.data)
    if idx[0].size == 0:
        raise ValidationError("empty ROI")
    return BBox(
        min=tuple(int(ax.min()) for ax in idx),
        max=tuple(int(ax.max()) for ax in idx),
    )


def cubic_bbox(roi: RoiMask) -> tuple[BBox, bool]:
    """Minimal cubic box around the ROI, grown symmetrically from the tight box.

    Expansion that would cross a volume boundary is shifted to the opposite
    side. If the cube side exceeds a volume dimension, that axis is clamped
    to the full extent and the returned flag is False (non-cubic fallback).

    Returns (box, cubic) where cubic is False only in the clamped case.
    """
    tight = tight_bbox(roi)
    dims = roi.dims
    side = max(tight.extents)
    lo, hi = [], []
    cubic = True
    for axis in range(3):
        t_lo, t_hi = tight.min[axis], tight.max[axis]
        extra = side - (t_hi - t_lo + 1)
        a_lo = t_lo - extra // 2
        a_hi = t_hi + (extra - extra // 2)
        if a_lo < 0:
            a_hi += -a_lo
            a_lo = 0
        if a_hi > dims[axis] - 1:
            a_lo -= a_hi - (dims[axis] - 1)
            a_hi = dims[axis] - 1
        if a_lo < 0:
            a_lo = 0
            cubic = False
        lo.append(a_lo)
        hi.append(a_hi)
    return BBox(min=tuple(lo), max=tuple(hi)), cubic


def rf_support(b: BBox, patch_size: Triple, dims: Triple) -> BBox:
    """Dilate a box by the patch radius (ceil(p/2)) per axis, clamped to the volume."""
    if any(p < 1 for p in patch_size):
        raise ValidationError(f"patch_size components must be >= 1, got {patch_size}")
    radius = [math.ceil(p / 2) for p in patch_size]
    lo = tuple(max(0, b.min[a] - radius[a]) for a in range(3))
    hi = tuple(min(dims[a] - 1, b.max[a] + radius[a]) for a in range(3))
    return BBox(min=lo, max=hi)


def crop(raster, b: BBox):
    """Extract the box from a Volume/LabelVolume/RoiMask; spacing is preserved."""
    if not b.within(raster.dims):
        raise ValidationError(f"crop box {b.min}..{b.max} out of bounds for dims {raster.dims}")
    return type(raster)(data=raster.data[b.slices].copy(), spacing_mm=raster.spacing_mm)
