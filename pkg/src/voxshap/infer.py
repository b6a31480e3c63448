"""Sliding-window patch inference with Gaussian-weighted fusion.

Patch logits are accumulated into 64-bit numerator/denominator volumes and
normalized at the end; accumulation follows grid order so repeated runs are
bit-identical. The Gaussian importance weights match the usual overlapping
sliding-window scheme: patch-centered, peak 1, floored to avoid zero
denominators at borders.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Iterable, Protocol

import numpy as np

from .errors import PredictorError, ValidationError
from .grid import Triple, Volume

DEFAULT_OVERLAP = 0.5
DEFAULT_SIGMA_SCALE = 1.0 / 8.0
_WEIGHT_FLOOR = 1e-6


@dataclass(frozen=True)
class PatchGrid:
    """Clamped sliding-window tiling of a crop; origins are patch min-corners."""

    patch_size: Triple
    step: Triple
    origins: tuple[Triple, ...]

    def patch_slices(self, origin: Triple) -> tuple[slice, slice, slice]:
        return tuple(slice(o, o + p) for o, p in zip(origin, self.patch_size))


@dataclass(frozen=True)
class LogitVolume:
    """Per-class voxel logits, class-major: data[c, x, y, z], float32."""

    data: np.ndarray
    spacing_mm: tuple[float, float, float]

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 4 or data.shape[0] < 2:
            raise ValidationError(f"logits must be (C>=2, nx, ny, nz), got shape {data.shape}")
        if not np.isfinite(data).all():
            raise ValidationError("logits contain non-finite values")
        data = np.ascontiguousarray(data, dtype=np.float32)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing_mm", tuple(float(s) for s in self.spacing_mm))

    @property
    def num_classes(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> Triple:
        return self.data.shape[1:]


class PatchPredictor(Protocol):
    """Patch-level segmentation head: deterministic logits for a single patch.

    predict takes (px, py, pz) float32 intensities and returns
    (num_classes, px, py, pz) float32 logits. Identical input bytes must
    produce identical output bytes. supports_concurrency declares whether
    predict may be called from multiple threads; the engine serializes
    calls otherwise.
    """

    patch_size: Triple
    num_classes: int
    num_channels: int  # single-channel CT today; carried for forward compatibility
    supports_concurrency: bool

    def predict(self, patch: np.ndarray) -> np.ndarray: ...


def box_mean_3(patch: np.ndarray) -> np.ndarray:
    """3x3x3 box average with indices clamped at the patch border (edge replication).

    Accumulates the 27 shifted copies in float64 in a fixed offset order;
    out-of-process predictor backends mirror this exact arithmetic.
    """
    padded = np.pad(patch.astype(np.float64), 1, mode="edge")
    nx, ny, nz = patch.shape
    acc = np.zeros(patch.shape, dtype=np.float64)
    for dx in range(3):
        for dy in range(3):
            for dz in range(3):
                acc += padded[dx : dx + nx, dy : dy + ny, dz : dz + nz]
    return acc / 27.0


class SyntheticPredictor:
    """Analytic stand-in for a trained patch network.

    Per-class logits are affine in the local 3^3 box mean of the input:
    logit_c = slope_c * mean3(x) + offset_c. Pure, deterministic, and
    Lipschitz, which makes coalition evaluations reproducible.

    The default coefficients define three classes whose argmax splits the
    intensity axis into low / middle band / high. Because the middle class
    wins only on a band, hard masking can create new positives as well as
    destroy existing ones, so all score kinds have signal against it.
    """

    def __init__(self, patch_size: Triple, slopes=(-0.004, 0.001, 0.004), offsets=(0.0, 0.8, 0.0)):
        if len(slopes) != len(offsets) or len(slopes) < 2:
            raise ValidationError("need matching slopes/offsets for >= 2 classes")
        self.patch_size = tuple(int(p) for p in patch_size)
        self.num_classes = len(slopes)
        self.num_channels = 1
        self.slopes = tuple(float(a) for a in slopes)
        self.offsets = tuple(float(d) for d in offsets)
        self.supports_concurrency = True

    def predict(self, patch: np.ndarray) -> np.ndarray:
        if patch.shape != self.patch_size:
            raise PredictorError(f"patch shape {patch.shape} != {self.patch_size}")
        mean3 = box_mean_3(patch)
        logits = np.empty((self.num_classes, *patch.shape), dtype=np.float32)
        for c in range(self.num_classes):
            logits[c] = (self.slopes[c] * mean3 + self.offsets[c]).astype(np.float32)
        return logits


class CountingPredictor:
    """Wrapper that counts predict calls; used for cache accounting audits.

    Counting is lock-guarded so the exact-call accounting survives
    concurrent coalition evaluation; concurrency support follows the
    wrapped predictor.
    """

    def __init__(self, inner: PatchPredictor):
        self.inner = inner
        self.patch_size = inner.patch_size
        self.num_classes = inner.num_classes
        self.num_channels = getattr(inner, "num_channels", 1)
        self.supports_concurrency = inner.supports_concurrency
        self.calls = 0
        self._lock = threading.Lock()

    def predict(self, patch: np.ndarray) -> np.ndarray:
        with self._lock:
            self.calls += 1
        return self.inner.predict(patch)


def _axis_origins(dim: int, patch: int, step: int) -> list[int]:
    positions = list(range(0, dim - patch + 1, step))
    if positions[-1] != dim - patch:
        positions.append(dim - patch)
    return positions


def build_patch_grid(dims: Triple, patch_size: Triple, overlap: float = DEFAULT_OVERLAP) -> PatchGrid:
    """Tile a crop with overlapping patches; the last patch per axis is clamped inside."""
    if not 0 < overlap < 1:
        raise ValidationError(f"overlap must be in (0, 1), got {overlap}")
    if any(p < 1 for p in patch_size):
        raise ValidationError(f"patch_size components must be >= 1, got {patch_size}")
    patch = tuple(min(p, d) for p, d in zip(patch_size, dims))
    step = tuple(max(1, int(p * (1 - overlap))) for p in patch)
    per_axis = [_axis_origins(d, p, s) for d, p, s in zip(dims, patch, step)]
    origins = tuple(
        (ox, oy, oz) for ox in per_axis[0] for oy in per_axis[1] for oz in per_axis[2]
    )
    return PatchGrid(patch_size=patch, step=step, origins=origins)


def gaussian_weight_patch(patch_size: Triple, sigma_scale: float = DEFAULT_SIGMA_SCALE) -> np.ndarray:
    """Separable Gaussian importance map, peak 1 at the patch center, floored at 1e-6."""
    if not sigma_scale > 0:
        raise ValidationError(f"sigma_scale must be > 0, got {sigma_scale}")
    axes = []
    for p in patch_size:
        center = (p - 1) / 2.0
        sigma = sigma_scale * p
        i = np.arange(p, dtype=np.float64)
        axes.append(np.exp(-0.5 * ((i - center) / sigma) ** 2))
    w = axes[0][:, None, None] * axes[1][None, :, None] * axes[2][None, None, :]
    return np.maximum(w, _WEIGHT_FLOOR)


def fuse_patches(
    patches: Iterable[tuple[Triple, np.ndarray]],
    dims: Triple,
    num_classes: int,
    weights: np.ndarray,
    spacing_mm,
) -> LogitVolume:
    """Gaussian-weighted accumulation + normalization over (origin, logits) pairs.

    Shared by the direct and the cached inference paths so both produce
    bit-identical fusions for identical per-patch logits.
    """
    num = np.zeros((num_classes, *dims), dtype=np.float64)
    den = np.zeros(dims, dtype=np.float64)
    patch_shape = weights.shape
    for origin, logits in patches:
        sl = tuple(slice(o, o + p) for o, p in zip(origin, patch_shape))
        num[(slice(None), *sl)] += logits.astype(np.float64) * weights
        den[sl] += weights
    if not (den > 0).all():
        raise ValidationError("patch grid does not cover the crop")
    return LogitVolume(data=(num / den).astype(np.float32), spacing_mm=spacing_mm)


def sliding_window_predict(
    crop: Volume, grid: PatchGrid, pred: PatchPredictor, weights: np.ndarray
) -> LogitVolume:
    """Predict every patch in grid order and fuse."""
    if tuple(pred.patch_size) != tuple(grid.patch_size):
        raise ValidationError(
            f"predictor patch size {pred.patch_size} != grid patch size {grid.patch_size}"
        )

    def run():
        for origin in grid.origins:
            patch = crop.data[grid.patch_slices(origin)]
            try:
                yield origin, pred.predict(patch)
            except Exception as e:
                raise PredictorError(f"predictor failed at patch origin {origin}: {e}") from e

    return fuse_patches(run(), crop.dims, pred.num_classes, weights, crop.spacing_mm)


def hard_prediction(logits: LogitVolume, target_class: int) -> np.ndarray:
    """Per-voxel indicator of argmax class == target; ties pick the lowest class index."""
    if not 0 <= target_class < logits.num_classes:
        raise ValidationError(
            f"target class {target_class} out of range for {logits.num_classes} classes"
        )
    return (np.argmax(logits.data, axis=0) == target_class).astype(np.uint8)
