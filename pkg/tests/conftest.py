"""Shared fixtures: synthetic CT-like volumes with compact organ blobs.

The synthetic predictor's default 3-class coefficients put its middle
class on an intensity band, so hard masking can both destroy existing
positives and create new ones; every score kind has signal on these
fixtures.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest

from voxshap.grid import LabelVolume, RoiMask, Volume
from voxshap.infer import SyntheticPredictor


@dataclass
class OrganFixture:
    volume: Volume
    labels: LabelVolume
    roi: RoiMask
    num_organs: int


def _blob_sites(num_blobs: int, dims, margin: int, rng: np.random.Generator) -> list[tuple]:
    """Non-overlapping 3^3 blob corners on a stride-3 grid, as one contiguous run.

    Consecutive sites touch face-to-face (like adjacent organs), which is
    what lets masking one blob create new positives at its neighbor's
    interface.
    """
    lo = margin
    hi = [d - margin - 3 for d in dims]
    grid = [
        (x, y, z)
        for x in range(lo, hi[0] + 1, 3)
        for y in range(lo, hi[1] + 1, 3)
        for z in range(lo, hi[2] + 1, 3)
    ]
    if len(grid) < num_blobs:
        raise ValueError(f"cannot place {num_blobs} blobs in dims {dims}")
    start = int(rng.integers(0, len(grid) - num_blobs + 1))
    return grid[start : start + num_blobs]


def make_organ_fixture(
    num_organs: int,
    dims=(16, 16, 16),
    spacing=(1.0, 1.0, 1.0),
    seed: int = 0,
    blob_hu: float = 600.0,
    background_hu: float = -300.0,
) -> OrganFixture:
    """Bright blobs on a sub-band background.

    With the default predictor the baseline target-class positives are the
    blob shells (intensity mixing crosses the band), so masking a blob both
    destroys its own shell positives and can push a neighboring blob's
    bright voxels down into the band (new positives): TP and FP games are
    both non-trivial.
    """
    rng = np.random.default_rng(seed)
    data = rng.normal(background_hu, 20.0, size=dims).astype(np.float32)
    labels = np.zeros(dims, dtype=np.int64)
    for i, (x, y, z) in enumerate(_blob_sites(num_organs, dims, margin=2, rng=rng)):
        data[x : x + 3, y : y + 3, z : z + 3] = blob_hu + rng.normal(0.0, 20.0, (3, 3, 3))
        labels[x : x + 3, y : y + 3, z : z + 3] = 3 + 2 * i  # sparse label values
    roi = np.zeros(dims, dtype=np.uint8)
    roi[2:14, 2:14, 2:14] = 1
    return OrganFixture(
        volume=Volume(data=data, spacing_mm=spacing),
        labels=LabelVolume(data=labels, spacing_mm=spacing),
        roi=RoiMask(data=roi, spacing_mm=spacing),
        num_organs=num_organs,
    )


@pytest.fixture
def organ_fixture() -> OrganFixture:
    return make_organ_fixture(num_organs=3)


@pytest.fixture
def predictor() -> SyntheticPredictor:
    return SyntheticPredictor(patch_size=(8, 8, 8))
