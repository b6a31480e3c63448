"""Coalition application: hard intensity masking of removed units.

A coalition is a length-M binary vector; 1 keeps a unit's voxels, 0
replaces them with the masking baseline. Voxels with unit id 0 are not
features and are never touched.
"""

from __future__ import annotations

from dataclasses import dataclass

import math

import numpy as np

from .errors import ValidationError
from .grid import Volume
from .units import UnitMap

AIR_HU = -1024.0


@dataclass(frozen=True)
class MaskingBaseline:
    """Replacement intensity for removed voxels; default is air on the HU scale."""

    value_hu: float = AIR_HU

    def __post_init__(self):
        if not math.isfinite(self.value_hu):
            raise ValidationError(f"masking baseline must be finite, got {self.value_hu}")


def validate_coalition(m: np.ndarray, num_units: int) -> np.ndarray:
    m = np.asarray(m)
    if m.shape != (num_units,):
        raise ValidationError(f"coalition length {m.shape} != num_units {num_units}")
    if not np.isin(m, (0, 1)).all():
        raise ValidationError("coalition entries must be 0 or 1")
    return m.astype(np.uint8, copy=False)


def perturbation_mask(units: UnitMap, m: np.ndarray) -> np.ndarray:
    """Boolean raster of voxels a coalition masks: unit id j >= 1 with m_j = 0."""
    m = validate_coalition(m, units.num_units)
    removed = np.zeros(units.num_units + 1, dtype=bool)
    removed[1:] = m == 0
    return removed[units.data]


def apply_coalition(
    crop: Volume, units: UnitMap, m: np.ndarray, baseline: MaskingBaseline = MaskingBaseline()
) -> Volume:
    """Perturbed input: removed units' voxels take the baseline value, the rest copy through."""
    if crop.dims != units.dims:
        raise ValidationError(f"crop dims {crop.dims} != unit map dims {units.dims}")
    out = crop.data.copy()
    out[perturbation_mask(units, m)] = baseline.value_hu
    return Volume(data=out, spacing_mm=crop.spacing_mm)
