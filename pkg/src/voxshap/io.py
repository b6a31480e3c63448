"""VRAW/1 raster container: a JSON sidecar plus a headerless raw binary.

Sidecar schema::

    {"vraw": 1, "dims": [nx, ny, nz], "spacing_mm": [sx, sy, sz],
     "dtype": "f32"|"u16"|"u8"|"u32", "order": "x-fastest-le"}

The raw file holds exactly nx*ny*nz little-endian elements in x-fastest
order. Volumes are f32 (HU), label maps u16, masks u8, unit maps u16
(u32 when num_units needs it). Unit maps add a "units" sidecar key;
writers may attach extra metadata keys (e.g. "provenance") which readers
ignore.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .grid import LabelVolume, RoiMask, Volume
from .units import UnitMap

_DTYPES = {"f32": "<f4", "u16": "<u2", "u8": "u1", "u32": "<u4"}
_ORDER = "x-fastest-le"


def vraw_paths(path) -> tuple[Path, Path]:
    """Resolve a user-supplied path to the (sidecar, raw) file pair."""
    sidecar = Path(path)
    if sidecar.suffix != ".json":
        sidecar = sidecar.with_suffix(sidecar.suffix + ".json")
    return sidecar, sidecar.with_suffix(".raw")


def _dtype_tag(data: np.ndarray) -> str:
    for tag, np_dtype in _DTYPES.items():
        if data.dtype == np.dtype(np_dtype):
            return tag
    raise ValidationError(f"no VRAW dtype for {data.dtype}")


def write_vraw(raster, path, extra: dict | None = None) -> Path:
    """Write any grid raster or UnitMap; returns the sidecar path."""
    sidecar_path, raw_path = vraw_paths(path)
    sidecar = {
        "vraw": 1,
        "dims": list(raster.dims),
        "spacing_mm": list(raster.spacing_mm),
        "dtype": _dtype_tag(raster.data),
        "order": _ORDER,
    }
    if isinstance(raster, UnitMap):
        sidecar["units"] = {
            "kind": raster.provenance.get("kind"),
            "scale_mm": raster.provenance.get("scale_mm"),
            "num_units": raster.num_units,
        }
        sidecar["provenance"] = raster.provenance
    if extra:
        sidecar.update(extra)
    sidecar_path.parent.mkdir(parents=True, exist_ok=True)
    sidecar_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    raw_path.write_bytes(raster.data.ravel(order="F").tobytes())
    return sidecar_path


def _read_raw(path) -> tuple[dict, np.ndarray]:
    sidecar_path, raw_path = vraw_paths(path)
    if not sidecar_path.exists():
        raise ValidationError(f"missing sidecar file: {sidecar_path}")
    if not raw_path.exists():
        raise ValidationError(f"missing raw file: {raw_path}")
    meta = json.loads(sidecar_path.read_text())
    if meta.get("vraw") != 1:
        raise ValidationError(f"{sidecar_path}: not a VRAW/1 sidecar")
    if meta.get("order") != _ORDER:
        raise ValidationError(f"{sidecar_path}: unsupported order {meta.get('order')!r}")
    if meta.get("dtype") not in _DTYPES:
        raise ValidationError(f"{sidecar_path}: unsupported dtype {meta.get('dtype')!r}")
    dims = tuple(int(d) for d in meta["dims"])
    dtype = np.dtype(_DTYPES[meta["dtype"]])
    raw = raw_path.read_bytes()
    expected = dims[0] * dims[1] * dims[2] * dtype.itemsize
    if len(raw) != expected:
        raise ValidationError(
            f"{raw_path}: expected {expected} bytes for dims {dims}, got {len(raw)}"
        )
    data = np.frombuffer(raw, dtype=dtype).reshape(dims, order="F")
    return meta, data


def read_volume(path) -> Volume:
    meta, data = _read_raw(path)
    if meta["dtype"] != "f32":
        raise ValidationError(f"{path}: volume must be f32, got {meta['dtype']}")
    return Volume(data=data.copy(), spacing_mm=tuple(meta["spacing_mm"]))


def read_labels(path) -> LabelVolume:
    meta, data = _read_raw(path)
    if meta["dtype"] not in ("u16", "u8", "u32"):
        raise ValidationError(f"{path}: labels must be unsigned ints, got {meta['dtype']}")
    return LabelVolume(data=data.copy(), spacing_mm=tuple(meta["spacing_mm"]))


def read_roi(path) -> RoiMask:
    meta, data = _read_raw(path)
    if meta["dtype"] != "u8":
        raise ValidationError(f"{path}: ROI mask must be u8, got {meta['dtype']}")
    return RoiMask(data=data.copy(), spacing_mm=tuple(meta["spacing_mm"]))


def read_unitmap(path) -> UnitMap:
    meta, data = _read_raw(path)
    units = meta.get("units")
    if not units:
        raise ValidationError(f"{path}: sidecar has no 'units' metadata")
    return UnitMap(
        data=data.copy(),
        spacing_mm=tuple(meta["spacing_mm"]),
        num_units=int(units["num_units"]),
        provenance=meta.get("provenance", dict(units)),
    )
