"""End-to-end orchestration: files in, attribution/curve/convergence artifacts out.

Every command shares the same preparation: load rasters, cube the ROI's
bounding box, dilate it to the receptive-field support, crop, partition
into units, build the patch grid and the baseline logit cache. Artifacts
embed the resolved config and input content hashes so runs are
reproducible and cross-checkable.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bridge import ExternalPredictor
from .cache import (
    CacheStats,
    PatchLogitCache,
    build_cache,
    cached_predict,
    crop_content_hash,
    expected_speedup,
    read_cache,
    write_cache,
)
from .config import RunConfig
from .curves import curve_metrics, deletion_curve, normalize_curve, rank_units
from .errors import ValidationError
from .grid import BBox, LabelVolume, RoiMask, Volume, crop, cubic_bbox, rf_support
from .infer import (
    CountingPredictor,
    PatchGrid,
    PatchPredictor,
    SyntheticPredictor,
    build_patch_grid,
    gaussian_weight_patch,
)
from .io import read_labels, read_roi, read_volume, vraw_paths, write_vraw
from .perturb import MaskingBaseline, apply_coalition, perturbation_mask
from .score import BaselineContext, ScoreConfig, ScoreKind, evaluate
from .shapley import (
    Attribution,
    ShapConfig,
    convergence_report,
    evaluate_coalitions,
    sample_coalitions,
    solve,
)
from .units import FccConfig, UnitMap, partition_fcc, partition_full_organs, partition_hybrid

# Preset affine coefficients for the built-in predictor by class count.
_SYNTHETIC_PRESETS = {
    2: {"slopes": (-0.002, 0.002), "offsets": (0.5, -0.5)},
    3: {"slopes": (-0.004, 0.001, 0.004), "offsets": (0.0, 0.8, 0.0)},
}


def _as_config(cfg) -> RunConfig:
    """Coerce dicts (and model_copy results holding raw dict fields) into a
    fully validated RunConfig."""
    data = cfg if isinstance(cfg, dict) else cfg.model_dump(warnings=False)
    return RunConfig.model_validate(data)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _raster_hashes(cfg: RunConfig) -> dict:
    hashes = {"volume": file_sha256(vraw_paths(cfg.volume)[1])}
    hashes["roi"] = file_sha256(vraw_paths(cfg.roi)[1])
    if cfg.labels:
        hashes["labels"] = file_sha256(vraw_paths(cfg.labels)[1])
    return hashes


def make_predictor(cfg: RunConfig, num_classes: int | None = None) -> PatchPredictor:
    patch = tuple(cfg.infer.patch)
    if cfg.predictor == "synthetic":
        n = num_classes or 3
        preset = _SYNTHETIC_PRESETS.get(n)
        if preset is None:
            raise ValidationError(f"synthetic predictor supports {sorted(_SYNTHETIC_PRESETS)} classes, got {n}")
        return SyntheticPredictor(patch_size=patch, **preset)
    if cfg.predictor.startswith("exec:"):
        return ExternalPredictor(
            command=cfg.predictor[len("exec:"):],
            patch_size=patch,
            num_classes=num_classes or 3,
            timeout_s=cfg.bridge_timeout_s,
        )
    raise ValidationError(f"unknown predictor {cfg.predictor!r} (use 'synthetic' or 'exec:<command>')")


def make_units(cfg: RunConfig, crop_labels: LabelVolume | None, crop_dims, spacing) -> UnitMap:
    kind = cfg.units.kind
    if kind == "organs":
        if crop_labels is None:
            raise ValidationError("units kind 'organs' requires a label volume")
        return partition_full_organs(crop_labels)
    fcc = partition_fcc(crop_dims, spacing, FccConfig(scale_mm=cfg.units.scale_mm))
    if kind == "fcc":
        return fcc
    if crop_labels is None:
        raise ValidationError("units kind 'hybrid' requires a label volume")
    return partition_hybrid(fcc, crop_labels, min_fragment=cfg.units.min_fragment)


@dataclass
class Pipeline:
    """Everything a run shares across coalitions; built once per (config, inputs)."""

    cfg: RunConfig
    bbox: BBox
    bbox_cubic: bool
    rf_bbox: BBox
    crop_volume: Volume
    crop_roi: RoiMask
    units: UnitMap
    predictor: CountingPredictor
    grid: PatchGrid
    weights: np.ndarray
    cache: PatchLogitCache
    ctx: BaselineContext
    input_hashes: dict
    coalition_stats: list[CacheStats] = field(default_factory=list)
    _memo: dict = field(default_factory=dict)

    @property
    def num_units(self) -> int:
        return self.units.num_units

    def unitmap_hash(self) -> str:
        return hashlib.sha256(self.units.data.tobytes()).hexdigest()

    def evaluator(self, kind: ScoreKind, memoize: bool = True):
        """Coalition mask -> scalar score, through perturb -> cached predict -> score."""
        kind = ScoreKind(kind)
        score_cfg = ScoreConfig(
            kind=kind, target_class=self.cfg.score.target_class, epsilon=self.cfg.score.epsilon
        )
        baseline = MaskingBaseline(value_hu=self.cfg.masking_hu)

        def run(mask: np.ndarray) -> float:
            key = (kind.value, mask.tobytes())
            if memoize and key in self._memo:
                return self._memo[key]
            perturbed = apply_coalition(self.crop_volume, self.units, mask, baseline)
            pmask = perturbation_mask(self.units, mask)
            logits, stats = cached_predict(perturbed, pmask, self.cache, self.predictor, self.weights)
            value = evaluate(kind, logits, self.ctx, score_cfg)
            self.coalition_stats.append(stats)
            if memoize:
                self._memo[key] = value
            return value

        return run

    def effective_workers(self) -> int:
        if not self.predictor.inner.supports_concurrency:
            return 1
        if self.cfg.workers > 0:
            return self.cfg.workers
        return os.cpu_count() or 1

    def cache_summary(self) -> dict:
        stats = self.coalition_stats
        # sorted so the mean is identical regardless of the (possibly
        # threaded) completion order the stats were appended in
        hit_rates = sorted(s.hit_rate for s in stats)
        mean_h = float(np.mean(hit_rates)) if hit_rates else 0.0
        return {
            "coalitions_evaluated": len(stats),
            "total_hits": int(sum(s.hits for s in stats)),
            "total_misses": int(sum(s.misses for s in stats)),
            "mean_hit_rate": mean_h,
            "expected_speedup": expected_speedup(mean_h) if mean_h < 1.0 else None,
            "predictor_calls": self.predictor.calls,
            "patches_per_coalition": len(self.grid.origins),
            "cache_memory_bytes": self.cache.memory_bytes,
        }

    def close(self) -> None:
        inner = self.predictor.inner
        if isinstance(inner, ExternalPredictor):
            inner.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def prepare(cfg: RunConfig, reuse_cache: bool = False) -> Pipeline:
    """Load inputs and build all shared run state.

    With reuse_cache, a cache previously spilled into out_dir is reloaded
    instead of re-running baseline inference, but only if its content hash
    still matches this crop/grid/predictor (stale spills are rebuilt).
    """
    cfg = _as_config(cfg)
    volume = read_volume(cfg.volume)
    roi = read_roi(cfg.roi)
    if roi.dims != volume.dims or roi.spacing_mm != volume.spacing_mm:
        raise ValidationError("ROI is not on the volume's grid")
    labels = None
    if cfg.labels:
        labels = read_labels(cfg.labels)
        if labels.dims != volume.dims or labels.spacing_mm != volume.spacing_mm:
            raise ValidationError("labels are not on the volume's grid")

    box, cubic = cubic_bbox(roi)
    rf_box = rf_support(box, cfg.infer.patch, volume.dims)
    crop_volume = crop(volume, rf_box)
    crop_roi = crop(roi, rf_box)
    crop_labels = crop(labels, rf_box) if labels is not None else None

    units = make_units(cfg, crop_labels, crop_volume.dims, crop_volume.spacing_mm)

    predictor = CountingPredictor(make_predictor(cfg))
    if cfg.score.target_class >= predictor.num_classes:
        raise ValidationError(
            f"target class {cfg.score.target_class} out of range for "
            f"{predictor.num_classes}-class predictor"
        )
    grid = build_patch_grid(crop_volume.dims, cfg.infer.patch, overlap=cfg.infer.overlap)
    weights = gaussian_weight_patch(grid.patch_size, sigma_scale=cfg.infer.sigma_scale)
    cache = None
    spill_path = Path(cfg.out_dir) / "cache.json"
    if reuse_cache and spill_path.exists():
        expected = crop_content_hash(crop_volume, grid, cfg.predictor)
        try:
            cache = read_cache(spill_path, weights, expected_hash=expected)
        except ValidationError:
            cache = None  # stale or corrupt spill; rebuild below
    if cache is None:
        cache = build_cache(crop_volume, grid, predictor, weights, predictor_id=cfg.predictor)
    ctx = BaselineContext.create(cache.baseline, crop_roi, cfg.score.target_class)

    return Pipeline(
        cfg=cfg,
        bbox=box,
        bbox_cubic=cubic,
        rf_bbox=rf_box,
        crop_volume=crop_volume,
        crop_roi=crop_roi,
        units=units,
        predictor=predictor,
        grid=grid,
        weights=weights,
        cache=cache,
        ctx=ctx,
        input_hashes=_raster_hashes(cfg),
    )


def _provenance(pipe: Pipeline) -> dict:
    return {
        "config": pipe.cfg.model_dump(),
        "input_hashes": pipe.input_hashes,
        "unitmap_hash": pipe.unitmap_hash(),
        "bbox": {"min": list(pipe.bbox.min), "max": list(pipe.bbox.max), "cubic": pipe.bbox_cubic},
        "rf_bbox": {"min": list(pipe.rf_bbox.min), "max": list(pipe.rf_bbox.max)},
    }


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def run_partition(cfg: RunConfig) -> dict:
    """Partition the receptive-field crop and write the unit map + summary."""
    cfg = _as_config(cfg)
    pipe = prepare(cfg)
    with pipe:
        out = Path(cfg.out_dir)
        unitmap_path = write_vraw(pipe.units, out / "units.json", extra={"run": _provenance(pipe)})
        counts = pipe.units.voxel_counts()
        summary = {
            "num_units": pipe.num_units,
            "unit_voxel_counts": counts[1:].tolist(),
            "excluded_voxels": int(counts[0]),
            "crop_dims": list(pipe.crop_volume.dims),
            "unitmap_path": str(unitmap_path),
            **_provenance(pipe),
        }
        _write_json(out / "partition_summary.json", summary)
        return summary


def _attribution_payload(pipe: Pipeline, attr: Attribution) -> dict:
    payload = attr.to_dict()
    payload["cache"] = pipe.cache_summary()
    payload["num_units"] = pipe.num_units
    payload["budget_semantics"] = "budget counts unique non-trivial coalitions; anchors extra"
    payload.update(_provenance(pipe))
    return payload


def run_attribute(cfg: RunConfig) -> dict:
    """Full KernelSHAP run; writes attribution JSON plus a per-unit phi raster."""
    cfg = _as_config(cfg)
    pipe = prepare(cfg)
    with pipe:
        shap_cfg = ShapConfig(
            budget=cfg.shap.budget, seed=cfg.shap.seed, holdout=cfg.shap.holdout, ridge=cfg.shap.ridge
        )
        masks, weights = sample_coalitions(pipe.num_units, shap_cfg)
        sample = evaluate_coalitions(
            masks, pipe.evaluator(ScoreKind(cfg.score.kind)), weights, workers=pipe.effective_workers()
        )
        attr = solve(
            sample, pipe.num_units, ridge=shap_cfg.ridge, holdout=shap_cfg.holdout, seed=shap_cfg.seed
        )

        out = Path(cfg.out_dir)
        payload = _attribution_payload(pipe, attr)
        _write_json(out / "attribution.json", payload)
        write_cache(pipe.cache, out / "cache.json")  # reused by the curves command
        phi_fill = np.zeros(pipe.num_units + 1, dtype=np.float32)
        phi_fill[1:] = attr.phi.astype(np.float32)
        raster = Volume(data=phi_fill[pipe.units.data], spacing_mm=pipe.crop_volume.spacing_mm)
        write_vraw(raster, out / "attribution_map.json", extra={"run": _provenance(pipe)})
        write_vraw(pipe.units, out / "units.json", extra={"run": _provenance(pipe)})
        payload["attribution_path"] = str(out / "attribution.json")
        return payload


def run_curves(cfg: RunConfig, attribution_path) -> dict:
    """MoRF/LeRF deletion curves and metrics for an existing attribution."""
    cfg = _as_config(cfg)
    attribution_path = Path(attribution_path)
    if not attribution_path.exists():
        raise ValidationError(f"attribution file not found: {attribution_path}")
    recorded = json.loads(attribution_path.read_text())
    pipe = prepare(cfg, reuse_cache=True)
    with pipe:
        if recorded.get("unitmap_hash") != pipe.unitmap_hash():
            raise ValidationError(
                "attribution was computed on a different unit map "
                "(unitmap hash mismatch; re-run attribute with this config)"
            )
        attr = Attribution(
            phi=np.asarray(recorded["phi"], dtype=np.float64),
            phi0=float(recorded["phi0"]),
            v_full=float(recorded["v_full"]),
        )
        kinds = cfg.curve_scores or [cfg.score.kind]
        out = Path(cfg.out_dir)
        results = {}
        for kind in kinds:
            evaluator = pipe.evaluator(ScoreKind(kind))
            morf = deletion_curve(
                rank_units(attr, "morf"), evaluator, "morf", max_steps=cfg.curve_max_steps
            )
            lerf = deletion_curve(
                rank_units(attr, "lerf"), evaluator, "lerf", max_steps=cfg.curve_max_steps
            )
            metrics = curve_metrics(morf, lerf)
            csv_path = out / f"curves_{kind}.csv"
            _write_curve_csv(csv_path, morf, lerf, metrics)
            payload = {
                "metrics": metrics.to_dict(),
                "csv_path": str(csv_path),
                "num_steps": morf.num_steps,
                **_provenance(pipe),
            }
            _write_json(out / f"curve_metrics_{kind}.json", payload)
            results[kind] = payload
        return {"kinds": list(results), "results": results, "cache": pipe.cache_summary()}


def _write_curve_csv(path: Path, morf, lerf, metrics) -> None:
    n_morf, _ = normalize_curve(morf, s_max=metrics.s_max, s_min=metrics.s_min)
    n_lerf, _ = normalize_curve(lerf, s_max=metrics.s_max, s_min=metrics.s_min)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["ordering", "k", "units_removed", "fraction_removed", "score", "normalized_score"]
        )
        for curve, normed in ((morf, n_morf), (lerf, n_lerf)):
            for step, n_step in zip(curve.steps, normed.steps):
                writer.writerow(
                    [
                        curve.ordering,
                        step.k,
                        step.units_removed,
                        f"{step.fraction_removed:.6f}",
                        repr(step.score),
                        repr(n_step.score),
                    ]
                )


def run_convergence(cfg: RunConfig, budgets: list[int]) -> dict:
    """Budget sweep with stability diagnostics per budget."""
    cfg = _as_config(cfg)
    pipe = prepare(cfg)
    with pipe:
        shap_cfg = ShapConfig(
            budget=max(budgets), seed=cfg.shap.seed, holdout=cfg.shap.holdout, ridge=cfg.shap.ridge
        )
        report = convergence_report(
            pipe.evaluator(ScoreKind(cfg.score.kind)), pipe.num_units, budgets, shap_cfg
        )
        payload = {
            **report.to_dict(),
            "num_units": pipe.num_units,
            "cache": pipe.cache_summary(),
            **_provenance(pipe),
        }
        _write_json(Path(cfg.out_dir) / "convergence.json", payload)
        return payload


def run_cache_stats(cfg: RunConfig, n_coalitions: int = 100) -> dict:
    """Measure realized hit rates over randomly drawn coalitions."""
    cfg = _as_config(cfg)
    pipe = prepare(cfg)
    with pipe:
        m = pipe.num_units
        rng = np.random.default_rng(cfg.shap.seed)
        masks = []
        for _ in range(n_coalitions):
            mask = np.ones(m, dtype=np.uint8)
            k = int(rng.integers(1, m + 1))  # remove 1..m units
            mask[rng.choice(m, size=k, replace=False)] = 0
            masks.append(mask)
        evaluator = pipe.evaluator(ScoreKind(cfg.score.kind), memoize=False)
        for mask in masks:
            evaluator(mask)
        per_coalition = [s.hit_rate for s in pipe.coalition_stats]
        payload = {
            "num_units": m,
            "per_coalition_hit_rate": per_coalition,
            **pipe.cache_summary(),
            **_provenance(pipe),
        }
        _write_json(Path(cfg.out_dir) / "cache_stats.json", payload)
        return payload
