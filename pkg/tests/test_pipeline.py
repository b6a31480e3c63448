import json
from pathlib import Path

import numpy as np
import pytest

from conftest import make_organ_fixture
from voxshap import pipeline
from voxshap.config import RunConfig
from voxshap.errors import ValidationError
from voxshap.io import read_unitmap, read_volume, write_vraw
from voxshap.score import ScoreKind
from voxshap.shapley import exact_shapley


@pytest.fixture
def inputs(tmp_path):
    fx = make_organ_fixture(3)
    write_vraw(fx.volume, tmp_path / "vol.json")
    write_vraw(fx.labels, tmp_path / "lab.json")
    write_vraw(fx.roi, tmp_path / "roi.json")
    return tmp_path


def config_for(tmp_path, out="out", **overrides) -> RunConfig:
    base = {
        "volume": str(tmp_path / "vol.json"),
        "labels": str(tmp_path / "lab.json"),
        "roi": str(tmp_path / "roi.json"),
        "out_dir": str(tmp_path / out),
        "units": {"kind": "organs"},
        "score": {"kind": "softdice", "target_class": 1},
        "shap": {"budget": 10, "seed": 0},
    }
    base.update(overrides)
    return RunConfig.model_validate(base)


class TestPartitionCommand:
    def test_organs_summary(self, inputs):
        summary = pipeline.run_partition(config_for(inputs))
        assert summary["num_units"] == 3
        assert summary["unit_voxel_counts"] == [27, 27, 27]
        assert Path(summary["unitmap_path"]).exists()
        assert summary["config"]["units"]["kind"] == "organs"
        assert set(summary["input_hashes"]) == {"volume", "labels", "roi"}

    def test_fcc_large_scale_single_unit(self, inputs):
        summary = pipeline.run_partition(
            config_for(inputs, units={"kind": "fcc", "scale_mm": 500.0})
        )
        assert summary["num_units"] == 1

    def test_rerun_outputs_byte_identical(self, inputs):
        cfg_a = config_for(inputs, out="out_a")
        cfg_b = config_for(inputs, out="out_b")
        pipeline.run_partition(cfg_a)
        pipeline.run_partition(cfg_b)
        raw_a = (Path(cfg_a.out_dir) / "units.raw").read_bytes()
        raw_b = (Path(cfg_b.out_dir) / "units.raw").read_bytes()
        assert raw_a == raw_b
        # sidecars differ only in the out_dir path embedded in provenance
        meta_a = json.loads((Path(cfg_a.out_dir) / "units.json").read_text())
        meta_b = json.loads((Path(cfg_b.out_dir) / "units.json").read_text())
        meta_a["run"]["config"].pop("out_dir")
        meta_b["run"]["config"].pop("out_dir")
        assert meta_a == meta_b

    def test_missing_labels_for_organs_rejected(self, inputs):
        cfg = config_for(inputs, labels=None)
        with pytest.raises(ValidationError, match="requires a label volume"):
            pipeline.run_partition(cfg)


class TestAttributeCommand:
    def test_matches_exact_oracle(self, inputs):
        cfg = config_for(inputs)
        payload = pipeline.run_attribute(cfg)
        pipe = pipeline.prepare(cfg)
        oracle = exact_shapley(pipe.evaluator(ScoreKind.SOFT_DICE), pipe.num_units)
        np.testing.assert_allclose(payload["phi"], oracle.phi, atol=1e-6)

    def test_output_schema(self, inputs):
        payload = pipeline.run_attribute(config_for(inputs))
        for key in ("phi", "phi0", "v_full", "config", "diagnostics", "cache", "unitmap_hash"):
            assert key in payload
        for key in ("residual_max", "cond", "holdout_mae", "holdout_r2"):
            assert key in payload["diagnostics"]
        for key in ("mean_hit_rate", "predictor_calls"):
            assert key in payload["cache"]
        on_disk = json.loads((Path(payload["attribution_path"])).read_text())
        assert on_disk["phi"] == payload["phi"]

    def test_fp_baseline_value_recorded_as_zero(self, inputs):
        payload = pipeline.run_attribute(config_for(inputs, score={"kind": "fp", "target_class": 1}))
        assert payload["v_full"] == 0.0

    def test_attribution_raster_per_unit_fill(self, inputs):
        cfg = config_for(inputs)
        payload = pipeline.run_attribute(cfg)
        raster = read_volume(Path(cfg.out_dir) / "attribution_map.json")
        units = read_unitmap(Path(cfg.out_dir) / "units.json")
        phi = np.array(payload["phi"], dtype=np.float32)
        assert (raster.data[units.data == 0] == 0).all()
        for j in range(1, units.num_units + 1):
            values = np.unique(raster.data[units.data == j])
            assert values.size == 1 and values[0] == phi[j - 1]

    def test_forward_call_accounting(self, inputs):
        payload = pipeline.run_attribute(config_for(inputs))
        cache = payload["cache"]
        assert cache["predictor_calls"] == cache["total_misses"] + cache["patches_per_coalition"]

    def test_attribution_bytes_deterministic_across_runs(self, inputs):
        cfg_a = config_for(inputs, out="det_a", shap={"budget": 20, "seed": 3})
        cfg_b = config_for(inputs, out="det_b", shap={"budget": 20, "seed": 3})
        pipeline.run_attribute(cfg_a)
        pipeline.run_attribute(cfg_b)
        a = json.loads((Path(cfg_a.out_dir) / "attribution.json").read_text())
        b = json.loads((Path(cfg_b.out_dir) / "attribution.json").read_text())
        a["config"].pop("out_dir")
        b["config"].pop("out_dir")
        assert a == b
        raw_a = (Path(cfg_a.out_dir) / "attribution_map.raw").read_bytes()
        raw_b = (Path(cfg_b.out_dir) / "attribution_map.raw").read_bytes()
        assert raw_a == raw_b


class TestCurvesCommand:
    def test_csv_and_metrics(self, inputs):
        cfg = config_for(inputs)
        attr_payload = pipeline.run_attribute(cfg)
        result = pipeline.run_curves(cfg, attr_payload["attribution_path"])
        kind = "softdice"
        metrics = result["results"][kind]["metrics"]
        assert set(metrics) == {
            "aopc", "abpc", "naopc", "nabpc", "s_max", "s_min",
            "degenerate_range", "normalized_out_of_range",
        }
        csv_path = Path(result["results"][kind]["csv_path"])
        rows = csv_path.read_text().strip().splitlines()
        k_steps = result["results"][kind]["num_steps"]
        assert len(rows) == 1 + 2 * (k_steps + 1)  # header + both curves
        assert rows[0] == "ordering,k,units_removed,fraction_removed,score,normalized_score"

    def test_multiple_score_kinds(self, inputs):
        cfg = config_for(inputs, curve_scores=["tp", "dice"])
        attr_payload = pipeline.run_attribute(cfg)
        result = pipeline.run_curves(cfg, attr_payload["attribution_path"])
        assert result["kinds"] == ["tp", "dice"]

    def test_unitmap_hash_mismatch_rejected(self, inputs):
        cfg = config_for(inputs)
        attr_payload = pipeline.run_attribute(cfg)
        other = config_for(inputs, units={"kind": "fcc", "scale_mm": 6.0})
        with pytest.raises(ValidationError, match="unitmap hash mismatch"):
            pipeline.run_curves(other, attr_payload["attribution_path"])

    def test_missing_attribution_rejected(self, inputs):
        with pytest.raises(ValidationError, match="not found"):
            pipeline.run_curves(config_for(inputs), inputs / "nope.json")

    def test_curves_reuse_spilled_cache(self, inputs):
        cfg = config_for(inputs)
        attr_payload = pipeline.run_attribute(cfg)
        assert (Path(cfg.out_dir) / "cache.bin").exists()
        pipe = pipeline.prepare(cfg, reuse_cache=True)
        # baseline inference skipped: no predictor calls were needed to prepare
        assert pipe.predictor.calls == 0
        fresh = pipeline.prepare(cfg)
        assert pipe.cache.baseline.data.tobytes() == fresh.cache.baseline.data.tobytes()
        result = pipeline.run_curves(cfg, attr_payload["attribution_path"])
        assert result["results"]["softdice"]["metrics"]["s_max"] is not None


class TestConvergenceCommand:
    def test_report_written_and_deterministic(self, inputs):
        cfg = config_for(inputs)
        a = pipeline.run_convergence(cfg, [5, 6])
        b = pipeline.run_convergence(cfg, [5, 6])
        assert a["budgets"] == [5, 6]
        assert len(a["entries"]) == 2
        assert a["entries"] == b["entries"]

    def test_budgets_must_ascend(self, inputs):
        with pytest.raises(ValidationError, match="strictly increasing"):
            pipeline.run_convergence(config_for(inputs), [6, 5])


class TestCacheStatsCommand:
    def test_summary_fields(self, inputs):
        payload = pipeline.run_cache_stats(config_for(inputs), n_coalitions=25)
        assert payload["coalitions_evaluated"] == 25
        assert len(payload["per_coalition_hit_rate"]) == 25
        assert 0.0 <= payload["mean_hit_rate"] <= 1.0
        assert payload["predictor_calls"] == payload["total_misses"] + payload["patches_per_coalition"]
        assert payload["cache_memory_bytes"] > 0


class TestPrepareValidation:
    def test_roi_grid_mismatch_rejected(self, inputs, tmp_path):
        from voxshap.grid import RoiMask

        bad_roi = RoiMask(data=np.ones((4, 4, 4), dtype=np.uint8), spacing_mm=(1, 1, 1))
        write_vraw(bad_roi, tmp_path / "bad_roi.json")
        cfg = config_for(inputs, roi=str(tmp_path / "bad_roi.json"))
        with pytest.raises(ValidationError, match="not on the volume's grid"):
            pipeline.prepare(cfg)

    def test_target_class_out_of_range(self, inputs):
        cfg = config_for(inputs, score={"kind": "tp", "target_class": 7})
        with pytest.raises(ValidationError, match="target class"):
            pipeline.prepare(cfg)

    def test_unknown_predictor_rejected(self, inputs):
        cfg = config_for(inputs, predictor="magic")
        with pytest.raises(ValidationError, match="unknown predictor"):
            pipeline.prepare(cfg)
