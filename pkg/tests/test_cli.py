import json

import pytest
from click.testing import CliRunner

from conftest import make_organ_fixture
from voxshap.cli import main
from voxshap.io import write_vraw


@pytest.fixture
def workdir(tmp_path):
    fx = make_organ_fixture(3)
    write_vraw(fx.volume, tmp_path / "vol.json")
    write_vraw(fx.labels, tmp_path / "lab.json")
    write_vraw(fx.roi, tmp_path / "roi.json")
    return tmp_path


def base_args(workdir, out="out"):
    return [
        "--volume", str(workdir / "vol.json"),
        "--labels", str(workdir / "lab.json"),
        "--roi", str(workdir / "roi.json"),
        "--units", "organs",
        "--score", "softdice",
        "--budget", "10",
        "--out", str(workdir / out),
    ]


def run_cli(args):
    return CliRunner().invoke(main, args, catch_exceptions=False)


class TestPartitionCli:
    def test_success(self, workdir):
        result = run_cli(["partition", *base_args(workdir)])
        assert result.exit_code == 0, result.output
        body = json.loads(result.output)
        assert body["num_units"] == 3

    def test_missing_volume_exits_2(self, workdir):
        args = base_args(workdir)
        args[1] = str(workdir / "missing.json")
        result = CliRunner().invoke(main, ["partition", *args])
        assert result.exit_code == 2

    def test_bad_patch_flag_exits_2(self, workdir):
        result = CliRunner().invoke(main, ["partition", *base_args(workdir), "--patch", "8x8"])
        assert result.exit_code == 2


class TestAttributeCli:
    def test_end_to_end(self, workdir):
        result = run_cli(["attribute", *base_args(workdir)])
        assert result.exit_code == 0, result.output
        body = json.loads(result.output)
        assert len(body["phi"]) == 3
        assert (workdir / "out" / "attribution.json").exists()
        assert (workdir / "out" / "attribution_map.raw").exists()

    def test_bad_exec_predictor_exits_3(self, workdir):
        result = CliRunner().invoke(
            main,
            ["attribute", *base_args(workdir), "--predictor", "exec:/no/such/adapter"],
        )
        assert result.exit_code == 3

    def test_config_file_with_flag_precedence(self, workdir):
        cfg_file = workdir / "run.json"
        cfg_file.write_text(json.dumps({
            "volume": str(workdir / "vol.json"),
            "labels": str(workdir / "lab.json"),
            "roi": str(workdir / "roi.json"),
            "out_dir": str(workdir / "out_file"),
            "units": {"kind": "organs"},
            "shap": {"budget": 6, "seed": 1},
        }))
        result = run_cli(["attribute", "--config", str(cfg_file), "--budget", "12"])
        assert result.exit_code == 0, result.output
        body = json.loads(result.output)
        # flag overrides file: budget 12 enumerates all 6 masks anyway, but
        # the resolved config written to disk must show the override
        on_disk = json.loads((workdir / "out_file" / "attribution.json").read_text())
        assert on_disk["config"]["shap"]["budget"] == 12
        assert on_disk["config"]["shap"]["seed"] == 1  # file value survives

    def test_missing_required_inputs_exits_2(self):
        result = CliRunner().invoke(main, ["attribute", "--out", "somewhere"])
        assert result.exit_code == 2

    def test_unidentifiable_budget_exits_4(self, tmp_path):
        # 14 units but only 16 coalitions: paired sampling cannot span the
        # reduced design, which is a numerical failure (exit 4)
        fx = make_organ_fixture(14, seed=14)
        write_vraw(fx.volume, tmp_path / "vol.json")
        write_vraw(fx.labels, tmp_path / "lab.json")
        write_vraw(fx.roi, tmp_path / "roi.json")
        result = CliRunner().invoke(main, [
            "attribute",
            "--volume", str(tmp_path / "vol.json"),
            "--labels", str(tmp_path / "lab.json"),
            "--roi", str(tmp_path / "roi.json"),
            "--units", "organs",
            "--budget", "16",
            "--out", str(tmp_path / "out"),
        ])
        assert result.exit_code == 4


class TestCurvesCli:
    def test_full_flow(self, workdir):
        attr = run_cli(["attribute", *base_args(workdir)])
        assert attr.exit_code == 0
        attribution = str(workdir / "out" / "attribution.json")
        result = run_cli([
            "curves", *base_args(workdir),
            "--attribution", attribution,
            "--curve-score", "tp", "--curve-score", "dice",
        ])
        assert result.exit_code == 0, result.output
        body = json.loads(result.output)
        assert set(body["kinds"]) == {"tp", "dice"}
        assert (workdir / "out" / "curves_tp.csv").exists()


class TestConvergenceCli:
    def test_success(self, workdir):
        result = run_cli(["convergence", *base_args(workdir), "--budgets", "5,6"])
        assert result.exit_code == 0, result.output
        assert len(json.loads(result.output)["entries"]) == 2

    def test_bad_budgets_exits_2(self, workdir):
        result = CliRunner().invoke(
            main, ["convergence", *base_args(workdir), "--budgets", "5;6"]
        )
        assert result.exit_code == 2


class TestCacheStatsCli:
    def test_success(self, workdir):
        result = run_cli(["cache-stats", *base_args(workdir), "-n", "8"])
        assert result.exit_code == 0, result.output
        body = json.loads(result.output)
        assert len(body["per_coalition_hit_rate"]) == 8
