import json
import subprocess
import sys

import pytest
from click.testing import CliRunner

from maskfuse.cli import cli
from maskfuse.fixtures import SceneSpec, generate_synthetic_scene


@pytest.fixture(scope="module")
def scene(tmp_path_factory):
    d = tmp_path_factory.mktemp("scene")
    return generate_synthetic_scene(d, 21, SceneSpec(regions=6, taxonomy_size=5))


def invoke(args):
    runner = CliRunner()
    result = runner.invoke(cli, args, catch_exceptions=False)
    return result


class TestRun:
    def test_run_and_outputs(self, scene, tmp_path):
        out = tmp_path / "out"
        result = invoke(["run", "--manifest", str(scene), "--out", str(out)])
        assert result.exit_code == 0
        assert (out / "labels.csv").exists()
        assert (out / "rendered" / "synthetic_000.sfsl").exists()
        assert (out / "config.json").exists()
        assert (out / "timings.json").exists()
        assert (out / "eval_report.json").exists()
        assert (out / "eval_per_class_iou.png").exists()
        assert "mIoU = 1.0000" in result.output

    def test_palette_export(self, scene, tmp_path):
        out = tmp_path / "out"
        invoke(["run", "--manifest", str(scene), "--out", str(out), "--palette"])
        assert (out / "rendered" / "synthetic_000.png").exists()

    def test_closed_mode_ignores_captions_and_embeddings(self, scene, tmp_path):
        out_full = tmp_path / "full"
        invoke(["run", "--manifest", str(scene), "--out", str(out_full), "--mode", "closed"])
        # strip captions + embeddings from a copy of the manifest
        stripped_dir = tmp_path / "stripped"
        stripped_dir.mkdir()
        for f in scene.parent.iterdir():
            (stripped_dir / f.name).write_bytes(f.read_bytes())
        raw = json.loads((stripped_dir / "manifest.json").read_text())
        raw["images"][0]["captions"] = []
        raw["images"][0]["embeddings"] = None
        (stripped_dir / "manifest.json").write_text(json.dumps(raw))
        out_stripped = tmp_path / "strippedout"
        invoke(["run", "--manifest", str(stripped_dir / "manifest.json"),
                "--out", str(out_stripped), "--mode", "closed"])
        assert (out_full / "labels.csv").read_bytes() == (out_stripped / "labels.csv").read_bytes()
        assert (
            (out_full / "rendered" / "synthetic_000.sfsl").read_bytes()
            == (out_stripped / "rendered" / "synthetic_000.sfsl").read_bytes()
        )

    def test_closed_mode_emits_no_rank_timings(self, scene, tmp_path):
        out = tmp_path / "out"
        invoke(["run", "--manifest", str(scene), "--out", str(out), "--mode", "closed"])
        timings = json.loads((out / "timings.json").read_text())
        assert "rank" not in timings[0]["stages_s"]
        assert "caption_parse" not in timings[0]["stages_s"]

    def test_budget_output_consistency(self, scene, tmp_path):
        out = tmp_path / "out"
        invoke(["run", "--manifest", str(scene), "--out", str(out), "--budget", "3"])
        rows = (out / "labels.csv").read_text().strip().splitlines()[1:]
        assert len(rows) == 3

    def test_config_file_precedence(self, scene, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"budget": 2, "mode": "closed"}))
        out = tmp_path / "out"
        invoke(["run", "--manifest", str(scene), "--out", str(out),
                "--config", str(cfg), "--budget", "4"])
        effective = json.loads((out / "config.json").read_text())
        assert effective["mask_budget"] == 4  # flag beats file
        assert effective["mode"] == "closed"  # file beats default


class TestEvalBenchGenValidate:
    def test_eval_perfect(self, scene, tmp_path):
        out = tmp_path / "run"
        invoke(["run", "--manifest", str(scene), "--out", str(out)])
        ev = tmp_path / "eval"
        result = invoke(["eval", "--manifest", str(scene), "--pred", str(out),
                         "--out", str(ev)])
        assert result.exit_code == 0
        report = json.loads((ev / "eval_report.json").read_text())
        assert report["miou"] == 1.0

    def test_bench_iteration_counting(self, scene, tmp_path):
        out = tmp_path / "bench"
        result = invoke(["bench", "--manifest", str(scene), "--out", str(out),
                         "--iterations", "3"])
        assert result.exit_code == 0
        report = json.loads((out / "timing_report.json").read_text())
        assert report[0]["iterations"] == 2  # 3 requested, warm-up discarded
        assert (out / "timing_report.txt").exists()
        assert (out / "timing_stages.png").exists()

    def test_gen_and_validate(self, tmp_path):
        out = tmp_path / "scene"
        result = invoke(["gen", "--out", str(out), "--seed", "3", "--regions", "4",
                         "--taxonomy-size", "4"])
        assert result.exit_code == 0
        result = invoke(["validate", "--manifest", str(out / "manifest.json")])
        assert result.exit_code == 0
        assert "0 errors" in result.output


class TestExitCodes:
    def run_cli(self, *args):
        return subprocess.run(
            [sys.executable, "-m", "maskfuse.cli", *args],
            capture_output=True, text=True,
        )

    def test_ok(self, scene):
        proc = self.run_cli("validate", "--manifest", str(scene))
        assert proc.returncode == 0

    def test_input_error(self, tmp_path):
        missing = tmp_path / "nope.json"
        proc = self.run_cli("validate", "--manifest", str(missing))
        assert proc.returncode == 1
        assert "error" in proc.stderr.lower()

    def test_corrupt_manifest_is_input_error(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        proc = self.run_cli("validate", "--manifest", str(bad))
        assert proc.returncode == 1

    def test_usage_error(self):
        proc = self.run_cli("run")  # missing required flags
        assert proc.returncode == 1
