import json

import numpy as np
import numpy.testing as npt
import pytest

from catp import harness
from catp.errors import ConfigParseError, InvalidArgumentError
from catp.models import PruneThresholds
from catp.netpbm import read_image, write_pgm, write_ppm

ARTIFACTS = ["prediction.pgm", "mask_2.pgm", "mask_3.pgm", "mask_4.pgm",
             "heatmap_2.pgm", "heatmap_3.pgm", "heatmap_4.pgm", "report.json"]


@pytest.fixture
def image_file(tmp_path, noise_image):
    path = tmp_path / "noise.ppm"
    write_ppm(path, noise_image)
    return str(path)


def grey(path):
    return np.round(read_image(path)[:, :, 0] * 255).astype(int)


class TestRun:
    def test_writes_every_artifact(self, run_config, image_file, tmp_path):
        out = tmp_path / "run"
        report = harness.cmd_run(run_config, image_file, str(out))
        assert sorted(p.name for p in out.iterdir()) == sorted(ARTIFACTS)
        assert grey(out / "prediction.pgm").shape == (64, 64)
        assert grey(out / "mask_2.pgm").shape == (4, 4)
        assert json.loads((out / "report.json").read_text()) == report

    def test_masks_agree_with_report(self, run_config, image_file, tmp_path):
        config = run_config.model_copy(update={"thresholds": PruneThresholds(theta_d=0.45, theta_u=0.55)})
        out = tmp_path / "run"
        report = harness.cmd_run(config, image_file, str(out))
        patches = [c["patches"] for c in report["stage_counts"]]
        assert patches == sorted(patches, reverse=True)
        for stage in (2, 3, 4):
            mask = grey(out / f"mask_{stage}.pgm")
            assert set(np.unique(mask)) <= {0, 255}
            assert int((mask == 255).sum()) == patches[stage - 1]
            assert report["records"][stage - 2]["surviving"] == patches[stage - 1]

    def test_no_prune_masks_are_full(self, run_config, image_file, tmp_path):
        config = run_config.model_copy(update={"thresholds": PruneThresholds(theta_d=0.0, theta_u=1.0)})
        out = tmp_path / "run"
        report = harness.cmd_run(config, image_file, str(out))
        for stage in (2, 3, 4):
            npt.assert_array_equal(grey(out / f"mask_{stage}.pgm"), np.full((4, 4), 255))
        assert {c["tokens"] for c in report["stage_counts"]} == {17}

    def test_heatmap_pixels_are_rounded_scores(self, run_config, desk_model, noise_image, image_file, tmp_path):
        out = tmp_path / "run"
        harness.cmd_run(run_config, image_file, str(out))
        scores = desk_model.forward(read_image(image_file), run_config.thresholds).records[0].scores
        expected = np.floor(255 * scores + 0.5).astype(int).reshape(4, 4)
        npt.assert_array_equal(grey(out / "heatmap_2.pgm"), expected)

    def test_identical_runs_are_byte_identical(self, run_config, image_file, tmp_path):
        harness.cmd_run(run_config, image_file, str(tmp_path / "a"))
        harness.cmd_run(run_config, image_file, str(tmp_path / "b"))
        for name in ARTIFACTS:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_synthetic_input_when_no_image(self, run_config, tmp_path):
        report = harness.cmd_run(run_config, None, str(tmp_path / "run"))
        assert report["prediction"]["height"] == 64

    def test_wrong_image_size(self, run_config, tmp_path):
        path = tmp_path / "small.pgm"
        write_pgm(path, np.zeros((32, 32)))
        with pytest.raises(InvalidArgumentError):
            harness.cmd_run(run_config, str(path), str(tmp_path / "run"))


class TestSweep:
    def test_singleton_matches_run(self, run_config, image_file, tmp_path):
        report = harness.cmd_run(run_config, image_file, str(tmp_path / "run"))
        payload = harness.cmd_sweep(run_config, "0.3/0.7", image_file, str(tmp_path / "sweep"))
        assert len(payload["entries"]) == 1
        assert payload["entries"][0]["report"] == report["cost"]
        assert json.loads((tmp_path / "sweep" / "sweep.json").read_text()) == payload

    def test_table_grid(self, run_config, tmp_path):
        payload = harness.cmd_sweep(run_config, harness_grid(), None, str(tmp_path))
        assert [(e["theta_d"], e["theta_u"]) for e in payload["entries"]] == [
            (0.2, 0.8), (0.25, 0.75), (0.3, 0.7), (0.35, 0.65), (0.4, 0.6)]

    def test_empty_grid(self, run_config, tmp_path):
        assert harness.cmd_sweep(run_config, "", None, str(tmp_path)) == {"entries": []}

    def test_rejects_stage_thresholds(self, run_config, tmp_path):
        staged = run_config.model_copy(update={"thresholds": PruneThresholds(
            stage_overrides=((0.2, 0.8), (0.3, 0.7), (0.4, 0.6)))})
        with pytest.raises(InvalidArgumentError, match="stage_thresholds"):
            harness.cmd_sweep(staged, "0.3/0.7", None, str(tmp_path))

    def test_malformed_grid(self):
        with pytest.raises(ConfigParseError):
            harness.parse_grid("0.3-0.7")


def harness_grid():
    return "0.2/0.8,0.25/0.75,0.3/0.7,0.35/0.65,0.4/0.6"


class TestStagesAndCompare:
    def test_layouts(self, run_config, tmp_path):
        payload = harness.cmd_stages(run_config, "2;2,4;2,4,6", None, str(tmp_path))
        first, second, third = payload["entries"]
        assert first["report"] is not None and len(first["stage_counts"]) == 2
        assert second["report"] is None and second["error"]
        assert len(third["stage_counts"]) == 4
        assert (tmp_path / "stages.json").exists()

    def test_parse_layouts(self):
        assert harness.parse_layouts("2;2,4; ") == [[2], [2, 4], []]

    def test_compare(self, run_config, tmp_path):
        payload = harness.cmd_compare(run_config, None, str(tmp_path))
        assert [e["compensation_mode"] for e in payload["entries"]] == ["none", "average", "weighted"]
        assert all(c["prototypes"] == 0 for c in payload["entries"][0]["stage_counts"])


class TestGradcheck:
    def test_passes_on_desk_config(self, run_config):
        report = harness.cmd_gradcheck(run_config, draws=100)
        assert report["passed"]
        assert report["max_relative_error"] < 1e-5

    def test_jacobian_shrinks_with_temperature(self, run_config):
        norms = [s["jacobian_norm"] for s in harness.cmd_gradcheck(run_config, draws=1)["tau_scaling"]]
        assert norms[0] > norms[1] > norms[2] > 0


class TestMae:
    def test_identical(self):
        x = np.random.default_rng(0).random((8, 8))
        assert harness.compute_mae(x, x) == 0.0

    def test_zeros_against_ones(self):
        assert harness.compute_mae(np.zeros((4, 4)), np.ones((4, 4))) == 1.0

    def test_checkerboard_against_half(self):
        board = (np.indices((6, 6)).sum(axis=0) % 2).astype(float)
        assert harness.compute_mae(board, np.full((6, 6), 0.5)) == 0.5

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            harness.compute_mae(np.zeros((4, 4)), np.zeros((4, 5)))

    def test_from_files(self, tmp_path):
        write_pgm(tmp_path / "p.pgm", np.zeros((4, 4)))
        write_pgm(tmp_path / "r.pgm", np.ones((4, 4)))
        assert harness.cmd_mae(str(tmp_path / "p.pgm"), str(tmp_path / "r.pgm")) == 1.0


class TestBatch:
    def test_reports_follow_input_order(self, run_config, image_file, tmp_path, disk):
        second = tmp_path / "disk.ppm"
        write_ppm(second, disk)
        reports = harness.cmd_batch(run_config, [image_file, str(second)], str(tmp_path / "batch"), workers=2)
        assert len(reports) == 2
        single = harness.cmd_run(run_config, str(second), str(tmp_path / "single"))
        assert reports[1] == single
        assert (tmp_path / "batch" / "noise" / "report.json").exists()
        assert (tmp_path / "batch" / "disk" / "prediction.pgm").exists()

    def test_same_stem_in_different_folders(self, run_config, noise_image, disk, tmp_path):
        (tmp_path / "a").mkdir()
        (tmp_path / "b").mkdir()
        write_ppm(tmp_path / "a" / "img.ppm", noise_image)
        write_ppm(tmp_path / "b" / "img.ppm", disk)
        paths = [str(tmp_path / "a" / "img.ppm"), str(tmp_path / "b" / "img.ppm")]
        out = tmp_path / "batch"
        reports = harness.cmd_batch(run_config, paths, str(out), workers=2)
        assert sorted(p.name for p in out.iterdir()) == ["000_img", "001_img"]
        for name, report in zip(["000_img", "001_img"], reports):
            saved = json.loads((out / name / "report.json").read_text())
            assert saved["stage_counts"] == report["stage_counts"]
            assert saved["prediction"] == report["prediction"]
        assert reports[0]["prediction"] != reports[1]["prediction"]

    def test_batch_dirs(self):
        assert harness.batch_dirs(["x/a.ppm", "y/b.ppm"]) == ["a", "b"]
        assert harness.batch_dirs(["x/a.ppm", "y/a.pgm"]) == ["000_a", "001_a"]
