import json
import shutil

import numpy as np
import pytest
from click.testing import CliRunner

from guided_inpaint.cli import main
from guided_inpaint.data import load_mask, save_image
from guided_inpaint.mixture import GaussianMixtureModel

from test_pipeline import image_patterns

SIZE = 16


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture()
def workspace(tmp_path):
    means = image_patterns(SIZE)
    gmm = GaussianMixtureModel(
        weights=np.array([0.5, 0.5]), means=means, sigmas=np.array([0.05, 0.05])
    )
    gmm.save(tmp_path / "gmm.json")
    save_image(means[0], tmp_path / "gt.png")
    return tmp_path


def run_args(ws, extra=()):
    return [
        "run",
        "--image", str(ws / "gt.png"),
        "--mask", "half",
        "--labels", "0",
        "--T", "250",
        "--stages", "50,50,25,25,5",
        "--t-stop-comp", "124",
        "--i-guid", "1",
        "--i-inp", "1",
        "--candidates", "2",
        "--seed", "0",
        "--gmm", str(ws / "gmm.json"),
        "--out", str(ws / "data"),
        *extra,
    ]


class TestMakeMask:
    def test_writes_mask(self, runner, tmp_path):
        out = tmp_path / "mask.png"
        res = runner.invoke(main, ["make-mask", "--kind", "half", "--height", "8",
                                   "--width", "8", "--out", str(out)])
        assert res.exit_code == 0, res.output
        mask = load_mask(out)
        assert mask.sum() == 32

    def test_odd_size_exit_2(self, runner, tmp_path):
        res = runner.invoke(main, ["make-mask", "--kind", "half", "--height", "7",
                                   "--width", "8", "--out", str(tmp_path / "m.png")])
        assert res.exit_code == 2


class TestRun:
    def test_end_to_end_auto(self, runner, workspace):
        res = runner.invoke(main, run_args(workspace))
        assert res.exit_code == 0, res.output
        assert "result.png" in res.output
        data = workspace / "data" / "runs"
        (run_dir,) = list(data.iterdir())
        assert (run_dir / "result.png").exists()
        metrics = json.loads((run_dir / "metrics.json").read_text())
        assert metrics["psnr_full"] > 0

    def test_wait_then_select_and_metrics(self, runner, workspace):
        res = runner.invoke(main, run_args(workspace, ["--select", "wait"]))
        assert res.exit_code == 0, res.output
        data_root = workspace / "data"
        (run_dir,) = list((data_root / "runs").iterdir())
        run_id = run_dir.name

        res = runner.invoke(main, ["candidates", run_id, "--data-root", str(data_root)])
        assert res.exit_code == 0, res.output
        assert "c000" in res.output and "c001" in res.output

        res = runner.invoke(main, ["select", run_id, "auto", "--data-root", str(data_root)])
        assert res.exit_code == 0, res.output

        res = runner.invoke(main, ["metrics", run_id, "--data-root", str(data_root)])
        assert res.exit_code == 0, res.output
        assert "psnr_unknown" in res.output

    def test_missing_backend_exit_2(self, runner, workspace):
        args = [a for a in run_args(workspace)]
        i = args.index("--gmm")
        del args[i : i + 2]
        res = runner.invoke(main, args)
        assert res.exit_code == 2

    def test_runtime_failure_exit_3(self, runner, workspace):
        res = runner.invoke(main, run_args(workspace, ["--select", "wait"]))
        assert res.exit_code == 0
        data_root = workspace / "data"
        (run_dir,) = list((data_root / "runs").iterdir())
        (run_dir / "candidates" / "c000" / "preview.png").write_bytes(b"not a png")
        res = runner.invoke(main, ["select", run_dir.name, "auto", "--data-root", str(data_root)])
        assert res.exit_code == 3

    def test_deleted_candidates_exit_2(self, runner, workspace):
        res = runner.invoke(main, run_args(workspace, ["--select", "wait"]))
        assert res.exit_code == 0
        data_root = workspace / "data"
        (run_dir,) = list((data_root / "runs").iterdir())
        shutil.rmtree(run_dir / "candidates")
        res = runner.invoke(main, ["select", run_dir.name, "auto", "--data-root", str(data_root)])
        assert res.exit_code == 2


class TestTrainToy:
    def test_writes_checkpoints(self, runner, tmp_path):
        res = runner.invoke(main, [
            "train-toy", "--n", "64", "--size", "8", "--T", "50",
            "--steps", "200", "--clf-steps", "300", "--seed", "0",
            "--out", str(tmp_path / "toy"),
        ])
        assert res.exit_code == 0, res.output
        assert (tmp_path / "toy" / "denoiser.npz").exists()
        assert (tmp_path / "toy" / "classifier.npz").exists()
        assert (tmp_path / "toy" / "dataset.tsv").exists()
        assert "accuracy" in res.output
