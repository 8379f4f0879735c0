import csv
import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from hacbsr import io
from hacbsr.cli import main
from hacbsr.networks import load_checkpoint

SMALL = {"unet_width": 8, "kernel_hidden": 64, "z_k_dim": 16, "feature_dim": 64}


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(SMALL))
    return str(path)


@pytest.fixture
def dataset(tmp_path):
    out = tmp_path / "data"
    assert main(["synth-data", "--n", "3", "--hr-size", "32", "--scales", "2", "--noise-sigma",
                 "0.01", "--seed", "5", "--out", str(out)]) == 0
    return out


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestSynthData:
    def test_two_records(self, tmp_path):
        out = tmp_path / "d"
        assert main(["synth-data", "--n", "2", "--hr-size", "64", "--scales", "2", "--seed", "7",
                     "--out", str(out)]) == 0
        assert len(io.read_json(out / "manifest.json")["records"]) == 2

    def test_same_seed_same_bytes(self, tmp_path):
        for name in ("a", "b"):
            assert main(["synth-data", "--n", "2", "--hr-size", "32", "--seed", "7",
                         "--out", str(tmp_path / name)]) == 0
        files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.*"))
        assert files_a
        for rel in files_a:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_three_scales(self, tmp_path):
        out = tmp_path / "d"
        assert main(["synth-data", "--n", "5", "--hr-size", "24", "--scales", "2,3,4",
                     "--out", str(out)]) == 0
        assert len(list(out.glob("x*/lr/*.png"))) == 15

    def test_argument_errors(self, tmp_path, capsys):
        assert main(["synth-data", "--n", "0", "--out", str(tmp_path / "d")]) == 2
        assert "error" in capsys.readouterr().err
        assert main(["synth-data", "--n", "1", "--hr-size", "33", "--out", str(tmp_path)]) == 2
        assert main(["synth-data", "--scales", "x", "--n", "1", "--out", str(tmp_path)]) == 2
        assert main(["synth-data"]) == 2

    def test_io_error(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert main(["synth-data", "--n", "1", "--hr-size", "16",
                     "--out", str(blocker / "sub")]) == 3


class TestRun:
    def run_single(self, dataset, tmp_path, small_config, *extra):
        rec = io.read_json(dataset / "manifest.json")["records"][0]
        args = ["run", "--input", str(dataset / rec["lr"]), "--iters", "5", "--inner", "2",
                "--seed", "0", "--config", small_config, "--out", str(tmp_path / "runs"),
                "--hr", str(dataset / rec["hr"]), "--kernel", str(dataset / rec["kernel"]), *extra]
        return main(args)

    def test_single_artifacts(self, dataset, tmp_path, small_config):
        assert self.run_single(dataset, tmp_path, small_config, "--run-id", "one") == 0
        d = tmp_path / "runs" / "one"
        assert io.read_image(d / "sr.png").shape == (32, 32)
        k = io.read_kernel_csv(d / "kernel.csv")
        assert k.shape == (11, 11) and abs(k.sum() - 1) < 1e-6
        rep = io.read_json(d / "report.json")
        assert rep["status"] == "completed" and len(rep["L_CIL"]) == 5
        assert set(rep["final_metrics"]) >= {"psnr", "ssim", "kernel_psnr", "bicubic_psnr"}
        assert load_checkpoint(d / "checkpoint.bin")["iteration"] == 5
        man = io.read_json(d / "manifest.json")
        for name in man["outputs"].values():
            assert (d / name).exists()
        assert man["config"]["unet_width"] == 8 and man["config"]["n_iters"] == 5
        assert man["seed"] == 0 and man["version"] and man["sampling_config"]["n_proposals"] == 16
        written = {p.name for p in d.iterdir()}
        assert written == set(man["outputs"].values())

    def test_theta_changes_contrast_trace(self, dataset, tmp_path, small_config):
        traces = {}
        for theta in ("0", "0.4"):
            rid = f"t{theta}"
            assert self.run_single(dataset, tmp_path, small_config, "--theta-h", theta,
                                   "--run-id", rid) == 0
            traces[theta] = io.read_json(tmp_path / "runs" / rid / "report.json")["contrast"]
        assert all(c == 0 for row in traces["0"] for c in row)
        assert any(c > 0 for row in traces["0.4"] for c in row)

    def test_deterministic_outputs(self, dataset, tmp_path, small_config):
        for rid in ("a", "b"):
            assert self.run_single(dataset, tmp_path, small_config, "--run-id", rid) == 0
        a, b = tmp_path / "runs" / "a", tmp_path / "runs" / "b"
        for name in ("sr.png", "kernel.csv", "kernel_history.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_dataset_run(self, dataset, tmp_path, small_config):
        out = tmp_path / "runs"
        assert main(["run", "--input", str(dataset), "--iters", "2", "--inner", "1",
                     "--config", small_config, "--out", str(out), "--run-id", "ds"]) == 0
        root = out / "ds"
        dirs = sorted(p for p in root.iterdir() if p.is_dir())
        assert len(dirs) == 3 and all((d / "sr.png").exists() for d in dirs)
        rows = read_rows(root / "aggregate.csv")
        assert len(rows) == 4 and rows[-1]["id"] == "average"
        assert float(rows[-1]["psnr"]) == pytest.approx(
            np.mean([float(r["psnr"]) for r in rows[:-1]]), abs=1e-9)

    def test_divergence_exit_code(self, dataset, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps(SMALL | {"divergence_threshold": 1e-12}))
        assert self.run_single(dataset, tmp_path, str(cfg), "--run-id", "div") == 4
        d = tmp_path / "runs" / "div"
        assert io.read_json(d / "report.json")["status"] == "diverged"
        assert io.read_json(d / "manifest.json")["status"] == "diverged"

    def test_bad_config(self, dataset, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"no_such_key": 1}))
        assert self.run_single(dataset, tmp_path, str(cfg)) == 2
        cfg.write_text("{not json")
        assert self.run_single(dataset, tmp_path, str(cfg)) == 2

    def test_missing_input(self, tmp_path):
        assert main(["run", "--input", str(tmp_path / "nope.png"), "--out", str(tmp_path)]) == 3


class TestEval:
    def test_ground_truth_copies(self, dataset, tmp_path):
        sr = tmp_path / "sr"
        for r in io.read_json(dataset / "manifest.json")["records"]:
            d = sr / f"{r['id']}_x{r['scale']}"
            d.mkdir(parents=True)
            shutil.copy(dataset / r["hr"], d / "sr.png")
            shutil.copy(dataset / r["kernel"], d / "kernel.csv")
        out = tmp_path / "e.csv"
        assert main(["eval", "--manifest", str(dataset), "--sr-dir", str(sr),
                     "--out", str(out)]) == 0
        avg = read_rows(out)[-1]
        assert float(avg["psnr"]) == 100.0 and float(avg["ssim"]) == pytest.approx(1.0, abs=1e-12)
        assert float(avg["kernel_psnr"]) == 100.0

    def test_bicubic_baseline_and_averages(self, dataset, tmp_path):
        out = tmp_path / "b.csv"
        assert main(["eval", "--manifest", str(dataset / "manifest.json"), "--baseline", "bicubic",
                     "--out", str(out)]) == 0
        rows = read_rows(out)
        assert len(rows) == 4
        for col in ("psnr", "ssim", "kernel_psnr"):
            vals = [float(r[col]) for r in rows[:-1]]
            assert all(np.isfinite(vals))
            assert float(rows[-1][col]) == pytest.approx(np.mean(vals), abs=1e-9)

    def test_missing_ground_truth(self, dataset, tmp_path):
        assert main(["eval", "--manifest", str(tmp_path / "none"), "--baseline", "bicubic"]) == 2
        rec = io.read_json(dataset / "manifest.json")["records"][0]
        (dataset / rec["hr"]).unlink()
        assert main(["eval", "--manifest", str(dataset), "--baseline", "bicubic",
                     "--out", str(tmp_path / "x.csv")]) == 2


class TestVerifyStability:
    def test_defaults_pass(self, tmp_path):
        out = tmp_path / "st"
        assert main(["verify-stability", "--out", str(out)]) == 0
        assert len(list(out.glob("trial_*.csv"))) == 20
        assert (out / "verdict.txt").read_text().count("PASS") == 20

    def test_consistent_zero_lhs(self, tmp_path):
        out = tmp_path / "st"
        assert main(["verify-stability", "--consistent", "--trials", "2", "--out", str(out)]) == 0
        for path in out.glob("trial_*.csv"):
            rows = [r for r in read_rows(path) if not r["theta"].startswith("#")]
            assert all(float(r["lhs"]) < 1e-9 for r in rows)

    def test_single_theta(self, tmp_path):
        out = tmp_path / "st"
        assert main(["verify-stability", "--theta-grid", "1", "--trials", "2",
                     "--out", str(out)]) == 0
        text = (out / "trial_000.csv").read_text()
        assert "monotone_ok=None" in text and "# PASS" in text

    def test_singular_instances_exit_5(self, tmp_path):
        out = tmp_path / "st"
        assert main(["verify-stability", "--feature-dim", "128", "--trials", "1",
                     "--out", str(out)]) == 5
        assert "FAIL" in (out / "verdict.txt").read_text()

    def test_bad_grid(self, tmp_path):
        assert main(["verify-stability", "--theta-grid", "1,0.1", "--out", str(tmp_path)]) == 2


class TestPlotReport:
    @pytest.fixture
    def run_dir(self, dataset, tmp_path, small_config):
        rec = io.read_json(dataset / "manifest.json")["records"][0]
        assert main(["run", "--input", str(dataset / rec["lr"]), "--iters", "3", "--inner", "2",
                     "--config", small_config, "--out", str(tmp_path / "r"),
                     "--run-id", "p"]) == 0
        return tmp_path / "r" / "p"

    def test_run_plots(self, run_dir, tmp_path):
        out = tmp_path / "plots"
        assert main(["plot-report", "--report", str(run_dir / "report.json"), "--history",
                     str(run_dir / "kernel_history.csv"), "--out", str(out)]) == 0
        for name in ("loss_curves.png", "alpha_trace.png", "meta_weights.png",
                     "kernel_distribution.png"):
            assert (out / name).stat().st_size > 0

    def test_stability_plot(self, tmp_path):
        st = tmp_path / "st"
        assert main(["verify-stability", "--trials", "1", "--out", str(st)]) == 0
        rows = [r for r in read_rows(st / "trial_000.csv") if not r["theta"].startswith("#")]
        Cs = [float(r["C"]) for r in rows]
        assert all(b <= a + 1e-12 for a, b in zip(Cs, Cs[1:]))
        out = tmp_path / "plots"
        assert main(["plot-report", "--stability", str(st / "trial_000.csv"),
                     "--out", str(out)]) == 0
        assert (out / "stability_C.png").stat().st_size > 0

    def test_empty_trace(self, run_dir, tmp_path, capsys):
        rep = io.read_json(run_dir / "report.json")
        rep["L_KL"] = []
        bad = tmp_path / "empty.json"
        bad.write_text(json.dumps(rep))
        assert main(["plot-report", "--report", str(bad), "--out", str(tmp_path / "o")]) == 2
        assert "empty" in capsys.readouterr().err
        (tmp_path / "garbage.json").write_text("[1, 2]")
        assert main(["plot-report", "--report", str(tmp_path / "garbage.json"),
                     "--out", str(tmp_path / "o")]) == 2
        empty_hist = tmp_path / "h.csv"
        empty_hist.write_text("")
        assert main(["plot-report", "--history", str(empty_hist),
                     "--out", str(tmp_path / "o")]) == 2


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "hacbsr.cli", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip()
    exe = shutil.which("hacbsr")
    if exe:
        assert subprocess.run([exe, "--help"], capture_output=True).returncode == 0
