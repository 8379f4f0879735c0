"""End-to-end blind SR on a small synthetic image, through the CLI.

Generates one 64x64 terrain image at scale 2, runs 30 outer iterations with
3 inner steps, evaluates against the bicubic baseline and renders the
training plots. Takes well under a minute on one CPU core.

    python demos/02_desk_run.py
"""

from pathlib import Path

from hacbsr import io
from hacbsr.cli import main

OUT = Path(__file__).parent / "output" / "desk"
data, runs = OUT / "data", OUT / "runs"

main(["synth-data", "--n", "1", "--hr-size", "64", "--scales", "2", "--noise-sigma", "0.01",
      "--seed", "0", "--out", str(data)])
rec = io.read_json(data / "manifest.json")["records"][0]

main(["run", "--input", str(data), "--iters", "30", "--inner", "3", "--theta-h", "0.4",
      "--seed", "0", "--out", str(runs), "--run-id", "hacbsr"])
main(["eval", "--manifest", str(data), "--sr-dir", str(runs / "hacbsr"),
      "--out", str(OUT / "eval_hacbsr.csv")])
main(["eval", "--manifest", str(data), "--baseline", "bicubic",
      "--out", str(OUT / "eval_bicubic.csv")])

run_dir = runs / "hacbsr" / f"{rec['id']}_x2"
main(["plot-report", "--report", str(run_dir / "report.json"),
      "--history", str(run_dir / "kernel_history.csv"), "--out", str(OUT / "plots")])

metrics = io.read_json(run_dir / "report.json")["final_metrics"]
print(f"SR {metrics['psnr']:.2f} dB vs bicubic {metrics['bicubic_psnr']:.2f} dB; "
      f"kernel {metrics['kernel_psnr']:.2f} dB vs flat {metrics['flat_kernel_psnr']:.2f} dB")
print("At this budget the SR image only ties bicubic; with --iters 300 --inner 5 the same "
      "instance reached about +0.7 dB over bicubic.")
