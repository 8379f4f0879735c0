"""``hacbsr`` command line: synth-data, run, eval, verify-stability, plot-report.

Exit codes: 0 success, 2 bad arguments or malformed input, 3 I/O failure,
4 divergence, 5 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, io
from .dataset import load_manifest, synthesize_dataset
from .exceptions import DivergenceError, HACBSRError
from .metrics import MetricRecord, MetricReport, bicubic_upsample, kernel_psnr, psnr, ssim

log = logging.getLogger("hacbsr")

EXIT_OK, EXIT_ARGS, EXIT_IO, EXIT_DIVERGED, EXIT_VERIFY = 0, 2, 3, 4, 5


class UsageError(Exception):
    """Bad arguments or malformed input files (exit 2)."""


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("HACBSR_THREADS", "1")))
    except ValueError:
        raise UsageError("HACBSR_THREADS must be an integer")


# ---------------------------------------------------------------- synth-data

def cmd_synth_data(args) -> int:
    if args.n < 1 or args.hr_size < 8 or not args.scales:
        raise UsageError("--n >= 1, --hr-size >= 8 and at least one scale are required")
    if args.noise_sigma < 0:
        raise UsageError("--noise-sigma must be nonnegative")
    try:
        manifest = synthesize_dataset(args.n, args.hr_size, args.scales, args.noise_sigma,
                                      args.seed, args.out, mode=args.mode, bits=args.bits)
    except ValueError as exc:
        raise UsageError(str(exc))
    print(f"wrote {len(manifest['records'])} records to {args.out}")
    return EXIT_OK


# ----------------------------------------------------------------------- run

def _load_config(args):
    from .optimization import TrainConfig

    values = {}
    if args.config:
        try:
            values = io.read_json(args.config)
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {args.config} is not valid JSON: {exc}")
        if not isinstance(values, dict):
            raise UsageError("config file must hold a flat key-value object")
    overrides = {
        "n_iters": args.iters, "inner_steps": args.inner, "theta_h": args.theta_h,
        "seed": args.seed, "scale": args.scale, "dtype": args.dtype,
        "history_update_period": args.history_period,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    if args.no_contrastive_sampling:
        values["contrastive_sampling"] = False
    if args.no_history_contrast:
        values["history_contrast"] = False
    try:
        return TrainConfig.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}")


def _run_one(job: dict) -> dict:
    """Run one LR image into ``job['out']``; returns a summary row."""
    from .networks import save_checkpoint
    from .optimization import TrainConfig, run_hacbsr

    out = Path(job["out"])
    out.mkdir(parents=True, exist_ok=True)
    config = TrainConfig.from_dict(job["config"])
    y = io.read_image(job["lr"])
    started = _now()
    status, result, report = "completed", None, None
    try:
        result = run_hacbsr(y, config, threads=job.get("threads"))
        report = result.report
    except DivergenceError as exc:
        status, report = "diverged", exc.report
        log.error("%s", exc)

    files = {}
    metrics = {}
    if result is not None:
        files["sr"] = io.write_image(out / "sr.png", result.image)
        files["kernel"] = io.write_kernel_csv(out / "kernel.csv", result.kernel)
        st = result.state
        files["checkpoint"] = save_checkpoint(out / "checkpoint.bin", st.image_net, st.kernel_net,
                                              st.history_net, st.noise, report.completed_iters)
        files["kernel_history"] = st.kernel_history.write_csv(out / "kernel_history.csv")
        if job.get("hr"):
            x = io.read_image(job["hr"])
            metrics["psnr"] = psnr(result.image, x)
            metrics["ssim"] = ssim(result.image, x)
            metrics["bicubic_psnr"] = psnr(bicubic_upsample(y, config.scale), x)
        if job.get("kernel_true"):
            k_true = io.read_kernel_csv(job["kernel_true"])
            metrics["kernel_psnr"] = kernel_psnr(result.kernel, k_true)
            metrics["flat_kernel_psnr"] = kernel_psnr(np.full(k_true.shape, 1 / k_true.size),
                                                      k_true)
        if report.L_CIL:
            metrics["final_L_CIL"] = report.L_CIL[-1][-1]
    if report is not None:
        report.final_metrics = metrics
        files["report"] = io.write_json(out / "report.json", report.to_dict())
    manifest = {
        "run_id": job["run_id"],
        "status": status,
        "config": config.to_dict(),
        "sampling_config": _sampling_dict(config),
        "inputs": {k: job.get(k) for k in ("lr", "hr", "kernel_true")},
        "outputs": {k: Path(v).name for k, v in files.items()} | {"manifest": "manifest.json"},
        "started": started,
        "finished": _now(),
        "seed": config.seed,
        "version": __version__,
    }
    io.write_json(out / "manifest.json", manifest)
    return {"id": job["run_id"], "status": status, "scale": config.scale, **metrics}


def _sampling_dict(config) -> dict:
    import dataclasses

    return dataclasses.asdict(config.sampling_config())


def cmd_run(args) -> int:
    config = _load_config(args)
    src = Path(args.input)
    if not src.exists():
        raise FileNotFoundError(f"input {src} does not exist")
    workers = _workers()
    if src.is_dir():
        manifest = load_manifest(src)
        records = [r for r in manifest["records"]
                   if args.scale is None or r["scale"] == args.scale]
        if not records:
            raise UsageError(f"no records for scale {args.scale} in {src}")
        run_id = args.run_id or f"{src.name}-seed{config.seed}"
        root = Path(args.out) / run_id
        jobs = []
        for r in records:
            cfg = config.to_dict() | {"scale": r["scale"]}
            jobs.append({
                "run_id": f"{r['id']}_x{r['scale']}", "out": str(root / f"{r['id']}_x{r['scale']}"),
                "config": cfg, "lr": str(src / r["lr"]), "hr": str(src / r["hr"]),
                "kernel_true": str(src / r["kernel"]), "threads": 1,
            })
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                rows = list(pool.map(_run_one, jobs))
        else:
            rows = [_run_one(j) for j in jobs]
        _write_aggregate(root / "aggregate.csv", rows)
        print(f"{len(rows)} runs written under {root}")
    else:
        run_id = args.run_id or f"{src.stem}-x{config.scale}-seed{config.seed}"
        job = {"run_id": run_id, "out": str(Path(args.out) / run_id), "config": config.to_dict(),
               "lr": str(src), "hr": args.hr, "kernel_true": args.kernel, "threads": workers}
        rows = [_run_one(job)]
        print(f"run written to {job['out']}")
    if any(r["status"] == "diverged" for r in rows):
        return EXIT_DIVERGED
    return EXIT_OK


def _write_aggregate(path: Path, rows: list[dict]) -> None:
    cols = ["id", "scale", "status", "psnr", "ssim", "kernel_psnr", "bicubic_psnr",
            "flat_kernel_psnr", "final_L_CIL"]
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)
        done = [r for r in rows if r["status"] == "completed"]
        avg = {"id": "average", "scale": "", "status": f"{len(done)}/{len(rows)}"}
        for c in cols[3:]:
            vals = [r[c] for r in done if c in r]
            avg[c] = float(np.mean(vals)) if vals else ""
        w.writerow(avg)


# ---------------------------------------------------------------------- eval

def cmd_eval(args) -> int:
    root = Path(args.manifest)
    if not root.exists():
        raise UsageError(f"ground-truth manifest {root} not found")
    manifest = load_manifest(root)
    base = root if root.is_dir() else root.parent
    if args.baseline is None and args.sr_dir is None:
        raise UsageError("give --sr-dir or --baseline bicubic")
    report = MetricReport()
    for r in manifest["records"]:
        if args.scale is not None and r["scale"] != args.scale:
            continue
        hr_path, k_path = base / r["hr"], base / r["kernel"]
        if not hr_path.exists() or not k_path.exists():
            raise UsageError(f"missing ground truth for {r['id']} x{r['scale']}")
        x, k_true = io.read_image(hr_path), io.read_kernel_csv(k_path)
        if args.baseline == "bicubic":
            sr = bicubic_upsample(io.read_image(base / r["lr"]), r["scale"])
            k_est = np.full(k_true.shape, 1.0 / k_true.size)
        else:
            run = Path(args.sr_dir) / f"{r['id']}_x{r['scale']}"
            sr = io.read_image(run / "sr.png")
            k_est = io.read_kernel_csv(run / "kernel.csv")
        if sr.shape != x.shape:
            raise UsageError(f"SR shape {sr.shape} differs from HR {x.shape} for {r['id']}")
        report.add(MetricRecord(r["id"], r["scale"], psnr(sr, x), ssim(sr, x),
                                kernel_psnr(k_est, k_true)))
    if not report.records:
        raise UsageError("no records to evaluate")
    out = report.write_csv(args.out)
    avg = report.averages()
    print(f"{len(report.records)} images: PSNR {avg['psnr']:.2f} dB, SSIM {avg['ssim']:.4f}, "
          f"kernel PSNR {avg['kernel_psnr']:.2f} dB -> {out}")
    return EXIT_OK


# ---------------------------------------------------------- verify-stability

def cmd_verify_stability(args) -> int:
    from .stability import random_instance, verify_bounds

    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    grid = tuple(args.theta_grid)
    if not grid or any(t <= 0 for t in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
        raise UsageError("--theta-grid must be positive and strictly ascending")
    if args.image_size % args.scale:
        raise UsageError("--image-size must be divisible by --scale")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    verdicts = []
    for t in range(args.trials):
        sys_ = random_instance(rng, args.image_size, args.scale, args.feature_dim, grid,
                               consistent=args.consistent)
        rep = verify_bounds(sys_)
        rep.write_csv(out / f"trial_{t:03d}.csv")
        verdicts.append(f"trial {t}: {rep.verdict()}")
    (out / "verdict.txt").write_text("\n".join(verdicts) + "\n")
    failed = [v for v in verdicts if ": FAIL" in v]
    print(f"{args.trials - len(failed)}/{args.trials} trials passed -> {out}")
    for v in failed:
        print(v, file=sys.stderr)
    return EXIT_VERIFY if failed else EXIT_OK


# --------------------------------------------------------------- plot-report

def _read_stability_csv(path: Path):
    rows = []
    with path.open() as fh:
        for row in csv.DictReader(fh):
            if row["theta"].startswith("#"):
                continue
            rows.append((float(row["theta"]), float(row["C"])))
    return rows


def cmd_plot_report(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from . import plots

    if not (args.report or args.history or args.stability):
        raise UsageError("give at least one of --report, --history, --stability")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if args.report:
        path = Path(args.report)
        if not path.exists():
            raise FileNotFoundError(f"report {path} not found")
        try:
            rep = io.read_json(path)
            traces = {k: rep[k] for k in ("L_KL", "L_C", "L_CIL", "contrast", "alpha", "omega")}
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise UsageError(f"malformed run report {path}: {exc}")
        if not traces["L_KL"]:
            raise UsageError(f"run report {path} has an empty trace")
        written += plots.run_report_figures(traces, out, plt)
    if args.history:
        path = Path(args.history)
        if not path.exists():
            raise FileNotFoundError(f"history {path} not found")
        with path.open() as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise UsageError(f"history file {path} is empty")
        try:
            sig = np.array([[float(r["sigma1"]), float(r["sigma2"]), float(r["rho"])] for r in rows])
        except (KeyError, ValueError) as exc:
            raise UsageError(f"malformed history file {path}: {exc}")
        written.append(plots.kernel_scatter(sig, out / "kernel_distribution.png", plt, args.seed))
    if args.stability:
        path = Path(args.stability)
        if not path.exists():
            raise FileNotFoundError(f"stability report {path} not found")
        try:
            rows = _read_stability_csv(path)
        except (KeyError, ValueError) as exc:
            raise UsageError(f"malformed stability report {path}: {exc}")
        if not rows or any(math.isnan(c) for _, c in rows):
            raise UsageError(f"stability report {path} has no solved theta values")
        written.append(plots.stability_curve(rows, out / "stability_C.png", plt))
    for p in written:
        print(p)
    return EXIT_OK


# ---------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hacbsr", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-data", help="generate a synthetic HR/LR/kernel dataset")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--hr-size", type=int, default=64)
    s.add_argument("--scales", type=_ints, default=[2])
    s.add_argument("--noise-sigma", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--mode", choices=["strided", "bicubic"], default="strided")
    s.add_argument("--bits", type=int, choices=[8, 16], default=8)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth_data)

    s = sub.add_parser("run", help="blind SR of one LR image or a dataset directory")
    s.add_argument("--input", required=True, help="LR image file or dataset directory")
    s.add_argument("--scale", type=int)
    s.add_argument("--iters", type=int, help="outer iterations N")
    s.add_argument("--inner", type=int, help="inner steps P")
    s.add_argument("--theta-h", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--dtype", choices=["float32", "float64"])
    s.add_argument("--history-period", type=int, help="inner steps between EMA updates")
    s.add_argument("--no-contrastive-sampling", action="store_true")
    s.add_argument("--no-history-contrast", action="store_true")
    s.add_argument("--config", help="flat JSON file of TrainConfig fields")
    s.add_argument("--hr", help="ground-truth HR image for metrics (single image)")
    s.add_argument("--kernel", help="ground-truth kernel CSV for metrics (single image)")
    s.add_argument("--run-id")
    s.add_argument("--out", default="out")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("eval", help="PSNR/SSIM/kernel PSNR against a dataset manifest")
    s.add_argument("--manifest", required=True, help="dataset directory or manifest.json")
    s.add_argument("--sr-dir", help="run directory holding <id>_x<s>/sr.png and kernel.csv")
    s.add_argument("--baseline", choices=["bicubic"])
    s.add_argument("--scale", type=int)
    s.add_argument("--out", default="eval.csv")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("verify-stability", help="check the linearised stability bounds")
    s.add_argument("--image-size", type=int, default=16)
    s.add_argument("--scale", type=int, default=2)
    s.add_argument("--feature-dim", type=int, default=512)
    s.add_argument("--theta-grid", type=_floats, default=[1e-2, 1e-1, 1.0, 1e1, 1e2])
    s.add_argument("--trials", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--consistent", action="store_true", help="set y = A x_h")
    s.add_argument("--out", default="stability")
    s.set_defaults(func=cmd_verify_stability)

    s = sub.add_parser("plot-report", help="render PNG plots from run or stability reports")
    s.add_argument("--report", help="report.json of a run")
    s.add_argument("--history", help="kernel_history.csv of a run")
    s.add_argument("--stability", help="trial CSV from verify-stability")
    s.add_argument("--seed", type=int, default=0, help="seed of the random-sampling reference")
    s.add_argument("--out", default="plots")
    s.set_defaults(func=cmd_plot_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except (OSError, FileNotFoundError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (HACBSRError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGS


if __name__ == "__main__":
    sys.exit(main())
