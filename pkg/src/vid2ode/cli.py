"""Command-line interface: synth, discover, baseline, ablate, report, gradcheck.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def configure_threads(n: int | None) -> int:
    """Size XLA's CPU thread pool; must run before jax is imported.

    Eigen's multi-threaded kernels split reductions by thread count, so they are
    always disabled: results are then bit-identical for every ``n``.
    """
    env = os.environ.get("VID2ODE_THREADS")
    if env:
        n = int(env)
    n = n or os.cpu_count() or 1
    if "jax" not in sys.modules:
        flags = os.environ.get("XLA_FLAGS", "")
        if "intra_op_parallelism_threads" not in flags:
            flags += f" --xla_cpu_multi_thread_eigen=false intra_op_parallelism_threads={n}"
            os.environ["XLA_FLAGS"] = flags.strip()
    return n


def _log(verbose: bool):
    return (lambda msg: print(msg, file=sys.stderr, flush=True)) if verbose else None


def load_config(path, system: str | None, desk: bool, overrides: dict | None = None):
    from .discovery import PRESETS, TrainConfig, desk_preset

    doc = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise UsageError(f"config not found: {p}")
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as err:
            raise UsageError(f"config {p} is not valid JSON: {err}") from err
        if not isinstance(doc, dict):
            raise UsageError(f"config {p} must be a JSON object")
    doc.update(overrides or {})
    try:
        if system in PRESETS:
            base = desk_preset(system) if desk else TrainConfig.preset(system)
            merged = {**base.to_dict(), **doc}
            return TrainConfig.from_dict(merged)
        return TrainConfig.from_dict(doc)
    except (KeyError, TypeError, ValueError) as err:
        raise UsageError(f"invalid config: {err}") from err


# --- output helpers ------------------------------------------------------------

class RunDir:
    """Output directory carrying an ``.incomplete`` marker until the run finishes."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.marker = self.path / ".incomplete"
        self.marker.write_text("run in progress or failed\n")

    def done(self):
        self.marker.unlink(missing_ok=True)

    def __truediv__(self, name):
        return self.path / name


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)


def write_loss_trace(path, trace):
    keys = sorted({k for row in trace for k in row} - {"stage", "epoch"})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "epoch", *keys])
        for row in trace:
            w.writerow([row["stage"], row["epoch"], *[row.get(k, "") for k in keys]])


def save_png(path, img):
    import numpy as np
    from PIL import Image

    a = np.clip(np.asarray(img, float), 0, 1)
    Image.fromarray(np.round(a * 255).astype(np.uint8)).save(path)


def plot_trajectories(path, report, ground_truth=None, max_videos: int = 4):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np

    ev = report.evaluation
    phys = report.physical
    if ev is not None:
        phys = ev["alpha"] * np.asarray(ev["signs"]) * phys + np.asarray(ev["translation"])
    n = min(max_videos, phys.shape[0])
    fig, axes = plt.subplots(n, 1, figsize=(7, 2.2 * n), squeeze=False)
    t = np.arange(phys.shape[1]) * report.config["dt"]
    for i in range(n):
        ax = axes[i, 0]
        for k, name in enumerate(("x", "y")):
            if ground_truth is not None:
                ax.plot(t, ground_truth.physical[i, :, k], color=f"C{k}", lw=1.5, label=f"{name} true")
            ax.plot(t, phys[i, :, k], color=f"C{k}", ls="--", lw=1.2, label=f"{name} learned")
        ax.set_ylabel(f"video {i}")
    axes[0, 0].legend(loc="upper right", ncol=4, fontsize=7)
    axes[-1, 0].set_xlabel("t")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def save_report_outputs(out: RunDir, report, dataset_dir, resolved: dict):
    """Everything a finished run leaves behind, with scoring when ground truth exists."""
    from .checkpoint import save_checkpoint
    from .discovery import decoder_images, equation_names
    from .dynamics import ConfigurationError, get_system
    from .library import write_coefficients_csv
    from .video import read_ground_truth

    gt = None
    try:
        gt = read_ground_truth(dataset_dir)
    except Exception:  # noqa: BLE001 - datasets without ground truth are valid
        gt = None
    try:
        system = get_system(report.system_name)
    except ConfigurationError:
        system = None
    if system is not None:
        report.evaluate(system, gt)
    names = equation_names(report.order)
    for stage, xi in report.xi_stages.items():
        write_coefficients_csv(out / f"coefficients_{stage}.csv", report.lib, xi, names)
    write_coefficients_csv(out / "coefficients_final.csv", report.lib, report.xi, names)
    write_loss_trace(out / "loss_trace.csv", report.loss_trace)
    if report.decoder is not None:
        content, weight, bg = decoder_images(report.decoder)
        save_png(out / "sprite.png", content)
        save_png(out / "sprite_mask.png", weight)
        save_png(out / "background.png", bg)
    plot_trajectories(out / "trajectories.png", report, gt)
    arrays = {"coords": report.coords, "physical": report.physical, "xi": report.xi.values,
              "xi_active": report.xi.active.astype(float), "xi_pinned": report.xi.pinned.astype(float),
              "log_scale": report.transform.log_scale, "shift": report.transform.shift,
              "angle": report.transform.angle}
    if report.decoder is not None:
        arrays.update(content=report.decoder.content, mask=report.decoder.mask,
                      background=report.decoder.background)
    save_checkpoint(out / "checkpoint.bin", arrays, {"system": report.system_name, "mode": report.mode})
    write_json(out / "resolved_config.json", resolved)
    report.write_json(out / "report.json")


# --- subcommands -------------------------------------------------------------------

def cmd_synth(args) -> int:
    from .video import load_background, make_dataset, write_dataset

    bg = load_background(args.background) if args.background else None
    out = RunDir(args.out)
    ds = make_dataset(args.system, args.videos, args.frames, seed=args.seed, dt=args.dt,
                      background=bg, hard_replace=args.hard_replace)
    write_dataset(ds, out.path)
    write_json(out / "resolved_config.json", {
        "command": "synth", "system": args.system, "videos": args.videos, "frames": args.frames,
        "seed": args.seed, "dt": args.dt, "background": args.background, "hard_replace": args.hard_replace})
    out.done()
    print(f"wrote {ds.n_videos} videos x {ds.n_frames} frames to {out.path}")
    return EXIT_OK


def _dataset(path):
    from .video import read_dataset

    p = Path(path)
    if not (p / "manifest.json").is_file():
        raise UsageError(f"dataset not found: {p}")
    return read_dataset(p)


def _config_for(args, ds):
    overrides = {"dt": ds.dt}
    if args.seed is not None:
        overrides["seed"] = args.seed
    return load_config(args.config, args.preset or ds.system_name, not args.full_scale, overrides)


def cmd_discover(args) -> int:
    from .discovery import run_discovery

    ds = _dataset(args.dataset)
    cfg = _config_for(args, ds)
    out = RunDir(args.out)
    resolved = {"command": "discover", "dataset": str(args.dataset), "threads": args.threads_resolved,
                "config": cfg.to_dict()}
    write_json(out / "resolved_config.json", resolved)
    report = run_discovery(ds, cfg, log=_log(args.verbose))
    save_report_outputs(out, report, args.dataset, resolved)
    out.done()
    _print_summary(report)
    return EXIT_OK


def cmd_baseline(args) -> int:
    from .baselines import run_two_step

    ds = _dataset(args.dataset)
    cfg = _config_for(args, ds)
    out = RunDir(args.out)
    resolved = {"command": "baseline", "dataset": str(args.dataset), "threads": args.threads_resolved,
                "config": cfg.to_dict(), "two_step": {"pixels_per_unit": args.pixels_per_unit,
                                                      "tol": args.tol, "ridge_lambda": args.ridge_lambda,
                                                      "normalize": args.normalize}}
    write_json(out / "resolved_config.json", resolved)
    report = run_two_step(ds, cfg, pixels_per_unit=args.pixels_per_unit, tol=args.tol,
                          ridge_lambda=args.ridge_lambda, normalize=args.normalize, log=_log(args.verbose))
    save_report_outputs(out, report, args.dataset, resolved)
    out.done()
    _print_summary(report)
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .baselines import AblationMode, run_ablation, write_comparison_csv
    from .dynamics import get_system

    ds = _dataset(args.dataset)
    cfg = _config_for(args, ds)
    try:
        modes = [AblationMode(m.strip()).value for m in args.modes.split(",") if m.strip()]
    except ValueError as err:
        raise UsageError(str(err)) from err
    out = RunDir(args.out)
    resolved = {"command": "ablate", "dataset": str(args.dataset), "modes": modes,
                "threads": args.threads_resolved, "config": cfg.to_dict()}
    write_json(out / "resolved_config.json", resolved)
    reports = {}
    for mode in modes:
        sub = RunDir(out / mode)
        rep = run_ablation(ds, cfg, mode, log=_log(args.verbose))
        save_report_outputs(sub, rep, args.dataset, resolved)
        sub.done()
        reports[mode] = rep
        print(f"[{mode}]")
        _print_summary(rep)
    write_comparison_csv(out / "comparison.csv", reports, get_system(ds.system_name))
    out.done()
    return EXIT_OK


def cmd_report(args) -> int:
    run = Path(args.run)
    path = run / "report.json"
    if not path.is_file():
        raise UsageError(f"no report.json in {run}")
    doc = json.loads(path.read_text())
    if (run / ".incomplete").exists():
        print("warning: run directory is marked incomplete", file=sys.stderr)
    ev = doc.get("evaluation")
    print(f"system: {doc['system']}  mode: {doc['mode']}")
    if ev:
        print(f"scale factor alpha = {ev['alpha']:.4g}")
        for eq in ev["equations"]:
            print("  " + eq)
        for name, s in ev["scores"].items():
            print(f"  {name}: TPT {s['tpt']} / {s['true_terms']}, FPT {s['fpt']}")
    else:
        print("learned (unscaled) equations:")
        for eq in doc["equations_learned"]:
            print("  " + eq)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .diagnostics import pipeline_gradcheck, tolerance_for

    res = pipeline_gradcheck(args.system, probe_count=args.probes, seed=args.seed)
    worst_ok = True
    print(f"{'term':<8} {'group':<12} {'max rel err':>12}  tol")
    for term, groups in res.items():
        tol = args.tolerance if args.tolerance is not None else tolerance_for(term)
        for g, err in groups.items():
            ok = err <= tol
            worst_ok &= ok
            print(f"{term:<8} {g:<12} {err:12.3e}  {tol:.0e} {'ok' if ok else 'FAIL'}")
    return EXIT_OK if worst_ok else EXIT_RUNTIME


def _print_summary(report):
    ev = report.evaluation
    eqs = ev["equations"] if ev else report.to_json()["equations_learned"]
    for eq in eqs:
        print("  " + eq)
    if ev:
        print(f"  TPT {ev['tpt']}  FPT {ev['fpt']}  alpha {ev['alpha']:.4g}")


# --- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    from_systems = ["duffing", "cubic", "vanderpol", "oscillator2d", "magnetic", "quartic"]
    ap = argparse.ArgumentParser(prog="vid2ode", description=__doc__.splitlines()[0])
    ap.add_argument("--threads", type=int, default=None,
                    help="CPU threads for XLA (default: all cores; VID2ODE_THREADS overrides)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic video dataset")
    p.add_argument("--system", required=True, choices=from_systems)
    p.add_argument("--videos", type=int, default=8)
    p.add_argument("--frames", type=int, default=400)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dt", type=float, default=0.05)
    p.add_argument("--background", help="PNG background image (default: generated texture)")
    p.add_argument("--hard-replace", action="store_true", help="opaque marker without anti-aliasing")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    def training(p):
        p.add_argument("--dataset", required=True)
        p.add_argument("--config", help="JSON document with TrainConfig fields")
        p.add_argument("--preset", choices=from_systems, help="hyperparameter preset (default: dataset system)")
        p.add_argument("--full-scale", action="store_true", help="use full-scale epochs instead of the desk schedule")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=True)

    p = sub.add_parser("discover", help="joint discovery from a dataset")
    training(p)
    p.set_defaults(func=cmd_discover)

    p = sub.add_parser("baseline", help="two-step baseline (coordinates, then STRidge)")
    training(p)
    p.add_argument("--pixels-per-unit", type=float, default=20.0)
    p.add_argument("--tol", type=float, default=0.05)
    p.add_argument("--ridge-lambda", type=float, default=1e-12)
    p.add_argument("--normalize", type=float, default=1.0)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("ablate", help="run ablation modes and write a comparison table")
    training(p)
    p.add_argument("--modes", default="two_step,no_transform,no_int_loss,full")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="print rescaled equations of a finished run")
    p.add_argument("--run", required=True, help="run output directory")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gradcheck", help="reverse-mode vs finite differences for every loss term")
    p.add_argument("--system", default="duffing", choices=from_systems)
    p.add_argument("--probes", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=None)
    p.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    args.threads_resolved = configure_threads(args.threads)
    try:
        return args.func(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as err:  # noqa: BLE001 - report any runtime failure with exit 1
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
