"""Command-line front end: dataset creation, training runs, evaluation with
panel figures, and the Wasserstein oracle calibration.

Exit codes: 0 success, 1 invariant or I/O failure, 2 usage error.  The
``UNPAIRED_MRI_OUT_ROOT`` environment variable, when set, prefixes every
relative output path.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .archive import ArchiveError
from .config import ConfigError, RunConfig, load_run_config, save_run_config
from .data import build_split, load_split, save_split
from .metrics import evaluate_model
from .training import load_checkpoint, model_recon_fn, train
from .wasserstein import run_calibration

# seed offset reserving a disjoint phantom range for held-out evaluation
EVAL_SEED_OFFSET = 9000


def _out_path(p) -> Path:
    root = os.environ.get("UNPAIRED_MRI_OUT_ROOT")
    p = Path(p)
    if root and not p.is_absolute():
        return Path(root) / p
    return p


def cmd_dataset_make(args) -> int:
    split = build_split(
        M=args.inputs,
        N=args.labels,
        regime=args.regime,
        label_mode=args.label_mode,
        acceleration=args.acceleration,
        coils=args.coils,
        seed=args.seed,
        H=args.height,
        W=args.width,
        noise_sigma=args.noise_sigma,
    )
    out = _out_path(args.out)
    save_split(split, out)
    print(f"wrote {split.regime} split (M={split.M}, N={split.N}, "
          f"accel={split.acceleration}, coils={split.coils.n_coils}) to {out}")
    return 0


def _make_splits(cfg: RunConfig):
    ds = cfg.dataset
    split = build_split(
        M=ds.inputs, N=ds.labels, regime=ds.regime, label_mode=ds.label_mode,
        acceleration=ds.acceleration, coils=ds.coils, seed=cfg.seed,
        H=ds.height, W=ds.width, noise_sigma=ds.noise_sigma,
    )
    eval_split = build_split(
        M=cfg.eval_count, N=cfg.eval_count, regime="paired", label_mode="complex",
        acceleration=ds.acceleration, coils=ds.coils, seed=cfg.seed + EVAL_SEED_OFFSET,
        H=ds.height, W=ds.width, noise_sigma=ds.noise_sigma,
    )
    return split, eval_split


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    if args.out is not None:
        cfg.out_dir = args.out
    out_dir = _out_path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_run_config(cfg, out_dir / "config_resolved.yaml")
    split, eval_split = _make_splits(cfg)
    state = train(
        cfg.trainer, split, cfg.generator, eval_split=eval_split,
        out_dir=out_dir, resume_from=args.resume,
    )
    evals = [r for r in state.history if r.get("eval_psnr", "") != ""]
    if evals:
        last = evals[-1]
        print(f"run complete: {state.step} generator steps, "
              f"final eval PSNR {last['eval_psnr']:.2f} dB, SSIM {last['eval_ssim']:.4f}")
    else:
        print(f"run complete: {state.step} generator steps")
    print(f"outputs in {out_dir}")
    return 0


def _save_panels(split, recon_fn, out_dir: Path, count: int) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    for i, item in enumerate(split.items[:count]):
        est = recon_fn(item)
        fig, axes = plt.subplots(1, 3, figsize=(9, 3.2))
        panels = [
            (np.abs(item.x_zf.numpy()), "input (zero-filled)"),
            (np.abs(est.numpy()), "reconstruction"),
            (np.abs(item.truth.numpy()), "reference"),
        ]
        for ax, (img, title) in zip(axes, panels):
            ax.imshow(img, cmap="gray")
            ax.set_title(title, fontsize=9)
            ax.axis("off")
        fig.tight_layout()
        fig.savefig(out_dir / f"panel_{i:03d}.png", dpi=120)
        plt.close(fig)


def cmd_eval(args) -> int:
    state = load_checkpoint(_out_path(args.checkpoint))
    split = load_split(_out_path(args.dataset))
    out_dir = _out_path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    recon_fn = model_recon_fn(state)
    report = evaluate_model(recon_fn, split)
    report.to_csv(out_dir / "report.csv")
    report.to_json(out_dir / "report.json")
    _save_panels(split, recon_fn, out_dir, args.panels)
    print(f"evaluated {report.count} images: mean PSNR {report.mean_psnr:.2f} dB, "
          f"mean SSIM {report.mean_ssim:.4f}")
    print(f"outputs in {out_dir}")
    return 0


def cmd_oracle_check(args) -> int:
    rows = run_calibration(training_steps=args.steps, seed=args.seed)
    out_dir = _out_path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ok = True
    with open(out_dir / "calibration.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["case", "exact_w1", "critic_estimate", "rel_error"])
        for r in rows:
            w.writerow([r.case, f"{r.exact:.6f}", f"{r.estimate:.6f}", f"{r.rel_error:.4f}"])
    for r in rows:
        in_band = 0.7 * r.exact <= r.estimate <= 1.1 * r.exact if r.exact else abs(r.estimate) <= 0.05
        ok &= in_band
        print(f"{'PASS' if in_band else 'FAIL'}  {r.case}: exact={r.exact:.4f} "
              f"estimate={r.estimate:.4f} rel_error={r.rel_error:.1%}")
    print(f"calibration table in {out_dir / 'calibration.csv'}")
    if not ok:
        print("oracle check FAILED", file=sys.stderr)
        return 1
    print("oracle check passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="unpaired-mri", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    ds = sub.add_parser("dataset", help="dataset utilities")
    ds_sub = ds.add_subparsers(dest="dataset_command", required=True)
    mk = ds_sub.add_parser("make", help="generate and save a phantom split")
    mk.add_argument("--out", required=True)
    mk.add_argument("--inputs", type=int, default=200)
    mk.add_argument("--labels", type=int, default=60)
    mk.add_argument("--regime", choices=("paired", "partial", "disjoint"), default="disjoint")
    mk.add_argument("--label-mode", choices=("complex", "magnitude"), default="magnitude")
    mk.add_argument("--acceleration", type=float, default=3.0)
    mk.add_argument("--coils", type=int, default=1)
    mk.add_argument("--height", type=int, default=64)
    mk.add_argument("--width", type=int, default=64)
    mk.add_argument("--noise-sigma", type=float, default=0.0)
    mk.add_argument("--seed", type=int, default=0)
    mk.set_defaults(func=cmd_dataset_make)

    tr = sub.add_parser("train", help="run training from a YAML config")
    tr.add_argument("--config", required=True)
    tr.add_argument("--out", default=None, help="override the config's out_dir")
    tr.add_argument("--resume", default=None, help="checkpoint to resume from")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a dataset archive")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--panels", type=int, default=4)
    ev.set_defaults(func=cmd_eval)

    oc = sub.add_parser("oracle-check", help="calibrate the critic W1 estimate against exact OT")
    oc.add_argument("--out", default="oracle_check")
    oc.add_argument("--steps", type=int, default=1500)
    oc.add_argument("--seed", type=int, default=0)
    oc.set_defaults(func=cmd_oracle_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ArchiveError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
