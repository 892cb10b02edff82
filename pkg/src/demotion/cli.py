"""Command-line interface.

Subcommands: ``phantoms``, ``corrupt``, ``demote``, ``train``, ``bench``,
``report``.  Shared conventions:

- ``--config FILE`` loads a versioned JSON document whose ``args`` mapping
  overrides any flag of the subcommand (the file wins over the command
  line, so a checked-in config fully pins a run).
- relative output paths resolve under ``$DEMOTION_OUTPUT_DIR`` when that
  variable is set.
- exit status: 0 success, 1 run/numerical failure, 2 usage or config error.
"""

import argparse
import json
import os
import sys

import numpy as np

from .autofocus import AutofocusConfig, demote, desk_preset
from .bench import (ExperimentSpec, Method, compare_runs, load_run, report,
                    run_experiment, save_run, train_prior_cmd)
from .core import ComplexImage, IMAGE, KSPACE, fft2c
from .dataset import gen_phantoms, load_manifest
from .errors import (ConfigMismatchError, ContractViolationError,
                     NumericalFailureError, WeightFormatError)
from .metrics import psnr
from .motion import (CorruptionConfig, Severity, TrajectoryKind,
                     TrajectorySpec, corrupt, gen_trajectory)
from .prior import PriorNetConfig, load_weights
from .training import TrainConfig
from .phantoms import save_f32, save_pgm16

CONFIG_SCHEMA_VERSION = 1
TRAJECTORY_FILE_SCHEMA_VERSION = 1
OUTPUT_DIR_ENV = "DEMOTION_OUTPUT_DIR"

_METHOD_ALIASES = {
    "none": Method.NONE,
    "autofocusing": Method.AUTOFOCUSING,
    "autofocusingplus": Method.AUTOFOCUSING_PLUS,
    "autofocusing_plus": Method.AUTOFOCUSING_PLUS,
    "prioronlydeblur": Method.PRIOR_ONLY_DEBLUR,
    "prior_only_deblur": Method.PRIOR_ONLY_DEBLUR,
}


class UsageError(Exception):
    pass


def _parse_method(text: str) -> Method:
    key = text.strip().lower()
    if key not in _METHOD_ALIASES:
        raise UsageError(f"unknown method {text!r}; choose from "
                         f"{sorted(set(m.value for m in Method))}")
    return _METHOD_ALIASES[key]


def _out_path(path) -> str:
    """Resolve a user-facing output path under the env output directory."""
    path = str(path)
    base = os.environ.get(OUTPUT_DIR_ENV)
    if base and not os.path.isabs(path):
        return os.path.join(base, path)
    return path


def _apply_config(args: argparse.Namespace) -> None:
    """Let a versioned JSON config override the parsed flags."""
    if getattr(args, "config", None) is None:
        return
    try:
        with open(args.config, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}")
    if doc.get("schema_version") != CONFIG_SCHEMA_VERSION:
        raise UsageError(
            f"unsupported config schema_version {doc.get('schema_version')!r}")
    overrides = doc.get("args", {})
    if not isinstance(overrides, dict):
        raise UsageError("config 'args' must be an object")
    for key, value in overrides.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            raise UsageError(f"config key {key!r} is not a flag of this subcommand")
        setattr(args, dest, value)


def _trajectory_template(args) -> TrajectorySpec:
    return TrajectorySpec.make(
        TrajectoryKind(args.kind), severity=Severity(args.severity),
        seed=int(args.traj_seed),
        amplitude_deg=args.amplitude_deg, amplitude_px=args.amplitude_px)


def _autofocus_config(args) -> AutofocusConfig:
    base = desk_preset()
    return AutofocusConfig(
        n_steps=int(args.steps) if args.steps is not None else base.n_steps,
        lr=float(args.lr) if args.lr is not None else base.lr,
        center_fraction=(float(args.center_fraction)
                         if args.center_fraction is not None
                         else base.center_fraction))


# ---------------------------------------------------------------------------
# Subcommand implementations
# ---------------------------------------------------------------------------

def _cmd_phantoms(args) -> int:
    out_dir = _out_path(args.out_dir)
    gen_phantoms(int(args.n), int(args.size), int(args.seed), out_dir,
                 split=args.split)
    print(os.path.join(out_dir, "manifest.json"))
    return 0


def _load_entry(manifest_path, image_id: int):
    manifest = load_manifest(manifest_path)
    for entry in manifest.entries:
        if entry.id == image_id:
            return manifest, entry
    raise UsageError(f"image id {image_id} not in {manifest_path}")


def _cmd_corrupt(args) -> int:
    manifest, entry = _load_entry(args.manifest, int(args.id))
    clean = manifest.load_image(entry)
    spec = _trajectory_template(args)
    traj = gen_trajectory(spec, clean.shape[0])
    cfg = CorruptionConfig(
        center_fraction=float(args.center_fraction) if args.center_fraction is not None
        else CorruptionConfig().center_fraction,
        noise_snr_db=float(args.noise_snr_db) if args.noise_snr_db is not None else None)
    rng = np.random.default_rng([spec.seed, 1])
    corrupted = corrupt(ComplexImage(clean.astype(complex), IMAGE), traj, cfg, rng=rng)
    ksp = fft2c(corrupted)

    prefix = _out_path(args.out_prefix)
    mag = np.abs(corrupted.data)
    save_f32(prefix + ".f32", mag)
    save_pgm16(prefix + ".pgm", np.clip(mag, 0.0, 1.0))
    with open(prefix + "_kspace.npz", "wb") as f:
        np.savez(f, real=ksp.data.real, imag=ksp.data.imag)
    doc = {
        "schema_version": TRAJECTORY_FILE_SCHEMA_VERSION,
        "spec": spec.to_json_dict(),
        "alpha_deg": [float(v) for v in traj.alpha],
        "shift_px": [[float(a), float(b)] for a, b in traj.shift],
    }
    with open(prefix + "_trajectory.json", "w", encoding="utf-8", newline="\n") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")
    print(f"corrupted PSNR: {psnr(clean, mag):.4f} dB")
    print(prefix + "_kspace.npz")
    return 0


def _cmd_demote(args) -> int:
    try:
        with np.load(args.kspace) as data:
            ksp_data = data["real"] + 1j * data["imag"]
    except (OSError, KeyError) as exc:
        raise UsageError(f"cannot read k-space file {args.kspace}: {exc}")
    prior = load_weights(args.prior) if args.prior else None
    cfg = _autofocus_config(args)
    result = demote(ComplexImage(ksp_data, KSPACE), cfg, prior=prior)

    prefix = _out_path(args.out_prefix)
    refined_mag = np.abs(result.refined_image.data)
    save_f32(prefix + ".f32", refined_mag)
    save_pgm16(prefix + ".pgm", np.clip(refined_mag, 0.0, 1.0))
    est = result.estimated_traj
    doc = {
        "schema_version": TRAJECTORY_FILE_SCHEMA_VERSION,
        "alpha_deg": [float(v) for v in est.alpha],
        "shift_px": [[float(a), float(b)] for a, b in est.shift],
    }
    with open(prefix + "_trajectory.json", "w", encoding="utf-8", newline="\n") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")
    with open(prefix + "_loss.csv", "w", encoding="utf-8", newline="\n") as f:
        f.write("step,loss\n")
        for i, v in enumerate(result.loss_history):
            f.write(f"{i},{v!r}\n")
    print(f"loss: {result.loss_history[0]!r} -> {result.loss_history[-1]!r} "
          f"({cfg.n_steps} steps, prior={'yes' if result.used_prior else 'no'})")
    return 0


def _cmd_train(args) -> int:
    manifest = load_manifest(args.manifest)
    val_manifest = load_manifest(args.val_manifest) if args.val_manifest else None
    net_cfg = PriorNetConfig(depth=int(args.depth),
                             base_channels=int(args.base_channels),
                             kernel_size=int(args.kernel_size))
    inner = AutofocusConfig(n_steps=int(args.inner_steps), lr=float(args.inner_lr))
    cfg = TrainConfig(outer_lr=float(args.outer_lr), epochs=int(args.epochs),
                      inner=inner, seed=int(args.seed))
    out = _out_path(args.out)
    return train_prior_cmd(
        manifest, cfg, net_cfg, _trajectory_template(args), out,
        log_path=_out_path(args.log) if args.log else None,
        checkpoint_path=_out_path(args.checkpoint) if args.checkpoint else None,
        val_manifest=val_manifest)


def _cmd_bench(args) -> int:
    manifest = load_manifest(args.manifest)
    noise = float(args.noise_snr_db) if args.noise_snr_db is not None else None
    spec = ExperimentSpec(
        trajectory=_trajectory_template(args),
        corruption=CorruptionConfig(noise_snr_db=noise),
        method=_parse_method(args.method),
        autofocus=_autofocus_config(args),
        prior_weights=args.prior,
        seed=int(args.seed))
    run = run_experiment(manifest, spec,
                         workers=int(args.workers) if args.workers else None)
    out = _out_path(args.out)
    save_run(run, out)
    wall = sum(r.wall_s for r in run.results)
    print(f"{run.n_images} images, {run.failure_count} failures -> {out}",
          file=sys.stderr)
    print(f"total image wall time: {wall:.1f}s", file=sys.stderr)
    print(out)
    if run.failed:
        print(f"run failed: {run.failure_count}/{run.n_images} images errored",
              file=sys.stderr)
        return 1
    return 0


def _cmd_report(args) -> int:
    run = load_run(args.run)
    if args.compare:
        doc = compare_runs(run, load_run(args.compare))
    else:
        doc = report(run, format=args.format)
    if args.out:
        out = _out_path(args.out)
        with open(out, "w", encoding="utf-8", newline="\n") as f:
            f.write(doc)
        print(out)
    else:
        sys.stdout.write(doc)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_trajectory_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--kind", default="harmonic",
                   choices=[k.value for k in TrajectoryKind])
    p.add_argument("--severity", default="mild",
                   choices=[s.value for s in Severity])
    p.add_argument("--traj-seed", type=int, default=0)
    p.add_argument("--amplitude-deg", type=float, default=None)
    p.add_argument("--amplitude-px", type=float, default=None)


def _add_autofocus_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--steps", type=int, default=None,
                   help="inner optimization steps (default: desk preset)")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--center-fraction", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="demotion",
        description="Simulate rigid-motion k-space corruption and remove it "
                    "by blind optimization, optionally with a learned prior.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantoms", help="generate a phantom dataset + manifest")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="train", choices=["train", "val"])
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_phantoms)

    p = sub.add_parser("corrupt", help="motion-corrupt one manifest image")
    p.add_argument("--manifest", required=True)
    p.add_argument("--id", type=int, required=True)
    _add_trajectory_flags(p)
    p.add_argument("--center-fraction", type=float, default=None)
    p.add_argument("--noise-snr-db", type=float, default=None)
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_corrupt)

    p = sub.add_parser("demote", help="blind-remove motion from saved k-space")
    p.add_argument("--kspace", required=True, help="npz with real/imag arrays")
    _add_autofocus_flags(p)
    p.add_argument("--prior", default=None, help="prior weight file")
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_demote)

    p = sub.add_parser("train", help="train the scale-map prior")
    p.add_argument("--manifest", required=True)
    p.add_argument("--val-manifest", default=None)
    p.add_argument("--out", required=True, help="weight file to write")
    p.add_argument("--log", default=None, help="CSV log path (default <out>.log.csv)")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--outer-lr", type=float, default=5e-5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--base-channels", type=int, default=16)
    p.add_argument("--kernel-size", type=int, default=3)
    p.add_argument("--inner-steps", type=int, default=30)
    p.add_argument("--inner-lr", type=float, default=3e-4)
    _add_trajectory_flags(p)
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("bench", help="run a benchmark over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--method", default="Autofocusing")
    _add_trajectory_flags(p)
    _add_autofocus_flags(p)
    p.add_argument("--noise-snr-db", type=float, default=None)
    p.add_argument("--prior", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True, help="run JSON to write")
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("report", help="render a saved run as CSV or markdown")
    p.add_argument("--run", required=True)
    p.add_argument("--format", default="csv", choices=["csv", "markdown"])
    p.add_argument("--compare", default=None,
                   help="second run JSON; emits a paired comparison instead")
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_config(args)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ContractViolationError, ConfigMismatchError, WeightFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailureError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
