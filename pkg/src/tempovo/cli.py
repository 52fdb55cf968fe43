"""Command-line surface: dataset generation, training, inference, evaluation.

Subcommands
    synth gen   generate a synthetic dataset archive from a scene spec file
    train       train a model from a config file; writes checkpoint + log
    infer       run two-frame inference over a dataset, write a trajectory
    eval        compare predicted vs ground-truth trajectory files
    resample    frequency-subsample a dataset archive (skip factor k)
    ablate      run one ablation axis from a grid file
    plot        top-down X-Z projection of trajectory files

Exit codes: 0 success, 1 usage error, 2 data/validation error. Error
messages go to standard error. Every subcommand validates its inputs
before writing any output, and dataset directories are written
atomically, so failures leave no partial artifacts. When ``--out`` is
omitted, the TEMPOVO_OUT environment variable supplies the output
directory. Config files are JSON with a versioned schema.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .dataio import load_dataset, read_trajectory, save_dataset, write_trajectory
from .geometry import Trajectory
from .metrics import DEFAULT_LENGTHS, evaluate
from .model import load_checkpoint, save_checkpoint
from .plotting import save_trajectory_plot
from .synth import SceneSpec, generate_sequence, resample_frequency
from .train import TrainConfig, predicted_trajectory, run_ablation, train

OUT_ENV = "TEMPOVO_OUT"
CONFIG_SCHEMA_VERSION = 1

_S_ERR_MODES = {"rel": "relative", "abs": "absolute"}


class UsageError(Exception):
    """Bad invocation discovered after argument parsing (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage failures exit 1 (the CLI contract)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _resolve_out(value, default_name: str) -> Path:
    if value:
        return Path(value)
    env = os.environ.get(OUT_ENV)
    if env:
        return Path(env) / default_name
    raise UsageError(f"--out is required (or set {OUT_ENV})")


def _load_json(path) -> dict:
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: not valid JSON ({e})") from e
    if not isinstance(payload, dict):
        raise ValueError(f"{path}: expected a JSON object")
    version = payload.get("schema_version", CONFIG_SCHEMA_VERSION)
    if version != CONFIG_SCHEMA_VERSION:
        raise ValueError(
            f"{path}: unsupported schema_version {version!r} "
            f"(expected {CONFIG_SCHEMA_VERSION})"
        )
    return payload


def _load_sequences(paths) -> list:
    sequences = []
    for p in paths:
        pairs, _, _ = load_dataset(p)
        sequences.append(pairs)
    return sequences


# ---------------------------------------------------------------------------
# subcommands


def _cmd_synth_gen(args) -> int:
    payload = _load_json(args.spec)
    payload.pop("schema_version", None)
    spec = SceneSpec.from_dict(payload)
    out = _resolve_out(args.out, "dataset")
    pairs, trajectory = generate_sequence(spec)
    save_dataset(out, pairs, trajectory=trajectory, generator=spec.to_dict())
    print(f"wrote {len(pairs)} pairs to {out}")
    return 0


def _cmd_train(args) -> int:
    payload = _load_json(args.config)
    config = TrainConfig.from_dict(payload.get("train", {}))
    data_paths = list(args.data) if args.data else payload.get("data", [])
    if not data_paths:
        raise UsageError("no training data: pass --data or put 'data' in the config")
    val_paths = payload.get("val_data", [])

    sequences = _load_sequences(data_paths)
    val_sequences = _load_sequences(val_paths) if val_paths else None
    out = _resolve_out(args.out, "run")
    if out.exists() and any(out.iterdir()):
        raise FileExistsError(f"refusing to write into non-empty {out}")
    out.mkdir(parents=True, exist_ok=True)

    result = train(config, sequences, val_sequences=val_sequences)
    save_checkpoint(out / "checkpoint.pt", result.net,
                    extra={"train_config": config.to_dict()})
    log_text = "\n".join(result.log_lines())
    (out / "train_log.txt").write_text(log_text + ("\n" if log_text else ""))
    (out / "config.json").write_text(json.dumps(
        {"schema_version": CONFIG_SCHEMA_VERSION, "train": config.to_dict(),
         "data": [str(p) for p in data_paths],
         "val_data": [str(p) for p in val_paths]},
        indent=2, sort_keys=True) + "\n")
    final = result.records[-1]["loss"] if result.records else float("nan")
    print(f"trained {config.iterations} iterations; final loss {final:.6g}; "
          f"checkpoint at {out / 'checkpoint.pt'}")
    return 0


def _skip_factor(rate: float | None, base_rate: float) -> int:
    if rate is None:
        return 1
    if rate <= 0:
        raise ValueError(f"--rate must be positive, got {rate}")
    k = base_rate / rate
    if abs(k - round(k)) > 1e-9 or round(k) < 1:
        raise ValueError(
            f"rate {rate:g} Hz does not divide the dataset rate "
            f"{base_rate:g} Hz by an integer skip factor"
        )
    return int(round(k))


def _cmd_infer(args) -> int:
    net, _ = load_checkpoint(args.ckpt)
    pairs, _, manifest = load_dataset(args.data)
    k = _skip_factor(args.rate, manifest["frame_rate"])
    pairs = resample_frequency(pairs, k)
    out = _resolve_out(args.out, "trajectory.txt")
    out.parent.mkdir(parents=True, exist_ok=True)
    trajectory = predicted_trajectory(net, pairs)
    write_trajectory(trajectory, out)
    print(f"wrote {len(trajectory.poses)} poses to {out}")
    return 0


def _cmd_eval(args) -> int:
    pred = read_trajectory(args.pred, rate=args.rate)
    gt = read_trajectory(args.gt, rate=args.rate)
    report = evaluate(
        pred, gt,
        lengths=tuple(args.lengths),
        s_err_mode=_S_ERR_MODES[args.s_err_mode],
        alignment=args.align,
    )
    print(report.table())
    if args.json:
        Path(args.json).parent.mkdir(parents=True, exist_ok=True)
        Path(args.json).write_text(report.to_json() + "\n")
    return 0


def _cmd_resample(args) -> int:
    pairs, trajectory, manifest = load_dataset(args.in_dir)
    resampled = resample_frequency(pairs, args.k)
    if trajectory is not None and args.k > 1:
        stop = len(resampled) * args.k + 1
        trajectory = Trajectory(trajectory.poses[:stop:args.k],
                                trajectory.timestamps[:stop:args.k])
    out = _resolve_out(args.out, "resampled")
    save_dataset(out, resampled, trajectory=trajectory,
                 generator=manifest.get("generator"))
    print(f"wrote {len(resampled)} pairs at skip factor {args.k} to {out}")
    return 0


def _cmd_ablate(args) -> int:
    payload = _load_json(args.grid)
    if "grid" not in payload or not payload["grid"]:
        raise ValueError(f"{args.grid}: missing or empty 'grid'")
    config = TrainConfig.from_dict(payload.get("train", {}))
    data_paths = payload.get("data", [])
    if not data_paths:
        raise ValueError(f"{args.grid}: missing 'data'")
    sequences = _load_sequences(data_paths)
    val_sequences = (_load_sequences(payload["val_data"])
                     if payload.get("val_data") else sequences)
    lengths = tuple(payload.get("lengths", DEFAULT_LENGTHS))
    report = run_ablation(args.name, payload["grid"], config, sequences,
                          val_sequences, lengths=lengths)
    print(report.table())
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(report.to_json() + "\n")
    return 0


def _cmd_plot(args) -> int:
    named = []
    for f in args.traj:
        path = Path(f)
        named.append((path.stem, read_trajectory(path, rate=args.rate)))
    out = _resolve_out(args.out, "trajectories.png")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_trajectory_plot(named, out)
    print(f"wrote plot to {out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tempovo",
                     description="Time-conditioned visual odometry toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="synthetic data commands")
    synth_sub = synth.add_subparsers(dest="synth_command", required=True)
    gen = synth_sub.add_parser("gen", help="generate a dataset archive")
    gen.add_argument("--spec", required=True, help="scene spec JSON file")
    gen.add_argument("--out", help=f"output dataset directory (or {OUT_ENV})")
    gen.set_defaults(func=_cmd_synth_gen)

    tr = sub.add_parser("train", help="train a model")
    tr.add_argument("--config", required=True, help="training config JSON file")
    tr.add_argument("--data", nargs="+", help="dataset directories (overrides config)")
    tr.add_argument("--out", help="output run directory")
    tr.set_defaults(func=_cmd_train)

    inf = sub.add_parser("infer", help="predict a trajectory for a dataset")
    inf.add_argument("--ckpt", required=True, help="checkpoint file")
    inf.add_argument("--data", required=True, help="dataset directory")
    inf.add_argument("--rate", type=float, default=None,
                     help="observation rate in Hz (default: dataset rate)")
    inf.add_argument("--out", help="output trajectory file")
    inf.set_defaults(func=_cmd_infer)

    ev = sub.add_parser("eval", help="evaluate a predicted trajectory")
    ev.add_argument("--pred", required=True, help="predicted trajectory file")
    ev.add_argument("--gt", required=True, help="ground-truth trajectory file")
    ev.add_argument("--lengths", nargs="+", type=float, default=list(DEFAULT_LENGTHS),
                    help="subsequence lengths in meters")
    ev.add_argument("--s-err-mode", choices=sorted(_S_ERR_MODES), default="rel",
                    help="scale error mode: relative or absolute")
    ev.add_argument("--align", choices=["rigid", "sim3"], default="rigid",
                    help="trajectory alignment used for ATE")
    ev.add_argument("--rate", type=float, default=12.0,
                    help="timestamp rate for files without a sidecar")
    ev.add_argument("--json", help="also write the report as JSON to this file")
    ev.set_defaults(func=_cmd_eval)

    rs = sub.add_parser("resample", help="frequency-subsample a dataset")
    rs.add_argument("--in", dest="in_dir", required=True, help="input dataset")
    rs.add_argument("--k", type=int, required=True, help="frame skip factor")
    rs.add_argument("--out", help="output dataset directory")
    rs.set_defaults(func=_cmd_resample)

    ab = sub.add_parser("ablate", help="run an ablation axis")
    ab.add_argument("--name", required=True,
                    choices=["token_size", "freq_set", "inference_rate",
                             "no_time_layers"])
    ab.add_argument("--grid", required=True, help="grid JSON file")
    ab.add_argument("--out", help="write the report JSON here")
    ab.set_defaults(func=_cmd_ablate)

    pl = sub.add_parser("plot", help="plot trajectories (X-Z projection)")
    pl.add_argument("--traj", nargs="+", required=True, help="trajectory files")
    pl.add_argument("--rate", type=float, default=12.0,
                    help="timestamp rate for files without a sidecar")
    pl.add_argument("--out", help="output image file")
    pl.set_defaults(func=_cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"{parser.prog}: error: {e}", file=sys.stderr)
        return 1
    except KeyError as e:
        print(f"{parser.prog}: error: missing key {e}", file=sys.stderr)
        return 2
    except (ValueError, TypeError, OSError, RuntimeError) as e:
        print(f"{parser.prog}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
