"""Command-line entry point.

Subcommands: preprocess, summary, train, eval, erf, gradcheck.  Exit
codes: 0 success, 1 validation error (bad flag/key/value), 2 runtime
failure.  Every run writes a manifest.json with the resolved config next
to its outputs.  ``TFSEP_SEED`` is the seed fallback when --seed is not
given.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from .audio import LogMelConfig, wav_to_features
from .erf import (DEFAULT_THRESHOLDS, compute_erf, erf_report, export_map)
from .network import NetConfig, TfSepNet, summary_rows_as_dicts
from .serialization import save_bundle
from .tensor import Tensor, finite_diff_check, sum_all
from .train import (ToyDatasetSpec, TrainConfig, Adam, evaluate,
                    generate_toy_dataset, load_wav_folder, load_checkpoint,
                    save_checkpoint, split_dataset, train)

try:
    from importlib.metadata import version as _pkg_version
    VERSION = "v" + _pkg_version("tfsepnet")
except Exception:  # pragma: no cover
    VERSION = "v0.0.0-unknown"


class CliValidationError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so we control exit codes."""

    def error(self, message):
        raise CliValidationError(message)


def _coerce(value: str):
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    if value in ("true", "false"):
        return value == "true"
    return value


def _load_config(cls, path: str | None, overrides: list[str], **base):
    """Build a dataclass config from JSON + dotted-key overrides, strictly."""
    data = dict(base)
    valid = {f.name for f in dataclasses.fields(cls)}
    if path:
        with open(path) as fh:
            loaded = json.load(fh)
        if not isinstance(loaded, dict):
            raise CliValidationError(f"{path}: config must be a JSON object")
        data.update(loaded)
    for item in overrides:
        if "=" not in item:
            raise CliValidationError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        data[key] = _coerce(value)
    unknown = set(data) - valid
    if unknown:
        raise CliValidationError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise CliValidationError(str(exc)) from exc


def _write_manifest(out_dir: Path, subcommand: str, resolved: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"version": VERSION, "subcommand": subcommand, "config": resolved}
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("TFSEP_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise CliValidationError(f"TFSEP_SEED must be an integer, got {env!r}") from exc
    return 0


def _parse_shape(text: str) -> tuple[int, ...]:
    try:
        shape = tuple(int(p) for p in text.split("x"))
    except ValueError as exc:
        raise CliValidationError(f"bad shape {text!r}; expected NxCxFxT") from exc
    if len(shape) != 4:
        raise CliValidationError(f"shape must have 4 dims, got {text!r}")
    return shape


def _load_dataset(spec: str, seed: int, samples_per_class: int = 50):
    if spec == "toy":
        return generate_toy_dataset(ToyDatasetSpec(samples_per_class=samples_per_class,
                                                   seed=seed))
    return load_wav_folder(spec)


# -- subcommands ---------------------------------------------------------


def cmd_summary(args) -> int:
    ablate = [f for f in (args.ablate or "").split(",") if f]
    unknown = set(ablate) - set(NetConfig.ABLATION_FLAGS)
    if unknown:
        raise CliValidationError(f"unknown ablation flag(s): {', '.join(sorted(unknown))}")
    cfg = NetConfig(tau=args.tau, seed=_seed(args),
                    **{f: True for f in ablate})
    model = TfSepNet(cfg)
    shape = _parse_shape(args.input)
    rows = summary_rows_as_dicts(model.summarize(shape))
    out_dir = Path(args.out)
    _write_manifest(out_dir, "summary",
                    {"net_config": dataclasses.asdict(cfg), "input": args.input,
                     "format": args.format})
    if args.format == "json":
        print(json.dumps(rows, indent=2))
    elif args.format == "csv":
        writer = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    else:
        widths = {k: max(len(k), *(len(str(r[k])) for r in rows)) for k in rows[0]}
        header = "  ".join(k.ljust(widths[k]) for k in rows[0])
        print(header)
        print("-" * len(header))
        for r in rows:
            print("  ".join(str(r[k]).ljust(widths[k]) for k in r))
    return 0


def cmd_preprocess(args) -> int:
    cfg = _load_config(LogMelConfig, args.config, args.set or [])
    in_dir, out_dir = Path(getattr(args, "in")), Path(args.out)
    files = sorted(in_dir.rglob("*.wav"))
    if not files:
        raise CliValidationError(f"no .wav files under {in_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    for f in files:
        feats = wav_to_features(f, cfg)
        stem = f.relative_to(in_dir).with_suffix("").as_posix().replace("/", "__")
        if args.format == "csv":
            with open(out_dir / f"{stem}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                for row in feats[0]:
                    w.writerow([repr(v) for v in row.tolist()])
        else:
            save_bundle(out_dir / f"{stem}.tfsb", {"logmel": feats},
                        {"source": str(f), "config_fingerprint": cfg.fingerprint()})
    _write_manifest(out_dir, "preprocess",
                    {"logmel_config": dataclasses.asdict(cfg), "files": len(files),
                     "format": args.format})
    print(f"preprocessed {len(files)} files -> {out_dir}")
    return 0


def cmd_train(args) -> int:
    seed = _seed(args)
    cfg = _load_config(TrainConfig, args.config, args.set or [], seed=seed)
    out_dir = Path(args.out)
    dataset = _load_dataset(args.data, seed, args.samples_per_class)
    train_ds, val_ds = split_dataset(dataset, args.holdout, seed)
    model = TfSepNet(NetConfig(tau=args.tau, num_classes=dataset.labels.shape[1],
                               seed=seed))
    opt = Adam(model.named_params(), cfg)
    _write_manifest(out_dir, "train",
                    {"train_config": dataclasses.asdict(cfg), "tau": args.tau,
                     "data": args.data, "holdout": args.holdout})
    history = train(model, train_ds, cfg, val_dataset=val_ds, optimizer=opt)
    with open(out_dir / "history.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(history[0]))
        writer.writeheader()
        writer.writerows(history)
    save_checkpoint(out_dir / "checkpoint.tfsb", model, opt, cfg,
                    {"class_names": dataset.class_names, "version": VERSION})
    last = history[-1]
    print(f"trained {len(history)} epochs; final val_acc={last.get('val_acc')}")
    return 0


def cmd_eval(args) -> int:
    model, _, _, meta = load_checkpoint(args.ckpt)
    dataset = _load_dataset(args.data, _seed(args), args.samples_per_class)
    acc = evaluate(model, dataset)
    out_dir = Path(args.out)
    _write_manifest(out_dir, "eval", {"ckpt": args.ckpt, "data": args.data})
    print(f"accuracy {acc:.4f} on {len(dataset)} samples")
    return 0


def cmd_erf(args) -> int:
    seed = _seed(args)
    from .serialization import load_bundle
    _, meta = load_bundle(args.ckpt)
    if "train_config" in meta:
        model = load_checkpoint(args.ckpt)[0]
    else:
        model = TfSepNet.load(args.ckpt)[0]
    rng = np.random.default_rng(seed)
    shape = _parse_shape(args.input)
    if args.data == "noise":
        inputs = [rng.standard_normal(shape) for _ in range(args.samples)]
    else:
        dataset = _load_dataset(args.data, seed, args.samples_per_class)
        idx = rng.choice(len(dataset), size=min(args.samples, len(dataset)),
                         replace=False)
        inputs = [dataset.inputs[i:i + 1] for i in idx]
    thresholds = tuple(float(t) for t in args.thresholds.split(","))
    erf = compute_erf(lambda x: model.features(x), inputs)
    report = erf_report(erf, thresholds, log_scale=args.log_mass)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    export_map(erf, out_dir / "map.pgm", "pgm")
    export_map(erf, out_dir / "map.csv", "csv")
    payload = {"thresholds": list(thresholds),
               "ratios": {str(t): report.ratios[t] for t in thresholds},
               "samples": erf.sample_count}
    with open(out_dir / "report.json", "w") as fh:
        json.dump(payload, fh, indent=2)
    _write_manifest(out_dir, "erf",
                    {"ckpt": args.ckpt, "data": args.data, "samples": args.samples,
                     "thresholds": list(thresholds), "log_mass": args.log_mass})
    print(json.dumps(payload["ratios"], indent=2))
    return 0


def cmd_gradcheck(args) -> int:
    from .blocks import TfSepConvs
    seed = _seed(args)
    dtype = np.float64 if args.precision == "double" else np.float32
    rng = np.random.default_rng(seed)
    block = TfSepConvs(args.tau, args.tau, rng=rng, dtype=dtype)
    x = Tensor(rng.standard_normal((2, args.tau, 8, 8)).astype(dtype),
               requires_grad=True)
    err = finite_diff_check(lambda t: sum_all(block.forward(t, train=False)), x,
                            h=1e-5, max_coords=30, rng=rng)
    ok = err < args.tolerance
    print(f"max_rel_error={err:.3e} tolerance={args.tolerance:g} "
          f"{'PASS' if ok else 'FAIL'}")
    return 0 if ok else 2


# -- argument wiring -------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="tfsepnet", description=__doc__)
    parser.add_argument("--version", action="version", version=VERSION)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None,
                       help="RNG seed (fallback: TFSEP_SEED env, then 0)")
        p.add_argument("--out", default=".", help="output directory")

    p = sub.add_parser("summary", help="architecture table with params and MACs")
    p.add_argument("--tau", type=int, required=True, help="base channel width")
    p.add_argument("--input", default="1x1x256x64", help="input shape NxCxFxT")
    p.add_argument("--ablate", default="",
                   help=f"comma-separated flags: {','.join(NetConfig.ABLATION_FLAGS)}")
    p.add_argument("--format", choices=("table", "csv", "json"), default="table")
    common(p)
    p.set_defaults(fn=cmd_summary)

    p = sub.add_parser("preprocess", help="WAV folder -> log-mel features")
    p.add_argument("--in", required=True, help="input directory of WAV files")
    p.add_argument("--config", default=None, help="log-mel config JSON")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="config override")
    p.add_argument("--format", choices=("bundle", "csv"), default="bundle")
    common(p)
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("train", help="train on the toy dataset or a WAV folder")
    p.add_argument("--tau", type=int, required=True)
    p.add_argument("--data", required=True, help="'toy' or a class-folder directory")
    p.add_argument("--config", default=None, help="train config JSON")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="config override")
    p.add_argument("--holdout", type=float, default=0.2,
                   help="validation fraction")
    p.add_argument("--samples-per-class", type=int, default=50,
                   help="toy dataset size per class")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--samples-per-class", type=int, default=50)
    common(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("erf", help="effective receptive field analysis")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", default="noise", help="'toy', 'noise' or a directory")
    p.add_argument("--samples", type=int, default=32)
    p.add_argument("--samples-per-class", type=int, default=50)
    p.add_argument("--input", default="1x1x256x64", help="noise input shape")
    p.add_argument("--thresholds", default="0.2,0.3,0.5")
    p.add_argument("--log-mass", action="store_true",
                   help="use log-scaled mass for the ratio")
    common(p)
    p.set_defaults(fn=cmd_erf)

    p = sub.add_parser("gradcheck", help="finite-difference check of one block")
    p.add_argument("--tau", type=int, default=8)
    p.add_argument("--precision", choices=("single", "double"), default="double")
    p.add_argument("--tolerance", type=float, default=1e-5)
    common(p)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.fn(args)
    except CliValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


def main() -> None:  # console_scripts entry
    sys.exit(run())
