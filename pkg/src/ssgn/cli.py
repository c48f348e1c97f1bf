"""Command-line entry points: simulate, train, denoise, evaluate."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .hsi_core import HsiCube, load_cube, normalize_per_band, save_cube
from .metrics import evaluate
from .model import init_model, load_model, save_model
from .noise import NoiseCase, NoiseSpec, simulate_case
from .pipeline import denoise_cube
from .training import AdamState, parse_config, train

log = logging.getLogger("ssgn")


def _normalized(cube: HsiCube) -> HsiCube:
    return cube if cube.norm is not None else normalize_per_band(cube)


def manifest_path(output) -> Path:
    return Path(str(output) + ".manifest")


def cmd_simulate(args) -> int:
    clean = _normalized(load_cube(args.input))
    spec = NoiseSpec(
        case=NoiseCase(args.case),
        target_snr_db=args.snr,
        gaussian_sigma_range=(args.sigma_low, args.sigma_high),
        stripe_band_count=min(args.stripe_bands, clean.bands),
        deadline_band_count=min(args.deadline_bands, clean.bands),
        seed=args.seed,
    )
    noisy, manifest = simulate_case(clean, spec)
    save_cube(noisy, args.output)
    manifest_path(args.output).write_text(manifest.to_text())
    print(f"snr {manifest.measured_snr_db:.4f} dB")
    return 0


def cmd_train(args) -> int:
    config = parse_config(Path(args.config).read_text())
    paths = sorted(Path(args.clean_dir).glob("*.hsic"))
    if not paths:
        raise FileNotFoundError(f"no .hsic cubes in {args.clean_dir}")
    cubes = [_normalized(load_cube(p)) for p in paths]
    if args.resume:
        model, state = load_model(args.resume, with_adam=True)
        if model.arch != config.arch:
            raise ValueError(f"checkpoint architecture {model.arch} differs from config {config.arch}")
    else:
        model, state = init_model(config.arch, config.seed), None
    if state is None:
        state = AdamState.zeros_like(model.parameters())
    model, train_log = train(cubes, config, model=model, state=state)
    save_model(model, args.out, adam_state=state if args.save_optimizer else None)
    log_path = Path(args.log) if args.log else Path(str(args.out) + ".loss")
    log_path.write_text(train_log.to_text())
    if train_log.epochs:
        print(f"final loss {train_log.epochs[-1].loss:.6g}")
    return 0


def cmd_denoise(args) -> int:
    model = load_model(args.model)
    if args.K is not None and args.K != model.arch.K:
        raise ValueError(f"requested K={args.K} but checkpoint was trained with K={model.arch.K}")
    cube = load_cube(args.input)
    out = denoise_cube(model, cube, assume_normalized=args.assume_normalized)
    save_cube(out, args.output)
    return 0


def _evaluation_pair(ref: HsiCube, test: HsiCube):
    """Bring both cubes into the reference's normalized domain."""
    if ref.norm is not None:
        return ref.data, test.data
    lo = ref.data.min(axis=(1, 2), keepdims=True).astype(np.float64)
    span = ref.data.max(axis=(1, 2), keepdims=True) - lo
    span = np.where(span > 0, span, 1.0)
    return (ref.data - lo) / span, (test.data - lo) / span


def cmd_evaluate(args) -> int:
    ref, test = load_cube(args.ref), load_cube(args.test)
    if ref.shape != test.shape:
        raise ValueError(f"cube dimensions differ: {ref.shape} vs {test.shape}")
    report = evaluate(*_evaluation_pair(ref, test))
    text = report.render()
    Path(args.report).write_text(text)
    print(text.splitlines()[0])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssgn", description="Hyperspectral mixed-noise removal")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="degrade a clean cube with one of the five noise cases")
    p.add_argument("--input", required=True)
    p.add_argument("--case", type=int, choices=[1, 2, 3, 4, 5], required=True)
    p.add_argument("--snr", type=float, default=None, help="target SNR in dB")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.add_argument("--sigma-low", type=float, default=0.04)
    p.add_argument("--sigma-high", type=float, default=0.16)
    p.add_argument("--stripe-bands", type=int, default=10)
    p.add_argument("--deadline-bands", type=int, default=20)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train a model on a directory of clean .hsic cubes")
    p.add_argument("--clean-dir", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None, help="loss log path (default: <out>.loss)")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--save-optimizer", action="store_true", help="store Adam moments in the checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("denoise", help="denoise every band of a cube")
    p.add_argument("--input", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--K", type=int, default=None)
    p.add_argument("--assume-normalized", action="store_true",
                   help="input is already in the normalized domain (e.g. simulate output)")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("evaluate", help="MPSNR / MSSIM / MSA of a test cube against a reference")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - one-line diagnostic, nonzero exit
        print(f"ssgn {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
