"""Command-line entry point.

Exit status: 0 on success, 1 on usage errors, 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .channel import format_snr
from .checkpoint import load_codec
from .defense import DefenseMode
from .harness import (
    ConfigError,
    RunConfig,
    dataset_for,
    emit_result,
    load_config,
    run_ablation,
    run_grid,
    train_codecs,
)

log = logging.getLogger("miea")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
DEFENSE_CHOICES = ("off", "full", "permute", "substitute")
OUT_ENV = "SEMCOM_OUT"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _u64(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be in [0, 2^64)")
    return value


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE", help="key = value run configuration")
    p.add_argument("--seed", type=_u64, help="run seed (unsigned 64-bit)")
    p.add_argument("--out", metavar="DIR", help=f"output directory (default: ${OUT_ENV})")
    p.add_argument("--snr-main", metavar="LIST", help="comma-separated main-channel SNRs in dB")
    p.add_argument("--snr-eve", metavar="LIST", help="comma-separated eavesdropper SNRs in dB ('inf' = noiseless)")
    p.add_argument("--defense", choices=DEFENSE_CHOICES, help="defense mode")
    p.add_argument("--checkpoint", metavar="FILE", action="append", default=[],
                   help="codec checkpoint to use for its training SNR (repeatable)")
    p.add_argument("--dataset", metavar="DIR", help="image directory, or 'synthetic'")
    p.add_argument("--set", metavar="KEY=VALUE", action="append", default=[], dest="overrides",
                   help="override any config key (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="miea", description="Model-inversion eavesdropping lab for deep JSCC links.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    helps = {
        "train": "train one codec per main SNR and write checkpoints",
        "attack": "run both attacks over the SNR grid (defense off unless given)",
        "defend": "run the grid with the defense enabled (full unless given)",
        "grid": "run the SNR grid in the configured defense mode",
        "ablate": "run the permutation-only and substitution-only grids",
    }
    for name, text in helps.items():
        _common(sub.add_parser(name, help=text, description=text))
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        if not os.path.isfile(args.config):
            raise UsageError(f"config file not found: {args.config}")
        cfg = load_config(args.config, cfg)
    values = {}
    if args.seed is not None:
        values["seed"] = args.seed
    if args.out:
        values["out_dir"] = args.out
    if args.snr_main:
        values["main_snrs_db"] = args.snr_main
    if args.snr_eve:
        values["eaves_snrs_db"] = args.snr_eve
    if args.dataset:
        values["dataset"] = args.dataset
    if args.defense:
        values["defense"] = args.defense
    elif args.command == "defend" and cfg.defense is DefenseMode.OFF:
        values["defense"] = "full"
    for item in args.overrides:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    cfg = cfg.updated(values)
    if not cfg.out_dir:
        env = os.environ.get(OUT_ENV)
        if not env:
            raise UsageError(f"no output directory: pass --out, set out_dir in --config, or set ${OUT_ENV}")
        cfg = cfg.updated({"out_dir": env})
    if args.command == "defend" and cfg.defense is DefenseMode.OFF:
        raise UsageError("defend needs a defense mode other than 'off'")
    return cfg.validate()


def _checkpoint_map(paths) -> dict:
    out = {}
    for p in paths:
        snr = format_snr(load_codec(p).config.train_snr_db)
        if snr in out:
            raise UsageError(f"two checkpoints for main SNR {snr} dB")
        out[snr] = p
    return out


def _write_training(reports: dict, out_dir: Path) -> None:
    with open(out_dir / "training.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["main_snr_db", "epoch", "loss"])
        for snr, (_, rep) in reports.items():
            for epoch, loss in enumerate(rep.losses):
                w.writerow([snr, epoch, f"{loss:.6f}"])
    with open(out_dir / "validation.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["main_snr_db", "psnr_db", "ssim"])
        for snr, (_, rep) in reports.items():
            w.writerow([snr, f"{rep.val_psnr:.4f}", f"{rep.val_ssim:.4f}"])


def _save_secrets(result, out_dir: Path, stem: str) -> None:
    if result.scheme_sets is not None:
        path = out_dir / "secrets" / f"{stem}_scheme_sets.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        result.scheme_sets.save(path)


def _emit(result, out_dir: Path, stem: str) -> None:
    for p in emit_result(result, out_dir, stem):
        log.info("wrote %s", p)
    _save_secrets(result, out_dir, stem)


def run(args) -> None:
    cfg = resolve_config(args)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run.conf").write_text(cfg.to_text())
    checkpoints = _checkpoint_map(args.checkpoint)

    if args.command == "train":
        if checkpoints:
            raise UsageError("train does not take --checkpoint")
        _write_training(train_codecs(cfg), out_dir)
        return
    data = dataset_for(cfg)
    if args.command == "ablate":
        for result in run_ablation(cfg, checkpoints, data):
            _emit(result, out_dir, f"ablate_{result.mode.value}")
        return
    result = run_grid(cfg, checkpoints, data)
    _emit(result, out_dir, f"{args.command}_{result.mode.value}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        run(args)
    except (UsageError, ConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"miea: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to one exit code
        log.debug("runtime failure", exc_info=True)
        print(f"miea: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
