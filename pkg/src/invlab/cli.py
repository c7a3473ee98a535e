"""Command-line entry point: ``invlab <subcommand> ...``.

Failures print exactly one JSON line to stderr, e.g.
``{"error": "usage", "message": "..."}``. Usage and validation problems
exit with 2, runtime failures with 1.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import model, surface, training
from .datasynth import GeneratorConfig, generate_dataset
from .harness import archive, report, splits, sweep

EXIT_USAGE = 2
EXIT_RUNTIME = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def non_negative_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"lambda must be >= 0, got {v:g}")
    return v


def lambda_list(text):
    return [non_negative_float(t) for t in text.split(",") if t.strip()]


def positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _add_training_flags(p):
    p.add_argument("--max-epochs", type=positive_int, default=500,
                   help="epoch cap per training run (default 500)")
    p.add_argument("--patience", type=positive_int, default=10,
                   help="early-stopping patience in epochs (default 10)")


def build_parser():
    parser = _Parser(prog="invlab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="log progress to stderr (-vv for debug)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-surface", help="synthesize a fractal height map")
    p.add_argument("--H", type=float, default=0.5, help="Hurst exponent")
    p.add_argument("--C", type=float, default=1e11, help="flat spectral level")
    p.add_argument("--kl", type=float, default=16.0, help="lower roll-off wavenumber")
    p.add_argument("--kr", type=float, default=16.0, help="upper roll-off wavenumber")
    p.add_argument("--ks", type=float, default=64.0, help="cutoff wavenumber")
    p.add_argument("--n", type=positive_int, default=256, help="map side (power of two)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rayleigh", action="store_true",
                   help="Rayleigh-distributed amplitudes instead of exact sqrt(psd)")
    p.add_argument("--out", required=True, help="output base path (.csv/.pgm/.json added)")

    p = sub.add_parser("gen-data", help="write a synthetic trial archive")
    p.add_argument("--n-per-cond", type=positive_int, default=100,
                   help="trials per (texture, movement) condition")
    p.add_argument("--snr", type=float, default=0.8, help="texture amplitude")
    p.add_argument("--leak", type=float, default=0.8, help="movement leakage amplitude")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="archive directory")

    p = sub.add_parser("train", help="train a single network on one split")
    p.add_argument("--archive", required=True)
    p.add_argument("--lambda", dest="lam", type=non_negative_float, default=0.0,
                   help="adversarial weight (>= 0)")
    p.add_argument("--seed", type=int, default=0, help="split and network seed")
    p.add_argument("--rep", type=int, default=0, help="split repetition to use")
    p.add_argument("--fold", type=int, default=0, help="test fold to hold out")
    _add_training_flags(p)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("sweep", help="cross-validated lambda sweep")
    p.add_argument("--archive", required=True)
    p.add_argument("--lambdas", type=lambda_list, default=[0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5],
                   help="comma-separated lambda values")
    p.add_argument("--reps", type=positive_int, default=10)
    p.add_argument("--folds", type=positive_int, default=5)
    p.add_argument("--seed", type=int, default=0)
    _add_training_flags(p)
    p.add_argument("--workers", type=positive_int, default=None,
                   help="parallel cells (default: $INVLAB_THREADS or 1)")
    p.add_argument("--resume", action="store_true", help="keep finished cells from --out")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("report", help="render CSV and SVG reports from sweep results")
    p.add_argument("--result", required=True, help="results.csv or the sweep directory")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("verify", help="audit a trial archive")
    p.add_argument("--archive", required=True)
    return parser


def cmd_gen_surface(args):
    spec = surface.SurfaceSpec(H=args.H, C=args.C, k_l=args.kl, k_r=args.kr, k_s=args.ks)
    hmap = surface.synthesize_surface(spec, N=args.n, seed=args.seed, rayleigh=args.rayleigh)
    paths = surface.export_heightmap(hmap, args.out)
    print(json.dumps({"rms": hmap.rms(), "files": [str(p) for p in paths.values()]}))


def cmd_gen_data(args):
    config = GeneratorConfig(snr_texture=args.snr, leak_movement=args.leak, seed=args.seed)
    trials = generate_dataset(args.n_per_cond, config)
    archive.write_archive(trials, args.out)
    print(json.dumps({"archive": str(args.out), "n_trials": len(trials)}))


def cmd_train(args):
    trials = archive.read_archive(args.archive)
    plans = splits.make_splits(trials.condition, reps=args.rep + 1, seed=args.seed)
    plan = next((p for p in plans if p.rep == args.rep and p.fold == args.fold), None)
    if plan is None:
        raise ValueError(f"no split for rep {args.rep} fold {args.fold}")
    config = training.TrainConfig(lam=args.lam, seed=args.seed, max_epochs=args.max_epochs,
                                  patience=args.patience)
    net = model.build_network(seed=args.seed)
    ckpt, hist = training.train_adversarial(trials.subset(plan.train),
                                            trials.subset(plan.val), net, config)
    metrics = training.evaluate(ckpt, trials.subset(plan.test))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt.save(out / "checkpoint.bin")
    hist.to_csv(out / "history.csv")
    summary = {"lambda": args.lam, "seed": args.seed, "rep": args.rep, "fold": args.fold,
               "best_epoch": hist.best_epoch, "n_epochs": len(hist.rows),
               "classifier_accuracy": metrics["classifier_accuracy"],
               "adversary_accuracy": metrics["adversary_accuracy"],
               "confusion_3x3": metrics["confusion_3x3"].tolist(),
               "confusion_2x2": metrics["confusion_2x2"].tolist()}
    (out / "metrics.json").write_text(json.dumps(summary, indent=1) + "\n")
    print(json.dumps({k: summary[k] for k in ("classifier_accuracy", "adversary_accuracy",
                                               "best_epoch")}))


def cmd_sweep(args):
    trials = archive.read_archive(args.archive)
    template = replace(training.TrainConfig(), max_epochs=args.max_epochs,
                       patience=args.patience)
    result = sweep.run_sweep(trials, args.lambdas, template, reps=args.reps, folds=args.folds,
                             seed=args.seed, out_dir=args.out, resume=args.resume,
                             workers=args.workers)
    failed = sum(r["status"] != "ok" for r in result.rows)
    print(json.dumps({"cells": len(result.rows), "failed": failed, "out": str(args.out)}))


def cmd_report(args):
    result = sweep.read_results(args.result)
    paths = report.emit_report(result, args.out)
    print(json.dumps({"files": [str(p) for p in paths.values()]}))


def cmd_verify(args):
    findings = archive.audit_archive(args.archive)
    if findings["problems"]:
        raise RuntimeError("archive audit failed: " + "; ".join(findings["problems"]))
    print(json.dumps({"ok": True, **findings}))


COMMANDS = {"gen-surface": cmd_gen_surface, "gen-data": cmd_gen_data, "train": cmd_train,
            "sweep": cmd_sweep, "report": cmd_report, "verify": cmd_verify}


def _fail(kind, message, code):
    print(json.dumps({"error": kind, "message": str(message).replace("\n", " ")}),
          file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    logging.basicConfig(level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (ValueError, archive.ArchiveError) as exc:
        return _fail("invalid", exc, EXIT_USAGE)
    except Exception as exc:
        return _fail(type(exc).__name__, exc, EXIT_RUNTIME)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
