"""``rscsnn`` command line: train, attack, verify-theorems, equivalence, gen-dataset.

Exit codes: 0 ok, 2 usage/config, 3 I/O or file format, 4 numeric failure,
5 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import sys
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .attacks import FAMILIES, AttackConfig
from .coding import DEFAULT_T, SCHEMES
from .datasets import KINDS, make_dataset
from .io import (Checkpoint, ConfigError, FormatError, atomic_write, directory_lock, load_checkpoint,
                 load_config, load_dataset, save_checkpoint, save_dataset)
from .metrics import evaluate
from .model import Classifier
from .snn import Network, toy_spec
from .theory import equivalence_study, verify_theorems
from .training import NumericDivergence, TeacherModel, train, train_teacher_ann

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC, EXIT_VERIFY = 0, 2, 3, 4, 5
MIN_THEOREM_SAMPLES = 10_000


class UsageError(Exception):
    pass


def _fraction(text: str) -> float:
    """Parse ``0.03`` or ``8/255``."""
    try:
        return float(Fraction(text))
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"not a number or fraction: {text!r}") from exc


def _echo(title: str, doc) -> None:
    print(f"# {title}")
    print(yaml.safe_dump(doc, sort_keys=True, default_flow_style=False).rstrip())
    sys.stdout.flush()


# -- train ------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = load_config(args.config)
    overrides = {}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        try:
            cfg.train = replace(cfg.train, **overrides)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if args.sigma2 is not None:
        try:
            cfg.coding = replace(cfg.coding, sigma2=args.sigma2)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    dataset = args.dataset or cfg.paths.dataset
    if not dataset:
        raise ConfigError("no dataset given (paths.dataset or --dataset)")
    out = Path(args.output or cfg.paths.output)
    x, y, k = load_dataset(dataset)
    val = load_dataset(cfg.paths.val_dataset)[:2] if cfg.paths.val_dataset else None
    spec = cfg.network or toy_spec(x.shape[1:], k)
    if tuple(spec.input_shape) != tuple(x.shape[1:]):
        raise ConfigError(f"network input_shape {tuple(spec.input_shape)} does not match dataset {x.shape[1:]}")
    _echo("config", {**cfg.echo(), "network": spec.to_dict(), "dataset": str(dataset), "output": str(out)})

    with directory_lock(out):
        teacher = None
        if cfg.train.loss_mode == "e_rsct":
            if cfg.paths.teacher:
                teacher = TeacherModel(load_checkpoint(cfg.paths.teacher).build())
            else:
                teacher = train_teacher_ann(spec, x, y, cfg.train, seed=cfg.init_seed)
                save_checkpoint(out / "teacher.ckpt", Checkpoint.from_classifier(
                    teacher.classifier, {"init": cfg.init_seed}, {"role": "teacher"}))
            print(f"teacher sha256 {teacher.param_hash()}")
        model = Classifier(Network(spec, seed=cfg.init_seed), cfg.coding)

        def progress(m):
            print(f"epoch {m.epoch}: loss={m.loss:.4f} train_acc={m.train_accuracy:.4f} "
                  f"val_acc={m.val_accuracy:.4f} lr={m.lr:.5f}")
            sys.stdout.flush()

        result = train(model, x, y, cfg.train, teacher=teacher, val=val, progress=progress)
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "loss", "loss_ps", "loss_kd", "train_accuracy", "val_accuracy", "lr"])
        for m in result.history:
            w.writerow([m.epoch, f"{m.loss:.8f}", f"{m.loss_ps:.8f}", f"{m.loss_kd:.8f}",
                        f"{m.train_accuracy:.6f}", f"{m.val_accuracy:.6f}", f"{m.lr:.8f}"])
        atomic_write(out / "metrics.csv", buf.getvalue().encode())
        last = result.history[-1] if result.history else None
        meta = {"epochs": cfg.train.epochs, "loss": last.loss if last else None,
                "train": cfg.train.to_dict()}
        save_checkpoint(out / "model.ckpt", Checkpoint.from_classifier(
            model, {"init": cfg.init_seed, "train": cfg.train.seed, "coding": cfg.coding.seed}, meta))
    print(f"wrote {out / 'model.ckpt'} and {out / 'metrics.csv'}")
    return EXIT_OK


# -- attack -----------------------------------------------------------------------

def cmd_attack(args) -> int:
    try:
        acfg = AttackConfig(args.attack, args.epsilon, args.alpha, args.steps, args.eot_samples,
                            args.random_start, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.n_eval_noise < 1:
        raise UsageError("--n-eval-noise must be >= 1")
    model = load_checkpoint(args.checkpoint).build()
    x, y, _ = load_dataset(args.dataset)
    if args.limit:
        x, y = x[:args.limit], y[:args.limit]
    _echo("attack", {**acfg.to_dict(), "checkpoint": str(args.checkpoint), "dataset": str(args.dataset),
                     "n_eval_noise": args.n_eval_noise, "vote": args.vote})
    report = evaluate(model, x, y, [acfg], n_eval_noise=args.n_eval_noise, seed=args.seed, vote=args.vote)
    out = Path(args.output)
    with directory_lock(out):
        atomic_write(out / "report.csv", report.to_csv().encode())
        atomic_write(out / "report.txt", report.to_text().encode())
    print(report.to_text(), end="")
    return EXIT_OK


# -- verify-theorems -------------------------------------------------------------------

def cmd_verify(args) -> int:
    if args.n_samples < MIN_THEOREM_SAMPLES:
        raise UsageError(f"--n-samples must be >= {MIN_THEOREM_SAMPLES}, got {args.n_samples}")
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    report = verify_theorems(args.n_samples, args.seed, args.trials)
    if args.output:
        atomic_write(Path(args.output), report.to_csv().encode())
    print(report.to_text(), end="")
    return EXIT_OK if report.passed else EXIT_VERIFY


# -- equivalence ---------------------------------------------------------------------

EQUIVALENCE_PAIRS = (("rsc1", "poisson"), ("direct", "poisson"), ("rsc1", "direct"))


def equivalence_csv(x, t_poisson: int, t_rs: int, sigma2: float, seed: int) -> tuple[str, dict]:
    reports = [equivalence_study(x, t_poisson, t_rs, sigma2, seed, a, b) for a, b in EQUIVALENCE_PAIRS]
    names = [f"{a}_vs_{b}" for a, b in EQUIVALENCE_PAIRS]
    per = []
    for rep in reports:
        col = np.full(len(x), np.nan)
        keep = np.setdiff1d(np.arange(len(x)), rep.skipped)
        col[keep] = rep.similarities
        per.append(col)
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample"] + names)
    for i in range(len(x)):
        w.writerow([i] + [f"{c[i]:.8f}" for c in per])
    avg = {n: r.avg_cs for n, r in zip(names, reports)}
    w.writerow(["avg"] + [f"{avg[n]:.8f}" for n in names])
    return buf.getvalue(), avg


def cmd_equivalence(args) -> int:
    x, _, _ = load_dataset(args.dataset)
    text, avg = equivalence_csv(x, args.t_poisson, args.t_rs, args.sigma2, args.seed)
    atomic_write(Path(args.output), text.encode())
    for name, v in avg.items():
        print(f"avg_cs {name}: {v:.6f}")
    return EXIT_OK


# -- gen-dataset ---------------------------------------------------------------------

def cmd_gen_dataset(args) -> int:
    try:
        x, y = make_dataset(args.kind, args.n, args.image_size, args.classes, args.seed,
                            args.contrast, args.noise, args.background, texture=args.texture, flip=args.flip)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    data, labels = save_dataset(args.output, x, y, args.classes)
    print(f"wrote {data} and {labels} ({args.n} samples, {args.classes} classes)")
    return EXIT_OK


# -- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(prog="rscsnn", formatter_class=fmt,
                                description="Spiking networks with randomized smoothing coding.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", formatter_class=fmt, help="train a model from a YAML run config")
    t.add_argument("--config", required=True, help="YAML run config")
    t.add_argument("--dataset", default=None, help="dataset prefix (overrides paths.dataset)")
    t.add_argument("--output", default=None, help="output directory (overrides paths.output)")
    t.add_argument("--epochs", type=int, default=None, help="override train.epochs")
    t.add_argument("--seed", type=int, default=None, help="override train.seed")
    t.add_argument("--sigma2", type=float, default=None, help="override coding.sigma2 (noise variance)")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("attack", formatter_class=fmt, help="evaluate a checkpoint under attack")
    a.add_argument("--checkpoint", required=True, help="model checkpoint (.ckpt)")
    a.add_argument("--dataset", required=True, help="dataset prefix")
    a.add_argument("--output", default="runs/attack", help="output directory")
    a.add_argument("--attack", choices=FAMILIES, default="pgd", help="attack family")
    a.add_argument("--epsilon", type=_fraction, default=8 / 255, help="l-inf budget, e.g. 8/255")
    a.add_argument("--alpha", type=_fraction, default=0.01, help="PGD step size")
    a.add_argument("--steps", type=int, default=7, help="PGD iterations")
    a.add_argument("--eot-samples", type=int, default=8, help="noise draws per EOT gradient")
    a.add_argument("--random-start", action="store_true", default=False, help="uniform start in the eps-ball")
    a.add_argument("--seed", type=int, default=0, help="attack and evaluation seed")
    a.add_argument("--n-eval-noise", type=int, default=1, help="coding-noise draws at evaluation")
    a.add_argument("--vote", action="store_true", default=False, help="majority vote over noise draws")
    a.add_argument("--limit", type=int, default=0, help="use only the first N samples (0 = all)")
    a.set_defaults(func=cmd_attack)

    v = sub.add_parser("verify-theorems", formatter_class=fmt, help="Monte-Carlo covariance checks")
    v.add_argument("--n-samples", type=int, default=1_000_000, help=f"Monte-Carlo draws per check (>= {MIN_THEOREM_SAMPLES})")
    v.add_argument("--seed", type=int, default=0, help="master seed")
    v.add_argument("--trials", type=int, default=20, help="random (x, eps, W) triples")
    v.add_argument("--output", default=None, help="optional CSV path for per-check rows")
    v.set_defaults(func=cmd_verify)

    e = sub.add_parser("equivalence", formatter_class=fmt, help="coding cosine-similarity study")
    e.add_argument("--dataset", required=True, help="dataset prefix")
    e.add_argument("--output", default="equivalence.csv", help="per-sample CSV path")
    e.add_argument("--t-poisson", type=int, default=DEFAULT_T["poisson"], help="Poisson timesteps")
    e.add_argument("--t-rs", type=int, default=DEFAULT_T["rsc1"], help="RSC and direct timesteps")
    e.add_argument("--sigma2", type=float, default=0.01, help="RSC noise variance")
    e.add_argument("--seed", type=int, default=0, help="coding seed")
    e.set_defaults(func=cmd_equivalence)

    g = sub.add_parser("gen-dataset", formatter_class=fmt, help="write a synthetic dataset")
    g.add_argument("--kind", choices=KINDS, default="stripes", help="pattern family")
    g.add_argument("--n", type=int, default=1000, help="number of samples")
    g.add_argument("--image-size", type=int, default=8, help="side length in pixels")
    g.add_argument("--classes", type=int, default=2, help="number of classes")
    g.add_argument("--seed", type=int, default=0, help="generator seed")
    g.add_argument("--contrast", type=float, default=0.3, help="pattern amplitude")
    g.add_argument("--noise", type=float, default=0.1, help="pixel noise std")
    g.add_argument("--background", type=float, default=0.5, help="mean grey level")
    g.add_argument("--texture", type=float, default=0.0, help="amplitude of the faint per-class texture")
    g.add_argument("--flip", type=float, default=0.0, help="probability of showing another class's pattern")
    g.add_argument("--output", required=True, help="output prefix (.tds/.tlb appended)")
    g.set_defaults(func=cmd_gen_dataset)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FormatError, RuntimeError) as exc:
        if isinstance(exc, NumericDivergence):
            print(f"numeric failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
