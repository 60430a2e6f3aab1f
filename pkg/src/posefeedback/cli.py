"""Command line entry point: ``posefeedback <command> [flags]``.

Exit codes: 0 success, 1 invalid input (flags, missing or malformed files), 2 runtime failure.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dataset, evaluation, synth, training
from .alignment import match_pairs
from .exceptions import PoseFeedbackError, ValidationError
from .labels import TAXONOMY, InstructionLabel, correct_index
from .motion import DctMotion, dct_decode, dct_encode, denormalize, normalize
from .verification import SCALES, check_full_loss

THREADS_ENV = "POSEFEEDBACK_THREADS"

class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _default_threads():
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"{THREADS_ENV} must be at least 1")
    return n


def _read_json(path):
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"{path}: {exc}") from exc
    if not isinstance(d, dict):
        raise ValidationError(f"{path}: top level must be an object")
    return d


def _split(path, test_subjects=dataset.TEST_SUBJECTS):
    """Train and test recordings of a dataset directory."""
    path = Path(path)
    if (path / "train").is_dir() and (path / "test").is_dir():
        return dataset.load_dataset(path / "train"), dataset.load_dataset(path / "test")
    return dataset.subject_split(dataset.load_dataset(path), test_subjects)


# ------------------------------------------------------------------- commands

GENERATE_KEYS = {"seed", "noise_scale", "frames_per_rep", "variation", "subjects", "counts",
                 "per_cell", "test_subjects"}


def cmd_generate(args):
    spec = _read_json(args.spec) if args.spec else {}
    unknown = set(spec) - GENERATE_KEYS
    if unknown:
        raise ValidationError(f"{args.spec}: unknown keys {sorted(unknown)}")
    counts = spec.get("counts", "default")
    if counts == "default":
        counts = None
    elif isinstance(counts, dict):
        parsed = {}
        for key, value in counts.items():
            pair = tuple(key.split("/"))
            if pair not in TAXONOMY:
                raise ValidationError(f"unknown category {key!r}; use exercise/instruction")
            parsed[pair] = [int(v) for v in value]
        counts = parsed
    else:
        raise ValidationError("counts must be 'default' or a mapping")
    seed = args.seed if args.seed is not None else int(spec.get("seed", 0))
    per_cell = args.per_cell if args.per_cell is not None else spec.get("per_cell")
    subjects = tuple(spec.get("subjects", (1, 2, 3, 4)))
    recs = synth.make_dataset(
        counts=counts, subjects=subjects, seed=seed,
        noise_scale=float(spec.get("noise_scale", 0.01)), frames_per_rep=int(spec.get("frames_per_rep", 40)),
        variation=float(spec.get("variation", 1.0)), per_cell=per_cell,
    )
    dataset.write_dataset(recs, args.out, tuple(spec.get("test_subjects", dataset.TEST_SUBJECTS)))
    print(f"wrote {len(recs)} sequences to {args.out}")
    return 0


def _configs(args):
    mcfg, tcfg = training.read_config(args.config) if args.config else (training.ModelConfig(), training.TrainConfig())
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        overrides["epochs"] = args.epochs
    return mcfg, replace(tcfg, **overrides)


def cmd_train(args):
    mcfg, tcfg = _configs(args)
    train_set, _ = _split(args.data)
    log_file = args.log or f"{args.out}.log"
    result = training.train(train_set, tcfg, mcfg, threads=args.threads, log_file=log_file,
                            checkpoint_path=args.out, epoch_checkpoints=args.epoch_checkpoints)
    last = result.history[-1]
    print(f"trained {tcfg.epochs} epochs on {len(train_set)} sequences; final e_loss {last.losses.e_loss:.6g}")
    print(f"checkpoint: {args.out}\nlog: {log_file}")
    return 0


def cmd_evaluate(args):
    model, _ = training.load_model(args.ckpt)
    train_set, test_set = _split(args.data)
    report = evaluation.evaluate(model, test_set, None if args.no_baseline else train_set,
                                 identity=args.identity_corrector, threads=args.threads)
    paths = evaluation.write_reports(report, args.report)
    print((Path(args.report) / "summary.txt").read_text())
    print("wrote " + ", ".join(str(p) for p in paths))
    return 0


def cmd_correct(args):
    model, _ = training.load_model(args.ckpt)
    rec = dataset.read_recording(args.input)
    seq = rec.sequence
    if seq.skeleton.n_joints != model.config.n_joints:
        raise ValidationError(f"input has {seq.skeleton.n_joints} joints, model expects {model.config.n_joints}")
    k = model.config.n_coefficients
    if seq.n_frames < k:
        raise ValidationError(f"input has {seq.n_frames} frames, need at least {k}")
    normed, norm_report = normalize(seq, model.reference) if model.reference is not None else (seq, None)
    x = dct_encode(normed, k).as_features()[None]
    logits, corrected, _ = model.forward(x)
    out = dct_decode(DctMotion.from_features(corrected.value[0], seq.n_frames, seq.skeleton), fps=seq.fps)
    if norm_report is not None:
        out = denormalize(out, norm_report)
    pred = InstructionLabel.from_index(int(np.argmax(logits.value[0]))) if logits is not None else rec.label
    target = InstructionLabel.from_index(correct_index(pred.exercise))
    dataset.write_recording(dataset.Recording(f"{rec.id}_corrected", rec.subject, target, out), args.output)
    if args.overlay:
        evaluation.export_overlay(seq, out, args.overlay)
    print(f"predicted: {pred.display_name}")
    print(f"wrote {args.output}" + (f" and overlay {args.overlay}" if args.overlay else ""))
    return 0


def cmd_pairs(args):
    recs = dataset.load_dataset(args.data)
    correct = [r for r in recs if r.is_correct]
    incorrect = [r for r in recs if not r.is_correct]
    pairs = match_pairs(incorrect, correct, threads=args.threads)
    rows = [("incorrect_id", "correct_id", "dtw")] + [(p.incorrect_id, p.correct_id, repr(p.dtw_cost)) for p in pairs]
    Path(args.out).write_text(evaluation.to_tsv(rows))
    print(f"wrote {len(pairs)} pairs to {args.out}")
    return 0


def cmd_ablate(args):
    names = [] if args.variant is None else [args.variant]
    if not names and not args.sweep_smoothness:
        raise UsageError("ablate: give --variant NAME or --sweep-smoothness")
    specs = [evaluation.AblationSpec.from_name(n) for n in names]
    mcfg, tcfg = _configs(args)
    train_set, test_set = _split(args.data)
    out = Path(args.report)
    out.mkdir(parents=True, exist_ok=True)
    results = [evaluation.run_ablation(s, train_set, test_set, mcfg, tcfg, threads=args.threads) for s in specs]
    if args.sweep_smoothness:
        results += [r for _, r in evaluation.smoothness_sweep(train_set, test_set, model_config=mcfg, train_config=tcfg)]
    rows = evaluation.ablation_rows(results)
    (out / "ablation.tsv").write_text(evaluation.to_tsv(rows))
    for r in results:
        evaluation.write_reports(r.report, out / r.spec.variant)
    print(evaluation.to_text(rows, "Ablation"))
    return 0


def cmd_gradcheck(args):
    report = check_full_loss(args.scale, seed=args.seed or 0, inject_bug=args.inject_bug)
    status = "PASS" if report.passed else "FAIL"
    print(f"{status} max_rel_error={report.max_rel_error:.3e} max_abs_error={report.max_abs_error:.3e} "
          f"worst={report.worst_param} checked={report.n_checked} tol={report.tol:g}")
    return 0 if report.passed else 2


# --------------------------------------------------------------------- parser


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (overrides config)")
    common.add_argument("--threads", type=int, default=None, help=f"worker cap (default ${THREADS_ENV} or 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="posefeedback", description="Exercise mistake classification and correction.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", parents=[common], help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--spec", help="JSON generation spec")
    p.add_argument("--per-cell", type=int, help="constant count per subject and category")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", parents=[common], help="train on the training split")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="JSON config with 'model' and 'train' sections")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="epoch log path (default: <out>.log)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--epoch-checkpoints", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="evaluate on the test split")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--report", required=True, help="output directory")
    p.add_argument("--identity-corrector", action="store_true", help="debug: replace the corrector by identity")
    p.add_argument("--no-baseline", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("correct", parents=[common], help="classify and correct one sequence file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--overlay")
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser("pairs", parents=[common], help="DTW-match incorrect to correct recordings")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pairs)

    p = sub.add_parser("ablate", parents=[common], help="train and evaluate an ablation variant")
    p.add_argument("--variant", help=", ".join(evaluation.VARIANTS))
    p.add_argument("--sweep-smoothness", action="store_true")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--report", required=True)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of the combined loss")
    p.add_argument("--scale", choices=sorted(SCALES), default="small")
    p.add_argument("--inject-bug", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if args.threads is None:
            args.threads = _default_threads()
        elif args.threads < 1:
            raise UsageError("--threads must be at least 1")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except (ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (PoseFeedbackError, OSError, ArithmeticError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
