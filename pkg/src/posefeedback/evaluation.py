"""Evaluation protocol: accuracy, classifier-judged correction success, DTW to input,
the retrieval baseline and ablation variants.

Averages are reported two ways. ``average_*`` is the mean over categories (each
of the 11 categories weighs the same); ``overall_*`` weighs every test sample
the same.
"""

import csv
import io
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .alignment import dtw, dtw_table
from .exceptions import NoCorrectCandidate, ValidationError
from .labels import DISPLAY_NAMES, NUM_LABELS, TAXONOMY, correct_index, exercise_of
from .model import ModelConfig
from .motion import DctMotion, dct_decode, dct_encode
from .training import TrainConfig, normalize_recordings, train

EXERCISES = ("squat", "lunge", "plank")


@dataclass
class EvalReport:
    counts: np.ndarray
    confusion: np.ndarray = None
    success: np.ndarray = None
    success_any_correct: np.ndarray = None
    corrected_as_correct: np.ndarray = None
    dtw: np.ndarray = None
    baseline_dtw: np.ndarray = None
    label: str = ""

    @property
    def accuracy(self):
        if self.confusion is None:
            return None
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.diag(self.confusion) / self.confusion.sum(axis=1)

    @property
    def average_accuracy(self):
        return _macro(self.accuracy)

    @property
    def overall_accuracy(self):
        if self.confusion is None:
            return None
        return float(np.trace(self.confusion) / self.confusion.sum())

    @property
    def average_success(self):
        return _macro(self.success)

    @property
    def overall_success(self):
        return _weighted(self.success, self.counts)

    @property
    def average_dtw(self):
        return _macro(self.dtw)

    @property
    def average_baseline_dtw(self):
        return _macro(self.baseline_dtw)

    def exercise_average(self, values, exercise):
        if values is None:
            return None
        idx = [i for i, (e, _) in enumerate(TAXONOMY) if e == exercise]
        return _macro(np.asarray(values)[idx])


def _macro(values):
    if values is None:
        return None
    values = np.asarray(values, dtype=np.float64)
    ok = ~np.isnan(values)
    return float(values[ok].mean()) if ok.any() else float("nan")


def _weighted(values, counts):
    if values is None:
        return None
    values = np.asarray(values, dtype=np.float64)
    ok = ~np.isnan(values)
    return float((values[ok] * counts[ok]).sum() / counts[ok].sum())


def _per_category(labels, values):
    out = np.full(NUM_LABELS, np.nan)
    for c in range(NUM_LABELS):
        mask = labels == c
        if mask.any():
            out[c] = np.mean(values[mask])
    return out


# ------------------------------------------------------------------ inference


@dataclass
class Inference:
    recordings: list
    labels: np.ndarray
    features: np.ndarray
    logits: np.ndarray = None
    corrected: np.ndarray = None
    corrected_logits: np.ndarray = None

    @property
    def predicted(self):
        return None if self.logits is None else np.argmax(self.logits, axis=1)


def _prepare(model, recordings):
    recordings = list(recordings)
    if not recordings:
        raise ValidationError("empty evaluation set")
    if getattr(model, "reference", None) is not None:
        recordings = normalize_recordings(recordings, model.reference)
    k = model.config.n_coefficients
    features = np.stack([dct_encode(r.sequence, k).as_features() for r in recordings])
    labels = np.array([r.label.flat_index for r in recordings])
    return recordings, features, labels


def _forward(model, x, batch_size=64):
    logits, corrected = [], []
    for i in range(0, len(x), batch_size):
        lg, co, _ = model.forward(x[i:i + batch_size])
        logits.append(None if lg is None else lg.value)
        corrected.append(None if co is None else co.value)
    lg = None if logits[0] is None else np.concatenate(logits)
    co = None if corrected[0] is None else np.concatenate(corrected)
    return lg, co


def _reencode(features, rec, k):
    seq = rec.sequence
    decoded = dct_decode(DctMotion.from_features(features, seq.n_frames, seq.skeleton), fps=seq.fps)
    return dct_encode(decoded, k).as_features()


def infer(model, recordings, judge=None, identity=False):
    """Run classification and correction (predicted-label feedback) in eval mode.

    ``judge`` classifies the corrected outputs; it defaults to ``model``.
    ``identity`` replaces the corrector with the identity map.
    """
    recs, x, labels = _prepare(model, recordings)
    logits, corrected = _forward(model, x)
    if identity:
        corrected = x.copy()
    out = Inference(recs, labels, x, logits, corrected)
    judge = judge or model
    if corrected is not None and judge.config.use_classifier:
        k = judge.config.n_coefficients
        reencoded = np.stack([_reencode(c, r, k) for c, r in zip(corrected, recs)])
        out.corrected_logits, _ = _forward(judge, reencoded)
    return out


def decoded_pair(inference, i):
    """Decoded input and decoded corrected output of sample ``i``."""
    rec = inference.recordings[i]
    n, sk, fps = rec.sequence.n_frames, rec.sequence.skeleton, rec.sequence.fps
    inp = dct_decode(DctMotion.from_features(inference.features[i], n, sk), fps=fps)
    out = dct_decode(DctMotion.from_features(inference.corrected[i], n, sk), fps=fps)
    return inp, out


# -------------------------------------------------------------------- metrics


def confusion_matrix(labels, predicted):
    m = np.zeros((NUM_LABELS, NUM_LABELS), dtype=np.int64)
    np.add.at(m, (labels, predicted), 1)
    return m


def classification_accuracy(model, test):
    """``(per-category accuracy, average, confusion)``."""
    inf = infer(model, test)
    if inf.logits is None:
        raise ValidationError("model has no classification branch")
    conf = confusion_matrix(inf.labels, inf.predicted)
    report = EvalReport(np.bincount(inf.labels, minlength=NUM_LABELS), confusion=conf)
    return report.accuracy, report.average_accuracy, conf


def _success_arrays(inf):
    judged = np.argmax(inf.corrected_logits, axis=1)
    target = np.array([correct_index(r.exercise) for r in inf.recordings])
    strict = judged == target
    correct_ids = {correct_index(e) for e in EXERCISES}
    loose = np.array([j in correct_ids for j in judged])
    return strict, loose


def correction_success(model, test, judge=None, identity=False):
    """``(per-category success, average)``; success means the judge assigns the
    corrected output to the Correct category of the input's own exercise."""
    inf = infer(model, test, judge=judge, identity=identity)
    if inf.corrected_logits is None:
        raise ValidationError("correction success needs a corrector and a classifier")
    strict, _ = _success_arrays(inf)
    per_cat = _per_category(inf.labels, strict.astype(float))
    return per_cat, _macro(per_cat)


def _dtw_values(inf, threads=1):
    return np.array([dtw(*decoded_pair(inf, i)) for i in range(len(inf.recordings))])


def dtw_to_input(model, test, identity=False):
    """``(per-category mean DTW between decoded input and decoded output, average)``."""
    inf = infer(model, test, identity=identity)
    if inf.corrected is None:
        raise ValidationError("model has no correction branch")
    per_cat = _per_category(inf.labels, _dtw_values(inf))
    return per_cat, _macro(per_cat)


def retrieval_baseline(train_set, sample, exercise=None, threads=1):
    """The correct training recording of ``exercise`` with the lowest DTW to ``sample``.

    ``exercise`` defaults to the sample's own. Ties go to the lowest id. The
    returned recording is the stored object, unmodified.
    """
    exercise = exercise or sample.exercise
    pool = sorted((r for r in train_set if r.is_correct and r.exercise == exercise), key=lambda r: r.id)
    if not pool:
        raise NoCorrectCandidate(getattr(sample, "subject", None), exercise)
    seq = sample.sequence if hasattr(sample, "sequence") else sample
    costs = dtw_table([seq], [r.sequence for r in pool], threads)[0]
    return pool[int(np.argmin(costs))]


# ------------------------------------------------------------------- protocol


def evaluate(model, test, train_set=None, judge=None, identity=False, threads=1, label=""):
    """Full report. ``train_set`` enables the retrieval baseline.

    The baseline is conditioned on the exercise of the predicted label (the
    true exercise when the model has no classifier) and compared against the
    same decoded input as the corrector.
    """
    inf = infer(model, test, judge=judge, identity=identity)
    counts = np.bincount(inf.labels, minlength=NUM_LABELS)
    report = EvalReport(counts, label=label)
    if inf.logits is not None:
        report.confusion = confusion_matrix(inf.labels, inf.predicted)
    if inf.corrected is not None:
        report.dtw = _per_category(inf.labels, _dtw_values(inf, threads))
        if inf.corrected_logits is not None:
            strict, loose = _success_arrays(inf)
            report.success = _per_category(inf.labels, strict.astype(float))
            report.success_any_correct = _per_category(inf.labels, loose.astype(float))
            report.corrected_as_correct = np.bincount(inf.labels[strict], minlength=NUM_LABELS)
    if train_set is not None:
        pool = list(train_set)
        if getattr(model, "reference", None) is not None:
            pool = normalize_recordings(pool, model.reference)
        values = []
        for i, rec in enumerate(inf.recordings):
            exercise = rec.exercise if inf.logits is None else exercise_of(int(inf.predicted[i]))
            found = retrieval_baseline(pool, rec, exercise, threads)
            inp = dct_decode(DctMotion.from_features(inf.features[i], rec.sequence.n_frames, rec.sequence.skeleton))
            values.append(dtw(inp, found.sequence))
        report.baseline_dtw = _per_category(inf.labels, np.array(values))
    return report


# ------------------------------------------------------------------ ablations

VARIANTS = {
    "SeparatedClassifierSimple": ({"use_corrector": False, "feedback": False, "classifier_kind": "simple"}, {}),
    "SeparatedClassifier": ({"use_corrector": False, "feedback": False}, {}),
    "SeparatedCorrector": ({"use_classifier": False, "feedback": False}, {}),
    "CombinedNoFeedback": ({"feedback": False}, {}),
    "CombinedNoSmoothness": ({}, {"w_smooth": 0.0}),
    "WithTMP": ({"temporal_pool": True}, {}),
    "Full": ({}, {}),
}
SEPARATED_CORRECTOR_EPOCH_FACTOR = 3
SMOOTHNESS_GRID = (1e-1, 1e-2, 1e-3, 1e-5, 0.0)


@dataclass(frozen=True)
class AblationSpec:
    variant: str
    model_overrides: dict = field(default_factory=dict)
    train_overrides: dict = field(default_factory=dict)

    @classmethod
    def from_name(cls, name, **train_overrides):
        if name not in VARIANTS:
            raise ValidationError(f"unknown ablation variant {name!r}; choose from {sorted(VARIANTS)}")
        model_o, train_o = VARIANTS[name]
        return cls(name, dict(model_o), {**train_o, **train_overrides})

    def configs(self, model_config=None, train_config=None):
        mcfg = replace(model_config or ModelConfig(), **self.model_overrides)
        tcfg = replace(train_config or TrainConfig(), **self.train_overrides)
        if self.variant == "SeparatedCorrector" and "epochs" not in self.train_overrides:
            tcfg = replace(tcfg, epochs=tcfg.epochs * SEPARATED_CORRECTOR_EPOCH_FACTOR)
        return mcfg, tcfg


@dataclass
class AblationResult:
    spec: AblationSpec
    report: EvalReport
    history: list


def run_ablation(spec, train_set, test_set, model_config=None, train_config=None, judge=None, threads=1):
    """Train the variant and evaluate it on ``test_set``.

    A corrector-only variant is judged by ``judge``; when absent, a separated
    classifier is trained with the same base configuration.
    """
    if isinstance(spec, str):
        spec = AblationSpec.from_name(spec)
    mcfg, tcfg = spec.configs(model_config, train_config)
    result = train(train_set, tcfg, mcfg, threads=threads)
    model = result.model
    if not mcfg.use_classifier and judge is None:
        jm, jt = AblationSpec.from_name("SeparatedClassifier").configs(model_config, train_config)
        judge = train(train_set, jt, jm, threads=threads).model
    report = evaluate(model, test_set, judge=judge, threads=threads, label=spec.variant)
    return AblationResult(spec, report, result.history)


def smoothness_sweep(train_set, test_set, weights=SMOOTHNESS_GRID, model_config=None, train_config=None):
    out = []
    for w in weights:
        spec = AblationSpec(f"w_smooth={w:g}", {}, {"w_smooth": float(w)})
        out.append((w, run_ablation(spec, train_set, test_set, model_config, train_config)))
    return out


# -------------------------------------------------------------------- reports


def _pct(x):
    return "-" if x is None or np.isnan(x) else f"{100 * x:.1f}"


def _num(x):
    return "-" if x is None or np.isnan(x) else f"{x:.4f}"


def _rows_by_category():
    for c, (exercise, instruction) in enumerate(TAXONOMY):
        yield c, DISPLAY_NAMES[exercise], DISPLAY_NAMES[instruction]


def _val(arr, c):
    return None if arr is None else arr[c]


def results_table(report):
    """Per-category classification accuracy and correction success."""
    rows = [("exercise", "instruction", "count", "classification_accuracy_pct", "correction_success_pct")]
    for c, ex, ins in _rows_by_category():
        rows.append((ex, ins, str(report.counts[c]), _pct(_val(report.accuracy, c)), _pct(_val(report.success, c))))
    rows.append(("Average", "", str(report.counts.sum()), _pct(report.average_accuracy), _pct(report.average_success)))
    rows.append(("Overall (per sample)", "", str(report.counts.sum()),
                 _pct(report.overall_accuracy), _pct(report.overall_success)))
    return rows


def dtw_table_rows(report):
    """Per-category DTW between input and output: retrieval baseline vs corrector."""
    rows = [("exercise", "instruction", "retrieval_baseline", "corrector")]
    for c, ex, ins in _rows_by_category():
        rows.append((ex, ins, _num(_val(report.baseline_dtw, c)), _num(_val(report.dtw, c))))
    rows.append(("Average", "", _num(report.average_baseline_dtw), _num(report.average_dtw)))
    return rows


def confusion_rows(report):
    """Confusion matrix with per-category accuracy and per-exercise averages."""
    short = [f"{DISPLAY_NAMES[e]}/{DISPLAY_NAMES[i]}" for e, i in TAXONOMY]
    rows = [("exercise", "instruction", *short, "accuracy_pct", "exercise_average_pct", "average_pct")]
    acc = report.accuracy
    for c, ex, ins in _rows_by_category():
        exercise = TAXONOMY[c][0]
        rows.append((ex, ins, *(str(v) for v in report.confusion[c]), _pct(acc[c]),
                     _pct(report.exercise_average(acc, exercise)), _pct(report.average_accuracy)))
    return rows


def correction_rows(report):
    """How many corrected outputs are judged correct vs incorrect per category."""
    rows = [("exercise", "instruction", "correct", "incorrect", "success_pct",
             "exercise_average_pct", "average_pct", "success_any_correct_pct")]
    for c, ex, ins in _rows_by_category():
        ok = int(report.corrected_as_correct[c])
        exercise = TAXONOMY[c][0]
        rows.append((ex, ins, str(ok), str(int(report.counts[c]) - ok), _pct(report.success[c]),
                     _pct(report.exercise_average(report.success, exercise)), _pct(report.average_success),
                     _pct(report.success_any_correct[c])))
    return rows


def ablation_rows(results):
    rows = [("variant", "classification_accuracy_pct", "correction_success_pct", "average_dtw")]
    for r in results:
        rep = r.report
        rows.append((r.spec.variant, _pct(rep.average_accuracy), _pct(rep.average_success), _num(rep.average_dtw)))
    return rows


def to_tsv(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter="\t", lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()


def to_text(rows, title=""):
    widths = [max(len(str(r[i])) for r in rows) for i in range(len(rows[0]))]
    lines = [title] if title else []
    for n, r in enumerate(rows):
        lines.append("  ".join(str(v).ljust(w) for v, w in zip(r, widths)).rstrip())
        if n == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_reports(report, out_dir):
    """Write delimited tables and a combined human-readable summary; returns written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tables = [("results", "Classification and correction", results_table(report))]
    if report.dtw is not None:
        tables.append(("dtw", "DTW between input and output (lower is better)", dtw_table_rows(report)))
    if report.confusion is not None:
        tables.append(("confusion", "Classification confusion matrix (rows: truth)", confusion_rows(report)))
    if report.success is not None:
        tables.append(("correction", "Corrected outputs judged correct", correction_rows(report)))
    paths, text = [], []
    for name, title, rows in tables:
        path = out_dir / f"{name}.tsv"
        path.write_text(to_tsv(rows))
        paths.append(path)
        text.append(to_text(rows, title))
    summary = out_dir / "summary.txt"
    summary.write_text("\n".join(text))
    paths.append(summary)
    return paths


# -------------------------------------------------------------------- overlay

OVERLAY_COLUMNS = ("frame", "role", "color", "joint", "x", "y", "z")


def overlay_rows(input_seq, corrected_seq):
    """Per-frame joint coordinates: the input in red, the correction in green."""
    if input_seq.n_frames != corrected_seq.n_frames:
        raise ValidationError("overlay needs sequences with equal frame counts")
    names = input_seq.skeleton.joint_names
    rows = [OVERLAY_COLUMNS]
    for f in range(input_seq.n_frames):
        for role, color, seq in (("input", "red", input_seq), ("corrected", "green", corrected_seq)):
            for j, name in enumerate(names):
                x, y, z = seq.frames[f, j]
                rows.append((str(f), role, color, name, repr(float(x)), repr(float(y)), repr(float(z))))
    return rows


def export_overlay(input_seq, corrected_seq, path):
    Path(path).write_text(to_tsv(overlay_rows(input_seq, corrected_seq)))
    return Path(path)
