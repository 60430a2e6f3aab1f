"""Acceptance criteria, one PASS/FAIL line each.

The end-to-end criteria train the default model for 50 epochs on the full
synthetic dataset (about 2 minutes per run, 10 runs in total); they are marked
``slow``.
"""

import time

import numpy as np
import pytest

from conftest import random_sequence
from oracles import brute_dtw
from posefeedback import dataset, synth
from posefeedback.alignment import SoftDtwConfig, dtw, match_pairs, soft_dtw
from posefeedback.cli import main
from posefeedback.evaluation import decoded_pair, evaluate, infer, run_ablation
from posefeedback.model import ModelConfig
from posefeedback.motion import dct_decode, dct_encode
from posefeedback.training import TrainConfig, bookkeeping_error, lr_at, teacher_prob, train
from posefeedback.verification import check_full_loss

ABLATION_SEEDS = (0, 1, 2)


@pytest.fixture
def verdict(capsys):
    def emit(name, passed, detail):
        with capsys.disabled():
            print(f"\n[{name}] {'PASS' if passed else 'FAIL'}: {detail}")
        assert passed, detail
    return emit


# ------------------------------------------------------------ fast criteria


def test_c1_gradient_check(verdict):
    start = time.perf_counter()
    report = check_full_loss("small", seed=0, h=1e-5, tol=1e-4)
    elapsed = time.perf_counter() - start
    verdict("C1 gradient check", report.passed and report.max_rel_error <= 1e-4 and elapsed < 60,
            f"max relative error {report.max_rel_error:.2e} over {report.n_checked} coordinates "
            f"(<= 1e-4), {elapsed:.1f} s (< 60 s)")


def test_c2_dct_roundtrip_and_truncation(verdict):
    rng = np.random.default_rng(2)
    worst, monotone = 0.0, True
    for _ in range(100):
        n = int(rng.integers(2, 65))
        seq = random_sequence(rng, n_frames=n, n_joints=int(rng.integers(2, 18)))
        back = dct_decode(dct_encode(seq, n))
        worst = max(worst, float(np.abs(back.frames - seq.frames).max()))
        errors = [np.sum((dct_decode(dct_encode(seq, k), n).frames - seq.frames) ** 2) for k in range(1, n + 1)]
        monotone &= bool(np.all(np.diff(errors) <= 0))
    verdict("C2 DCT", worst <= 1e-9 and monotone,
            f"worst round-trip error {worst:.2e} (<= 1e-9), truncation error non-increasing in k: {monotone}")


def test_c3_dtw_oracle(verdict):
    rng = np.random.default_rng(3)
    exact = bounded = close = 0
    worst_rel = 0.0
    for _ in range(200):
        dim = int(rng.integers(1, 4))
        a = rng.normal(size=(int(rng.integers(1, 7)), dim))
        b = rng.normal(size=(int(rng.integers(1, 7)), dim))
        d = dtw(a, b)
        exact += d == brute_dtw(a, b)
        soft = {g: soft_dtw(a, b, SoftDtwConfig(g)) for g in (1e-3, 1e-2, 1e-1)}
        bounded += all(s <= d for s in soft.values())
        rel = abs(soft[1e-3] - d) / abs(d) if d else abs(soft[1e-3])
        worst_rel = max(worst_rel, rel)
        close += rel <= 1e-2
    verdict("C3 DTW oracle", exact == bounded == close == 200,
            f"dtw == brute force on {exact}/200, soft-DTW(1e-3) within 1e-2 relative on {close}/200 "
            f"(worst {worst_rel:.2e}), soft-DTW <= dtw for all gammas on {bounded}/200")


@pytest.mark.slow
def test_c7_loss_bookkeeping(verdict, full_run):
    cfg = TrainConfig()
    errors = [bookkeeping_error(r, cfg) for epoch in full_run.result.batch_reports for r in epoch]
    weights = (cfg.w_corr, cfg.w_class, cfg.w_smooth) == (1.0, 1.0, 1e-3)
    verdict("C7 loss bookkeeping", weights and max(errors) <= 1e-12,
            f"max |e_loss - (e_corr + e_class + 1e-3 e_smooth)| = {max(errors):.1e} over {len(errors)} batches")


def test_c8_schedules(verdict):
    lrs = [lr_at(i) for i in (0, 5, 10)]
    lr_ok = all(abs(v - e) <= 1e-15 for v, e in zip(lrs, (0.01, 0.009, 0.0081)))
    total = 50
    probs = np.array([teacher_prob(i, total) for i in range(total)])
    line = 1.0 - np.arange(total) / (total - 1)
    deviation = float(np.abs(probs - line).max())
    verdict("C8 schedules", lr_ok and probs[0] == 1.0 and probs[-1] == 0.0 and deviation == 0.0,
            f"lr at epochs 0/5/10 = {lrs}, teacher_prob endpoints {probs[0]}/{probs[-1]}, "
            f"max deviation from the line {deviation}")


# ------------------------------------------------------ end-to-end criteria


class FullRun:
    def __init__(self, root):
        recordings = synth.make_dataset()
        self.data_dir = root / "data"
        dataset.write_dataset(recordings, self.data_dir)
        self.train_set, self.test_set = dataset.subject_split(recordings)
        self.checkpoint = root / "full.pfck"
        self.log = root / "full.pfck.log"
        self.result = train(self.train_set, TrainConfig(), ModelConfig(), log_file=self.log,
                            checkpoint_path=self.checkpoint)
        self.report = evaluate(self.result.model, self.test_set, self.train_set)


@pytest.fixture(scope="session")
def full_run(tmp_path_factory):
    return FullRun(tmp_path_factory.mktemp("full"))


@pytest.fixture(scope="session")
def ablation_reports(full_run):
    """Average (accuracy, success) per variant and training seed on the fixed dataset."""
    out = {("Full", 0): (full_run.report.average_accuracy, full_run.report.average_success)}
    for seed in ABLATION_SEEDS:
        for variant in ("Full", "CombinedNoFeedback", "WithTMP"):
            if (variant, seed) in out:
                continue
            r = run_ablation(variant, full_run.train_set, full_run.test_set, train_config=TrainConfig(seed=seed)).report
            out[(variant, seed)] = (r.average_accuracy, r.average_success)
    return out


@pytest.mark.slow
def test_c4_end_to_end(verdict, full_run):
    r = full_run.report
    verdict("C4 synthetic end-to-end", r.average_accuracy >= 0.9 and r.average_success >= 0.9,
            f"{len(full_run.train_set)} train / {len(full_run.test_set)} test sequences, "
            f"average accuracy {100 * r.average_accuracy:.1f}% (>= 90%), "
            f"average correction success {100 * r.average_success:.1f}% (>= 90%)")


@pytest.mark.slow
def test_c5_beats_retrieval_baseline(verdict, full_run):
    r = full_run.report
    verdict("C5 baseline comparison", r.average_dtw < r.average_baseline_dtw,
            f"average DTW to input: corrector {r.average_dtw:.4g} < retrieval baseline {r.average_baseline_dtw:.4g}")


@pytest.mark.slow
def test_c6_ablation_directions(verdict, ablation_reports):
    no_fb = [ablation_reports[("Full", s)][1] >= ablation_reports[("CombinedNoFeedback", s)][1]
             for s in ABLATION_SEEDS]
    tmp = [all(f >= w for f, w in zip(ablation_reports[("Full", s)], ablation_reports[("WithTMP", s)]))
           for s in ABLATION_SEEDS]
    table = "; ".join(
        f"seed {s}: " + ", ".join(f"{v} {100 * ablation_reports[(v, s)][0]:.1f}/{100 * ablation_reports[(v, s)][1]:.1f}"
                                  for v in ("Full", "CombinedNoFeedback", "WithTMP"))
        for s in ABLATION_SEEDS)
    verdict("C6 ablation directions", sum(no_fb) >= 2 and sum(tmp) >= 2,
            f"Full >= CombinedNoFeedback on success in {sum(no_fb)}/3 seeds, "
            f"Full >= WithTMP on accuracy and success in {sum(tmp)}/3 seeds (accuracy/success %: {table})")


@pytest.mark.slow
def test_c9_training_is_deterministic(verdict, full_run, tmp_path):
    ckpt = tmp_path / "again.pfck"
    code = main(["train", "--data", str(full_run.data_dir), "--out", str(ckpt)])
    same_ckpt = code == 0 and ckpt.read_bytes() == full_run.checkpoint.read_bytes()
    same_log = code == 0 and (tmp_path / "again.pfck.log").read_bytes() == full_run.log.read_bytes()
    verdict("C9 determinism", same_ckpt and same_log,
            f"second run via the command line: identical checkpoint bytes {same_ckpt}, identical log bytes {same_log}")


def _hip_height(seq):
    """Per-frame hip height above the lower ankle."""
    sk = seq.skeleton
    ankles = seq.frames[:, [sk.index("left_ankle"), sk.index("right_ankle")], 2].min(axis=1)
    return seq.frames[:, sk.hip_index, 2] - ankles


@pytest.mark.slow
def test_shallow_squat_depth_is_restored(verdict, full_run):
    shallow = [r for r in full_run.test_set if (r.exercise, r.instruction) == ("squat", "not_low_enough")]
    correct = [r for r in full_run.test_set if (r.exercise, r.instruction) == ("squat", "correct")]
    inf = infer(full_run.result.model, shallow + correct)
    normed = {r.id: r for r in inf.recordings}
    pairs = match_pairs([normed[r.id] for r in shallow], [normed[r.id] for r in correct])
    lines, ok = [], True
    for i, pair in enumerate(pairs):
        inp, out = decoded_pair(inf, i)
        target = _hip_height(normed[pair.correct_id].sequence).min()
        got, before = _hip_height(out).min(), _hip_height(inp).min()
        ok &= abs(got - target) <= 0.1 * abs(target)
        lines.append(f"{pair.incorrect_id} {before:.3f} -> {got:.3f} (match {target:.3f})")
    verdict("Shallow squat hip depth", ok, "minimum hip height within 10% of the match: " + ", ".join(lines))
