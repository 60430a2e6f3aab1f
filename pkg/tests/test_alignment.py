import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import brute_dtw, brute_soft_dtw, central_difference, monotone_paths, python_dtw
from posefeedback import synth
from posefeedback.alignment import (
    SoftDtwConfig, cost_matrix, dtw, dtw_path, dtw_table, match_pairs, soft_dtw, soft_dtw_grad,
    soft_dtw_value_and_grad,
)
from posefeedback.dataset import Recording
from posefeedback.exceptions import NoCorrectCandidate, SkeletonMismatch, ValidationError
from posefeedback.labels import InstructionLabel
from posefeedback.motion import MotionSequence
from posefeedback.verification import chain_skeleton

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def seq_pair(max_len=5, dims=(2, 3)):
    return st.tuples(st.integers(1, max_len), st.integers(1, max_len)).flatmap(
        lambda nm: st.tuples(arrays(np.float64, (nm[0], *dims), elements=finite),
                             arrays(np.float64, (nm[1], *dims), elements=finite)))


def test_path_enumeration_counts():
    # Delannoy numbers
    assert len(monotone_paths(3, 3)) == 13
    assert len(monotone_paths(4, 5)) == 129


def test_identical_sequences_have_zero_dtw():
    a = np.random.default_rng(0).normal(size=(7, 4, 3))
    assert dtw(a, a) == 0.0


@given(seq_pair())
def test_dtw_matches_brute_force(pair):
    a, b = pair
    assert dtw(a, b) == pytest.approx(brute_dtw(a, b), rel=1e-12, abs=1e-12)


@given(seq_pair())
def test_dtw_symmetric(pair):
    a, b = pair
    assert dtw(a, b) == pytest.approx(dtw(b, a), rel=1e-12, abs=1e-12)


@given(seq_pair(), st.sampled_from([1e-2, 1e-1, 1.0]))
def test_soft_dtw_matches_brute_force(pair, gamma):
    a, b = pair
    assert soft_dtw(a, b, SoftDtwConfig(gamma)) == pytest.approx(brute_soft_dtw(a, b, gamma), rel=1e-9, abs=1e-9)


@given(seq_pair())
def test_soft_dtw_lower_bound_and_limit(pair):
    a, b = pair
    d = dtw(a, b)
    values = [soft_dtw(a, b, SoftDtwConfig(g)) for g in (1e-1, 1e-2, 1e-3)]
    assert all(v <= d + 1e-12 for v in values)
    # monotone approach from below as the temperature falls
    assert values[0] <= values[1] + 1e-12 <= values[2] + 2e-12


def test_soft_dtw_of_identical_sequences():
    a = np.random.default_rng(3).normal(size=(5, 2, 3))
    assert soft_dtw(a, a, SoftDtwConfig(1.0)) <= 0.0
    assert abs(soft_dtw(a, a, SoftDtwConfig(1e-4))) < 1e-3


@given(st.integers(0, 2**32 - 1), st.sampled_from([1e-2, 1e-1, 1.0]))
def test_soft_dtw_gradient_matches_finite_differences(seed, gamma):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(int(rng.integers(1, 7)), 4, 3))
    b = rng.normal(size=(int(rng.integers(1, 7)), 4, 3))
    cfg = SoftDtwConfig(gamma)
    _, grad = soft_dtw_value_and_grad(a, b, cfg)
    numeric = central_difference(lambda x: soft_dtw(x, b, cfg), a, h=1e-5)
    denom = np.maximum(np.maximum(np.abs(grad), np.abs(numeric)), 1e-4)
    assert np.max(np.abs(grad - numeric) / denom) <= 1e-4


def test_soft_dtw_gradient_small_at_identity():
    a = np.random.default_rng(4).normal(size=(6, 3, 3))
    assert np.linalg.norm(soft_dtw_grad(a, a, SoftDtwConfig(1e-3))) < 1e-3


def test_dtw_path_cost_matches_value():
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=(6, 2, 3)), rng.normal(size=(4, 2, 3))
    path = dtw_path(a, b)
    d = cost_matrix(a, b)
    assert path[0] == (0, 0) and path[-1] == (5, 3)
    assert sum(d[i, j] for i, j in path) == pytest.approx(dtw(a, b), rel=1e-12)


def test_gamma_must_be_positive():
    with pytest.raises(ValidationError):
        SoftDtwConfig(0.0)


def test_skeleton_mismatch_rejected():
    a = MotionSequence(chain_skeleton(3), np.zeros((4, 3, 3)))
    b = MotionSequence(chain_skeleton(4), np.zeros((4, 4, 3)))
    with pytest.raises(SkeletonMismatch):
        dtw(a, b)


def test_dtw_table_thread_independent():
    rng = np.random.default_rng(6)
    rows = [rng.normal(size=(int(rng.integers(3, 9)), 2, 3)) for _ in range(4)]
    cols = [rng.normal(size=(int(rng.integers(3, 9)), 2, 3)) for _ in range(5)]
    one = dtw_table(rows, cols, threads=1)
    assert np.array_equal(one, dtw_table(rows, cols, threads=3))
    assert one[2, 4] == dtw(rows[2], cols[4])


# ------------------------------------------------------------------- pairing


def _rec(rid, subject, exercise, instruction, frames):
    return Recording(rid, subject, InstructionLabel(exercise, instruction),
                     MotionSequence(chain_skeleton(2), frames))


def test_single_candidate_is_chosen():
    rng = np.random.default_rng(7)
    bad = _rec("b", 1, "squat", "knees_inward", rng.normal(size=(5, 2, 3)))
    good = _rec("g", 1, "squat", "correct", rng.normal(size=(6, 2, 3)))
    (pair,) = match_pairs([bad], [good])
    assert pair.correct_id == "g"
    assert pair.dtw_cost == dtw(bad.sequence, good.sequence)


def test_pairing_restricted_to_subject_and_exercise():
    rng = np.random.default_rng(8)
    bad = _rec("b", 1, "squat", "knees_inward", np.zeros((5, 2, 3)))
    near_other_subject = _rec("a", 2, "squat", "correct", np.zeros((5, 2, 3)))
    near_other_exercise = _rec("c", 1, "lunge", "correct", np.zeros((5, 2, 3)))
    own = _rec("z", 1, "squat", "correct", rng.normal(size=(5, 2, 3)))
    (pair,) = match_pairs([bad], [near_other_subject, near_other_exercise, own])
    assert pair.correct_id == "z"
    with pytest.raises(NoCorrectCandidate):
        match_pairs([bad], [near_other_subject])


@given(st.permutations(range(6)), st.integers(0, 100))
def test_pairing_ignores_candidate_order(order, seed):
    rng = np.random.default_rng(seed)
    bad = [_rec(f"b{i}", 1, "plank", "arched_back", rng.normal(size=(4, 2, 3))) for i in range(3)]
    good = [_rec(f"g{i}", 1, "plank", "correct", rng.normal(size=(4, 2, 3))) for i in range(5)]
    # one duplicate to exercise the tie-break
    good.append(_rec("g9", 1, "plank", "correct", good[2].sequence.frames))
    base = match_pairs(bad, good)
    assert match_pairs(bad, [good[i] for i in order]) == base
    assert all(p.correct_id != "g9" for p in base)


def test_pairing_oracle_on_noise_free_templates():
    recs = synth.make_dataset(per_cell=2, noise_scale=0.0, variation=0.0)
    correct = [r for r in recs if r.is_correct]
    incorrect = [r for r in recs if not r.is_correct]
    by_id = {r.id: r for r in recs}
    for pair in match_pairs(incorrect, correct):
        bad = by_id[pair.incorrect_id]
        template = synth.generate(synth.SynthSpec(bad.exercise, "correct", subject_id=bad.subject,
                                                  variation=0.0, count=1))[0]
        assert np.array_equal(by_id[pair.correct_id].sequence.frames, template.sequence.frames)
        brute = min(python_dtw(bad.sequence.frames, c.sequence.frames) for c in correct if (c.subject, c.exercise) == (bad.subject, bad.exercise))
        assert pair.dtw_cost == brute

