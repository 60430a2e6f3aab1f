import numpy as np
import pytest
from hypothesis import given, strategies as st

from posefeedback.engine import backward, ops
from posefeedback.exceptions import ShapeError, ValidationError
from posefeedback.model import (
    DROPOUT_SCOPES, FeedbackNet, ModelConfig, classify, correct, end_to_end, feed_label, stack_features,
)
from posefeedback.motion import MotionSequence, dct_encode
from posefeedback.verification import chain_skeleton

J, K = 4, 6


def config(**kw):
    base = dict(n_joints=J, n_coefficients=K, hidden=10, feedback_width=6, conv_channels=3)
    return ModelConfig(**{**base, **kw})


def dct_batch(rng, b=3, frames=(9, 14, 20)):
    sk = chain_skeleton(J)
    return [dct_encode(MotionSequence(sk, rng.normal(size=(frames[i % len(frames)], J, 3))), K) for i in range(b)]


def test_default_config_values():
    cfg = ModelConfig()
    assert (cfg.hidden, cfg.feedback_width, cfg.dropout, cfg.n_labels) == (256, 256, 0.5, 11)
    assert cfg.n_nodes == 51


@pytest.mark.parametrize("kw", [
    dict(use_classifier=False, use_corrector=False),
    dict(use_classifier=False),  # feedback needs both branches
    dict(dropout=1.0),
    dict(dropout_scope="decoder"),
    dict(classifier_kind="deep"),
    dict(gcb_layers=0),
])
def test_invalid_configs_rejected(kw):
    with pytest.raises(ValidationError):
        config(**kw)


def test_config_dict_roundtrip():
    cfg = config(temporal_pool=True, dropout_scope="all")
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_logits_shape_and_length_invariance():
    model = FeedbackNet(config())
    rng = np.random.default_rng(0)
    dcts = dct_batch(rng, 3, frames=(7, 30, 64))
    logits = classify(model, dcts)
    assert logits.shape == (3, 11) and np.all(np.isfinite(logits))
    assert classify(model, dcts[0]).shape == (11,)


@pytest.mark.parametrize("kind,tmp", [("pooled", False), ("pooled", True), ("simple", False)])
def test_classifier_variants_emit_eleven_logits(kind, tmp):
    model = FeedbackNet(config(classifier_kind=kind, temporal_pool=tmp, feedback=False, use_corrector=False))
    logits, corrected, _ = model.forward(stack_features(dct_batch(np.random.default_rng(1))))
    assert logits.shape == (3, 11) and corrected is None


def test_zero_residual_is_identity():
    model = FeedbackNet(config())
    model.params["corrector.out.weight"].value[...] = 0.0
    model.params["corrector.out.bias"].value[...] = 0.0
    dcts = dct_batch(np.random.default_rng(2))
    for d, out in zip(dcts, correct(model, dcts)):
        assert np.array_equal(out.coeffs, d.coeffs)
        assert out.source_length == d.source_length


def test_untrained_corrector_starts_near_identity():
    model = FeedbackNet(config())
    x = stack_features(dct_batch(np.random.default_rng(3)))
    _, corrected, _ = model.forward(x)
    assert np.abs(corrected.value - x).max() < 0.1 * np.abs(x).max()


def test_argmax_equivalence():
    model = FeedbackNet(config())
    logits = np.zeros(11)
    logits[3] = 2.0
    assert np.array_equal(feed_label(model, logits), feed_label(model, 3))


def test_argmax_ties_go_to_lowest_index():
    model = FeedbackNet(config())
    logits = np.zeros(11)
    logits[[2, 7]] = 1.0
    assert np.array_equal(feed_label(model, logits), feed_label(model, 2))


@given(st.integers(0, 10), st.lists(st.floats(-3, 3), min_size=11, max_size=11))
def test_feedback_isolated_from_logit_values(winner, noise):
    model = FeedbackNet(config(), seed=4)
    a = np.array(noise)
    a[winner] = 10.0
    b = a * 0.5
    b[winner] = 7.0
    d = dct_batch(np.random.default_rng(5), 1)[0]
    assert np.array_equal(correct(model, d, a).coeffs, correct(model, d, b).coeffs)


def test_ground_truth_equals_predicted_when_classifier_is_right():
    model = FeedbackNet(config(), seed=6)
    dcts = dct_batch(np.random.default_rng(7))
    logits, pred = end_to_end(model, dcts)
    _, gt = end_to_end(model, dcts, label_source=np.argmax(logits, axis=1))
    for a, b in zip(pred, gt):
        assert np.array_equal(a.coeffs, b.coeffs)


def test_feedback_changes_correction():
    model = FeedbackNet(config(), seed=8)
    d = dct_batch(np.random.default_rng(9), 1)[0]
    _, a = end_to_end(model, d, label_source=0)
    _, b = end_to_end(model, d, label_source=5)
    assert not np.array_equal(a.coeffs, b.coeffs)


def test_eval_forward_is_deterministic():
    model = FeedbackNet(config(), seed=10)
    x = stack_features(dct_batch(np.random.default_rng(11)))
    la, ca, _ = model.forward(x)
    lb, cb, _ = model.forward(x)
    assert np.array_equal(la.value, lb.value) and np.array_equal(ca.value, cb.value)


def test_train_forward_needs_rng():
    model = FeedbackNet(config())
    with pytest.raises(ValidationError):
        model.forward(stack_features(dct_batch(np.random.default_rng(0))), training=True)


def test_wrong_input_shape_rejected():
    with pytest.raises(ShapeError):
        FeedbackNet(config()).forward(np.zeros((2, 3 * J, K + 1)))


def test_every_parameter_receives_gradient():
    model = FeedbackNet(config(dropout=0.0), seed=12)
    rng = np.random.default_rng(13)
    x = stack_features(dct_batch(rng, 4))
    labels = np.array([0, 3, 5, 9])
    logits, corrected, _ = model.forward(x, training=True, rng=rng, feedback_labels=labels)
    loss = ops.add(ops.softmax_cross_entropy(logits, labels), ops.mse(corrected, rng.normal(size=corrected.shape)))
    grads = backward(loss, model.parameters())
    dead = [n for n, g in zip(model.params, grads) if not np.any(g)]
    assert dead == []


def test_identical_ground_truth_labels_leave_feedback_weight_rows_unused():
    model = FeedbackNet(config(dropout=0.0), seed=14)
    rng = np.random.default_rng(15)
    x = stack_features(dct_batch(rng, 3))
    _, corrected, _ = model.forward(x, training=True, rng=rng, feedback_labels=[4, 4, 4])
    grads = dict(zip(model.params, backward(ops.mse(corrected, rng.normal(size=corrected.shape)),
                                            model.parameters())))
    g = grads["feedback.weight"]
    assert np.any(g[4]) and not np.any(np.delete(g, 4, axis=0))


def test_state_dict_roundtrip():
    a = FeedbackNet(config(), seed=16)
    rng = np.random.default_rng(17)
    x = stack_features(dct_batch(rng))
    a.forward(x, training=True, rng=rng)  # moves batch-norm statistics
    b = FeedbackNet(config(), seed=99)
    b.load_state_dict(a.state_dict())
    la, ca, _ = a.forward(x)
    lb, cb, _ = b.forward(x)
    assert np.array_equal(la.value, lb.value) and np.array_equal(ca.value, cb.value)


@pytest.mark.parametrize("scope", DROPOUT_SCOPES)
def test_dropout_scopes(scope):
    model = FeedbackNet(config(dropout_scope=scope))
    rates = {name.split(".")[0]: model._dropout_rate(name) for name in model.bn}
    expected = {
        "all": {"trunk", "classifier", "corrector"},
        "trunk+classifier": {"trunk", "classifier"},
        "classifier": {"classifier"},
        "none": set(),
    }[scope]
    assert {k for k, v in rates.items() if v > 0} == expected


def test_separated_variants_have_single_branch():
    x = stack_features(dct_batch(np.random.default_rng(18)))
    logits, corrected, used = FeedbackNet(config(use_corrector=False, feedback=False)).forward(x)
    assert corrected is None and used is None and logits.shape == (3, 11)
    logits, corrected, _ = FeedbackNet(config(use_classifier=False, feedback=False)).forward(x)
    assert logits is None and corrected.shape == x.shape
    assert not any(n.startswith("feedback") for n in FeedbackNet(config(feedback=False)).params)
