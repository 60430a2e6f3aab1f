import numpy as np
import pytest

from posefeedback import synth, training
from posefeedback.engine import Tensor, backward
from posefeedback.evaluation import infer
from posefeedback.exceptions import NoCorrectCandidate, ValidationError
from posefeedback.model import FeedbackNet, ModelConfig
from posefeedback.motion import dct_basis
from posefeedback.training import (
    TrainConfig, TrainingSample, bookkeeping_error, compute_losses, lr_at, prepare_samples, teacher_prob, train,
)

TINY = ModelConfig(hidden=16, feedback_width=8, conv_channels=4, n_coefficients=10)


@pytest.fixture(scope="module")
def subject1():
    return synth.make_dataset(per_cell=1, subjects=(1,))


@pytest.fixture(scope="module")
def four_squats(subject1):
    keep = ("correct", "not_low_enough", "knees_inward", "front_bent")
    return [r for r in subject1 if r.exercise == "squat" and r.instruction in keep]


# ---------------------------------------------------------------- schedules


def test_default_training_values():
    cfg = TrainConfig()
    assert (cfg.lr0, cfg.decay_base, cfg.decay_step, cfg.batch_size, cfg.epochs) == (0.01, 0.9, 5.0, 32, 50)
    assert (cfg.w_corr, cfg.w_class, cfg.w_smooth) == (1.0, 1.0, 1e-3)


def test_learning_rate_schedule():
    assert lr_at(0) == 0.01
    assert lr_at(5) == pytest.approx(0.009, rel=1e-14)
    assert lr_at(10) == pytest.approx(0.0081, rel=1e-14)
    lrs = [lr_at(i) for i in range(60)]
    assert all(b < a for a, b in zip(lrs, lrs[1:])) and lrs[-1] > 0
    with pytest.raises(ValidationError):
        lr_at(-1)


def test_teacher_probability_schedule():
    assert teacher_prob(0, 50) == 1.0
    assert teacher_prob(49, 50) == 0.0
    assert teacher_prob(5, 11) == 0.5
    probs = [teacher_prob(i, 50) for i in range(50)]
    assert all(b <= a for a, b in zip(probs, probs[1:]))
    assert max(abs(p - (1 - i / 49)) for i, p in enumerate(probs)) == 0.0
    assert teacher_prob(0, 1) == 0.0
    with pytest.raises(ValidationError):
        teacher_prob(50, 50)


def test_config_validation_and_roundtrip():
    cfg = TrainConfig(w_smooth=0.0, epochs=3)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValidationError):
        TrainConfig.from_dict({"learning_rate": 1.0})
    for bad in (dict(epochs=0), dict(w_corr=-1.0), dict(gamma=0.0), dict(lr0=-0.1)):
        with pytest.raises(ValidationError):
            TrainConfig(**bad)


# ------------------------------------------------------------------- losses


def _sample(rng, n=12, k=5, nodes=6, label=0, target=None):
    features = rng.normal(size=(nodes, k))
    decoded = dct_basis(n)[:k].T @ features.T
    return TrainingSample("s", features, label, n, decoded if target is None else target)


def test_uniform_logits_give_log_eleven():
    rng = np.random.default_rng(0)
    s = _sample(rng)
    _, report = compute_losses(Tensor(np.zeros((1, 11))), None, [s], TrainConfig())
    assert report.e_class == pytest.approx(np.log(11), rel=1e-14)


def test_static_output_has_zero_smoothness_term():
    rng = np.random.default_rng(1)
    s = _sample(rng)
    static = np.zeros((1, 6, 5))
    static[0, :, 0] = rng.normal(size=6)  # DC only
    _, report = compute_losses(None, Tensor(static), [s], TrainConfig())
    assert report.e_smooth == pytest.approx(0.0, abs=1e-28)


def test_correction_term_vanishes_at_target():
    rng = np.random.default_rng(2)
    s = _sample(rng)
    values = [compute_losses(None, Tensor(s.features[None]), [s], TrainConfig(gamma=g))[1].e_corr
              for g in (1e-1, 1e-2, 1e-3, 1e-4)]
    assert all(abs(b) <= abs(a) for a, b in zip(values, values[1:]))
    assert abs(values[-1]) < 1e-2


def test_smoothness_term_is_mean_squared_velocity():
    rng = np.random.default_rng(3)
    s = _sample(rng, n=9, k=4, nodes=3)
    corrected = rng.normal(size=(1, 3, 4))
    _, report = compute_losses(None, Tensor(corrected), [s], TrainConfig())
    decoded = dct_basis(9)[:4].T @ corrected[0].T
    assert report.e_smooth == pytest.approx(np.mean(np.diff(decoded, axis=0) ** 2), rel=1e-12)


def test_loss_identity_is_exact():
    rng = np.random.default_rng(4)
    batch = [_sample(rng, label=i) for i in range(3)]
    logits = Tensor(rng.normal(size=(3, 11)))
    corrected = Tensor(rng.normal(size=(3, 6, 5)))
    for cfg in (TrainConfig(), TrainConfig(w_smooth=0.0), TrainConfig(w_corr=2.0, w_class=0.5, w_smooth=0.1)):
        _, report = compute_losses(logits, corrected, batch, cfg)
        assert bookkeeping_error(report, cfg) <= 1e-12
    _, report = compute_losses(logits, corrected, batch, TrainConfig(w_smooth=0.0))
    assert report.e_loss == report.e_corr + report.e_class


def test_zero_class_weight_isolates_classifier():
    rng = np.random.default_rng(5)
    cfg = ModelConfig(n_joints=2, n_coefficients=5, hidden=8, feedback_width=4, conv_channels=3, dropout=0.0)
    model = FeedbackNet(cfg)
    batch = [_sample(rng, label=i) for i in (1, 6)]
    x = np.stack([s.features for s in batch])
    logits, corrected, _ = model.forward(x, training=True, rng=rng)
    total, _ = compute_losses(logits, corrected, batch, TrainConfig(w_class=0.0))
    grads = dict(zip(model.params, backward(total, model.parameters())))
    for name, g in grads.items():
        if name.startswith("classifier."):
            assert not np.any(g), name
    assert np.any(grads["trunk.in.weight"])


def test_missing_correct_partner_raises(subject1):
    no_plank_correct = [r for r in subject1 if not (r.exercise == "plank" and r.is_correct)]
    with pytest.raises(NoCorrectCandidate):
        prepare_samples(no_plank_correct, 10)


def test_correct_samples_target_themselves(subject1):
    samples = prepare_samples(subject1, 10)
    by_id = {r.id: r for r in subject1}
    for s in samples:
        if by_id[s.id].is_correct:
            assert np.array_equal(s.target, by_id[s.id].sequence.flat())


def test_batches_never_leave_a_single_sample():
    batches = training._batches(np.arange(33), 32)
    assert [len(b) for b in batches] == [33]
    assert [len(b) for b in training._batches(np.arange(65), 32)] == [32, 33]
    assert [len(b) for b in training._batches(np.arange(70), 32)] == [32, 32, 6]


# -------------------------------------------------------------------- loops


def test_zero_learning_rate_keeps_parameters(subject1):
    two = [r for r in subject1 if r.exercise == "lunge" and r.instruction in ("correct", "not_low_enough")]
    before = training.FeedbackNet(TINY, seed=0).state_dict()
    result = train(two, TrainConfig(epochs=1, lr0=0.0), TINY)
    after = result.model.state_dict()
    for name in result.model.params:
        assert np.array_equal(before[name], after[name]), name


def test_overfits_four_samples(four_squats):
    result = train(four_squats, TrainConfig(epochs=200, batch_size=4), TINY)
    inf = infer(result.model, four_squats)
    assert np.array_equal(inf.predicted, inf.labels)


def test_overfit_drives_class_loss_down(subject1):
    eight = [r for r in subject1 if r.exercise in ("squat", "lunge")][:8]
    result = train(eight, TrainConfig(epochs=200, batch_size=8), TINY)
    assert result.history[-1].losses.e_class < 0.05
    assert all(bookkeeping_error(r, TrainConfig()) <= 1e-12 for reports in result.batch_reports for r in reports)


def test_training_is_deterministic(tmp_path, four_squats):
    runs = []
    for name in ("a", "b"):
        train(four_squats, TrainConfig(epochs=4, batch_size=2), TINY,
              log_file=tmp_path / f"{name}.log", checkpoint_path=tmp_path / f"{name}.pfck")
        runs.append(((tmp_path / f"{name}.log").read_bytes(), (tmp_path / f"{name}.pfck").read_bytes()))
    assert runs[0] == runs[1]


def test_log_and_checkpoints(tmp_path, four_squats):
    result = train(four_squats, TrainConfig(epochs=3, batch_size=2), TINY, log_file=tmp_path / "log",
                   checkpoint_path=tmp_path / "m.pfck", epoch_checkpoints=True)
    lines = (tmp_path / "log").read_text().splitlines()
    assert lines[0].split("\t") == list(training.LOG_COLUMNS)
    assert len(lines) == 4 and lines[1].split("\t")[:2] == ["0", "0.01"]
    assert [float(x) for x in lines[3].split("\t")[1:]] == [result.history[2].lr, *result.history[2].losses.as_tuple(),
                                                             result.history[2].teacher_prob]
    assert sorted(p.name for p in tmp_path.glob("m.pfck.epoch*")) == [f"m.pfck.epoch{i:03d}" for i in range(3)]
    model, config = training.load_model(tmp_path / "m.pfck")
    assert np.array_equal(model.reference, result.model.reference)
    assert config["train"]["epochs"] == 3
    x = np.stack([s for s in infer(result.model, four_squats).features])
    assert np.array_equal(model.forward(x)[1].value, result.model.forward(x)[1].value)


def test_single_branch_models_train(four_squats):
    for overrides in (dict(use_corrector=False, feedback=False), dict(use_classifier=False, feedback=False)):
        cfg = ModelConfig(**{**TINY.to_dict(), **overrides})
        result = train(four_squats, TrainConfig(epochs=2, batch_size=4), cfg)
        losses = result.history[-1].losses
        if overrides.get("use_corrector") is False:
            assert losses.e_corr == 0.0 and losses.e_smooth == 0.0
        else:
            assert losses.e_class == 0.0


def test_read_config(tmp_path):
    path = tmp_path / "c.json"
    path.write_text('{"model": {"hidden": 32}, "train": {"epochs": 7}}')
    mcfg, tcfg = training.read_config(path)
    assert mcfg.hidden == 32 and tcfg.epochs == 7
    path.write_text('{"model": {"width": 32}}')
    with pytest.raises(ValidationError):
        training.read_config(path)
