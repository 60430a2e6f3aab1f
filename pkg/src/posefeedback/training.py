"""Combined-loss training with DTW-matched targets and scheduled sampling.

Every sample is trained against a correct motion: incorrect recordings use
their DTW-matched correct recording from the same subject, and correct
recordings use themselves. The correction loss is soft-DTW on decoded poses.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .alignment import match_pairs
from .engine import AdamState, adam_step, backward, ops, save_checkpoint
from .engine.tensor import Tensor
from .exceptions import NoCorrectCandidate, ValidationError
from .model import FeedbackNet, ModelConfig
from .motion import dct_basis, dct_encode, mean_bone_lengths, normalize

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "lr", "e_class", "e_corr", "e_smooth", "e_loss", "teacher_prob")


@dataclass(frozen=True)
class TrainConfig:
    w_corr: float = 1.0
    w_class: float = 1.0
    w_smooth: float = 1e-3
    epochs: int = 50
    batch_size: int = 32
    lr0: float = 0.01
    decay_base: float = 0.9
    decay_step: float = 5.0
    gamma: float = 0.01
    seed: int = 0
    teacher_forcing: bool = True

    def __post_init__(self):
        if min(self.w_corr, self.w_class, self.w_smooth) < 0:
            raise ValidationError("loss weights must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be at least 1")
        if not self.lr0 >= 0:
            raise ValidationError("lr0 must be non-negative")
        if self.decay_step < 1:
            raise ValidationError("decay_step must be at least 1")
        if not self.gamma > 0:
            raise ValidationError("gamma must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class LossReport:
    e_class: float
    e_corr: float
    e_smooth: float
    e_loss: float

    def as_tuple(self):
        return (self.e_class, self.e_corr, self.e_smooth, self.e_loss)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    lr: float
    teacher_prob: float
    losses: LossReport

    def log_line(self):
        values = (self.lr, *self.losses.as_tuple(), self.teacher_prob)
        return "\t".join([str(self.epoch)] + [repr(float(v)) for v in values])


@dataclass
class TrainResult:
    model: FeedbackNet
    history: list
    batch_reports: list = field(repr=False)


@dataclass(frozen=True)
class TrainingSample:
    id: str
    features: np.ndarray
    label: int
    n_frames: int
    target: np.ndarray


# ---------------------------------------------------------------- schedules


def lr_at(i, cfg=None):
    cfg = cfg or TrainConfig()
    if i < 0:
        raise ValidationError("epoch index must be non-negative")
    return cfg.lr0 * cfg.decay_base ** (i / cfg.decay_step)


def teacher_prob(i, total_epochs):
    """Probability of feeding ground-truth labels; 1 at the first epoch, 0 at the last."""
    if not 0 <= i < total_epochs:
        raise ValidationError(f"epoch {i} outside [0, {total_epochs})")
    if total_epochs == 1:
        return 0.0
    return 1.0 - i / (total_epochs - 1)


# ------------------------------------------------------------------- data


def choose_reference(recordings, seed=0):
    """Mean bone lengths of one recording picked with ``seed``, used as the normalization target."""
    if not recordings:
        raise ValidationError("cannot choose a reference from an empty set")
    ordered = sorted(recordings, key=lambda r: r.id)
    pick = ordered[int(np.random.default_rng(seed).integers(len(ordered)))]
    return mean_bone_lengths(pick.sequence)


def normalize_recordings(recordings, reference):
    return [r.with_sequence(normalize(r.sequence, reference)[0]) for r in recordings]


def build_targets(recordings, threads=1):
    """Map every recording id to the id of its training target."""
    correct = [r for r in recordings if r.is_correct]
    incorrect = [r for r in recordings if not r.is_correct]
    targets = {r.id: r.id for r in correct}
    for pair in match_pairs(incorrect, correct, threads=threads):
        targets[pair.incorrect_id] = pair.correct_id
    return targets


def prepare_samples(recordings, n_coefficients, targets=None, threads=1):
    """Training samples from (already normalized) recordings, sorted by id."""
    recordings = sorted(recordings, key=lambda r: r.id)
    targets = targets if targets is not None else build_targets(recordings, threads)
    by_id = {r.id: r for r in recordings}
    samples = []
    for r in recordings:
        tid = targets.get(r.id)
        if tid is None or tid not in by_id:
            raise NoCorrectCandidate(r.subject, r.exercise)
        samples.append(TrainingSample(
            r.id,
            dct_encode(r.sequence, n_coefficients).as_features(),
            r.label.flat_index,
            r.sequence.n_frames,
            by_id[tid].sequence.flat(),
        ))
    return samples


# ------------------------------------------------------------------ losses


def _decode_ops(n_frames, k):
    basis = dct_basis(n_frames)[:k]
    return basis.T.copy(), np.diff(basis.T, axis=0)


def compute_losses(logits, corrected, batch, cfg):
    """Weighted total loss tensor and its :class:`LossReport`.

    ``logits`` or ``corrected`` may be ``None`` for single-branch models; the
    missing term is reported as 0 and left out of the total.
    """
    terms = []
    e_class = e_corr = e_smooth = None
    if logits is not None:
        e_class = ops.softmax_cross_entropy(logits, [s.label for s in batch])
    if corrected is not None:
        corr_terms, smooth_terms = [], []
        k = corrected.shape[-1]
        for b, s in enumerate(batch):
            decode, velocity = _decode_ops(s.n_frames, k)
            coeffs = ops.transpose(ops.take(corrected, b))
            decoded = ops.matmul(Tensor(decode), coeffs)
            corr_terms.append(ops.soft_dtw(decoded, s.target, cfg.gamma))
            vel = ops.matmul(Tensor(velocity), coeffs)
            smooth_terms.append(ops.mse(vel, np.zeros(vel.shape)))
        e_corr = ops.scale(ops.sum(ops.concat([ops.reshape(t, (1,)) for t in corr_terms], 0)), 1.0 / len(batch))
        e_smooth = ops.scale(ops.sum(ops.concat([ops.reshape(t, (1,)) for t in smooth_terms], 0)), 1.0 / len(batch))
    if e_corr is not None:
        terms.append(ops.scale(e_corr, cfg.w_corr))
    if e_class is not None:
        terms.append(ops.scale(e_class, cfg.w_class))
    if e_smooth is not None:
        terms.append(ops.scale(e_smooth, cfg.w_smooth))
    total = terms[0]
    for t in terms[1:]:
        total = ops.add(total, t)
    report = LossReport(
        0.0 if e_class is None else e_class.item(),
        0.0 if e_corr is None else e_corr.item(),
        0.0 if e_smooth is None else e_smooth.item(),
        total.item(),
    )
    return total, report


def bookkeeping_error(report, cfg):
    expected = cfg.w_corr * report.e_corr + cfg.w_class * report.e_class + cfg.w_smooth * report.e_smooth
    return abs(report.e_loss - expected)


# ------------------------------------------------------------------- loop


def _batches(order, batch_size):
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    # batch norm needs at least two samples
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2] = np.concatenate([batches[-2], batches[-1]])
        batches.pop()
    return batches


def _mean_report(reports, sizes):
    w = np.asarray(sizes, dtype=np.float64) / np.sum(sizes)
    cols = np.array([r.as_tuple() for r in reports])
    return LossReport(*(float(x) for x in w @ cols))


def train_samples(samples, cfg=None, model_config=None, model=None, log_file=None,
                  checkpoint_path=None, epoch_checkpoints=False, metadata=None):
    """Train on prepared samples. Returns a :class:`TrainResult`."""
    cfg = cfg or TrainConfig()
    if not samples:
        raise ValidationError("empty training set")
    if model is None:
        model_config = model_config or ModelConfig(n_coefficients=samples[0].features.shape[1])
        model = FeedbackNet(model_config, seed=cfg.seed)
    mcfg = model.config
    if samples[0].features.shape != (mcfg.n_nodes, mcfg.n_coefficients):
        raise ValidationError("sample features do not match the model configuration")

    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    adam = AdamState()
    history, batch_reports = [], []
    features = np.stack([s.features for s in samples])
    labels = np.array([s.label for s in samples])
    lines = ["\t".join(LOG_COLUMNS)]

    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg)
        p_teacher = teacher_prob(epoch, cfg.epochs) if cfg.teacher_forcing else 0.0
        order = rng.permutation(len(samples))
        reports, sizes = [], []
        for idx in _batches(order, cfg.batch_size):
            use_truth = rng.random(len(idx)) < p_teacher
            fb = np.where(use_truth, labels[idx], -1)
            logits, corrected, _ = model.forward(features[idx], training=True, rng=rng, feedback_labels=fb)
            total, report = compute_losses(logits, corrected, [samples[i] for i in idx], cfg)
            for p in params:
                p.zero_grad()
            grads = backward(total, params)
            adam_step(params, grads, adam, lr)
            reports.append(report)
            sizes.append(len(idx))
        batch_reports.append(reports)
        record = EpochRecord(epoch, lr, p_teacher, _mean_report(reports, sizes))
        history.append(record)
        lines.append(record.log_line())
        log.info("epoch %d lr %.6g e_loss %.6g", epoch, lr, record.losses.e_loss)
        if checkpoint_path and epoch_checkpoints:
            save_model(model, f"{checkpoint_path}.epoch{epoch:03d}", cfg, metadata)

    if log_file:
        Path(log_file).write_text("\n".join(lines) + "\n")
    if checkpoint_path:
        save_model(model, checkpoint_path, cfg, metadata)
    return TrainResult(model, history, batch_reports)


def train(recordings, cfg=None, model_config=None, reference=None, threads=1, **kwargs):
    """Normalize, match pairs, and train on labeled recordings.

    ``reference`` holds the bone lengths for normalization; by default one
    recording is picked with ``cfg.seed``. Returns a :class:`TrainResult`
    whose model carries the reference in ``model.reference``.
    """
    cfg = cfg or TrainConfig()
    recordings = list(recordings)
    if not recordings:
        raise ValidationError("empty training set")
    if reference is None:
        reference = choose_reference(recordings, cfg.seed)
    model_config = model_config or ModelConfig()
    normed = normalize_recordings(recordings, reference)
    samples = prepare_samples(normed, model_config.n_coefficients, threads=threads)
    metadata = dict(kwargs.pop("metadata", None) or {})
    metadata["reference_bone_lengths"] = [float(x) for x in reference]
    result = train_samples(samples, cfg, model_config, metadata=metadata, **kwargs)
    result.model.reference = np.asarray(reference, dtype=np.float64)
    return result


# -------------------------------------------------------------- checkpoints


def save_model(model, path, cfg=None, metadata=None):
    config = {"model": model.config.to_dict()}
    if cfg is not None:
        config["train"] = cfg.to_dict()
    if metadata:
        config["metadata"] = metadata
    save_checkpoint(path, model.state_dict(), config)


def load_model(path):
    """Rebuild a :class:`FeedbackNet` from a checkpoint; returns ``(model, config dict)``."""
    from .engine import load_checkpoint

    tensors, config = load_checkpoint(path)
    if "model" not in config:
        raise ValidationError(f"{path}: checkpoint has no model configuration")
    model = FeedbackNet(ModelConfig.from_dict(config["model"]))
    model.load_state_dict(tensors)
    ref = config.get("metadata", {}).get("reference_bone_lengths")
    model.reference = None if ref is None else np.asarray(ref, dtype=np.float64)
    return model, config


def read_config(path):
    """Read a JSON config file with optional ``model`` and ``train`` sections."""
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"{path}: {exc}") from exc
    if not isinstance(d, dict) or set(d) - {"model", "train"}:
        raise ValidationError(f"{path}: expected an object with 'model' and/or 'train' sections")
    model_d = d.get("model", {})
    unknown = set(model_d) - set(ModelConfig.__dataclass_fields__)
    if unknown:
        raise ValidationError(f"{path}: unknown model options {sorted(unknown)}")
    return ModelConfig.from_dict(model_d), TrainConfig.from_dict(d.get("train", {}))
