"""scikit-learn style wrappers around normalization, encoding and the feedback model.

Inputs are lists of :class:`~posefeedback.dataset.Recording` (training needs
labels and subjects) or :class:`~posefeedback.motion.MotionSequence`.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin

from . import training
from .dataset import Recording
from .evaluation import retrieval_baseline
from .labels import NUM_LABELS, InstructionLabel, exercise_of
from .engine.ops import softmax
from .exceptions import NoCorrectCandidate
from .model import ModelConfig
from .motion import DctMotion, MotionSequence, dct_decode, dct_encode, mean_bone_lengths, normalize
from .validation import check_is_fitted, check_labels, check_min_length, check_recordings, check_sequences


class PoseNormalizer(BaseEstimator, TransformerMixin):
    """Center, rescale to reference bone lengths, and rotate upright.

    ``reference`` is an array of bone lengths, or ``None`` to pick one of the
    fitted sequences with ``random_state``.
    """

    def __init__(self, reference=None, random_state=0):
        self.reference = reference
        self.random_state = random_state

    def fit(self, X, y=None):
        X = list(X) if not isinstance(X, (Recording, MotionSequence)) else [X]
        seqs = check_sequences(X)
        if self.reference is not None:
            self.reference_ = np.asarray(self.reference, dtype=np.float64)
        elif all(isinstance(x, Recording) for x in X):
            # same pick as the trainer makes for a given seed
            self.reference_ = training.choose_reference(X, self.random_state)
        else:
            pick = int(np.random.default_rng(self.random_state).integers(len(seqs)))
            self.reference_ = mean_bone_lengths(seqs[pick])
        return self

    def transform(self, X):
        check_is_fitted(self, "reference_")
        return [normalize(s, self.reference_)[0] for s in check_sequences(X)]

    def transform_with_reports(self, X):
        check_is_fitted(self, "reference_")
        return [normalize(s, self.reference_) for s in check_sequences(X)]


class DctEncoder(BaseEstimator, TransformerMixin):
    """Sequences to ``(n, J*3, K)`` coefficient arrays and back."""

    def __init__(self, n_coefficients=25):
        self.n_coefficients = n_coefficients

    def fit(self, X, y=None):
        seqs = check_sequences(X)
        check_min_length(seqs, self.n_coefficients)
        self.skeleton_ = seqs[0].skeleton
        return self

    def transform(self, X):
        check_is_fitted(self, "skeleton_")
        seqs = check_sequences(X)
        check_min_length(seqs, self.n_coefficients)
        return np.stack([dct_encode(s, self.n_coefficients).as_features() for s in seqs])

    def inverse_transform(self, X, lengths):
        check_is_fitted(self, "skeleton_")
        return [dct_decode(DctMotion.from_features(f, n, self.skeleton_)) for f, n in zip(X, lengths)]


class ExerciseFeedbackModel(ClassifierMixin, BaseEstimator):
    """Joint mistake classifier and motion corrector.

    ``fit`` normalizes the recordings, pairs every incorrect recording with its
    DTW-nearest correct one from the same subject, and trains both branches.
    ``predict`` returns flat label indices; ``transform`` returns corrected
    sequences in normalized coordinates.
    """

    def __init__(self, n_coefficients=25, hidden=256, trunk_blocks=1, classifier_blocks=1,
                 corrector_blocks=2, gcb_layers=2, feedback_width=256, dropout=0.5,
                 dropout_scope="classifier", feedback=True, temporal_pool=False,
                 w_corr=1.0, w_class=1.0, w_smooth=1e-3, epochs=50, batch_size=32,
                 lr0=0.01, decay_base=0.9, decay_step=5.0, gamma=0.01, random_state=0,
                 reference=None, n_threads=1):
        self.n_coefficients = n_coefficients
        self.hidden = hidden
        self.trunk_blocks = trunk_blocks
        self.classifier_blocks = classifier_blocks
        self.corrector_blocks = corrector_blocks
        self.gcb_layers = gcb_layers
        self.feedback_width = feedback_width
        self.dropout = dropout
        self.dropout_scope = dropout_scope
        self.feedback = feedback
        self.temporal_pool = temporal_pool
        self.w_corr = w_corr
        self.w_class = w_class
        self.w_smooth = w_smooth
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr0 = lr0
        self.decay_base = decay_base
        self.decay_step = decay_step
        self.gamma = gamma
        self.random_state = random_state
        self.reference = reference
        self.n_threads = n_threads

    def _configs(self, n_joints):
        mcfg = ModelConfig(
            n_joints=n_joints, n_coefficients=self.n_coefficients, hidden=self.hidden,
            trunk_blocks=self.trunk_blocks, classifier_blocks=self.classifier_blocks,
            corrector_blocks=self.corrector_blocks, gcb_layers=self.gcb_layers,
            feedback_width=self.feedback_width, dropout=self.dropout,
            dropout_scope=self.dropout_scope, feedback=self.feedback, temporal_pool=self.temporal_pool,
        )
        tcfg = training.TrainConfig(
            w_corr=self.w_corr, w_class=self.w_class, w_smooth=self.w_smooth, epochs=self.epochs,
            batch_size=self.batch_size, lr0=self.lr0, decay_base=self.decay_base,
            decay_step=self.decay_step, gamma=self.gamma, seed=self.random_state,
        )
        return mcfg, tcfg

    def fit(self, X, y=None):
        recs = check_recordings(X)
        if y is not None:
            y = check_labels(y, len(recs))
            recs = [r if r.label.flat_index == c else Recording(r.id, r.subject, InstructionLabel.from_index(c), r.sequence)
                    for r, c in zip(recs, y)]
        check_min_length([r.sequence for r in recs], self.n_coefficients)
        mcfg, tcfg = self._configs(recs[0].sequence.n_joints)
        result = training.train(recs, tcfg, mcfg, reference=self.reference, threads=self.n_threads)
        self.model_ = result.model
        self.history_ = result.history
        self.classes_ = np.arange(NUM_LABELS)
        return self

    @classmethod
    def from_checkpoint(cls, path):
        model, config = training.load_model(path)
        est = cls(**_estimator_params(config))
        est.model_ = model
        est.history_ = []
        est.classes_ = np.arange(NUM_LABELS)
        return est

    def save(self, path):
        check_is_fitted(self, "model_")
        metadata = {}
        if self.model_.reference is not None:
            metadata["reference_bone_lengths"] = [float(x) for x in self.model_.reference]
        training.save_model(self.model_, path, self._configs(self.model_.config.n_joints)[1], metadata)

    def _features(self, X):
        check_is_fitted(self, "model_")
        seqs = check_sequences(X)
        check_min_length(seqs, self.n_coefficients)
        if self.model_.reference is not None:
            seqs = [normalize(s, self.model_.reference)[0] for s in seqs]
        return seqs, np.stack([dct_encode(s, self.model_.config.n_coefficients).as_features() for s in seqs])

    def decision_function(self, X):
        _, x = self._features(X)
        logits, _, _ = self.model_.forward(x)
        return logits.value

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        return np.argmax(self.decision_function(X), axis=1)

    def predict_labels(self, X):
        return [InstructionLabel.from_index(int(i)) for i in self.predict(X)]

    def transform(self, X):
        """Corrected sequences (normalized coordinates, input frame counts)."""
        seqs, x = self._features(X)
        _, corrected, _ = self.model_.forward(x)
        return [dct_decode(DctMotion.from_features(c, s.n_frames, s.skeleton), fps=s.fps)
                for c, s in zip(corrected.value, seqs)]

    def correct(self, X):
        return self.transform(X)

    def score(self, X, y=None, sample_weight=None):
        if y is None:
            y = [r.label.flat_index for r in check_recordings(X)]
        return super().score(X, y, sample_weight)


def _estimator_params(config):
    m, t = config.get("model", {}), config.get("train", {})
    names = set(ExerciseFeedbackModel().get_params())
    params = {k: v for k, v in {**m, **t}.items() if k in names}
    if "seed" in t:
        params["random_state"] = t["seed"]
    return params


class RetrievalCorrector(BaseEstimator):
    """Baseline: return the DTW-nearest correct training recording of an exercise."""

    def __init__(self, normalize_to=None, random_state=0, n_threads=1):
        self.normalize_to = normalize_to
        self.random_state = random_state
        self.n_threads = n_threads

    def fit(self, X, y=None):
        recs = check_recordings(X)
        self.normalizer_ = PoseNormalizer(self.normalize_to, self.random_state).fit(recs)
        self.pool_ = [r.with_sequence(s) for r, s in zip(recs, self.normalizer_.transform(recs))]
        if not any(r.is_correct for r in self.pool_):
            raise NoCorrectCandidate(None, None)
        return self

    def predict(self, X, exercises=None):
        """Retrieved recordings; ``exercises`` defaults to each input's own (recordings only)."""
        check_is_fitted(self, "pool_")
        items = [X] if isinstance(X, (Recording, MotionSequence)) else list(X)
        if exercises is None:
            exercises = [x.exercise if isinstance(x, Recording) else None for x in items]
        elif isinstance(exercises, (int, np.integer)):
            exercises = [exercise_of(int(exercises))] * len(items)
        seqs = self.normalizer_.transform(items)
        out = []
        for s, ex in zip(seqs, exercises):
            if ex is None:
                raise ValueError("exercise unknown for a bare sequence; pass exercises=")
            out.append(retrieval_baseline(self.pool_, s, ex, self.n_threads))
        return out
