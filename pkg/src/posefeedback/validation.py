"""Input checks shared by the estimators and the command line."""

import numpy as np
from sklearn.exceptions import NotFittedError

from .dataset import Recording
from .exceptions import ValidationError
from .labels import NUM_LABELS
from .motion import MotionSequence


def check_recordings(X, name="X"):
    """A non-empty list of :class:`Recording`."""
    if isinstance(X, Recording):
        X = [X]
    X = list(X)
    if not X:
        raise ValidationError(f"{name} is empty")
    bad = [type(x).__name__ for x in X if not isinstance(x, Recording)]
    if bad:
        raise ValidationError(f"{name} must contain Recording objects, got {bad[0]}")
    return X


def check_sequences(X, name="X"):
    """A non-empty list of :class:`MotionSequence`; recordings are unwrapped."""
    if isinstance(X, (Recording, MotionSequence)):
        X = [X]
    X = list(X)
    if not X:
        raise ValidationError(f"{name} is empty")
    out = []
    for x in X:
        if isinstance(x, Recording):
            x = x.sequence
        if not isinstance(x, MotionSequence):
            raise ValidationError(f"{name} must contain MotionSequence or Recording objects, got {type(x).__name__}")
        out.append(x)
    skeletons = {s.skeleton for s in out}
    if len(skeletons) > 1:
        raise ValidationError(f"{name} mixes skeletons")
    return out


def check_labels(y, n):
    y = np.asarray(y)
    if y.shape != (n,):
        raise ValidationError(f"expected {n} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer) or y.min() < 0 or y.max() >= NUM_LABELS:
        raise ValidationError(f"labels must be integers in [0, {NUM_LABELS})")
    return y.astype(np.int64)


def check_min_length(sequences, k):
    short = [s.n_frames for s in sequences if s.n_frames < k]
    if short:
        raise ValidationError(f"sequences need at least {k} frames, shortest has {min(short)}")


def check_is_fitted(estimator, attribute):
    if getattr(estimator, attribute, None) is None:
        raise NotFittedError(f"{type(estimator).__name__} is not fitted yet; call fit first")
