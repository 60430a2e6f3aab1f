"""Finite-difference check of the full combined loss on a reduced model."""

import contextlib

import numpy as np

from .engine import grad_check, ops
from .model import FeedbackNet, ModelConfig
from .motion import Skeleton, dct_basis
from .training import TrainConfig, TrainingSample, compute_losses

SCALES = {
    # joints, coefficients, frames, hidden, feedback width, conv channels
    "small": (6, 8, 10, 8, 8, 4),
    "medium": (6, 8, 12, 16, 16, 8),
}


def chain_skeleton(n_joints):
    names = tuple(f"j{i}" for i in range(n_joints))
    parents = (0,) + tuple(range(n_joints - 1))
    return Skeleton(names, parents, hip_index=0, spine_index=1)


@contextlib.contextmanager
def _broken_relu():
    """Scale the ReLU gradient by 0.9: a deliberate backward bug (negative control)."""
    original = ops.relu

    def relu(x):
        out = original(x)
        fn = out.backward_fn
        out.backward_fn = lambda g: tuple(None if v is None else 0.9 * v for v in fn(g))
        return out

    ops.relu = relu
    try:
        yield
    finally:
        ops.relu = original


def loss_problem(scale="small", seed=0, bn_mode="running"):
    """A 2-sample micro-batch, a reduced model and a closure rebuilding the loss.

    ``bn_mode="running"`` normalizes with (randomized) running statistics while
    dropout stays active. With only two samples, batch statistics turn every
    feature into ``d / sqrt(d**2 + eps)``, a sign function smoothed over
    ``sqrt(eps)``; its third derivative makes central differences at
    ``h = 1e-5`` unreliable although the analytic gradient is exact.
    ``bn_mode="batch"`` keeps batch statistics anyway.
    """
    if bn_mode not in ("running", "batch"):
        raise ValueError("bn_mode must be 'running' or 'batch'")
    if scale not in SCALES:
        raise ValueError(f"unknown scale {scale!r}; choose from {sorted(SCALES)}")
    j, k, n, hidden, fb, conv = SCALES[scale]
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(
        n_joints=j, n_coefficients=k, hidden=hidden, feedback_width=fb, conv_channels=conv,
        dropout=0.5, dropout_scope="all",
    )
    model = FeedbackNet(cfg, seed=seed)
    # Move off the initial point. With two samples batch norm maps every
    # feature to about +-1, so default scales and shifts leave exact ties in the
    # joint max-pool; a feature whose two samples nearly coincide collapses to
    # its shift, so shifts are kept away from the ReLU kink at zero.
    for name, p in model.params.items():
        if name.endswith("bn.gamma"):
            p.value[...] = rng.uniform(0.6, 1.4, size=p.shape)
        elif name.endswith("bn.beta"):
            p.value[...] = rng.choice([-1.0, 1.0], size=p.shape) * rng.uniform(0.15, 0.35, size=p.shape)
        elif name.endswith("bias"):
            p.value[...] = rng.normal(scale=0.1, size=p.shape)
    for state in model.bn.values():
        state.running_mean = rng.normal(scale=0.5, size=state.running_mean.shape)
        state.running_var = rng.uniform(0.5, 2.0, size=state.running_var.shape)
    model.bn_training = bn_mode == "batch"
    features = rng.normal(size=(2, 3 * j, k))
    labels = np.array([int(rng.integers(11)), int(rng.integers(11))])
    # targets: the decoded input, resampled to another length and perturbed, as
    # a matched correct sequence would be
    samples = []
    for i in range(2):
        m = n - 1 + i
        decoded = dct_basis(m)[:k].T @ features[i].T
        samples.append(TrainingSample(f"s{i}", features[i], int(labels[i]), n,
                                      decoded + rng.normal(scale=0.1, size=decoded.shape)))
    tcfg = TrainConfig()
    feedback = np.array([labels[0], -1])

    def loss():
        drop_rng = np.random.default_rng(seed + 1)
        logits, corrected, _ = model.forward(features, training=True, rng=drop_rng, feedback_labels=feedback)
        return compute_losses(logits, corrected, samples, tcfg)[0]

    return model, loss


def check_full_loss(scale="small", seed=0, h=1e-5, tol=1e-4, inject_bug=False, max_per_param=None,
                    bn_mode="running"):
    """Finite-difference check of every parameter of a reduced model under the combined loss."""
    model, loss = loss_problem(scale, seed, bn_mode)
    ctx = _broken_relu() if inject_bug else contextlib.nullcontext()
    with ctx:
        return grad_check(loss, model.parameters(), h=h, tol=tol, max_per_param=max_per_param)
