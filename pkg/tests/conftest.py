import numpy as np
import pytest
from hypothesis import settings

from posefeedback import synth
from posefeedback.dataset import subject_split
from posefeedback.model import ModelConfig
from posefeedback.motion import MotionSequence
from posefeedback.verification import chain_skeleton

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

TINY = dict(hidden=12, feedback_width=8, conv_channels=4, n_coefficients=10)


@pytest.fixture(scope="session")
def one_per_cell():
    """One recording per subject and category (44), noise-free takes kept varied."""
    return synth.make_dataset(per_cell=1, seed=0)


@pytest.fixture(scope="session")
def one_per_cell_split(one_per_cell):
    return subject_split(one_per_cell)


@pytest.fixture
def tiny_config():
    return ModelConfig(**TINY)


def random_sequence(rng, n_frames=12, n_joints=5, scale=1.0):
    return MotionSequence(chain_skeleton(n_joints), rng.normal(scale=scale, size=(n_frames, n_joints, 3)))
