"""Pose-sequence data model, normalization and DCT trajectory encoding.

Positions are stored as ``(n_frames, n_joints, 3)`` float64 arrays in meters,
with +Z as the up axis and +X as the facing direction after normalization.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .exceptions import (
    CoefficientCountExceedsLength,
    DegenerateBone,
    DegenerateOrientation,
    ValidationError,
)

UP = np.array([0.0, 0.0, 1.0])
FORWARD = np.array([1.0, 0.0, 0.0])
DEFAULT_N_COEFFICIENTS = 25


def _frozen(array):
    array = np.array(array, dtype=np.float64)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Skeleton:
    """Kinematic tree over named joints.

    ``parent_index[root] == root``. ``lateral_pair`` holds the (left, right)
    joint indices whose connecting line defines the body's lateral axis; when
    absent, facing alignment is skipped.
    """

    joint_names: tuple
    parent_index: tuple
    hip_index: int
    spine_index: int
    lateral_pair: tuple = None

    def __post_init__(self):
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(self, "parent_index", tuple(int(p) for p in self.parent_index))
        if self.lateral_pair is not None:
            object.__setattr__(self, "lateral_pair", tuple(int(i) for i in self.lateral_pair))
        n = len(self.joint_names)
        if n < 2:
            raise ValidationError("a skeleton needs at least 2 joints")
        if len(self.parent_index) != n:
            raise ValidationError("parent_index must have one entry per joint")
        indices = [self.hip_index, self.spine_index, *self.parent_index, *(self.lateral_pair or ())]
        if any(not 0 <= i < n for i in indices):
            raise ValidationError("skeleton index out of range")
        if self.parent_index[self.hip_index] != self.hip_index:
            raise ValidationError("the hip joint must be the root (its own parent)")
        # every joint must reach the root without cycles
        for j in range(n):
            seen, k = set(), j
            while k != self.hip_index:
                if k in seen or self.parent_index[k] == k:
                    raise ValidationError(f"joint {j} is not connected to the root")
                seen.add(k)
                k = self.parent_index[k]

    @property
    def n_joints(self):
        return len(self.joint_names)

    @property
    def edges(self):
        """(parent, child) pairs in breadth-first order from the root."""
        return _edges(self.parent_index, self.hip_index)

    def index(self, name):
        return self.joint_names.index(name)

    def to_dict(self):
        out = {
            "joint_names": list(self.joint_names),
            "parent_index": list(self.parent_index),
            "hip_index": self.hip_index,
            "spine_index": self.spine_index,
        }
        if self.lateral_pair is not None:
            out["lateral_pair"] = list(self.lateral_pair)
        return out

    @classmethod
    def from_dict(cls, d):
        lateral = d.get("lateral_pair")
        return cls(
            joint_names=tuple(d["joint_names"]),
            parent_index=tuple(d["parent_index"]),
            hip_index=int(d["hip_index"]),
            spine_index=int(d["spine_index"]),
            lateral_pair=tuple(lateral) if lateral is not None else None,
        )


@lru_cache(maxsize=None)
def _edges(parents, root):
    order, queue = [], [root]
    while queue:
        p = queue.pop(0)
        for c, pc in enumerate(parents):
            if pc == p and c != p:
                order.append((p, c))
                queue.append(c)
    return tuple(order)


JOINTS_17 = (
    "hip", "right_hip", "right_knee", "right_ankle",
    "left_hip", "left_knee", "left_ankle",
    "spine", "thorax", "neck", "head",
    "left_shoulder", "left_elbow", "left_wrist",
    "right_shoulder", "right_elbow", "right_wrist",
)
PARENTS_17 = (0, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15)


def default_skeleton():
    """17-joint skeleton with hip root, spine chain, legs and arms."""
    return Skeleton(
        joint_names=JOINTS_17,
        parent_index=PARENTS_17,
        hip_index=0,
        spine_index=7,
        lateral_pair=(11, 14),
    )


@dataclass(frozen=True)
class MotionSequence:
    skeleton: Skeleton
    frames: np.ndarray
    fps: float = 30.0

    def __post_init__(self):
        frames = _frozen(self.frames)
        if frames.ndim != 3 or frames.shape[2] != 3:
            raise ValidationError(f"frames must be N x J x 3, got {frames.shape}")
        if frames.shape[1] != self.skeleton.n_joints:
            raise ValidationError(
                f"frames have {frames.shape[1]} joints, skeleton has {self.skeleton.n_joints}"
            )
        if frames.shape[0] < 2:
            raise ValidationError("a motion sequence needs at least 2 frames")
        if not np.all(np.isfinite(frames)):
            raise ValidationError("frames contain non-finite values")
        if not self.fps > 0:
            raise ValidationError("fps must be positive")
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self):
        return self.frames.shape[0]

    @property
    def n_joints(self):
        return self.frames.shape[1]

    def flat(self):
        """Frames as an ``(N, J*3)`` matrix."""
        return self.frames.reshape(self.n_frames, -1)

    def with_frames(self, frames):
        return MotionSequence(self.skeleton, frames, self.fps)


@dataclass(frozen=True)
class DctMotion:
    coeffs: np.ndarray
    source_length: int
    skeleton: Skeleton

    def __post_init__(self):
        coeffs = _frozen(self.coeffs)
        if coeffs.ndim != 3 or coeffs.shape[2] != 3:
            raise ValidationError(f"coeffs must be K x J x 3, got {coeffs.shape}")
        if coeffs.shape[0] > self.source_length:
            raise CoefficientCountExceedsLength(
                f"{coeffs.shape[0]} coefficients for {self.source_length} frames"
            )
        if not np.all(np.isfinite(coeffs)):
            raise ValidationError("coeffs contain non-finite values")
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def n_coefficients(self):
        return self.coeffs.shape[0]

    def as_features(self):
        """``(J*3, K)`` layout used by the network: one row per joint coordinate."""
        return self.coeffs.reshape(self.n_coefficients, -1).T.copy()

    @classmethod
    def from_features(cls, features, source_length, skeleton):
        features = np.asarray(features, dtype=np.float64)
        return cls(features.T.reshape(features.shape[1], -1, 3), source_length, skeleton)


@dataclass(frozen=True)
class NormalizationReport:
    scale_factor: float
    applied_rotation: np.ndarray
    hip_offset_per_frame: np.ndarray = field(repr=False)

    def __post_init__(self):
        rot = _frozen(self.applied_rotation)
        if rot.shape != (3, 3) or not np.allclose(rot.T @ rot, np.eye(3), atol=1e-9):
            raise ValidationError("applied_rotation must be a 3x3 orthonormal matrix")
        object.__setattr__(self, "applied_rotation", rot)
        object.__setattr__(self, "hip_offset_per_frame", _frozen(self.hip_offset_per_frame))


# --------------------------------------------------------------------------
# normalization


def bone_lengths(seq):
    """Per-frame bone lengths, shape ``(N, n_edges)`` in ``skeleton.edges`` order."""
    parents, children = np.array(seq.skeleton.edges).T
    return np.linalg.norm(seq.frames[:, children] - seq.frames[:, parents], axis=-1)


def mean_bone_lengths(seq):
    return bone_lengths(seq).mean(axis=0)


def rotation_between(a, b):
    """Minimal rotation matrix taking direction ``a`` onto direction ``b``."""
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    v = np.cross(a, b)
    c = float(np.dot(a, b))
    s = np.linalg.norm(v)
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        # antiparallel: half turn about any axis orthogonal to a
        axis = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(axis) < 1e-6:
            axis = np.cross(a, [0.0, 1.0, 0.0])
        axis /= np.linalg.norm(axis)
        return 2.0 * np.outer(axis, axis) - np.eye(3)
    vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + vx + vx @ vx * ((1 - c) / s**2)


def _yaw_to_forward(frames, skeleton):
    left, right = skeleton.lateral_pair
    lateral = (frames[:, left] - frames[:, right]).mean(axis=0)
    lateral[2] = 0.0
    if np.linalg.norm(lateral) < 1e-12:
        raise DegenerateOrientation("lateral axis is vertical or zero; cannot fix facing")
    facing = np.cross(lateral, UP)
    return rotation_between(facing, FORWARD)


def normalize(seq, reference_bone_lengths):
    """Center on the hip, rescale bones to the reference, then rotate upright.

    Steps, in order: subtract the hip position of every frame; walk the tree
    from the root rescaling each bone to its reference length while keeping
    its direction; rotate so the mean hip->spine vector points along +Z; yaw
    about +Z so the mean facing direction (normal of the lateral shoulder
    line) points along +X. Rescaling precedes rotation so that applying the
    function twice is an identity.

    Returns the normalized sequence and a :class:`NormalizationReport`.
    """
    sk = seq.skeleton
    edges = sk.edges
    ref = np.asarray(reference_bone_lengths, dtype=np.float64)
    if ref.shape != (len(edges),):
        raise ValidationError(f"expected {len(edges)} reference bone lengths, got {ref.shape}")
    if np.any(~np.isfinite(ref)) or np.any(ref <= 0):
        raise DegenerateBone("reference bone lengths must be positive")

    hip = seq.frames[:, sk.hip_index].copy()
    centered = seq.frames - hip[:, None, :]

    lengths = bone_lengths(seq)
    if np.any(lengths <= 1e-12):
        raise DegenerateBone("sequence contains a zero-length bone")
    rescaled = np.zeros_like(centered)
    for e, (p, c) in enumerate(edges):
        offset = centered[:, c] - centered[:, p]
        rescaled[:, c] = rescaled[:, p] + offset * (ref[e] / lengths[:, e])[:, None]
    scale_factor = float(ref.sum() / lengths.mean(axis=0).sum())

    spine = rescaled[:, sk.spine_index].mean(axis=0)
    if np.linalg.norm(spine) < 1e-12:
        raise DegenerateOrientation("mean hip-to-spine vector has zero length")
    rotation = rotation_between(spine, UP)
    rotated = rescaled @ rotation.T
    if sk.lateral_pair is not None:
        yaw = _yaw_to_forward(rotated, sk)
        rotated = rotated @ yaw.T
        rotation = yaw @ rotation

    report = NormalizationReport(scale_factor, rotation, hip)
    return seq.with_frames(rotated), report


def denormalize(seq, report):
    """Undo the rotation and hip centering recorded in ``report`` (not the rescale)."""
    if seq.n_frames != report.hip_offset_per_frame.shape[0]:
        raise ValidationError("report and sequence have different frame counts")
    frames = seq.frames @ report.applied_rotation + report.hip_offset_per_frame[:, None, :]
    return seq.with_frames(frames)


# --------------------------------------------------------------------------
# DCT encoding


@lru_cache(maxsize=256)
def _dct_basis_cached(n):
    k = np.arange(n)[:, None]
    t = np.arange(n)[None, :]
    basis = np.sqrt(2.0 / n) * np.cos(np.pi * (2 * t + 1) * k / (2 * n))
    basis[0] /= np.sqrt(2.0)
    basis.setflags(write=False)
    return basis


def dct_basis(n):
    """Orthonormal DCT-II matrix; row ``k`` is the k-th basis vector over ``n`` samples."""
    return _dct_basis_cached(int(n))


def dct_encode(seq, k=DEFAULT_N_COEFFICIENTS):
    n = seq.n_frames
    if not 1 <= k:
        raise ValidationError("coefficient count must be at least 1")
    if k > n:
        raise CoefficientCountExceedsLength(f"k={k} exceeds sequence length {n}")
    coeffs = np.tensordot(dct_basis(n)[:k], seq.frames, axes=(1, 0))
    return DctMotion(coeffs, n, seq.skeleton)


def dct_decode(dct, out_length=None, fps=30.0):
    n = dct.source_length if out_length is None else int(out_length)
    if n < 2:
        raise ValidationError("out_length must be at least 2")
    k = dct.n_coefficients
    if k > n:
        raise CoefficientCountExceedsLength(f"{k} coefficients cannot be decoded into {n} frames")
    frames = np.tensordot(dct_basis(n)[:k].T, dct.coeffs, axes=(1, 0))
    return MotionSequence(dct.skeleton, frames, fps)


def velocities(seq):
    return np.diff(seq.frames, axis=0)
