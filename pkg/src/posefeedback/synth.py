"""Procedural squat / lunge / plank motions with parameterized form mistakes.

Every pose is built by forward kinematics from per-bone unit directions, so
bone lengths equal the subject's lengths in every frame. Legs are placed with
a two-bone IK solve between the hip joint and an ankle fixed on the floor.
World frame: +X forward, +Y left, +Z up, meters.
"""

from dataclasses import dataclass, replace

import numpy as np

from .dataset import Recording
from .exceptions import ValidationError
from .labels import RECORDED_COUNTS, InstructionLabel
from .motion import MotionSequence, default_skeleton

# Base bone lengths (m) for a 1.75 m subject, keyed by child joint name.
BASE_BONES = {
    "right_hip": 0.11, "left_hip": 0.11,
    "right_knee": 0.44, "left_knee": 0.44,
    "right_ankle": 0.43, "left_ankle": 0.43,
    "spine": 0.23, "thorax": 0.24, "neck": 0.10, "head": 0.12,
    "left_shoulder": 0.16, "right_shoulder": 0.16,
    "left_elbow": 0.28, "right_elbow": 0.28,
    "left_wrist": 0.25, "right_wrist": 0.25,
}


@dataclass(frozen=True)
class MistakeParams:
    """Deformation severities; the neutral values describe correct form.

    depth_scale        fraction of the template squat/lunge depth reached (0.5 for Not low enough)
    stance_scale       multiplier on squat stance width (1.6 for Feet too wide)
    knee_inward_deg    medial rotation of the knee pole at full depth
    torso_pitch_deg    extra forward torso pitch at full depth (Front bent)
    knee_forward       forward pelvis shift at full lunge depth, in leg lengths (Knee passes toe)
    hip_sag_deg        plank hip sag (+) or pike (-) angle
    spine_curve_deg    plank spine-chain curvature, extension (+) or flexion (-)
    """

    depth_scale: float = 1.0
    stance_scale: float = 1.0
    knee_inward_deg: float = 0.0
    torso_pitch_deg: float = 0.0
    knee_forward: float = 0.0
    hip_sag_deg: float = 0.0
    spine_curve_deg: float = 0.0


MISTAKES = {
    ("squat", "correct"): MistakeParams(),
    ("squat", "feet_too_wide"): MistakeParams(stance_scale=1.6),
    ("squat", "knees_inward"): MistakeParams(knee_inward_deg=40.0),
    ("squat", "not_low_enough"): MistakeParams(depth_scale=0.5),
    ("squat", "front_bent"): MistakeParams(torso_pitch_deg=30.0),
    ("lunge", "correct"): MistakeParams(),
    ("lunge", "not_low_enough"): MistakeParams(depth_scale=0.5),
    ("lunge", "knee_passes_toe"): MistakeParams(knee_forward=0.22),
    ("plank", "correct"): MistakeParams(),
    ("plank", "arched_back"): MistakeParams(hip_sag_deg=10.0, spine_curve_deg=12.0),
    ("plank", "hunch_back"): MistakeParams(hip_sag_deg=-10.0, spine_curve_deg=-12.0),
}


@dataclass(frozen=True)
class SynthSpec:
    exercise: str
    instruction: str
    subject_id: int = 1
    num_reps: int = 1
    frames_per_rep: int = 40
    noise_scale: float = 0.0
    seed: int = 0
    count: int = 1
    variation: float = 1.0
    fps: float = 30.0

    def __post_init__(self):
        if (self.exercise, self.instruction) not in MISTAKES:
            raise ValidationError(f"invalid exercise/instruction pair ({self.exercise}, {self.instruction})")
        if self.noise_scale < 0 or self.variation < 0:
            raise ValidationError("noise_scale and variation must be non-negative")
        if self.num_reps < 1 or self.frames_per_rep < 4 or self.count < 1:
            raise ValidationError("num_reps, count >= 1 and frames_per_rep >= 4 required")


@dataclass(frozen=True)
class Template:
    """Resolved per-take parameters (after subject style and take variation)."""

    bones: dict
    frames_per_rep: int
    depth: float
    stance_half: float
    lean_deg: float
    arm_deg: float
    incline_deg: float
    breath_deg: float
    mistake: MistakeParams


def subject_bones(subject_id):
    """Deterministic per-subject bone lengths (height and proportion variation)."""
    rng = np.random.default_rng([int(subject_id), 7211])
    height = 1.0 + 0.06 * rng.uniform(-1, 1)
    # left and right bones share one factor so subjects stay symmetric
    factors = {}
    bones = {}
    for name in sorted(BASE_BONES):
        segment = name.split("_", 1)[-1]
        if segment not in factors:
            factors[segment] = height * (1.0 + 0.04 * rng.uniform(-1, 1))
        bones[name] = BASE_BONES[name] * factors[segment]
    return bones


def resolve_template(spec, take=0):
    """Per-take template parameters; the mistake is applied later by ``generate``."""
    subj = np.random.default_rng([int(spec.subject_id), 9173])
    style = dict(
        tempo=0.08 * subj.uniform(-1, 1),
        lean=3.0 * subj.uniform(-1, 1),
        depth=0.04 * subj.uniform(-1, 1),
    )
    # take variation ignores the instruction: take i of a mistake shares its
    # template with take i of the correct form
    rng = np.random.default_rng([int(spec.seed), int(spec.subject_id), EXERCISE_CODES[spec.exercise], int(take)])
    u = rng.uniform(-1, 1, size=7) * spec.variation
    bones = subject_bones(spec.subject_id)
    leg = bones["right_knee"] + bones["right_ankle"]
    fpr = spec.frames_per_rep * (1.0 + style["tempo"] * spec.variation + 0.12 * u[0])
    fpr = max(4, 2 * int(round(fpr / 2)))
    base_depth = {"squat": 0.42, "lunge": 0.33, "plank": 0.0}[spec.exercise]
    return Template(
        bones=bones,
        frames_per_rep=fpr,
        depth=base_depth * leg * (1.0 + style["depth"] * spec.variation + 0.05 * u[1]),
        stance_half=1.3 * bones["right_hip"] * (1.0 + 0.06 * u[2]),
        lean_deg=20.0 + style["lean"] * spec.variation + 3.0 * u[3],
        arm_deg=60.0 + 8.0 * u[4],
        incline_deg=12.0 + 2.5 * u[5],
        breath_deg=0.6 * (1.0 + 0.3 * u[6]),
        mistake=MISTAKES[(spec.exercise, spec.instruction)],
    )


EXERCISE_CODES = {"squat": 0, "lunge": 1, "plank": 2}


def _pair_code(spec):
    return InstructionLabel(spec.exercise, spec.instruction).flat_index


def _unit(v):
    return v / np.linalg.norm(v)


def _knee(hip_joint, ankle, thigh, shin, pole):
    """Two-bone IK: knee position bending toward ``pole``."""
    axis = ankle - hip_joint
    d = np.linalg.norm(axis)
    d = np.clip(d, abs(thigh - shin) + 1e-6, thigh + shin - 1e-6)
    u = _unit(axis)
    n = pole - np.dot(pole, u) * u
    n = _unit(n)
    along = (thigh**2 - shin**2 + d**2) / (2 * d)
    across = np.sqrt(max(thigh**2 - along**2, 0.0))
    return hip_joint + along * u + across * n


class _Pose:
    """Forward-kinematic pose builder over the default skeleton."""

    def __init__(self, skeleton, bones):
        self.sk = skeleton
        self.bones = bones
        self.pos = np.zeros((skeleton.n_joints, 3))

    def put(self, child, direction):
        c = self.sk.index(child)
        p = self.sk.parent_index[c]
        self.pos[c] = self.pos[p] + self.bones[child] * _unit(np.asarray(direction, dtype=np.float64))
        return self.pos[c]

    def leg(self, side, ankle_target, pole):
        hip_j = self.put(f"{side}_hip", [0.0, 1.0 if side == "left" else -1.0, 0.0])
        knee = _knee(hip_j, ankle_target, self.bones[f"{side}_knee"], self.bones[f"{side}_ankle"], pole)
        knee = self.put(f"{side}_knee", knee - hip_j)
        self.put(f"{side}_ankle", ankle_target - knee)

    def torso(self, angles_deg):
        """Spine chain pitched forward from vertical by the given per-segment angles."""
        for name, a in zip(("spine", "thorax", "neck", "head"), np.radians(angles_deg)):
            self.put(name, [np.sin(a), 0.0, np.cos(a)])

    def arms(self, direction_left, direction_right):
        self.put("left_shoulder", [0.0, 1.0, 0.0])
        self.put("right_shoulder", [0.0, -1.0, 0.0])
        for side, d in (("left", direction_left), ("right", direction_right)):
            self.put(f"{side}_elbow", d)
            self.put(f"{side}_wrist", d)


def _phase(t, frames_per_rep):
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * t / frames_per_rep))


def _squat_frame(pose, tpl, s):
    m = tpl.mistake
    b = tpl.bones
    pelvis_w = b["right_hip"]
    stance = tpl.stance_half * m.stance_scale
    lateral = abs(stance - pelvis_w)
    leg = b["right_knee"] + b["right_ankle"]
    z_stand = np.sqrt((0.985 * leg) ** 2 - lateral**2)
    drop = m.depth_scale * tpl.depth * s
    pose.pos[0] = [-0.3 * drop, 0.0, z_stand - drop]
    inward = np.radians(m.knee_inward_deg) * s
    for side, sign in (("left", 1.0), ("right", -1.0)):
        pole = np.array([np.cos(inward), -sign * np.sin(inward), 0.0])
        pose.leg(side, np.array([0.0, sign * stance, 0.0]), pole)
    lean = (tpl.lean_deg + m.torso_pitch_deg) * s
    pose.torso([lean, lean, 0.6 * lean, 0.4 * lean])
    a = np.radians(tpl.arm_deg + 30.0 * s)
    arm = [np.sin(a), 0.0, -np.cos(a)]
    pose.arms(arm, arm)


def _lunge_frame(pose, tpl, s):
    m = tpl.mistake
    b = tpl.bones
    leg = b["right_knee"] + b["right_ankle"]
    reach = 0.42 * leg
    z_stand = np.sqrt((0.985 * leg) ** 2 - reach**2)
    drop = m.depth_scale * tpl.depth * s
    pose.pos[0] = [m.knee_forward * leg * s, 0.0, z_stand - drop]
    forward = np.array([1.0, 0.0, 0.0])
    pose.leg("left", np.array([reach, b["left_hip"], 0.0]), forward)
    pose.leg("right", np.array([-reach, -b["right_hip"], 0.0]), forward)
    lean = 0.25 * (tpl.lean_deg - 20.0) + 5.0 * s
    pose.torso([lean, lean, lean, lean])
    hang = np.radians(tpl.arm_deg - 60.0)
    pose.arms([np.sin(hang), 0.15, -1.0], [np.sin(hang), -0.15, -1.0])


def _plank_frame(pose, tpl, s):
    m = tpl.mistake
    incline = tpl.incline_deg + tpl.breath_deg * (2.0 * s - 1.0)
    leg_angle = np.radians(incline - m.hip_sag_deg)
    torso_from_vertical = 90.0 - (incline + m.hip_sag_deg)
    curve = m.spine_curve_deg
    pose.pos[0] = [0.0, 0.0, 0.0]
    for side, sign in (("left", 1.0), ("right", -1.0)):
        hip_j = pose.put(f"{side}_hip", [0.0, sign, 0.0])
        down_back = np.array([-np.cos(leg_angle), 0.0, -np.sin(leg_angle)])
        pose.put(f"{side}_knee", down_back)
        pose.put(f"{side}_ankle", down_back)
    pose.torso([
        torso_from_vertical,
        torso_from_vertical - 0.5 * curve,
        torso_from_vertical - curve,
        torso_from_vertical - curve - 10.0,
    ])
    a = np.radians(tpl.arm_deg - 60.0)
    down = [np.sin(a) * 0.3, 0.0, -1.0]
    pose.arms(down, down)
    wrists = pose.pos[[pose.sk.index("left_wrist"), pose.sk.index("right_wrist")]]
    pose.pos[:, 2] -= wrists[:, 2].mean()


_FRAME_BUILDERS = {"squat": _squat_frame, "lunge": _lunge_frame, "plank": _plank_frame}


def _enforce_bones(frames, skeleton, bones):
    """Rescale every bone of noisy frames back to its length, keeping directions."""
    out = frames.copy()
    for p, c in skeleton.edges:
        offset = frames[:, c] - frames[:, p]
        length = np.linalg.norm(offset, axis=-1, keepdims=True)
        out[:, c] = out[:, p] + offset * (bones[skeleton.joint_names[c]] / length)
    return out


def render(spec, take=0, skeleton=None):
    """Frames ``(N, J, 3)`` of one take, plus its resolved template."""
    skeleton = skeleton or default_skeleton()
    tpl = resolve_template(spec, take)
    n = spec.num_reps * tpl.frames_per_rep + 1
    pose = _Pose(skeleton, tpl.bones)
    build = _FRAME_BUILDERS[spec.exercise]
    frames = np.empty((n, skeleton.n_joints, 3))
    for t in range(n):
        build(pose, tpl, _phase(t, tpl.frames_per_rep))
        frames[t] = pose.pos
    if spec.noise_scale > 0:
        rng = np.random.default_rng([int(spec.seed), int(spec.subject_id), _pair_code(spec), int(take), 1])
        noisy = frames + rng.normal(0.0, spec.noise_scale, frames.shape)
        frames = _enforce_bones(noisy, skeleton, tpl.bones)
    return frames, tpl


def generate(spec, skeleton=None):
    """``spec.count`` labeled recordings for one (subject, exercise, instruction) cell."""
    skeleton = skeleton or default_skeleton()
    label = InstructionLabel(spec.exercise, spec.instruction)
    out = []
    for take in range(spec.count):
        frames, _ = render(spec, take, skeleton)
        rid = f"s{spec.subject_id}_{spec.exercise}_{spec.instruction}_{take:02d}"
        out.append(Recording(rid, int(spec.subject_id), label, MotionSequence(skeleton, frames, spec.fps)))
    return out


def make_dataset(counts=None, subjects=(1, 2, 3, 4), seed=0, noise_scale=0.01,
                 frames_per_rep=40, variation=1.0, per_cell=None):
    """Recordings for every (subject, category) cell.

    ``counts`` maps (exercise, instruction) to one count per subject (default:
    the per-subject counts of the recorded dataset); ``per_cell`` overrides it
    with a constant count.
    """
    counts = RECORDED_COUNTS if counts is None else counts
    recs = []
    for (exercise, instruction), per_subject in counts.items():
        for k, subject in enumerate(subjects):
            n = per_cell if per_cell is not None else per_subject[k]
            if n < 1:
                raise ValidationError("every cell count must be at least 1")
            spec = SynthSpec(exercise, instruction, subject_id=subject, frames_per_rep=frames_per_rep,
                             noise_scale=noise_scale, seed=seed, count=n, variation=variation)
            recs.extend(generate(spec))
    return sorted(recs, key=lambda r: r.id)


def with_mistake(spec, instruction):
    return replace(spec, instruction=instruction)
