"""Labeled recordings and the on-disk dataset format.

Each recording is one JSON document (see ``docs/formats.md``). Floats are
written with Python's shortest round-trip repr (up to 17 significant digits).
"""

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import SchemaError, ValidationError
from .labels import InstructionLabel
from .motion import MotionSequence, Skeleton

FORMAT_TAG = "posefeedback.sequence/1"
TEST_SUBJECTS = (4,)


@dataclass(frozen=True)
class Recording:
    id: str
    subject: int
    label: InstructionLabel
    sequence: MotionSequence

    @property
    def exercise(self):
        return self.label.exercise

    @property
    def instruction(self):
        return self.label.instruction

    @property
    def is_correct(self):
        return self.label.is_correct

    def with_sequence(self, sequence):
        return Recording(self.id, self.subject, self.label, sequence)


def recording_to_dict(rec):
    return {
        "format": FORMAT_TAG,
        "id": rec.id,
        "subject": rec.subject,
        "exercise": rec.exercise,
        "instruction": rec.instruction,
        "fps": float(rec.sequence.fps),
        "skeleton": rec.sequence.skeleton.to_dict(),
        "frames": rec.sequence.frames.tolist(),
    }


def recording_from_dict(d, source="<memory>"):
    try:
        if d.get("format") != FORMAT_TAG:
            raise SchemaError(f"{source}: missing or unknown format tag {d.get('format')!r}")
        skeleton = Skeleton.from_dict(d["skeleton"])
        frames = np.asarray(d["frames"], dtype=np.float64)
        seq = MotionSequence(skeleton, frames, float(d["fps"]))
        label = InstructionLabel(d["exercise"], d["instruction"])
        return Recording(str(d["id"]), int(d["subject"]), label, seq)
    except SchemaError:
        raise
    except (KeyError, TypeError, ValueError, ValidationError) as exc:
        raise SchemaError(f"{source}: {exc}") from exc


def write_recording(rec, path):
    text = json.dumps(recording_to_dict(rec), separators=(",", ":"))
    Path(path).write_text(text + "\n")


def read_recording(path):
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    if not isinstance(d, dict):
        raise SchemaError(f"{path}: top level must be an object")
    return recording_from_dict(d, str(path))


def split_name(rec, test_subjects=TEST_SUBJECTS):
    return "test" if rec.subject in test_subjects else "train"


def write_dataset(recordings, out_dir, test_subjects=TEST_SUBJECTS):
    """Write ``train/`` and ``test/`` sub-directories plus a manifest."""
    out_dir = Path(out_dir)
    manifest = {"format": "posefeedback.dataset/1", "test_subjects": list(test_subjects), "recordings": []}
    for rec in sorted(recordings, key=lambda r: r.id):
        split = split_name(rec, test_subjects)
        (out_dir / split).mkdir(parents=True, exist_ok=True)
        write_recording(rec, out_dir / split / f"{rec.id}.json")
        manifest["recordings"].append({"id": rec.id, "split": split, "subject": rec.subject})
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    return out_dir


def load_dataset(path):
    """Load every recording file below ``path`` (sorted by id)."""
    path = Path(path)
    if not path.is_dir():
        raise SchemaError(f"{path}: dataset directory not found")
    recs = []
    for root, _, files in os.walk(path):
        for name in files:
            if name.endswith(".json") and name != "manifest.json":
                recs.append(read_recording(Path(root) / name))
    if not recs:
        raise SchemaError(f"{path}: no recordings found")
    ids = [r.id for r in recs]
    if len(set(ids)) != len(ids):
        raise SchemaError(f"{path}: duplicate recording ids")
    return sorted(recs, key=lambda r: r.id)


def subject_split(recordings, test_subjects=TEST_SUBJECTS):
    train = [r for r in recordings if r.subject not in test_subjects]
    test = [r for r in recordings if r.subject in test_subjects]
    return train, test
