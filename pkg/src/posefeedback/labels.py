"""Exercise / instruction taxonomy (11 categories over 3 exercises)."""

from dataclasses import dataclass

EXERCISES = ("squat", "lunge", "plank")

# Order fixes the flat index and the row order of every report table.
TAXONOMY = (
    ("squat", "correct"),
    ("squat", "feet_too_wide"),
    ("squat", "knees_inward"),
    ("squat", "not_low_enough"),
    ("squat", "front_bent"),
    ("lunge", "correct"),
    ("lunge", "not_low_enough"),
    ("lunge", "knee_passes_toe"),
    ("plank", "correct"),
    ("plank", "arched_back"),
    ("plank", "hunch_back"),
)

NUM_LABELS = len(TAXONOMY)

DISPLAY_NAMES = {
    "squat": "Squats",
    "lunge": "Lunges",
    "plank": "Planks",
    "correct": "Correct",
    "feet_too_wide": "Feet too wide",
    "knees_inward": "Knees inward",
    "not_low_enough": "Not low enough",
    "front_bent": "Front bent",
    "knee_passes_toe": "Knee passes toe",
    "arched_back": "Arched back",
    "hunch_back": "Hunch back",
}

# Per-subject sequence counts for subjects 1-4 of the recorded dataset.
RECORDED_COUNTS = {
    ("squat", "correct"): (10, 10, 11, 10),
    ("squat", "feet_too_wide"): (5, 8, 5, 5),
    ("squat", "knees_inward"): (6, 7, 5, 5),
    ("squat", "not_low_enough"): (5, 7, 5, 4),
    ("squat", "front_bent"): (5, 6, 6, 7),
    ("lunge", "correct"): (12, 11, 11, 12),
    ("lunge", "not_low_enough"): (10, 10, 10, 10),
    ("lunge", "knee_passes_toe"): (10, 10, 11, 10),
    ("plank", "correct"): (7, 8, 11, 7),
    ("plank", "arched_back"): (5, 5, 11, 9),
    ("plank", "hunch_back"): (10, 10, 11, 9),
}


@dataclass(frozen=True)
class InstructionLabel:
    exercise: str
    instruction: str

    def __post_init__(self):
        if (self.exercise, self.instruction) not in _INDEX:
            raise ValueError(
                f"unknown exercise/instruction pair ({self.exercise!r}, {self.instruction!r})"
            )

    @property
    def flat_index(self):
        return _INDEX[(self.exercise, self.instruction)]

    @property
    def is_correct(self):
        return self.instruction == "correct"

    @property
    def display_name(self):
        return f"{DISPLAY_NAMES[self.exercise]} / {DISPLAY_NAMES[self.instruction]}"

    @classmethod
    def from_index(cls, index):
        if not 0 <= int(index) < NUM_LABELS:
            raise ValueError(f"label index {index} outside 0..{NUM_LABELS - 1}")
        return cls(*TAXONOMY[int(index)])


_INDEX = {pair: i for i, pair in enumerate(TAXONOMY)}


def correct_index(exercise):
    """Flat index of the Correct category of ``exercise``."""
    return _INDEX[(exercise, "correct")]


def instructions_for(exercise):
    return [ins for ex, ins in TAXONOMY if ex == exercise]


def exercise_of(index):
    return TAXONOMY[int(index)][0]
