"""Exception hierarchy shared by every module of the package."""


class PoseFeedbackError(Exception):
    """Base class for all errors raised by posefeedback."""


class ValidationError(PoseFeedbackError, ValueError):
    """Input violates a documented precondition."""


class SchemaError(ValidationError):
    """A dataset, checkpoint or config file does not follow its schema."""


class DegenerateOrientation(ValidationError):
    """The reference direction used for alignment has zero length."""


class DegenerateBone(ValidationError):
    """A bone (or a reference bone length) has zero length."""


class CoefficientCountExceedsLength(ValidationError):
    """More DCT coefficients were requested than the sequence has frames."""


class SkeletonMismatch(ValidationError):
    """Two sequences that must share a skeleton do not."""


class NoCorrectCandidate(PoseFeedbackError):
    """No correctly performed sequence is available to pair with."""

    def __init__(self, subject, exercise):
        self.subject = subject
        self.exercise = exercise
        super().__init__(
            f"no correct candidate for subject={subject!r}, exercise={exercise!r}"
        )


class ShapeError(PoseFeedbackError, ValueError):
    """Operand shapes are incompatible for a tensor primitive."""

    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = shapes
        joined = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")


class NonScalarRoot(PoseFeedbackError, ValueError):
    """backward() was called on a tensor that is not a scalar."""
