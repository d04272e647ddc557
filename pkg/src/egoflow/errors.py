"""Exception types shared across the pipeline."""


class EgoflowError(Exception):
    """Base class for all egoflow errors."""


class DegenerateFrame(EgoflowError):
    """Axis inputs too short or parallel to build an orthonormal frame."""


class BehindCamera(EgoflowError):
    """Point has non-positive depth in a camera that is supposed to see it."""


class SeriesTooShort(EgoflowError):
    """Signal shorter than the filter window requires."""


class TooShort(EgoflowError):
    """Trajectory too short for the requested finite-difference stencil."""


class InvalidSpec(EgoflowError):
    """Scene specification violates its invariants."""


class EmptyAfterMasking(EgoflowError):
    """No usable hand frames survive confidence masking."""


class InsufficientBaseline(EgoflowError):
    """Too few views, or views too close together, to triangulate."""


class NoTriangulablePoints(EgoflowError):
    """Every track of an object failed triangulation or outlier rejection."""


class MissingHand(EgoflowError):
    """A required hand is absent and no placeholder convention applies."""


class AnchorUnavailable(EgoflowError):
    """Anchor reference frame requested but no grasp onset exists."""


class EmptyCorpus(EgoflowError):
    """Normalization statistics requested on an empty corpus."""


class ShapeMismatch(EgoflowError):
    """Tensor shapes disagree between prediction and target."""


class RecordingTooShort(EgoflowError):
    """Recording yields no training samples."""


class EmptyDataset(EgoflowError):
    """Training requested on an empty dataset."""


class NonFiniteOutput(EgoflowError):
    """Rollout produced NaN or infinite values."""
