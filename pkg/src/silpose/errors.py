"""Exception hierarchy shared by all modules."""


class SilposeError(Exception):
    pass


class InvalidArgumentError(SilposeError, ValueError):
    pass


class BehindCameraError(SilposeError, ValueError):
    pass


class EmptyMaskError(SilposeError):
    pass


class DegenerateInputError(SilposeError):
    pass


class NoCorrespondenceError(SilposeError):
    pass


class RankDeficiencyError(SilposeError, ArithmeticError):
    pass


class EstimationFailedError(SilposeError):
    """Raised when no camera yields usable correspondences.

    The pose the estimator started from is kept on ``initial_pose`` so
    callers can still write something out.
    """

    def __init__(self, message, initial_pose):
        super().__init__(message)
        self.initial_pose = initial_pose
