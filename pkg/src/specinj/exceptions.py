"""Exception types shared across the package."""


class ResourceError(RuntimeError):
    """A combinatorial size guard was exceeded."""


class DegenerateFrameError(ValueError):
    """The three frame atoms are (nearly) collinear."""


class DegenerateAnchorError(ValueError):
    """The anchor atom sits on the centroid, so its direction is undefined."""


class GateError(RuntimeError):
    """A dataset-level injection gate failed.

    ``report`` carries the machine-readable details (rejected frames, leakage).
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report or {}


class TrainingError(RuntimeError):
    """Gradient training diverged."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
