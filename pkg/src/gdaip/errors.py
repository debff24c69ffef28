"""Exception types shared across the package.

Each maps to a CLI exit code: InputError -> 2, DivergenceError -> 3,
ArtifactIOError -> 4.
"""


class InputError(ValueError):
    """Structurally invalid input: bad shapes, bad file content, bad config."""

    exit_code = 2


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss; carries the offending step."""

    exit_code = 3

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")


class ArtifactIOError(OSError):
    """Filesystem-level failure while reading or writing run artifacts."""

    exit_code = 4
