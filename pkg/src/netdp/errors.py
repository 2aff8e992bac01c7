"""Error types shared across the package.

Plain ``ValueError`` is used for malformed arguments (wrong range, wrong
topology, dimension mismatch).  The two classes below mark conditions that
callers may want to handle separately: bounds evaluated outside their stated
validity window, and calibration searches that cannot meet their target.
"""


class ValidityWindowError(ValueError):
    """A closed-form bound was evaluated outside its stated validity window.

    Every bound that enforces a window accepts ``unchecked=True`` to skip the
    check; reports produced that way are tagged as outside the window.
    """


class InfeasibleError(RuntimeError):
    """A calibration search exhausted its grid without meeting the target."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
