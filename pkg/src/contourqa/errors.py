"""Exception types shared across the toolkit.

ValidationError maps to CLI exit code 1, FormatError (and OSError) to exit
code 2. GenerationError marks a perturbation that could not produce a
low-quality sample; dataset builders treat it per-sample.
"""


class ValidationError(ValueError):
    """Invalid argument, violated invariant, or unmet precondition."""


class FormatError(RuntimeError):
    """Malformed or inconsistent file content."""


class GenerationError(RuntimeError):
    """A perturbation failed to produce a usable low-quality contour."""


class ConvergenceError(RuntimeError):
    """The dual solver hit its iteration cap before reaching tolerance."""
