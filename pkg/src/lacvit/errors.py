"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes; everything else raises them
directly at the point of contract violation.
"""


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(ValueError):
    """A documented precondition was violated by the caller."""


class DegenerateInputError(ValueError):
    """Input is numerically degenerate (e.g. a zero row fed to a normalizer)."""


class ConfigError(ValueError):
    """Bad run configuration (unknown key, missing requirement, bad value)."""


class DataFormatError(ValueError):
    """A binary file does not follow its documented layout."""


class NumericalAbort(RuntimeError):
    """Training produced a non-finite loss; aborted loudly with context."""
