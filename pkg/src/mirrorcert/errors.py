"""Exception hierarchy.

Every error raised by the library derives from ``MirrorcertError``. The
``exit_code`` class attribute is what the CLI returns when the error escapes
an experiment: 1 for configuration and I/O problems, 2 for numerical
failures, 3 for certificates that did not hold.
"""


class MirrorcertError(Exception):
    """Base class for all library errors."""

    exit_code: int = 2


class ConfigError(MirrorcertError):
    """Invalid or unreadable experiment configuration."""

    exit_code = 1


class NumericError(MirrorcertError):
    """A numerical precondition or computation failed."""

    exit_code = 2


class SupportMismatch(NumericError):
    """Two measures do not live on the same support."""


class ShapeMismatch(NumericError):
    """Array shapes are incompatible (kernel vs. measure, cost vs. marginals)."""


class EmptyVector(NumericError):
    """An operation that needs at least one entry received none."""


class RowOfZeroMass(NumericError):
    """A coupling row has zero mass, so it cannot be normalised."""


ZeroRowMass = RowOfZeroMass


class DomainViolation(NumericError):
    """A point lies outside the domain of a functional or its first variation."""


class NotPSD(NumericError):
    """A Gram matrix produced a negative quadratic form."""


class UnsupportedCombination(NumericError):
    """No closed-form mirror step exists for this potential/constraint pair."""


class InvalidConstants(NumericError):
    """Smoothness/convexity constants violate 0 <= l <= L, L > 0."""


class NotExponentialForm(NumericError):
    """A coupling is not of the form exp((f+g-c)/eps) mu x nu."""


class NotConverged(NumericError):
    """An iterative solver or reference did not reach its tolerance."""


class OracleDisagreement(NumericError):
    """Two independent reference computations disagree."""


class UnreachableObservation(NumericError):
    """An observation has positive mass but zero predicted mass."""


class SizeTooLarge(ConfigError):
    """Requested instance exceeds the supported size."""


class CertificateFailure(MirrorcertError):
    """A certified inequality was violated."""

    exit_code = 3
