"""Exception types shared across the package.

The CLI maps these onto process exit codes, so keep the hierarchy flat and
the meanings distinct.
"""


class PolyslsError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(PolyslsError):
    """A configuration document is malformed; the message names the field."""


class ExpansionOverflowError(PolyslsError):
    """A polynomial expansion exceeded the configured degree bound."""


class MissingAlphaError(PolyslsError):
    """A required cancellation-weight slot has no value (strict mode)."""


class AlphaMismatchError(PolyslsError):
    """Weights passed to an operation differ from the ones a table was built with."""


class DivergenceError(PolyslsError):
    """A simulated state left the sanity envelope (mis-synthesized maps)."""


class FingerprintMismatchError(PolyslsError):
    """An archive does not belong to the model it was paired with."""
