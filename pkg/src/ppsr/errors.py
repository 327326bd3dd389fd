"""Exception types raised across the package."""


class PPSRError(Exception):
    """Base class for all package errors."""


class MagnitudeOverflow(PPSRError, ValueError):
    """A real value is too large to be fixed-point encoded in the ring."""


class IndexMismatch(PPSRError, ValueError):
    """Shares belonging to incompatible parties were combined."""


class TripleReuse(PPSRError):
    """A Beaver triple was offered for a second multiplication."""


class TripleExhaustion(PPSRError):
    """The dealer can no longer supply Beaver triples."""


class ChannelFailure(PPSRError):
    """A message could not be delivered or did not arrive in time."""


class HandshakeMismatch(ChannelFailure):
    """Peers disagree on session id, ring parameters or configuration."""


class DimensionMismatch(PPSRError, ValueError):
    """Client datasets disagree on the number of rows."""


class IncompletePartition(PPSRError, ValueError):
    """A variable-to-client assignment does not cover every column exactly once."""


class DegenerateTarget(PPSRError, ValueError):
    """R-squared requested for a constant target."""


class ExpressionSyntaxError(PPSRError, SyntaxError):
    """Malformed s-expression text.

    ``offset`` is the character position where parsing failed.
    """

    def __init__(self, message, offset):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset
