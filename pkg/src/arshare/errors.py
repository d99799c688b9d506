"""Exception types shared across the simulator, server, and harness.

Server-side errors carry a stable ``code`` so the wire protocol can map
them to machine-readable error responses and back.
"""


class ArShareError(Exception):
    """Base class for all errors raised by this package."""

    code = "error"


class SpecError(ArShareError):
    code = "spec_error"


class ProvenanceError(ArShareError):
    code = "provenance_error"


class DimError(ArShareError):
    code = "dim_error"


class DegenerateError(ArShareError):
    code = "degenerate_error"


class HostRejected(ArShareError):
    code = "host_rejected"

    def __init__(self, message, quality=None):
        super().__init__(message)
        self.quality = quality


class PermissionDenied(ArShareError):
    code = "permission_denied"


class KeyIncomplete(ArShareError):
    code = "key_incomplete"


class NotFound(ArShareError):
    code = "not_found"


class Expired(ArShareError):
    code = "expired"


class DefenseRejected(ArShareError):
    code = "defense_rejected"

    def __init__(self, which, message=""):
        super().__init__(message or f"rejected by defense: {which}")
        self.which = which


class ResolveFailed(ArShareError):
    code = "resolve_failed"


class OutOfCoverage(ArShareError):
    code = "out_of_coverage"


class LocalizeFailed(ArShareError):
    code = "localize_failed"


class SessionError(ArShareError):
    code = "session_error"


class RejectedTooShort(ArShareError):
    code = "rejected_too_short"


class RejectedTimestamp(ArShareError):
    code = "rejected_timestamp"


class RejectedMetadata(ArShareError):
    code = "rejected_metadata"


class SwapError(ArShareError):
    code = "swap_error"


class InjectError(ArShareError):
    code = "inject_error"


class EpochError(ArShareError):
    code = "epoch_error"


class FrameTooLarge(ArShareError):
    code = "frame_too_large"


class ProtocolError(ArShareError):
    code = "protocol_error"


class ClientError(ArShareError):
    code = "client_error"


class ConfigError(ArShareError):
    code = "config_error"

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class StatError(ArShareError):
    code = "stat_error"


class IoError(ArShareError):
    code = "io_error"


# Registry used by the protocol codec to rehydrate typed errors from wire
# responses, so in-process and wire callers observe identical exceptions.
ERROR_BY_CODE = {
    cls.code: cls
    for cls in [
        SpecError, ProvenanceError, DimError, DegenerateError, HostRejected,
        PermissionDenied, KeyIncomplete, NotFound, Expired, DefenseRejected,
        ResolveFailed, OutOfCoverage, LocalizeFailed, SessionError,
        RejectedTooShort, RejectedTimestamp, RejectedMetadata, SwapError,
        InjectError, EpochError, FrameTooLarge, ProtocolError, ClientError,
        ConfigError, StatError, IoError,
    ]
}


def error_from_code(code, message):
    cls = ERROR_BY_CODE.get(code, ArShareError)
    if cls is DefenseRejected:
        # message encodes the failing defense name
        which = message.split(":", 1)[1].strip() if ":" in message else message
        return DefenseRejected(which, message)
    return cls(message)
