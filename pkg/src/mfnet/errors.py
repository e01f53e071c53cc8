"""Exception hierarchy shared by the MIB model, codec, and daemons."""


class MfnetError(Exception):
    """Base class for all mfnet errors."""

    #: short machine-readable code, reused as wire status where applicable
    code = "error"


class OidParseError(MfnetError):
    code = "bad-oid"

    def __init__(self, text: str, position: int):
        self.text = text
        self.position = position
        super().__init__(f"malformed OID {text!r} at position {position}")


# --- MIB access errors (map 1:1 onto response status codes) ---

class MibError(MfnetError):
    pass


class NoSuchInstance(MibError):
    code = "no-such-instance"


class AccessDenied(MibError):
    code = "access-denied"


class WrongType(MibError):
    code = "wrong-type"


class NotATable(MibError):
    code = "not-a-table"


class EndOfMib(MibError):
    code = "end-of-mib"


class SchemaError(MfnetError):
    code = "bad-schema"


# --- codec errors ---

class EncodeError(MfnetError):
    code = "encode-error"


class DecodeError(MfnetError):
    code = "decode-error"


class UnsupportedVersion(DecodeError):
    code = "unsupported-version"


class UnknownMessageType(DecodeError):
    code = "unknown-type"


class TruncatedBody(DecodeError):
    code = "truncated-body"


class BadValueEncoding(DecodeError):
    code = "bad-value-encoding"


class CorruptEncoding(DecodeError):
    code = "corrupt-encoding"


class FrameTooLarge(MfnetError):
    code = "frame-too-large"


class TruncatedFrame(MfnetError):
    code = "truncated-frame"


# --- subscription / store errors ---

class SubscribeRejected(MfnetError):
    code = "subscribe-rejected"

    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(f"subscription rejected: {reason}")


class UnknownStore(MfnetError):
    code = "unknown-store"


class MissingKey(MfnetError):
    code = "missing-key"


class NotAppendOnly(MfnetError):
    code = "not-append-only"


class SnapshotVersionMismatch(MfnetError):
    code = "snapshot-version-mismatch"
