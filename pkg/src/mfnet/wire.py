"""Wire codec shared by pull and push: header block + binding-line body,
optional transparent DEFLATE of the body, and 4-byte length-prefix framing
for stream transports.

Layout (normative, see docs/wire-format.md):

    MF-Version: 1\r\n
    MF-Type: <kind>\r\n
    MF-Encoding: identity|deflate\r\n
    <kind-specific headers>\r\n
    \r\n
    <body bytes>

The body is one binding per line ``<dotted-oid> <tag> <percent-encoded
value>`` (a bare OID selects without a value); table rows are preceded by
``row <index>``; subscription documents and the publish index travel as an
opaque text document (``MF-Body: document``).  Headers are never
compressed.  Content type: ``application/x-mf-mgmt; version=1``.
"""

from __future__ import annotations

import struct
import urllib.parse
import zlib
from dataclasses import dataclass, field

from mfnet.errors import (
    BadValueEncoding,
    CorruptEncoding,
    DecodeError,
    EncodeError,
    FrameTooLarge,
    OidParseError,
    TruncatedBody,
    TruncatedFrame,
    UnknownMessageType,
    UnsupportedVersion,
)
from mfnet.mib import COUNTER32, GAUGE, INTEGER, OCTET_STRING, OID, SYNTAXES, TIMETICKS, MibValue
from mfnet.oid import Oid

WIRE_VERSION = 1
CONTENT_TYPE = "application/x-mf-mgmt; version=1"
MAX_FRAME = 16 * 1024 * 1024

IDENTITY = "identity"
DEFLATE = "deflate"

KINDS = (
    "get-request",
    "get-table-request",
    "set-request",
    "response",
    "push-report",
    "notification",
    "sync-probe",
    "sync-reply",
    "subscribe-request",
    "subscribe-ack",
    "subscribe-attach",
    "resend-request",
)

Binding = tuple[Oid, MibValue | None]
TableRow = tuple[int, list[Binding]]


@dataclass
class ManagementMessage:
    kind: str
    request_id: int | None = None
    subscription_id: str | None = None
    seq: int | None = None
    timestamp: int = 0
    status: str | None = None
    device_id: str | None = None
    notif_name: str | None = None
    t1: int | None = None
    t2: int | None = None
    t3: int | None = None
    bindings: list[Binding] = field(default_factory=list)
    rows: list[TableRow] | None = None
    document: str | None = None

    def validate(self):
        if self.kind not in KINDS:
            raise EncodeError(f"unknown message kind {self.kind!r}")
        need = _REQUIRED.get(self.kind, ())
        for f in need:
            if getattr(self, f) is None:
                raise EncodeError(f"{self.kind} requires field {f}")
        if self.rows is not None and self.document is not None:
            raise EncodeError("rows and document are mutually exclusive")


_REQUIRED = {
    "get-request": ("request_id",),
    "get-table-request": ("request_id",),
    "set-request": ("request_id",),
    "response": ("request_id", "status"),
    "push-report": ("subscription_id", "seq"),
    "notification": ("subscription_id", "seq", "notif_name"),
    "sync-probe": ("t1",),
    "sync-reply": ("t1", "t2", "t3"),
    "subscribe-request": ("subscription_id", "document"),
    "subscribe-ack": ("subscription_id", "status"),
    "subscribe-attach": ("subscription_id",),
    "resend-request": ("device_id",),
}

# header name -> message field, in canonical encode order
_HEADERS = [
    ("Request-Id", "request_id", int),
    ("Subscription-Id", "subscription_id", str),
    ("Seq", "seq", int),
    ("Timestamp", "timestamp", int),
    ("Status", "status", str),
    ("Device-Id", "device_id", str),
    ("Notif-Name", "notif_name", str),
    ("T1", "t1", int),
    ("T2", "t2", int),
    ("T3", "t3", int),
]


def encode_value(v: MibValue) -> str:
    if v.tag == OCTET_STRING:
        return urllib.parse.quote_from_bytes(v.value, safe="")
    if v.tag == OID:
        return str(v.value)
    return str(v.value)


def decode_value(tag: str, text: str) -> MibValue:
    if tag not in SYNTAXES:
        raise BadValueEncoding(f"unknown value tag {tag!r}")
    try:
        if tag == OCTET_STRING:
            return MibValue(tag, urllib.parse.unquote_to_bytes(text))
        if tag == OID:
            return MibValue(tag, Oid.parse(text))
        return MibValue(tag, int(text))
    except (ValueError, OidParseError) as exc:
        raise BadValueEncoding(f"bad {tag} value {text!r}: {exc}") from exc


def _binding_line(oid: Oid, value: MibValue | None) -> str:
    if value is None:
        return str(oid)
    return f"{oid} {value.tag} {encode_value(value)}"


def _encode_body(msg: ManagementMessage) -> tuple[bytes, str]:
    """Returns (body bytes, MF-Body header value)."""
    if msg.document is not None:
        return msg.document.encode(), "document"
    if msg.rows is not None:
        lines = []
        for index, bindings in msg.rows:
            lines.append(f"row {index}")
            lines.extend(_binding_line(o, v) for o, v in bindings)
        return ("\n".join(lines)).encode(), "rows"
    lines = [_binding_line(o, v) for o, v in msg.bindings]
    return ("\n".join(lines)).encode(), "bindings"


def encode_message(msg: ManagementMessage, encoding: str = IDENTITY) -> bytes:
    if encoding not in (IDENTITY, DEFLATE):
        raise EncodeError(f"unknown encoding {encoding!r}")
    msg.validate()
    body, body_kind = _encode_body(msg)
    if encoding == DEFLATE:
        comp = zlib.compressobj(wbits=-15)
        body = comp.compress(body) + comp.flush()
    head = [
        f"MF-Version: {WIRE_VERSION}",
        f"MF-Type: {msg.kind}",
        f"MF-Encoding: {encoding}",
    ]
    if body_kind != "bindings":
        head.append(f"MF-Body: {body_kind}")
    for hname, fname, _ in _HEADERS:
        val = getattr(msg, fname)
        if fname == "timestamp":
            head.append(f"{hname}: {val}")
        elif val is not None:
            head.append(f"{hname}: {val}")
    return ("\r\n".join(head) + "\r\n\r\n").encode() + body


def _parse_bindings(lines: list[str]) -> list[Binding]:
    out: list[Binding] = []
    for line in lines:
        parts = line.split(" ", 2)
        try:
            oid = Oid.parse(parts[0])
        except OidParseError as exc:
            raise TruncatedBody(f"bad binding line {line!r}: {exc}") from exc
        if len(parts) == 1:
            out.append((oid, None))
        elif len(parts) == 3:
            out.append((oid, decode_value(parts[1], parts[2])))
        else:
            raise TruncatedBody(f"bad binding line {line!r}")
    return out


def decode_message(data: bytes) -> ManagementMessage:
    sep = data.find(b"\r\n\r\n")
    if sep < 0:
        raise TruncatedBody("missing header/body separator")
    header_block, body = data[:sep], data[sep + 4 :]

    headers: dict[str, str] = {}
    for line in header_block.decode("utf-8", errors="replace").split("\r\n"):
        if ": " not in line:
            raise DecodeError(f"malformed header line {line!r}")
        k, v = line.split(": ", 1)
        headers[k] = v

    if headers.get("MF-Version") != str(WIRE_VERSION):
        raise UnsupportedVersion(f"MF-Version {headers.get('MF-Version')!r}")
    kind = headers.get("MF-Type")
    if kind not in KINDS:
        raise UnknownMessageType(f"MF-Type {kind!r}")
    encoding = headers.get("MF-Encoding", IDENTITY)
    if encoding == DEFLATE:
        try:
            body = zlib.decompressobj(wbits=-15).decompress(body)
        except zlib.error as exc:
            raise CorruptEncoding(f"bad deflate body: {exc}") from exc
    elif encoding != IDENTITY:
        raise CorruptEncoding(f"unknown MF-Encoding {encoding!r}")

    msg = ManagementMessage(kind=kind)
    for hname, fname, conv in _HEADERS:
        if hname in headers:
            try:
                setattr(msg, fname, conv(headers[hname]))
            except ValueError as exc:
                raise DecodeError(f"bad header {hname}: {exc}") from exc

    body_kind = headers.get("MF-Body", "bindings")
    try:
        text = body.decode()
    except UnicodeDecodeError as exc:
        raise CorruptEncoding(f"body is not valid UTF-8: {exc}") from exc
    if body_kind == "document":
        msg.document = text
    elif body_kind == "rows":
        msg.rows = []
        current: TableRow | None = None
        for line in text.splitlines():
            if line.startswith("row "):
                current = (int(line[4:]), [])
                msg.rows.append(current)
            else:
                if current is None:
                    raise TruncatedBody("binding line before any row marker")
                current[1].extend(_parse_bindings([line]))
    elif body_kind == "bindings":
        msg.bindings = _parse_bindings(text.splitlines()) if text else []
    else:
        raise DecodeError(f"unknown MF-Body {body_kind!r}")
    return msg


def frame(payload: bytes) -> bytes:
    if len(payload) > MAX_FRAME:
        raise FrameTooLarge(f"{len(payload)} bytes > {MAX_FRAME}")
    return struct.pack(">I", len(payload)) + payload


class Deframer:
    """Incremental length-prefix parser; tolerates arbitrary fragmentation."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[bytes]:
        self._buf.extend(data)
        out = []
        while True:
            if len(self._buf) < 4:
                break
            (length,) = struct.unpack(">I", self._buf[:4])
            if length > MAX_FRAME:
                raise FrameTooLarge(f"declared length {length} > {MAX_FRAME}")
            if len(self._buf) < 4 + length:
                break
            out.append(bytes(self._buf[4 : 4 + length]))
            del self._buf[: 4 + length]
        return out

    @property
    def pending(self) -> int:
        return len(self._buf)

    def finish(self):
        if self._buf:
            raise TruncatedFrame(f"{len(self._buf)} trailing bytes mid-frame")


def deframe_all(data: bytes) -> list[bytes]:
    d = Deframer()
    out = d.feed(data)
    d.finish()
    return out
