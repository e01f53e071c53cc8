"""Push subscription documents.

A subscription names the variables an agent should push, the per-variable
period, the delivery endpoints (with transport), and the notification
filter.  The canonical text serialization below travels in the body of
subscribe-request messages and is the on-disk record format, so it must
be stable: fixed line order, filters sorted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from mfnet.errors import SubscribeRejected
from mfnet.oid import Oid

MIN_PERIOD_MS = 100

STREAM = "stream"
DATAGRAM = "datagram"
HTTP_PUSH = "http-push"
TRANSPORTS = (STREAM, DATAGRAM, HTTP_PUSH)


@dataclass(frozen=True)
class Endpoint:
    host: str
    port: int
    transport: str

    def __str__(self) -> str:
        return f"{self.host}:{self.port}/{self.transport}"


@dataclass(frozen=True)
class Selection:
    oid: Oid
    period_ms: int


@dataclass
class Subscription:
    id: str
    agent: str  # device-id this subscription targets
    endpoints: list[Endpoint] = field(default_factory=list)
    selections: list[Selection] = field(default_factory=list)
    notification_filter: frozenset[str] = frozenset()
    durable: bool = True
    created_at: int = 0

    def validate(self):
        if not self.id:
            raise SubscribeRejected("empty subscription id")
        if not self.endpoints:
            raise SubscribeRejected("at least one endpoint required")
        for ep in self.endpoints:
            if ep.transport not in TRANSPORTS:
                raise SubscribeRejected(f"unknown transport {ep.transport!r}")
        for sel in self.selections:
            if sel.period_ms < MIN_PERIOD_MS:
                raise SubscribeRejected(
                    f"period {sel.period_ms} ms below floor {MIN_PERIOD_MS} ms"
                )

    def to_text(self) -> str:
        lines = [f"sub-id {self.id}", f"agent {self.agent}"]
        for ep in self.endpoints:
            lines.append(f"endpoint {ep.host} {ep.port} {ep.transport}")
        for sel in self.selections:
            lines.append(f"select {sel.oid} {sel.period_ms}")
        for name in sorted(self.notification_filter):
            lines.append(f"filter {name}")
        lines.append(f"durable {1 if self.durable else 0}")
        lines.append(f"created-at {self.created_at}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Subscription":
        sub = cls(id="", agent="")
        filters = set()
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            kw, rest = line.split(" ", 1)
            if kw == "sub-id":
                sub.id = rest
            elif kw == "agent":
                sub.agent = rest
            elif kw == "endpoint":
                host, port, transport = rest.split(" ")
                sub.endpoints.append(Endpoint(host, int(port), transport))
            elif kw == "select":
                oid, period = rest.split(" ")
                sub.selections.append(Selection(Oid.parse(oid), int(period)))
            elif kw == "filter":
                filters.add(rest)
            elif kw == "durable":
                sub.durable = rest == "1"
            elif kw == "created-at":
                sub.created_at = int(rest)
            else:
                raise SubscribeRejected(f"unknown subscription line {kw!r}")
        sub.notification_filter = frozenset(filters)
        return sub
