"""Managed-device side: pull gateway over the virtual MIB, publish index,
subscription store, push scheduler, dispatcher and notification generator.

The Agent class is transport-agnostic: pull requests arrive as decoded
messages, push deliveries leave through a pluggable transport (the
simulator wires in metered virtual links, the real daemon wires in
sockets).  One logical thread of control drives the scheduler and owns
VirtualMib mutation.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

from mfnet.errors import MfnetError, MibError, SubscribeRejected
from mfnet.mib import VirtualMib
from mfnet.oid import Oid
from mfnet.subscription import DATAGRAM, HTTP_PUSH, STREAM, Endpoint, Subscription
from mfnet.wire import ManagementMessage, decode_message, encode_message

log = logging.getLogger(__name__)

STREAM_BUFFER_LIMIT = 1024
HTTP_PUSH_RETRY_MS = 1000


@dataclass
class AgentConfig:
    device_id: str
    listen_port: int = 8810
    storage_path: str = "agent-store"
    storage_mode: str = "durable"  # durable | volatile
    schema_files: list[str] = field(default_factory=list)
    manager_resend_endpoint: Endpoint | None = None

    def __post_init__(self):
        if self.storage_mode not in ("durable", "volatile"):
            raise MfnetError(f"bad storage-mode {self.storage_mode!r}")
        if self.storage_mode == "volatile" and self.manager_resend_endpoint is None:
            raise MfnetError("volatile storage-mode requires manager-resend-endpoint")

    @classmethod
    def from_file(cls, path: str | Path) -> "AgentConfig":
        kv = {}
        for raw in Path(path).read_text().splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            k, _, v = line.partition("=")
            kv[k.strip()] = v.strip()
        resend = None
        if "manager-resend-endpoint" in kv:
            host, port = kv["manager-resend-endpoint"].rsplit(":", 1)
            resend = Endpoint(host, int(port), HTTP_PUSH)
        return cls(
            device_id=kv["device-id"],
            listen_port=int(kv.get("listen-port", 8810)),
            storage_path=kv.get("storage-path", "agent-store"),
            storage_mode=kv.get("storage-mode", "durable"),
            schema_files=[s for s in kv.get("schema-files", "").split(",") if s],
            manager_resend_endpoint=resend,
        )


class AgentTransport:
    """Delivery hooks the agent calls; overridden by sim / real backends."""

    def send_datagram(self, endpoint: Endpoint, msg: ManagementMessage) -> None:
        raise NotImplementedError

    def http_post(self, endpoint: Endpoint, msg: ManagementMessage) -> bool:
        """POST to the manager's push ingress; True on success."""
        raise NotImplementedError


class _EndpointState:
    def __init__(self):
        self.seq = 0  # push-report sequence
        self.notif_seq = 0  # notifications have their own seq space
        self.buffer: deque[ManagementMessage] = deque(maxlen=STREAM_BUFFER_LIMIT)
        self.sink = None  # attached stream writer, or None
        self.dropped = 0


class _SubState:
    def __init__(self, sub: Subscription, now: int):
        self.sub = sub
        self.created_at = now
        # per-selection next due time; schedule is created_at + k*period
        self.next_due = [now + sel.period_ms for sel in sub.selections]
        self.endpoints: dict[Endpoint, _EndpointState] = {
            ep: _EndpointState() for ep in sub.endpoints
        }


class Agent:
    def __init__(
        self,
        config: AgentConfig,
        vmib: VirtualMib,
        clock,
        transport: AgentTransport | None = None,
    ):
        self.config = config
        self.vmib = vmib
        self.clock = clock  # () -> agent-local milliseconds
        self.transport = transport
        self.subs: dict[str, _SubState] = {}
        self._pending_attach: dict[tuple[str, Endpoint], object] = {}
        self.retry_queue: list[tuple[int, str, Endpoint, ManagementMessage]] = []
        self.stats = {"datagram_sent": 0, "http_retries": 0, "buffer_dropped": 0}

    # ------------------------------------------------------------------
    # publish phase

    def publish_index(self) -> str:
        """Well-known document listing every schema, variable and
        notification this agent supports (served at /mgmt/mibs)."""
        sections = []
        for schema in self.vmib.schemas:
            sections.append(f"schema {schema.name}\n{schema.to_text()}")
        return "\n".join(sections) + "\n"

    # ------------------------------------------------------------------
    # pull gateway

    def handle_request(self, msg: ManagementMessage) -> ManagementMessage:
        """Answer one pull-side request message.  Pipelined requests are
        answered strictly in request order by the caller iterating them."""
        resp = ManagementMessage(
            kind="response", request_id=msg.request_id or 0, status="ok",
            timestamp=self.clock(),
        )
        try:
            if msg.kind == "get-request":
                for oid, _ in msg.bindings:
                    resp.bindings.append((oid, self.vmib.get(oid)))
            elif msg.kind == "get-table-request":
                table_oid = msg.bindings[0][0]
                resp.rows = [
                    (idx, list(cells)) for idx, cells in self.vmib.get_table(table_oid)
                ]
            elif msg.kind == "set-request":
                oid, value = msg.bindings[0]
                prev = self.vmib.set(oid, value)
                resp.bindings.append((oid, prev))
            elif msg.kind == "sync-probe":
                now = self.clock()
                return ManagementMessage(
                    kind="sync-reply", t1=msg.t1, t2=now, t3=now, timestamp=now,
                )
            elif msg.kind == "subscribe-request":
                return self.subscribe(msg)
            else:
                resp.status = "bad-request"
        except MibError as exc:
            resp.status = exc.code
            resp.bindings = []
            resp.rows = None
        return resp

    def handle_http(self, method: str, path: str, body: bytes) -> ManagementMessage:
        """URL-addressed gateway: maps /mgmt/ paths onto MIB operations."""
        parts = [p for p in path.split("/") if p]
        if parts[:1] != ["mgmt"]:
            return ManagementMessage(kind="response", request_id=0, status="bad-request")
        if parts[1:] == ["mibs"]:
            return ManagementMessage(
                kind="response", request_id=0, status="ok",
                document=self.publish_index(), timestamp=self.clock(),
            )
        if len(parts) == 2 and parts[1] == "subscriptions" and method == "POST":
            return self.subscribe(decode_message(body))
        if len(parts) == 3 and parts[1] == "subscriptions" and method == "DELETE":
            return self.unsubscribe(parts[2])
        if len(parts) == 3 and parts[1] in ("mib", "next", "table"):
            oid = Oid.parse(parts[2])
            if parts[1] == "mib" and method == "POST":
                req = decode_message(body)
                req.kind = "set-request"
                return self.handle_request(req)
            kind = {"mib": "get-request", "table": "get-table-request"}.get(parts[1])
            if parts[1] == "next":
                resp = ManagementMessage(
                    kind="response", request_id=0, status="ok", timestamp=self.clock()
                )
                try:
                    nxt, val = self.vmib.get_next(oid)
                    resp.bindings = [(nxt, val)]
                except MibError as exc:
                    resp.status = exc.code
                return resp
            return self.handle_request(
                ManagementMessage(kind=kind, request_id=0, bindings=[(oid, None)])
            )
        return ManagementMessage(kind="response", request_id=0, status="bad-request")

    # ------------------------------------------------------------------
    # subscribe phase

    def subscribe(self, msg: ManagementMessage) -> ManagementMessage:
        now = self.clock()
        try:
            sub = Subscription.from_text(msg.document)
            sub.validate()
            for sel in sub.selections:
                if self.vmib.resolve_def(sel.oid) is None:
                    raise SubscribeRejected(f"unknown oid {sel.oid}")
            for name in sub.notification_filter:
                if self.vmib.notification_def(name) is None:
                    raise SubscribeRejected(f"unknown notification {name!r}")
        except (SubscribeRejected, MfnetError) as exc:
            reason = getattr(exc, "reason", str(exc))
            return ManagementMessage(
                kind="subscribe-ack",
                subscription_id=msg.subscription_id or "?",
                status="subscribe-rejected",
                document=reason,
                timestamp=now,
            )
        state = _SubState(sub, now)
        old = self.subs.get(sub.id)
        if old is not None:
            # atomic replacement keeps per-endpoint seq counters so
            # sequence numbers are never reused
            for ep, eps in old.endpoints.items():
                if ep in state.endpoints:
                    state.endpoints[ep] = eps
        self.subs[sub.id] = state
        if self.config.storage_mode == "durable":
            self._persist(sub)
        self.bind_pending_attachments()
        return ManagementMessage(
            kind="subscribe-ack", subscription_id=sub.id, status="ok", timestamp=now
        )

    def unsubscribe(self, sub_id: str) -> ManagementMessage:
        status = "ok" if self.subs.pop(sub_id, None) is not None else "no-such-instance"
        path = self._sub_path(sub_id)
        if path.exists():
            path.unlink()
        return ManagementMessage(
            kind="subscribe-ack", subscription_id=sub_id, status=status,
            timestamp=self.clock(),
        )

    def _sub_path(self, sub_id: str) -> Path:
        return Path(self.config.storage_path) / f"{sub_id}.sub"

    def _persist(self, sub: Subscription):
        root = Path(self.config.storage_path)
        root.mkdir(parents=True, exist_ok=True)
        msg = ManagementMessage(
            kind="subscribe-request",
            subscription_id=sub.id,
            device_id=self.config.device_id,
            document=sub.to_text(),
        )
        self._sub_path(sub.id).write_bytes(encode_message(msg))

    # ------------------------------------------------------------------
    # push scheduler

    def next_due(self) -> int | None:
        """Earliest pending firing time across all subscriptions."""
        times = [t for st in self.subs.values() for t in st.next_due]
        return min(times) if times else None

    def scheduler_step(self, now: int) -> list[tuple[str, Endpoint, ManagementMessage]]:
        """Fire every selection due at or before now.  Co-due variables of
        one subscription coalesce into a single report per endpoint."""
        out = []
        for sub_id, st in self.subs.items():
            due_bindings = []
            for i, sel in enumerate(st.sub.selections):
                if st.next_due[i] <= now:
                    try:
                        value = self.vmib.get(sel.oid)
                        due_bindings.append((sel.oid, value))
                    except MibError:
                        # embed an error marker binding rather than fail the report
                        due_bindings.append((sel.oid, None))
                    # advance by whole periods so the schedule never drifts
                    missed = (now - st.next_due[i]) // sel.period_ms + 1
                    st.next_due[i] += missed * sel.period_ms
            if not due_bindings:
                continue
            for ep, eps in st.endpoints.items():
                eps.seq += 1
                out.append(
                    (
                        sub_id,
                        ep,
                        ManagementMessage(
                            kind="push-report",
                            subscription_id=sub_id,
                            seq=eps.seq,
                            timestamp=now,
                            device_id=self.config.device_id,
                            bindings=list(due_bindings),
                        ),
                    )
                )
        return out

    def run_due(self, now: int):
        for sub_id, ep, msg in self.scheduler_step(now):
            self.dispatch(sub_id, ep, msg)
        self.process_retries(now)

    # ------------------------------------------------------------------
    # dispatcher

    def dispatch(self, sub_id: str, endpoint: Endpoint, msg: ManagementMessage):
        st = self.subs.get(sub_id)
        if st is None:
            return
        eps = st.endpoints[endpoint]
        if endpoint.transport == STREAM:
            if eps.sink is not None:
                try:
                    eps.sink(msg)
                    return
                except MfnetError:
                    eps.sink = None
            if len(eps.buffer) == eps.buffer.maxlen:
                eps.dropped += 1
                self.stats["buffer_dropped"] += 1
            eps.buffer.append(msg)
        elif endpoint.transport == DATAGRAM:
            self.stats["datagram_sent"] += 1
            self.transport.send_datagram(endpoint, msg)
        elif endpoint.transport == HTTP_PUSH:
            if not self.transport.http_post(endpoint, msg):
                self.retry_queue.append(
                    (self.clock() + HTTP_PUSH_RETRY_MS, sub_id, endpoint, msg)
                )

    def process_retries(self, now: int):
        due = [r for r in self.retry_queue if r[0] <= now]
        self.retry_queue = [r for r in self.retry_queue if r[0] > now]
        for _, sub_id, endpoint, msg in due:
            self.stats["http_retries"] += 1
            self.dispatch(sub_id, endpoint, msg)

    def attach_stream(self, sub_id: str, endpoint: Endpoint, sink):
        """Manager-side stream attach.  Buffered reports flush in seq order."""
        st = self.subs.get(sub_id)
        if st is None:
            # attach may precede the subscription; bind it once it arrives
            self._pending_attach[(sub_id, endpoint)] = sink
            return
        eps = st.endpoints[endpoint]
        eps.sink = sink
        while eps.buffer:
            sink(eps.buffer.popleft())

    def bind_pending_attachments(self):
        """Bind attaches that arrived before their subscription did."""
        pending = self._pending_attach
        for (sub_id, endpoint), sink in list(pending.items()):
            st = self.subs.get(sub_id)
            if st is not None and endpoint in st.endpoints:
                self.attach_stream(sub_id, endpoint, sink)
                del pending[(sub_id, endpoint)]

    def detach_stream(self, sub_id: str, endpoint: Endpoint):
        st = self.subs.get(sub_id)
        if st is not None and endpoint in st.endpoints:
            st.endpoints[endpoint].sink = None

    def detach_all(self, host: str):
        """Connection to one manager host dropped: revert to buffering."""
        for st in self.subs.values():
            for ep, eps in st.endpoints.items():
                if ep.host == host:
                    eps.sink = None

    # ------------------------------------------------------------------
    # notification generator

    def generate_notification(self, event_name: str, bindings) -> int:
        """Deliver to every subscription whose filter includes the name;
        others are discarded.  Returns the number of deliveries."""
        if self.vmib.notification_def(event_name) is None:
            log.warning("unknown notification %r fired on %s",
                        event_name, self.config.device_id)
            return 0
        delivered = 0
        now = self.clock()
        for sub_id, st in self.subs.items():
            if event_name not in st.sub.notification_filter:
                continue
            for ep, eps in st.endpoints.items():
                eps.notif_seq += 1
                msg = ManagementMessage(
                    kind="notification",
                    subscription_id=sub_id,
                    seq=eps.notif_seq,
                    notif_name=event_name,
                    timestamp=now,
                    device_id=self.config.device_id,
                    bindings=list(bindings),
                )
                self.dispatch(sub_id, ep, msg)
                delivered += 1
        return delivered

    # ------------------------------------------------------------------
    # reboot recovery

    def recover_on_boot(self) -> int:
        """Durable mode reloads from local storage; volatile mode asks the
        manager to resend.  Returns the count recovered locally."""
        recovered = 0
        corrupt = False
        if self.config.storage_mode == "durable":
            root = Path(self.config.storage_path)
            if root.exists():
                for path in sorted(root.glob("*.sub")):
                    try:
                        msg = decode_message(path.read_bytes())
                        ack = self.subscribe(msg)
                        if ack.status == "ok":
                            recovered += 1
                        else:
                            corrupt = True
                    except MfnetError:
                        log.warning("corrupt subscription record %s", path)
                        corrupt = True
        if self.config.storage_mode == "volatile" or corrupt:
            self.request_resend()
        return recovered

    def request_resend(self):
        ep = self.config.manager_resend_endpoint
        if ep is None or self.transport is None:
            return
        self.transport.http_post(
            ep,
            ManagementMessage(
                kind="resend-request",
                device_id=self.config.device_id,
                timestamp=self.clock(),
            ),
        )
