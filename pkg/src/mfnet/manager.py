"""Manager side: polling engine (pull), pushed data collector and
interpreter (push), event correlator with masking, event handlers,
network map registry, report generator, and subscription resend.

Everything here is transport-agnostic: the polling engine talks through a
pull-client factory, push messages arrive via ManagerCore.ingress(), and
resend goes out through an injected sender.  Events from both models
funnel into the single correlator queue in arrival order.
"""

from __future__ import annotations

import fnmatch
import logging
import subprocess
from dataclasses import dataclass, field

from mfnet.errors import MfnetError
from mfnet.oid import Oid
from mfnet.repository import Repository
from mfnet.subscription import Subscription
from mfnet.timesync import OffsetTable, SyncSample
from mfnet.wire import ManagementMessage, encode_value

log = logging.getLogger(__name__)

MISS_FACTOR = 2.5
MASK_WINDOW_MS = 10_000
FLUSH_COUNT = 100
FLUSH_INTERVAL_MS = 1000
ESCALATE_AFTER_FAILURES = 3

GREEN, YELLOW, RED = "green", "yellow", "red"

# event kinds that clear an open condition when they arrive
CLEARING = {
    "device-recovered": "heartbeat-missed",
    "poll-recovered": "poll-failed",
}


@dataclass
class PollingDefinition:
    id: str
    agent: str  # device-id
    endpoint: tuple[str, int]
    oids: list[Oid] = field(default_factory=list)
    table_oids: list[Oid] = field(default_factory=list)
    period_ms: int = 1000

    def validate(self):
        if self.period_ms < 100:
            raise MfnetError(f"polling period {self.period_ms} below 100 ms floor")
        if not self.oids and not self.table_oids:
            raise MfnetError("polling definition selects nothing")

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "agent": self.agent,
            "endpoint": list(self.endpoint),
            "oids": [str(o) for o in self.oids],
            "table-oids": [str(o) for o in self.table_oids],
            "period": self.period_ms,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "PollingDefinition":
        return cls(
            id=rec["id"],
            agent=rec["agent"],
            endpoint=tuple(rec["endpoint"]),
            oids=[Oid.parse(o) for o in rec["oids"]],
            table_oids=[Oid.parse(o) for o in rec["table-oids"]],
            period_ms=rec["period"],
        )


@dataclass
class Event:
    id: int
    source: str
    kind: str
    severity: int  # 1..5, 5 worst
    timestamp: int
    bindings: list = field(default_factory=list)
    masked_by: int | None = None


@dataclass
class EventHandlerDef:
    id: str
    source_glob: str = "*"
    kind_glob: str = "*"
    min_severity: int = 1
    action: str = "log"  # log | map-update | webhook:<url> | command:<argv...>

    def matches(self, event: Event) -> bool:
        return (
            fnmatch.fnmatch(event.source, self.source_glob)
            and fnmatch.fnmatch(event.kind, self.kind_glob)
            and event.severity >= self.min_severity
        )

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "source": self.source_glob,
            "kind": self.kind_glob,
            "min-severity": self.min_severity,
            "action": self.action,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "EventHandlerDef":
        return cls(rec["id"], rec["source"], rec["kind"], rec["min-severity"], rec["action"])


def color_for(open_events: dict[str, Event]) -> str:
    """Pure map-color function over one device's open-event set."""
    if not open_events:
        return GREEN
    worst = max(e.severity for e in open_events.values())
    return RED if worst >= 4 else YELLOW


class MapRegistry:
    """Broker between status changes and zero or more live map viewers."""

    def __init__(self):
        self._clients = []
        self._status: dict[str, dict] = {}

    def register(self, callback):
        """callback(message_dict); receives the full snapshot first."""
        callback({"type": "snapshot", "map": dict(self._status)})
        self._clients.append(callback)

    def unregister(self, callback):
        if callback in self._clients:
            self._clients.remove(callback)

    def snapshot(self) -> dict:
        return dict(self._status)

    def update(self, device: str, color: str, now: int):
        prev = self._status.get(device)
        if prev is not None and prev["color"] == color:
            return
        self._status[device] = {"color": color, "changed": now}
        delta = {"type": "delta", "device": device, "color": color, "changed": now}
        for cb in list(self._clients):
            try:
                cb(delta)
            except Exception:
                # dead viewer: unregister silently
                self._clients.remove(cb)


class Correlator:
    """Masks redundant events, runs handlers for the survivors, keeps the
    per-device open-event set the map derives from."""

    def __init__(self, repo: Repository, registry: MapRegistry, clock,
                 mask_window_ms: int = MASK_WINDOW_MS):
        self.repo = repo
        self.registry = registry
        self.clock = clock
        self.mask_window_ms = mask_window_ms
        self.handlers: list[EventHandlerDef] = []
        self.events: list[Event] = []
        self.open: dict[str, dict[str, Event]] = {}  # device -> kind -> event
        self.webhook_sender = None  # injected; (url, event) -> None
        self._next_id = 1

    def load_handlers(self):
        self.handlers = [
            EventHandlerDef.from_record(r) for r in self.repo.list("handler-defs")
        ]

    def submit(self, source: str, kind: str, severity: int, timestamp: int,
               bindings=()) -> Event:
        event = Event(self._next_id, source, kind, severity, timestamp, list(bindings))
        self._next_id += 1
        self.events.append(event)

        masker = self._find_masker(event)
        if masker is not None:
            event.masked_by = masker.id
        else:
            self._apply_open_state(event)
            for handler in self.handlers:
                if handler.matches(event):
                    self._invoke(handler, event)
            self.registry.update(
                event.source, color_for(self.open.get(event.source, {})), timestamp
            )
        return event

    def _find_masker(self, event: Event) -> Event | None:
        # clearing events are resolutions, not redundant symptoms; masking
        # one would leave the open condition it closes stuck forever
        if event.kind in CLEARING:
            return None
        for other in reversed(self.events[:-1]):
            if other.masked_by is not None or other.source != event.source:
                continue
            if other.severity > event.severity and (
                0 <= event.timestamp - other.timestamp <= self.mask_window_ms
            ):
                return other
        return None

    def _apply_open_state(self, event: Event):
        dev = self.open.setdefault(event.source, {})
        cleared = CLEARING.get(event.kind)
        if cleared is not None:
            dev.pop(cleared, None)
        elif event.severity >= 2:
            dev[event.kind] = event

    def recompute_open(self) -> dict[str, dict[str, Event]]:
        """Replay the full event log; must equal the incremental state."""
        open_: dict[str, dict[str, Event]] = {}
        for e in self.events:
            if e.masked_by is not None:
                continue
            dev = open_.setdefault(e.source, {})
            cleared = CLEARING.get(e.kind)
            if cleared is not None:
                dev.pop(cleared, None)
            elif e.severity >= 2:
                dev[e.kind] = e
        return open_

    def _invoke(self, handler: EventHandlerDef, event: Event):
        outcome = "ok"
        try:
            if handler.action == "log":
                log.info("event %s/%s sev=%d handled by %s",
                         event.source, event.kind, event.severity, handler.id)
            elif handler.action == "map-update":
                pass  # map updates happen unconditionally after handlers
            elif handler.action.startswith("webhook:"):
                if self.webhook_sender is not None:
                    self.webhook_sender(handler.action.split(":", 1)[1], event)
            elif handler.action.startswith("command:"):
                argv = handler.action.split(":", 1)[1].split()
                subprocess.run(argv, timeout=10, check=False)
            else:
                outcome = "unknown-action"
        except Exception as exc:  # a failing handler never blocks the rest
            outcome = f"failed: {exc}"
        self.repo.bulk_append(
            "invocation-log",
            [{
                "event-id": event.id,
                "handler-id": handler.id,
                "timestamp": self.clock(),
                "outcome": outcome,
            }],
        )


class Interpreter:
    """Watches sample streams for missing heartbeats and threshold breaches."""

    def __init__(self, emit, miss_factor: float = MISS_FACTOR):
        self.emit = emit  # (source, kind, severity, timestamp, bindings) -> Event
        self.miss_factor = miss_factor
        self.periods: dict[tuple[str, str], int] = {}  # (device, oid) -> ms
        self.last_seen: dict[tuple[str, str], int] = {}
        self.alarmed: set[tuple[str, str]] = set()
        # (device, oid) -> (op, bound); op in {">", "<"}
        self.thresholds: dict[tuple[str, str], tuple[str, float]] = {}
        self.breached: set[tuple[str, str]] = set()

    def track(self, device: str, oid: Oid, period_ms: int, start: int):
        key = (device, str(oid))
        self.periods[key] = period_ms
        self.last_seen.setdefault(key, start)

    def untrack_device(self, device: str):
        for key in [k for k in self.periods if k[0] == device]:
            self.periods.pop(key, None)
            self.last_seen.pop(key, None)
            self.alarmed.discard(key)

    def set_threshold(self, device: str, oid: Oid, op: str, bound: float):
        self.thresholds[(device, str(oid))] = (op, bound)

    def on_sample(self, device: str, oid: str, value, arrival: int):
        key = (device, oid)
        if key in self.alarmed:
            self.alarmed.discard(key)
            self.emit(device, "device-recovered", 1, arrival, [])
        self.last_seen[key] = arrival
        rule = self.thresholds.get(key)
        if rule is not None and isinstance(value, (int, float)):
            op, bound = rule
            breach = value > bound if op == ">" else value < bound
            if breach and key not in self.breached:
                self.breached.add(key)
                self.emit(device, "threshold-breach", 3, arrival,
                          [{"oid": oid, "value": value, "bound": bound, "op": op}])
            elif not breach:
                self.breached.discard(key)

    def tick(self, now: int):
        """Fires heartbeat-missed once per contiguous outage."""
        for key, period in self.periods.items():
            if key in self.alarmed:
                continue
            last = self.last_seen.get(key)
            if last is None:
                continue
            if now - last > self.miss_factor * period:
                self.alarmed.add(key)
                self.emit(key[0], "heartbeat-missed", 4, now, [{"oid": key[1]}])

    def tick_interval(self) -> int:
        if not self.periods:
            return 1000
        return max(100, min(5000, min(self.periods.values()) // 2))


class Collector:
    """Pushed data collector: seq accounting, dedup, bulk-buffered store
    writes, clock correction, hand-off to the interpreter."""

    def __init__(self, repo: Repository, interpreter: Interpreter,
                 offsets: OffsetTable, clock):
        self.repo = repo
        self.interpreter = interpreter
        self.offsets = offsets
        self.clock = clock
        self.known_subs: dict[str, Subscription] = {}
        self.last_seq: dict[tuple[str, str], int] = {}  # (sub-id, space)
        self.lost: dict[str, int] = {}
        self.duplicates: dict[str, int] = {}
        self.received: dict[str, int] = {}
        self.unknown_dropped = 0
        self.decode_failures = 0
        self._buffers: dict[str, list] = {"pushed-data": [], "pushed-notifications": []}
        self._buffer_since: dict[str, int | None] = {
            "pushed-data": None, "pushed-notifications": None,
        }
        self.samples_log: list[dict] = []  # in-memory view for reports

    def register(self, sub: Subscription):
        self.known_subs[sub.id] = sub

    def forget(self, sub_id: str):
        self.known_subs.pop(sub_id, None)

    def collect(self, msg: ManagementMessage, arrival: int):
        sub = self.known_subs.get(msg.subscription_id or "")
        if sub is None:
            self.unknown_dropped += 1
            return
        space = "notif" if msg.kind == "notification" else "data"
        key = (msg.subscription_id, space)
        last = self.last_seq.get(key, 0)
        if msg.seq <= last:
            self.duplicates[msg.subscription_id] = (
                self.duplicates.get(msg.subscription_id, 0) + 1
            )
            return
        if msg.seq > last + 1:
            self.lost[msg.subscription_id] = (
                self.lost.get(msg.subscription_id, 0) + (msg.seq - last - 1)
            )
        self.last_seq[key] = msg.seq
        self.received[msg.subscription_id] = self.received.get(msg.subscription_id, 0) + 1

        # offset is the agent clock minus ours, so correction subtracts it
        offset = self.offsets.offset(sub.agent)
        corrected = msg.timestamp - (offset or 0)
        flags = [] if offset is not None else ["uncorrected"]

        store = "pushed-notifications" if msg.kind == "notification" else "pushed-data"
        for oid, value in msg.bindings:
            rec = {
                "device": sub.agent,
                "oid": str(oid),
                "time": int(corrected),
                "arrival": arrival,
                "seq": msg.seq,
                "tag": value.tag if value is not None else None,
                "value": encode_value(value) if value is not None else None,
                "flags": flags,
            }
            if msg.kind == "notification":
                rec["notif"] = msg.notif_name
            self._buffers[store].append(rec)
            if self._buffer_since[store] is None:
                self._buffer_since[store] = arrival
            if msg.kind != "notification" and value is not None:
                self.samples_log.append(rec)
                self.interpreter.on_sample(sub.agent, str(oid), value.value, arrival)
        self._maybe_flush(store, arrival)

    def _maybe_flush(self, store: str, now: int):
        buf = self._buffers[store]
        since = self._buffer_since[store]
        if not buf:
            return
        if len(buf) >= FLUSH_COUNT or (since is not None and now - since >= FLUSH_INTERVAL_MS):
            self.flush(store)

    def flush(self, store: str | None = None):
        stores = [store] if store else list(self._buffers)
        for s in stores:
            if self._buffers[s]:
                self.repo.bulk_append(s, self._buffers[s])
                self._buffers[s] = []
            self._buffer_since[s] = None

    def poll_tick(self, now: int):
        """Time-based flush, called from the manager's periodic tick."""
        for s, since in self._buffer_since.items():
            if since is not None and now - since >= FLUSH_INTERVAL_MS:
                self.flush(s)


class PullClient:
    """One logical persistent, pipelined connection to an agent."""

    def request_many(self, msgs: list[ManagementMessage]) -> list[ManagementMessage]:
        raise NotImplementedError

    def close(self):
        pass


class PollingEngine:
    """Pull-side data collection over persistent pipelined connections."""

    def __init__(self, repo: Repository, interpreter: Interpreter, emit,
                 connect, keepalive_ms: int = 0, store_samples=None):
        """connect(definition) -> PullClient; emit as in Correlator.submit;
        store_samples(records) persists one cycle's samples."""
        self.repo = repo
        self.interpreter = interpreter
        self.emit = emit
        self.connect = connect
        self.keepalive_ms = keepalive_ms
        self.store_samples = store_samples or (
            lambda recs: repo.bulk_append("pushed-data", recs)
        )
        self._conns: dict[str, PullClient] = {}
        self._failures: dict[str, int] = {}
        self._next_request_id = 1
        self.samples_log: list[dict] = []

    def _defs(self) -> list[PollingDefinition]:
        # definitions re-read at each cycle boundary so edits take effect
        return [PollingDefinition.from_record(r) for r in self.repo.list("polling-defs")]

    def cycle(self, now: int):
        for d in self._defs():
            self._poll_one(d, now)

    def _poll_one(self, d: PollingDefinition, now: int):
        conn = self._conns.get(d.id)
        try:
            if conn is None:
                conn = self.connect(d)
                self._conns[d.id] = conn
            requests = []
            for oid in d.oids:
                requests.append(ManagementMessage(
                    kind="get-request", request_id=self._next_request_id,
                    bindings=[(oid, None)],
                ))
                self._next_request_id += 1
            for toid in d.table_oids:
                requests.append(ManagementMessage(
                    kind="get-table-request", request_id=self._next_request_id,
                    bindings=[(toid, None)],
                ))
                self._next_request_id += 1
            responses = conn.request_many(requests)
        except MfnetError:
            self._conns.pop(d.id, None)
            count = self._failures.get(d.id, 0) + 1
            self._failures[d.id] = count
            sev = 4 if count >= ESCALATE_AFTER_FAILURES else 2
            self.emit(d.agent, "poll-failed", sev, now, [{"definition": d.id}])
            return

        if self._failures.pop(d.id, None):
            self.emit(d.agent, "poll-recovered", 1, now, [])
        records = []
        for resp in responses:
            if resp.status != "ok":
                continue
            bindings = list(resp.bindings)
            if resp.rows is not None:
                for _, cells in resp.rows:
                    bindings.extend(cells)
            for oid, value in bindings:
                if value is None:
                    continue
                rec = {
                    "device": d.agent,
                    "oid": str(oid),
                    "time": now,
                    "arrival": now,
                    "seq": None,
                    "tag": value.tag,
                    "value": encode_value(value),
                    "flags": [],
                }
                records.append(rec)
                self.samples_log.append(rec)
                self.interpreter.on_sample(d.agent, str(oid), value.value, now)
        if records:
            self.store_samples(records)
        if self.keepalive_ms <= d.period_ms:
            conn.close()
            self._conns.pop(d.id, None)

    def track_all(self, start: int):
        for d in self._defs():
            for oid in d.oids:
                self.interpreter.track(d.agent, oid, d.period_ms, start)


def generate_report(samples: list[dict], devices, oids, window: tuple[int, int],
                    resolution_ms: int, periods: dict[tuple[str, str], int]) -> dict:
    """Slot samples into a regular grid.  Multiple samples in a slot keep
    the earliest; empty interior slots interpolate linearly and are
    flagged; availability = received / expected per (device, variable)."""
    t0, t1 = window
    n_slots = max(0, (t1 - t0) // resolution_ms)
    series = {}
    for device in devices:
        for oid in oids:
            oid = str(oid)
            pts = sorted(
                (s for s in samples
                 if s["device"] == device and s["oid"] == oid
                 and t0 < s["time"] <= t1 and s["value"] is not None),
                key=lambda s: s["time"],
            )
            slots: list[dict | None] = [None] * n_slots
            raw: list[list[float]] = [[] for _ in range(n_slots)]
            for s in pts:
                i = (s["time"] - t0 - 1) // resolution_ms
                if not 0 <= i < n_slots:
                    continue
                try:
                    v = float(s["value"])
                except ValueError:
                    continue
                raw[i].append(v)
                if slots[i] is None:  # keep the earliest, discard the rest
                    slots[i] = {"t": t0 + (i + 1) * resolution_ms, "value": v,
                                "interpolated": False}
            # interpolate empty slots with both neighbors present
            for i in range(1, n_slots - 1):
                if slots[i] is None and slots[i - 1] is not None and slots[i + 1] is not None:
                    v = (slots[i - 1]["value"] + slots[i + 1]["value"]) / 2
                    slots[i] = {"t": t0 + (i + 1) * resolution_ms, "value": v,
                                "interpolated": True}
            filled = [
                dict(s, min=min(raw[i]) if raw[i] else s["value"],
                     avg=sum(raw[i]) / len(raw[i]) if raw[i] else s["value"],
                     max=max(raw[i]) if raw[i] else s["value"],
                     count=len(raw[i]))
                for i, s in enumerate(slots) if s is not None
            ]
            period = periods.get((device, oid))
            expected = (t1 - t0) // period if period else n_slots
            received = len(pts)
            series[f"{device}/{oid}"] = {
                "slots": filled,
                "received": received,
                "expected": expected,
                "availability": min(1.0, received / expected) if expected else 0.0,
            }
    overall_expected = sum(s["expected"] for s in series.values())
    overall_received = sum(min(s["received"], s["expected"]) for s in series.values())
    return {
        "window": [t0, t1],
        "resolution": resolution_ms,
        "series": series,
        "availability": (overall_received / overall_expected) if overall_expected else 0.0,
    }


class ManagerCore:
    """Wires the push-side components together and serves as the ingress
    for push reports, notifications, sync replies and resend requests."""

    def __init__(self, repo: Repository, clock, device_id: str = "manager",
                 miss_factor: float = MISS_FACTOR,
                 mask_window_ms: int = MASK_WINDOW_MS):
        self.repo = repo
        self.clock = clock
        self.device_id = device_id
        self.registry = MapRegistry()
        self.correlator = Correlator(repo, self.registry, clock, mask_window_ms)
        self.offsets = OffsetTable()
        self.interpreter = Interpreter(self.correlator.submit, miss_factor)
        self.collector = Collector(repo, self.interpreter, self.offsets, clock)
        self.subscribe_sender = None  # injected: (Subscription) -> ack or None
        self.resend_counts: dict[str, int] = {}

    def install_subscription(self, sub: Subscription):
        """Record a subscription and start watching its streams."""
        self.repo.put("subscriptions", sub.id, sub)
        self.collector.register(sub)
        for sel in sub.selections:
            self.interpreter.track(sub.agent, sel.oid, sel.period_ms, self.clock())

    def ingress(self, msg: ManagementMessage, arrival: int):
        """Push-side entry point for a decoded message."""
        if msg.kind in ("push-report", "notification"):
            self.collector.collect(msg, arrival)
        elif msg.kind == "sync-reply":
            self.offsets.add(
                msg.device_id or "?",
                SyncSample(msg.t1, msg.t2, msg.t3, arrival),
            )
        elif msg.kind == "resend-request":
            self.resend_subscriptions(msg.device_id)
        else:
            self.collector.decode_failures += 1

    def resend_subscriptions(self, agent: str) -> int:
        subs = self.repo.subscriptions_for(agent)
        count = 0
        for sub in subs:
            if self.subscribe_sender is not None:
                ack = self.subscribe_sender(sub)
                if ack is not None and ack.status == "ok":
                    count += 1
        self.resend_counts[agent] = self.resend_counts.get(agent, 0) + 1
        return count

    def tick(self, now: int):
        self.interpreter.tick(now)
        self.collector.poll_tick(now)

    def report(self, devices, oids, window, resolution_ms) -> dict:
        self.collector.flush()
        samples = self.repo.list("pushed-data")
        periods = {k: v for k, v in self.interpreter.periods.items()}
        return generate_report(samples, devices, oids, window, resolution_ms, periods)
