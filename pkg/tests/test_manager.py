"""Manager-side components: collector accounting, correlator masking,
interpreter alarms, map registry, polling engine and report generation."""

import pytest

from mfnet.errors import MfnetError
from mfnet.manager import (
    CLEARING,
    ESCALATE_AFTER_FAILURES,
    FLUSH_COUNT,
    EventHandlerDef,
    ManagerCore,
    MapRegistry,
    PollingDefinition,
    PollingEngine,
    PullClient,
    color_for,
    generate_report,
)
from mfnet.mib import MibValue
from mfnet.oid import Oid
from mfnet.repository import Repository
from mfnet.subscription import Endpoint, Selection, Subscription
from mfnet.timesync import SyncSample
from mfnet.wire import ManagementMessage

UPTIME = "1.3.6.1.2.1.1.3.0"
CPU = "1.3.6.1.4.1.53535.1.2.0"


class Clock:
    def __init__(self):
        self.now = 0

    def __call__(self):
        return self.now


@pytest.fixture
def core(tmp_path):
    return ManagerCore(Repository(tmp_path), clock=Clock())


def make_sub(sub_id="s1", agent="dev-1", oids=(UPTIME,), period=1000):
    return Subscription(
        id=sub_id, agent=agent,
        endpoints=[Endpoint("mgr", 8800, "datagram")],
        selections=[Selection(Oid.parse(o), period) for o in oids],
    )


def report(sub_id, seq, t, oid=UPTIME, value=None, device="dev-1"):
    return ManagementMessage(
        kind="push-report", subscription_id=sub_id, seq=seq, timestamp=t,
        device_id=device,
        bindings=[(Oid.parse(oid), value or MibValue("timeticks", t // 10))],
    )


class TestCollector:
    def test_counts_and_stores(self, core):
        core.install_subscription(make_sub())
        for seq, t in ((1, 1000), (2, 2000)):
            core.ingress(report("s1", seq, t), arrival=t + 3)
        core.collector.flush()
        recs = core.repo.list("pushed-data")
        assert len(recs) == 2
        assert core.collector.received["s1"] == 2
        assert core.collector.lost == {}

    def test_gap_counts_lost(self, core):
        core.install_subscription(make_sub())
        core.ingress(report("s1", 1, 1000), 1000)
        core.ingress(report("s1", 5, 5000), 5000)
        assert core.collector.lost["s1"] == 3

    def test_duplicate_dropped(self, core):
        core.install_subscription(make_sub())
        core.ingress(report("s1", 1, 1000), 1000)
        core.ingress(report("s1", 1, 1000), 1001)
        core.collector.flush()
        assert core.collector.duplicates["s1"] == 1
        assert len(core.repo.list("pushed-data")) == 1

    def test_unknown_subscription_dropped(self, core):
        core.ingress(report("ghost", 1, 1000), 1000)
        assert core.collector.unknown_dropped == 1

    def test_notifications_have_own_seq_space_and_store(self, core):
        core.install_subscription(make_sub())
        core.ingress(report("s1", 1, 1000), 1000)
        core.ingress(ManagementMessage(
            kind="notification", subscription_id="s1", seq=1, timestamp=1500,
            notif_name="linkDown", device_id="dev-1",
            bindings=[(Oid.parse(UPTIME), MibValue("timeticks", 150))]), 1500)
        core.collector.flush()
        assert core.collector.lost == {}  # seq 1 in each space, no gap
        notifs = core.repo.list("pushed-notifications")
        assert len(notifs) == 1 and notifs[0]["notif"] == "linkDown"

    def test_flush_at_count_threshold(self, core):
        sub = make_sub()
        core.install_subscription(sub)
        for seq in range(1, FLUSH_COUNT + 1):
            core.ingress(report("s1", seq, seq), seq)
        # buffer hit 100 records and flushed without an explicit call
        assert len(core.repo.list("pushed-data")) == FLUSH_COUNT

    def test_flush_after_interval_via_tick(self, core):
        core.install_subscription(make_sub())
        core.ingress(report("s1", 1, 1000), 1000)
        assert core.repo.list("pushed-data") == []
        core.tick(2100)
        assert len(core.repo.list("pushed-data")) == 1

    def test_clock_correction_applied(self, core):
        core.install_subscription(make_sub())
        # agent runs 250ms ahead; symmetric 3ms paths
        core.ingress(ManagementMessage(
            kind="sync-reply", device_id="dev-1", t1=0, t2=253, t3=254), 7)
        core.ingress(report("s1", 1, 1250), 1003)
        core.collector.flush()
        rec = core.repo.list("pushed-data")[0]
        assert rec["time"] == 1000
        assert rec["flags"] == []

    def test_uncorrected_flagged(self, core):
        core.install_subscription(make_sub())
        core.ingress(report("s1", 1, 1250), 1003)
        core.collector.flush()
        assert core.repo.list("pushed-data")[0]["flags"] == ["uncorrected"]


class TestCorrelator:
    def test_mask_requires_same_source_higher_severity_in_window(self, core):
        c = core.correlator
        root = c.submit("dev-1", "heartbeat-missed", 4, 10_000)
        masked = c.submit("dev-1", "threshold-breach", 3, 15_000)
        assert masked.masked_by == root.id
        other_dev = c.submit("dev-2", "threshold-breach", 3, 15_000)
        assert other_dev.masked_by is None
        late = c.submit("dev-1", "threshold-breach", 3, 10_000 + 10_001)
        assert late.masked_by is None
        equal_sev = c.submit("dev-1", "heartbeat-missed", 4, 16_000)
        assert equal_sev.masked_by is None

    def test_masked_events_do_not_mask(self, core):
        c = core.correlator
        c.submit("dev-1", "heartbeat-missed", 5, 1000)
        b = c.submit("dev-1", "poll-failed", 4, 1500)
        assert b.masked_by is not None
        # b is masked, so it cannot mask a severity-3 event by itself;
        # the root (sev 5) still does
        d = c.submit("dev-1", "threshold-breach", 3, 2000)
        assert d.masked_by == 1

    def test_clearing_kinds_close_open_events(self, core):
        c = core.correlator
        c.submit("dev-1", "heartbeat-missed", 4, 1000)
        assert "heartbeat-missed" in c.open["dev-1"]
        c.submit("dev-1", "device-recovered", 1, 60_000)
        assert c.open["dev-1"] == {}
        assert CLEARING["device-recovered"] == "heartbeat-missed"

    def test_incremental_open_state_matches_replay(self, core):
        c = core.correlator
        script = [
            ("dev-1", "heartbeat-missed", 4, 1000),
            ("dev-1", "threshold-breach", 3, 2000),
            ("dev-2", "poll-failed", 2, 3000),
            ("dev-1", "device-recovered", 1, 50_000),
            ("dev-2", "poll-recovered", 1, 51_000),
            ("dev-2", "threshold-breach", 3, 52_000),
        ]
        for args in script:
            c.submit(*args)
        assert c.open == c.recompute_open()

    def test_handlers_run_only_for_unmasked(self, core):
        c = core.correlator
        c.handlers = [EventHandlerDef(id="h1", kind_glob="*", min_severity=3)]
        c.submit("dev-1", "heartbeat-missed", 4, 1000)
        c.submit("dev-1", "threshold-breach", 3, 2000)  # masked
        invocations = core.repo.list("invocation-log")
        assert [i["event-id"] for i in invocations] == [1]

    def test_handler_filters(self, core):
        c = core.correlator
        c.handlers = [EventHandlerDef(id="h", source_glob="edge-*", min_severity=4)]
        c.submit("edge-1", "heartbeat-missed", 4, 1000)
        c.submit("core-1", "heartbeat-missed", 4, 1000)
        c.submit("edge-2", "threshold-breach", 3, 1000)
        assert [i["event-id"] for i in core.repo.list("invocation-log")] == [1]

    def test_webhook_action_uses_injected_sender(self, core):
        calls = []
        c = core.correlator
        c.webhook_sender = lambda url, event: calls.append((url, event.kind))
        c.handlers = [EventHandlerDef(id="h", action="webhook:http://hook/x")]
        c.submit("dev-1", "poll-failed", 2, 0)
        assert calls == [("http://hook/x", "poll-failed")]

    def test_failing_handler_logged_not_raised(self, core):
        c = core.correlator

        def boom(url, event):
            raise RuntimeError("hook down")

        c.webhook_sender = boom
        c.handlers = [EventHandlerDef(id="bad", action="webhook:u"),
                      EventHandlerDef(id="good", action="log")]
        c.submit("dev-1", "poll-failed", 2, 0)
        outcomes = {i["handler-id"]: i["outcome"] for i in core.repo.list("invocation-log")}
        assert outcomes["bad"].startswith("failed")
        assert outcomes["good"] == "ok"


class TestMapAndColor:
    def test_color_rules(self, core):
        c = core.correlator
        assert color_for({}) == "green"
        c.submit("dev-1", "threshold-breach", 3, 0)
        assert color_for(c.open["dev-1"]) == "yellow"
        c.submit("dev-1", "heartbeat-missed", 4, 1)
        assert color_for(c.open["dev-1"]) == "red"

    def test_registry_snapshot_then_deltas(self):
        reg = MapRegistry()
        reg.update("dev-1", "green", 0)
        seen = []
        reg.register(seen.append)
        assert seen[0] == {"type": "snapshot",
                           "map": {"dev-1": {"color": "green", "changed": 0}}}
        reg.update("dev-1", "red", 5)
        reg.update("dev-1", "red", 6)  # same color: no delta
        assert [m for m in seen[1:]] == [
            {"type": "delta", "device": "dev-1", "color": "red", "changed": 5}]

    def test_dead_client_unregistered_silently(self):
        reg = MapRegistry()

        def dead(msg):
            if msg["type"] == "delta":
                raise BrokenPipeError

        reg.register(dead)
        reg.update("dev-1", "red", 1)
        assert reg._clients == []
        reg.update("dev-1", "green", 2)  # no exception

    def test_event_flow_updates_map(self, core):
        core.install_subscription(make_sub())
        core.correlator.submit("dev-1", "heartbeat-missed", 4, 1000)
        assert core.registry.snapshot()["dev-1"]["color"] == "red"
        core.correlator.submit("dev-1", "device-recovered", 1, 2000)
        assert core.registry.snapshot()["dev-1"]["color"] == "green"


class TestInterpreter:
    def test_heartbeat_missed_once_per_outage(self, core):
        core.install_subscription(make_sub())
        it = core.interpreter
        core.ingress(report("s1", 1, 1000), 1000)
        for t in range(1000, 20_000, 500):
            it.tick(t)
        kinds = [e.kind for e in core.correlator.events]
        assert kinds.count("heartbeat-missed") == 1

    def test_recovery_emits_and_rearms(self, core):
        core.install_subscription(make_sub())
        it = core.interpreter
        core.ingress(report("s1", 1, 1000), 1000)
        it.tick(4000)  # > 2.5 * 1000 since 1000
        core.ingress(report("s1", 2, 9000), 9000)
        it.tick(12_000)
        kinds = [e.kind for e in core.correlator.events]
        assert kinds == ["heartbeat-missed", "device-recovered", "heartbeat-missed"]

    def test_miss_threshold_boundary(self, core):
        core.install_subscription(make_sub())
        it = core.interpreter
        core.ingress(report("s1", 1, 1000), 1000)
        it.tick(3500)  # exactly 2.5 periods: not yet missed
        assert core.correlator.events == []
        it.tick(3501)
        assert [e.kind for e in core.correlator.events] == ["heartbeat-missed"]

    def test_threshold_breach_edge_triggered(self, core):
        core.install_subscription(make_sub(oids=(CPU,)))
        it = core.interpreter
        it.set_threshold("dev-1", Oid.parse(CPU), ">", 90)
        for seq, v in enumerate((50, 95, 97, 99, 85, 95), start=1):
            core.ingress(report("s1", seq, seq * 1000, oid=CPU,
                                value=MibValue("gauge", v)), seq * 1000)
        kinds = [e.kind for e in core.correlator.events]
        assert kinds.count("threshold-breach") == 2  # 95 and the later 95

    def test_tick_interval_clamped(self, core):
        it = core.interpreter
        assert it.tick_interval() == 1000  # nothing tracked
        it.track("d", Oid.parse(UPTIME), 100, 0)
        assert it.tick_interval() == 100
        it.track("d", Oid.parse(CPU), 60_000, 0)
        assert it.tick_interval() == 100
        it.untrack_device("d")
        it.track("d", Oid.parse(UPTIME), 30_000, 0)
        assert it.tick_interval() == 5000


class ScriptedConn(PullClient):
    """Pull client that answers from a VirtualMib-free script."""

    def __init__(self, log, fail=False):
        self.log = log
        self.fail = fail
        self.closed = False
        log.append("connect")

    def request_many(self, msgs):
        if self.fail:
            raise MfnetError("unreachable")
        self.log.append(f"batch:{len(msgs)}")
        out = []
        for m in msgs:
            out.append(ManagementMessage(
                kind="response", request_id=m.request_id, status="ok",
                bindings=[(m.bindings[0][0], MibValue("gauge", 42))]))
        return out

    def close(self):
        self.closed = True
        self.log.append("close")


class TestPollingEngine:
    def make_engine(self, core, connect, keepalive=10_000, period=1000):
        d = PollingDefinition(id="p1", agent="dev-1", endpoint=("dev-1", 8810),
                              oids=[Oid.parse(UPTIME), Oid.parse(CPU)],
                              period_ms=period)
        core.repo.put("polling-defs", d.id, d.to_record())
        return PollingEngine(core.repo, core.interpreter, core.correlator.submit,
                             connect=connect, keepalive_ms=keepalive)

    def test_connection_reused_when_keepalive_exceeds_period(self, core):
        log = []
        engine = self.make_engine(core, lambda d: ScriptedConn(log))
        for t in (0, 1000, 2000):
            engine.cycle(t)
        assert log.count("connect") == 1
        assert log.count("batch:2") == 3

    def test_connection_closed_when_keepalive_too_short(self, core):
        log = []
        engine = self.make_engine(core, lambda d: ScriptedConn(log), keepalive=500)
        engine.cycle(0)
        engine.cycle(1000)
        assert log == ["connect", "batch:2", "close", "connect", "batch:2", "close"]

    def test_samples_stored(self, core):
        engine = self.make_engine(core, lambda d: ScriptedConn([]))
        engine.cycle(1000)
        recs = core.repo.list("pushed-data")
        assert {r["oid"] for r in recs} == {UPTIME, CPU}

    def test_failure_severity_escalates_then_recovers(self, core):
        state = {"fail": True}

        def connect(d):
            return ScriptedConn([], fail=state["fail"])

        engine = self.make_engine(core, connect)
        for t in range(0, ESCALATE_AFTER_FAILURES * 1000, 1000):
            engine.cycle(t)
        sevs = [e.severity for e in core.correlator.events if e.kind == "poll-failed"]
        assert sevs == [2, 2, 4]
        state["fail"] = False
        engine.cycle(5000)
        assert core.correlator.events[-1].kind == "poll-recovered"

    def test_definitions_reread_each_cycle(self, core):
        log = []
        engine = self.make_engine(core, lambda d: ScriptedConn(log))
        engine.cycle(0)
        d2 = PollingDefinition(id="p2", agent="dev-2", endpoint=("dev-2", 8810),
                               oids=[Oid.parse(UPTIME)], period_ms=1000)
        core.repo.put("polling-defs", d2.id, d2.to_record())
        engine.cycle(1000)
        assert log.count("connect") == 2


class TestReportGenerator:
    def samples(self, times, device="d", oid=UPTIME):
        return [{"device": device, "oid": oid, "time": t, "arrival": t,
                 "seq": None, "tag": "gauge", "value": str(v), "flags": []}
                for t, v in times]

    def test_slotting_keeps_earliest(self):
        rep = generate_report(
            self.samples([(500, 10), (900, 99), (1500, 20)]),
            ["d"], [UPTIME], (0, 2000), 1000, {("d", UPTIME): 1000})
        slots = rep["series"][f"d/{UPTIME}"]["slots"]
        assert [s["value"] for s in slots] == [10, 20]
        assert slots[0]["min"] == 10 and slots[0]["max"] == 99
        assert slots[0]["avg"] == pytest.approx(54.5)
        assert slots[0]["count"] == 2

    def test_interior_gap_interpolated_and_flagged(self):
        rep = generate_report(
            self.samples([(500, 10), (2500, 30)]),
            ["d"], [UPTIME], (0, 3000), 1000, {("d", UPTIME): 1000})
        slots = rep["series"][f"d/{UPTIME}"]["slots"]
        assert [s["value"] for s in slots] == [10, 20, 30]
        assert [s["interpolated"] for s in slots] == [False, True, False]

    def test_availability_counts_received_over_expected(self):
        rep = generate_report(
            self.samples([(1000, 1), (2000, 2), (4000, 4)]),
            ["d"], [UPTIME], (0, 4000), 1000, {("d", UPTIME): 1000})
        s = rep["series"][f"d/{UPTIME}"]
        assert (s["received"], s["expected"]) == (3, 4)
        assert rep["availability"] == 0.75

    def test_window_is_half_open(self):
        rep = generate_report(
            self.samples([(0, 1), (1000, 2), (4000, 4)]),
            ["d"], [UPTIME], (0, 4000), 1000, {("d", UPTIME): 1000})
        assert rep["series"][f"d/{UPTIME}"]["received"] == 2  # t=0 excluded

    def test_sync_reply_feeds_offsets(self, core):
        core.ingress(ManagementMessage(
            kind="sync-reply", device_id="dev-1", t1=0, t2=260, t3=261), 20)
        assert core.offsets.offset("dev-1") == pytest.approx(250.5)
