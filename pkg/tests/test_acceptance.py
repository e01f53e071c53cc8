"""Acceptance suite: one test per release criterion, each printing a
single PASS/FAIL line with the measured numbers.

Tolerances are pinned in the assertions; anything marked "exact" uses
equality, ratio criteria state their bound next to the measured value.
"""

import math
import random
import time

import pytest

from mfnet.manager import ManagerCore
from mfnet.mib import MibValue
from mfnet.oid import Oid
from mfnet.repository import Repository
from mfnet.simnet import (
    MANAGER,
    Scenario,
    Simulation,
    hot_standby_scenario,
    run_scenario,
)
from mfnet.subscription import Endpoint, Selection, Subscription
from mfnet.wire import DEFLATE, IDENTITY, ManagementMessage, decode_message, encode_message

UPTIME = "1.3.6.1.2.1.1.3.0"


def verdict(name: str, ok: bool, detail: str):
    line = f"{'PASS' if ok else 'FAIL'}: {name} ({detail})"
    print(line)
    assert ok, line


# ----------------------------------------------------------------------


def test_c01_push_bandwidth_ratio(tmp_path):
    """Steady-state manager-to-agent traffic under push (stream) must be
    under 5% of pull for the same fleet: 10 agents, 5 variables, 1 s
    period, 60 s window."""
    base = dict(agents=10, variables=5, period_ms=1000, duration_ms=60_000, seed=101)
    t0 = time.monotonic()
    push = run_scenario(Scenario(model="push", transport="stream", **base),
                        tmp_path / "push")
    pull = run_scenario(Scenario(model="pull", **base), tmp_path / "pull")
    runtime = time.monotonic() - t0
    push_bytes = push["traffic"]["steady"]["manager_to_agent_excl_sync"]["bytes"]
    pull_bytes = pull["traffic"]["manager_to_agent"]["bytes"]
    ratio = push_bytes / pull_bytes
    verdict(
        "push/pull manager-to-agent byte ratio",
        ratio < 0.05 and runtime < 5.0,
        f"ratio {ratio:.4f} < 0.05; push {push_bytes} B, pull {pull_bytes} B, "
        f"runtime {runtime:.2f} s < 5 s",
    )


def test_c02_push_steady_state_silence(tmp_path):
    """After the last subscribe-ack the only manager-to-agent messages
    are sync probes, exactly, on stream and datagram transports."""
    for transport in ("stream", "datagram"):
        s = Scenario(model="push", transport=transport, agents=3, variables=2,
                     period_ms=1000, duration_ms=30_000,
                     sync_interval_ms=10_000, seed=7)
        m = run_scenario(s, tmp_path / transport)
        steady = m["traffic"]["steady"]["manager_to_agent"]
        probes = steady["by_kind"].get("sync-probe", 0)
        verdict(
            f"steady-state silence over {transport}",
            steady["messages"] == probes and steady["by_kind"] in ({}, {"sync-probe": probes}),
            f"{steady['messages']} messages == {probes} sync probes",
        )


def test_c03_heartbeat_jitter_and_gap(tmp_path):
    """3 s heartbeat: 100 beats alternating 2.99/3.01 s apart raise no
    alarm; one gap of 2.5 x period + epsilon raises exactly one
    heartbeat-missed and one device-recovered."""
    def new_core():
        clock = lambda: 0
        core = ManagerCore(Repository(tmp_path / f"hb{time.monotonic_ns()}"), clock)
        core.install_subscription(Subscription(
            id="hb", agent="dev-1",
            endpoints=[Endpoint("mgr", 0, "datagram")],
            selections=[Selection(Oid.parse(UPTIME), 3000)]))
        return core

    def beat(core, seq, t):
        core.ingress(ManagementMessage(
            kind="push-report", subscription_id="hb", seq=seq, timestamp=t,
            device_id="dev-1",
            bindings=[(Oid.parse(UPTIME), MibValue("timeticks", t // 10))]), t)

    core = new_core()
    t, seq = 0, 0
    for i in range(100):
        t += 2990 if i % 2 == 0 else 3010
        seq += 1
        beat(core, seq, t)
        for tick_t in range(t - 2000, t + 1, 500):
            core.interpreter.tick(tick_t)
    jitter_events = [e for e in core.correlator.events]
    verdict("heartbeat jitter tolerance", jitter_events == [],
            f"{len(jitter_events)} alarms over 100 jittered beats")

    core = new_core()
    t = 0
    for seq in range(1, 11):
        t += 3000
        beat(core, seq, t)
        core.interpreter.tick(t)
    gap_end = t + int(2.5 * 3000) + 10  # one missed beat plus epsilon
    for tick_t in range(t, gap_end, 100):
        core.interpreter.tick(tick_t)
    core.interpreter.tick(gap_end)
    beat(core, 11, gap_end)
    t = gap_end
    for seq in range(12, 16):  # healthy again
        t += 3000
        beat(core, seq, t)
        core.interpreter.tick(t)
    kinds = [e.kind for e in core.correlator.events]
    verdict(
        "single-gap alarm pair",
        kinds.count("heartbeat-missed") == 1 and kinds.count("device-recovered") == 1,
        f"events {kinds}",
    )


def test_c04_pull_connection_economy(tmp_path):
    """100 polling cycles with keepalive > period must open exactly one
    connection per agent, and pipelined responses arrive in request order."""
    s = Scenario(model="pull", agents=4, variables=3, period_ms=1000,
                 duration_ms=99_000, keepalive_ms=5000, seed=3)
    sim = Simulation(s, tmp_path / "pull")
    m = sim.run()
    conns = {link: st["connections"]
             for link, st in m["traffic"]["links"].items() if link.startswith("mgr->")}
    one_each = all(c == 1 for c in conns.values()) and len(conns) == 4
    cycles = m["traffic"]["links"]["mgr->agent-0"]["by_kind"]["get-request"] // 3
    verdict("pull connection economy", one_each and cycles == 100,
            f"connections {conns}, {cycles} cycles")

    # pipelining: a burst of distinct requests through one connection
    # must come back in exactly the order sent
    from mfnet.simnet import _SimPullConnection
    conn = _SimPullConnection(sim, MANAGER, "agent-0")
    oids = [Oid.parse(UPTIME), Oid.parse("1.3.6.1.2.1.1.1.0"),
            Oid.parse("1.3.6.1.4.1.53535.1.2.0")]
    reqs = [ManagementMessage(kind="get-request", request_id=100 + i,
                              bindings=[(oids[i % 3], None)])
            for i in range(30)]
    resps = conn.request_many(reqs)
    in_order = [r.request_id for r in resps] == [q.request_id for q in reqs]
    verdict("pipelined response order", in_order,
            f"{len(resps)} responses in request order")


def test_c05_table_walk_equivalence():
    """get_table equals a get_next walk for 100 randomized virtual MIBs."""
    from mibgen import random_mib

    mismatches = 0
    for seed in range(100):
        vmib, table = random_mib(seed)
        walked = set(vmib.walk(table))
        cells = {cell for _, cells in vmib.get_table(table) for cell in cells}
        if cells != walked:
            mismatches += 1
    verdict("table retrieval equals walk oracle", mismatches == 0,
            f"{mismatches} mismatches over 100 random MIBs")


def _random_message(rng: random.Random) -> ManagementMessage:
    kinds = ("get-request", "get-table-request", "set-request", "response",
             "push-report", "notification", "sync-probe", "sync-reply",
             "subscribe-request", "subscribe-ack", "subscribe-attach",
             "resend-request")
    kind = rng.choice(kinds)
    msg = ManagementMessage(kind=kind, timestamp=rng.randrange(2**48))
    msg.request_id = rng.randrange(2**31)
    msg.subscription_id = f"sub-{rng.randrange(10_000)}"
    msg.seq = rng.randrange(1, 2**31)
    msg.status = rng.choice(["ok", "no-such-instance", "wrong-type"])
    msg.device_id = rng.choice(["dev-1", "core-sw", "edge9"])
    msg.notif_name = rng.choice(["linkDown", "coldStart", "fanFailure"])
    msg.t1, msg.t2, msg.t3 = (rng.randrange(2**48) for _ in range(3))

    def binding():
        oid = Oid(tuple(rng.randrange(1, 100) for _ in range(rng.randrange(3, 11))))
        tag = rng.choice(["integer", "counter32", "gauge", "timeticks",
                          "octet-string", "oid"])
        if tag == "octet-string":
            v = MibValue(tag, bytes(rng.randrange(256) for _ in range(rng.randrange(24))))
        elif tag == "oid":
            v = MibValue(tag, Oid(tuple(rng.randrange(40) for _ in range(4))))
        elif tag == "integer":
            v = MibValue(tag, rng.randrange(-10**6, 10**6))
        else:
            v = MibValue(tag, rng.randrange(2**32))
        return (oid, v if rng.random() < 0.9 else None)

    if kind == "subscribe-request" or rng.random() < 0.1:
        msg.document = "\n".join(
            f"line-{i} {rng.randrange(10**6)}" for i in range(rng.randrange(1, 20)))
    elif kind == "response" and rng.random() < 0.3:
        msg.rows = [(rng.randrange(10_000), [binding() for _ in range(rng.randrange(4))])
                    for _ in range(rng.randrange(5))]
    else:
        msg.bindings = [binding() for _ in range(rng.randrange(31))]
    return msg


def test_c06_codec_roundtrip_and_compression():
    """10 000 random messages survive decode(encode()) byte-exactly under
    both encodings; deflate beats identity for bodies >= 256 bytes in at
    least 95% of cases."""
    rng = random.Random(0xC0DEC)
    failures = 0
    eligible = wins = 0
    for _ in range(10_000):
        msg = _random_message(rng)
        ident = encode_message(msg, IDENTITY)
        defl = encode_message(msg, DEFLATE)
        if decode_message(ident) != msg or decode_message(defl) != msg:
            failures += 1
        body_len = len(ident.split(b"\r\n\r\n", 1)[1])
        if body_len >= 256:
            eligible += 1
            if len(defl) < len(ident):
                wins += 1
    win_rate = wins / eligible if eligible else 0.0
    verdict(
        "codec roundtrip and compression",
        failures == 0 and eligible >= 1000 and win_rate >= 0.95,
        f"{failures} roundtrip failures / 10000; deflate smaller in "
        f"{win_rate:.1%} of {eligible} bodies >= 256 B (bound 95%)",
    )


def test_c07_reboot_recovery(tmp_path):
    """Durable restart resumes every subscription with zero manager
    messages; volatile restart converges to the repository's set within
    two resend round-trips."""
    faults = [("kill", "agent-0", 10_000), ("restore", "agent-0", 20_000)]

    s = Scenario(model="push", transport="datagram", agents=2, variables=2,
                 period_ms=1000, duration_ms=30_000, storage_mode="durable", seed=5)
    s.faults = list(faults)
    sim = Simulation(s, tmp_path / "durable")
    m = sim.run()
    mgr_msgs_after = [e for e in sim.meter.log
                      if e["src"] == MANAGER and e["dst"] == "agent-0"
                      and e["t"] >= 20_000]
    resumed = sorted(sim.agents["agent-0"].subs) == ["sub-agent-0"]
    verdict(
        "durable reboot recovery",
        m["recovery"] == {"agent-0": 1} and resumed and mgr_msgs_after == [],
        f"recovered {m['recovery']}, {len(mgr_msgs_after)} manager messages "
        f"after restart (bound 0)",
    )

    s = Scenario(model="push", transport="datagram", agents=2, variables=2,
                 period_ms=1000, duration_ms=30_000, storage_mode="volatile", seed=5)
    s.faults = list(faults)
    sim = Simulation(s, tmp_path / "volatile")
    sim.run()
    agent_subs = {st.sub.id: st.sub for st in sim.agents["agent-0"].subs.values()}
    repo_subs = {s2.id: s2 for s2
                 in sim.managers[MANAGER].repo.subscriptions_for("agent-0")}
    resends = [e for e in sim.meter.log
               if e["src"] == "agent-0" and e["kind"] == "resend-request"]
    verdict(
        "volatile reboot recovery",
        agent_subs == repo_subs and 1 <= len(resends) <= 2,
        f"agent set == repository set ({sorted(agent_subs)}), "
        f"{len(resends)} resend round-trips (bound 2)",
    )


def test_c08_hot_standby(tmp_path):
    """Fan-out to two managers over lossless stream links: identical
    (seq, bindings) streams before the primary dies, and the standby
    keeps availability at 0.99 or better over the whole window."""
    r = hot_standby_scenario(tmp_path, seed=11, agents=3, variables=2,
                             period_ms=1000, duration_ms=30_000)
    v = r["verdict"]
    verdict(
        "hot standby",
        v["streams_identical_pre_kill"] and v["standby_availability"] >= 0.99,
        f"streams identical pre-kill: {v['streams_identical_pre_kill']}, "
        f"standby availability {v['standby_availability']:.4f} >= 0.99",
    )


def test_c09_clock_sync(tmp_path):
    """+-250 ms skew over symmetric links estimates within 1 ms of truth,
    at exactly two sync messages per agent per interval."""
    for skew in (250, -250):
        s = Scenario(model="push", transport="datagram", agents=3, variables=1,
                     period_ms=1000, duration_ms=20_000,
                     sync_interval_ms=5000, skew_ms=skew,
                     latency_up_ms=3, latency_down_ms=3, seed=2)
        sim = Simulation(s, tmp_path / f"skew{skew}")
        sim.run()
        errors = []
        for agent in sim.agent_names:
            est = sim.managers[MANAGER].offsets.offset(agent)
            errors.append(abs(est - skew))
        probes = sum(e["kind"] == "sync-probe" for e in sim.meter.log)
        replies = sum(e["kind"] == "sync-reply" for e in sim.meter.log)
        intervals = 20_000 // 5000 + 1  # probes fire at 0, 5, 10, 15, 20 s
        per_interval = (probes + replies) / (3 * intervals)
        verdict(
            f"clock sync, skew {skew:+d} ms",
            max(errors) <= 1.0 and per_interval == 2.0,
            f"max |est - true| {max(errors):.3f} ms <= 1 ms, "
            f"{per_interval:.1f} msgs/agent/interval (bound 2, exact)",
        )


def test_c10_datagram_loss_accounting(tmp_path):
    """20% datagram loss over 10 000 reports: the collector's lost count
    sits within 3 sigma of binomial expectation, and availability equals
    1 - realized loss exactly as measured by the meter."""
    s = Scenario(model="push", transport="datagram", agents=10, variables=1,
                 period_ms=100, duration_ms=100_000, loss_rate=0.2, seed=77)
    sim = Simulation(s, tmp_path / "loss")
    m = sim.run()
    reports = [e for e in sim.meter.log if e["kind"] == "push-report"]
    sent = len(reports)
    delivered = sum(e["outcome"] == "delivered" for e in reports)
    lost_count = sum(m["collector"][MANAGER]["lost"].values())
    sigma = math.sqrt(sent * 0.2 * 0.8)
    within = abs(lost_count - 0.2 * sent) <= 3 * sigma
    realized = delivered / sent
    exact = m["availability"] == realized
    verdict(
        "datagram loss accounting",
        sent >= 10_000 and within and exact,
        f"{sent} reports, collector lost {lost_count} vs expected "
        f"{0.2 * sent:.0f} +- {3 * sigma:.0f}; availability "
        f"{m['availability']:.4f} == 1 - realized loss {1 - realized:.4f} (exact)",
    )


def test_c11_simulate_determinism(tmp_path):
    """The simulate command is bit-reproducible for a fixed seed."""
    from mfnet.cli import main

    scenario = tmp_path / "det.scenario"
    scenario.write_text(
        "model = push\ntransport = datagram\nagents = 3\nvariables = 2\n"
        "period-ms = 500\nduration-ms = 10000\nloss-rate = 0.1\nseed = 99\n"
        "kill agent-1 4000\nrestore agent-1 7000\n")
    outs = []
    for run in ("a", "b"):
        out = tmp_path / f"metrics-{run}.json"
        assert main(["simulate", "--scenario", str(scenario),
                     "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    verdict("simulate determinism", outs[0] == outs[1],
            f"two runs, {len(outs[0])} byte metrics documents byte-identical")
