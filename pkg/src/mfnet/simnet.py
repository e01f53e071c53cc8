"""Deterministic in-process fleet simulator.

A discrete-event kernel drives N agents and one or two managers over
modelled links (loss rate + per-direction latency, seeded RNG).  Every
message crossing a link is metered byte-exactly using the real wire
codec, which is what makes the push-vs-pull overhead comparison
reproducible: identical scenario + seed gives identical metrics
documents.

Scenario files are key=value lines; fault script lines are
``kill <who> <t-ms>`` / ``restore <who> <t-ms>``.
"""

from __future__ import annotations

import heapq
import json
import random
import zlib
from dataclasses import dataclass, field
from pathlib import Path

from mfnet.agent import Agent, AgentConfig, AgentTransport
from mfnet.errors import MfnetError
from mfnet.manager import ManagerCore, PollingDefinition, PollingEngine, PullClient
from mfnet.mib import MibValue, VirtualMib, builtin_schema_path
from mfnet.oid import Oid
from mfnet.repository import Repository
from mfnet.subscription import DATAGRAM, HTTP_PUSH, STREAM, Endpoint, Selection, Subscription
from mfnet.timesync import DEFAULT_SYNC_INTERVAL_MS
from mfnet.wire import ManagementMessage, encode_message, frame

MANAGER = "mgr"
STANDBY = "mgr-b"

# instance OIDs handed out to subscriptions/polls, in preference order
VARIABLE_POOL = [
    "1.3.6.1.2.1.1.3.0",        # sysUpTime
    "1.3.6.1.4.1.53535.1.2.0",  # devCpuLoad
    "1.3.6.1.4.1.53535.1.3.0",  # devTemperature
    "1.3.6.1.4.1.53535.1.5.0",  # devPacketsSeen
    "1.3.6.1.4.1.53535.1.4.0",  # devFanSpeed
    "1.3.6.1.2.1.1.2.0",        # sysObjectID
    "1.3.6.1.2.1.2.2.1.10.1",   # ifInOctets.1
    "1.3.6.1.2.1.2.2.1.16.1",   # ifOutOctets.1
    "1.3.6.1.2.1.2.2.1.10.2",
    "1.3.6.1.2.1.2.2.1.16.2",
]

IF_TABLE = Oid.parse("1.3.6.1.2.1.2.2")


@dataclass
class Scenario:
    name: str = "scenario"
    seed: int = 0
    model: str = "push"  # push | pull
    transport: str = STREAM
    agents: int = 1
    variables: int = 1
    period_ms: int = 1000
    duration_ms: int = 10_000
    managers: int = 1
    loss_rate: float = 0.0
    latency_up_ms: int = 1  # agent -> manager
    latency_down_ms: int = 1  # manager -> agent
    keepalive_ms: int | None = None  # pull: default 2x period
    sync_interval_ms: int = DEFAULT_SYNC_INTERVAL_MS
    skew_ms: int = 0  # agent clocks run ahead of the manager by this much
    storage_mode: str = "durable"
    faults: list[tuple[str, str, int]] = field(default_factory=list)

    @classmethod
    def from_file(cls, path: str | Path) -> "Scenario":
        s = cls()
        keys = {
            "name": ("name", str), "seed": ("seed", int), "model": ("model", str),
            "transport": ("transport", str), "agents": ("agents", int),
            "variables": ("variables", int), "period-ms": ("period_ms", int),
            "duration-ms": ("duration_ms", int), "managers": ("managers", int),
            "loss-rate": ("loss_rate", float),
            "latency-up-ms": ("latency_up_ms", int),
            "latency-down-ms": ("latency_down_ms", int),
            "keepalive-ms": ("keepalive_ms", int),
            "sync-interval-ms": ("sync_interval_ms", int),
            "skew-ms": ("skew_ms", int), "storage-mode": ("storage_mode", str),
        }
        for raw in Path(path).read_text().splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith(("kill ", "restore ")):
                action, who, t = line.split()
                s.faults.append((action, who, int(t)))
                continue
            k, _, v = line.partition("=")
            k, v = k.strip(), v.strip()
            if k not in keys:
                raise MfnetError(f"unknown scenario key {k!r}")
            attr, conv = keys[k]
            setattr(s, attr, conv(v))
        s.validate()
        return s

    def validate(self):
        if self.model not in ("push", "pull"):
            raise MfnetError(f"bad model {self.model!r}")
        if self.transport not in (STREAM, DATAGRAM, HTTP_PUSH):
            raise MfnetError(f"bad transport {self.transport!r}")
        if self.variables > len(VARIABLE_POOL):
            raise MfnetError(f"at most {len(VARIABLE_POOL)} variables supported")
        if not 0 <= self.loss_rate <= 1:
            raise MfnetError("loss-rate must be in [0,1]")

    def to_record(self) -> dict:
        return {
            "name": self.name, "seed": self.seed, "model": self.model,
            "transport": self.transport, "agents": self.agents,
            "variables": self.variables, "period-ms": self.period_ms,
            "duration-ms": self.duration_ms, "managers": self.managers,
            "loss-rate": self.loss_rate, "latency-up-ms": self.latency_up_ms,
            "latency-down-ms": self.latency_down_ms,
            "keepalive-ms": self.keepalive_ms,
            "sync-interval-ms": self.sync_interval_ms, "skew-ms": self.skew_ms,
            "storage-mode": self.storage_mode,
            "faults": [list(f) for f in self.faults],
        }


class TrafficMeter:
    """Per-link, per-direction byte/message/connection accounting with a
    full send log (conservation: sent == delivered + dropped)."""

    def __init__(self):
        self.links: dict[tuple[str, str], dict] = {}
        self.log: list[dict] = []

    def _link(self, src: str, dst: str) -> dict:
        return self.links.setdefault(
            (src, dst),
            {"bytes": 0, "messages": 0, "connections": 0,
             "sent": 0, "delivered": 0, "dropped": 0, "by_kind": {}},
        )

    def connection(self, src: str, dst: str):
        self._link(src, dst)["connections"] += 1

    def send(self, src: str, dst: str, kind: str, size: int, t: int) -> dict:
        link = self._link(src, dst)
        link["bytes"] += size
        link["messages"] += 1
        link["sent"] += 1
        link["by_kind"][kind] = link["by_kind"].get(kind, 0) + 1
        entry = {"t": t, "src": src, "dst": dst, "kind": kind, "size": size,
                 "outcome": "pending"}
        self.log.append(entry)
        return entry

    def settle(self, entry: dict, delivered: bool):
        link = self._link(entry["src"], entry["dst"])
        entry["outcome"] = "delivered" if delivered else "dropped"
        link["delivered" if delivered else "dropped"] += 1

    # --- aggregate views ---

    def direction(self, srcs, dsts, exclude_kinds=(), since: int | None = None) -> dict:
        out = {"bytes": 0, "messages": 0, "by_kind": {}}
        for e in self.log:
            if e["src"] not in srcs or e["dst"] not in dsts:
                continue
            if e["kind"] in exclude_kinds:
                continue
            if since is not None and e["t"] <= since:
                continue
            out["bytes"] += e["size"]
            out["messages"] += 1
            out["by_kind"][e["kind"]] = out["by_kind"].get(e["kind"], 0) + 1
        return out

    def series(self, srcs, dsts, bucket_ms: int = 1000) -> dict[int, int]:
        buckets: dict[int, int] = {}
        for e in self.log:
            if e["src"] in srcs and e["dst"] in dsts:
                b = e["t"] // bucket_ms
                buckets[b] = buckets.get(b, 0) + e["size"]
        return buckets

    def check_conservation(self):
        for (src, dst), link in self.links.items():
            if link["sent"] != link["delivered"] + link["dropped"]:
                raise AssertionError(f"meter conservation violated on {src}->{dst}")


class SimKernel:
    def __init__(self):
        self.now = 0
        self._heap: list[tuple[int, int, object]] = []
        self._seq = 0

    def at(self, t: int, fn):
        if t < self.now:
            t = self.now
        heapq.heappush(self._heap, (t, self._seq, fn))
        self._seq += 1

    def after(self, dt: int, fn):
        self.at(self.now + dt, fn)

    def run_until(self, t_end: int):
        while self._heap and self._heap[0][0] <= t_end:
            t, _, fn = heapq.heappop(self._heap)
            self.now = t
            fn()
        self.now = t_end


def _link_rng(seed: int, src: str, dst: str) -> random.Random:
    return random.Random(seed ^ zlib.crc32(f"{src}->{dst}".encode()))


class SimNode:
    def __init__(self, name: str):
        self.name = name
        self.alive = True
        self.epoch = 0  # bumped on kill so stale scheduled events are ignored


class _SimAgentTransport(AgentTransport):
    def __init__(self, sim: "Simulation", agent_name: str):
        self.sim = sim
        self.agent_name = agent_name

    def send_datagram(self, endpoint: Endpoint, msg: ManagementMessage):
        self.sim.transmit(self.agent_name, endpoint.host, msg, DATAGRAM)

    def http_post(self, endpoint: Endpoint, msg: ManagementMessage) -> bool:
        sim = self.sim
        if not sim.nodes[endpoint.host].alive:
            agent = sim.agents[self.agent_name]
            if agent.retry_queue or msg.kind == "push-report":
                sim.kernel.after(1000, lambda: sim.pump_retries(self.agent_name))
            return False
        sim.transmit(self.agent_name, endpoint.host, msg, "http")
        # HTTP response on the same connection, manager -> agent
        resp = ManagementMessage(kind="response", request_id=0, status="ok")
        sim.transmit(endpoint.host, self.agent_name, resp, "http",
                     latency=sim.scenario.latency_down_ms, deliver=None)
        return True


class _SimPullConnection(PullClient):
    def __init__(self, sim: "Simulation", mgr: str, agent_name: str):
        self.sim = sim
        self.mgr = mgr
        self.agent_name = agent_name
        if not sim.nodes[agent_name].alive:
            raise MfnetError(f"{agent_name} unreachable")
        sim.meter.connection(mgr, agent_name)

    def request_many(self, msgs):
        sim = self.sim
        if not sim.nodes[self.agent_name].alive:
            raise MfnetError(f"{self.agent_name} unreachable")
        agent = sim.agents[self.agent_name]
        sim.sync_agent(self.agent_name)
        responses = []
        for msg in msgs:
            sim.transmit(self.mgr, self.agent_name, msg, "http",
                         latency=sim.scenario.latency_down_ms, deliver=None)
            resp = agent.handle_request(msg)
            sim.transmit(self.agent_name, self.mgr, resp, "http",
                         latency=sim.scenario.latency_up_ms, deliver=None)
            responses.append(resp)
        return responses


class Simulation:
    def __init__(self, scenario: Scenario, workdir: str | Path):
        self.scenario = scenario
        self.workdir = Path(workdir)
        self.kernel = SimKernel()
        self.meter = TrafficMeter()
        self.manager_names = [MANAGER] if scenario.managers == 1 else [MANAGER, STANDBY]
        self.agent_names = [f"agent-{i}" for i in range(scenario.agents)]
        self.nodes = {n: SimNode(n) for n in self.manager_names + self.agent_names}
        self.rngs: dict[tuple[str, str], random.Random] = {}
        self.agents: dict[str, Agent] = {}
        self.managers: dict[str, ManagerCore] = {}
        self.engines: dict[str, PollingEngine] = {}
        self.acks: list[int] = []  # subscribe-ack arrival times at managers
        self.streams: dict[str, list] = {m: [] for m in self.manager_names}
        self.oids = [Oid.parse(t) for t in VARIABLE_POOL[: scenario.variables]]
        self._build()

    # ------------------------------------------------------------------

    def _build(self):
        s = self.scenario
        for name in self.manager_names:
            repo = Repository(self.workdir / name)
            core = ManagerCore(repo, clock=lambda: self.kernel.now, device_id=name)
            core.subscribe_sender = self._make_subscribe_sender(name)
            self.managers[name] = core
        for i, name in enumerate(self.agent_names):
            vmib = VirtualMib.from_schema_files(
                [builtin_schema_path("mib2-lite"), builtin_schema_path("vendor-sim")],
                seed=s.seed + i,
            )
            for row in (1, 2, 3):
                vmib.add_table_row(IF_TABLE, row, {
                    "ifIndex": MibValue("integer", row),
                    "ifDescr": MibValue("octet-string", f"eth{row - 1}".encode()),
                    "ifOperStatus": MibValue("integer", 1),
                    "ifSpeed": MibValue("gauge", 100_000_000),
                })
            resend = Endpoint(MANAGER, 0, HTTP_PUSH)
            cfg = AgentConfig(
                device_id=name,
                storage_path=str(self.workdir / name / "store"),
                storage_mode=s.storage_mode,
                manager_resend_endpoint=resend,
            )
            agent = Agent(cfg, vmib,
                          clock=self._agent_clock(name),
                          transport=_SimAgentTransport(self, name))
            self.agents[name] = agent

    def _agent_clock(self, name: str):
        return lambda: self.kernel.now + self.scenario.skew_ms

    def sync_agent(self, name: str):
        vmib = self.agents[name].vmib
        if self.kernel.now > vmib.sim_time:
            vmib.tick(self.kernel.now - vmib.sim_time)

    # ------------------------------------------------------------------
    # metered transmission

    def transmit(self, src: str, dst: str, msg: ManagementMessage, mode: str,
                 latency: int | None = None, deliver="default"):
        """Encode, meter, apply loss (datagram only), schedule delivery."""
        data = encode_message(msg)
        size = len(frame(data)) if mode == STREAM else len(data)
        entry = self.meter.send(src, dst, msg.kind, size, self.kernel.now)
        if latency is None:
            latency = (self.scenario.latency_up_ms if src in self.agents
                       else self.scenario.latency_down_ms)
        if mode == DATAGRAM:
            rng = self.rngs.setdefault(
                (src, dst), _link_rng(self.scenario.seed, src, dst))
            if rng.random() < self.scenario.loss_rate:
                self.meter.settle(entry, delivered=False)
                return
        if deliver == "default":
            deliver = self._default_deliver(dst, msg)
        if deliver is None:
            self.meter.settle(entry, delivered=True)
            return

        def arrive():
            if not self.nodes[dst].alive:
                self.meter.settle(entry, delivered=False)
                return
            self.meter.settle(entry, delivered=True)
            deliver(msg, self.kernel.now)

        self.kernel.after(latency, arrive)

    def _default_deliver(self, dst: str, msg: ManagementMessage):
        if dst in self.managers:
            core = self.managers[dst]

            def deliver(m, arrival):
                if m.kind in ("push-report", "notification"):
                    self.streams[dst].append(
                        (m.subscription_id, m.kind, m.seq,
                         tuple((str(o), None if v is None else (v.tag, str(v.value)))
                               for o, v in m.bindings)))
                core.ingress(m, arrival)

            return deliver
        return None

    # ------------------------------------------------------------------
    # push-model wiring

    def _make_subscribe_sender(self, mgr_name: str):
        def sender(sub: Subscription):
            agent_name = sub.agent
            if not self.nodes[agent_name].alive:
                return None
            req = ManagementMessage(
                kind="subscribe-request", subscription_id=sub.id,
                device_id=mgr_name, document=sub.to_text(),
                timestamp=self.kernel.now,
            )
            self.transmit(mgr_name, agent_name, req, "http", deliver=None)
            self.sync_agent(agent_name)
            agent = self.agents[agent_name]
            ack = agent.subscribe(req)
            self.transmit(agent_name, mgr_name, ack, "http", deliver=None)
            if ack.status == "ok":
                self._kick_scheduler(agent_name)
            return ack
        return sender

    def _subscription_for(self, agent_name: str) -> Subscription:
        s = self.scenario
        endpoints = [Endpoint(m, 0, s.transport) for m in self.manager_names]
        return Subscription(
            id=f"sub-{agent_name}",
            agent=agent_name,
            endpoints=endpoints,
            selections=[Selection(oid, s.period_ms) for oid in self.oids],
            durable=s.storage_mode == "durable",
        )

    def _attach_stream(self, mgr_name: str, agent_name: str, sub_id: str,
                       endpoint: Endpoint):
        """Manager opens the raw-stream connection and sends the framed
        attach message; the agent then pushes framed reports down it."""
        if not self.nodes[agent_name].alive or not self.nodes[mgr_name].alive:
            return
        self.meter.connection(mgr_name, agent_name)
        attach = ManagementMessage(
            kind="subscribe-attach", subscription_id=sub_id,
            device_id=mgr_name, timestamp=self.kernel.now,
        )
        self.transmit(mgr_name, agent_name, attach, STREAM, deliver=None)
        agent = self.agents[agent_name]

        def sink(msg: ManagementMessage):
            if not self.nodes[mgr_name].alive:
                raise MfnetError("stream peer down")
            self.transmit(agent_name, mgr_name, msg, STREAM)

        agent.attach_stream(sub_id, endpoint, sink)

    def _subscribe_all(self):
        """Publish/subscribe phase at t=0.  For stream transport the
        attach precedes the subscribe-request so that after the last ack
        no manager->agent traffic remains."""
        s = self.scenario
        for agent_name in self.agent_names:
            sub = self._subscription_for(agent_name)
            for mgr_name in self.manager_names:
                core = self.managers[mgr_name]
                core.install_subscription(sub)
                ep = Endpoint(mgr_name, 0, s.transport)
                if s.transport == STREAM:
                    self._attach_stream(mgr_name, agent_name, sub.id, ep)
            # one subscribe-request installs all endpoints at the agent
            req = ManagementMessage(
                kind="subscribe-request", subscription_id=sub.id,
                device_id=MANAGER, document=sub.to_text(),
                timestamp=self.kernel.now,
            )
            self.transmit(MANAGER, agent_name, req, "http", deliver=None)
            self.sync_agent(agent_name)
            ack = self.agents[agent_name].subscribe(req)
            ack_entry_latency = s.latency_up_ms
            self.transmit(agent_name, MANAGER, ack, "http", deliver=None)
            self.acks.append(self.kernel.now + ack_entry_latency)
            self._kick_scheduler(agent_name)

    def _kick_scheduler(self, agent_name: str):
        agent = self.agents[agent_name]
        node = self.nodes[agent_name]
        epoch = node.epoch

        def step():
            if node.epoch != epoch or not node.alive:
                return
            due = agent.next_due()
            if due is None:
                return
            true_t = due - self.scenario.skew_ms
            if true_t > self.scenario.duration_ms:
                return
            if true_t <= self.kernel.now:
                self.sync_agent(agent_name)
                agent.run_due(agent.clock())
                self.kernel.after(0, step)
            else:
                self.kernel.at(true_t, step)

        self.kernel.after(0, step)

    def pump_retries(self, agent_name: str):
        node = self.nodes[agent_name]
        if node.alive:
            agent = self.agents[agent_name]
            agent.process_retries(agent.clock())

    def _schedule_sync_probes(self):
        s = self.scenario
        if s.sync_interval_ms <= 0:
            return

        def probe_all():
            if self.kernel.now > s.duration_ms:
                return
            for agent_name in self.agent_names:
                if not self.nodes[agent_name].alive:
                    continue
                for mgr_name in self.manager_names:
                    if not self.nodes[mgr_name].alive:
                        continue
                    self._probe(mgr_name, agent_name)
            self.kernel.after(s.sync_interval_ms, probe_all)

        self.kernel.at(0, probe_all)

    def _probe(self, mgr_name: str, agent_name: str):
        s = self.scenario
        t1 = self.kernel.now  # manager clock == true clock
        probe = ManagementMessage(kind="sync-probe", t1=t1, timestamp=t1)

        def on_probe_arrival(_msg, _arrival):
            self.sync_agent(agent_name)
            agent = self.agents[agent_name]
            reply = agent.handle_request(probe)
            reply.device_id = agent_name
            self.transmit(agent_name, mgr_name, reply, "http",
                          latency=s.latency_up_ms)

        self.transmit(mgr_name, agent_name, probe, "http",
                      latency=s.latency_down_ms, deliver=on_probe_arrival)

    # ------------------------------------------------------------------
    # pull-model wiring

    def _setup_pull(self):
        s = self.scenario
        keepalive = s.keepalive_ms if s.keepalive_ms is not None else 2 * s.period_ms
        for mgr_name in self.manager_names:
            core = self.managers[mgr_name]
            for agent_name in self.agent_names:
                d = PollingDefinition(
                    id=f"poll-{agent_name}", agent=agent_name,
                    endpoint=(agent_name, 8810),
                    oids=list(self.oids), period_ms=s.period_ms,
                )
                core.repo.put("polling-defs", d.id, d.to_record())
            engine = PollingEngine(
                core.repo, core.interpreter, core.correlator.submit,
                connect=lambda d, m=mgr_name: _SimPullConnection(self, m, d.agent),
                keepalive_ms=keepalive,
            )
            engine.track_all(0)
            self.engines[mgr_name] = engine

            def cycle(m=mgr_name, e=engine):
                if self.kernel.now > s.duration_ms:
                    return
                if self.nodes[m].alive:
                    e.cycle(self.kernel.now)
                self.kernel.after(s.period_ms, cycle)

            self.kernel.at(0, cycle)

    # ------------------------------------------------------------------
    # faults

    def _schedule_faults(self):
        for action, who, t in self.scenario.faults:
            if action == "kill":
                self.kernel.at(t, lambda w=who: self._kill(w))
            else:
                self.kernel.at(t, lambda w=who: self._restore(w))

    def _kill(self, who: str):
        node = self.nodes[who]
        node.alive = False
        node.epoch += 1
        if who in self.agents:
            agent = self.agents[who]
            agent.subs.clear()
            agent._pending_attach.clear()
            agent.retry_queue.clear()
            if self.scenario.storage_mode == "volatile":
                # RAM-backed push configuration evaporates with the power
                store = Path(agent.config.storage_path)
                if store.exists():
                    for p in store.glob("*.sub"):
                        p.unlink()
        else:
            # broken TCP peers: stream endpoints on agents fall back to buffering
            for agent in self.agents.values():
                agent.detach_all(who)

    def _restore(self, who: str):
        node = self.nodes[who]
        node.alive = True
        if who in self.agents:
            agent = self.agents[who]
            self.sync_agent(who)
            recovered = agent.recover_on_boot()
            self._recovered = getattr(self, "_recovered", {})
            self._recovered[who] = recovered
            if self.scenario.transport == STREAM and recovered:
                for mgr_name in self.manager_names:
                    self._attach_stream(mgr_name, who, f"sub-{who}",
                                        Endpoint(mgr_name, 0, STREAM))
            self._kick_scheduler(who)
        else:
            # manager back: it owns stream reconnection
            if self.scenario.model == "push" and self.scenario.transport == STREAM:
                for agent_name in self.agent_names:
                    self._attach_stream(who, agent_name, f"sub-{agent_name}",
                                        Endpoint(who, 0, STREAM))

    # ------------------------------------------------------------------

    def run(self) -> dict:
        s = self.scenario
        self._schedule_faults()
        self._schedule_sync_probes()
        if s.model == "push":
            self.kernel.at(0, self._subscribe_all)
        else:
            self._setup_pull()

        def mgr_tick():
            if self.kernel.now > s.duration_ms:
                return
            for name, core in self.managers.items():
                if self.nodes[name].alive:
                    core.tick(self.kernel.now)
            self.kernel.after(self._tick_interval(), mgr_tick)

        self.kernel.at(self._tick_interval(), mgr_tick)
        # firings stop at duration; the drain window lets in-flight
        # messages and one pending http retry settle
        drain = 2 * (s.latency_up_ms + s.latency_down_ms) + 1100
        self.kernel.run_until(s.duration_ms + drain)
        for entry in self.meter.log:
            if entry["outcome"] == "pending":
                self.meter.settle(entry, delivered=False)
        for core in self.managers.values():
            core.collector.flush()
        self.meter.check_conservation()
        return self._metrics()

    def _tick_interval(self) -> int:
        return max(100, min(5000, self.scenario.period_ms // 2))

    # ------------------------------------------------------------------
    # metrics document

    def _metrics(self) -> dict:
        s = self.scenario
        mgrs, agents = set(self.manager_names), set(self.agent_names)
        steady_start = max(self.acks) if self.acks else 0
        m2a = self.meter.direction(mgrs, agents)
        a2m = self.meter.direction(agents, mgrs)
        steady_m2a = self.meter.direction(mgrs, agents, since=steady_start)
        steady_m2a_nosync = self.meter.direction(
            mgrs, agents, exclude_kinds=("sync-probe",), since=steady_start)

        links = {}
        for (src, dst), link in sorted(self.meter.links.items()):
            links[f"{src}->{dst}"] = {
                "bytes": link["bytes"], "messages": link["messages"],
                "connections": link["connections"], "sent": link["sent"],
                "delivered": link["delivered"], "dropped": link["dropped"],
                "by_kind": dict(sorted(link["by_kind"].items())),
            }

        core = self.managers[MANAGER]
        events = [
            {"id": e.id, "source": e.source, "kind": e.kind,
             "severity": e.severity, "t": e.timestamp, "masked-by": e.masked_by}
            for m in self.manager_names
            for e in self.managers[m].correlator.events
        ]

        metrics = {
            "scenario": s.to_record(),
            "traffic": {
                "links": links,
                "manager_to_agent": m2a,
                "agent_to_manager": a2m,
                "series": {
                    "manager_to_agent": {
                        str(k): v for k, v in
                        sorted(self.meter.series(mgrs, agents).items())},
                    "agent_to_manager": {
                        str(k): v for k, v in
                        sorted(self.meter.series(agents, mgrs).items())},
                },
                "steady": {
                    "start": steady_start,
                    "manager_to_agent": steady_m2a,
                    "manager_to_agent_excl_sync": steady_m2a_nosync,
                },
            },
            "collector": {
                m: {
                    "received": dict(sorted(self.managers[m].collector.received.items())),
                    "lost": dict(sorted(self.managers[m].collector.lost.items())),
                    "duplicates": dict(sorted(self.managers[m].collector.duplicates.items())),
                    "unknown_dropped": self.managers[m].collector.unknown_dropped,
                } for m in self.manager_names
            },
            "events": events,
            "recovery": dict(sorted(getattr(self, "_recovered", {}).items())),
        }
        if s.model == "push":
            window = (0, s.duration_ms)
            report = core.report(self.agent_names, [str(o) for o in self.oids],
                                 window, s.period_ms)
            metrics["availability"] = report["availability"]
            if len(self.manager_names) > 1:
                standby = self.managers[STANDBY]
                rep_b = standby.report(self.agent_names,
                                       [str(o) for o in self.oids],
                                       window, s.period_ms)
                metrics["standby_availability"] = rep_b["availability"]
        else:
            cycles = s.duration_ms // s.period_ms + 1  # t = 0 .. duration
            expected = s.agents * s.variables * cycles
            stored = len(core.repo.list("pushed-data"))
            metrics["availability"] = min(1.0, stored / expected) if expected else 0.0
        return metrics


def render_metrics(metrics: dict) -> str:
    """Canonical text form: stable key order, so equal runs diff equal."""
    return json.dumps(metrics, sort_keys=True, indent=1) + "\n"


def run_scenario(scenario: Scenario, workdir: str | Path) -> dict:
    return Simulation(scenario, workdir).run()


def hot_standby_scenario(workdir: str | Path, seed: int = 7,
                         agents: int = 3, variables: int = 2,
                         period_ms: int = 1000,
                         duration_ms: int = 30_000) -> dict:
    """Fan-out to two managers over lossless stream links; the primary is
    killed halfway.  Returns metrics plus the stream-equivalence verdict
    and a pull-model control comparison (2 managers vs 1)."""
    base = dict(seed=seed, agents=agents, variables=variables,
                period_ms=period_ms, duration_ms=duration_ms)
    workdir = Path(workdir)
    scenario = Scenario(model="push", transport=STREAM, managers=2, **base)
    scenario.faults = [("kill", MANAGER, duration_ms // 2)]
    sim = Simulation(scenario, workdir / "push-fanout")
    metrics = sim.run()

    kill_t = duration_ms // 2
    pre_a = [r for r in sim.streams[MANAGER]]
    pre_b_cut = []
    seen_a = {(r[0], r[2]) for r in pre_a}
    for r in sim.streams[STANDBY]:
        if (r[0], r[2]) in seen_a:
            pre_b_cut.append(r)
    identical = pre_a == pre_b_cut
    # primary's samples (up to the kill, minus in-flight) all present at standby
    seen_b = {(r[0], r[2]) for r in sim.streams[STANDBY]}
    superset = all(k in seen_b for k in seen_a)

    pull1 = run_scenario(Scenario(model="pull", managers=1, **base),
                         workdir / "pull-1mgr")
    pull2 = run_scenario(Scenario(model="pull", managers=2, **base),
                         workdir / "pull-2mgr")

    return {
        "metrics": metrics,
        "verdict": {
            "streams_identical_pre_kill": identical,
            "standby_superset_of_primary": superset,
            "standby_availability": metrics["standby_availability"],
        },
        "pull_control": {
            "one_manager_m2a_bytes": pull1["traffic"]["manager_to_agent"]["bytes"],
            "two_manager_m2a_bytes": pull2["traffic"]["manager_to_agent"]["bytes"],
        },
    }
