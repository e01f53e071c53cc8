"""Socket-backed deployment of the agent daemon and manager service.

The agent serves its management gateway over HTTP on the configured
listen port and accepts raw framed streams on listen-port + 1 (the
manager connects there and sends a subscribe-attach frame to bind a
subscription's stream endpoint).  The manager serves the operator API
under /api/ and the push ingress at /push/report.

Everything binds to loopback-friendly plain TCP; there is no TLS and no
authentication, which is fine for the lab deployments this targets.
"""

from __future__ import annotations

import json
import logging
import socket
import socketserver
import threading
import time
import urllib.error
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from mfnet.agent import Agent, AgentConfig, AgentTransport
from mfnet.errors import MfnetError
from mfnet.manager import ManagerCore
from mfnet.mib import VirtualMib, builtin_schema_path
from mfnet.repository import Repository
from mfnet.subscription import Endpoint, Subscription
from mfnet.wire import (
    CONTENT_TYPE,
    Deframer,
    ManagementMessage,
    decode_message,
    encode_message,
    frame,
)

log = logging.getLogger(__name__)

HTTP_TIMEOUT_S = 5.0


def _now_ms() -> int:
    return int(time.monotonic() * 1000)


def _post(url: str, payload: bytes, content_type: str = CONTENT_TYPE) -> bytes:
    req = urllib.request.Request(url, data=payload, method="POST",
                                 headers={"Content-Type": content_type})
    with urllib.request.urlopen(req, timeout=HTTP_TIMEOUT_S) as resp:
        return resp.read()


class _RealAgentTransport(AgentTransport):
    """Datagram -> UDP, http-push -> POST to the manager's push ingress."""

    def __init__(self):
        self._udp = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)

    def send_datagram(self, endpoint: Endpoint, msg: ManagementMessage):
        self._udp.sendto(encode_message(msg), (endpoint.host, endpoint.port))

    def http_post(self, endpoint: Endpoint, msg: ManagementMessage) -> bool:
        url = f"http://{endpoint.host}:{endpoint.port}/push/report"
        try:
            _post(url, encode_message(msg))
            return True
        except (urllib.error.URLError, OSError):
            return False


class AgentServer:
    """Runs one Agent behind an HTTP gateway, a raw stream listener and a
    background scheduler thread.  All agent access goes through one lock."""

    def __init__(self, config: AgentConfig, vmib: VirtualMib | None = None):
        if vmib is None:
            paths = config.schema_files or [
                builtin_schema_path("mib2-lite"),
                builtin_schema_path("vendor-sim"),
            ]
            vmib = VirtualMib.from_schema_files(paths)
        self.lock = threading.Lock()
        self.agent = Agent(config, vmib, clock=_now_ms,
                           transport=_RealAgentTransport())
        self._stop = threading.Event()
        self._httpd: ThreadingHTTPServer | None = None
        self._streamd: socketserver.ThreadingTCPServer | None = None

    # --- lifecycle ---

    def start(self):
        with self.lock:
            self.agent.recover_on_boot()
        self._httpd = ThreadingHTTPServer(
            ("", self.agent.config.listen_port), self._handler_class())
        self._streamd = _StreamServer(
            ("", self.agent.config.listen_port + 1), self)
        for srv in (self._httpd, self._streamd):
            threading.Thread(target=srv.serve_forever, daemon=True).start()
        threading.Thread(target=self._scheduler_loop, daemon=True).start()
        log.info("agent %s listening on %d (stream %d)",
                 self.agent.config.device_id, self.agent.config.listen_port,
                 self.agent.config.listen_port + 1)

    def stop(self):
        self._stop.set()
        for srv in (self._httpd, self._streamd):
            if srv is not None:
                srv.shutdown()
                srv.server_close()

    def run_forever(self):
        self.start()
        try:
            while not self._stop.wait(1.0):
                pass
        except KeyboardInterrupt:
            self.stop()

    def _scheduler_loop(self):
        while not self._stop.is_set():
            with self.lock:
                now = self.agent.clock()
                # keep the virtual device's dynamics moving with real time
                if now > self.agent.vmib.sim_time:
                    self.agent.vmib.tick(now - self.agent.vmib.sim_time)
                self.agent.run_due(now)
                due = self.agent.next_due()
            sleep_ms = 50 if due is None else max(5, min(due - now, 250))
            self._stop.wait(sleep_ms / 1000)

    # --- HTTP gateway ---

    def _handler_class(self):
        server = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, fmt, *args):
                log.debug("agent-http " + fmt, *args)

            def _reply(self, msg: ManagementMessage):
                payload = encode_message(msg)
                self.send_response(200)
                self.send_header("Content-Type", CONTENT_TYPE)
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def _serve(self, method):
                length = int(self.headers.get("Content-Length") or 0)
                body = self.rfile.read(length) if length else b""
                try:
                    with server.lock:
                        now = server.agent.clock()
                        if now > server.agent.vmib.sim_time:
                            server.agent.vmib.tick(now - server.agent.vmib.sim_time)
                        resp = server.agent.handle_http(method, self.path, body)
                except MfnetError as exc:
                    resp = ManagementMessage(kind="response", request_id=0,
                                             status=exc.code)
                self._reply(resp)

            def do_GET(self):
                self._serve("GET")

            def do_POST(self):
                self._serve("POST")

            def do_DELETE(self):
                self._serve("DELETE")

        return Handler


class _StreamServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, addr, agent_server: AgentServer):
        super().__init__(addr, _StreamHandler)
        self.agent_server = agent_server


class _StreamHandler(socketserver.BaseRequestHandler):
    """One manager stream connection: reads the subscribe-attach frame,
    then writes framed reports until the peer goes away."""

    def handle(self):
        server: AgentServer = self.server.agent_server
        deframer = Deframer()
        self.request.settimeout(HTTP_TIMEOUT_S)
        attach = None
        while attach is None:
            chunk = self.request.recv(4096)
            if not chunk:
                return
            for payload in deframer.feed(chunk):
                attach = decode_message(payload)
                break
        if attach.kind != "subscribe-attach":
            log.warning("stream peer sent %s before attach", attach.kind)
            return
        sock = self.request
        sock.settimeout(None)
        send_lock = threading.Lock()

        def sink(msg: ManagementMessage):
            try:
                with send_lock:
                    sock.sendall(frame(encode_message(msg)))
            except OSError as exc:
                raise MfnetError(f"stream send failed: {exc}") from exc

        endpoint = Endpoint(self.client_address[0], self.client_address[1], "stream")
        with server.lock:
            sub_id = attach.subscription_id
            st = server.agent.subs.get(sub_id)
            if st is not None:
                # bind to the subscription's declared stream endpoint
                for ep in st.sub.endpoints:
                    if ep.transport == "stream":
                        endpoint = ep
                        break
            server.agent.attach_stream(sub_id, endpoint, sink)
        # hold the connection; the sink owns all writes
        try:
            while self.request.recv(1):
                pass
        except OSError:
            pass
        with server.lock:
            server.agent.detach_stream(attach.subscription_id, endpoint)


# ----------------------------------------------------------------------
# manager service


class ManagerConfig:
    def __init__(self, listen_port: int = 8800, storage_path: str = "manager-store",
                 device_id: str = "manager"):
        self.listen_port = listen_port
        self.storage_path = storage_path
        self.device_id = device_id

    @classmethod
    def from_file(cls, path: str | Path) -> "ManagerConfig":
        kv = {}
        for raw in Path(path).read_text().splitlines():
            line = raw.split("#", 1)[0].strip()
            if line:
                k, _, v = line.partition("=")
                kv[k.strip()] = v.strip()
        return cls(
            listen_port=int(kv.get("listen-port", 8800)),
            storage_path=kv.get("storage-path", "manager-store"),
            device_id=kv.get("device-id", "manager"),
        )


class ManagerServer:
    """Operator-facing HTTP API plus the push ingress.  Agents are looked
    up in the topology store: one record per device with its host/port."""

    def __init__(self, config: ManagerConfig):
        self.config = config
        self.repo = Repository(config.storage_path)
        self.core = ManagerCore(self.repo, clock=_now_ms, device_id=config.device_id)
        self.core.subscribe_sender = self._send_subscribe
        self.lock = threading.Lock()
        self._stop = threading.Event()
        self._httpd: ThreadingHTTPServer | None = None
        with self.lock:
            for sub in self.repo.list("subscriptions"):
                self.core.collector.register(sub)

    def start(self):
        self._httpd = ThreadingHTTPServer(("", self.config.listen_port),
                                          self._handler_class())
        threading.Thread(target=self._httpd.serve_forever, daemon=True).start()
        threading.Thread(target=self._tick_loop, daemon=True).start()
        log.info("manager %s listening on %d", self.config.device_id,
                 self.config.listen_port)

    def stop(self):
        self._stop.set()
        if self._httpd is not None:
            self._httpd.shutdown()
            self._httpd.server_close()

    def run_forever(self):
        self.start()
        try:
            while not self._stop.wait(1.0):
                pass
        except KeyboardInterrupt:
            self.stop()

    def _tick_loop(self):
        while not self._stop.is_set():
            with self.lock:
                self.core.tick(_now_ms())
                interval = self.core.interpreter.tick_interval()
            self._stop.wait(interval / 1000)

    # --- agent plumbing ---

    def _agent_base(self, device_id: str) -> str:
        rec = self.repo.get("topology", device_id)
        return f"http://{rec['host']}:{rec['port']}"

    def _send_subscribe(self, sub: Subscription):
        msg = ManagementMessage(
            kind="subscribe-request", subscription_id=sub.id,
            device_id=self.config.device_id, document=sub.to_text(),
            timestamp=_now_ms(),
        )
        try:
            raw = _post(f"{self._agent_base(sub.agent)}/mgmt/subscriptions",
                        encode_message(msg))
            return decode_message(raw)
        except (urllib.error.URLError, OSError, MfnetError) as exc:
            log.warning("subscribe to %s failed: %s", sub.agent, exc)
            return None

    # --- HTTP handler ---

    def _handler_class(self):
        server = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, fmt, *args):
                log.debug("manager-http " + fmt, *args)

            def _json(self, obj, status=200):
                payload = json.dumps(obj, sort_keys=True).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Access-Control-Allow-Origin", "*")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def _body(self) -> bytes:
                length = int(self.headers.get("Content-Length") or 0)
                return self.rfile.read(length) if length else b""

            def do_POST(self):
                parts = [p for p in self.path.split("?")[0].split("/") if p]
                if parts == ["push", "report"]:
                    try:
                        msg = decode_message(self._body())
                    except MfnetError as exc:
                        self._json({"error": exc.code}, 400)
                        return
                    with server.lock:
                        server.core.ingress(msg, _now_ms())
                    self._json({"status": "ok"})
                elif parts == ["api", "subscriptions"]:
                    self._create_subscription()
                else:
                    self._json({"error": "not-found"}, 404)

            def _create_subscription(self):
                try:
                    doc = json.loads(self._body().decode())
                    sub = Subscription.from_text(doc["document"])
                    sub.validate()
                except (ValueError, KeyError, MfnetError) as exc:
                    self._json({"error": str(exc)}, 400)
                    return
                ack = server._send_subscribe(sub)
                if ack is None or ack.status != "ok":
                    reason = ack.document if ack is not None else "agent unreachable"
                    self._json({"error": "rejected", "reason": reason}, 502)
                    return
                with server.lock:
                    server.core.install_subscription(sub)
                self._json({"status": "ok", "sub-id": sub.id})

            def do_DELETE(self):
                parts = [p for p in self.path.split("/") if p]
                if len(parts) == 3 and parts[:2] == ["api", "subscriptions"]:
                    sub_id = parts[2]
                    with server.lock:
                        try:
                            sub = server.repo.get("subscriptions", sub_id)
                            server.repo.delete("subscriptions", sub_id)
                            server.core.collector.forget(sub_id)
                        except MfnetError:
                            self._json({"error": "no-such-subscription"}, 404)
                            return
                    try:
                        req = urllib.request.Request(
                            f"{server._agent_base(sub.agent)}/mgmt/subscriptions/"
                            f"{sub_id}", method="DELETE")
                        urllib.request.urlopen(req, timeout=HTTP_TIMEOUT_S).read()
                    except (urllib.error.URLError, OSError, MfnetError):
                        pass
                    self._json({"status": "ok"})
                else:
                    self._json({"error": "not-found"}, 404)

            def do_GET(self):
                path, _, query = self.path.partition("?")
                parts = [p for p in path.split("/") if p]
                params = {}
                for pair in query.split("&"):
                    if "=" in pair:
                        k, v = pair.split("=", 1)
                        params[k] = v
                if parts == ["api", "agents"]:
                    out = []
                    for key in server.repo.keys("topology"):
                        rec = server.repo.get("topology", key)
                        out.append({"device": key, **rec})
                    self._json(out)
                elif len(parts) == 4 and parts[:2] == ["api", "agents"] \
                        and parts[3] == "publish-index":
                    try:
                        raw = urllib.request.urlopen(
                            f"{server._agent_base(parts[2])}/mgmt/mibs",
                            timeout=HTTP_TIMEOUT_S).read()
                        msg = decode_message(raw)
                        self._json({"device": parts[2], "index": msg.document})
                    except (urllib.error.URLError, OSError, MfnetError) as exc:
                        self._json({"error": str(exc)}, 502)
                elif parts == ["api", "subscriptions"]:
                    subs = server.repo.list("subscriptions")
                    self._json([{"sub-id": s.id, "agent": s.agent,
                                 "document": s.to_text()} for s in subs])
                elif parts == ["api", "map"]:
                    with server.lock:
                        self._json({"map": server.core.registry.snapshot()})
                elif parts == ["api", "events"]:
                    with server.lock:
                        out = [{"id": e.id, "source": e.source, "kind": e.kind,
                                "severity": e.severity, "t": e.timestamp,
                                "masked-by": e.masked_by}
                               for e in server.core.correlator.events]
                    self._json(out)
                elif parts == ["api", "report"]:
                    try:
                        t0 = int(params["from"])
                        t1 = int(params["to"])
                        devices = params["device"].split(",")
                        oids = params["oid"].split(",")
                        resolution = int(params.get("resolution", 1000))
                    except (KeyError, ValueError):
                        self._json({"error": "bad-query"}, 400)
                        return
                    with server.lock:
                        self._json(server.core.report(devices, oids, (t0, t1),
                                                      resolution))
                elif parts == ["api", "stream"]:
                    self._stream()
                else:
                    self._json({"error": "not-found"}, 404)

            def _stream(self):
                """Newline-delimited JSON map feed, held open: snapshot
                first, then one line per delta."""
                self.send_response(200)
                self.send_header("Content-Type", "application/x-ndjson")
                self.send_header("Access-Control-Allow-Origin", "*")
                self.end_headers()
                done = threading.Event()

                def push(message: dict):
                    try:
                        self.wfile.write(json.dumps(message, sort_keys=True)
                                         .encode() + b"\n")
                        self.wfile.flush()
                    except OSError:
                        done.set()
                        raise

                with server.lock:
                    server.core.registry.register(push)
                try:
                    done.wait()
                finally:
                    with server.lock:
                        server.core.registry.unregister(push)

        return Handler
