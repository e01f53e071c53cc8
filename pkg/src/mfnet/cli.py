"""Command line front end.

Subcommands:
  agent run        start an agent daemon from a config file
  manager run      start the manager service from a config file
  subscribe        install a push subscription through the manager API
  poll             one-shot pull of a variable straight from an agent
  report           time-series report from the manager
  simulate         run a scenario file and write the metrics document
  dump             print a repository store in text form

argparse handles usage errors (exit status 2).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import urllib.request

from mfnet.errors import MfnetError
from mfnet.oid import Oid
from mfnet.repository import Repository
from mfnet.subscription import Endpoint, Selection, Subscription, TRANSPORTS
from mfnet.wire import CONTENT_TYPE, decode_message, encode_message


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfnet",
                                     description="network management platform")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    agent = sub.add_parser("agent", help="agent daemon")
    agent_sub = agent.add_subparsers(dest="agent_command", required=True)
    agent_run = agent_sub.add_parser("run", help="start the daemon")
    agent_run.add_argument("--config", required=True)

    manager = sub.add_parser("manager", help="manager service")
    manager_sub = manager.add_subparsers(dest="manager_command", required=True)
    manager_run = manager_sub.add_parser("run", help="start the service")
    manager_run.add_argument("--config", required=True)

    subscribe = sub.add_parser("subscribe", help="install a push subscription")
    subscribe.add_argument("--manager", default="http://127.0.0.1:8800")
    subscribe.add_argument("--id", help="subscription id (default derived)")
    subscribe.add_argument("--agent", required=True, help="target device-id")
    subscribe.add_argument("--oid", action="append", required=True)
    subscribe.add_argument("--period", type=int, required=True, metavar="MS")
    subscribe.add_argument("--endpoint", required=True, metavar="HOST:PORT")
    subscribe.add_argument("--transport", choices=TRANSPORTS, default="stream")
    subscribe.add_argument("--filter", action="append", default=[],
                           help="notification name to accept")
    subscribe.add_argument("--volatile", action="store_true",
                           help="agent must not persist this subscription")

    poll = sub.add_parser("poll", help="pull one variable from an agent")
    poll.add_argument("--agent", required=True, metavar="HOST:PORT")
    poll.add_argument("--oid", required=True)
    poll.add_argument("--table", action="store_true",
                      help="treat the oid as a table and fetch all rows")

    report = sub.add_parser("report", help="time-series report")
    report.add_argument("--manager", default="http://127.0.0.1:8800")
    report.add_argument("--from", dest="t0", type=int, required=True)
    report.add_argument("--to", dest="t1", type=int, required=True)
    report.add_argument("--device", action="append", required=True)
    report.add_argument("--oid", action="append", required=True)
    report.add_argument("--resolution", type=int, default=1000)

    simulate = sub.add_parser("simulate", help="run a fleet scenario")
    simulate.add_argument("--scenario", required=True)
    simulate.add_argument("--out", required=True, metavar="METRICS.json")
    simulate.add_argument("--workdir", default=None,
                          help="repository root (default: temp dir)")

    dump = sub.add_parser("dump", help="print a repository store")
    dump.add_argument("--root", required=True, help="repository root directory")
    dump.add_argument("--store", required=True)
    return parser


def _cmd_subscribe(args) -> int:
    host, _, port = args.endpoint.rpartition(":")
    sub = Subscription(
        id=args.id or f"sub-{args.agent}",
        agent=args.agent,
        endpoints=[Endpoint(host, int(port), args.transport)],
        selections=[Selection(Oid.parse(o), args.period) for o in args.oid],
        notification_filter=frozenset(args.filter),
        durable=not args.volatile,
    )
    sub.validate()
    body = json.dumps({"document": sub.to_text()}).encode()
    req = urllib.request.Request(
        f"{args.manager}/api/subscriptions", data=body, method="POST",
        headers={"Content-Type": "application/json"})
    with urllib.request.urlopen(req) as resp:
        print(resp.read().decode())
    return 0


def _cmd_poll(args) -> int:
    kind = "table" if args.table else "mib"
    url = f"http://{args.agent}/mgmt/{kind}/{args.oid}"
    with urllib.request.urlopen(url) as resp:
        msg = decode_message(resp.read())
    if msg.status != "ok":
        print(f"error: {msg.status}", file=sys.stderr)
        return 1
    if msg.rows is not None:
        for index, cells in msg.rows:
            for oid, value in cells:
                print(f"{oid} [{index}] {value.tag} {value.value}")
    else:
        for oid, value in msg.bindings:
            print(f"{oid} {value.tag} {value.value}")
    return 0


def _cmd_report(args) -> int:
    query = (f"from={args.t0}&to={args.t1}"
             f"&device={','.join(args.device)}&oid={','.join(args.oid)}"
             f"&resolution={args.resolution}")
    with urllib.request.urlopen(f"{args.manager}/api/report?{query}") as resp:
        print(json.dumps(json.load(resp), indent=1, sort_keys=True))
    return 0


def _cmd_simulate(args) -> int:
    import tempfile

    from mfnet.simnet import Scenario, render_metrics, run_scenario

    scenario = Scenario.from_file(args.scenario)
    if args.workdir is not None:
        metrics = run_scenario(scenario, args.workdir)
    else:
        with tempfile.TemporaryDirectory(prefix="mfnet-sim-") as tmp:
            metrics = run_scenario(scenario, tmp)
    with open(args.out, "w") as f:
        f.write(render_metrics(metrics))
    print(f"wrote {args.out}: availability={metrics.get('availability')}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        if args.command == "agent":
            from mfnet.agent import AgentConfig
            from mfnet.realnet import AgentServer

            AgentServer(AgentConfig.from_file(args.config)).run_forever()
            return 0
        if args.command == "manager":
            from mfnet.realnet import ManagerConfig, ManagerServer

            ManagerServer(ManagerConfig.from_file(args.config)).run_forever()
            return 0
        if args.command == "subscribe":
            return _cmd_subscribe(args)
        if args.command == "poll":
            return _cmd_poll(args)
        if args.command == "report":
            return _cmd_report(args)
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "dump":
            sys.stdout.write(Repository(args.root).dump_text(args.store))
            return 0
    except MfnetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
