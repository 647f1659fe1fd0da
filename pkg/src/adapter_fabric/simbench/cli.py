"""Command line front end for the mock backends and the load generator.

    simbench backend --config backends.json [--register-to http://gw]
    simbench load --scenario scenario.json --target http://gw --mode gateway --token lf-...
    simbench overhead --direct direct.json --via via.json
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys

from .backend import MockBackendConfig, serve_backends
from .loadgen import (
    DirectTarget,
    GatewayTarget,
    LoadScenario,
    MetricsReport,
    dump_report,
    gateway_overhead,
    latencies_to_csv,
    run_load_sync,
)


def _load_json(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def cmd_backend(args) -> int:
    doc = _load_json(args.config)
    docs = doc if isinstance(doc, list) else [doc]
    configs = [MockBackendConfig.from_json(d) for d in docs]
    try:
        asyncio.run(
            serve_backends(
                configs,
                host=args.host,
                register_to=args.register_to,
                heartbeat_interval_s=args.heartbeat_interval,
            )
        )
    except KeyboardInterrupt:
        pass
    return 0


def cmd_load(args) -> int:
    scenario = LoadScenario.from_json(_load_json(args.scenario))
    if args.mode == "gateway":
        if not args.token:
            print("--token is required for gateway mode", file=sys.stderr)
            return 2
        target = GatewayTarget(args.target, args.token)
    else:
        target = DirectTarget(args.target)
    report = run_load_sync(scenario, target)
    text = dump_report(report, args.out)
    print(text)
    print(report.summary_text(), file=sys.stderr)
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write(latencies_to_csv(report))
    return 0


def cmd_overhead(args) -> int:
    direct = MetricsReport.from_json(_load_json(args.direct))
    via = MetricsReport.from_json(_load_json(args.via))
    print(json.dumps(gateway_overhead(direct, via), indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="simbench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_backend = sub.add_parser("backend", help="run one or more mock backends")
    p_backend.add_argument("--config", required=True, help="JSON config (object or array)")
    p_backend.add_argument("--host", default="127.0.0.1")
    p_backend.add_argument("--register-to", default=None, help="gateway URL for discovery")
    p_backend.add_argument("--heartbeat-interval", type=float, default=5.0)
    p_backend.set_defaults(func=cmd_backend)

    p_load = sub.add_parser("load", help="run a closed-loop load scenario")
    p_load.add_argument("--scenario", required=True)
    p_load.add_argument("--target", required=True, help="base URL of gateway or backend")
    p_load.add_argument("--mode", choices=("gateway", "direct"), default="gateway")
    p_load.add_argument("--token", default=None, help="API token for gateway mode")
    p_load.add_argument("--out", default=None, help="write the JSON report here")
    p_load.add_argument("--csv", default=None, help="write raw latency samples as CSV")
    p_load.set_defaults(func=cmd_load)

    p_overhead = sub.add_parser("overhead", help="compare two reports (gateway minus direct)")
    p_overhead.add_argument("--direct", required=True)
    p_overhead.add_argument("--via", required=True)
    p_overhead.set_defaults(func=cmd_overhead)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
