"""Command line interface.

`trackgrasp run` is a thin client over the HTTP service: by default it mounts
the FastAPI app in process through an ASGI transport, and `--server` points
it at a remote instance instead. Formatting happens client-side from the
full-precision rows, so output bytes do not depend on the transport.
"""

from __future__ import annotations

import argparse
import json
import sys

import httpx

from .config import ConfigError, load_config
from .harness import SCENARIO_NAMES, MetricsRow, MetricsTable, emit_results


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trackgrasp")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an evaluation scenario")
    run.add_argument("--scenario", required=True, choices=SCENARIO_NAMES)
    run.add_argument("--episodes", type=int, required=True)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--no-ekf", action="store_true", help="freeze-and-hold baseline tracker")
    run.add_argument("--stage", type=int, default=None, help="reward stage 0..5")
    run.add_argument("--config", default=None, help="YAML or JSON config overrides")
    run.add_argument("--out", default=None, help="write results here instead of stdout")
    run.add_argument("--format", choices=("csv", "json"), default="csv")
    run.add_argument("--trace", default=None, metavar="DIR", help="write per-episode JSONL traces")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--variants", default=None, help="comma-separated variant filter")
    run.add_argument("--server", default=None, metavar="URL", help="use a remote service")

    serve = sub.add_parser("serve", help="serve the HTTP API")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def _client(server: str | None) -> httpx.Client:
    if server is not None:
        return httpx.Client(base_url=server, timeout=600.0)
    from .service import create_app

    transport = httpx.ASGITransport(app=create_app())
    return httpx.Client(transport=transport, base_url="http://trackgrasp.local", timeout=None)


def _cmd_run(args: argparse.Namespace) -> int:
    overrides = None
    if args.config is not None:
        try:
            cfg = load_config(args.config)
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        from .config import config_to_dict

        overrides = config_to_dict(cfg)
    body = {
        "scenario": args.scenario,
        "episodes": args.episodes,
        "seed": args.seed,
        "no_ekf": args.no_ekf,
        "stage": args.stage,
        "workers": args.workers,
        "variants": args.variants.split(",") if args.variants else None,
        "trace_dir": args.trace,
        "config": overrides,
    }
    try:
        with _client(args.server) as client:
            resp = client.post("/run", json=body)
    except httpx.HTTPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if resp.status_code != 200:
        try:
            detail = resp.json().get("detail", resp.text)
        except json.JSONDecodeError:
            detail = resp.text
        print(f"error: {detail}", file=sys.stderr)
        return 1
    rows = tuple(MetricsRow(**r) for r in resp.json()["rows"])
    text = emit_results(MetricsTable(rows=rows), fmt=args.format)
    if args.out:
        try:
            with open(args.out, "w") as fh:
                fh.write(text)
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
    else:
        sys.stdout.write(text)
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    uvicorn.run("trackgrasp.service:app", host=args.host, port=args.port)
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    return _cmd_serve(args)


if __name__ == "__main__":
    sys.exit(main())
