"""Command-line front end.

The CLI is a thin client of the HTTP service: it loads the YAML config,
applies flag overrides (flags > environment > file), posts the merged
config to the service — in-process by default, or to a remote server
via --server — then writes the returned artifacts atomically and prints
the one-line summaries.

Exit codes: 0 success, 2 configuration error, 3 numeric/runtime error,
4 I/O error.
"""

from __future__ import annotations

import argparse
import asyncio
import os
import sys

import httpx
import yaml

from .artifacts import write_text
from .config import ConfigError
from .harness import resolve_workers

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

COMMANDS = ("run", "sweep", "measure", "greedy", "sameclass", "tune")


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", required=True, help="YAML configuration file")
    sub.add_argument("--out", default=None, help="output directory (default: output.dir or .)")
    sub.add_argument("--server", default=None,
                     help="base URL of a running service; default executes in-process")
    sub.add_argument("--seeds", default=None,
                     help="comma-separated seed list, overrides the config")
    sub.add_argument("--lr", type=float, default=None,
                     help="override engine.gamma")
    sub.add_argument("--workers", type=int, default=None,
                     help="worker count (flag > SHUFFLELAB_WORKERS env > config file)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shufflelab",
        description="Permutation-based gradient descent laboratory",
    )
    subs = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("run", "execute one configured run per seed, writing trace and epoch files"),
        ("sweep", "two-level vs standard shuffling sweep over (sigma_top, m)"),
        ("measure", "phi curve and order-quality summary for an order"),
        ("greedy", "greedy order chooser vs reshuffling on the signed example"),
        ("sameclass", "same-class vs standard batching comparison"),
        ("tune", "learning-rate grid search by median steps-to-target"),
    ):
        sub = subs.add_parser(name, help=text)
        _add_common(sub)
        if name == "measure":
            sub.add_argument("--order-file", default=None,
                             help="order file: one 1-based component index per line")
    serve = subs.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def _load_yaml(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("configuration root must be a mapping of sections")
    return data


def _parse_seeds(text: str) -> list[int]:
    try:
        seeds = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"--seeds must be comma-separated integers, got {text!r}") from None
    if not seeds:
        raise ConfigError("--seeds is empty")
    return seeds


def _merged_config(args) -> dict:
    data = _load_yaml(args.config)
    if args.seeds is not None:
        data["seeds"] = _parse_seeds(args.seeds)
    if args.lr is not None:
        engine = data.setdefault("engine", {})
        if not isinstance(engine, dict):
            raise ConfigError("'engine' section must be a mapping")
        engine["gamma"] = args.lr
    data["workers"] = resolve_workers(args.workers, data.get("workers"))
    return data


def _read_order_file(path: str) -> list[int]:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    entries = []
    for ln, raw in enumerate(text.splitlines(), start=1):
        token = raw.strip()
        if not token:
            continue
        try:
            entries.append(int(token))
        except ValueError:
            raise ConfigError(
                f"{path} line {ln}: {token!r} is not an integer index"
            ) from None
    if not entries:
        raise ConfigError(f"{path} contains no indices")
    return entries


async def _post(args, payload: dict) -> httpx.Response:
    url = f"/v1/{args.command}"
    if args.server is not None:
        async with httpx.AsyncClient(base_url=args.server, timeout=None) as client:
            return await client.post(url, json=payload)
    from .service import create_app

    transport = httpx.ASGITransport(app=create_app())
    async with httpx.AsyncClient(
        transport=transport, base_url="http://shufflelab.internal", timeout=None
    ) as client:
        return await client.post(url, json=payload)


def _handle_response(resp: httpx.Response, out_dir: str) -> int:
    if resp.status_code == 200:
        body = resp.json()
        for name, content in sorted(body["artifacts"].items()):
            write_text(os.path.join(out_dir, name), content)
        for line in body["summary_lines"]:
            print(line)
        return EXIT_OK
    if resp.status_code == 422:
        print(f"configuration rejected: {resp.text}", file=sys.stderr)
        return EXIT_CONFIG
    if resp.status_code == 400:
        body = resp.json()
        print(f"error ({body.get('category', 'numeric')}): {body.get('detail')}",
              file=sys.stderr)
        return EXIT_CONFIG if body.get("category") == "config" else EXIT_NUMERIC
    print(f"server error {resp.status_code}: {resp.text}", file=sys.stderr)
    return EXIT_NUMERIC


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "serve":
        import uvicorn

        from .service import create_app

        uvicorn.run(create_app(), host=args.host, port=args.port)
        return EXIT_OK

    try:
        payload: dict = {"config": _merged_config(args)}
        if args.command == "measure" and args.order_file is not None:
            payload["order"] = _read_order_file(args.order_file)
        out_dir = args.out
        if out_dir is None:
            output = payload["config"].get("output", {})
            out_dir = output.get("dir", ".") if isinstance(output, dict) else "."
    except ConfigError as err:
        print(f"error (config): {err}", file=sys.stderr)
        return EXIT_CONFIG
    except yaml.YAMLError as err:
        print(f"error (config): could not parse {args.config}: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as err:
        print(f"error (io): {err}", file=sys.stderr)
        return EXIT_IO

    try:
        resp = asyncio.run(_post(args, payload))
    except httpx.HTTPError as err:
        print(f"error (io): cannot reach service: {err}", file=sys.stderr)
        return EXIT_IO

    try:
        return _handle_response(resp, out_dir)
    except OSError as err:
        print(f"error (io): {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
