"""`forge` — thin HTTP client over the forge service.

Every subcommand serializes its arguments into the matching endpoint's
request body. By default the service runs in process (no socket); pass
`--server URL` to talk to a remote instance started with `forge serve`.
Defaults may be supplied as a JSON object in the file named by the
FORGE_CONFIG environment variable, keyed by subcommand.

Exit codes: 0 success, 1 failure (a machine-readable error record is printed
to stderr), 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import httpx


def _post(server: str, path: str, body: dict) -> httpx.Response:
    """POST to a remote service, or to the in-process app when no server."""
    if server:
        with httpx.Client(base_url=server, timeout=600.0) as client:
            return client.post(path, json=body)

    import asyncio

    from .service import app

    async def go() -> httpx.Response:
        transport = httpx.ASGITransport(app=app)
        async with httpx.AsyncClient(transport=transport, timeout=None,
                                     base_url="http://forge.internal") as client:
            return await client.post(path, json=body)

    return asyncio.run(go())


def _load_defaults() -> dict:
    path = os.environ.get("FORGE_CONFIG")
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            defaults = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SystemExit(f"forge: cannot read FORGE_CONFIG {path!r}: {exc}")
    if not isinstance(defaults, dict):
        raise SystemExit(f"forge: FORGE_CONFIG {path!r} must hold a JSON object")
    return defaults


def _floats(text: str) -> list:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list:
    return [int(x) for x in text.split(",") if x.strip()]


def _bools(text: str) -> list:
    return [bool(int(x)) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="forge",
        description="Deterministic embodied-task benchmark forge.")
    parser.add_argument("--server", default=None,
                        help="base URL of a running forge service "
                             "(default: run the service in process)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate trajectories")
    p.add_argument("--n-traj", type=int, default=10)
    p.add_argument("--max-subgoals", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--model", default="qwen2.5-vl")
    p.add_argument("--max-objects", type=int, default=14)

    p = sub.add_parser("qa", help="synthesize question/answer instances")
    p.add_argument("--traj-dir", required=True)
    p.add_argument("--target-count", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-file", required=True)
    p.add_argument("--validators", default="oracle",
                   help="comma-separated validator names")

    p = sub.add_parser("haystack", help="build token-budgeted context grids")
    p.add_argument("--traj-dir", required=True)
    p.add_argument("--qa-file", required=True)
    p.add_argument("--lengths", type=_ints, required=True,
                   help="comma-separated token budgets")
    p.add_argument("--depths", type=_floats, required=True,
                   help="comma-separated depth percentages")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--model", default="qwen2.5-vl")
    p.add_argument("--emit-contexts", action="store_true")

    p = sub.add_parser("eval", help="evaluate an agent on trajectories")
    p.add_argument("--traj-dir", required=True)
    p.add_argument("--agent", default="oracle",
                   help="'oracle', 'random', or a shell command speaking the "
                        "stdio protocol")
    p.add_argument("--mode", default="interleaved",
                   choices=["interleaved", "memoryText", "memoryImage"])
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--final", action="store_true",
                   help="evaluate the held-out final task instead of "
                        "plan-level episodes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--timeout", type=float, default=30.0)

    p = sub.add_parser("ringcheck",
                       help="verify sharded attention against the dense oracle")
    p.add_argument("--lengths", type=_ints, default=None)
    p.add_argument("--dims", type=_ints, default=None)
    p.add_argument("--workers", type=_ints, default=None)
    p.add_argument("--causal", type=_bools, default=None,
                   help="comma-separated 0/1 flags")
    p.add_argument("--seeds", type=_ints, default=None)
    p.add_argument("--tolerance", type=float, default=1e-5)

    p = sub.add_parser("rope", help="inspect a position-scaling schedule")
    p.add_argument("--method", required=True,
                   choices=["none", "linear", "dynamic", "yarn", "longrope"])
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--base", type=float, default=10_000.0)
    p.add_argument("--train-len", type=int, default=4096)
    p.add_argument("--seq-len", type=int, default=None)
    p.add_argument("--positions", type=_floats, default=None)

    p = sub.add_parser("stats", help="summarize a trajectory dataset")
    p.add_argument("--traj-dir", required=True)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8642)
    return parser


def _request_body(args: argparse.Namespace) -> tuple:
    """(endpoint path, request body) for one parsed subcommand."""
    c = args.command
    if c == "gen":
        return "/gen", {"nTraj": args.n_traj, "maxSubgoals": args.max_subgoals,
                        "seed": args.seed, "outDir": args.out_dir,
                        "model": args.model, "maxObjects": args.max_objects}
    if c == "qa":
        return "/qa", {"trajDir": args.traj_dir,
                       "targetCount": args.target_count, "seed": args.seed,
                       "outFile": args.out_file,
                       "validators": [v for v in args.validators.split(",") if v]}
    if c == "haystack":
        return "/haystack", {"trajDir": args.traj_dir, "qaFile": args.qa_file,
                             "lengths": args.lengths, "depths": args.depths,
                             "outDir": args.out_dir, "model": args.model,
                             "emitContexts": args.emit_contexts}
    if c == "eval":
        return "/eval", {"trajDir": args.traj_dir, "agent": args.agent,
                         "mode": args.mode, "topK": args.top_k,
                         "final": args.final, "seed": args.seed,
                         "timeout": args.timeout}
    if c == "ringcheck":
        return "/ringcheck", {"lengths": args.lengths, "dims": args.dims,
                              "workers": args.workers, "causal": args.causal,
                              "seeds": args.seeds,
                              "tolerance": args.tolerance}
    if c == "rope":
        return "/rope", {"method": args.method, "scale": args.scale,
                         "dim": args.dim, "base": args.base,
                         "trainLen": args.train_len, "seqLen": args.seq_len,
                         "positions": args.positions}
    if c == "stats":
        return "/stats", {"trajDir": args.traj_dir}
    raise SystemExit(f"forge: unknown command {c!r}")


def main(argv: list = None) -> int:
    parser = build_parser()
    defaults = _load_defaults()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)

    if args.command == "serve":
        import uvicorn
        from .service import app
        uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
        return 0

    for key, value in defaults.get(args.command, {}).items():
        attr = key.replace("-", "_")
        if hasattr(args, attr) and f"--{key}" not in argv:
            setattr(args, attr, value)

    path, body = _request_body(args)
    body = {k: v for k, v in body.items() if v is not None}
    try:
        response = _post(args.server, path, body)
    except httpx.HTTPError as exc:
        print(json.dumps({"error": "TransportError", "detail": str(exc)}),
              file=sys.stderr)
        return 1
    payload = response.json()
    if response.status_code != 200:
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        return 1
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
