"""`forge-agent` — serve a reference policy over stdio.

The evaluator launches this command and speaks the line-delimited JSON
protocol on the child's stdin/stdout. Protocol violations and version
mismatches terminate the process with exit code 1 after emitting an error
message, so the evaluator's timeout never has to fire.
"""
from __future__ import annotations

import argparse
import sys

from .policies import OraclePolicy, RandomPolicy, ScriptedPolicy
from .protocol import ProtocolError
from .session import AgentSession


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="forge-agent",
        description="Reference agent speaking the forge evaluation protocol.")
    parser.add_argument("--policy", required=True,
                        choices=["oracle", "random", "scripted"])
    parser.add_argument("--trajectory",
                        help="trajectory file to replay (oracle policy)")
    parser.add_argument("--script",
                        help="JSON action-list file (scripted policy)")
    parser.add_argument("--seed", type=int, default=0,
                        help="randomness seed (random policy)")
    parser.add_argument("--strict-context", action="store_true",
                        help="fail when the evaluator's context accounting "
                             "disagrees with the local mirror")
    return parser


def make_policy(args: argparse.Namespace):
    if args.policy == "oracle":
        if not args.trajectory:
            raise SystemExit("forge-agent: --policy oracle needs --trajectory")
        return OraclePolicy(args.trajectory)
    if args.policy == "scripted":
        if not args.script:
            raise SystemExit("forge-agent: --policy scripted needs --script")
        return ScriptedPolicy(args.script)
    return RandomPolicy(seed=args.seed)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        policy = make_policy(args)
    except (ProtocolError, OSError) as exc:
        print(f"forge-agent: {exc}", file=sys.stderr)
        return 1
    session = AgentSession(policy, sys.stdin, sys.stdout,
                           strict_context=args.strict_context)
    try:
        while True:  # one episode per init/done exchange; EOF ends service
            session.run()
    except ProtocolError as exc:
        if "stream closed" in str(exc) and session.state.final_report is not None:
            return 0  # normal shutdown after a completed episode
        print(f"forge-agent: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
