"""Deterministic long-horizon embodied-task benchmark forge.

Symbolic household world, search-based planner, chained trajectory
generation, replay-grounded QA synthesis, token-budgeted haystack contexts,
an online agent-evaluation harness, and numerically verified long-context
utilities — exposed as a library, an HTTP service, and the `forge` CLI.
"""

__version__ = "0.1.0"
