"""SDK for agents speaking the forge evaluation wire protocol.

The harness drives agents over line-delimited JSON (init / observe / act /
done). This package provides the message plumbing (`protocol`), a state
machine that enforces the protocol from the agent's side (`session`), and
reference policies (`policies`) exposed through the `forge-agent` console
script. It talks to the evaluator purely over the wire; it never imports the
evaluator's internals.
"""

__version__ = "0.1.0"

from .protocol import PROTOCOL_VERSION, ProtocolError, VersionError  # noqa: F401
from .session import AgentSession  # noqa: F401
