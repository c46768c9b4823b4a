"""Line-delimited JSON message layer for the evaluation wire protocol.

Messages are single-line JSON objects with a mandatory "type" field. The
harness sends init / observe / done; the agent answers ready / act. A
truncated stream, malformed JSON, or a message without a type raises
ProtocolError immediately — the agent must fail fast rather than hang.
"""
from __future__ import annotations

import json

PROTOCOL_VERSION = "1.0"

HARNESS_TYPES = ("init", "observe", "done")
AGENT_TYPES = ("ready", "act", "ok", "error")


class ProtocolError(Exception):
    """Malformed, missing, or out-of-order message on the wire."""


class VersionError(ProtocolError):
    """The harness speaks an incompatible protocol major version."""


def major(version: str) -> str:
    return str(version).split(".", 1)[0]


def check_version(version) -> None:
    if not isinstance(version, str) or not version:
        raise VersionError(f"missing protocol version (got {version!r})")
    if major(version) != major(PROTOCOL_VERSION):
        raise VersionError(
            f"incompatible protocol version {version!r}; this SDK speaks "
            f"{PROTOCOL_VERSION} (major {major(PROTOCOL_VERSION)})")


def read_message(stream) -> dict:
    """Read one message; raises ProtocolError on EOF or malformed input."""
    line = stream.readline()
    if line == "":
        raise ProtocolError("input stream closed mid-conversation")
    line = line.strip()
    if not line:
        raise ProtocolError("blank line where a message was expected")
    try:
        message = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"malformed message: {line[:200]!r}") from exc
    if not isinstance(message, dict) or "type" not in message:
        raise ProtocolError(f"message without a type: {line[:200]!r}")
    if message["type"] not in HARNESS_TYPES:
        raise ProtocolError(f"unexpected message type {message['type']!r}")
    return message


def write_message(stream, message: dict) -> None:
    stream.write(json.dumps(message) + "\n")
    stream.flush()
