"""Shared exception types."""


class ForgeError(Exception):
    """Base class for all forge errors."""


class ConfigError(ForgeError):
    """Invalid scene/generation/rope configuration."""


class SpecError(ForgeError):
    """A haystack/context spec cannot be satisfied (e.g. budget below one step)."""


class PlanError(ForgeError):
    """Invalid ring-attention plan (e.g. worker count does not divide L)."""


class InputError(ForgeError):
    """Numerically invalid input (NaN/Inf)."""


class Unreachable(ForgeError):
    """No plan exists for the requested goal."""


class GiveUp(ForgeError):
    """Retry budget exhausted while sampling; the scene is likely unsatisfiable."""


class ProtocolError(ForgeError):
    """Malformed, missing, or late message on the agent wire protocol."""
