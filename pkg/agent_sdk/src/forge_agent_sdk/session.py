"""Agent-side protocol state machine with a local context-size mirror.

AgentSession enforces strict alternation: the conversation must open with
init, every observe is answered with exactly one act, and done ends the
episode. The session also mirrors the evaluator's context accounting (goal
words plus a fixed per-step cost for every history step it can see) so
policies can cross-check the contextTokens the harness reports.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .protocol import ProtocolError, check_version, read_message, write_message

TOKENS_PER_IMAGE = 121
TEXT_TOKENS_PER_STEP = 8
STEP_COST = TOKENS_PER_IMAGE + TEXT_TOKENS_PER_STEP


@dataclass
class ContextMirror:
    """Local replica of the evaluator's interleaved context accounting."""
    goal_text: str = ""
    token_budget: int = 0
    history_steps: int = 0

    @property
    def goal_tokens(self) -> int:
        return len(self.goal_text.split())

    def expected_tokens(self) -> int:
        if self.token_budget <= 0:
            return self.goal_tokens + self.history_steps * STEP_COST
        max_steps = max((self.token_budget - self.goal_tokens) // STEP_COST, 0)
        # The evaluator always keeps at least its most recent 8 steps.
        kept = min(self.history_steps, max(max_steps, min(8, self.history_steps)))
        return self.goal_tokens + kept * STEP_COST


@dataclass
class EpisodeState:
    goal: str = ""
    mode: str = ""
    plan_key: object = None
    observed: int = 0
    acted: int = 0
    mirror: ContextMirror = field(default_factory=ContextMirror)
    reported_context: list = field(default_factory=list)
    final_report: dict = None


class AgentSession:
    """Drives one stdio conversation for a policy.

    The policy must provide `act(observation: dict, state: EpisodeState) ->
    str` and may provide `begin(init_message, state)` and `finish(report,
    state)`. `history_steps(plan_key)` on the policy, when present, feeds the
    context mirror; `strict_context=True` turns a mirror mismatch into a
    ProtocolError.
    """

    def __init__(self, policy, stdin, stdout, strict_context: bool = False):
        self._policy = policy
        self._in = stdin
        self._out = stdout
        self._strict = strict_context
        self.state = EpisodeState()
        self._initialized = False

    def _fail(self, exc: Exception) -> None:
        try:
            write_message(self._out, {"type": "error", "detail": str(exc)})
        except OSError:
            pass
        raise exc

    def run(self) -> EpisodeState:
        """Serve messages until done; raises ProtocolError on violations."""
        while True:
            message = read_message(self._in)
            kind = message["type"]
            if kind == "init":
                self._handle_init(message)
            elif kind == "observe":
                self._handle_observe(message)
            elif kind == "done":
                self.state.final_report = message.get("report")
                if hasattr(self._policy, "finish"):
                    self._policy.finish(message.get("report"), self.state)
                return self.state

    def _handle_init(self, message: dict) -> None:
        try:
            check_version(message.get("protocol"))
        except ProtocolError as exc:
            self._fail(exc)
        self._initialized = True
        st = self.state
        st.goal = str(message.get("goal", ""))
        st.mode = str(message.get("mode", ""))
        config = message.get("config") or {}
        st.plan_key = config.get("planKey")
        st.observed = st.acted = 0
        st.mirror = ContextMirror(goal_text=st.goal,
                                  token_budget=int(config.get("tokenBudget", 0)))
        if hasattr(self._policy, "history_steps"):
            st.mirror.history_steps = int(self._policy.history_steps(st.plan_key))
        if hasattr(self._policy, "begin"):
            self._policy.begin(message, st)
        write_message(self._out, {"type": "ready"})

    def _handle_observe(self, message: dict) -> None:
        st = self.state
        if not self._initialized:
            self._fail(ProtocolError("observe before init"))
        if st.observed != st.acted:
            self._fail(ProtocolError("observe/act alternation violated"))
        st.observed += 1
        reported = message.get("contextTokens")
        if reported is not None:
            st.reported_context.append(int(reported))
            if self._strict and st.mirror.history_steps and \
                    int(reported) != st.mirror.expected_tokens():
                self._fail(ProtocolError(
                    f"context mirror mismatch: harness reports {reported}, "
                    f"mirror expects {st.mirror.expected_tokens()}"))
        observation = message.get("observation")
        if not isinstance(observation, dict):
            self._fail(ProtocolError("observe without an observation"))
        action = self._policy.act(observation, st)
        st.acted += 1
        write_message(self._out, {"type": "act", "action": str(action)})
