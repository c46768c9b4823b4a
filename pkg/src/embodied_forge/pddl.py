"""Reduced STRIPS-style domain representation and s-expression parser.

Supports exactly the constructs the household domain uses: (:predicates ...)
and (:action name :parameters ... :precondition (and ...) :effect (and ...)),
with (not ...) in preconditions/effects. parse -> print -> parse round-trips
to an identical structure; references to undeclared predicates are rejected.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources


class PddlSyntaxError(ValueError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{message} at line {line}, column {col}")
        self.line = line
        self.col = col


class UndeclaredPredicateError(ValueError):
    def __init__(self, predicate: str, action: str):
        super().__init__(f"action {action!r} references undeclared predicate {predicate!r}")
        self.predicate = predicate


@dataclass(frozen=True)
class Literal:
    predicate: str
    args: tuple
    negated: bool = False

    def render(self) -> str:
        atom = "(" + " ".join((self.predicate,) + self.args) + ")"
        return f"(not {atom})" if self.negated else atom


@dataclass
class OperatorSchema:
    name: str
    parameters: tuple
    preconditions: tuple  # Literal
    effects: tuple        # Literal


@dataclass
class PddlDomain:
    name: str
    predicates: dict = field(default_factory=dict)  # name -> arity
    operators: list = field(default_factory=list)

    def render(self) -> str:
        lines = [f"(define (domain {self.name})"]
        lines.append("  (:predicates")
        for pred, arity in self.predicates.items():
            args = " ".join(f"?x{i}" for i in range(arity))
            lines.append(f"    ({pred}{' ' + args if args else ''})")
        lines.append("  )")
        for op in self.operators:
            lines.append(f"  (:action {op.name}")
            lines.append("    :parameters (" + " ".join(op.parameters) + ")")
            lines.append("    :precondition (and " +
                         " ".join(l.render() for l in op.preconditions) + ")")
            lines.append("    :effect (and " +
                         " ".join(l.render() for l in op.effects) + ")")
            lines.append("  )")
        lines.append(")")
        return "\n".join(lines) + "\n"


def _tokenize(text: str):
    line, col = 1, 1
    i = 0
    tokens = []
    while i < len(text):
        c = text[i]
        if c == "\n":
            line += 1
            col = 1
            i += 1
        elif c in " \t\r":
            col += 1
            i += 1
        elif c == ";":
            while i < len(text) and text[i] != "\n":
                i += 1
        elif c in "()":
            tokens.append((c, line, col))
            col += 1
            i += 1
        else:
            start = i
            start_col = col
            while i < len(text) and text[i] not in " \t\r\n();":
                i += 1
                col += 1
            tokens.append((text[start:i], line, start_col))
    return tokens


def _read_sexpr(tokens, pos):
    if pos >= len(tokens):
        raise PddlSyntaxError("unexpected end of input", *tokens[-1][1:]) \
            if tokens else PddlSyntaxError("empty input", 1, 1)
    tok, line, col = tokens[pos]
    if tok == "(":
        items = []
        pos += 1
        while True:
            if pos >= len(tokens):
                raise PddlSyntaxError("unbalanced parenthesis", line, col)
            if tokens[pos][0] == ")":
                return items, pos + 1
            item, pos = _read_sexpr(tokens, pos)
            items.append(item)
    if tok == ")":
        raise PddlSyntaxError("unexpected ')'", line, col)
    return tok, pos + 1


def _parse_literal(sexpr, declared: dict, action: str) -> Literal:
    if not isinstance(sexpr, list) or not sexpr:
        raise ValueError(f"malformed literal in action {action!r}: {sexpr!r}")
    if sexpr[0] == "not":
        inner = _parse_literal(sexpr[1], declared, action)
        return Literal(inner.predicate, inner.args, negated=True)
    pred = sexpr[0]
    if pred not in declared:
        raise UndeclaredPredicateError(pred, action)
    args = tuple(sexpr[1:])
    if len(args) != declared[pred]:
        raise ValueError(f"predicate {pred!r} used with {len(args)} args "
                         f"(declared {declared[pred]}) in action {action!r}")
    return Literal(pred, args)


def _condition_literals(sexpr, declared, action) -> tuple:
    if isinstance(sexpr, list) and sexpr and sexpr[0] == "and":
        return tuple(_parse_literal(s, declared, action) for s in sexpr[1:])
    return (_parse_literal(sexpr, declared, action),)


def parse_domain(text: str) -> PddlDomain:
    tokens = _tokenize(text)
    if not tokens:
        raise PddlSyntaxError("empty input", 1, 1)
    tree, pos = _read_sexpr(tokens, 0)
    if pos != len(tokens):
        t, line, col = tokens[pos]
        raise PddlSyntaxError(f"trailing content {t!r}", line, col)
    if not (isinstance(tree, list) and tree and tree[0] == "define"):
        raise ValueError("expected (define (domain ...) ...)")
    header = tree[1]
    if not (isinstance(header, list) and header[0] == "domain"):
        raise ValueError("expected (domain <name>)")
    domain = PddlDomain(name=header[1])
    for section in tree[2:]:
        if not isinstance(section, list) or not section:
            raise ValueError(f"malformed section: {section!r}")
        tag = section[0]
        if tag == ":predicates":
            for decl in section[1:]:
                if not isinstance(decl, list) or not decl:
                    raise ValueError(f"malformed predicate declaration: {decl!r}")
                domain.predicates[decl[0]] = len(decl) - 1
        elif tag == ":action":
            name = section[1]
            fields = {}
            i = 2
            while i < len(section):
                key = section[i]
                fields[key] = section[i + 1]
                i += 2
            params = tuple(fields.get(":parameters", []))
            pre = _condition_literals(fields.get(":precondition", ["and"]),
                                      domain.predicates, name)
            eff = _condition_literals(fields.get(":effect", ["and"]),
                                      domain.predicates, name)
            domain.operators.append(OperatorSchema(name, params, pre, eff))
        else:
            raise ValueError(f"unknown construct {tag!r}")
    return domain


def load_household_domain() -> PddlDomain:
    text = resources.files("embodied_forge.data").joinpath("household.pddl").read_text()
    return parse_domain(text)
