"""
A small, safe expression language for reward functions.

Proposed rewards arrive as text, never as code. Grammar::

    program   := component+
    component := "component" IDENT "=" expr
    expr      := term (("+" | "-") term)*
    term      := unary (("*" | "/") unary)*
    unary     := "-" unary | power
    power     := primary ("^" unary)?          # exponent must be constant
    primary   := NUMBER | IDENT | call | "(" expr ")"
    call      := exp(e) | abs(e) | sqrt(e) | min(e, e) | max(e, e)
               | clip(e, lo, hi) | indicator(e CMP e)      CMP in < > <= >=

``#`` starts a comment. Division raises when ``|denominator| < 1e-12`` and
sqrt raises on a negative argument, so evaluation returns a finite value
or a typed error.

Evaluation is vectorized: every feature may be a scalar or a 1-D array of
per-step values, and constants broadcast.
"""
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Set, Tuple, Union

import numpy as np

from drlab.errors import (
    DivisionNearZero,
    EmptyTrace,
    InvalidSqrtArgument,
    MissingFeature,
    NonFiniteConstant,
    NonFiniteResult,
    RewardSyntaxError,
    UnboundedExpression,
    UnknownFeature,
)

logger = logging.getLogger(__name__)

DIVISION_EPS = 1e-12

UNARY_FUNCS = ("exp", "abs", "sqrt")
BINARY_FUNCS = ("min", "max")
RESERVED = frozenset(("component", "clip", "indicator") + UNARY_FUNCS + BINARY_FUNCS)
COMPARISONS = {"<": "lt", ">": "gt", "<=": "le", ">=": "ge"}
_CMP_SYMBOL = {v: k for k, v in COMPARISONS.items()}
_ARITH_SYMBOL = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}


# --- AST -----------------------------------------------------------------

@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Feature:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str  # neg | abs | exp | sqrt
    arg: "Node"


@dataclass(frozen=True)
class Binary:
    op: str  # add | sub | mul | div | pow | min | max
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Clip:
    x: "Node"
    lo: "Node"
    hi: "Node"


@dataclass(frozen=True)
class Indicator:
    cmp: str  # lt | gt | le | ge
    left: "Node"
    right: "Node"


Node = Union[Const, Feature, Unary, Binary, Clip, Indicator]


@dataclass(frozen=True)
class RewardProgram:
    """Named components; the reward is their sum."""

    components: Tuple[Tuple[str, Node], ...]
    source_text: str = field(default="", compare=False)

    @property
    def component_names(self) -> List[str]:
        return [name for name, _ in self.components]

    def feature_names(self) -> Set[str]:
        names: Set[str] = set()
        for _, expr in self.components:
            names |= _features(expr)
        return names


def _children(node: Node) -> Tuple[Node, ...]:
    if isinstance(node, Unary):
        return (node.arg,)
    if isinstance(node, (Binary, Indicator)):
        return (node.left, node.right)
    if isinstance(node, Clip):
        return (node.x, node.lo, node.hi)
    return ()


def _features(node: Node) -> Set[str]:
    if isinstance(node, Feature):
        return {node.name}
    out: Set[str] = set()
    for child in _children(node):
        out |= _features(child)
    return out


def _feature_order(node: Node, out: List[str]) -> None:
    if isinstance(node, Feature) and node.name not in out:
        out.append(node.name)
    for child in _children(node):
        _feature_order(child, out)


# --- tokenizer -----------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
    | (?P<comment>\#[^\n]*)
    | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
    | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
    | (?P<op><=|>=|[-+*/^(),=<>])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    pos: int


def tokenize(text: str) -> List[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise RewardSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        if kind not in ("ws", "comment"):
            tokens.append(_Token(kind, m.group(), pos))
        pos = m.end()
    tokens.append(_Token("eof", "", len(text)))
    return tokens


# --- parser --------------------------------------------------------------

def _constant_value(node: Node) -> Optional[float]:
    """Value of a feature-free subtree, or None."""
    if _features(node):
        return None
    with np.errstate(all="ignore"):
        value = float(_eval(node, {}))
    return value


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, kind: str, text: Optional[str] = None) -> _Token:
        tok = self.tok
        if tok.kind != kind or (text is not None and tok.text != text):
            wanted = repr(text) if text is not None else kind
            found = repr(tok.text) if tok.text else "end of input"
            raise RewardSyntaxError(f"expected {wanted}, found {found}", tok.pos)
        return self.advance()

    def at_op(self, *ops: str) -> bool:
        return self.tok.kind == "op" and self.tok.text in ops

    def program(self) -> List[Tuple[str, Node]]:
        components: List[Tuple[str, Node]] = []
        seen: Set[str] = set()
        if self.tok.kind == "eof":
            raise RewardSyntaxError("expected 'component', found end of input", self.tok.pos)
        while self.tok.kind != "eof":
            self.expect("ident", "component")
            name_tok = self.expect("ident")
            if name_tok.text in RESERVED:
                raise RewardSyntaxError(f"'{name_tok.text}' is reserved", name_tok.pos)
            if name_tok.text in seen:
                raise RewardSyntaxError(f"duplicate component '{name_tok.text}'", name_tok.pos)
            seen.add(name_tok.text)
            self.expect("op", "=")
            components.append((name_tok.text, self.expr()))
        return components

    def expr(self) -> Node:
        node = self.term()
        while self.at_op("+", "-"):
            op = "add" if self.advance().text == "+" else "sub"
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.at_op("*", "/"):
            op = "mul" if self.advance().text == "*" else "div"
            node = Binary(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.at_op("-"):
            self.advance()
            # only a bare literal folds: "-2" is Const(-2.0), "-(2)" stays a negation
            literal = self.tok.kind == "number"
            arg = self.unary()
            if literal and isinstance(arg, Const):
                return Const(-arg.value)
            return Unary("neg", arg)
        return self.power()

    def power(self) -> Node:
        base = self.primary()
        if self.at_op("^"):
            pos = self.advance().pos
            exponent = self.unary()
            value = _constant_value(exponent)
            if value is None:
                raise UnboundedExpression(f"exponent at position {pos} must be a constant")
            if not math.isfinite(value):
                raise NonFiniteConstant(f"exponent at position {pos} is not finite")
            return Binary("pow", base, Const(value))
        return base

    def primary(self) -> Node:
        tok = self.tok
        if tok.kind == "number":
            self.advance()
            value = float(tok.text)
            if not math.isfinite(value):
                raise NonFiniteConstant(f"constant {tok.text} at position {tok.pos} is not finite")
            return Const(value)
        if tok.kind == "ident":
            self.advance()
            if tok.text in RESERVED:
                if tok.text == "component":
                    raise RewardSyntaxError("unexpected 'component'", tok.pos)
                return self.call(tok)
            return Feature(tok.text)
        if self.at_op("("):
            self.advance()
            node = self.expr()
            self.expect("op", ")")
            return node
        found = repr(tok.text) if tok.text else "end of input"
        raise RewardSyntaxError(f"expected an expression, found {found}", tok.pos)

    def call(self, name: _Token) -> Node:
        self.expect("op", "(")
        if name.text == "indicator":
            left = self.expr()
            cmp_tok = self.tok
            if not (cmp_tok.kind == "op" and cmp_tok.text in COMPARISONS):
                raise RewardSyntaxError("indicator needs a comparison (<, >, <=, >=)", cmp_tok.pos)
            self.advance()
            right = self.expr()
            self.expect("op", ")")
            return Indicator(COMPARISONS[cmp_tok.text], left, right)
        args = [self.expr()]
        while self.at_op(","):
            self.advance()
            args.append(self.expr())
        close = self.expect("op", ")")
        arity = 1 if name.text in UNARY_FUNCS else 2 if name.text in BINARY_FUNCS else 3
        if len(args) != arity:
            raise RewardSyntaxError(f"{name.text}() takes {arity} argument(s), got {len(args)}", close.pos)
        if name.text in UNARY_FUNCS:
            return Unary(name.text, args[0])
        if name.text in BINARY_FUNCS:
            return Binary(name.text, args[0], args[1])
        return Clip(*args)


def parse_reward(text: str, catalog: Iterable[str]) -> RewardProgram:
    """Parse and validate against a feature catalog."""
    catalog = set(catalog)
    components = _Parser(text).program()
    for _, expr in components:
        used: List[str] = []
        _feature_order(expr, used)
        for name in used:
            if name not in catalog:
                raise UnknownFeature(name)
    return RewardProgram(components=tuple(components), source_text=text)


def load_reward_file(path: Path, catalog: Iterable[str]) -> RewardProgram:
    with open(path) as f:
        return parse_reward(f.read(), catalog)


# --- printer -------------------------------------------------------------

def format_node(node: Node) -> str:
    if isinstance(node, Const):
        text = repr(float(node.value))
        return f"({text})" if node.value < 0 or text.startswith("-") else text
    if isinstance(node, Feature):
        return node.name
    if isinstance(node, Unary):
        if node.op == "neg":
            if isinstance(node.arg, Const):
                return f"(-({format_node(node.arg)}))"
            return f"(-{format_node(node.arg)})"
        return f"{node.op}({format_node(node.arg)})"
    if isinstance(node, Binary):
        if node.op in BINARY_FUNCS:
            return f"{node.op}({format_node(node.left)}, {format_node(node.right)})"
        return f"({format_node(node.left)} {_ARITH_SYMBOL[node.op]} {format_node(node.right)})"
    if isinstance(node, Clip):
        return f"clip({format_node(node.x)}, {format_node(node.lo)}, {format_node(node.hi)})"
    if isinstance(node, Indicator):
        return f"indicator({format_node(node.left)} {_CMP_SYMBOL[node.cmp]} {format_node(node.right)})"
    raise TypeError(f"not a reward expression node: {node!r}")


def print_reward(program: RewardProgram) -> str:
    return "\n".join(f"component {name} = {format_node(expr)}" for name, expr in program.components) + "\n"


# --- evaluation ----------------------------------------------------------

Value = Union[float, np.ndarray]


def _eval(node: Node, env: Mapping[str, Value]) -> Value:
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Feature):
        try:
            return env[node.name]
        except KeyError:
            raise MissingFeature(node.name) from None
    if isinstance(node, Unary):
        a = _eval(node.arg, env)
        if node.op == "neg":
            return -a
        if node.op == "abs":
            return np.abs(a)
        if node.op == "exp":
            return np.exp(a)
        if np.any(np.asarray(a) < 0):
            raise InvalidSqrtArgument("sqrt of a negative value")
        return np.sqrt(a)
    if isinstance(node, Binary):
        a = _eval(node.left, env)
        b = _eval(node.right, env)
        if node.op == "add":
            return a + b
        if node.op == "sub":
            return a - b
        if node.op == "mul":
            return a * b
        if node.op == "div":
            if np.any(np.abs(np.asarray(b)) < DIVISION_EPS):
                raise DivisionNearZero(f"denominator {format_node(node.right)} is within {DIVISION_EPS} of zero")
            return a / b
        if node.op == "pow":
            return np.power(np.asarray(a, dtype=np.float64), b)
        if node.op == "min":
            return np.minimum(a, b)
        return np.maximum(a, b)
    if isinstance(node, Clip):
        return np.minimum(np.maximum(_eval(node.x, env), _eval(node.lo, env)), _eval(node.hi, env))
    if isinstance(node, Indicator):
        a = _eval(node.left, env)
        b = _eval(node.right, env)
        result = {"lt": np.less, "gt": np.greater, "le": np.less_equal, "ge": np.greater_equal}[node.cmp](a, b)
        return np.asarray(result, dtype=np.float64)
    raise TypeError(f"not a reward expression node: {node!r}")


def evaluate_columns(
    program: RewardProgram, columns: Mapping[str, np.ndarray]
) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """Per-step component values over equal-length feature columns."""
    lengths = {np.asarray(v).shape[0] for v in columns.values()}
    n = lengths.pop() if len(lengths) == 1 else None
    if n is None:
        raise ValueError("feature columns must be non-empty and of equal length")
    per_component: Dict[str, np.ndarray] = {}
    with np.errstate(all="ignore"):
        for name, expr in program.components:
            value = np.broadcast_to(np.asarray(_eval(expr, columns), dtype=np.float64), (n,)).copy()
            if not np.all(np.isfinite(value)):
                raise NonFiniteResult(f"component '{name}' produced a non-finite value")
            per_component[name] = value
    total = np.zeros(n)
    for value in per_component.values():
        total = total + value
    return total, per_component


def evaluate(program: RewardProgram, features: Mapping[str, float]) -> Tuple[float, Dict[str, float]]:
    per_component: Dict[str, float] = {}
    with np.errstate(all="ignore"):
        for name, expr in program.components:
            value = float(np.asarray(_eval(expr, features), dtype=np.float64))
            if not math.isfinite(value):
                raise NonFiniteResult(f"component '{name}' produced a non-finite value")
            per_component[name] = value
    return sum(per_component.values()), per_component


# --- component statistics ------------------------------------------------

@dataclass
class ComponentStats:
    mean: float
    std: float
    min: float
    max: float


@dataclass
class ComponentTrace:
    components: Dict[str, ComponentStats]
    total_mean: float


def component_stats(program: RewardProgram, columns: Mapping[str, np.ndarray]) -> ComponentTrace:
    if not columns or min(np.asarray(v).shape[0] for v in columns.values()) == 0:
        raise EmptyTrace("no steps to summarize")
    total, per_component = evaluate_columns(program, columns)
    stats = {
        name: ComponentStats(
            mean=float(np.mean(v)), std=float(np.std(v)), min=float(np.min(v)), max=float(np.max(v))
        )
        for name, v in per_component.items()
    }
    return ComponentTrace(components=stats, total_mean=float(np.mean(total)))


def trace_components(program: RewardProgram, trace) -> ComponentTrace:
    """Statistics of each component over one rollout's steps."""
    if trace.episode_length == 0:
        raise EmptyTrace(f"trace for {trace.env_id} has no steps")
    columns = {name: trace.feature(name) for name in sorted(program.feature_names())}
    if not columns:
        columns = {"__steps__": np.zeros(trace.episode_length)}
    return component_stats(program, columns)
