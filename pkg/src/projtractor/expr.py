"""
Scalar-field expression language.

Grammar (precedence from loosest to tightest)::

    expr    := expr ('+' | '-') expr          left associative
             | expr ('*' | '/') expr          left associative
             | '-' expr                       unary minus, binds looser than '^'
             | expr '^' expr                  right associative
             | NUMBER | NAME | FUNC '(' args ')' | '(' expr ')'
    FUNC    := sin | cos | exp | log | sqrt | pow     (pow takes two arguments)

``NAME`` must be a declared coordinate name or the constant ``pi``.  Implicit
multiplication is not accepted, so ``2x`` is a syntax error.  All error
positions are 0-based byte offsets into the UTF-8 encoded source.

The same tree evaluates over floats (or float arrays, for batched points) and
over :class:`~projtractor.jets.Jet` values.  Value coefficients of jets are
computed with the same floating point operations as the real evaluator, so the
two agree exactly at degree 0.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from . import jets
from .errors import DomainError, ExprNameError, ExprSyntaxError, ShapeError, SingularityError

FUNCTIONS = {"sin": 1, "cos": 1, "exp": 1, "log": 1, "sqrt": 1, "pow": 2}
CONSTANTS = {"pi": math.pi}

_BINARY_BP = {"+": 10, "-": 10, "*": 20, "/": 20, "^": 40}
_UNARY_BP = 30

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


def default_names(dim: int) -> list[str]:
    if dim <= 3:
        return ["x", "y", "z"][:dim]
    return [f"x{i}" for i in range(dim)]


# ---------------------------------------------------------------------------
# tree
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Var:
    name: str
    index: int
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Neg:
    operand: "Node"
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple["Node", ...]
    pos: int = field(default=0, compare=False)


Node = Union[Num, Var, Neg, BinOp, Call]


@dataclass(frozen=True)
class Expr:
    """A parsed expression bound to an ordered list of coordinate names."""

    root: Node
    names: tuple[str, ...]
    source: str = field(default="", compare=False)

    @property
    def dim(self) -> int:
        return len(self.names)

    def __call__(self, *values):
        if len(values) != len(self.names):
            raise ShapeError(f"expected {len(self.names)} coordinate values, got {len(values)}")
        return _evaluate(self.root, values)

    def __str__(self) -> str:
        return pretty(self)

    def is_constant(self) -> bool:
        return not any(isinstance(n, Var) for n in _walk(self.root))


def _walk(node: Node):
    yield node
    if isinstance(node, Neg):
        yield from _walk(node.operand)
    elif isinstance(node, BinOp):
        yield from _walk(node.left)
        yield from _walk(node.right)
    elif isinstance(node, Call):
        for a in node.args:
            yield from _walk(a)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


@dataclass
class _Token:
    kind: str  # num, name, op, end
    text: str
    pos: int  # byte offset


def _tokenize(src: str) -> list[_Token]:
    tokens = []
    i = 0
    byte = 0
    while i < len(src):
        m = _TOKEN_RE.match(src, i)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {src[i]!r}", byte)
        text = m.group()
        if m.lastgroup != "ws":
            tokens.append(_Token(m.lastgroup, text, byte))
        byte += len(text.encode("utf-8"))
        i = m.end()
    tokens.append(_Token("end", "", byte))
    return tokens


class _Parser:
    def __init__(self, src: str, names: Sequence[str]):
        self.tokens = _tokenize(src)
        self.i = 0
        self.names = {n: k for k, n in enumerate(names)}

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str) -> _Token:
        tok = self.peek()
        if tok.text != text or tok.kind != "op":
            what = "end of input" if tok.kind == "end" else repr(tok.text)
            raise ExprSyntaxError(f"expected {text!r}, found {what}", tok.pos)
        return self.advance()

    def parse(self) -> Node:
        node = self.expression(0)
        tok = self.peek()
        if tok.kind != "end":
            if tok.text == ")":
                raise ExprSyntaxError("unbalanced ')'", tok.pos)
            raise ExprSyntaxError(f"unexpected token {tok.text!r}", tok.pos)
        return node

    def expression(self, min_bp: int) -> Node:
        left = self.prefix()
        while True:
            tok = self.peek()
            if tok.kind != "op" or tok.text not in _BINARY_BP:
                return left
            bp = _BINARY_BP[tok.text]
            if bp <= min_bp:
                return left
            self.advance()
            # '^' is right associative: parse its right side at a slightly lower bp
            right = self.expression(bp - 1 if tok.text == "^" else bp)
            left = BinOp(tok.text, left, right, tok.pos)

    def prefix(self) -> Node:
        tok = self.advance()
        if tok.kind == "num":
            return Num(float(tok.text), tok.pos)
        if tok.kind == "name":
            return self.name(tok)
        if tok.kind == "op" and tok.text == "-":
            return Neg(self.expression(_UNARY_BP), tok.pos)
        if tok.kind == "op" and tok.text == "+":
            return self.expression(_UNARY_BP)
        if tok.kind == "op" and tok.text == "(":
            inner = self.expression(0)
            close = self.peek()
            if close.kind == "end":
                raise ExprSyntaxError("unbalanced '('", tok.pos)
            self.expect(")")
            return inner
        if tok.kind == "end":
            raise ExprSyntaxError("empty operand", tok.pos)
        raise ExprSyntaxError(f"empty operand before {tok.text!r}", tok.pos)

    def name(self, tok: _Token) -> Node:
        if tok.text in FUNCTIONS:
            self.expect("(")
            args = [self.expression(0)]
            while self.peek().text == ",":
                self.advance()
                args.append(self.expression(0))
            if self.peek().kind == "end":
                raise ExprSyntaxError("unbalanced '('", tok.pos)
            self.expect(")")
            if len(args) != FUNCTIONS[tok.text]:
                raise ExprSyntaxError(
                    f"{tok.text} takes {FUNCTIONS[tok.text]} argument(s), got {len(args)}", tok.pos
                )
            return Call(tok.text, tuple(args), tok.pos)
        if tok.text in self.names:
            return Var(tok.text, self.names[tok.text], tok.pos)
        if tok.text in CONSTANTS:
            return Num(CONSTANTS[tok.text], tok.pos)
        raise ExprNameError(tok.text, tok.pos)


def parse(src: str, coordinate_names: Sequence[str] = ()) -> Expr:
    """Parse ``src`` into an :class:`Expr` over ``coordinate_names``.

    Raises
    ------
    ExprSyntaxError
        Malformed input; ``offset`` is the byte offset of the problem.
    ExprNameError
        Identifier that is neither a coordinate, a function nor ``pi``.
    """
    if not isinstance(src, str):
        raise TypeError("expression source must be a string")
    names = tuple(coordinate_names)
    root = _Parser(src, names).parse()
    return Expr(root, names, src)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def _with_position(exc: Exception, pos: int) -> Exception:
    if isinstance(exc, DomainError):
        if exc.position is not None:
            return exc
        return DomainError(str(exc), pos)
    return SingularityError(f"{exc} (at offset {pos})")


def _evaluate(node: Node, env):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return env[node.index]
    if isinstance(node, Neg):
        return -_evaluate(node.operand, env)
    if isinstance(node, BinOp):
        a = _evaluate(node.left, env)
        b = _evaluate(node.right, env)
        try:
            return _binary(node.op, a, b)
        except (DomainError, SingularityError) as exc:
            raise _with_position(exc, node.pos) from exc
    args = [_evaluate(a, env) for a in node.args]
    try:
        return jets.ELEMENTARY[node.func](*args)
    except (DomainError, SingularityError) as exc:
        raise _with_position(exc, node.pos) from exc


def _binary(op: str, a, b):
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if not isinstance(b, jets.Jet) and np.any(np.asarray(b) == 0):
            raise SingularityError("division by zero")
        if not isinstance(a, jets.Jet) and not isinstance(b, jets.Jet):
            return np.asarray(a, dtype=float) / np.asarray(b, dtype=float)
        return a / b
    return jets.power(a, b)


def eval_expr(e: Expr, point) -> float | np.ndarray:
    """Evaluate ``e`` at ``point`` (shape ``(dim,)`` or batched ``(..., dim)``)."""
    p = np.asarray(point, dtype=float)
    if p.ndim == 0:
        p = p[None]
    if p.shape[-1] != e.dim:
        raise ShapeError(f"point has {p.shape[-1]} coordinates, expression expects {e.dim}")
    with np.errstate(all="ignore"):
        out = _evaluate(e.root, [p[..., i] for i in range(e.dim)])
    out = np.broadcast_to(np.asarray(out, dtype=float), p.shape[:-1])
    return float(out) if out.ndim == 0 else np.array(out)


def eval_expr_jet(e: Expr, base_point, order: int = jets.DEFAULT_ORDER) -> jets.Jet:
    """Jet of ``e`` about ``base_point``."""
    p = np.asarray(base_point, dtype=float)
    if p.ndim == 0:
        p = p[None]
    if p.shape[-1] != e.dim:
        raise ShapeError(f"point has {p.shape[-1]} coordinates, expression expects {e.dim}")
    return jets.jet_of(e, p, order)


# ---------------------------------------------------------------------------
# printing
# ---------------------------------------------------------------------------


def _prec(node: Node) -> int:
    if isinstance(node, BinOp):
        return _BINARY_BP[node.op]
    if isinstance(node, Neg):
        return _UNARY_BP
    return 100


def _fmt(node: Node) -> str:
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Call):
        return f"{node.func}(" + ", ".join(_fmt(a) for a in node.args) + ")"
    if isinstance(node, Neg):
        inner = _fmt(node.operand)
        # '-' binds looser than '^' only, so anything looser needs parentheses
        if _prec(node.operand) < _UNARY_BP:
            inner = f"({inner})"
        return f"-{inner}"
    p = _BINARY_BP[node.op]
    left, right = _fmt(node.left), _fmt(node.right)
    if node.op == "^":
        if _prec(node.left) <= p:
            left = f"({left})"
        if _prec(node.right) < p and not isinstance(node.right, Neg):
            right = f"({right})"
    else:
        if _prec(node.left) < p:
            left = f"({left})"
        if _prec(node.right) <= p:
            right = f"({right})"
    sep = f" {node.op} " if node.op in "+-" else node.op
    return f"{left}{sep}{right}"


def pretty(e: Expr | Node) -> str:
    """Text that parses back to the same tree."""
    return _fmt(e.root if isinstance(e, Expr) else e)
