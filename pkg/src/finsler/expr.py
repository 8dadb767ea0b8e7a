"""Metric expressions: tokenizer, Pratt parser, printer and evaluator.

Grammar (EBNF)::

    expr     = term { ("+" | "-") term } ;
    term     = unary { ("*" | "/") unary } ;
    unary    = "-" unary | "+" unary | power ;
    power    = atom [ "^" unary_pow ] ;          (* right associative *)
    unary_pow= "-" unary_pow | power ;
    atom     = NUMBER | VAR | NAME | CALL | "(" expr ")" ;
    CALL     = FUNC "(" expr { "," expr } ")" ;
    VAR      = ("x" | "y") DIGITS | "t" ;           (* x1..xn, y1..yn; t for curves *)
    FUNC     = "sqrt" | "exp" | "sin" | "cos" | "pow" ;

``^`` binds tighter than unary minus, so ``-y1^2`` is ``-(y1^2)``.
Exponents may not depend on the variables.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

from . import jets

FUNCTIONS = {"sqrt": 1, "exp": 1, "sin": 1, "cos": 1, "pow": 2}
CONSTANTS = {"pi": math.pi}

_BP_ADD = 10
_BP_MUL = 20
_BP_UNARY = 30
_BP_POW = 40


class ParseError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


# AST ------------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    kind: str  # "x", "y" or "t"
    index: int  # 1-based; 0 for t


@dataclass(frozen=True)
class Param:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: object


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


# tokenizer ------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    pos: int


def tokenize(source: str) -> list[_Tok]:
    toks = []
    pos = 0
    src = source.rstrip()
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if not m or m.end() == pos:
            bad = len(src[pos:]) - len(src[pos:].lstrip()) + pos
            raise ParseError(f"unexpected character {src[bad]!r}", bad)
        kind = m.lastgroup
        toks.append(_Tok(kind, m.group(kind), m.start(kind)))
        pos = m.end()
    toks.append(_Tok("end", "", len(src)))
    return toks


# parser ---------------------------------------------------------------------

class _Parser:
    def __init__(self, source, dimension, params, allow_t):
        self.toks = tokenize(source)
        self.i = 0
        self.n = dimension
        self.params = None if params is None else set(params)
        self.allow_t = allow_t

    @property
    def tok(self):
        return self.toks[self.i]

    def advance(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text):
        t = self.tok
        if t.text != text:
            what = "end of input" if t.kind == "end" else repr(t.text)
            raise ParseError(f"expected {text!r}, found {what}", t.pos)
        return self.advance()

    def lbp(self, t):
        if t.kind != "op":
            return 0
        return {"+": _BP_ADD, "-": _BP_ADD, "*": _BP_MUL, "/": _BP_MUL, "^": _BP_POW}.get(t.text, 0)

    def expression(self, rbp=0):
        left = self.nud(self.advance())
        while rbp < self.lbp(self.tok):
            left = self.led(self.advance(), left)
        return left

    def nud(self, t):
        if t.kind == "num":
            return Num(float(t.text))
        if t.kind == "name":
            return self.name(t)
        if t.text == "(":
            e = self.expression()
            self.expect(")")
            return e
        if t.text == "-":
            return Neg(self.expression(_BP_UNARY))
        if t.text == "+":
            return self.expression(_BP_UNARY)
        what = "end of input" if t.kind == "end" else repr(t.text)
        raise ParseError(f"unexpected {what}", t.pos)

    def led(self, t, left):
        if t.text == "^":
            right = self.expression(_BP_POW - 1)
            if _depends_on_variables(right):
                raise ParseError("exponent must not depend on the variables", t.pos)
            return BinOp("^", left, right)
        return BinOp(t.text, left, self.expression(self.lbp(t)))

    def name(self, t):
        text = t.text
        m = re.fullmatch(r"([xyt])(\d*)", text)
        if m:
            kind, digits = m.groups()
            if kind == "t":
                if digits or not self.allow_t:
                    raise ParseError(f"unknown identifier {text!r}", t.pos)
                return Var("t", 0)
            if not digits:
                raise ParseError(f"variable {text!r} needs an index", t.pos)
            k = int(digits)
            if not 1 <= k <= self.n:
                raise ParseError(f"index out of range in {text!r} (dimension {self.n})", t.pos)
            return Var(kind, k)
        if text in FUNCTIONS:
            self.expect("(")
            args = [self.expression()]
            while self.tok.text == ",":
                self.advance()
                args.append(self.expression())
            self.expect(")")
            if len(args) != FUNCTIONS[text]:
                raise ParseError(f"{text} takes {FUNCTIONS[text]} argument(s)", t.pos)
            if text == "pow" and _depends_on_variables(args[1]):
                raise ParseError("exponent must not depend on the variables", t.pos)
            return Call(text, tuple(args))
        if text in CONSTANTS:
            return Num(CONSTANTS[text])
        if text == "abs":
            raise ParseError("abs is not supported (L must be smooth on the cone)", t.pos)
        if self.params is not None and text not in self.params:
            raise ParseError(f"unknown identifier {text!r}", t.pos)
        return Param(text)


def _depends_on_variables(node) -> bool:
    if isinstance(node, Var):
        return True
    if isinstance(node, Neg):
        return _depends_on_variables(node.operand)
    if isinstance(node, BinOp):
        return _depends_on_variables(node.left) or _depends_on_variables(node.right)
    if isinstance(node, Call):
        return any(_depends_on_variables(a) for a in node.args)
    return False


def parse(source: str, dimension: int, params=(), *, allow_t: bool = False):
    """Parse ``source`` into an AST over x1..xn, y1..yn and the named parameters.

    ``params=None`` accepts any free name as a parameter.
    """
    if not source or not source.strip():
        raise ParseError("empty expression", 0)
    p = _Parser(source, dimension, params, allow_t)
    ast = p.expression()
    if p.tok.kind != "end":
        raise ParseError(f"unexpected {p.tok.text!r}", p.tok.pos)
    return ast


# printer --------------------------------------------------------------------

_PREC = {"+": _BP_ADD, "-": _BP_ADD, "*": _BP_MUL, "/": _BP_MUL, "^": _BP_POW}


def _prec(node):
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _BP_UNARY
    return 100


def to_string(node) -> str:
    if isinstance(node, Num):
        v = node.value
        return str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)
    if isinstance(node, Var):
        return "t" if node.kind == "t" else f"{node.kind}{node.index}"
    if isinstance(node, Param):
        return node.name
    if isinstance(node, Call):
        return f"{node.name}({', '.join(to_string(a) for a in node.args)})"
    if isinstance(node, Neg):
        inner = to_string(node.operand)
        if _prec(node.operand) < _BP_UNARY:
            inner = f"({inner})"
        return f"-{inner}"
    p = _PREC[node.op]
    left, right = to_string(node.left), to_string(node.right)
    if node.op == "^":
        # right associative: parenthesize a left operand of equal or lower precedence
        if _prec(node.left) <= p:
            left = f"({left})"
        if _prec(node.right) < p and not isinstance(node.right, Neg):
            right = f"({right})"
    else:
        if _prec(node.left) < p:
            left = f"({left})"
        if _prec(node.right) <= p:
            right = f"({right})"
    sep = "^" if node.op == "^" else f" {node.op} "
    return f"{left}{sep}{right}"


# evaluation -----------------------------------------------------------------

_FUNCS = {"sqrt": jets.sqrt, "exp": jets.exp, "sin": jets.sin, "cos": jets.cos, "pow": jets.power}


def _check_div(a, b):
    if not isinstance(b, jets.Jet) and b == 0:
        raise jets.DomainError("division by zero")
    return a / b


def compile_ast(node):
    """Compile an AST into ``fn(x, y, params, t=None)`` over reals or jets."""
    if isinstance(node, Num):
        v = node.value
        return lambda x, y, p, t=None: v
    if isinstance(node, Var):
        k = node.index - 1
        if node.kind == "x":
            return lambda x, y, p, t=None: x[k]
        if node.kind == "y":
            return lambda x, y, p, t=None: y[k]
        return lambda x, y, p, t=None: t
    if isinstance(node, Param):
        name = node.name

        def param(x, y, p, t=None):
            try:
                return p[name]
            except KeyError:
                raise KeyError(f"missing value for parameter {name!r}") from None

        return param
    if isinstance(node, Neg):
        f = compile_ast(node.operand)
        return lambda x, y, p, t=None: -f(x, y, p, t)
    if isinstance(node, Call):
        fs = [compile_ast(a) for a in node.args]
        fn = _FUNCS[node.name]
        if node.name == "pow":
            return lambda x, y, p, t=None: jets.power(fs[0](x, y, p, t), float(fs[1](x, y, p, t)))
        return lambda x, y, p, t=None: fn(fs[0](x, y, p, t))
    fl, fr = compile_ast(node.left), compile_ast(node.right)
    if node.op == "+":
        return lambda x, y, p, t=None: fl(x, y, p, t) + fr(x, y, p, t)
    if node.op == "-":
        return lambda x, y, p, t=None: fl(x, y, p, t) - fr(x, y, p, t)
    if node.op == "*":
        return lambda x, y, p, t=None: fl(x, y, p, t) * fr(x, y, p, t)
    if node.op == "/":
        return lambda x, y, p, t=None: _check_div(fl(x, y, p, t), fr(x, y, p, t))
    return lambda x, y, p, t=None: jets.power(fl(x, y, p, t), float(fr(x, y, p, t)))


def evaluate(node, x=(), y=(), params=None, t=None):
    """Value of the expression; generic over floats and jets."""
    return compile_ast(node)(x, y, params or {}, t)


class Expression:
    """A parsed expression bundled with its compiled evaluator."""

    def __init__(self, source: str, dimension: int, params=None, *, allow_t: bool = False):
        self.source = source
        self.dimension = dimension
        self.params = dict(params or {})
        self.ast = parse(source, dimension, None if params is None else self.params, allow_t=allow_t)
        self._fn = compile_ast(self.ast)

    def __call__(self, x=(), y=(), t=None):
        return self._fn(x, y, self.params, t)

    def __repr__(self):
        return f"Expression({to_string(self.ast)!r})"
