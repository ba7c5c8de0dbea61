"""Scalar expression trees: parsing, printing, and evaluation with forward AD.

Grammar (whitespace insignificant)::

    expr   := term (("+" | "-") term)*
    term   := factor (("*" | "/") factor)*
    factor := base ("^" ["-"] number)?
    base   := number | ident | ident "(" expr ")" | "(" expr ")" | "-" base

Identifiers resolve, in order, to chart variables, parameters, user time
functions (``R(expr)``, or bare ``R`` meaning ``R(t)``) and the elementary
functions sin, cos, tan, exp, log, sqrt.  ``pi`` is predefined.

Evaluation works over floats and over :class:`~singular_flow.jet.Jet`
carriers; derivatives of every order come from the carrier, never from
symbolic differentiation.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import jet as J
from .errors import DomainError, ExprSyntaxError, UnknownIdentifier

FUNCTIONS = ("sin", "cos", "tan", "exp", "log", "sqrt")


class Expr:
    """Base class for expression nodes.  Nodes are immutable."""

    def __str__(self) -> str:
        return to_text(self)

    # operator sugar builds folded trees
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __neg__(self):
        return neg(self)


@dataclass(frozen=True, eq=True, repr=False)
class Const(Expr):
    value: float


@dataclass(frozen=True, eq=True, repr=False)
class Param(Expr):
    name: str
    value: float


@dataclass(frozen=True, eq=True, repr=False)
class Var(Expr):
    name: str
    index: int


@dataclass(frozen=True, eq=True, repr=False)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True, eq=True, repr=False)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True, eq=True, repr=False)
class Pow(Expr):
    base: Expr
    exponent: float


@dataclass(frozen=True, eq=True, repr=False)
class Func(Expr):
    name: str
    arg: Expr


@dataclass(frozen=True, eq=True, repr=False)
class TimeCall(Expr):
    """User time function applied to an argument; ``body`` is over one variable."""

    name: str
    body: Expr
    arg: Expr


for _cls in (Const, Param, Var, Neg, BinOp, Pow, Func, TimeCall):
    _cls.__repr__ = lambda self: f"Expr({to_text(self)!r})"

ZERO = Const(0.0)
ONE = Const(1.0)


def _lift(x) -> Expr:
    return x if isinstance(x, Expr) else Const(float(x))


def _is_const(e: Expr, value: float | None = None) -> bool:
    return isinstance(e, Const) and (value is None or e.value == value)


# folding constructors: only trivial identities, no rewriting ----------------

def add(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value + b.value)
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return BinOp("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value - b.value)
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    return BinOp("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value * b.value)
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if _is_const(a, -1.0):
        return neg(b)
    if _is_const(b, -1.0):
        return neg(a)
    return BinOp("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 1.0):
        return a
    if _is_const(a, 0.0) and not _is_const(b, 0.0):
        return ZERO
    return BinOp("/", a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def total(terms: Sequence[Expr]) -> Expr:
    out: Expr = ZERO
    for t in terms:
        out = add(out, t)
    return out


# scope ---------------------------------------------------------------------

@dataclass(frozen=True)
class TimeFunction:
    name: str
    variable: str
    body: Expr
    text: str


@dataclass
class Scope:
    """Names visible to the parser."""

    variables: tuple[str, ...]
    parameters: Mapping[str, float] = field(default_factory=dict)
    time_functions: Mapping[str, TimeFunction] = field(default_factory=dict)

    def index(self, name: str) -> int | None:
        try:
            return self.variables.index(name)
        except ValueError:
            return None


def make_time_function(name: str, text: str, variable: str = "t",
                       parameters: Mapping[str, float] | None = None,
                       earlier: Mapping[str, TimeFunction] | None = None) -> TimeFunction:
    body = parse_expr(text, (variable,), parameters, earlier)
    return TimeFunction(name, variable, body, text)


# parser --------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<id>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[-+*/^()]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            bad = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ExprSyntaxError(f"unexpected character {text[bad]!r}", text, bad)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, scope: Scope):
        self.text = text
        self.scope = scope
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.take()
        if val != value:
            found = "end of input" if kind == "end" else repr(val)
            raise ExprSyntaxError(f"expected {value!r}, found {found}", self.text, pos)

    def parse(self) -> Expr:
        e = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {val!r}", self.text, pos)
        return e

    def expr(self) -> Expr:
        left = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            left = BinOp(op, left, self.term())
        return left

    def term(self) -> Expr:
        left = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            left = BinOp(op, left, self.factor())
        return left

    def factor(self) -> Expr:
        base = self.base()
        if self.peek()[1] == "^":
            self.take()
            sign = 1.0
            if self.peek()[1] == "-":
                self.take()
                sign = -1.0
            kind, val, pos = self.take()
            if kind != "num":
                raise ExprSyntaxError("exponent must be a number", self.text, pos)
            base = Pow(base, sign * float(val))
            if self.peek()[1] == "^":
                raise ExprSyntaxError("chained exponents need parentheses", self.text, self.peek()[2])
        return base

    def base(self) -> Expr:
        kind, val, pos = self.take()
        if kind == "num":
            return Const(float(val))
        if val == "(":
            e = self.expr()
            self.expect(")")
            return e
        if val == "-":
            inner = self.base()
            if isinstance(inner, Const):
                return Const(-inner.value)
            return Neg(inner)
        if kind == "id":
            return self.identifier(val, pos)
        found = "end of input" if kind == "end" else repr(val)
        raise ExprSyntaxError(f"unexpected {found}", self.text, pos)

    def identifier(self, name: str, pos: int) -> Expr:
        scope = self.scope
        called = self.peek()[1] == "("
        if not called:
            idx = scope.index(name)
            if idx is not None:
                return Var(name, idx)
            if name in scope.parameters:
                return Param(name, float(scope.parameters[name]))
            if name in scope.time_functions:
                tf = scope.time_functions[name]
                idx = scope.index(tf.variable)
                if idx is None:
                    raise UnknownIdentifier(
                        f"time function {name!r} used bare but {tf.variable!r} is not a variable (at {pos})")
                return TimeCall(name, tf.body, Var(tf.variable, idx))
            if name == "pi":
                return Param("pi", math.pi)
            raise UnknownIdentifier(f"unknown identifier {name!r} at position {pos} in {self.text!r}")
        self.take()
        arg = self.expr()
        self.expect(")")
        if name in scope.time_functions:
            return TimeCall(name, scope.time_functions[name].body, arg)
        if name in FUNCTIONS:
            return Func(name, arg)
        raise UnknownIdentifier(f"unknown function {name!r} at position {pos} in {self.text!r}")


def parse_expr(text: str, chart: Sequence[str] | Scope,
               parameters: Mapping[str, float] | None = None,
               time_functions: Mapping[str, TimeFunction] | None = None) -> Expr:
    """Parse ``text`` against a chart of variable names."""
    if isinstance(chart, Scope):
        scope = chart
    else:
        scope = Scope(tuple(chart), dict(parameters or {}), dict(time_functions or {}))
    if not isinstance(text, str):
        if isinstance(text, (int, float)):
            return Const(float(text))
        raise ExprSyntaxError(f"expression must be a string, got {type(text).__name__}")
    return _Parser(text, scope).parse()


# printer -------------------------------------------------------------------

def _num(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        s = str(int(v))
    else:
        s = repr(float(v))
    return f"({s})" if v < 0 or s.startswith("-") else s


def _atom(e: Expr) -> str:
    s = _text(e)
    if isinstance(e, (Pow, Neg)) or (isinstance(e, Const) and e.value < 0):
        if not s.startswith("("):
            return f"({s})"
    if isinstance(e, Pow):
        return f"({s})"
    return s


def _text(e: Expr) -> str:
    if isinstance(e, Const):
        return _num(e.value)
    if isinstance(e, (Param, Var)):
        return e.name
    if isinstance(e, Neg):
        return f"(-{_atom(e.arg)})"
    if isinstance(e, BinOp):
        return f"({_text(e.left)} {e.op} {_text(e.right)})"
    if isinstance(e, Pow):
        c = e.exponent
        exp_txt = str(int(c)) if c == int(c) and abs(c) < 1e15 else repr(c)
        return f"{_atom(e.base)}^{exp_txt}"
    if isinstance(e, Func):
        return f"{e.name}({_strip(_text(e.arg))})"
    if isinstance(e, TimeCall):
        return f"{e.name}({_strip(_text(e.arg))})"
    raise TypeError(f"not an Expr: {e!r}")


def _strip(s: str) -> str:
    if s.startswith("(") and s.endswith(")"):
        depth = 0
        for i, ch in enumerate(s):
            depth += ch == "("
            depth -= ch == ")"
            if depth == 0 and i < len(s) - 1:
                return s
        return s[1:-1]
    return s


def to_text(e: Expr) -> str:
    """Canonical parenthesized infix; re-parses to an equivalent tree."""
    return _strip(_text(e))


def variables(e: Expr) -> set[str]:
    out: set[str] = set()
    stack = [e]
    while stack:
        n = stack.pop()
        if isinstance(n, Var):
            out.add(n.name)
        elif isinstance(n, Neg):
            stack.append(n.arg)
        elif isinstance(n, BinOp):
            stack += [n.left, n.right]
        elif isinstance(n, Pow):
            stack.append(n.base)
        elif isinstance(n, (Func, TimeCall)):
            stack.append(n.arg)
    return out


def time_functions_used(e: Expr) -> set[str]:
    out: set[str] = set()
    stack = [e]
    while stack:
        n = stack.pop()
        if isinstance(n, TimeCall):
            out.add(n.name)
            stack += [n.arg, n.body]
        elif isinstance(n, Neg):
            stack.append(n.arg)
        elif isinstance(n, BinOp):
            stack += [n.left, n.right]
        elif isinstance(n, Pow):
            stack.append(n.base)
        elif isinstance(n, Func):
            stack.append(n.arg)
    return out


def remap(e: Expr, names: Sequence[str]) -> Expr:
    """Re-index variables against a new chart ordering (by name)."""
    lookup = {n: i for i, n in enumerate(names)}
    if isinstance(e, Var):
        if e.name not in lookup:
            raise UnknownIdentifier(f"variable {e.name!r} not in chart {tuple(names)}")
        return Var(e.name, lookup[e.name])
    if isinstance(e, Neg):
        return Neg(remap(e.arg, names))
    if isinstance(e, BinOp):
        return BinOp(e.op, remap(e.left, names), remap(e.right, names))
    if isinstance(e, Pow):
        return Pow(remap(e.base, names), e.exponent)
    if isinstance(e, Func):
        return Func(e.name, remap(e.arg, names))
    if isinstance(e, TimeCall):
        return TimeCall(e.name, e.body, remap(e.arg, names))
    return e


# tree-walking evaluation (reference path, reports the failing node) --------




def _walk(e: Expr, x):
    if isinstance(e, (Const, Param)):
        return e.value
    if isinstance(e, Var):
        return x[e.index]
    if isinstance(e, Neg):
        return -_walk(e.arg, x)
    if isinstance(e, TimeCall):
        return _walk(e.body, (_walk(e.arg, x),))
    if isinstance(e, BinOp):
        a, b = _walk(e.left, x), _walk(e.right, x)
        op = {"+": lambda: a + b, "-": lambda: a - b, "*": lambda: a * b, "/": lambda: _divide(a, b)}[e.op]
    elif isinstance(e, Pow):
        base = _walk(e.base, x)
        op = lambda: J.power(base, e.exponent)  # noqa: E731
    elif isinstance(e, Func):
        arg = _walk(e.arg, x)
        op = lambda: _WALK_FUNCS[e.name](arg)  # noqa: E731
    else:
        raise TypeError(f"not an Expr: {e!r}")
    try:
        return op()
    except (DomainError, ZeroDivisionError, ValueError) as err:
        if isinstance(err, DomainError) and err.node is not None:
            raise
        raise DomainError(str(err), e) from None


def _divide(a, b):
    if not isinstance(b, J.Jet) and b == 0.0:
        raise DomainError("division by zero")
    if isinstance(a, J.Jet) or isinstance(b, J.Jet):
        q = J.as_jet(a) / b
        # keep the primal bit-identical to float division
        pa = a.primal if isinstance(a, J.Jet) else a
        pb = b.primal if isinstance(b, J.Jet) else b
        q.data[..., 0] = np.divide(pa, pb)
        return q
    return a / b


# compiled evaluation -------------------------------------------------------

def _gen(e: Expr, var, shared=None) -> str:
    """Python source for ``e``; subtrees in ``shared`` become numbered temporaries."""
    if shared is not None and e in shared.names:
        return shared.ref(e, lambda: _gen_node(e, var, shared))
    return _gen_node(e, var, shared)


def _gen_node(e: Expr, var, shared) -> str:
    if isinstance(e, (Const, Param)):
        return repr(float(e.value)) if e.value >= 0 else f"({float(e.value)!r})"
    if isinstance(e, Var):
        return var(e.index)
    if isinstance(e, Neg):
        return f"(-{_gen(e.arg, var, shared)})"
    if isinstance(e, BinOp):
        left, right = _gen(e.left, var, shared), _gen(e.right, var, shared)
        if e.op == "/":
            return f"_div({left}, {right})"
        return f"({left} {e.op} {right})"
    if isinstance(e, Pow):
        return f"_pow({_gen(e.base, var, shared)}, {e.exponent!r})"
    if isinstance(e, Func):
        return f"_{e.name}({_gen(e.arg, var, shared)})"
    if isinstance(e, TimeCall):
        arg = _gen(e.arg, var, shared)
        return _gen(e.body, lambda i: f"({arg})")
    raise TypeError(f"not an Expr: {e!r}")


class _Shared:
    """Subtrees that occur more than once across a batch of expressions."""

    def __init__(self, exprs: Sequence[Expr]):
        counts: dict[Expr, int] = {}

        def visit(e):
            if isinstance(e, (Const, Param, Var)):
                return
            counts[e] = counts.get(e, 0) + 1
            if counts[e] > 1:
                return
            for child in _children(e):
                visit(child)

        for e in exprs:
            visit(e)
        self.names = {e: None for e, c in counts.items() if c > 1}
        self.lines: list[str] = []

    def ref(self, e: Expr, build) -> str:
        name = self.names[e]
        if name is None:
            code = build()
            name = self.names[e] = f"s{len(self.lines)}"
            self.lines.append(f"    {name} = {code}\n")
        return name


def _children(e: Expr) -> tuple:
    if isinstance(e, (Neg, Func)):
        return (e.arg,)
    if isinstance(e, BinOp):
        return (e.left, e.right)
    if isinstance(e, Pow):
        return (e.base,)
    if isinstance(e, TimeCall):
        return (e.arg,)
    return ()


def _float_div(a, b):
    return a / b


def _float_tan(x):
    return float(np.tan(x))


_NAMESPACES = {
    "float": {
        "_div": _float_div, "_pow": J.power, "_sin": math.sin, "_cos": math.cos,
        "_tan": _float_tan, "_exp": J.exp, "_log": J.log, "_sqrt": J.sqrt,
    },
    "jet": {
        "_div": _divide, "_pow": J.power, "_sin": J.sin, "_cos": J.cos,
        "_tan": J.tan, "_exp": J.exp, "_log": J.log, "_sqrt": J.sqrt,
    },
}


def _jet_tan(x):
    if not isinstance(x, J.Jet):
        return _float_tan(x)
    t = J.sin(x) / J.cos(x)
    t.data[..., 0] = np.tan(x.primal)
    return t


_NAMESPACES["jet"]["_tan"] = _jet_tan
_WALK_FUNCS: dict[str, Callable] = {
    "sin": J.sin, "cos": J.cos, "tan": _jet_tan, "exp": J.exp, "log": J.log, "sqrt": J.sqrt,
}


def compile_exprs(exprs: Sequence[Expr], mode: str = "float") -> Callable:
    """Compile expressions into one function ``x -> tuple of values``.

    ``mode="float"`` expects a sequence of floats; ``mode="jet"`` accepts a
    :class:`Jet` (leading axis = variables) or floats.  On any evaluation
    failure the compiled function re-runs the tree walker, which raises
    :class:`DomainError` naming the offending node.
    """
    used: set[int] = set()

    def var(i):
        used.add(i)
        return f"x{i}"

    shared = _Shared(exprs)
    body = ", ".join(_gen(e, var, shared) for e in exprs)
    prelude = "".join(f"    x{i} = x[{i}]\n" for i in sorted(used)) + "".join(shared.lines)
    src = f"def _f(x):\n{prelude}    return ({body}{',' if len(exprs) == 1 else ''})\n"
    ns = dict(_NAMESPACES[mode])
    exec(src, ns)
    fast = ns["_f"]
    exprs = tuple(exprs)

    def run(x):
        try:
            return fast(x)
        except (ArithmeticError, ValueError, DomainError):
            return tuple(_walk(e, x) for e in exprs)

    run.source = src
    return run


def _compiled(e: Expr, mode: str) -> Callable:
    key = f"_compiled_{mode}"
    fn = e.__dict__.get(key)
    if fn is None:
        fn = compile_exprs([e], mode)
        object.__setattr__(e, key, fn)
    return fn


# public evaluation API -----------------------------------------------------

def evaluate(e: Expr, point: Sequence[float]) -> float:
    """Value-only fast path."""
    v = _compiled(e, "float")([float(p) for p in point])[0]
    if isinstance(v, complex):
        raise DomainError("complex result", e)
    return float(v)


def evaluate_jet(e: Expr, x: J.Jet):
    """Evaluate over a jet carrier; constants come back as floats."""
    return _compiled(e, "jet")(x)[0]


def eval_grad(e: Expr, point: Sequence[float]) -> tuple[float, np.ndarray]:
    """Value and gradient by one batched first-order jet pass."""
    p = np.asarray(point, dtype=float)
    n = p.size
    if n == 0:
        return evaluate(e, p), np.zeros(0)
    x = J.seed(J.Jet.constant(np.broadcast_to(p[:, None], (n, n)).copy()), np.eye(n))
    data = np.broadcast_to(J.as_jet(evaluate_jet(e, x)).promote(1).data, (n, 2))
    return float(data[0, 0]), np.array(data[:, 1])


@dataclass(frozen=True)
class Scalar2:
    """Value, gradient, and (symmetric) Hessian of a scalar at a point."""

    value: float
    grad: np.ndarray
    hess: np.ndarray


def eval2(e: Expr, point: Sequence[float]) -> Scalar2:
    """Value, gradient, and Hessian via second-order jets over all pairs."""
    p = np.asarray(point, dtype=float)
    n = p.size
    if n == 0:
        return Scalar2(evaluate(e, p), np.zeros(0), np.zeros((0, 0)))
    iu, ju = np.triu_indices(n)
    pairs = len(iu)
    eye = np.eye(n)
    base = J.Jet.constant(np.broadcast_to(p[:, None], (n, pairs)).copy())
    x = J.seed(J.seed(base, eye[:, iu]), eye[:, ju])
    y = evaluate_jet(e, x)
    data = np.broadcast_to(J.as_jet(y).promote(2).data, (pairs, 4))
    value = float(data[0, 0])
    grad = np.empty(n)
    grad[iu] = data[:, 1]
    hess = np.zeros((n, n))
    hess[iu, ju] = data[:, 3]
    hess[ju, iu] = data[:, 3]
    return Scalar2(value, grad, hess)
