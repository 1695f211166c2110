"""Small expression language for superpotentials and deformation maps.

Expressions are immutable trees built from four node kinds: :class:`Const`,
:class:`Var`, :class:`Unary` (negation or a named function) and
:class:`Binary` (``+ - * / ^``).  Text is turned into a tree with
:func:`parse`, rendered back with :func:`render`, evaluated with
:func:`evaluate` (or :func:`compile_expr` for hot loops) and differentiated
symbolically with :func:`differentiate`.

Evaluation accepts either Python floats or NumPy arrays for the bound
variables, so the same tree can be sampled on a whole grid at once.

Grammar (highest precedence first)::

    atom     := number | name | name "(" expr ")" | "(" expr ")"
    power    := atom ["^" exponent]           (right associative)
    exponent := ("-" | "+") exponent | power
    unary    := ("-" | "+") unary | power
    term     := unary (("*" | "/") unary)*
    expr     := term (("+" | "-") term)*

``sec`` and ``csc`` are accepted by the parser and lowered to ``1/cos`` and
``1/sin``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence, Union

import numpy as np

__all__ = [
    "Expr",
    "Const",
    "Var",
    "Unary",
    "Binary",
    "ExprError",
    "ExprSyntaxError",
    "UnboundVariableError",
    "DomainError",
    "InversionError",
    "FUNCTIONS",
    "parse",
    "render",
    "evaluate",
    "compile_expr",
    "differentiate",
    "free_variables",
    "substitute",
    "invert_monotone",
]

Number = Union[float, np.ndarray]
Bindings = Mapping[str, Number]


# ---------------------------------------------------------------------------
# errors


class ExprError(Exception):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError, ValueError):
    """Raised by :func:`parse`; ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class UnboundVariableError(ExprError):
    def __init__(self, name: str):
        super().__init__(f"unbound variable {name!r}")
        self.name = name


class DomainError(ExprError, ArithmeticError):
    """An argument fell outside the domain of an operation.

    ``expr`` holds the rendered sub-expression that failed.
    """

    def __init__(self, message: str, expr: str):
        super().__init__(f"{message} in {expr}")
        self.expr = expr


class InversionError(ExprError):
    pass


# ---------------------------------------------------------------------------
# nodes


class Expr:
    """Base class of all expression nodes."""

    __slots__ = ()

    def __str__(self) -> str:
        return render(self)


@dataclass(frozen=True, repr=False)
class Const(Expr):
    value: float

    def __repr__(self):
        return f"Const({self.value!r})"


@dataclass(frozen=True, repr=False)
class Var(Expr):
    name: str

    def __repr__(self):
        return f"Var({self.name!r})"


@dataclass(frozen=True, repr=False)
class Unary(Expr):
    func: str  # "neg" or one of FUNCTIONS
    arg: Expr

    def __repr__(self):
        return f"Unary({self.func!r}, {self.arg!r})"


@dataclass(frozen=True, repr=False)
class Binary(Expr):
    op: str  # one of "+-*/^"
    left: Expr
    right: Expr

    def __repr__(self):
        return f"Binary({self.op!r}, {self.left!r}, {self.right!r})"


ZERO = Const(0.0)
ONE = Const(1.0)
TWO = Const(2.0)


# ---------------------------------------------------------------------------
# checked numeric kernels shared by the interpreter and compiled functions


def _is_array(x) -> bool:
    return isinstance(x, np.ndarray)


def _bad(mask) -> bool:
    return bool(np.any(mask))


def _sech(x):
    if _is_array(x):
        a = np.exp(-np.abs(x))
        return 2.0 * a / (1.0 + a * a)
    a = math.exp(-abs(x))
    return 2.0 * a / (1.0 + a * a)


def _safe(fn):
    def wrapped(x):
        try:
            return fn(x)
        except OverflowError:
            return math.copysign(math.inf, x) if fn is math.sinh else math.inf

    return wrapped


# name -> (scalar kernel, array kernel, predicate flagging bad arguments, message)
_KERNELS: dict[str, tuple[Callable, Callable, Callable | None, str]] = {
    "sin": (math.sin, np.sin, None, ""),
    "cos": (math.cos, np.cos, None, ""),
    "tan": (math.tan, np.tan, None, ""),
    "sinh": (_safe(math.sinh), np.sinh, None, ""),
    "cosh": (_safe(math.cosh), np.cosh, None, ""),
    "tanh": (math.tanh, np.tanh, None, ""),
    "sech": (_sech, _sech, None, ""),
    "arctan": (math.atan, np.arctan, None, ""),
    "arctanh": (math.atanh, np.arctanh, lambda z: np.abs(z) >= 1.0, "arctanh argument outside (-1, 1)"),
    "sqrt": (math.sqrt, np.sqrt, lambda z: z < 0.0, "sqrt of a negative number"),
    "exp": (_safe(math.exp), np.exp, None, ""),
    "ln": (math.log, np.log, lambda z: z <= 0.0, "ln of a non-positive number"),
}

FUNCTIONS = frozenset(_KERNELS) | {"sec", "csc"}


def _call(func: str, x, where: str):
    scalar, array, bad, message = _KERNELS[func]
    if bad is not None and _bad(bad(x)):
        raise DomainError(message, where)
    if _is_array(x):
        with np.errstate(over="ignore"):
            return array(x)
    return scalar(x)


def _div(a, b, where: str):
    if _bad(b == 0):
        raise DomainError("division by zero", where)
    return a / b


def _pow(a, b, where: str):
    if _is_array(a) or _is_array(b):
        a_, b_ = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float))
        if _bad((a_ < 0) & (b_ != np.round(b_))):
            raise DomainError("negative base with non-integer exponent", where)
        if _bad((a_ == 0) & (b_ < 0)):
            raise DomainError("division by zero", where)
        with np.errstate(over="ignore"):
            return np.power(a_, b_)
    if a < 0 and b != round(b):
        raise DomainError("negative base with non-integer exponent", where)
    if a == 0 and b < 0:
        raise DomainError("division by zero", where)
    try:
        return a**b
    except OverflowError:
        return math.inf


# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[-+*/^()]))"
)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        n = len(text)
        while pos < n:
            if text[pos:].strip() == "":
                break
            m = _TOKEN.match(text, pos)
            if m is None or m.end() == pos:
                bad = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
                raise ExprSyntaxError(f"unexpected character {text[bad]!r}", self._byte(bad))
            kind = m.lastgroup
            self.tokens.append((kind, m.group(kind), m.start(kind)))
            pos = m.end()
        self.i = 0

    def _byte(self, index: int) -> int:
        return len(self.text[:index].encode("utf-8"))

    def peek(self):
        if self.i < len(self.tokens):
            return self.tokens[self.i]
        return ("end", "", len(self.text))

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def error(self, message: str, tok=None):
        tok = tok or self.peek()
        return ExprSyntaxError(message, self._byte(tok[2]))

    def expect(self, value: str):
        tok = self.take()
        if tok[1] != value or tok[0] != "op":
            raise self.error(f"expected {value!r}", tok)

    def parse(self) -> Expr:
        if not self.tokens:
            raise ExprSyntaxError("empty expression", 0)
        e = self.expr()
        if self.peek()[0] != "end":
            raise self.error(f"unexpected token {self.peek()[1]!r}")
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            e = Binary(op, e, self.term())
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            e = Binary(op, e, self.unary())
        return e

    def unary(self) -> Expr:
        tok = self.peek()
        if tok[0] == "op" and tok[1] in "+-":
            self.take()
            inner = self.unary()
            return Unary("neg", inner) if tok[1] == "-" else inner
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return Binary("^", base, self.exponent())
        return base

    def exponent(self) -> Expr:
        tok = self.peek()
        if tok[0] == "op" and tok[1] in "+-":
            self.take()
            inner = self.exponent()
            return Unary("neg", inner) if tok[1] == "-" else inner
        return self.power()

    def atom(self) -> Expr:
        tok = self.take()
        kind, value, _ = tok
        if kind == "num":
            return Const(float(value))
        if kind == "name":
            if self.peek()[0] == "op" and self.peek()[1] == "(":
                if value not in FUNCTIONS:
                    raise self.error(f"unknown function {value!r}", tok)
                self.take()
                arg = self.expr()
                self.expect(")")
                if value == "sec":
                    return Binary("/", ONE, Unary("cos", arg))
                if value == "csc":
                    return Binary("/", ONE, Unary("sin", arg))
                return Unary(value, arg)
            return Var(value)
        if kind == "op" and value == "(":
            e = self.expr()
            self.expect(")")
            return e
        if kind == "end":
            raise self.error("unexpected end of input", tok)
        raise self.error(f"unexpected token {value!r}", tok)


def parse(text: str) -> Expr:
    """Parse ``text`` into an expression tree.

    Raises :class:`ExprSyntaxError` (with a byte offset) on malformed input,
    unknown function names or empty input.
    """
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# rendering

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}
_ATOM = 5


def _fmt(v: float) -> str:
    if v.is_integer() and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def _render(e: Expr) -> tuple[str, int]:
    if isinstance(e, Const):
        if e.value < 0 or (e.value == 0 and math.copysign(1.0, e.value) < 0):
            return "-" + _fmt(-e.value), _PREC["neg"]
        return _fmt(e.value), _ATOM
    if isinstance(e, Var):
        return e.name, _ATOM
    if isinstance(e, Unary):
        inner, p = _render(e.arg)
        if e.func == "neg":
            if p < _PREC["neg"]:
                inner = f"({inner})"
            return "-" + inner, _PREC["neg"]
        return f"{e.func}({inner})", _ATOM
    if isinstance(e, Binary):
        prec = _PREC[e.op]
        left, lp = _render(e.left)
        right, rp = _render(e.right)
        if e.op == "^":
            if lp <= prec:
                left = f"({left})"
            if rp < prec:
                right = f"({right})"
            return f"{left}^{right}", prec
        if lp < prec:
            left = f"({left})"
        if rp <= prec:
            right = f"({right})"
        return f"{left} {e.op} {right}", prec
    raise TypeError(f"not an expression: {e!r}")


def render(e: Expr) -> str:
    """Render ``e`` as text accepted by :func:`parse`."""
    return _render(e)[0]


# ---------------------------------------------------------------------------
# structure helpers


def free_variables(e: Expr) -> set[str]:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Unary):
        return free_variables(e.arg)
    if isinstance(e, Binary):
        return free_variables(e.left) | free_variables(e.right)
    return set()


def substitute(e: Expr, mapping: Mapping[str, Expr | float]) -> Expr:
    """Replace variables by expressions (or numbers), folding constants."""
    if isinstance(e, Var):
        if e.name in mapping:
            v = mapping[e.name]
            return v if isinstance(v, Expr) else Const(float(v))
        return e
    if isinstance(e, Unary):
        return _unary(e.func, substitute(e.arg, mapping))
    if isinstance(e, Binary):
        return _binary(e.op, substitute(e.left, mapping), substitute(e.right, mapping))
    return e


# ---------------------------------------------------------------------------
# evaluation


def evaluate(e: Expr, bindings: Bindings) -> Number:
    """Evaluate ``e`` with variables taken from ``bindings``.

    Values may be floats or NumPy arrays (broadcast elementwise).  An unbound
    variable raises :class:`UnboundVariableError`; an out-of-domain argument
    raises :class:`DomainError` naming the failing sub-expression.
    """
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        try:
            v = bindings[e.name]
        except KeyError:
            raise UnboundVariableError(e.name) from None
        return v if _is_array(v) else float(v)
    if isinstance(e, Unary):
        x = evaluate(e.arg, bindings)
        if e.func == "neg":
            return -x
        return _call(e.func, x, render(e))
    if isinstance(e, Binary):
        a = evaluate(e.left, bindings)
        b = evaluate(e.right, bindings)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            return _div(a, b, render(e))
        return _pow(a, b, render(e))
    raise TypeError(f"not an expression: {e!r}")


def compile_expr(
    exprs: Expr | Sequence[Expr],
    args: Sequence[str],
    constants: Bindings | None = None,
) -> Callable:
    """Compile one expression (or a sequence) into a Python function.

    The returned function takes the variables named in ``args`` positionally;
    names in ``constants`` are frozen in.  For a sequence of expressions it
    returns a tuple of values.  Semantics match :func:`evaluate`.
    """
    single = isinstance(exprs, Expr)
    items = [exprs] if single else list(exprs)
    constants = dict(constants or {})
    local_names = {name: f"a{k}" for k, name in enumerate(args)}
    namespace: dict[str, object] = {"_call": _call, "_div": _div, "_pow": _pow}
    where: list[str] = []

    def ref(text: str) -> str:
        where.append(text)
        return f"_w[{len(where) - 1}]"

    def gen(e: Expr) -> str:
        if isinstance(e, Const):
            return repr(e.value) if math.isfinite(e.value) else f"float({str(e.value)!r})"
        if isinstance(e, Var):
            if e.name in local_names:
                return local_names[e.name]
            if e.name in constants:
                return repr(float(constants[e.name]))
            raise UnboundVariableError(e.name)
        if isinstance(e, Unary):
            inner = gen(e.arg)
            if e.func == "neg":
                return f"(-{inner})"
            return f"_call({e.func!r}, {inner}, {ref(render(e))})"
        if isinstance(e, Binary):
            a, b = gen(e.left), gen(e.right)
            if e.op in "+-*":
                return f"({a} {e.op} {b})"
            if e.op == "/":
                return f"_div({a}, {b}, {ref(render(e))})"
            return f"_pow({a}, {b}, {ref(render(e))})"
        raise TypeError(f"not an expression: {e!r}")

    bodies = [gen(e) for e in items]
    namespace["_w"] = where
    params = ", ".join(local_names[n] for n in args)
    ret = bodies[0] if single else "(" + ", ".join(bodies) + ("," if len(bodies) == 1 else "") + ")"
    src = f"def _f({params}):\n    return {ret}\n"
    exec(compile(src, "<expr>", "exec"), namespace)
    return namespace["_f"]


# ---------------------------------------------------------------------------
# folding constructors


def _unary(func: str, a: Expr) -> Expr:
    if isinstance(a, Const):
        if func == "neg":
            return Const(-a.value)
        try:
            v = _call(func, a.value, func)
        except (DomainError, ValueError, OverflowError):
            return Unary(func, a)
        if isinstance(v, float) and math.isfinite(v):
            return Const(v)
    return Unary(func, a)


def _binary(op: str, a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        try:
            if op == "+":
                v = a.value + b.value
            elif op == "-":
                v = a.value - b.value
            elif op == "*":
                v = a.value * b.value
            elif op == "/":
                v = _div(a.value, b.value, "")
            else:
                v = _pow(a.value, b.value, "")
        except (DomainError, OverflowError):
            return Binary(op, a, b)
        if isinstance(v, float) and math.isfinite(v):
            return Const(v)
        return Binary(op, a, b)
    if op == "+":
        if a == ZERO:
            return b
        if b == ZERO:
            return a
    elif op == "-":
        if b == ZERO:
            return a
        if a == ZERO:
            return _unary("neg", b)
    elif op == "*":
        if a == ZERO or b == ZERO:
            return ZERO
        if a == ONE:
            return b
        if b == ONE:
            return a
    elif op == "/":
        if b == ONE:
            return a
        if a == ZERO:
            return ZERO
    elif op == "^":
        if b == ONE:
            return a
        if b == ZERO:
            return ONE
    return Binary(op, a, b)


def _add(a, b):
    return _binary("+", a, b)


def _sub(a, b):
    return _binary("-", a, b)


def _mul(a, b):
    return _binary("*", a, b)


def _divide(a, b):
    return _binary("/", a, b)


def _power(a, b):
    return _binary("^", a, b)


def _neg(a):
    return _unary("neg", a)


def _fn(name, a):
    return Unary(name, a)


# ---------------------------------------------------------------------------
# differentiation


def _outer_derivative(func: str, u: Expr) -> Expr:
    """d func(u) / du as an expression in ``u``."""
    if func == "sin":
        return _fn("cos", u)
    if func == "cos":
        return _neg(_fn("sin", u))
    if func == "tan":
        return _divide(ONE, _power(_fn("cos", u), TWO))
    if func == "sinh":
        return _fn("cosh", u)
    if func == "cosh":
        return _fn("sinh", u)
    if func == "tanh":
        return _power(_fn("sech", u), TWO)
    if func == "sech":
        return _neg(_mul(_fn("sech", u), _fn("tanh", u)))
    if func == "arctan":
        return _divide(ONE, _add(ONE, _power(u, TWO)))
    if func == "arctanh":
        return _divide(ONE, _sub(ONE, _power(u, TWO)))
    if func == "sqrt":
        return _divide(ONE, _mul(TWO, _fn("sqrt", u)))
    if func == "exp":
        return _fn("exp", u)
    if func == "ln":
        return _divide(ONE, u)
    raise ValueError(f"unknown function {func!r}")


def differentiate(e: Expr, var: str) -> Expr:
    """Exact symbolic partial derivative of ``e`` with respect to ``var``.

    The result is constant-folded (``x*1 -> x``, ``x+0 -> x``, constant
    sub-trees collapsed) but otherwise unsimplified.
    """
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == var else ZERO
    if isinstance(e, Unary):
        du = differentiate(e.arg, var)
        if e.func == "neg":
            return _neg(du)
        if du == ZERO:
            return ZERO
        return _mul(_outer_derivative(e.func, e.arg), du)
    if isinstance(e, Binary):
        u, v = e.left, e.right
        du, dv = differentiate(u, var), differentiate(v, var)
        if e.op == "+":
            return _add(du, dv)
        if e.op == "-":
            return _sub(du, dv)
        if e.op == "*":
            return _add(_mul(du, v), _mul(u, dv))
        if e.op == "/":
            if dv == ZERO:
                return _divide(du, v)
            return _divide(_sub(_mul(du, v), _mul(u, dv)), _power(v, TWO))
        # power
        if dv == ZERO:
            return _mul(_mul(v, _power(u, _sub(v, ONE))), du)
        if du == ZERO:
            return _mul(_mul(e, _fn("ln", u)), dv)
        return _mul(e, _add(_mul(dv, _fn("ln", u)), _divide(_mul(v, du), u)))
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# numeric inversion


def invert_monotone(
    f: Expr,
    y: Number,
    bracket: tuple[float, float],
    tol: float = 1e-13,
    var: str | None = None,
    constants: Bindings | None = None,
    max_iter: int = 200,
) -> Number:
    """Solve ``f(x) = y`` for ``x`` inside ``bracket``.

    ``f`` must be strictly monotone on the bracket.  The search is a bracketed
    bisection accelerated by Newton steps whenever the derivative is usable;
    ``y`` may be an array, in which case all points are solved together.

    Raises
    ------
    InversionError
        If ``f(lo) - y`` and ``f(hi) - y`` have the same sign, or the
        tolerance is not met within ``max_iter`` iterations.
    """
    names = sorted(free_variables(f) - set(constants or {}))
    if var is None:
        if len(names) > 1:
            raise ValueError(f"expression has several free variables: {names}")
        var = names[0] if names else "_x"
    func = compile_expr([f, differentiate(f, var)], [var], constants)
    scalar = np.ndim(y) == 0
    target = np.atleast_1d(np.asarray(y, dtype=float))
    lo = np.full_like(target, float(bracket[0]))
    hi = np.full_like(target, float(bracket[1]))

    def g(x):
        fx, dfx = func(x)
        fx = np.broadcast_to(np.asarray(fx, dtype=float), x.shape)
        return fx - target, np.broadcast_to(np.asarray(dfx, dtype=float), x.shape)

    glo, _ = g(lo)
    ghi, _ = g(hi)
    if np.any(np.sign(glo) * np.sign(ghi) > 0):
        k = int(np.argmax(np.sign(glo) * np.sign(ghi) > 0))
        raise InversionError(
            f"no sign change on bracket [{bracket[0]}, {bracket[1]}] for y={target[k]!r}"
        )
    increasing = np.where(glo != 0, glo < 0, ghi > 0)
    x = 0.5 * (lo + hi)
    x = np.where(glo == 0, lo, np.where(ghi == 0, hi, x))
    for _ in range(max_iter):
        gx, dgx = g(x)
        done = np.abs(gx) <= tol
        if done.all():
            break
        above = (gx > 0) == increasing
        hi = np.where(~done & above, x, hi)
        lo = np.where(~done & ~above, x, lo)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = x - gx / dgx
        ok = np.isfinite(newton) & (newton > lo) & (newton < hi)
        x = np.where(done, x, np.where(ok, newton, 0.5 * (lo + hi)))
    else:
        gx, _ = g(x)
        if not np.all(np.abs(gx) <= tol):
            k = int(np.argmax(np.abs(gx)))
            raise InversionError(
                f"tolerance {tol:g} not reached in {max_iter} iterations (residual {abs(gx[k]):.3g} at y={target[k]!r})"
            )
    return float(x[0]) if scalar else x
