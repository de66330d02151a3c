"""Integrand expressions in one variable ``x``.

Grammar (whitespace is ignored)::

    expr    = term { ("+" | "-") term } ;
    term    = unary { ("*" | "/") unary } ;
    unary   = "-" unary | power ;
    power   = primary [ "^" unary ] ;
    primary = number | "x" | func "(" expr ")" | "(" expr ")" ;
    func    = "exp" | "sin" | "cos" | "abs" | "sqrt" | "log" ;
    number  = digits [ "." digits ] [ ("e" | "E") [ "+" | "-" ] digits ] ;

``^`` binds tighter than unary minus and is right-associative, so
``-x^2`` is ``-(x^2)`` and ``2^3^2`` is ``2^9``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy import integrate

FUNCTIONS = ("exp", "sin", "cos", "abs", "sqrt", "log")


class ExprError(ValueError):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int, expected: frozenset[str] = frozenset()):
        detail = f" (expected one of: {', '.join(sorted(expected))})" if expected else ""
        super().__init__(f"{message} at byte {offset}{detail}")
        self.offset = offset
        self.expected = expected


class UnknownFunction(ExprSyntaxError):
    pass


class UnknownIdentifier(ExprSyntaxError):
    pass


class DomainError(ExprError):
    def __init__(self, subterm: "Expr", x: float, reason: str):
        super().__init__(f"{reason} in {unparse(subterm)} at x={x!r}")
        self.subterm = subterm
        self.x = x


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    pass


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    name: str
    arg: "Expr"


Expr = Union[Num, Var, Neg, BinOp, Call]


_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)


@dataclass
class _Tok:
    kind: str
    text: str
    offset: int


def _byte_offset(source: str, index: int) -> int:
    return len(source[:index].encode("utf-8"))


def _tokenize(source: str) -> list[_Tok]:
    toks = []
    pos = 0
    while True:
        while pos < len(source) and source[pos].isspace():
            pos += 1
        if pos >= len(source):
            break
        m = _TOKEN.match(source, pos)
        if m is None or m.end() == pos:
            raise ExprSyntaxError(f"unexpected character {source[pos]!r}", _byte_offset(source, pos))
        kind = m.lastgroup
        start = m.start(kind)
        toks.append(_Tok(kind, m.group(kind), _byte_offset(source, start)))
        pos = m.end()
    toks.append(_Tok("end", "", _byte_offset(source, len(source))))
    return toks


class _Parser:
    def __init__(self, source: str):
        self.toks = _tokenize(source)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def _fail(self, expected: set[str]):
        t = self.tok
        what = "end of input" if t.kind == "end" else repr(t.text)
        raise ExprSyntaxError(f"unexpected {what}", t.offset, frozenset(expected))

    def _accept(self, text: str) -> bool:
        if self.tok.kind == "op" and self.tok.text == text:
            self.i += 1
            return True
        return False

    def parse(self) -> Expr:
        e = self.expr()
        if self.tok.kind != "end":
            self._fail({"+", "-", "*", "/", "^", "end of input"})
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.tok.text
            self.i += 1
            e = BinOp(op, e, self.term())
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.tok.text
            self.i += 1
            e = BinOp(op, e, self.unary())
        return e

    def unary(self) -> Expr:
        if self._accept("-"):
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.primary()
        if self._accept("^"):
            return BinOp("^", base, self.unary())
        return base

    def primary(self) -> Expr:
        t = self.tok
        if t.kind == "num":
            self.i += 1
            return Num(float(t.text))
        if t.kind == "name":
            self.i += 1
            if t.text == "x":
                return Var()
            if self.tok.kind == "op" and self.tok.text == "(":
                if t.text not in FUNCTIONS:
                    raise UnknownFunction(f"unknown function {t.text!r}", t.offset, frozenset(FUNCTIONS))
                self.i += 1
                arg = self.expr()
                if not self._accept(")"):
                    self._fail({")"})
                return Call(t.text, arg)
            raise UnknownIdentifier(f"unknown identifier {t.text!r}", t.offset, frozenset({"x"}))
        if self._accept("("):
            e = self.expr()
            if not self._accept(")"):
                self._fail({")"})
            return e
        self._fail({"number", "x", "(", "-", *FUNCTIONS})


def parse(source: str) -> Expr:
    """Parse ``source`` into an expression tree."""
    return _Parser(source).parse()


def unparse(e: Expr) -> str:
    """Fully parenthesized text that parses back to the same tree."""
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, Var):
        return "x"
    if isinstance(e, Neg):
        return f"(-{unparse(e.arg)})"
    if isinstance(e, BinOp):
        return f"({unparse(e.left)} {e.op} {unparse(e.right)})"
    if isinstance(e, Call):
        return f"{e.name}({unparse(e.arg)})"
    raise TypeError(f"not an expression: {e!r}")


def _first_bad(x, mask) -> float:
    if np.ndim(mask) == 0:
        return float(x)
    xb = np.broadcast_to(x, mask.shape)
    return float(xb[np.argmax(mask)])


def _eval(e: Expr, x):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        return x
    if isinstance(e, Neg):
        return -_eval(e.arg, x)
    if isinstance(e, BinOp):
        a = _eval(e.left, x)
        b = _eval(e.right, x)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            zero = np.asarray(b) == 0
            if zero.any():
                raise DomainError(e, _first_bad(x, zero), "division by zero")
            return a / b
        r = np.power(np.asarray(a, dtype=float), b)
        bad = np.isnan(r) & ~np.isnan(np.asarray(a)) & ~np.isnan(np.asarray(b))
        if bad.any():
            raise DomainError(e, _first_bad(x, bad), "negative base with non-integer exponent")
        zero_neg = (np.asarray(a) == 0) & (np.asarray(b) < 0)
        if zero_neg.any():
            raise DomainError(e, _first_bad(x, zero_neg), "zero raised to a negative power")
        return r
    if isinstance(e, Call):
        a = _eval(e.arg, x)
        if e.name == "sqrt":
            neg = np.asarray(a) < 0
            if neg.any():
                raise DomainError(e, _first_bad(x, neg), "sqrt of a negative number")
            return np.sqrt(a)
        if e.name == "log":
            nonpos = np.asarray(a) <= 0
            if nonpos.any():
                raise DomainError(e, _first_bad(x, nonpos), "log of a non-positive number")
            return np.log(a)
        return {"exp": np.exp, "sin": np.sin, "cos": np.cos, "abs": np.abs}[e.name](a)
    raise TypeError(f"not an expression: {e!r}")


def evaluate(e: Expr, x):
    """Evaluate ``e`` at a float or an array of points.

    Raises :class:`DomainError` naming the subterm and the first offending
    ``x`` instead of returning NaN.
    """
    with np.errstate(all="ignore"):
        r = _eval(e, x)
    if np.ndim(x) == 0:
        return float(r)
    return np.broadcast_to(np.asarray(r, dtype=float), np.shape(x))


def support_radius(e: Expr, rel_tol: float = 1e-8, cap: float = 32.0, points: int = 20001) -> float:
    """Radius ``R >= 1`` beyond which ``|f| < rel_tol * max |f|`` on a scan of ``[-cap, cap]``.

    Points where ``f`` is not defined are skipped.
    """
    xs = np.linspace(-cap, cap, points)
    vals = np.array([_safe_abs(e, x) for x in xs]) if not _vector_ok(e, xs) else np.abs(evaluate(e, xs))
    vals = np.where(np.isfinite(vals), vals, np.nan)
    peak = np.nanmax(vals) if np.isfinite(vals).any() else 0.0
    if not peak > 0:
        return 1.0
    big = np.abs(xs[vals >= rel_tol * peak])
    step = xs[1] - xs[0]
    return float(min(cap, max(1.0, big.max() + step)))


def _vector_ok(e: Expr, xs) -> bool:
    try:
        evaluate(e, xs)
        return True
    except DomainError:
        return False


def _safe_abs(e: Expr, x: float) -> float:
    try:
        return abs(evaluate(e, x))
    except DomainError:
        return math.nan


@dataclass
class IntegrabilityReport:
    finite: bool | None
    value: float | None
    weight_power: float
    verdict: str
    diagnostics: dict = field(default_factory=dict)


class NonEvaluable(ExprError):
    pass


def _panel(e: Expr, weight: float, a: float, b: float) -> tuple[float, int]:
    """Integral of ``|f(x)| |x|^weight`` over ``[a, b]``; also count of undefined probe points."""
    bad = 0

    def g(x):
        nonlocal bad
        try:
            return abs(evaluate(e, x)) * abs(x) ** weight
        except DomainError:
            bad += 1
            return 0.0

    val, _ = integrate.quad(g, a, b, epsabs=1e-9, epsrel=1e-10, limit=200)
    return val, bad


def check_weighted_integrability(
    e: Expr, weight_power: float = 0.0, *, k_max: int = 40, run: int = 5, ratio: float = 0.9
) -> IntegrabilityReport:
    """Decide numerically whether ``int |f(x)| |x|^weight_power dx`` is finite.

    The line is covered by ``[-1, 1]`` and then dyadic shells
    ``2^(k-1) <= |x| <= 2^k``. The integral is declared finite after ``run``
    consecutive shells each shrink by a factor below ``ratio`` and infinite
    after ``run`` consecutive non-decreasing shells; otherwise the verdict is
    ``inconclusive``.
    """
    if weight_power < 0:
        raise ValueError("weight_power must be >= 0")
    probe = np.linspace(-2.0**10, 2.0**10, 4097)
    undefined = sum(1 for x in probe if math.isnan(_safe_abs(e, float(x))))
    if undefined > probe.size // 20:
        raise NonEvaluable(f"{unparse(e)} is undefined on {undefined}/{probe.size} probe points")

    total = 0.0
    for a, b in ((-1.0, 0.0), (0.0, 1.0)):
        v, _ = _panel(e, weight_power, a, b)
        total += v
    shells: list[float] = []
    decay = grow = 0
    prev = None
    verdict = "inconclusive"
    for k in range(1, k_max + 1):
        lo, hi = 2.0 ** (k - 1), 2.0**k
        left, _ = _panel(e, weight_power, -hi, -lo)
        right, _ = _panel(e, weight_power, lo, hi)
        shell = left + right
        shells.append(shell)
        total += shell
        negligible = shell <= 1e-15 * max(total, 1e-300) or shell == 0.0
        if prev is not None:
            if negligible or (prev > 0 and shell < ratio * prev):
                decay += 1
                grow = 0
            elif shell >= prev:
                grow += 1
                decay = 0
            else:
                decay = grow = 0
        prev = shell
        if decay >= run:
            verdict = "finite"
            break
        if grow >= run:
            verdict = "infinite"
            break
    if verdict == "finite":
        # the verdict is settled; keep refining the value while shells still matter
        k = len(shells)
        while k < k_max and shells[-1] > 1e-10 * total:
            k += 1
            lo, hi = 2.0 ** (k - 1), 2.0**k
            shell = _panel(e, weight_power, -hi, -lo)[0] + _panel(e, weight_power, lo, hi)[0]
            shells.append(shell)
            total += shell
    diagnostics = {"shells": shells, "partial_sum": total, "k_last": len(shells)}
    if verdict == "finite":
        r = shells[-1] / shells[-2] if len(shells) > 1 and shells[-2] > 0 else 0.0
        tail = shells[-1] * r / (1.0 - r) if 0 < r < 1 else 0.0
        diagnostics["tail_extrapolation"] = tail
        return IntegrabilityReport(True, total + tail, weight_power, verdict, diagnostics)
    if verdict == "infinite":
        return IntegrabilityReport(False, None, weight_power, verdict, diagnostics)
    return IntegrabilityReport(None, None, weight_power, verdict, diagnostics)
