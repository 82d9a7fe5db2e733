"""Symbolic expression kernel over jet coordinates.

Expressions are immutable trees built from constants, jet symbols
(time t, coordinates q<i>_<alpha>, controls z<A>, momenta p<i>_<alpha>,
named parameters), n-ary sums and products, numeric powers, quotients,
a small set of elementary functions, and unary negation.  Everything a
Lagrangian, a momentum table or a Hamiltonian needs to be written down
lives here; no deeper computer-algebra machinery (factorization,
trigonometric rewriting) is provided or wanted.

The calculus operations are `partial` (treating every jet symbol as an
independent variable) and `total_time_derivative` (the prolongation
operator d/dt = d/dt|_explicit + sum q<i>_{a+1} * d/dq<i>_a, which raises
the derivative order of a jet expression by one).  Both return simplified
trees.  `simplify` does constant folding, 0/1 identities and flattening
only, and preserves the numeric value of the tree.

Integer literals and ratios of them stay exact `fractions.Fraction`
values so that alternating-sign coefficients produced by repeated total
derivatives do not drift; decimal or exponent literals become floats.

All objects here are immutable and hashable; every function is pure and
safe to call from concurrent code.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence, Union

Number = Union[Fraction, float]

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt")

_SYMBOL_TOKEN = re.compile(r"^(t|q([0-9]+)_([0-9]+)|p([0-9]+)_([0-9]+)|z([0-9]+))$")
_IDENT = re.compile(r"[A-Za-z][A-Za-z0-9_]*")
_NUMBER = re.compile(r"[0-9]+(\.[0-9]+)?([eE][+-]?[0-9]+)?")


class ExpressionError(ValueError):
    """Structurally invalid expression (bad arity, zero denominator, ...)."""


class ParseError(ValueError):
    """Source text rejected; `offset` is the byte offset of the bad token."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class EvaluationError(ValueError):
    """Evaluation failed: unbound symbol or numeric domain violation."""


class JetDomainError(ValueError):
    """Total time derivative applied outside the jet coordinates."""


# ---------------------------------------------------------------------------
# symbols


@dataclass(frozen=True)
class JetSymbol:
    """One independent variable: t, q<i>_<a>, z<A>, p<i>_<a> or a parameter.

    `index` is the 1-based coordinate/control index, `order` the derivative
    order alpha (q, p only).  Equality and hashing are by value.
    """

    kind: str  # "t" | "q" | "z" | "p" | "par"
    index: int = 0
    order: int = 0
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("t", "q", "z", "p", "par"):
            raise ExpressionError(f"unknown symbol kind {self.kind!r}")
        if self.kind in ("q", "p", "z") and self.index < 1:
            raise ExpressionError(f"symbol index must be >= 1, got {self.index}")
        if self.kind in ("q", "p") and self.order < 0:
            raise ExpressionError(f"derivative order must be >= 0, got {self.order}")
        if self.kind == "par":
            if not _IDENT.fullmatch(self.name) or _SYMBOL_TOKEN.match(self.name):
                raise ExpressionError(f"invalid parameter name {self.name!r}")

    def __str__(self):
        if self.kind == "t":
            return "t"
        if self.kind == "q":
            return f"q{self.index}_{self.order}"
        if self.kind == "p":
            return f"p{self.index}_{self.order}"
        if self.kind == "z":
            return f"z{self.index}"
        return self.name


TIME = JetSymbol("t")


def coordinate(i: int, alpha: int) -> JetSymbol:
    """Jet coordinate q<i>_<alpha> (i >= 1, alpha >= 0)."""
    return JetSymbol("q", index=i, order=alpha)


def momentum(i: int, alpha: int) -> JetSymbol:
    """Canonical momentum p<i>_<alpha> conjugate to q<i>_<alpha>."""
    return JetSymbol("p", index=i, order=alpha)


def velocity(a: int) -> JetSymbol:
    """Control/velocity coordinate z<A> (A >= 1)."""
    return JetSymbol("z", index=a)


def parameter(name: str) -> JetSymbol:
    """Named constant appearing in a concrete Lagrangian."""
    return JetSymbol("par", name=name)


Binding = Mapping[JetSymbol, float]


# ---------------------------------------------------------------------------
# expression nodes


class Expression:
    """Base node.  Arithmetic operators build new trees."""

    __slots__ = ()

    def __add__(self, other):
        return add(self, as_expression(other))

    def __radd__(self, other):
        return add(as_expression(other), self)

    def __sub__(self, other):
        return add(self, Negate(as_expression(other)))

    def __rsub__(self, other):
        return add(as_expression(other), Negate(self))

    def __mul__(self, other):
        return mul(self, as_expression(other))

    def __rmul__(self, other):
        return mul(as_expression(other), self)

    def __truediv__(self, other):
        return Quotient(self, as_expression(other))

    def __rtruediv__(self, other):
        return Quotient(as_expression(other), self)

    def __pow__(self, exponent):
        return Power(self, exponent)

    def __neg__(self):
        return Negate(self)

    def __str__(self):
        return to_text(self)


def _as_number(value) -> Number:
    if isinstance(value, bool):
        raise ExpressionError("boolean is not a numeric value")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return value
    raise ExpressionError(f"not a numeric value: {value!r}")


@dataclass(frozen=True)
class Constant(Expression):
    value: Number

    def __post_init__(self):
        object.__setattr__(self, "value", _as_number(self.value))

    __str__ = Expression.__str__


@dataclass(frozen=True)
class Symbol(Expression):
    symbol: JetSymbol

    __str__ = Expression.__str__


@dataclass(frozen=True)
class Sum(Expression):
    terms: tuple

    def __post_init__(self):
        if len(self.terms) < 2:
            raise ExpressionError("Sum needs at least 2 operands")

    __str__ = Expression.__str__


@dataclass(frozen=True)
class Product(Expression):
    factors: tuple

    def __post_init__(self):
        if len(self.factors) < 2:
            raise ExpressionError("Product needs at least 2 operands")

    __str__ = Expression.__str__


@dataclass(frozen=True)
class Power(Expression):
    base: Expression
    exponent: Number

    def __post_init__(self):
        object.__setattr__(self, "exponent", _as_number(self.exponent))

    __str__ = Expression.__str__


@dataclass(frozen=True)
class Quotient(Expression):
    numerator: Expression
    denominator: Expression

    def __post_init__(self):
        if isinstance(self.denominator, Constant) and self.denominator.value == 0:
            raise ExpressionError("denominator is the constant zero")

    __str__ = Expression.__str__


@dataclass(frozen=True)
class Apply(Expression):
    fn: str
    arg: Expression

    def __post_init__(self):
        if self.fn not in FUNCTIONS:
            raise ExpressionError(f"unknown function {self.fn!r}")

    __str__ = Expression.__str__


@dataclass(frozen=True)
class Negate(Expression):
    arg: Expression

    __str__ = Expression.__str__


ZERO = Constant(Fraction(0))
ONE = Constant(Fraction(1))


def as_expression(value) -> Expression:
    if isinstance(value, Expression):
        return value
    return Constant(_as_number(value))


def add(*terms) -> Expression:
    """Sum of any number of operands; 0 terms -> 0, 1 term -> itself."""
    parts = tuple(as_expression(term) for term in terms)
    if not parts:
        return ZERO
    if len(parts) == 1:
        return parts[0]
    return Sum(parts)


def mul(*factors) -> Expression:
    """Product of any number of operands; 0 factors -> 1, 1 factor -> itself."""
    parts = tuple(as_expression(factor) for factor in factors)
    if not parts:
        return ONE
    if len(parts) == 1:
        return parts[0]
    return Product(parts)


def sym(symbol: JetSymbol) -> Expression:
    return Symbol(symbol)


def sin(arg) -> Expression:
    return Apply("sin", as_expression(arg))


def cos(arg) -> Expression:
    return Apply("cos", as_expression(arg))


def exp(arg) -> Expression:
    return Apply("exp", as_expression(arg))


def log(arg) -> Expression:
    return Apply("log", as_expression(arg))


def sqrt(arg) -> Expression:
    return Apply("sqrt", as_expression(arg))


# ---------------------------------------------------------------------------
# parsing

_TOKEN_EOF = "eof"
_TOKEN_NUMBER = "number"
_TOKEN_SYMBOL = "symbol"
_TOKEN_IDENT = "ident"
_TOKEN_OP = "op"


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    offset: int
    value: object = None


def _classify_word(word: str, offset: int) -> _Token:
    m = _SYMBOL_TOKEN.match(word)
    if m is None:
        return _Token(_TOKEN_IDENT, word, offset)
    if word == "t":
        return _Token(_TOKEN_SYMBOL, word, offset, TIME)
    head, rest = word[0], word[1:]
    if head == "z":
        index = int(rest)
        if index < 1:
            raise ParseError(f"malformed symbol token {word!r}: index must be >= 1", offset)
        return _Token(_TOKEN_SYMBOL, word, offset, velocity(index))
    i_text, a_text = rest.split("_")
    i, alpha = int(i_text), int(a_text)
    if i < 1:
        raise ParseError(f"malformed symbol token {word!r}: index is 1-based", offset)
    make = coordinate if head == "q" else momentum
    return _Token(_TOKEN_SYMBOL, word, offset, make(i, alpha))


def _tokenize(text: str) -> list:
    tokens = []
    pos = 0
    n = len(text)
    while pos < n:
        ch = text[pos]
        if ch.isspace():
            pos += 1
            continue
        if ch.isalpha():
            word = _IDENT.match(text, pos).group(0)
            tokens.append(_classify_word(word, pos))
            pos += len(word)
            continue
        if ch.isdigit():
            m = _NUMBER.match(text, pos)
            lit = m.group(0)
            if m.group(1) is None and m.group(2) is None:
                value: Number = Fraction(int(lit))
            else:
                value = float(lit)
            tokens.append(_Token(_TOKEN_NUMBER, lit, pos, value))
            pos += len(lit)
            continue
        if ch in "+-*/^()":
            tokens.append(_Token(_TOKEN_OP, ch, pos))
            pos += 1
            continue
        raise ParseError(f"unexpected character {ch!r}", pos)
    tokens.append(_Token(_TOKEN_EOF, "", n))
    return tokens


class _Parser:
    """Recursive descent over: expr -> term (+|- term)*; term -> factor (*|/ factor)*;
    factor -> "-" factor | power; power -> atom ("^" uexp)?; uexp -> "-" uexp | atom.

    `^` binds tighter than unary minus, which binds tighter than `*` `/`.
    Exponents must fold to a numeric constant.
    """

    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op: str):
        tok = self.peek()
        if tok.kind != _TOKEN_OP or tok.text != op:
            raise ParseError(f"expected {op!r}, found {tok.text or 'end of input'!r}", tok.offset)
        return self.advance()

    def parse(self) -> Expression:
        result = self.expr()
        tok = self.peek()
        if tok.kind != _TOKEN_EOF:
            raise ParseError(f"unexpected token {tok.text!r}", tok.offset)
        return result

    def expr(self) -> Expression:
        terms = [self.term()]
        while self.peek().kind == _TOKEN_OP and self.peek().text in "+-":
            op = self.advance().text
            rhs = self.term()
            terms.append(Negate(rhs) if op == "-" else rhs)
        return add(*terms)

    def term(self) -> Expression:
        acc = self.factor()
        factors = [acc]
        while self.peek().kind == _TOKEN_OP and self.peek().text in "*/":
            op = self.advance().text
            tok = self.peek()
            rhs = self.factor()
            if op == "*":
                factors.append(rhs)
            else:
                if isinstance(rhs, Constant) and rhs.value == 0:
                    raise ParseError("division by the constant zero", tok.offset)
                factors = [Quotient(mul(*factors), rhs)]
        return mul(*factors)

    def factor(self) -> Expression:
        tok = self.peek()
        if tok.kind == _TOKEN_OP and tok.text == "-":
            self.advance()
            return Negate(self.factor())
        return self.power()

    def power(self) -> Expression:
        base = self.atom()
        tok = self.peek()
        if tok.kind == _TOKEN_OP and tok.text == "^":
            self.advance()
            etok = self.peek()
            exponent = self.unary_exponent()
            folded = fold_constant(exponent)
            if folded is None:
                raise ParseError("exponent must be a numeric constant", etok.offset)
            return Power(base, folded)
        return base

    def unary_exponent(self) -> Expression:
        tok = self.peek()
        if tok.kind == _TOKEN_OP and tok.text == "-":
            self.advance()
            return Negate(self.unary_exponent())
        return self.atom()

    def atom(self) -> Expression:
        tok = self.advance()
        if tok.kind == _TOKEN_NUMBER:
            return Constant(tok.value)
        if tok.kind == _TOKEN_SYMBOL:
            return Symbol(tok.value)
        if tok.kind == _TOKEN_IDENT:
            nxt = self.peek()
            if nxt.kind == _TOKEN_OP and nxt.text == "(":
                if tok.text not in FUNCTIONS:
                    raise ParseError(f"unknown function {tok.text!r}", tok.offset)
                self.advance()
                arg = self.expr()
                self.expect_op(")")
                return Apply(tok.text, arg)
            return Symbol(parameter(tok.text))
        if tok.kind == _TOKEN_OP and tok.text == "(":
            inner = self.expr()
            self.expect_op(")")
            return inner
        raise ParseError(f"unexpected token {tok.text or 'end of input'!r}", tok.offset)


def parse(text: str) -> Expression:
    """Parse source text into an expression tree.

    Raises ParseError (with byte offset) on syntax errors, malformed
    symbol tokens such as `q0_1`, unknown functions, and non-constant
    exponents.
    """
    return _Parser(text).parse()


def fold_constant(e: Expression):
    """Return the exact numeric value of a constant tree, else None."""
    if isinstance(e, Constant):
        return e.value
    if isinstance(e, Negate):
        inner = fold_constant(e.arg)
        return None if inner is None else -inner
    if isinstance(e, Sum):
        total: Number = Fraction(0)
        for term in e.terms:
            v = fold_constant(term)
            if v is None:
                return None
            total = _num_add(total, v)
        return total
    if isinstance(e, Product):
        total = Fraction(1)
        for factor in e.factors:
            v = fold_constant(factor)
            if v is None:
                return None
            total = _num_mul(total, v)
        return total
    if isinstance(e, Quotient):
        num = fold_constant(e.numerator)
        den = fold_constant(e.denominator)
        if num is None or den is None or den == 0:
            return None
        if isinstance(num, Fraction) and isinstance(den, Fraction):
            return num / den
        return float(num) / float(den)
    if isinstance(e, Power):
        base = fold_constant(e.base)
        if base is None:
            return None
        return _num_pow(base, e.exponent)
    return None


# ---------------------------------------------------------------------------
# numeric helpers on Constant payloads


def _num_add(a: Number, b: Number) -> Number:
    if isinstance(a, Fraction) and isinstance(b, Fraction):
        return a + b
    return float(a) + float(b)


def _num_mul(a: Number, b: Number) -> Number:
    if isinstance(a, Fraction) and isinstance(b, Fraction):
        return a * b
    return float(a) * float(b)


def _num_pow(base: Number, exponent: Number):
    if isinstance(base, Fraction) and isinstance(exponent, Fraction) and exponent.denominator == 1:
        if base == 0 and exponent < 0:
            return None
        return base ** exponent.numerator
    try:
        return float(base) ** float(exponent)
    except (ValueError, ZeroDivisionError, OverflowError):
        return None


# ---------------------------------------------------------------------------
# evaluation


def evaluate(e: Expression, binding: Binding) -> float:
    """Evaluate with IEEE double semantics under the given symbol binding.

    The tree is normalized by `simplify` before the numeric pass, so
    evaluate(e) and evaluate(simplify(e)) are bit-for-bit identical.

    Raises EvaluationError on an unbound symbol (named) or a numeric
    domain violation (division by zero, log of a non-positive value, ...)
    citing the offending subexpression.
    """
    return _evaluate_raw(simplify(e), binding)


def _evaluate_raw(e: Expression, binding: Binding) -> float:
    if isinstance(e, Constant):
        return float(e.value)
    if isinstance(e, Symbol):
        try:
            return float(binding[e.symbol])
        except KeyError:
            raise EvaluationError(f"unbound symbol {e.symbol}") from None
    if isinstance(e, Sum):
        return math.fsum(_evaluate_raw(term, binding) for term in e.terms)
    if isinstance(e, Product):
        out = 1.0
        for factor in e.factors:
            out *= _evaluate_raw(factor, binding)
        return out
    if isinstance(e, Quotient):
        den = _evaluate_raw(e.denominator, binding)
        if den == 0.0:
            raise EvaluationError(f"division by zero in {to_text(e)}")
        return _evaluate_raw(e.numerator, binding) / den
    if isinstance(e, Power):
        base = _evaluate_raw(e.base, binding)
        exponent = e.exponent
        if isinstance(exponent, Fraction) and exponent.denominator == 1:
            k = exponent.numerator
            if base == 0.0 and k < 0:
                raise EvaluationError(f"zero raised to a negative power in {to_text(e)}")
            try:
                return base ** k
            except OverflowError:
                raise EvaluationError(f"overflow in {to_text(e)}") from None
        try:
            return float(base) ** float(exponent)
        except (ValueError, ZeroDivisionError, OverflowError):
            raise EvaluationError(f"invalid power in {to_text(e)}") from None
    if isinstance(e, Apply):
        arg = _evaluate_raw(e.arg, binding)
        if e.fn == "log" and arg <= 0.0:
            raise EvaluationError(f"log of a non-positive value in {to_text(e)}")
        if e.fn == "sqrt" and arg < 0.0:
            raise EvaluationError(f"sqrt of a negative value in {to_text(e)}")
        try:
            return getattr(math, e.fn)(arg)
        except OverflowError:
            raise EvaluationError(f"overflow in {to_text(e)}") from None
    if isinstance(e, Negate):
        return -_evaluate_raw(e.arg, binding)
    raise ExpressionError(f"not an expression node: {e!r}")


def free_symbols(e: Expression) -> frozenset:
    """Exact set of jet symbols appearing in the tree."""
    if isinstance(e, Constant):
        return frozenset()
    if isinstance(e, Symbol):
        return frozenset((e.symbol,))
    if isinstance(e, Sum):
        return frozenset().union(*(free_symbols(t) for t in e.terms))
    if isinstance(e, Product):
        return frozenset().union(*(free_symbols(f) for f in e.factors))
    if isinstance(e, Quotient):
        return free_symbols(e.numerator) | free_symbols(e.denominator)
    if isinstance(e, Power):
        return free_symbols(e.base)
    if isinstance(e, (Apply, Negate)):
        return free_symbols(e.arg)
    raise ExpressionError(f"not an expression node: {e!r}")


# ---------------------------------------------------------------------------
# calculus


def partial(e: Expression, s: JetSymbol) -> Expression:
    """Symbolic partial derivative, every other jet symbol held fixed."""
    return simplify(_partial(e, s))


def _partial(e: Expression, s: JetSymbol) -> Expression:
    if isinstance(e, Constant):
        return ZERO
    if isinstance(e, Symbol):
        return ONE if e.symbol == s else ZERO
    if isinstance(e, Sum):
        return add(*(_partial(t, s) for t in e.terms))
    if isinstance(e, Product):
        terms = []
        for k, factor in enumerate(e.factors):
            rest = e.factors[:k] + e.factors[k + 1:]
            terms.append(mul(_partial(factor, s), *rest))
        return add(*terms)
    if isinstance(e, Quotient):
        u, v = e.numerator, e.denominator
        num = add(mul(_partial(u, s), v), Negate(mul(u, _partial(v, s))))
        return Quotient(num, Power(v, 2))
    if isinstance(e, Power):
        k = e.exponent
        if k == 0:
            return ZERO
        return mul(Constant(k), Power(e.base, _num_add(k, Fraction(-1))), _partial(e.base, s))
    if isinstance(e, Apply):
        inner = _partial(e.arg, s)
        if e.fn == "sin":
            outer: Expression = cos(e.arg)
        elif e.fn == "cos":
            outer = Negate(sin(e.arg))
        elif e.fn == "exp":
            outer = exp(e.arg)
        elif e.fn == "log":
            return Quotient(inner, e.arg)
        else:  # sqrt
            return Quotient(inner, mul(Constant(2), sqrt(e.arg)))
        return mul(outer, inner)
    if isinstance(e, Negate):
        return Negate(_partial(e.arg, s))
    raise ExpressionError(f"not an expression node: {e!r}")


def total_time_derivative(e: Expression) -> Expression:
    """Prolongation derivative D_t on jet coordinates.

    D_t e = de/dt + sum over q<i>_a of q<i>_{a+1} * de/dq<i>_a.
    Parameters are constants under D_t.  Expressions containing momentum
    or control symbols are outside the jet coordinates and rejected.
    """
    symbols = free_symbols(e)
    for s in symbols:
        if s.kind in ("p", "z"):
            raise JetDomainError(
                f"total time derivative is defined on jet coordinates only; found {s}"
            )
    terms = [_partial(e, TIME)]
    for s in sorted((s for s in symbols if s.kind == "q"), key=lambda s: (s.index, s.order)):
        terms.append(mul(Symbol(coordinate(s.index, s.order + 1)), _partial(e, s)))
    return simplify(add(*terms))


def substitute(e: Expression, mapping: Mapping[JetSymbol, Expression]) -> Expression:
    """Replace symbols by expressions (simultaneous, no resubstitution)."""
    if isinstance(e, (Constant,)):
        return e
    if isinstance(e, Symbol):
        return mapping.get(e.symbol, e)
    if isinstance(e, Sum):
        return Sum(tuple(substitute(t, mapping) for t in e.terms))
    if isinstance(e, Product):
        return Product(tuple(substitute(f, mapping) for f in e.factors))
    if isinstance(e, Quotient):
        return Quotient(substitute(e.numerator, mapping), substitute(e.denominator, mapping))
    if isinstance(e, Power):
        return Power(substitute(e.base, mapping), e.exponent)
    if isinstance(e, Apply):
        return Apply(e.fn, substitute(e.arg, mapping))
    if isinstance(e, Negate):
        return Negate(substitute(e.arg, mapping))
    raise ExpressionError(f"not an expression node: {e!r}")


# ---------------------------------------------------------------------------
# simplification


def simplify(e: Expression) -> Expression:
    """Constant folding, 0/1 identities, flattening.  Value-preserving
    and idempotent; no trigonometric or algebraic rewriting beyond that.

    This is also the evaluation normal form: `evaluate` runs on the
    simplified tree, which is what makes it value-preserving bit for bit.
    """
    if isinstance(e, (Constant, Symbol)):
        return e
    if isinstance(e, Sum):
        terms = []
        const: Number = Fraction(0)
        for raw in e.terms:
            t = simplify(raw)
            parts = t.terms if isinstance(t, Sum) else (t,)
            for part in parts:
                if isinstance(part, Constant):
                    const = _num_add(const, part.value)
                else:
                    terms.append(part)
        if const != 0 or not terms:
            terms.append(Constant(const))
        return add(*terms)
    if isinstance(e, Product):
        factors = []
        const = Fraction(1)
        for raw in e.factors:
            f = simplify(raw)
            parts = f.factors if isinstance(f, Product) else (f,)
            for part in parts:
                if isinstance(part, Constant):
                    const = _num_mul(const, part.value)
                else:
                    factors.append(part)
        if const == 0:
            return Constant(const * 0)  # keeps float zero if a float fed in
        if const != 1 or not factors:
            factors.insert(0, Constant(const))
        return mul(*factors)
    if isinstance(e, Quotient):
        num = simplify(e.numerator)
        den = simplify(e.denominator)
        if isinstance(den, Constant):
            if den.value == 0:
                # leave the original denominator so evaluation reports
                # the division by zero instead of simplify raising
                return Quotient(num, e.denominator)
            # divide-by-rational becomes multiply-by-reciprocal (exact) so
            # the constant merges with any other coefficients
            if isinstance(den.value, Fraction):
                return simplify(mul(Constant(Fraction(1) / den.value), num))
            if den.value == 1.0:
                return num
            if isinstance(num, Constant):
                return Constant(float(num.value) / den.value)
        if isinstance(num, Constant) and num.value == 0:
            return num
        return Quotient(num, den)
    if isinstance(e, Power):
        base = simplify(e.base)
        if e.exponent == 1:
            return base
        if e.exponent == 0:
            return ONE
        if isinstance(base, Constant):
            folded = _num_pow(base.value, e.exponent)
            if folded is not None:
                return Constant(folded)
        return Power(base, e.exponent)
    if isinstance(e, Apply):
        return Apply(e.fn, simplify(e.arg))
    if isinstance(e, Negate):
        arg = simplify(e.arg)
        if isinstance(arg, Constant):
            return Constant(-arg.value)
        if isinstance(arg, Negate):
            return arg.arg
        return Negate(arg)
    raise ExpressionError(f"not an expression node: {e!r}")


def is_zero(e: Expression) -> bool:
    """True when the simplified tree is the constant 0."""
    s = simplify(e)
    return isinstance(s, Constant) and s.value == 0


# ---------------------------------------------------------------------------
# printing

_PREC_SUM = 1
_PREC_TERM = 2
_PREC_UNARY = 3
_PREC_POWER = 4
_PREC_ATOM = 5


def _number_text(value: Number):
    if isinstance(value, Fraction):
        if value.denominator == 1:
            text = str(value.numerator)
            prec = _PREC_UNARY if value < 0 else _PREC_ATOM
            return text, prec
        # spaced like a Quotient so the text reparses to a stable form
        text = f"{value.numerator} / {value.denominator}"
        return text, _PREC_TERM
    if not math.isfinite(value):
        raise ExpressionError(f"cannot print non-finite constant {value!r}")
    text = repr(value)
    return text, _PREC_UNARY if value < 0 else _PREC_ATOM


def _render(e: Expression, min_prec: int) -> str:
    text, prec = _raw_text(e)
    if prec < min_prec:
        return f"({text})"
    return text


def _raw_text(e: Expression):
    if isinstance(e, Constant):
        return _number_text(e.value)
    if isinstance(e, Symbol):
        return str(e.symbol), _PREC_ATOM
    if isinstance(e, Sum):
        pieces = [_render(e.terms[0], _PREC_SUM)]
        for term in e.terms[1:]:
            if isinstance(term, Negate):
                pieces.append(" - " + _render(term.arg, _PREC_TERM))
            elif isinstance(term, Constant) and term.value < 0:
                pieces.append(" - " + _render(Constant(-term.value), _PREC_TERM))
            else:
                pieces.append(" + " + _render(term, _PREC_TERM))
        return "".join(pieces), _PREC_SUM
    if isinstance(e, Product):
        pieces = [_render(e.factors[0], _PREC_TERM)]
        for factor in e.factors[1:]:
            pieces.append(" * " + _render(factor, _PREC_UNARY))
        return "".join(pieces), _PREC_TERM
    if isinstance(e, Quotient):
        num = _render(e.numerator, _PREC_TERM)
        den = _render(e.denominator, _PREC_UNARY)
        return f"{num} / {den}", _PREC_TERM
    if isinstance(e, Power):
        base = _render(e.base, _PREC_ATOM)
        etext, eprec = _number_text(e.exponent)
        if eprec < _PREC_UNARY or (isinstance(e.exponent, Fraction) and e.exponent.denominator != 1):
            etext = f"({etext})"
        return f"{base}^{etext}", _PREC_POWER
    if isinstance(e, Apply):
        return f"{e.fn}({_render(e.arg, _PREC_SUM)})", _PREC_ATOM
    if isinstance(e, Negate):
        return "-" + _render(e.arg, _PREC_UNARY), _PREC_UNARY
    raise ExpressionError(f"not an expression node: {e!r}")


def to_text(e: Expression) -> str:
    """Canonical source form; parse(to_text(parse(s))) round-trips stably."""
    return _render(e, 0)


# ---------------------------------------------------------------------------
# compiled evaluation (internal fast path for integrator inner loops)


def _codegen(e: Expression, names: Mapping[JetSymbol, str]) -> str:
    if isinstance(e, Constant):
        v = e.value
        if isinstance(v, Fraction):
            if v.denominator == 1:
                return f"({v.numerator})" if v < 0 else str(v.numerator)
            return f"({v.numerator}/{v.denominator})"
        return f"({v!r})"
    if isinstance(e, Symbol):
        try:
            return names[e.symbol]
        except KeyError:
            raise EvaluationError(f"unbound symbol {e.symbol}") from None
    if isinstance(e, Sum):
        return "(" + " + ".join(_codegen(t, names) for t in e.terms) + ")"
    if isinstance(e, Product):
        return "(" + " * ".join(_codegen(f, names) for f in e.factors) + ")"
    if isinstance(e, Quotient):
        return f"({_codegen(e.numerator, names)} / {_codegen(e.denominator, names)})"
    if isinstance(e, Power):
        k = e.exponent
        etext = str(k.numerator) if isinstance(k, Fraction) and k.denominator == 1 else repr(float(k))
        return f"({_codegen(e.base, names)} ** ({etext}))"
    if isinstance(e, Apply):
        return f"math.{e.fn}({_codegen(e.arg, names)})"
    if isinstance(e, Negate):
        return f"(-{_codegen(e.arg, names)})"
    raise ExpressionError(f"not an expression node: {e!r}")


def compile_evaluator(exprs: Sequence[Expression], args: Sequence[JetSymbol]) -> Callable:
    """Compile expressions into one positional function returning a tuple.

    The returned callable takes the argument values in the order of `args`
    and evaluates every expression with plain float arithmetic.  Semantics
    match `evaluate` except that domain violations surface as the usual
    Python arithmetic exceptions instead of EvaluationError.
    """
    names = {s: f"_v{k}" for k, s in enumerate(args)}
    params = ", ".join(names[s] for s in args)
    body = ", ".join(_codegen(simplify(e), names) for e in exprs)
    src = f"def _fn({params}):\n    return ({body}{',' if exprs else ''})"
    namespace = {"math": math}
    exec(compile(src, "<ostrokit-expr>", "exec"), namespace)
    return namespace["_fn"]
