"""Field expressions used in run configurations.

An expression is a signed sum of terms ``[coef*]name(args)`` or plain numbers,
e.g. ``1 + 0.3*Y(2,0)`` or ``killing(0,0,1) - 0.5*toroidal(2,1)``.  Names come
from a fixed registry; nothing is evaluated as Python.
"""

import re
from dataclasses import dataclass

import numpy as np

from core import surfcalc as sc
from core.errors import ConfigurationError

_TOKEN = re.compile(r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*(),]))")

SCALAR_TERMS = {"Y", "fourier", "const"}
VECTOR_TERMS = {"killing", "toroidal", "poloidal", "harmonic", "fourier_grad", "fourier_rot", "zero", "balance"}
ARITY = {
    "Y": (2,), "fourier": (2, 3), "const": (1,),
    "killing": (3,), "toroidal": (2,), "poloidal": (2,), "harmonic": (1,),
    "fourier_grad": (2, 3), "fourier_rot": (2, 3), "zero": (0,), "balance": (0,),
}
INTEGER_TERMS = {"Y", "fourier", "toroidal", "poloidal", "harmonic", "fourier_grad", "fourier_rot"}


@dataclass(frozen=True)
class Term:
    coef: float
    name: str
    args: tuple


@dataclass(frozen=True)
class Expression:
    text: str
    terms: tuple

    @property
    def kind(self):
        names = {t.name for t in self.terms if t.name != "const"}
        if names & VECTOR_TERMS:
            return "vector"
        return "scalar"

    @property
    def has_balance(self):
        return any(t.name == "balance" for t in self.terms)

    def without_balance(self):
        return Expression(self.text, tuple(t for t in self.terms if t.name != "balance"))


def _tokens(text):
    pos, out = 0, []
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ConfigurationError(f"cannot parse expression {text!r} at position {pos}")
        pos = m.end()
        kind = m.lastgroup
        out.append((kind, m.group(kind)))
    return out


def parse_expression(text):
    """Parse ``text`` into an Expression; raises ConfigurationError on bad syntax."""
    tokens = _tokens(str(text))
    if not tokens:
        raise ConfigurationError("empty field expression")
    i = 0

    def peek():
        return tokens[i] if i < len(tokens) else (None, None)

    def expect(value):
        nonlocal i
        if peek() != ("op", value):
            raise ConfigurationError(f"expected {value!r} in expression {text!r}")
        i += 1

    def number():
        nonlocal i
        sign = 1.0
        while peek()[0] == "op" and peek()[1] in "+-":
            sign = -sign if peek()[1] == "-" else sign
            i += 1
        kind, value = peek()
        if kind != "num":
            raise ConfigurationError(f"expected a number in expression {text!r}")
        i += 1
        return sign * float(value)

    terms = []
    sign = 1.0
    while i < len(tokens):
        while peek()[0] == "op" and peek()[1] in "+-":
            sign = -sign if peek()[1] == "-" else sign
            i += 1
        coef = 1.0
        if peek()[0] == "num":
            coef = number()
            if peek() == ("op", "*"):
                i += 1
            else:
                terms.append(Term(sign * coef, "const", (1.0,)))
                sign = 1.0
                if i < len(tokens) and not (peek()[0] == "op" and peek()[1] in "+-"):
                    raise ConfigurationError(f"unexpected token after number in {text!r}")
                continue
        kind, name = peek()
        if kind != "name":
            raise ConfigurationError(f"expected a term name in expression {text!r}")
        if name not in ARITY:
            raise ConfigurationError(f"unknown term {name!r} in expression {text!r}")
        i += 1
        expect("(")
        args = []
        if peek() != ("op", ")"):
            args.append(number())
            while peek() == ("op", ","):
                i += 1
                args.append(number())
        expect(")")
        if len(args) not in ARITY[name]:
            raise ConfigurationError(f"{name} takes {ARITY[name]} arguments, got {len(args)} in {text!r}")
        _check_args(name, args, text)
        terms.append(Term(sign * coef, name, tuple(args)))
        sign = 1.0
        if i < len(tokens) and not (peek()[0] == "op" and peek()[1] in "+-"):
            raise ConfigurationError(f"expected '+' or '-' between terms in {text!r}")
    return Expression(str(text).strip(), tuple(terms))


def _check_args(name, args, text):
    """Integer indices with the ranges each term is defined for."""
    call = f"{name}({','.join(f'{a:g}' for a in args)})"
    if name in INTEGER_TERMS and any(a != int(a) for a in args):
        raise ConfigurationError(f"{call} needs integer arguments in {text!r}")
    if name in ("Y", "toroidal", "poloidal"):
        l, m = args
        lowest = 0 if name == "Y" else 1
        if l < lowest or abs(m) > l:
            raise ConfigurationError(f"{call} needs l >= {lowest} and |m| <= l in {text!r}")
    if name == "harmonic" and args[0] not in (0, 1):
        raise ConfigurationError(f"{call}: the torus has harmonic fields 0 and 1 only, in {text!r}")
    if name.startswith("fourier") and len(args) == 3 and args[2] not in (0, 1):
        raise ConfigurationError(f"{call}: the phase flag must be 0 (cos) or 1 (sin) in {text!r}")


def _phase(args):
    return "sin" if len(args) == 3 and args[2] else "cos"


def _term_values(grid, term, kind):
    name, args = term.name, term.args
    if name == "const":
        if kind == "vector":
            raise ConfigurationError("constant terms are only allowed in scalar expressions")
        return np.full(grid.size, args[0])
    if name == "Y":
        if grid.backend != "sphere":
            raise ConfigurationError("Y(l,m) needs the sphere backend; use fourier(kt,kp) on the torus")
        return grid.harmonic(int(args[0]), int(args[1]))
    if name == "fourier":
        if grid.backend != "torus":
            raise ConfigurationError("fourier(kt,kp) needs the torus backend")
        return grid.fourier_mode(int(args[0]), int(args[1]), _phase(args))
    if name == "zero":
        return np.zeros((grid.size, 3))
    if name == "killing":
        return grid.tangential(sc.killing_field(grid, args))
    if name in ("toroidal", "poloidal"):
        return sc.vector_harmonic(grid, int(args[0]), int(args[1]), name)
    if name == "harmonic":
        if grid.backend != "torus":
            raise ConfigurationError("harmonic(i) needs the torus backend")
        return grid.harmonic_fields()[int(args[0])]
    if name in ("fourier_grad", "fourier_rot"):
        if grid.backend != "torus":
            raise ConfigurationError(f"{name} needs the torus backend")
        grad = sc.tangential_gradient(grid, grid.fourier_mode(int(args[0]), int(args[1]), _phase(args)))
        return grad if name == "fourier_grad" else np.cross(grid.normal, grad)
    raise ConfigurationError(f"term {name!r} cannot be evaluated directly")


def evaluate(grid, expression, kind):
    """Nodal values of an expression as a scalar (n,) or vector (n, 3) field."""
    expr = expression if isinstance(expression, Expression) else parse_expression(expression)
    if kind == "scalar" and expr.kind == "vector":
        raise ConfigurationError(f"expression {expr.text!r} is a vector field, a scalar is required")
    shape = (grid.size,) if kind == "scalar" else (grid.size, 3)
    out = np.zeros(shape)
    for term in expr.terms:
        if term.name in SCALAR_TERMS and term.name != "const" and kind == "vector":
            raise ConfigurationError(f"scalar term {term.name} in vector expression {expr.text!r}")
        out = out + term.coef * _term_values(grid, term, kind)
    return out
