"""Exact multivariate polynomial arithmetic over the rationals.

A polynomial in variables x1..x{dim} is a map from dense exponent tuples to
nonzero Fraction coefficients.  Exactness matters: the weight vectors and
exponent lattices computed downstream are rational identities, not floats.
Floating-point evaluation is available separately (batched through
``ahis.kernels``) for the numeric stages.
"""

from __future__ import annotations

import re
from fractions import Fraction
from typing import Dict, Iterable, Mapping, Sequence, Tuple

import numpy as np

from . import kernels

MAX_DIM = 8

Exponent = Tuple[int, ...]


class PolynomialError(ValueError):
    """Invalid polynomial data or operation."""


class ParseError(PolynomialError):
    """Syntax error in polynomial text; carries the character position."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (position {position})")
        self.position = position


def _check_exponent(exp: Sequence[int], dim: int) -> Exponent:
    t = tuple(int(e) for e in exp)
    if len(t) != dim:
        raise PolynomialError(f"exponent {t} has length {len(t)}, expected {dim}")
    if any(e < 0 for e in t):
        raise PolynomialError(f"negative exponent in {t}")
    return t


class Polynomial:
    """Immutable sparse polynomial with exact rational coefficients."""

    __slots__ = ("dim", "terms", "_float_cache", "_hash")

    def __init__(self, dim: int, terms: Mapping[Exponent, Fraction] | None = None):
        if not (0 <= dim <= MAX_DIM):
            raise PolynomialError(f"dimension {dim} outside supported range 0..{MAX_DIM}")
        object.__setattr__(self, "dim", int(dim))
        clean: Dict[Exponent, Fraction] = {}
        for exp, coeff in (terms or {}).items():
            c = Fraction(coeff)
            if c == 0:
                continue
            clean[_check_exponent(exp, dim)] = c
        object.__setattr__(self, "terms", clean)
        object.__setattr__(self, "_float_cache", None)
        object.__setattr__(self, "_hash", None)

    def __setattr__(self, *a):  # immutability guard
        raise AttributeError("Polynomial is immutable")

    # -- constructors ------------------------------------------------------

    @classmethod
    def zero(cls, dim: int) -> "Polynomial":
        return cls(dim, {})

    @classmethod
    def constant(cls, dim: int, value) -> "Polynomial":
        return cls(dim, {(0,) * dim: Fraction(value)})

    @classmethod
    def variable(cls, dim: int, index: int) -> "Polynomial":
        """x_{index}, 1-based."""
        if not (1 <= index <= dim):
            raise PolynomialError(f"variable index {index} out of range 1..{dim}")
        exp = [0] * dim
        exp[index - 1] = 1
        return cls(dim, {tuple(exp): Fraction(1)})

    @classmethod
    def monomial(cls, dim: int, exp: Sequence[int], coeff=1) -> "Polynomial":
        return cls(dim, {tuple(exp): Fraction(coeff)})

    # -- ring operations ---------------------------------------------------

    def _binop(self, other, sign: int) -> "Polynomial":
        if isinstance(other, (int, Fraction)):
            other = Polynomial.constant(self.dim, other)
        if self.dim != other.dim:
            raise PolynomialError("dimension mismatch")
        out = dict(self.terms)
        for exp, c in other.terms.items():
            out[exp] = out.get(exp, Fraction(0)) + sign * c
        return Polynomial(self.dim, out)

    def __add__(self, other):
        return self._binop(other, 1)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binop(other, -1)

    def __rsub__(self, other):
        return Polynomial.constant(self.dim, other) - self

    def __neg__(self):
        return Polynomial(self.dim, {e: -c for e, c in self.terms.items()})

    def __mul__(self, other):
        if isinstance(other, (int, Fraction)):
            c = Fraction(other)
            return Polynomial(self.dim, {e: c * v for e, v in self.terms.items()})
        if self.dim != other.dim:
            raise PolynomialError("dimension mismatch")
        out: Dict[Exponent, Fraction] = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, Fraction(0)) + c1 * c2
        return Polynomial(self.dim, out)

    __rmul__ = __mul__

    def __pow__(self, n: int):
        if n < 0:
            raise PolynomialError("negative power")
        out = Polynomial.constant(self.dim, 1)
        base = self
        while n:
            if n & 1:
                out = out * base
            base = base * base
            n >>= 1
        return out

    def __eq__(self, other):
        return (isinstance(other, Polynomial) and self.dim == other.dim
                and self.terms == other.terms)

    def __hash__(self):
        if self._hash is None:
            h = hash((self.dim, frozenset(self.terms.items())))
            object.__setattr__(self, "_hash", h)
        return self._hash

    def is_zero(self) -> bool:
        return not self.terms

    @property
    def support(self) -> Tuple[Exponent, ...]:
        return tuple(sorted(self.terms))

    def total_degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    def max_degree(self, j: int) -> int:
        """Largest exponent of x_{j+1} (0-based j)."""
        return max((e[j] for e in self.terms), default=0)

    def common_variable_factors(self) -> Tuple[int, ...]:
        """0-based indices j with x_{j+1} dividing every term."""
        if not self.terms:
            return ()
        return tuple(j for j in range(self.dim)
                     if all(e[j] >= 1 for e in self.terms))

    # -- calculus ----------------------------------------------------------

    def partial(self, j: int) -> "Polynomial":
        """Formal partial derivative in x_{j+1} (0-based j)."""
        out: Dict[Exponent, Fraction] = {}
        for exp, c in self.terms.items():
            if exp[j] == 0:
                continue
            e = list(exp)
            e[j] -= 1
            out[tuple(e)] = out.get(tuple(e), Fraction(0)) + c * exp[j]
        return Polynomial(self.dim, out)

    def gradient(self) -> Tuple["Polynomial", ...]:
        return tuple(self.partial(j) for j in range(self.dim))

    def hessian(self) -> Tuple[Tuple["Polynomial", ...], ...]:
        grad = self.gradient()
        rows = []
        for i in range(self.dim):
            row = []
            for j in range(self.dim):
                row.append(grad[min(i, j)].partial(max(i, j)))
            rows.append(tuple(row))
        return tuple(rows)

    # -- evaluation --------------------------------------------------------

    def evaluate(self, x: Sequence):
        """Exact Fraction result for exact input, float otherwise."""
        if len(x) != self.dim:
            raise PolynomialError(f"point has length {len(x)}, expected {self.dim}")
        exact = all(isinstance(v, (int, Fraction)) for v in x)
        if exact:
            total = Fraction(0)
            for exp, c in self.terms.items():
                term = c
                for v, e in zip(x, exp):
                    if e:
                        term *= Fraction(v) ** e
                total += term
            return total
        total_f = 0.0
        for exp, c in self.terms.items():
            term_f = float(c)
            for v, e in zip(x, exp):
                if e:
                    term_f *= float(v) ** e
            total_f += term_f
        return total_f

    def float_data(self):
        """(exponent int64 matrix, coefficient float vector) for the kernels."""
        if self._float_cache is None:
            exps = sorted(self.terms)
            if exps:
                E = np.array(exps, dtype=np.int64)
                c = np.array([float(self.terms[e]) for e in exps])
            else:
                E = np.zeros((0, self.dim), dtype=np.int64)
                c = np.zeros(0)
            object.__setattr__(self, "_float_cache", (E, c))
        return self._float_cache

    def evaluate_many(self, pts) -> np.ndarray:
        """Float evaluation on an (n, dim) array of points."""
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        if pts.shape[1] != self.dim:
            raise PolynomialError("point array has wrong dimension")
        E, c = self.float_data()
        if E.shape[0] == 0:
            return np.zeros(pts.shape[0])
        return kernels.polyval_many(E, c, pts)

    def gradient_many(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        E, c = self.float_data()
        if E.shape[0] == 0:
            return np.zeros_like(pts)
        return kernels.polygrad_many(E, c, pts)

    # -- weighted degrees --------------------------------------------------

    def weighted_degrees(self, sigma: Sequence[Fraction]) -> Dict[Exponent, Fraction]:
        return {e: sum(Fraction(s) * g for s, g in zip(sigma, e))
                for e in self.terms}

    def min_weighted_degree(self, sigma: Sequence[Fraction]) -> Fraction | None:
        degs = self.weighted_degrees(sigma)
        return min(degs.values()) if degs else None

    # -- formatting / serialization ----------------------------------------

    def to_text(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for exp in sorted(self.terms):
            c = self.terms[exp]
            mono = "*".join(
                f"x{j + 1}" + (f"^{e}" if e > 1 else "")
                for j, e in enumerate(exp) if e > 0
            )
            if not mono:
                s = str(c)
            elif abs(c) == 1:
                s = mono
            else:
                s = f"{abs(c)}*{mono}"
            sign = "-" if c < 0 else "+"
            if mono and abs(c) == 1 and c < 0:
                s = mono
            parts.append((sign, s))
        first_sign, first = parts[0]
        text = ("-" if first_sign == "-" else "") + first
        for sign, s in parts[1:]:
            text += f" {sign} {s}"
        return text

    def to_json(self) -> dict:
        return {
            "dim": self.dim,
            "terms": [{"coeff": str(self.terms[e]), "exp": list(e)}
                      for e in sorted(self.terms)],
        }

    @classmethod
    def from_json(cls, data: dict) -> "Polynomial":
        try:
            dim = int(data["dim"])
            terms = {tuple(t["exp"]): Fraction(t["coeff"]) for t in data["terms"]}
        except (KeyError, TypeError, ValueError) as exc:
            raise PolynomialError(f"bad polynomial JSON: {exc}") from exc
        return cls(dim, terms)

    def __repr__(self):
        return f"Polynomial({self.dim}, {self.to_text()!r})"


# -- text parser -------------------------------------------------------------

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>\d+\.\d+|\d+/\d+|\d+)
  | (?P<var>x\d+)
  | (?P<pow>\^|\*\*)
  | (?P<mul>\*)
  | (?P<plus>\+)
  | (?P<minus>-)
""", re.VERBOSE)


def _tokenize(text: str):
    pos = 0
    out = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "ws":
            out.append((kind, m.group(), pos))
        pos = m.end()
    return out


def parse_polynomial(text: str, dim: int) -> Polynomial:
    """Parse a sum of rational-coefficient monomials in x1..x{dim}.

    Accepted atoms: integers, decimals, p/q fractions, variables ``xN`` with
    optional ``^e`` (or ``**e``) powers; '*' between factors is optional.
    """
    tokens = _tokenize(text)
    if not tokens:
        raise ParseError("empty polynomial text", 0)
    terms: Dict[Exponent, Fraction] = {}
    i = 0
    n = len(tokens)
    first = True
    while i < n:
        sign = Fraction(1)
        saw_sign = False
        while i < n and tokens[i][0] in ("plus", "minus"):
            if tokens[i][0] == "minus":
                sign = -sign
            saw_sign = True
            i += 1
        if not first and not saw_sign:
            raise ParseError("expected '+' or '-' between terms", tokens[i][2])
        if i >= n:
            raise ParseError("dangling sign", tokens[-1][2])
        first = False
        coeff = sign
        exp = [0] * dim
        saw_factor = False
        expect_factor = True
        while i < n and tokens[i][0] in ("num", "var", "mul"):
            kind, value, pos = tokens[i]
            if kind == "mul":
                if not saw_factor:
                    raise ParseError("'*' without preceding factor", pos)
                expect_factor = True
                i += 1
                continue
            if not expect_factor and kind == "num":
                # "2 3" would be two adjacent numbers; reject.
                raise ParseError("unexpected number; missing operator?", pos)
            if kind == "num":
                coeff *= Fraction(value)
            else:
                idx = int(value[1:])
                if not (1 <= idx <= dim):
                    raise ParseError(
                        f"variable {value} out of range for dim={dim}", pos)
                power = 1
                if i + 1 < n and tokens[i + 1][0] == "pow":
                    if i + 2 >= n or tokens[i + 2][0] != "num":
                        raise ParseError("expected integer exponent after '^'",
                                         tokens[i + 1][2])
                    pval = tokens[i + 2][1]
                    if "/" in pval or "." in pval:
                        raise ParseError("exponent must be a nonnegative integer",
                                         tokens[i + 2][2])
                    power = int(pval)
                    i += 2
                exp[idx - 1] += power
            saw_factor = True
            expect_factor = kind == "num"
            i += 1
        if not saw_factor:
            raise ParseError("expected a term", tokens[i][2] if i < n else len(tokens))
        key = tuple(exp)
        terms[key] = terms.get(key, Fraction(0)) + coeff
    return Polynomial(dim, terms)


def load_polynomial(data, dim: int | None = None) -> Polynomial:
    """Accept a Polynomial, JSON dict, or text everywhere a germ is read."""
    if isinstance(data, Polynomial):
        return data
    if isinstance(data, dict):
        return Polynomial.from_json(data)
    if isinstance(data, str):
        if dim is None:
            raise PolynomialError("dim required to parse polynomial text")
        return parse_polynomial(data, dim)
    raise PolynomialError(f"cannot interpret {type(data).__name__} as polynomial")
