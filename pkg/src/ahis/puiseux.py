"""Truncated Puiseux function space on a cylinder [0, eps] x Omega.

Elements are finite sums  sum_n f_n(xi) r^{q_n}  with nonnegative rational
exponents q_n and polynomial coefficient functions f_n on the cube
Omega = [-delta, delta]^k.  The norm is the coefficient-sum majorant

    |f|_P = sum_n ||f_n|| * eps^{q_n},   ||g|| = sum_a |g_a| delta^{|a|},

which is submultiplicative, so truncation tails stay certified through
arithmetic and through composition with analytic functions given by
truncated power series with polydisc radius data.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from math import lcm
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .diagram import ExponentLattice
from .polynomial import Polynomial, PolynomialError

DENOMINATOR_CAP = 512


class PuiseuxError(ValueError):
    """Invalid Puiseux-series data or operation."""


@dataclass(frozen=True)
class CubeDomain:
    """Cylinder geometry: eta_dim cube directions of half-width delta, radial
    extent epsilon."""

    eta_dim: int
    delta: float
    epsilon: float

    def __post_init__(self):
        if self.eta_dim < 0:
            raise PuiseuxError("eta_dim must be nonnegative")
        if self.delta <= 0 or self.epsilon <= 0:
            raise PuiseuxError("delta and epsilon must be positive")

    def with_epsilon(self, eps: float) -> "CubeDomain":
        return CubeDomain(self.eta_dim, self.delta, eps)


def coeff_norm(poly: Polynomial, delta: float) -> float:
    """Majorant norm sum_a |c_a| delta^{|a|} of a coefficient polynomial."""
    return float(sum(abs(float(c)) * float(delta) ** sum(e)
                     for e, c in poly.terms.items()))


class PuiseuxSeries:
    """Immutable truncated Puiseux function."""

    __slots__ = ("domain", "terms", "truncation_order", "tail_bound", "lattice")

    def __init__(self, domain: CubeDomain,
                 terms: Iterable[Tuple[Fraction, Polynomial]],
                 truncation_order,
                 tail_bound: float = 0.0,
                 lattice: ExponentLattice | None = None):
        object.__setattr__(self, "domain", domain)
        q_max = Fraction(truncation_order)
        merged: Dict[Fraction, Polynomial] = {}
        tail = float(tail_bound)
        for q, poly in terms:
            q = Fraction(q)
            if poly.dim != domain.eta_dim:
                raise PuiseuxError("coefficient dimension does not match domain")
            if poly.is_zero():
                continue
            if q < 0:
                raise PuiseuxError(f"negative exponent {q}")
            if q > q_max:
                tail += coeff_norm(poly, domain.delta) * domain.epsilon ** float(q)
                continue
            merged[q] = merged[q] + poly if q in merged else poly
        clean = tuple(sorted(((q, p) for q, p in merged.items() if not p.is_zero()),
                             key=lambda t: t[0]))
        if clean:
            d = lcm(*[q.denominator for q, _ in clean])
            if d > DENOMINATOR_CAP:
                raise PuiseuxError(
                    f"exponent denominator {d} exceeds cap {DENOMINATOR_CAP}")
        if lattice is not None:
            for q, _ in clean:
                if not lattice.contains(q):
                    raise PuiseuxError(f"exponent {q} not in attached lattice")
        object.__setattr__(self, "terms", clean)
        object.__setattr__(self, "truncation_order", q_max)
        object.__setattr__(self, "tail_bound", tail)
        object.__setattr__(self, "lattice", lattice)

    def __setattr__(self, *a):
        raise AttributeError("PuiseuxSeries is immutable")

    # -- constructors ------------------------------------------------------

    @classmethod
    def zero(cls, domain: CubeDomain, q_max) -> "PuiseuxSeries":
        return cls(domain, (), q_max)

    @classmethod
    def constant(cls, domain: CubeDomain, value, q_max) -> "PuiseuxSeries":
        return cls(domain, [(Fraction(0), Polynomial.constant(domain.eta_dim, value))],
                   q_max)

    @classmethod
    def monomial(cls, domain: CubeDomain, q, coeff, q_max) -> "PuiseuxSeries":
        """coeff * r^q with a constant or Polynomial coefficient."""
        if not isinstance(coeff, Polynomial):
            coeff = Polynomial.constant(domain.eta_dim, coeff)
        return cls(domain, [(Fraction(q), coeff)], q_max)

    @classmethod
    def from_polynomial(cls, domain: CubeDomain, poly: Polynomial, q_max) -> "PuiseuxSeries":
        """An r-independent coefficient function as a q=0 series."""
        return cls(domain, [(Fraction(0), poly)], q_max)

    # -- views -------------------------------------------------------------

    def is_zero(self) -> bool:
        return not self.terms

    @property
    def exponents(self) -> Tuple[Fraction, ...]:
        return tuple(q for q, _ in self.terms)

    def leading(self) -> Tuple[Fraction, Polynomial] | None:
        return self.terms[0] if self.terms else None

    def coefficient(self, q) -> Polynomial:
        q = Fraction(q)
        for qq, p in self.terms:
            if qq == q:
                return p
        return Polynomial.zero(self.domain.eta_dim)

    def _require_same_domain(self, other: "PuiseuxSeries"):
        if self.domain != other.domain:
            raise PuiseuxError("domain mismatch")

    def _merged_lattice(self, other: "PuiseuxSeries") -> ExponentLattice | None:
        if self.lattice is not None and self.lattice is other.lattice:
            return self.lattice
        return None

    # -- ring operations ----------------------------------------------------

    def __add__(self, other: "PuiseuxSeries") -> "PuiseuxSeries":
        self._require_same_domain(other)
        q_max = min(self.truncation_order, other.truncation_order)
        return PuiseuxSeries(self.domain, list(self.terms) + list(other.terms),
                             q_max, self.tail_bound + other.tail_bound,
                             self._merged_lattice(other))

    def __neg__(self) -> "PuiseuxSeries":
        return PuiseuxSeries(self.domain, [(q, -p) for q, p in self.terms],
                             self.truncation_order, self.tail_bound, self.lattice)

    def __sub__(self, other: "PuiseuxSeries") -> "PuiseuxSeries":
        return self + (-other)

    def __mul__(self, other) -> "PuiseuxSeries":
        if isinstance(other, (int, Fraction)):
            return PuiseuxSeries(
                self.domain, [(q, p * Fraction(other)) for q, p in self.terms],
                self.truncation_order, self.tail_bound * abs(float(other)),
                self.lattice)
        self._require_same_domain(other)
        q_max = min(self.truncation_order, other.truncation_order)
        terms = []
        for qa, pa in self.terms:
            for qb, pb in other.terms:
                terms.append((qa + qb, pa * pb))
        tail = (self.tail_bound * other.total_majorant()
                + other.tail_bound * self.total_majorant()
                + self.tail_bound * other.tail_bound)
        return PuiseuxSeries(self.domain, terms, q_max, tail,
                             self._merged_lattice(other))

    __rmul__ = __mul__

    def __eq__(self, other):
        return (isinstance(other, PuiseuxSeries)
                and self.domain == other.domain and self.terms == other.terms)

    def __hash__(self):
        return hash((self.domain, self.terms))

    def shift(self, dq) -> "PuiseuxSeries":
        """Multiply by r^{dq}; dq may be negative if all exponents stay >= 0."""
        dq = Fraction(dq)
        return PuiseuxSeries(self.domain, [(q + dq, p) for q, p in self.terms],
                             self.truncation_order + dq, self.tail_bound,
                             None)

    def truncate(self, q_max) -> "PuiseuxSeries":
        return PuiseuxSeries(self.domain, self.terms, Fraction(q_max),
                             self.tail_bound, self.lattice)

    def with_lattice(self, lattice: ExponentLattice | None) -> "PuiseuxSeries":
        return PuiseuxSeries(self.domain, self.terms, self.truncation_order,
                             self.tail_bound, lattice)

    def strip_tail(self) -> "PuiseuxSeries":
        """Drop the tail certificate; for exact iterative schemes that verify
        their result symbolically instead of by norm bookkeeping."""
        return PuiseuxSeries(self.domain, self.terms, self.truncation_order,
                             0.0, self.lattice)

    def with_epsilon(self, eps: float) -> "PuiseuxSeries":
        """Same coefficients on a cylinder of different radial extent."""
        return PuiseuxSeries(self.domain.with_epsilon(eps), self.terms,
                             self.truncation_order, self.tail_bound, self.lattice)

    # -- norms ---------------------------------------------------------------

    def norm(self) -> float:
        """Majorant norm: sum ||f_n|| eps^{q_n} over stored terms."""
        eps = self.domain.epsilon
        return float(sum(coeff_norm(p, self.domain.delta) * eps ** float(q)
                         for q, p in self.terms))

    def total_majorant(self) -> float:
        """Stored norm plus the certified tail of discarded content."""
        return self.norm() + self.tail_bound

    def leading_norm(self) -> float:
        """Norm contribution of the lowest-exponent term alone."""
        if not self.terms:
            return 0.0
        q, p = self.terms[0]
        return coeff_norm(p, self.domain.delta) * self.domain.epsilon ** float(q)

    # -- calculus -------------------------------------------------------------

    def r_derivative(self) -> "PuiseuxSeries":
        """Termwise q r^{q-1} f_n; constant (q=0) terms drop out.

        Raises when a fractional exponent in (0,1) would produce a negative
        power.  Tail certification does not survive differentiation; the tail
        is rescaled by Q_max/eps as a coarse Cauchy-type surrogate.
        """
        terms = []
        for q, p in self.terms:
            if q == 0:
                continue
            if q < 1:
                raise PuiseuxError(f"derivative of r^{q} leaves the space")
            terms.append((q - 1, p * q))
        tail = self.tail_bound * max(1.0, float(self.truncation_order)) / self.domain.epsilon
        return PuiseuxSeries(self.domain, terms, self.truncation_order - 1,
                             tail, None)

    def eta_derivative(self, j: int) -> "PuiseuxSeries":
        """Termwise partial derivative of the coefficient functions in xi_j."""
        if not (0 <= j < self.domain.eta_dim):
            raise PuiseuxError(f"eta index {j} out of range")
        deg = max((p.max_degree(j) for _, p in self.terms), default=0)
        tail = self.tail_bound * max(1, deg) / self.domain.delta
        return PuiseuxSeries(self.domain, [(q, p.partial(j)) for q, p in self.terms],
                             self.truncation_order, tail, self.lattice)

    # -- evaluation -----------------------------------------------------------

    def eval(self, r: float, xi: Sequence[float] = ()) -> float:
        """Numeric value at (r, xi); r=0 returns the q=0 coefficient value."""
        slack = 1e-9
        if not (-slack <= r <= self.domain.epsilon * (1 + slack) + slack):
            raise PuiseuxError(f"r={r} outside [0, {self.domain.epsilon}]")
        xi = tuple(xi)
        if len(xi) != self.domain.eta_dim:
            raise PuiseuxError("xi has wrong dimension")
        if any(abs(v) > self.domain.delta * (1 + slack) for v in xi):
            raise PuiseuxError("xi outside the cube")
        total = 0.0
        for q, p in self.terms:
            if r == 0:
                if q == 0:
                    total += float(p.evaluate(xi))
                continue
            total += float(p.evaluate(xi)) * float(r) ** float(q)
        return total

    def eval_many(self, r: np.ndarray, xi: np.ndarray | None = None) -> np.ndarray:
        """Vectorized evaluation; r shape (n,), xi shape (n, eta_dim)."""
        r = np.asarray(r, dtype=np.float64)
        n = r.shape[0]
        if xi is None:
            xi = np.zeros((n, self.domain.eta_dim))
        out = np.zeros(n)
        zero = r == 0.0
        rp = np.where(zero, 1.0, r)
        for q, p in self.terms:
            vals = p.evaluate_many(xi) if self.domain.eta_dim else \
                np.full(n, float(p.evaluate(())))
            radial = rp ** float(q)
            if q != 0:
                radial = np.where(zero, 0.0, radial)
            out += vals * radial
        return out

    # -- serialization ----------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "domain": {"eta_dim": self.domain.eta_dim,
                       "delta": self.domain.delta,
                       "epsilon": self.domain.epsilon},
            "truncation_order": str(self.truncation_order),
            "tail_bound": self.tail_bound,
            "terms": [{"q": str(q), "coeff": p.to_json()} for q, p in self.terms],
        }

    @classmethod
    def from_json(cls, data: dict) -> "PuiseuxSeries":
        dom = CubeDomain(int(data["domain"]["eta_dim"]),
                         float(data["domain"]["delta"]),
                         float(data["domain"]["epsilon"]))
        terms = [(Fraction(t["q"]), Polynomial.from_json(t["coeff"]))
                 for t in data["terms"]]
        return cls(dom, terms, Fraction(data["truncation_order"]),
                   float(data.get("tail_bound", 0.0)))

    def __repr__(self):
        inner = " + ".join(f"({p.to_text()})*r^{q}" for q, p in self.terms) or "0"
        return f"PuiseuxSeries[{inner}; Q<={self.truncation_order}]"


# -- module-level operation names ------------------------------------------


def p_add(a: PuiseuxSeries, b: PuiseuxSeries) -> PuiseuxSeries:
    return a + b


def p_mul(a: PuiseuxSeries, b: PuiseuxSeries) -> PuiseuxSeries:
    return a * b


def p_norm(a: PuiseuxSeries) -> float:
    return a.norm()


def p_eval(a: PuiseuxSeries, r: float, xi: Sequence[float] = ()) -> float:
    return a.eval(r, xi)


def r_derivative(a: PuiseuxSeries) -> PuiseuxSeries:
    return a.r_derivative()


def eta_derivative(a: PuiseuxSeries, j: int) -> PuiseuxSeries:
    return a.eta_derivative(j)


# ---------------------------------------------------------------------------
# analytic germs and composition


def _binomial_coeff(a: Fraction, n: int) -> Fraction:
    c = Fraction(1)
    for i in range(n):
        c *= (a - i)
        c /= (i + 1)
    return c


@dataclass(frozen=True)
class AnalyticGerm:
    """Truncated power series in k variables with polydisc radius data.

    ``coeffs`` holds g_a for |a| <= order; the full function is assumed to
    satisfy |g_a| <= majorant * prod_j radii_j^{-a_j} for ALL multi-indices,
    which certifies the composition tail.
    """

    dim: int
    coeffs: Dict[Tuple[int, ...], Fraction]
    order: int
    radii: Tuple[float, ...]
    majorant: float

    @classmethod
    def univariate(cls, coeffs: Sequence, radius: float = 1.0,
                   majorant: float | None = None) -> "AnalyticGerm":
        cmap = {(n,): Fraction(c) for n, c in enumerate(coeffs) if Fraction(c) != 0}
        order = len(coeffs) - 1
        if majorant is None:
            majorant = max([1.0] + [abs(float(c)) * radius ** n
                                    for n, c in enumerate(coeffs)])
        return cls(1, cmap, order, (radius,), majorant)

    @classmethod
    def geometric(cls, order: int) -> "AnalyticGerm":
        """1/(1-u) truncated: all coefficients 1, radius 1."""
        return cls.univariate([Fraction(1)] * (order + 1), 1.0, 1.0)

    @classmethod
    def binomial(cls, a, order: int) -> "AnalyticGerm":
        """(1+u)^a truncated; for |a| <= 1 the coefficients stay bounded by 1."""
        a = Fraction(a)
        coeffs = [_binomial_coeff(a, n) for n in range(order + 1)]
        maj = max([1.0] + [abs(float(c)) for c in coeffs])
        return cls.univariate(coeffs, 1.0, maj)

    @classmethod
    def identity(cls, dim: int = 1, j: int = 0) -> "AnalyticGerm":
        exp = tuple(1 if i == j else 0 for i in range(dim))
        return cls(dim, {exp: Fraction(1)}, 1, (1.0,) * dim, 1.0)


@dataclass(frozen=True)
class CompositionResult:
    series: PuiseuxSeries
    tail_bound: float       # certified sup bound on |g(F) - series| over the cylinder
    arg_norms: Tuple[float, ...]


def _series_powers(base: PuiseuxSeries, max_pow: int) -> List[PuiseuxSeries]:
    out = [PuiseuxSeries.constant(base.domain, 1, base.truncation_order), base]
    for _ in range(2, max_pow + 1):
        out.append(out[-1] * base)
    return out


def compose_analytic(g: AnalyticGerm, F: Sequence[PuiseuxSeries],
                     q_max=None) -> CompositionResult:
    """g(F_1, ..., F_k) in the Puiseux space, with a certified tail bound.

    Preconditions: the total majorants of the arguments fit strictly inside
    g's polydisc.  The result's exponents lie in the merged lattice generated
    by the argument exponents (automatic through the ring product).
    """
    if len(F) != g.dim:
        raise PuiseuxError(f"g expects {g.dim} arguments, got {len(F)}")
    if not F:
        raise PuiseuxError("empty argument list")
    domain = F[0].domain
    for s in F:
        if s.domain != domain:
            raise PuiseuxError("domain mismatch among arguments")
    if q_max is None:
        q_max = min(s.truncation_order for s in F)
    q_max = Fraction(q_max)
    norms = tuple(s.total_majorant() for s in F)
    ratios = [n / r for n, r in zip(norms, g.radii)]
    if any(x >= 1.0 for x in ratios):
        raise PuiseuxError(
            f"polydisc violation: argument majorants {norms} reach radii {g.radii}")

    powers = [_series_powers(s.truncate(q_max), g.order) for s in F]
    acc = PuiseuxSeries.zero(domain, q_max)
    for exp, c in sorted(g.coeffs.items()):
        term = PuiseuxSeries.constant(domain, c, q_max)
        for j, e in enumerate(exp):
            if e:
                term = term * powers[j][e]
        acc = acc + term

    # tail of g beyond its stored order, via the coefficient majorant
    full = 1.0
    for x in ratios:
        full *= 1.0 / (1.0 - x)
    partial = 0.0
    for exp in itertools.product(*[range(g.order + 1)] * g.dim):
        if sum(exp) > g.order:
            continue
        p = 1.0
        for x, e in zip(ratios, exp):
            p *= x ** e
        partial += p
    g_tail = g.majorant * max(0.0, full - partial)
    total_tail = acc.tail_bound + g_tail
    return CompositionResult(acc, total_tail, norms)


def poly_at_series(poly: Polynomial, F: Sequence[PuiseuxSeries]) -> PuiseuxSeries:
    """Exact evaluation of a polynomial at a vector of Puiseux series."""
    if len(F) != poly.dim:
        raise PuiseuxError("argument count does not match polynomial dimension")
    domain = F[0].domain
    q_max = min(s.truncation_order for s in F)
    max_pows = [max((e[j] for e in poly.terms), default=0) for j in range(poly.dim)]
    powers = [_series_powers(F[j].truncate(q_max), max_pows[j])
              for j in range(poly.dim)]
    acc = PuiseuxSeries.zero(domain, q_max)
    for exp in sorted(poly.terms):
        term = PuiseuxSeries.constant(domain, poly.terms[exp], q_max)
        for j, e in enumerate(exp):
            if e:
                term = term * powers[j][e]
        acc = acc + term
    return acc


# ---------------------------------------------------------------------------
# inverses and rational powers of units


def _unit_split(a: PuiseuxSeries) -> Tuple[Fraction, PuiseuxSeries]:
    """Write a = c0 (1 + u) with c0 the constant part of the q=0 coefficient."""
    c0 = a.coefficient(0).terms.get((0,) * a.domain.eta_dim, Fraction(0))
    if c0 == 0:
        raise PuiseuxError("series is not a unit (vanishing constant term)")
    u = a * (1 / c0) - PuiseuxSeries.constant(a.domain, 1, a.truncation_order)
    return c0, u


def _compose_order(u: PuiseuxSeries, q_max: Fraction, cap: int = 256) -> int:
    positive = [q for q in u.exponents if q > 0]
    order = cap
    if positive and not any(q == 0 for q in u.exponents):
        order = int(q_max / min(positive)) + 1
    return max(2, min(cap, order))


def _honest_truncation(u: PuiseuxSeries, series: PuiseuxSeries,
                       order: int) -> PuiseuxSeries:
    """Cap the claimed truncation at what ``order`` powers of u determine."""
    positive = [q for q in u.exponents if q > 0]
    if positive and not any(q == 0 for q in u.exponents):
        reach = order * min(positive)
        if reach < series.truncation_order:
            return series.truncate(reach)
    return series


def invert_unit(a: PuiseuxSeries, order: int | None = None) -> PuiseuxSeries:
    """1/a for a series with nonvanishing constant term and |a/c0 - 1| < 1."""
    c0, u = _unit_split(a)
    n = order or _compose_order(u, a.truncation_order)
    res = compose_analytic(AnalyticGerm.geometric(n), [-u])
    inv = res.series * (1 / c0)
    inv = PuiseuxSeries(inv.domain, inv.terms, inv.truncation_order,
                        inv.tail_bound + res.tail_bound / abs(float(c0)))
    return _honest_truncation(u, inv, n)


def unit_power(a: PuiseuxSeries, alpha, order: int | None = None) -> PuiseuxSeries:
    """a^alpha for rational alpha; requires a positive constant part.

    The scalar factor c0^alpha stays an exact Fraction when c0 is an exact
    power; otherwise it is folded in as a float coefficient.
    """
    alpha = Fraction(alpha)
    c0, u = _unit_split(a)
    if c0 <= 0:
        raise PuiseuxError("unit_power needs a positive constant part")
    n = order or _compose_order(u, a.truncation_order)
    res = compose_analytic(AnalyticGerm.binomial(alpha, n), [u])
    scale = _exact_rational_power(c0, alpha)
    out = res.series * scale if isinstance(scale, Fraction) else \
        _scale_float(res.series, scale)
    out = PuiseuxSeries(out.domain, out.terms, out.truncation_order,
                        out.tail_bound + res.tail_bound * abs(float(scale)))
    return _honest_truncation(u, out, n)


def _exact_rational_power(c: Fraction, alpha: Fraction):
    """c^alpha as Fraction when exact, else float."""
    def iroot(n: int, k: int):
        if n < 0:
            return None
        r = round(n ** (1.0 / k))
        for cand in (r - 1, r, r + 1):
            if cand >= 0 and cand ** k == n:
                return cand
        return None

    k = alpha.denominator
    pn = iroot(c.numerator, k)
    pd = iroot(c.denominator, k)
    if pn is not None and pd is not None:
        base = Fraction(pn, pd)
        return base ** alpha.numerator
    return float(c) ** float(alpha)


def _scale_float(a: PuiseuxSeries, s: float) -> PuiseuxSeries:
    return PuiseuxSeries(a.domain,
                         [(q, p * Fraction(s)) for q, p in a.terms],
                         a.truncation_order, a.tail_bound * abs(s))


def invert_radial_parameter(x: PuiseuxSeries, q_max=None) -> PuiseuxSeries:
    """Solve x(r(s)) = s for r(s), for a zero-eta-dim series x = a1*r*(1+...).

    Used to renormalize a plane-curve branch so the minimal-weight coordinate
    becomes the parameter itself.  Requires leading term a1 * r^1.  The
    iteration runs at a padded truncation so every coefficient up to q_max is
    exact; the defining identity is re-verified before returning.
    """
    if x.domain.eta_dim != 0:
        raise PuiseuxError("parameter inversion only supported for eta_dim=0")
    lead = x.leading()
    if lead is None or lead[0] != 1:
        raise PuiseuxError("series must have leading exponent 1")
    a1 = lead[1].terms[()]
    if q_max is None:
        q_max = x.truncation_order
    q_max = Fraction(q_max)
    dom = x.domain

    # Grow the trusted window step by step: the linear iteration gains one
    # exponent gap per pass, and keeping the series truncated to the window
    # avoids carrying (potentially huge) unconverged high-order data.
    window = Fraction(2)
    r = PuiseuxSeries.monomial(dom, 1, 1 / a1, window)
    for _ in range(512):
        xp = x.truncate(window).strip_tail()
        s_var = PuiseuxSeries.monomial(dom, 1, 1, window)
        xr = _substitute_radial(xp, r, window).truncate(window).strip_tail()
        err = (xr - s_var).truncate(window)
        if not err.is_zero():
            r = (r - err * (1 / a1)).truncate(window).strip_tail()
            continue
        if window >= q_max:
            return r
        window = min(Fraction(q_max), window + 1)
        r = r.truncate(window).strip_tail()
    raise PuiseuxError("parameter inversion did not converge")


def _substitute_radial(x: PuiseuxSeries, r: PuiseuxSeries,
                       q_max: Fraction) -> PuiseuxSeries:
    """x(r(s)) for eta_dim=0 series, with rational exponents via unit powers."""
    dom = x.domain
    lead = r.leading()
    if lead is None or lead[0] != 1:
        raise PuiseuxError("substitution expects a leading-exponent-1 series")
    a1 = lead[1].terms[()]
    unit = r.shift(-1) * (1 / a1)   # 1 + positive-exponent terms
    acc = PuiseuxSeries.zero(dom, q_max)
    for q, p in x.terms:
        c = p.terms[()]
        # r(s)^q = a1^q s^q (unit)^q
        uq = unit_power(unit.strip_tail(), q)
        scale = _exact_rational_power(a1, q)
        term = uq.shift(q) * (c if isinstance(scale, Fraction) else Fraction(1))
        if isinstance(scale, Fraction):
            term = term * scale
        else:
            term = _scale_float(term * c, scale)
        acc = acc + term.truncate(q_max)
    return acc
