"""Power-log asymptotics bookkeeping.

Multiplicity functions record which exponents (and log degrees) a one-sided
expansion may carry; convolving two expansions adds multiplicities at shared
exponents, which is exactly where logarithms appear.  The projector

    P_z[S] = prod_{z' <= z, z' != z} (x d/dx - z')^{S(z')}

annihilates every dictionary term below z, giving a symbolic membership test
for fitted expansions.  The resolvent-factor index and the Neumann-series
decay exponents are the scalar side of the same calculus: they predict how
fast each term of the perturbation series decays along the spectral ray.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Sequence, Tuple


class SalError(ValueError):
    """Invalid multiplicity or factor data."""


# ---------------------------------------------------------------------------
# multiplicity functions


@dataclass(frozen=True)
class MultiplicityFunction:
    """Finite map exponent -> positive integer multiplicity."""

    support: Tuple[Tuple[Fraction, int], ...]

    @classmethod
    def from_dict(cls, d: Dict) -> "MultiplicityFunction":
        items = []
        for z, m in d.items():
            m = int(m)
            if m <= 0:
                raise SalError(f"multiplicity at {z} must be positive")
            items.append((Fraction(z), m))
        return cls(tuple(sorted(items)))

    def as_dict(self) -> Dict[Fraction, int]:
        return dict(self.support)

    def __call__(self, z) -> int:
        return self.as_dict().get(Fraction(z), 0)

    @property
    def degree(self) -> int:
        return sum(m for _, m in self.support)

    def below(self, cutoff) -> "MultiplicityFunction":
        c = Fraction(cutoff)
        return MultiplicityFunction(tuple((z, m) for z, m in self.support if z < c))


def sal_convolution_exponents(s1: MultiplicityFunction,
                              s2: MultiplicityFunction) -> MultiplicityFunction:
    """Multiplicity function of a multiplicative convolution: supports merge
    and multiplicities add at coincidences (log-degree raising)."""
    out = s1.as_dict()
    for z, m in s2.support:
        out[z] = out.get(z, 0) + m
    return MultiplicityFunction.from_dict(out)


# ---------------------------------------------------------------------------
# symbolic expansions and projectors

# an expansion is a list of (exponent, log power, coefficient) triples
ExpansionTerm = Tuple[Fraction, int, float]


def _clean(terms: Sequence[ExpansionTerm]) -> List[ExpansionTerm]:
    acc: Dict[Tuple[Fraction, int], float] = {}
    for w, j, c in terms:
        if j < 0:
            continue
        key = (Fraction(w), int(j))
        acc[key] = acc.get(key, 0.0) + float(c)
    return sorted(((w, j, c) for (w, j), c in acc.items() if c != 0.0),
                  key=lambda t: (t[0], t[1]))


def euler_factor_apply(zp, terms: Sequence[ExpansionTerm]) -> List[ExpansionTerm]:
    """(x d/dx - z') applied termwise:
    (x d/dx - z')(x^w log^j x) = (w - z') x^w log^j x + j x^w log^{j-1} x."""
    zp = Fraction(zp)
    out: List[ExpansionTerm] = []
    for w, j, c in terms:
        out.append((w, j, float(w - zp) * c))
        if j >= 1:
            out.append((w, j - 1, j * c))
    return _clean(out)


def sal_projector_apply(s: MultiplicityFunction, z,
                        expansion: Sequence[ExpansionTerm]) -> List[ExpansionTerm]:
    """Apply P_z[S] = prod_{z' <= z, z' != z} (x d/dx - z')^{S(z')} symbolically.

    Terms with exponent in the support (and matching log degree below the
    multiplicity) are annihilated; surviving terms keep their exponents.
    """
    z = Fraction(z)
    terms = _clean(expansion)
    for zp, mult in s.support:
        if zp > z or zp == z:
            continue
        for _ in range(mult):
            terms = euler_factor_apply(zp, terms)
    return terms


def expansion_eval(terms: Sequence[ExpansionTerm], t) -> float:
    import numpy as np
    t = np.asarray(t, dtype=np.float64)
    out = np.zeros_like(t)
    for w, j, c in terms:
        out = out + c * np.power(t, float(w)) * np.log(t) ** j
    return out


# ---------------------------------------------------------------------------
# resolvent factor index


@dataclass(frozen=True)
class ResolventFactor:
    """Weighted factor r^beta d_theta^gamma d_r^d R(lambda)^m."""

    m: int
    beta: Fraction
    gamma: Tuple[int, ...]
    d: int
    alpha: Fraction

    def __post_init__(self):
        if self.alpha <= 0:
            raise SalError("alpha must be positive")

    def satisfies_family_constraint(self) -> bool:
        return self.beta >= 0 and self.beta / self.alpha + Fraction(self.d, 2) <= 1


def resolvent_index(f: ResolventFactor) -> Tuple[Fraction, Fraction | None]:
    """(index, deg_plus): the decay index of the factor and, for positive
    radial weight, its degree."""
    if f.beta <= 0:
        ind = f.m - f.beta / f.alpha + Fraction(f.d, 2)
        return ind, None
    ind = f.m - Fraction(f.d, 2)
    deg_plus = f.beta - f.d + 1
    return ind, deg_plus


@dataclass(frozen=True)
class NeumannTermDecay:
    kappa: Fraction                  # per-factor gain 1 - beta/alpha
    product_norm_exponent: Fraction  # lambda-decay of R (P R)^j
    trace_term_exponent: Fraction    # lambda-decay of the traced p-derivative term


def neumann_term_exponent(j: int, p: int, mu_list: Sequence, alpha,
                          n: int = 2) -> NeumannTermDecay:
    """Decay bookkeeping for the j-th perturbation term with p spectral
    derivatives.

    kappa = 1 - beta/alpha with beta the largest radial weight among the
    perturbation coefficients; requires kappa > 0 (summable series).  The
    traced term decays like |lambda|^{-(p + j - (n+5)/2) + 1/alpha}.
    """
    alpha = Fraction(alpha)
    if alpha <= 0:
        raise SalError("alpha must be positive")
    beta = max((Fraction(m) for m in mu_list), default=Fraction(0))
    kappa = 1 - beta / alpha
    if kappa <= 0:
        raise SalError(
            f"kappa = {kappa} <= 0: perturbation not subordinate to the model")
    product = Fraction(-1) - j * kappa
    trace = -(Fraction(p) + j - Fraction(n + 5, 2)) + 1 / alpha
    return NeumannTermDecay(kappa, product, trace)
