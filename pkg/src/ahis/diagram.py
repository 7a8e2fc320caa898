"""Newton polytope combinatorics for a singular germ.

The Newton polytope of a germ f is the Minkowski sum of its support with the
positive orthant; the diagram is the union of its compact faces.  Everything
here is exact: candidate normals are integer null vectors of difference
matrices built from support points (completed with coordinate directions for
the unbounded facets), verified against the supporting inequalities in
integer arithmetic.  A face is kept only when a strictly positive weight
selects it, and only maximal faces are emitted.

Also houses the weight-vector data attached to each face: the scaling
action, the quasihomogeneous sphere function, the Euler field, and the
rational exponent lattice generated by the normalized weights.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from math import gcd, lcm
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .polynomial import Exponent, Polynomial, PolynomialError


class DiagramError(ValueError):
    """Invalid input to a diagram computation."""


# ---------------------------------------------------------------------------
# weight vectors


@dataclass(frozen=True)
class WeightVector:
    """Positive rational weights sigma with the weighted degree they realize."""

    sigma: Tuple[Fraction, ...]
    weighted_degree: Fraction

    def __post_init__(self):
        if any(s <= 0 for s in self.sigma):
            raise DiagramError(f"weights must be positive: {self.sigma}")

    @property
    def dim(self) -> int:
        return len(self.sigma)

    def degree_of(self, exp: Sequence[int]) -> Fraction:
        return sum(s * e for s, e in zip(self.sigma, exp))

    def normalized(self) -> "WeightVector":
        """Rescale so the minimal weight equals 1."""
        m = min(self.sigma)
        return WeightVector(tuple(s / m for s in self.sigma),
                            self.weighted_degree / m)

    def is_normalized(self) -> bool:
        return min(self.sigma) == 1

    def to_json(self) -> dict:
        return {"sigma": [str(s) for s in self.sigma],
                "m": str(self.weighted_degree)}

    @classmethod
    def from_json(cls, data: dict) -> "WeightVector":
        return cls(tuple(Fraction(s) for s in data["sigma"]),
                   Fraction(data["m"]))


@dataclass(frozen=True)
class NewtonFace:
    """A maximal compact face: its support points, weight data and split f = f_face + remainder."""

    vertices: Tuple[Exponent, ...]
    weight: WeightVector
    face_poly: Polynomial
    remainder: Polynomial

    def __post_init__(self):
        m = self.weight.weighted_degree
        for v in self.vertices:
            if self.weight.degree_of(v) != m:
                raise DiagramError(f"vertex {v} violates weighted degree {m}")

    @property
    def dim(self) -> int:
        return self.weight.dim

    def to_json(self) -> dict:
        d = self.weight.to_json()
        d.update({
            "vertices": [list(v) for v in self.vertices],
            "face_poly": self.face_poly.to_json(),
            "remainder": self.remainder.to_json(),
        })
        return d

    @classmethod
    def from_json(cls, data: dict) -> "NewtonFace":
        return cls(tuple(tuple(v) for v in data["vertices"]),
                   WeightVector.from_json(data),
                   Polynomial.from_json(data["face_poly"]),
                   Polynomial.from_json(data["remainder"]))


@dataclass(frozen=True)
class NewtonDiagram:
    faces: Tuple[NewtonFace, ...]
    dim: int

    def to_json(self) -> dict:
        return {"dim": self.dim, "faces": [f.to_json() for f in self.faces]}

    @classmethod
    def from_json(cls, data: dict) -> "NewtonDiagram":
        return cls(tuple(NewtonFace.from_json(f) for f in data["faces"]),
                   int(data["dim"]))


# ---------------------------------------------------------------------------
# exact linear algebra helpers (small systems, Fraction Gaussian elimination)


def _null_vector(rows: List[Tuple[int, ...]], dim: int) -> Tuple[int, ...] | None:
    """Primitive integer null vector when the row space has rank dim-1."""
    mat = [[Fraction(x) for x in row] for row in rows]
    ncols = dim
    pivots = []
    r = 0
    for c in range(ncols):
        pivot = None
        for i in range(r, len(mat)):
            if mat[i][c] != 0:
                pivot = i
                break
        if pivot is None:
            continue
        mat[r], mat[pivot] = mat[pivot], mat[r]
        pv = mat[r][c]
        mat[r] = [x / pv for x in mat[r]]
        for i in range(len(mat)):
            if i != r and mat[i][c] != 0:
                f = mat[i][c]
                mat[i] = [a - f * b for a, b in zip(mat[i], mat[r])]
        pivots.append(c)
        r += 1
    if r != dim - 1:
        return None
    free = next(c for c in range(ncols) if c not in pivots)
    sol = [Fraction(0)] * ncols
    sol[free] = Fraction(1)
    for i, c in enumerate(pivots):
        sol[c] = -mat[i][free]
    denom = lcm(*[x.denominator for x in sol])
    ints = [int(x * denom) for x in sol]
    g = 0
    for x in ints:
        g = gcd(g, abs(x))
    return tuple(x // g for x in ints)


def _nondominated(points: List[Exponent]) -> List[Exponent]:
    """Points not of the form q + v with q in the set and v >= 0, v != 0."""
    out = []
    for p in points:
        dominated = any(q != p and all(a <= b for a, b in zip(q, p))
                        for q in points)
        if not dominated:
            out.append(p)
    return sorted(out)


# ---------------------------------------------------------------------------
# newton_diagram


def _facet_normals(points: List[Exponent], dim: int) -> List[Tuple[int, ...]]:
    """Candidate facet normals: componentwise-nonnegative null rays of
    difference sets completed by coordinate directions."""
    seen = set()
    out: List[Tuple[int, ...]] = []
    unit = [tuple(1 if j == i else 0 for j in range(dim)) for i in range(dim)]
    max_pts = min(dim, len(points))
    for npts in range(1, max_pts + 1):
        k = npts - 1  # affine dimension of the point subset
        for T in itertools.combinations(points, npts):
            diffs = [tuple(a - b for a, b in zip(T[i], T[0]))
                     for i in range(1, npts)]
            for J in itertools.combinations(range(dim), dim - 1 - k):
                rows = diffs + [unit[j] for j in J]
                sigma = _null_vector(rows, dim)
                if sigma is None:
                    continue
                neg = [x < 0 for x in sigma if x != 0]
                if all(neg):
                    sigma = tuple(-x for x in sigma)
                elif any(neg):
                    continue
                if sigma not in seen:
                    seen.add(sigma)
                    out.append(sigma)
    out.sort()
    return out


def newton_diagram(f: Polynomial) -> NewtonDiagram:
    """All maximal compact faces of the Newton polytope of f, with exact weights.

    Preconditions: f is nonzero and f(0) = 0 (no constant term).
    """
    if f.is_zero():
        raise DiagramError("empty polynomial has no Newton diagram")
    if (0,) * f.dim in f.terms:
        raise DiagramError("origin in support: not a germ vanishing at 0")
    support = sorted(f.terms)
    cand = _nondominated(support)
    dim = f.dim
    S_arr = np.array(cand, dtype=np.int64)
    normals = _facet_normals(cand, dim)

    # The normal cone of any face is spanned by the normals of the facets
    # containing it, so the sum over an independent spanning subset (size at
    # most dim) is a relative-interior weight selecting exactly that face.
    # Enumerating all subset sums of size <= dim therefore reaches every
    # face; strictly positive sums flag the compact ones.
    vals = np.array([S_arr @ np.asarray(s, dtype=np.int64) for s in normals])
    compact: Dict[Tuple[Exponent, ...], Tuple[int, ...]] = {}
    for size in range(1, min(dim, len(normals)) + 1):
        for idx in itertools.combinations(range(len(normals)), size):
            sigma = tuple(sum(normals[i][j] for i in idx) for j in range(dim))
            if any(x <= 0 for x in sigma):
                continue
            v = vals[list(idx)].sum(axis=0)
            m = v.min()
            verts = tuple(cand[i] for i in np.flatnonzero(v == m))
            compact.setdefault(verts, sigma)
    # maximality: drop faces strictly contained in another compact face
    keys = sorted(compact, key=lambda v: (-len(v), v))
    maximal: List[Tuple[Exponent, ...]] = []
    for v in keys:
        vs = set(v)
        if not any(vs < set(w) for w in maximal):
            maximal.append(v)

    faces = []
    full_support = support
    for verts in sorted(maximal):
        sigma_int = compact[verts]
        g = 0
        for s in sigma_int:
            g = gcd(g, s)
        sigma_prim = tuple(s // g for s in sigma_int)
        wv = WeightVector(tuple(Fraction(s) for s in sigma_prim),
                          Fraction(sum(s * e for s, e in zip(sigma_prim, verts[0]))))
        m = wv.weighted_degree
        on_face = []
        for exp in full_support:
            deg = wv.degree_of(exp)
            if deg == m:
                on_face.append(exp)
            elif deg < m:
                raise DiagramError("internal error: supporting inequality violated")
        face_poly = Polynomial(dim, {e: f.terms[e] for e in on_face})
        remainder = f - face_poly
        faces.append(NewtonFace(tuple(sorted(on_face)), wv, face_poly, remainder))
    return NewtonDiagram(tuple(faces), dim)


def face_polynomial(f: Polynomial, face: NewtonFace) -> Tuple[Polynomial, Polynomial]:
    """Split f into the part supported on the face and the remainder."""
    wv = face.weight
    m = wv.weighted_degree
    on: Dict[Exponent, Fraction] = {}
    for exp, c in f.terms.items():
        deg = wv.degree_of(exp)
        if deg == m:
            on[exp] = c
        elif deg < m:
            raise DiagramError("face does not belong to this polynomial")
    if set(on) != set(face.vertices):
        raise DiagramError("face does not belong to this polynomial")
    fg = Polynomial(f.dim, on)
    return fg, f - fg


# ---------------------------------------------------------------------------
# scaling action, sphere function, Euler field, exponent lattice


def scaling_apply(weight, t: float, x: Sequence) -> Tuple[float, ...]:
    """Componentwise scaling (t^{s_1} x_1, ..., t^{s_d} x_d)."""
    sigma = weight.sigma if isinstance(weight, WeightVector) else tuple(weight)
    if t <= 0:
        raise DiagramError("scaling parameter must be positive")
    return tuple(float(t) ** float(s) * float(v) for s, v in zip(sigma, x))


@dataclass(frozen=True)
class SphereFunction:
    """Quasihomogeneous replacement of |x|^2: sum of even pure powers.

    ``poly`` is sum_j x_j^{p_j} with p_j = degree * (1/sigma_j); it scales as
    lambda^degree under the weight's scaling action.
    """

    poly: Polynomial
    degree: Fraction
    weight: WeightVector


def phi_gamma(face: NewtonFace) -> SphereFunction:
    """Sphere function for a face: x_j^(2m/sigma_j) per coordinate.

    When 2m/sigma_j is not an even integer, m is scaled by the least integer
    multiple making every exponent even; level sets are unchanged.
    """
    wv = face.weight.normalized()
    m = wv.weighted_degree
    scale = lcm(*[(m / s).denominator for s in wv.sigma])
    degree = 2 * scale * m
    terms = {}
    for j, s in enumerate(wv.sigma):
        p = degree / s
        if p.denominator != 1 or p.numerator % 2 != 0:
            raise DiagramError(f"exponent {p} not an even integer after normalization")
        exp = [0] * wv.dim
        exp[j] = int(p)
        terms[tuple(exp)] = Fraction(1)
    return SphereFunction(Polynomial(wv.dim, terms), degree, wv)


def euler_apply(face: NewtonFace, p: Polynomial) -> Polynomial:
    """Apply the face's Euler field sum_j sigma_j x_j d/dx_j to p."""
    wv = face.weight
    out = Polynomial.zero(p.dim)
    for j in range(p.dim):
        xj = Polynomial.variable(p.dim, j + 1)
        out = out + wv.sigma[j] * xj * p.partial(j)
    return out


@dataclass(frozen=True)
class ExponentLattice:
    """Increasing enumeration of nonnegative integer combinations of the
    generators, up to a cutoff."""

    generators: Tuple[Fraction, ...]
    cutoff: Fraction
    sequence: Tuple[Fraction, ...]

    def contains(self, q) -> bool:
        q = Fraction(q)
        if q < 0 or q > self.cutoff:
            return False
        return q in set(self.sequence)


def exponent_lattice(weights, cutoff) -> ExponentLattice:
    """Enumerate {sum a_j nu_j <= cutoff, a_j >= 0 integers}.

    ``weights`` is a WeightVector (normalized, min weight 1) or a sequence of
    positive rationals.
    """
    if isinstance(weights, WeightVector):
        if not weights.is_normalized():
            raise DiagramError("exponent lattice expects normalized weights (min = 1)")
        gens = weights.sigma
    else:
        gens = tuple(Fraction(w) for w in weights)
        if any(g <= 0 for g in gens):
            raise DiagramError("lattice generators must be positive")
    cutoff = Fraction(cutoff)
    if cutoff <= 0:
        raise DiagramError("cutoff must be positive")
    gens_u = tuple(sorted(set(gens)))
    values = {Fraction(0)}
    frontier = [Fraction(0)]
    while frontier:
        new = []
        for v in frontier:
            for g in gens_u:
                w = v + g
                if w <= cutoff and w not in values:
                    values.add(w)
                    new.append(w)
        frontier = new
    return ExponentLattice(gens_u, cutoff, tuple(sorted(values)))


# ---------------------------------------------------------------------------
# tangent cone sampling check


@dataclass(frozen=True)
class TangentConeReport:
    """Measured constants for the cone approximation on a sampled slab."""

    n_samples: int
    max_residual_ratio: float        # max |f| / r^{m'} over samples
    remainder_degree: Fraction | None  # m' (weighted degree of the remainder)
    min_cosine: float                # min angle cosine between grad f, grad f_face
    cosine_threshold: float          # 1 - eps^2
    passed: bool


def tangent_cone_check(f: Polynomial, face: NewtonFace, samples: int,
                       eps: float, delta: float) -> TangentConeReport:
    """Sample the truncated cone {f_face = 0, phi <= eps^deg, |f| < delta} and
    report the measured remainder constant and gradient-angle cosine.

    Sampling walks the link parametrization scaled down by the weight action;
    fails when the slab contains no sample points.
    """
    from .parametrize import link_solve  # deferred: avoids import cycle

    if samples <= 0:
        raise DiagramError("samples must be positive")
    charts = link_solve(face, f, grid=max(8, int(np.sqrt(samples))))
    nu = face.weight.normalized()
    fg = face.face_poly
    rem = face.remainder
    m_prime = rem.min_weighted_degree(nu.sigma)
    n_radii = max(4, samples // max(1, sum(c.n_points for c in charts)))
    radii = eps * np.power(0.5, np.linspace(0.0, 6.0, n_radii))
    pts = []
    rs = []
    for chart in charts:
        Z = chart.grid_zeta
        for r in radii:
            scale = np.array([float(r) ** float(s) for s in nu.sigma])
            pts.append(Z * scale)
            rs.append(np.full(Z.shape[0], r))
    P = np.concatenate(pts, axis=0)
    R = np.concatenate(rs)
    fv = f.evaluate_many(P)
    keep = np.abs(fv) < delta
    if not np.any(keep):
        raise DiagramError("no sample points in the requested slab")
    P, R, fv = P[keep], R[keep], fv[keep]
    if m_prime is None:
        ratio = 0.0
    else:
        ratio = float(np.max(np.abs(fv) / R ** float(m_prime)))
    gf = f.gradient_many(P)
    gg = fg.gradient_many(P)
    num = np.abs(np.sum(gf * gg, axis=1))
    den = np.linalg.norm(gf, axis=1) * np.linalg.norm(gg, axis=1)
    ok = den > 1e-300
    cosines = num[ok] / den[ok]
    min_cos = float(np.min(cosines)) if cosines.size else 1.0
    threshold = 1.0 - eps ** 2
    return TangentConeReport(
        n_samples=int(P.shape[0]),
        max_residual_ratio=ratio,
        remainder_degree=m_prime,
        min_cosine=min_cos,
        cosine_threshold=threshold,
        passed=min_cos >= threshold,
    )
