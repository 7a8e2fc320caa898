"""Local parametrization of the hypersurface branch over a diagram face.

The construction: parametrize the quasihomogeneous link {f_face = 0, phi = 1}
by the free cube coordinates (implicit function theorem on a solved
coordinate pair), scale down by the weight action, and correct back onto the
hypersurface with a 1-D Newton iteration along the cone's gradient
direction.  The correction is a contraction for small radial extent, and the
resulting branch has the form  x_k = r^{nu_k} chi_k(r, eta)  with chi_k in
the truncated Puiseux space and exponents in the lattice generated by nu.

Two execution paths:

* exact (plane curves, rational link seed): the whole iteration runs inside
  the Puiseux ring with Fraction coefficients, and the branch is
  renormalized so the minimal-weight coordinate is the parameter itself;
* semi-numeric (higher dimension or irrational seed): Newton solves per
  (r, eta) grid point, then per-lattice-exponent least squares in r and a
  polynomial fit over eta, with the off-lattice energy reported.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from fractions import Fraction
from math import gcd
from typing import List, Sequence, Tuple

import numpy as np

from . import kernels
from .diagram import (DiagramError, ExponentLattice, NewtonFace, SphereFunction,
                      exponent_lattice, face_polynomial, phi_gamma)
from .polynomial import Polynomial
from .puiseux import (CubeDomain, PuiseuxSeries, invert_radial_parameter,
                      invert_unit, poly_at_series, _substitute_radial)


class ParametrizeError(ValueError):
    """Chart construction or Newton-scheme failure."""


class ContractionError(ParametrizeError):
    """Measured contraction factor too large for the current radial extent."""


# ---------------------------------------------------------------------------
# link charts


@dataclass(frozen=True)
class LinkChart:
    """Numeric chart of one branch of the link {f_face = 0, phi = 1}.

    ``grid_xi`` / ``grid_zeta`` hold the solved chart samples; ``zeta``
    re-solves on demand from an interpolated seed so the defining equations
    hold to solver tolerance at arbitrary cube points.
    """

    face: NewtonFace
    eta_domain: CubeDomain
    solved_indices: Tuple[int, int]
    grid_xi: np.ndarray
    grid_zeta: np.ndarray
    branch_id: int
    base_angle: float
    sphere: SphereFunction

    @property
    def n_points(self) -> int:
        return self.grid_zeta.shape[0]

    @property
    def dim(self) -> int:
        return self.grid_zeta.shape[1]

    def zeta(self, xi: Sequence[float]) -> np.ndarray:
        return self.zeta_many(np.atleast_2d(np.asarray(xi, dtype=np.float64)))[0]

    def zeta_many(self, xi: np.ndarray) -> np.ndarray:
        xi = np.atleast_2d(np.asarray(xi, dtype=np.float64))
        if self.eta_domain.eta_dim == 0:
            return np.repeat(self.grid_zeta, xi.shape[0], axis=0)
        seeds = np.empty((xi.shape[0], self.dim))
        for i, p in enumerate(xi):
            j = int(np.argmin(np.sum((self.grid_xi - p) ** 2, axis=1)))
            seeds[i] = self.grid_zeta[j]
        free = [j for j in range(self.dim) if j not in self.solved_indices]
        seeds[:, free] = xi
        return _polish_chart(self.face.face_poly, self.sphere.poly, seeds,
                             self.solved_indices)

    def to_json(self) -> dict:
        return {
            "face": self.face.to_json(),
            "eta_domain": {"eta_dim": self.eta_domain.eta_dim,
                           "delta": self.eta_domain.delta,
                           "epsilon": self.eta_domain.epsilon},
            "solved_indices": list(self.solved_indices),
            "branch_id": self.branch_id,
            "base_angle": self.base_angle,
            "base_point": [float(v) for v in self.grid_zeta[0]],
        }


def _polish_chart(f_face: Polynomial, phi: Polynomial, seeds: np.ndarray,
                  pair: Tuple[int, int], tol: float = 1e-14) -> np.ndarray:
    Ef, cf = f_face.float_data()
    Eg, cg = phi.float_data()
    pts, ok = kernels.chart_newton2_many(Ef, cf, Eg, cg, seeds,
                                         pair[0], pair[1], 1.0, tol, 80)
    if not np.all(ok):
        raise ParametrizeError("chart root solve diverged")
    return pts


def _jacobian_det(f_face: Polynomial, phi: Polynomial, pts: np.ndarray,
                  pair: Tuple[int, int]) -> np.ndarray:
    gf = f_face.gradient_many(pts)
    gg = phi.gradient_many(pts)
    i1, i2 = pair
    return gf[:, i1] * gg[:, i2] - gf[:, i2] * gg[:, i1]


def _base_points(f_face: Polynomial, sphere: SphereFunction,
                 pair: Tuple[int, int], n_scan: int = 720) -> List[Tuple[float, np.ndarray]]:
    """Roots of f_face on the phi = 1 curve inside the (i1, i2) coordinate
    plane, found by an angular scan plus bisection."""
    d = f_face.dim
    nu = sphere.weight.sigma
    deg = float(sphere.degree)
    i1, i2 = pair

    def point(theta: float) -> np.ndarray:
        x = np.zeros(d)
        x[i1], x[i2] = np.cos(theta), np.sin(theta)
        w = float(sphere.poly.evaluate_many(x[None, :])[0])
        rho = w ** (-1.0 / deg)
        scale = np.array([rho ** float(s) for s in nu])
        return x * scale

    thetas = np.linspace(0.0, 2 * np.pi, n_scan, endpoint=False)
    pts = np.array([point(t) for t in thetas])
    g = f_face.evaluate_many(pts)
    roots: List[Tuple[float, np.ndarray]] = []
    for k in range(n_scan):
        a, b = thetas[k], thetas[(k + 1) % n_scan] + (2 * np.pi if k == n_scan - 1 else 0)
        ga, gb = g[k], g[(k + 1) % n_scan]
        if ga == 0.0:
            roots.append((a, point(a)))
            continue
        if ga * gb < 0:
            lo, hi, glo = a, b, ga
            for _ in range(90):
                mid = 0.5 * (lo + hi)
                gm = float(f_face.evaluate_many(point(mid)[None, :])[0])
                if gm == 0.0:
                    lo = hi = mid
                    break
                if glo * gm < 0:
                    hi = mid
                else:
                    lo, glo = mid, gm
            th = 0.5 * (lo + hi)
            roots.append((th, point(th)))
    dedup: List[Tuple[float, np.ndarray]] = []
    for th, p in roots:
        if all(np.linalg.norm(p - q) > 1e-7 for _, q in dedup):
            dedup.append((th, p))
    return dedup


def _grid_points(eta_dim: int, delta: float, n_axis: int) -> np.ndarray:
    if eta_dim == 0:
        return np.zeros((1, 0))
    axes = [np.linspace(-delta, delta, n_axis)] * eta_dim
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def link_solve(face: NewtonFace, f: Polynomial, grid: int = 17,
               delta: float = 0.2, epsilon: float = 0.1) -> List[LinkChart]:
    """Solve the link equations over an eta grid, one chart per branch.

    ``grid`` is the node count per cube axis.  Charts are ordered by the
    angle of their base point in the solved-coordinate plane.
    """
    face_polynomial(f, face)  # validates the face belongs to f
    if f.common_variable_factors() or face.face_poly.common_variable_factors():
        raise ParametrizeError(
            "degenerate germ: a coordinate plane is contained in the zero set")
    d = f.dim
    if d < 2:
        raise ParametrizeError("ambient dimension must be at least 2")
    eta_dim = d - 2
    sphere = phi_gamma(face)
    fg = face.face_poly

    best = None
    for pair in itertools.combinations(range(d), 2):
        bases = _base_points(fg, sphere, pair)
        if not bases:
            continue
        pts = np.array([p for _, p in bases])
        dets = np.abs(_jacobian_det(fg, sphere.poly, pts, pair))
        if np.any(dets < 1e-8):
            continue
        score = float(np.min(dets))
        if best is None or score > best[0] + 1e-15:
            best = (score, pair, bases)
    if best is None:
        raise ParametrizeError(
            "no coordinate pair gives a nonsingular link Jacobian")
    _, pair, bases = best

    domain = CubeDomain(eta_dim, delta, epsilon)
    xi_grid = _grid_points(eta_dim, delta, grid)
    order = np.argsort(np.linalg.norm(xi_grid, axis=1), kind="stable")
    free = [j for j in range(d) if j not in pair]

    charts = []
    for bid, (theta, base) in enumerate(sorted(bases, key=lambda t: t[0])):
        zeta = np.zeros((xi_grid.shape[0], d))
        solved = {}
        for rank, idx in enumerate(order):
            xi = xi_grid[idx]
            if rank == 0:
                seed = base.copy()
            else:
                prev = min(solved, key=lambda j: np.sum((xi_grid[j] - xi) ** 2))
                seed = zeta[prev].copy()
            seed[free] = xi
            sol = _polish_chart(fg, sphere.poly, seed[None, :], pair)[0]
            if rank > 0:
                step = np.linalg.norm(xi_grid[prev] - xi) + 1e-30
                jump = np.linalg.norm(sol - zeta[prev])
                if jump > 50.0 * (1.0 + np.abs(sol).max()) * step + 1e-8:
                    raise ParametrizeError(
                        f"branch jump at xi={xi.tolist()} (chart discontinuity)")
            zeta[idx] = sol
            solved[idx] = True
        res_f = np.max(np.abs(fg.evaluate_many(zeta)))
        res_phi = np.max(np.abs(sphere.poly.evaluate_many(zeta) - 1.0))
        if max(res_f, res_phi) > 1e-10:
            raise ParametrizeError("chart residual exceeds tolerance")
        charts.append(LinkChart(face, domain, pair, xi_grid, zeta, bid,
                                float(theta), sphere))
    return charts


# ---------------------------------------------------------------------------
# normal field and pointwise Newton step


class NormalField:
    """Unit gradient direction of the face polynomial."""

    def __init__(self, face: NewtonFace, chart: LinkChart | None = None):
        self.face = face
        self.chart = chart
        self._fg = face.face_poly

    def __call__(self, x: Sequence[float]) -> np.ndarray:
        return self.at_many(np.atleast_2d(np.asarray(x, dtype=np.float64)))[0]

    def at_many(self, pts: np.ndarray) -> np.ndarray:
        g = self._fg.gradient_many(pts)
        norms = np.linalg.norm(g, axis=1)
        bad = norms < 1e-12
        if np.any(bad):
            where = pts[np.argmax(bad)]
            raise ParametrizeError(f"vanishing face gradient at {where.tolist()}")
        return g / norms[:, None]

    def at_scaled(self, r: float, xi: Sequence[float]) -> np.ndarray:
        if self.chart is None:
            raise ParametrizeError("scaled evaluation needs a chart")
        nu = self.face.weight.normalized().sigma
        z = self.chart.zeta(xi)
        x = z * np.array([float(r) ** float(s) for s in nu])
        return self(x)


def normal_field(face: NewtonFace, chart: LinkChart | None = None) -> NormalField:
    """Unit gradient direction of the face polynomial as a callable field."""
    return NormalField(face, chart)


def newton_step(f: Polynomial, eta: Sequence[float], n: Sequence[float],
                t: float) -> float:
    """One update of the 1-D root problem for f along the line eta + t*n."""
    eta = np.asarray(eta, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    p = eta + t * n
    fv = float(f.evaluate_many(p[None, :])[0])
    fp = float(np.dot(f.gradient_many(p[None, :])[0], n))
    if abs(fp) < 1e-14 * (1.0 + abs(fv)):
        raise ParametrizeError(
            f"directional derivative {fp:.3e} below threshold at {p.tolist()}")
    return t - fv / fp


# ---------------------------------------------------------------------------
# parametrization result


@dataclass(frozen=True)
class ContractionTelemetry:
    """Measured per-iteration difference norms of the Newton scheme."""

    norms: Tuple[float, ...]          # |T_n - T_{n-1}| per iteration
    leading_ratios: Tuple[float, ...]  # leading-term norm ratios
    max_ratio: float
    c_fit: float
    kappa_fit: float
    halvings: int
    epsilon_final: float

    def to_json(self) -> dict:
        return {"norms": list(self.norms),
                "leading_ratios": list(self.leading_ratios),
                "max_ratio": self.max_ratio, "c_fit": self.c_fit,
                "kappa_fit": self.kappa_fit, "halvings": self.halvings,
                "epsilon_final": self.epsilon_final}


@dataclass(frozen=True)
class Parametrization:
    """Branch map Phi(r, eta) = (r^{nu_k} chi_k(r, eta))_k into the hypersurface."""

    nu: Tuple[Fraction, ...]
    chi: Tuple[PuiseuxSeries, ...]
    chart: LinkChart
    residual_certificate: float
    branch_id: int
    contraction: ContractionTelemetry
    t_leading_exponent: float
    off_lattice_energy: float
    exact: bool

    @property
    def dim(self) -> int:
        return len(self.nu)

    @property
    def domain(self) -> CubeDomain:
        return self.chi[0].domain

    def evaluate_many(self, r: np.ndarray, xi: np.ndarray | None = None) -> np.ndarray:
        """Points Phi(r, xi), shape (n, dim)."""
        r = np.asarray(r, dtype=np.float64)
        cols = []
        for k in range(self.dim):
            vals = self.chi[k].eval_many(r, xi)
            cols.append(vals * r ** float(self.nu[k]))
        return np.stack(cols, axis=1)

    def to_json(self) -> dict:
        return {
            "nu": [str(v) for v in self.nu],
            "chi": [s.to_json() for s in self.chi],
            "chart": self.chart.to_json(),
            "residual_certificate": self.residual_certificate,
            "branch_id": self.branch_id,
            "contraction": self.contraction.to_json(),
            "t_leading_exponent": self.t_leading_exponent,
            "off_lattice_energy": self.off_lattice_energy,
            "exact": self.exact,
        }


def _fit_geometric_envelope(norms: Sequence[float]) -> Tuple[float, float, Tuple[float, ...]]:
    """Smallest (c, kappa) with |z_n| <= kappa n^2 c^n over the recorded norms."""
    nz = [(i + 1, v) for i, v in enumerate(norms) if v > 0]
    ratios = tuple(nz[i + 1][1] / nz[i][1] for i in range(len(nz) - 1))
    c = max([r for r in ratios] + [1e-6])
    c = min(c, 0.999999)
    kappa = max((v / (n * n * c ** n) for n, v in nz), default=0.0)
    return c, kappa, ratios


# ---------------------------------------------------------------------------
# exact plane-curve path


def _rational_roots(g: Polynomial) -> List[Fraction]:
    """All rational roots of a univariate (dim=1) polynomial, exact check."""
    coeffs = {}
    for exp, c in g.terms.items():
        coeffs[exp[0]] = c
    if not coeffs:
        return []
    denom = 1
    for c in coeffs.values():
        denom = denom * c.denominator // gcd(denom, c.denominator)
    ints = {k: int(c * denom) for k, c in coeffs.items()}
    low = min(ints)
    if low > 0:  # factor out x^low; x=0 root handled separately
        ints = {k - low: v for k, v in ints.items()}
    deg = max(ints)
    a0, an = ints.get(0, 0), ints[deg]
    roots = []
    if a0 == 0:
        roots.append(Fraction(0))
        while ints.get(0, 0) == 0 and deg > 0:
            ints = {k - 1: v for k, v in ints.items() if k >= 1}
            deg -= 1
            a0 = ints.get(0, 0)
    if a0 != 0:
        def divisors(n):
            n = abs(n)
            out = set()
            i = 1
            while i * i <= n:
                if n % i == 0:
                    out.add(i)
                    out.add(n // i)
                i += 1
            return out
        for p in divisors(a0):
            for q in divisors(an):
                for cand in (Fraction(p, q), Fraction(-p, q)):
                    if g.evaluate((cand,)) == 0 and cand not in roots:
                        roots.append(cand)
    return sorted(set(roots))


def _series_divide(a: PuiseuxSeries, b: PuiseuxSeries) -> PuiseuxSeries:
    """a / b where b = c r^{q0} (1 + ...) is a shifted unit."""
    lead = b.leading()
    if lead is None:
        raise ParametrizeError("division by zero series")
    q0 = lead[0]
    binv = invert_unit(b.shift(-q0))
    return (a * binv).shift(-q0)


def _exact_branch(f: Polynomial, face: NewtonFace, chart: LinkChart,
                  q_max: Fraction, eps: float, tol: float
                  ) -> Tuple[Parametrization, bool]:
    """Plane-curve Newton scheme inside the Puiseux ring.

    Gauge: the minimal-weight coordinate is set to sign * r on the cone, so
    the seed is a rational root of the dehomogenized face polynomial; the
    final branch is renormalized to make that coordinate the parameter
    exactly.  Returns (parametrization, ok); ok=False signals fallback to the
    numeric path (irrational seed).
    """
    d = f.dim
    nu = face.weight.normalized().sigma
    m = face.weight.normalized().weighted_degree
    i_min = nu.index(min(nu))
    j_other = 1 - i_min
    base = chart.grid_zeta[0]
    if abs(base[i_min]) < 1e-9:
        return None, False
    s_i = 1 if base[i_min] > 0 else -1
    # dehomogenize: x_{i_min} = s_i, solve for the other coordinate
    g_terms = {}
    for exp, c in face.face_poly.terms.items():
        coeff = c * (Fraction(s_i) ** exp[i_min])
        key = (exp[j_other],)
        g_terms[key] = g_terms.get(key, Fraction(0)) + coeff
    g = Polynomial(1, g_terms)
    target = float(base[j_other]) * abs(float(base[i_min])) ** (-float(nu[j_other]))
    root = None
    for cand in _rational_roots(g):
        if abs(float(cand) - target) < 1e-6:
            root = cand
            break
    if root is None:
        return None, False
    gp = g.partial(0)
    if gp.evaluate((root,)) == 0:
        raise ParametrizeError(
            "multiple root of the face polynomial: degenerate branch")

    zeta = [Fraction(0)] * d
    zeta[i_min] = Fraction(s_i)
    zeta[j_other] = root
    lattice = exponent_lattice(nu, q_max + max(nu) + 2)
    work_q = q_max + max(nu) + 1
    dom = CubeDomain(0, 1.0, eps)

    # Divisions shift the reliable window down by the denominator's leading
    # exponent, so the iteration runs at a padded truncation; the pad is
    # escalated until the residual series vanishes identically through
    # work_q, which certifies every retained coefficient.
    result = None
    for pad_extra in (8, 16, 32):
        try:
            result = _exact_iteration(f, face, nu, zeta, dom, work_q,
                                      Fraction(pad_extra))
        except PuiseuxError:
            result = None
        if result is not None:
            break
    if result is None:
        raise ParametrizeError("exact Newton scheme failed to certify")
    X, pad, diff_norms, lead_norms, t_lead_q = result

    u = (X[i_min] * Fraction(s_i)).strip_tail()   # = r * (1 + ...)
    r_of_s = invert_radial_parameter(u, pad - 2)
    chi = []
    for k in range(d):
        if k == i_min:
            chi.append(PuiseuxSeries.constant(dom, s_i, q_max))
        else:
            comp = _substitute_radial(X[k], r_of_s, pad - 3)
            chi.append(comp.shift(-nu[k]).truncate(q_max).with_lattice(lattice))

    t_lead = float(t_lead_q) if t_lead_q is not None else float("inf")
    c_fit, kappa, ratios = _fit_geometric_envelope(diff_norms)
    telemetry_ratios = tuple(
        lead_norms[i + 1] / lead_norms[i]
        for i in range(len(lead_norms) - 1) if lead_norms[i] > 0)
    max_ratio = max(telemetry_ratios, default=0.0)

    param = Parametrization(
        nu=tuple(nu), chi=tuple(chi), chart=chart,
        residual_certificate=0.0, branch_id=chart.branch_id,
        contraction=ContractionTelemetry(tuple(diff_norms), telemetry_ratios,
                                         max_ratio, c_fit, kappa, 0, eps),
        t_leading_exponent=t_lead, off_lattice_energy=0.0, exact=True)
    res = _validation_residual(param, f)
    return replace(param, residual_certificate=res), True


def _exact_iteration(f: Polynomial, face: NewtonFace,
                     nu: Tuple[Fraction, ...], zeta: List[Fraction],
                     dom: CubeDomain, work_q: Fraction, pad_extra: Fraction):
    """Padded Newton iteration in the ring; returns (X, pad, norms,
    leading norms, leading T exponent) once the residual series vanishes
    through work_q, else None (caller escalates the pad)."""
    d = f.dim
    pad = work_q + pad_extra

    p_series = [PuiseuxSeries.monomial(dom, nu[k], zeta[k], pad)
                for k in range(d)]
    grads = [face.face_poly.partial(k) for k in range(d)]
    w = [poly_at_series(grads[k], p_series) for k in range(d)]
    shift = min(ws.leading()[0] for ws in w if ws.leading() is not None)
    w = [ws.shift(-shift).truncate(pad) if not ws.is_zero() else ws
         for ws in w]

    T = PuiseuxSeries.zero(dom, pad)
    diff_norms: List[float] = []
    lead_norms: List[float] = []
    t_lead_q = None
    for _ in range(80):
        X = [(p_series[k] + T * w[k]).truncate(pad).strip_tail()
             for k in range(d)]
        h = poly_at_series(f, X)
        hp = PuiseuxSeries.zero(dom, pad)
        for k in range(d):
            hp = hp + poly_at_series(f.partial(k), X) * w[k]
        if h.is_zero():
            break
        T_next = (T - _series_divide(h.strip_tail(), hp.strip_tail())).truncate(pad).strip_tail()
        z = T_next - T
        if z.is_zero():
            break
        diff_norms.append(z.norm())
        lead_norms.append(z.leading_norm())
        T = T_next
        if t_lead_q is None and T.leading() is not None:
            t_lead_q = T.leading()[0]
    else:
        raise ContractionError("Newton scheme failed to stabilize")

    X = [(p_series[k] + T * w[k]).truncate(pad).strip_tail() for k in range(d)]
    res = poly_at_series(f, X)
    lead = res.leading()
    if lead is not None and lead[0] <= work_q + max(nu):
        return None
    return X, pad, diff_norms, lead_norms, t_lead_q


def _validation_residual(param: Parametrization, f: Polynomial,
                         n_r: int = 48, n_xi: int = 9) -> float:
    dom = param.domain
    r = dom.epsilon * np.power(0.5, np.linspace(0.0, 20.0, n_r))
    if dom.eta_dim == 0:
        R = r
        XI = np.zeros((n_r, 0))
    else:
        axes = [np.linspace(-dom.delta, dom.delta, n_xi)] * dom.eta_dim
        mesh = np.meshgrid(*axes, indexing="ij")
        xi = np.stack([m.ravel() for m in mesh], axis=1)
        R = np.repeat(r, xi.shape[0])
        XI = np.tile(xi, (n_r, 1))
    pts = param.evaluate_many(R, XI)
    return float(np.max(np.abs(f.evaluate_many(pts))))


# ---------------------------------------------------------------------------
# semi-numeric path


def _numeric_branch(f: Polynomial, face: NewtonFace, chart: LinkChart,
                    q_max: Fraction, eps: float, tol: float,
                    fit_degree: int = 8) -> Parametrization:
    d = f.dim
    nu = face.weight.normalized().sigma
    lattice = exponent_lattice(nu, q_max)
    dom = CubeDomain(chart.eta_domain.eta_dim, chart.eta_domain.delta, eps)
    quasihomogeneous = face.remainder.is_zero()

    xi = chart.grid_xi
    Z = chart.zeta_many(xi) if xi.shape[0] else chart.grid_zeta
    n_r = 30
    r_vals = eps * np.power(0.72, np.arange(n_r))
    P = xi.shape[0]
    scale = np.array([[float(r) ** float(s) for s in nu] for r in r_vals])

    base = (Z[None, :, :] * scale[:, None, :]).reshape(n_r * P, d)
    diff_norms: List[float] = []
    if quasihomogeneous:
        t_star = np.zeros(n_r * P)
        t_lead = float("inf")
    else:
        g = face.face_poly.gradient_many(base)
        gn = np.linalg.norm(g, axis=1)
        if np.any(gn < 1e-12):
            raise ParametrizeError("vanishing face gradient on the cone grid")
        normals = g / gn[:, None]
        Ef, cf = f.float_data()
        t = np.zeros(n_r * P)
        for _ in range(80):
            pts = base + t[:, None] * normals
            fv = kernels.polyval_many(Ef, cf, pts)
            gv = kernels.polygrad_many(Ef, cf, pts)
            fp = np.sum(gv * normals, axis=1)
            if np.any(np.abs(fp) < 1e-300):
                raise ParametrizeError("degenerate directional derivative")
            step = fv / fp
            t = t - step
            diff = float(np.max(np.abs(step)))
            diff_norms.append(diff)
            if diff < 1e-15:
                break
        else:
            raise ContractionError("pointwise Newton did not converge")
        t_star = t
        lead = np.abs(t_star.reshape(n_r, P)).max(axis=1)
        ok = lead > 1e-300
        if np.sum(ok) >= 3:
            A = np.vstack([np.log(r_vals[ok]), np.ones(np.sum(ok))]).T
            t_lead = float(np.linalg.lstsq(A, np.log(lead[ok]), rcond=None)[0][0])
        else:
            t_lead = float("inf")

    if quasihomogeneous:
        X = base
    else:
        X = base + t_star[:, None] * normals
    chi_samples = X.reshape(n_r, P, d) / scale[:, None, :]

    # least squares over the lattice exponents, scaled basis (r/eps)^q;
    # a vanishing remainder means the cone is exact and only q=0 survives
    qs = [Fraction(0)] if quasihomogeneous else list(lattice.sequence)
    A = np.stack([np.power(r_vals / eps, float(q)) for q in qs], axis=1)
    off_energy = 0.0
    coeff_grids = np.empty((len(qs), P, d))
    for k in range(d):
        data = chi_samples[:, :, k]
        sol, res, *_ = np.linalg.lstsq(A, data, rcond=None)
        coeff_grids[:, :, k] = sol
        fitted = A @ sol
        off_energy = max(off_energy, float(np.max(np.abs(fitted - data))))
    if off_energy > 1e-5:
        raise ParametrizeError(
            f"lattice mismatch: off-lattice energy {off_energy:.2e}")

    free = [j for j in range(d) if j not in chart.solved_indices]
    eta_dim = dom.eta_dim
    mono_exps = [e for e in _monomials(eta_dim, fit_degree)]
    if eta_dim:
        V = np.stack([np.prod(xi ** np.array(e), axis=1) for e in mono_exps],
                     axis=1)
    initial_dev = 0.0
    chi = []
    for k in range(d):
        terms = []
        for qi, q in enumerate(qs):
            vals = coeff_grids[qi, :, k] * float(eps) ** (-float(q))
            if eta_dim == 0:
                poly = Polynomial.constant(0, Fraction(float(vals[0])))
            else:
                csol, *_ = np.linalg.lstsq(V, vals, rcond=None)
                poly = Polynomial(eta_dim, {e: Fraction(float(c))
                                            for e, c in zip(mono_exps, csol)
                                            if abs(c) > 1e-11})
            if q == 0 and k in free and eta_dim:
                target = Polynomial.variable(eta_dim, free.index(k) + 1)
                dev_poly = poly - target
                dev = max((abs(float(c)) for c in dev_poly.terms.values()),
                          default=0.0)
                initial_dev = max(initial_dev, dev)
                if dev > 1e-6:
                    raise ParametrizeError(
                        f"initial coefficient of free coordinate {k} deviates by {dev:.2e}")
                poly = target
            terms.append((q, poly))
        chi.append(PuiseuxSeries(dom, terms, q_max, 0.0, lattice))

    c_fit, kappa, _ = _fit_geometric_envelope(diff_norms)
    ratios = tuple(diff_norms[i + 1] / diff_norms[i]
                   for i in range(len(diff_norms) - 1) if diff_norms[i] > 0)
    param = Parametrization(
        nu=tuple(nu), chi=tuple(chi), chart=chart,
        residual_certificate=0.0, branch_id=chart.branch_id,
        contraction=ContractionTelemetry(tuple(diff_norms), ratios,
                                         max(ratios, default=0.0),
                                         c_fit, kappa, 0, eps),
        t_leading_exponent=t_lead, off_lattice_energy=off_energy, exact=False)
    res = _validation_residual(param, f)
    return replace(param, residual_certificate=res)


def _monomials(dim: int, degree: int) -> List[Tuple[int, ...]]:
    if dim == 0:
        return [()]
    out = []
    for e in itertools.product(range(degree + 1), repeat=dim):
        if sum(e) <= degree:
            out.append(e)
    return sorted(out)


# ---------------------------------------------------------------------------
# driver with radial auto-shrink


def newton_solve_series(f: Polynomial, face: NewtonFace, chart: LinkChart,
                        q_max, tol: float = 1e-10,
                        max_halvings: int = 20) -> Parametrization:
    """Run the Newton scheme on one chart branch, shrinking the radial extent
    until the measured contraction factor drops below 0.5 and the validation
    residual meets ``tol``."""
    q_max = Fraction(q_max)
    eps = chart.eta_domain.epsilon
    last_error = None
    for halvings in range(max_halvings + 1):
        try:
            if chart.eta_domain.eta_dim == 0:
                param, ok = _exact_branch(f, face, chart, q_max, eps, tol)
                if not ok:
                    param = _numeric_branch(f, face, chart, q_max, eps, tol)
            else:
                param = _numeric_branch(f, face, chart, q_max, eps, tol)
        except ContractionError as exc:
            last_error = exc
            eps *= 0.5
            continue
        if param.contraction.max_ratio < 0.5 and param.residual_certificate <= tol:
            tel = param.contraction
            tel = ContractionTelemetry(tel.norms, tel.leading_ratios,
                                       tel.max_ratio, tel.c_fit, tel.kappa_fit,
                                       halvings, eps)
            return replace(param, contraction=tel)
        eps *= 0.5
    raise ContractionError(
        f"no admissible radial extent found after {max_halvings} halvings "
        f"(last: {last_error})")


# ---------------------------------------------------------------------------
# residual report


@dataclass(frozen=True)
class ResidualReport:
    max_residual: float
    per_r_max: Tuple[Tuple[float, float], ...]  # (r, max_|f o Phi|)
    decay_exponent: float                        # fitted slope; inf when exact
    weighted_degree: Fraction

    @property
    def exceeds_face_degree(self) -> bool:
        return self.decay_exponent > float(self.weighted_degree)


def parametrization_residual(param: Parametrization, f: Polynomial,
                             grid: Tuple[np.ndarray, np.ndarray] | None = None
                             ) -> ResidualReport:
    """Evaluate |f(Phi)| over a validation grid and fit its radial decay."""
    dom = param.domain
    if grid is None:
        r_vals = dom.epsilon * np.power(0.5, np.linspace(0.0, 12.0, 25))
        xi = _grid_points(dom.eta_dim, dom.delta, 9)
    else:
        r_vals, xi = grid
        r_vals = np.asarray(r_vals, dtype=np.float64)
        xi = np.asarray(xi, dtype=np.float64).reshape(-1, dom.eta_dim)
    if r_vals.size == 0 or xi.shape[0] == 0:
        raise ParametrizeError("empty validation grid")
    per_r = []
    for r in r_vals:
        R = np.full(xi.shape[0], r)
        pts = param.evaluate_many(R, xi)
        per_r.append((float(r), float(np.max(np.abs(f.evaluate_many(pts))))))
    mx = max(v for _, v in per_r)
    m = face_weighted_degree(param)
    good = [(r, v) for r, v in per_r if v > 1e-13]
    if len(good) < 3:
        slope = float("inf")
    else:
        lr = np.log([r for r, _ in good])
        lv = np.log([v for _, v in good])
        A = np.vstack([lr, np.ones(len(good))]).T
        slope = float(np.linalg.lstsq(A, lv, rcond=None)[0][0])
    return ResidualReport(mx, tuple(per_r), slope, m)


def face_weighted_degree(param: Parametrization) -> Fraction:
    return param.chart.face.weight.normalized().weighted_degree
