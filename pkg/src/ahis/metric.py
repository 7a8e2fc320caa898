"""Induced metric of a branch parametrization and its radial normal form.

From Phi(r, eta) = (r^{nu_j} z_j(r, eta))_j the pullback metric is

    g = omega dr^2 + 2 beta . deta dr + Sigma,
    omega = |A R chi|^2,  beta = r Lam^T A R^2 chi,  Sigma = r^2 Lam^T R^2 Lam,

with A = diag(nu_j), R = diag(r^{nu_j - 1}), Lam_{jk} = d z_j / d eta_k and
chi_j = z_j + r z_j' / nu_j.  All entries live in the Puiseux ring.  The
cross term is removed by flowing the angular coordinates along the singular
ODE  eta' = -Sigma^{-1} beta  from the link inward; the normalized angular
block Sigma_hat = Sigma / omega then exposes the model data: the radial
power alpha of its inverse, the number k of fast angular directions, a
frozen-coefficient deviation, and the inverse-square potential constant.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, List, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp

from .diagram import NewtonFace
from .parametrize import Parametrization
from .puiseux import CubeDomain, PuiseuxSeries, PuiseuxError, invert_unit


class MetricError(ValueError):
    """Metric assembly or normalization failure."""


# ---------------------------------------------------------------------------
# induced metric


@dataclass(frozen=True)
class MetricData:
    """Metric blocks in the Puiseux ring plus the defining matrix data."""

    omega: PuiseuxSeries
    beta: Tuple[PuiseuxSeries, ...]
    sigma: Tuple[Tuple[PuiseuxSeries, ...], ...]
    nu: Tuple[Fraction, ...]
    lam: Tuple[Tuple[PuiseuxSeries, ...], ...]   # Lam[j][k] = d z_j / d eta_k
    chi_radial: Tuple[PuiseuxSeries, ...]        # chi_j = z_j + r z_j' / nu_j
    domain: CubeDomain

    @property
    def eta_dim(self) -> int:
        return self.domain.eta_dim

    def omega_min(self, n_r: int = 16, n_xi: int = 9) -> float:
        r, xi = _sample_grid(self.domain, n_r, n_xi, include_zero=True)
        return float(np.min(self.omega.eval_many(r, xi)))

    def sigma_matrix_many(self, r: np.ndarray, xi: np.ndarray) -> np.ndarray:
        """Sigma evaluated on points, shape (n, eta_dim, eta_dim)."""
        n = r.shape[0]
        k = self.eta_dim
        out = np.empty((n, k, k))
        for i in range(k):
            for j in range(k):
                out[:, i, j] = self.sigma[i][j].eval_many(r, xi)
        return out

    def beta_vector_many(self, r: np.ndarray, xi: np.ndarray) -> np.ndarray:
        n = r.shape[0]
        out = np.empty((n, self.eta_dim))
        for i in range(self.eta_dim):
            out[:, i] = self.beta[i].eval_many(r, xi)
        return out

    def to_json(self) -> dict:
        return {
            "nu": [str(v) for v in self.nu],
            "omega": self.omega.to_json(),
            "beta": [b.to_json() for b in self.beta],
            "sigma": [[s.to_json() for s in row] for row in self.sigma],
        }


def _sample_grid(domain: CubeDomain, n_r: int, n_xi: int,
                 include_zero: bool = False,
                 r_floor: float = 1e-6) -> Tuple[np.ndarray, np.ndarray]:
    eps = domain.epsilon
    r = eps * np.power(0.5, np.linspace(0.0, -np.log2(r_floor), n_r))
    if include_zero:
        r = np.concatenate([r, [0.0]])
    if domain.eta_dim == 0:
        return r, np.zeros((r.size, 0))
    axes = [np.linspace(-domain.delta, domain.delta, n_xi)] * domain.eta_dim
    mesh = np.meshgrid(*axes, indexing="ij")
    xi = np.stack([m.ravel() for m in mesh], axis=1)
    R = np.repeat(r, xi.shape[0])
    XI = np.tile(xi, (r.size, 1))
    return R, XI


def induced_metric(param: Parametrization) -> MetricData:
    """Assemble (omega, beta, Sigma) from the branch series in the ring."""
    nu = param.nu
    d = param.dim
    dom = param.domain
    k = dom.eta_dim
    q_max = min(s.truncation_order for s in param.chi)

    r1 = PuiseuxSeries.monomial(dom, 1, 1, q_max)
    chi_rad = []
    for j in range(d):
        z = param.chi[j]
        chi_rad.append(z + (r1 * z.r_derivative()) * (1 / Fraction(nu[j])))
    lam = tuple(tuple(param.chi[j].eta_derivative(kk) for kk in range(k))
                for j in range(d))

    def rpow(e: Fraction) -> PuiseuxSeries:
        return PuiseuxSeries.monomial(dom, e, 1, q_max)

    omega = PuiseuxSeries.zero(dom, q_max)
    for j in range(d):
        term = chi_rad[j] * chi_rad[j] * (Fraction(nu[j]) ** 2)
        omega = omega + term * rpow(2 * nu[j] - 2)

    beta = []
    for kk in range(k):
        b = PuiseuxSeries.zero(dom, q_max)
        for j in range(d):
            b = b + (lam[j][kk] * chi_rad[j] * Fraction(nu[j])) * rpow(2 * nu[j] - 1)
        beta.append(b)

    sigma = []
    for k1 in range(k):
        row = []
        for k2 in range(k):
            s = PuiseuxSeries.zero(dom, q_max)
            for j in range(d):
                s = s + (lam[j][k1] * lam[j][k2]) * rpow(2 * nu[j])
            row.append(s)
        sigma.append(tuple(row))

    data = MetricData(omega, tuple(beta), tuple(sigma), tuple(nu), lam,
                      tuple(chi_rad), dom)
    if data.omega_min() <= 1e-12:
        raise MetricError(
            "omega not bounded below on the grid (coordinate-axis violation)")
    return data


def metric_consistency(data: MetricData, param: Parametrization,
                       n_r: int = 8, n_xi: int = 5,
                       h: float = 1e-5) -> float:
    """Max deviation between ring-assembled metric entries and central finite
    differences of Phi; validates the series calculus."""
    dom = data.domain
    eps = dom.epsilon
    r_vals = eps * np.power(0.5, np.linspace(0.2, 6.0, n_r))
    if dom.eta_dim:
        ax = np.linspace(-0.8 * dom.delta, 0.8 * dom.delta, n_xi)
        mesh = np.meshgrid(*([ax] * dom.eta_dim), indexing="ij")
        xis = np.stack([m.ravel() for m in mesh], axis=1)
    else:
        xis = np.zeros((1, 0))
    worst = 0.0
    for r in r_vals:
        hr = h * r
        for xi in xis:
            def phi(rr, xx):
                return param.evaluate_many(np.array([rr]),
                                           np.array([xx]))[0]
            dr = (phi(r + hr, xi) - phi(r - hr, xi)) / (2 * hr)
            om = float(np.dot(dr, dr))
            worst = max(worst, abs(om - data.omega.eval(r, xi)))
            for kk in range(dom.eta_dim):
                he = h * max(1.0, dom.delta)
                xp, xm = xi.copy(), xi.copy()
                xp[kk] += he
                xm[kk] -= he
                de = (phi(r, xp) - phi(r, xm)) / (2 * he)
                bk = float(np.dot(dr, de))
                worst = max(worst, abs(bk - data.beta[kk].eval(r, xi)))
                for ll in range(dom.eta_dim):
                    xp2, xm2 = xi.copy(), xi.copy()
                    xp2[ll] += he
                    xm2[ll] -= he
                    dl = (phi(r, xp2) - phi(r, xm2)) / (2 * he)
                    skl = float(np.dot(de, dl))
                    worst = max(worst, abs(skl - data.sigma[kk][ll].eval(r, xi)))
    return worst


def sigma_norm_constant(data: MetricData, n_r: int = 12, n_xi: int = 7) -> float:
    """Measured c in |Sigma v| <= c r^{2 mu} |v| with mu = max nu - 1."""
    mu = float(max(data.nu)) - 1.0
    r, xi = _sample_grid(data.domain, n_r, n_xi, r_floor=1e-4)
    S = data.sigma_matrix_many(r, xi)
    norms = np.linalg.norm(S, ord=2, axis=(1, 2)) if data.eta_dim else np.zeros(r.size)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = norms / np.power(r, 2 * mu)
    return float(np.nanmax(c)) if c.size else 0.0


# ---------------------------------------------------------------------------
# cross-term removal


@dataclass(frozen=True)
class FlowMap:
    """Numeric flow eta = eta(r, theta) from the link inward; identity when
    the cross term vanishes."""

    r_grid: np.ndarray              # decreasing from epsilon
    theta_grid: np.ndarray          # (n_lines, eta_dim) initial angles
    values: np.ndarray              # (n_lines, n_r, eta_dim)
    identity: bool

    def __call__(self, r: float, theta: Sequence[float]) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        if self.identity:
            return theta
        i = int(np.argmin(np.sum((self.theta_grid - theta) ** 2, axis=1)))
        out = np.empty(theta.shape)
        for kk in range(theta.shape[0]):
            out[kk] = np.interp(r, self.r_grid[::-1], self.values[i, ::-1, kk])
        return out


@dataclass(frozen=True)
class NormalizedMetric:
    """dr^2 + Sigma_hat in flowed coordinates, with decay diagnostics."""

    sigma_hat: Tuple[Tuple[PuiseuxSeries, ...], ...]
    omega: PuiseuxSeries
    sigma: Tuple[Tuple[PuiseuxSeries, ...], ...]
    flow: FlowMap
    lyapunov_exponent: float         # fitted a with phi(dev) <= delta r^a
    certified_exponent: float        # from series leading exponents
    residual_cross: float            # flow deviation vs tighter-tolerance oracle
    domain: CubeDomain

    def sigma_hat_many(self, r: np.ndarray, xi: np.ndarray) -> np.ndarray:
        k = self.domain.eta_dim
        out = np.empty((r.shape[0], k, k))
        for i in range(k):
            for j in range(k):
                out[:, i, j] = self.sigma_hat[i][j].eval_many(r, xi)
        return out

    def to_json(self) -> dict:
        return {
            "sigma_hat": [[s.to_json() for s in row] for row in self.sigma_hat],
            "lyapunov_exponent": self.lyapunov_exponent,
            "certified_exponent": self.certified_exponent,
            "residual_cross": self.residual_cross,
            "identity_flow": self.flow.identity,
        }


def _leading_exponent(series: PuiseuxSeries) -> Fraction | None:
    lead = series.leading()
    return lead[0] if lead else None


def remove_cross_term(data: MetricData, n_lines: int = 9,
                      r_floor_factor: float = 1e-5,
                      rtol: float = 1e-10, atol: float = 1e-13
                      ) -> NormalizedMetric:
    """Flow out the dr-deta cross term and divide the angular block by omega.

    The singular system eta' = -Sigma^{-1} beta is integrated backwards from
    the link r = eps toward r = 0 with a stiff adaptive scheme; the extension
    to r = 0 is certified by fitting the decay of the deviation from the
    limiting angle against the exponent predicted by the series leading
    orders.  Raises when the flow blows up or the decay fit fails.
    """
    dom = data.domain
    k = dom.eta_dim
    # The normalized block Sigma/omega is a germ statement near r = 0; when
    # the geometric inversion of omega does not converge on the full radial
    # extent, the series is formed on a reduced one.
    eps_hat = dom.epsilon
    while True:
        try:
            inv_omega = invert_unit(data.omega.with_epsilon(eps_hat))
            break
        except PuiseuxError:
            eps_hat *= 0.5
            if eps_hat < 1e-6 * dom.epsilon:
                raise MetricError(
                    "omega not invertible on any usable radial extent")
    sigma_hat = tuple(
        tuple(data.sigma[i][j].with_epsilon(eps_hat) * inv_omega
              for j in range(k))
        for i in range(k))

    # cross terms below roundoff scale (e.g. truncation dust from otherwise
    # cancelling coefficient functions) are treated as absent
    beta_zero = all(b.is_zero() or b.total_majorant() < 1e-13
                    for b in data.beta)
    eps = dom.epsilon
    n_r = 60
    r_grid = eps * np.power(r_floor_factor, np.linspace(0.0, 1.0, n_r))
    if k == 0 or beta_zero:
        theta0 = _theta_lines(dom, n_lines)
        vals = np.repeat(theta0[:, None, :], n_r, axis=1)
        flow = FlowMap(r_grid, theta0, vals, identity=True)
        return NormalizedMetric(sigma_hat, data.omega, data.sigma, flow,
                                float("inf"), float("inf"), 0.0, dom)

    lead_beta = min((q for b in data.beta
                     for q in ([_leading_exponent(b)] if not b.is_zero() else [])
                     if q is not None))
    lead_sigma = min(q for row in data.sigma for s in row
                     if (q := _leading_exponent(s)) is not None)
    certified = 2.0 * (float(lead_beta) - float(lead_sigma) + 1.0)

    def rhs(r, eta):
        R = np.array([r])
        XI = eta[None, :]
        S = data.sigma_matrix_many(R, XI)[0]
        b = data.beta_vector_many(R, XI)[0]
        try:
            return -np.linalg.solve(S, b)
        except np.linalg.LinAlgError as exc:
            raise MetricError(f"angular block singular at r={r}") from exc

    theta0 = _theta_lines(dom, n_lines)
    vals = np.empty((theta0.shape[0], n_r, k))
    r_min = r_grid[-1]
    for i, th in enumerate(theta0):
        sol = solve_ivp(rhs, (eps, r_min), th, t_eval=r_grid, method="Radau",
                        rtol=rtol, atol=atol)
        if not sol.success or sol.y.shape[1] != n_r:
            reached = sol.t[-1] if sol.t.size else eps
            raise MetricError(
                f"flow integration failed from theta={th.tolist()} "
                f"(smallest r reached {reached:.3e})")
        if np.max(np.abs(sol.y)) > 10 * dom.delta + 1.0:
            raise MetricError("flow blow-up before r=0; shrink epsilon")
        vals[i] = sol.y.T

    # deviation decay fit (Lyapunov surrogate): |eta(r) - eta(0+)|^2 ~ r^a
    exps = []
    for i in range(theta0.shape[0]):
        limit = vals[i, -1]
        dev = np.linalg.norm(vals[i] - limit[None, :], axis=1)
        mask = (r_grid > 20 * r_min) & (dev > 1e-14)
        if np.sum(mask) >= 4:
            A = np.vstack([np.log(r_grid[mask]), np.ones(int(np.sum(mask)))]).T
            slope = float(np.linalg.lstsq(A, np.log(dev[mask]), rcond=None)[0][0])
            exps.append(2.0 * slope)
    lyapunov = min(exps) if exps else float("inf")
    if exps and lyapunov <= 0:
        raise MetricError(
            "Lyapunov fit failed (deviation does not decay); shrink epsilon")

    # cross-removal residual: deviation of the production flow from a
    # tighter-tolerance reintegration of the same lines
    residual = 0.0
    check = sorted({0, theta0.shape[0] // 2, theta0.shape[0] - 1})
    for i in check:
        ref = solve_ivp(rhs, (eps, r_min), theta0[i], t_eval=r_grid,
                        method="Radau", rtol=1e-13, atol=1e-16)
        if ref.success and ref.y.shape[1] == n_r:
            residual = max(residual, float(np.max(np.abs(ref.y.T - vals[i]))))

    flow = FlowMap(r_grid, theta0, vals, identity=False)
    return NormalizedMetric(sigma_hat, data.omega, data.sigma, flow,
                            lyapunov, certified, residual, dom)


def _theta_lines(dom: CubeDomain, n_lines: int) -> np.ndarray:
    if dom.eta_dim == 0:
        return np.zeros((1, 0))
    ax = np.linspace(-0.8 * dom.delta, 0.8 * dom.delta, n_lines)
    mesh = np.meshgrid(*([ax] * dom.eta_dim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


# ---------------------------------------------------------------------------
# model operator extraction


@dataclass(frozen=True)
class ModelOperator:
    """Radial model data: -d_r^2 - Delta_k / r^alpha plus subordinate terms."""

    alpha: Fraction
    k: int
    epsilon: float
    frozen_laplacian_error: float
    potential_bound: float
    alpha_fitted: float
    fast_directions: Tuple[int, ...]
    normalized: NormalizedMetric | None = None

    def to_json(self) -> dict:
        return {"alpha": str(self.alpha), "k": self.k, "epsilon": self.epsilon,
                "frozen_laplacian_error": self.frozen_laplacian_error,
                "potential_bound": self.potential_bound,
                "alpha_fitted": self.alpha_fitted,
                "fast_directions": list(self.fast_directions)}


def model_operator(norm: NormalizedMetric, face: NewtonFace) -> ModelOperator:
    """Extract (alpha, k) from the leading radial powers of Sigma_hat, check
    them by a log-log fit, and measure the frozen-coefficient deviation and
    the inverse-square potential constant."""
    dom = norm.domain
    k_ang = dom.eta_dim
    eps = dom.epsilon
    if k_ang == 0:
        return ModelOperator(Fraction(0), 0, eps, 0.0,
                             _potential_constant(norm), 0.0, (), norm)

    leads = []
    for i in range(k_ang):
        q = _leading_exponent(norm.sigma_hat[i][i])
        if q is None:
            raise MetricError(f"angular direction {i} has vanishing metric")
        leads.append(q)
    alpha = max(leads)
    fast = tuple(i for i in range(k_ang) if leads[i] == alpha)

    for i in fast:
        for j in range(k_ang):
            if j in fast:
                continue
            q = _leading_exponent(norm.sigma_hat[i][j])
            if q is not None and 2 * q < alpha + leads[j]:
                per_dir = {d: str(leads[d]) for d in range(k_ang)}
                raise MetricError(
                    f"mixed leading exponents, fast/slow split impossible: {per_dir}")

    # log-log cross-check of the leading power, fitted where it dominates
    eps_hat = norm.sigma_hat[0][0].domain.epsilon
    r = eps_hat * np.power(0.5, np.linspace(4.0, 14.0, 24))
    xi = np.zeros((r.size, k_ang))
    fitted = []
    for i in fast:
        vals = norm.sigma_hat[i][i].eval_many(r, xi)
        if np.any(vals <= 0):
            raise MetricError("nonpositive normalized angular metric sample")
        A = np.vstack([np.log(r), np.ones(r.size)]).T
        slope, _ = np.linalg.lstsq(A, np.log(vals), rcond=None)[0]
        fitted.append(float(slope))
    alpha_fit = max(fitted)
    if abs(alpha_fit - float(alpha)) > 0.05:
        raise MetricError(
            f"leading power not clean: series {alpha}, fitted {alpha_fit:.3f}")

    frozen = _frozen_deviation(norm, fast, alpha)
    c_pot = _potential_constant(norm)
    return ModelOperator(alpha, len(fast), eps, frozen, c_pot, alpha_fit,
                         fast, norm)


def _frozen_deviation(norm: NormalizedMetric, fast: Tuple[int, ...],
                      alpha: Fraction) -> float:
    """sup over the grid of |F(r,theta) F(0,0)^{-1} - I| for the rescaled fast
    block F = r^alpha Sigma_hat_fast^{-1}; the coefficient-freezing surrogate."""
    dom = norm.sigma_hat[0][0].domain
    idx = np.array(fast)
    r, xi = _sample_grid(dom, 10, 7, r_floor=1e-4)
    S = norm.sigma_hat_many(r, xi)[:, idx[:, None], idx[None, :]]
    F = np.linalg.inv(S) * np.power(r, float(alpha))[:, None, None]
    r0 = np.array([1e-7 * dom.epsilon])
    S0 = norm.sigma_hat_many(r0, np.zeros((1, dom.eta_dim)))[:, idx[:, None], idx[None, :]]
    F0 = np.linalg.inv(S0[0]) * float(r0[0]) ** float(alpha)
    dev = F @ np.linalg.inv(F0) - np.eye(len(fast))[None, :, :]
    return float(np.max(np.abs(dev)))


def _potential_constant(norm: NormalizedMetric) -> float:
    """Fitted C with |V| <= C r^{-2} for the measure-transform potential
    V = (s^{1/4})'' / s^{1/4}, s = det Sigma_hat, over [eps/100, eps]."""
    dom = norm.sigma_hat[0][0].domain if norm.domain.eta_dim else norm.domain
    k = dom.eta_dim
    if k == 0:
        return 0.0
    eps = dom.epsilon
    r = np.geomspace(eps / 100, eps * 0.98, 40)
    xi0 = np.zeros(k)

    def s_quarter(rr: np.ndarray) -> np.ndarray:
        S = norm.sigma_hat_many(rr, np.zeros((rr.size, k)))
        det = np.linalg.det(S)
        return np.power(np.abs(det), 0.25)

    h = r * 1e-4
    w0 = s_quarter(r)
    wp = s_quarter(r + h)
    wm = s_quarter(r - h)
    v = (wp - 2 * w0 + wm) / h ** 2 / w0
    return float(np.max(np.abs(v) * r ** 2))
