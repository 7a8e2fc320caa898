"""Discretized model operator, heat trace, and power-log expansion fitting.

The radial model  -d_r^2 + lambda_ang / r^alpha + V  (and its metric-faithful
generalization with densities p, w) is realized through its quadratic form on
a graded grid r_i = eps (i/N)^gamma: the stiffness couples neighboring
interior nodes, potentials are collocated, and the generalized problem
A u = lam B u is symmetrized to an ordinary tridiagonal one.  No condition
beyond the form domain is imposed at r = 0.

The heat trace is summed over angular modes from dense eigendecompositions
(equivalent to, and far more stable than, contour integration of resolvents
at this scale); the Neumann-series side of the theory is exercised through
the exponent calculus in ``ahis.sal`` and the decay checks here.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np
from scipy.linalg import eigh_tridiagonal, svdvals

from .diagram import NewtonDiagram, exponent_lattice
from .metric import ModelOperator


class SpectralError(ValueError):
    """Discretization, trace, or fit failure."""


# ---------------------------------------------------------------------------
# radial cutoff


@dataclass(frozen=True)
class CutoffSpec:
    """Smooth radial bump: 1 on [0, r_on], quintic smoothstep down to 0 at
    r_off; polynomial profile, so no new singular structure is introduced."""

    r_on: float
    r_off: float

    def __call__(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=np.float64)
        u = np.clip((r - self.r_on) / (self.r_off - self.r_on), 0.0, 1.0)
        return 1.0 - u ** 3 * (10.0 - 15.0 * u + 6.0 * u ** 2)

    def describe(self) -> dict:
        return {"kind": "quintic_bump", "r_on": self.r_on, "r_off": self.r_off}


def default_cutoff(epsilon: float) -> CutoffSpec:
    return CutoffSpec(epsilon / 2, 0.95 * epsilon)


# ---------------------------------------------------------------------------
# angular modes


def angular_modes(k: int, n_modes: int, bc: str = "periodic",
                  length: float = 2.0 * np.pi) -> List[Tuple[float, int]]:
    """(eigenvalue, multiplicity) pairs of -Delta on the k-torus/interval.

    periodic: modes exp(i 2 pi m theta / L) on a circle of circumference L
    per direction; dirichlet/neumann: sine/cosine modes on (0, L).
    """
    if k == 0:
        return [(0.0, 1)]
    if bc == "periodic":
        base = [(2.0 * np.pi * m / length) ** 2 for m in range(n_modes + 1)]
        mults = {0: 1}
    elif bc == "dirichlet":
        base = [(np.pi * m / length) ** 2 for m in range(1, n_modes + 1)]
        mults = {}
    elif bc == "neumann":
        base = [(np.pi * m / length) ** 2 for m in range(n_modes + 1)]
        mults = {}
    else:
        raise SpectralError(f"unknown angular boundary condition {bc!r}")
    if k == 1:
        out: Dict[float, int] = {}
        for i, lam in enumerate(base):
            mult = 2 if (bc == "periodic" and i > 0) else 1
            out[lam] = out.get(lam, 0) + mult
        return sorted(out.items())
    # product modes over k directions
    per_dir = angular_modes(1, n_modes, bc, length)
    acc: Dict[float, int] = {}
    for combo in itertools.product(per_dir, repeat=k):
        lam = sum(c[0] for c in combo)
        mult = int(np.prod([c[1] for c in combo]))
        acc[lam] = acc.get(lam, 0) + mult
    cutoff = max(l for l, _ in per_dir)
    return sorted((l, m) for l, m in acc.items() if l <= cutoff)


# ---------------------------------------------------------------------------
# discretized operator


@dataclass
class RadialProfiles:
    """Coefficient densities of the radial quadratic form.

    Q_m(u) = int p |u'|^2 + (q0 + lam_m * qa) |u|^2,  M(u) = int w |u|^2.
    The pure model is p = w = 1, qa = r^{-alpha}, q0 = V.
    """

    p: Callable[[np.ndarray], np.ndarray]
    w: Callable[[np.ndarray], np.ndarray]
    qa: Callable[[np.ndarray], np.ndarray]
    q0: Callable[[np.ndarray], np.ndarray]
    angular_length: float = 2.0 * np.pi
    label: str = "model"


def model_profiles(alpha: float, potential: Callable | None = None) -> RadialProfiles:
    v = potential or (lambda r: np.zeros_like(r))
    return RadialProfiles(
        p=lambda r: np.ones_like(r),
        w=lambda r: np.ones_like(r),
        qa=lambda r: np.power(r, -float(alpha)),
        q0=v, label="model")


def metric_profiles(model: ModelOperator, angular_length: float = 2.0 * np.pi
                    ) -> RadialProfiles:
    """Coefficient densities of the surface Laplacian with the angular
    coefficient frozen at the cube center (theta = 0)."""
    norm = model.normalized
    if norm is None or norm.domain.eta_dim != 1:
        raise SpectralError("metric profiles need normalized data with one angular direction")
    omega = norm.omega
    sigma = norm.sigma[0][0]

    def ev(series, r):
        r = np.asarray(r, dtype=np.float64)
        return series.eval_many(r, np.zeros((r.size, 1)))

    return RadialProfiles(
        p=lambda r: np.sqrt(np.maximum(ev(sigma, r), 1e-300) / ev(omega, r)),
        w=lambda r: np.sqrt(ev(omega, r) * np.maximum(ev(sigma, r), 1e-300)),
        qa=lambda r: np.sqrt(ev(omega, r) / np.maximum(ev(sigma, r), 1e-300)),
        q0=lambda r: np.zeros_like(r),
        angular_length=angular_length, label="metric")


@dataclass
class DiscretizedOperator:
    """Per-angular-mode symmetric tridiagonal blocks on a graded radial grid."""

    alpha: float
    k: int
    epsilon: float
    r: np.ndarray                  # interior nodes
    cell: np.ndarray               # trapezoid weights per node
    mass: np.ndarray               # cell * w(r)
    modes: Tuple[Tuple[float, int], ...]
    stiff_diag: np.ndarray
    stiff_off: np.ndarray
    pot_angular: np.ndarray        # qa(r) * cell
    pot_zero: np.ndarray           # q0(r) * cell
    grading: float
    bc: str
    profiles: RadialProfiles
    _eig_cache: Dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def n_r(self) -> int:
        return self.r.size + 1

    def block(self, mode_index: int) -> Tuple[np.ndarray, np.ndarray]:
        """Symmetrized (diag, offdiag) of the mode's tridiagonal matrix."""
        lam_ang, _ = self.modes[mode_index]
        diag = self.stiff_diag + self.pot_zero + lam_ang * self.pot_angular
        s = 1.0 / np.sqrt(self.mass)
        d = diag * s * s
        e = self.stiff_off * s[:-1] * s[1:]
        return d, e

    def split_parts(self, mode_index: int):
        """Symmetrized free part (diag, off) and potential diagonal, for the
        domain-inequality check."""
        lam_ang, _ = self.modes[mode_index]
        s = 1.0 / np.sqrt(self.mass)
        d2_d = self.stiff_diag * s * s
        d2_e = self.stiff_off * s[:-1] * s[1:]
        pot = (self.pot_zero + lam_ang * self.pot_angular) * s * s
        return (d2_d, d2_e), pot

    def eigenvalues(self, mode_index: int) -> np.ndarray:
        if mode_index not in self._eig_cache:
            d, e = self.block(mode_index)
            self._eig_cache[mode_index] = eigh_tridiagonal(
                d, e, eigvals_only=True)
        return self._eig_cache[mode_index]

    def eigenpairs(self, mode_index: int) -> Tuple[np.ndarray, np.ndarray]:
        d, e = self.block(mode_index)
        return eigh_tridiagonal(d, e)

    def dense(self, mode_index: int) -> np.ndarray:
        d, e = self.block(mode_index)
        return np.diag(d) + np.diag(e, 1) + np.diag(e, -1)


def _graded_grid(epsilon: float, n_r: int, grading: float) -> Tuple[np.ndarray, np.ndarray]:
    nodes = epsilon * np.power(np.arange(n_r + 1) / n_r, grading)
    return nodes[1:-1], np.diff(nodes)


def discretize_model(model, n_r: int, modes: int, grading: float = 2.0,
                     bc: str = "periodic", profile: str = "model",
                     check_convergence: bool = True) -> DiscretizedOperator:
    """Build the per-mode blocks for a ModelOperator (or a bare (alpha, k,
    epsilon) triple) with Friedrichs form-domain handling at r = 0.

    Raises when n_r < 64 or when halving the grid moves the ten lowest
    eigenvalues of the extreme modes by more than 0.5%.
    """
    if n_r < 64:
        raise SpectralError("radial grid too small (need N_r >= 64)")
    if isinstance(model, ModelOperator):
        alpha, k, epsilon = float(model.alpha), model.k, model.epsilon
        if profile == "metric":
            profs = metric_profiles(model)
        else:
            profs = model_profiles(alpha)
    else:
        alpha, k, epsilon = model
        alpha = float(alpha)
        profs = model_profiles(alpha)

    op = _assemble(alpha, k, epsilon, n_r, modes, grading, bc, profs)
    if check_convergence:
        fine = _assemble(alpha, k, epsilon, 2 * n_r, modes, grading, bc, profs)
        for mi in (0, len(op.modes) - 1):
            lam_c = op.eigenvalues(mi)[:10]
            lam_f = fine.eigenvalues(mi)[:10]
            shift = np.max(np.abs(lam_f - lam_c) / np.maximum(np.abs(lam_f), 1e-30))
            if shift > 0.005:
                raise SpectralError(
                    f"grid too coarse: doubling N_r moves low eigenvalues by {shift:.2%}")
    return op


POTENTIAL_CAP = 1e12


def _assemble(alpha: float, k: int, epsilon: float, n_r: int, modes: int,
              grading: float, bc: str, profs: RadialProfiles) -> DiscretizedOperator:
    r, h = _graded_grid(epsilon, n_r, grading)
    mids = (np.concatenate([[0.0], r]) + np.concatenate([r, [epsilon]])) / 2.0
    p_mid = profs.p(mids)
    cell = (h[:-1] + h[1:]) / 2.0
    stiff_diag = p_mid[:-1] / h[:-1] + p_mid[1:] / h[1:]
    stiff_off = -p_mid[1:-1] / h[1:-1]
    w = profs.w(r)
    mass = w * cell
    # Cap the potential-to-mass ratio: eigenfunctions of every resolved state
    # vanish exponentially where the potential exceeds the cap, while an
    # uncapped r^{-alpha} at the innermost graded node would dominate the
    # matrix norm and destroy the eigensolver's absolute accuracy.
    qa = np.minimum(profs.qa(r), POTENTIAL_CAP * w)
    q0 = np.clip(profs.q0(r), -POTENTIAL_CAP * w, POTENTIAL_CAP * w)
    mode_list = tuple(angular_modes(k, modes, bc, profs.angular_length))
    return DiscretizedOperator(
        alpha=alpha, k=k, epsilon=epsilon, r=r, cell=cell, mass=mass,
        modes=mode_list, stiff_diag=stiff_diag, stiff_off=stiff_off,
        pot_angular=qa * cell, pot_zero=q0 * cell,
        grading=grading, bc=bc, profiles=profs)


# ---------------------------------------------------------------------------
# heat trace


@dataclass(frozen=True)
class HeatTraceSamples:
    t: np.ndarray
    values: np.ndarray
    chi: dict
    mode_tail: float
    n_modes: int

    def to_json(self) -> dict:
        return {"t": [float(x) for x in self.t],
                "values": [float(v) for v in self.values],
                "chi": self.chi, "mode_tail": self.mode_tail,
                "n_modes": self.n_modes}

    def to_csv(self) -> str:
        lines = ["t,value"]
        lines += [f"{float(t)!r},{float(v)!r}" for t, v in zip(self.t, self.values)]
        return "\n".join(lines) + "\n"


def heat_trace(op: DiscretizedOperator, t_grid: Sequence[float],
               chi: CutoffSpec | Callable | None = None,
               tail_rel_tol: float = 1e-10) -> HeatTraceSamples:
    """tr(chi e^{-tH}) = sum over modes and eigenpairs of <phi, chi phi> e^{-t lam}.

    The dropped-mode tail is estimated from the geometric decay of the last
    two mode contributions; exceeding ``tail_rel_tol`` of the total raises.
    """
    t = np.asarray(sorted(t_grid), dtype=np.float64)
    if np.any(t <= 0):
        raise SpectralError("heat trace needs positive times")
    if chi is None:
        chi = default_cutoff(op.epsilon)
    chi_vals = chi(op.r)
    total = np.zeros_like(t)
    per_mode_last = []
    for mi, (lam_ang, mult) in enumerate(op.modes):
        vals, vecs = op.eigenpairs(mi)
        weights = np.sum(chi_vals[:, None] * vecs ** 2, axis=0)
        contrib = mult * np.sum(
            weights[None, :] * np.exp(-np.outer(t, vals)), axis=1)
        total += contrib
        per_mode_last.append(contrib)
    tail = 0.0
    if len(per_mode_last) >= 2 and op.k > 0:
        c_last = per_mode_last[-1]
        c_prev = per_mode_last[-2]
        with np.errstate(divide="ignore", invalid="ignore"):
            rho = np.where(c_prev > 0, c_last / np.maximum(c_prev, 1e-300), 0.0)
        rho = np.clip(rho, 0.0, 0.999)
        tail = float(np.max(c_last * rho / (1.0 - rho)))
        rel = tail / max(float(np.min(total)), 1e-300)
        if rel > tail_rel_tol:
            raise SpectralError(
                f"mode cutoff insufficient: tail estimate {rel:.2e} of total")
    desc = chi.describe() if isinstance(chi, CutoffSpec) else {"kind": "custom"}
    return HeatTraceSamples(t, total, desc, tail, len(op.modes))


# ---------------------------------------------------------------------------
# predicted exponent lattice


@dataclass(frozen=True)
class PredictionParams:
    n: int
    cutoff: Fraction
    alpha: Tuple[Fraction, ...]            # model power per face
    k: Tuple[int, ...]                     # fast angular directions per face
    ell_max: int = 2
    j_max: int = 2
    p_values: Tuple[int, ...] = (1, 2)
    keep_negative_supports: bool = False


@dataclass(frozen=True)
class PredictedExponents:
    """Increasing exponent list with maximal log powers and provenance tags."""

    terms: Tuple[Tuple[Fraction, int], ...]
    provenance: Dict[Fraction, Tuple[str, ...]]

    @property
    def exponents(self) -> Tuple[Fraction, ...]:
        return tuple(z for z, _ in self.terms)

    def nearest_distance(self, value: float) -> float:
        return min(abs(float(z) - value) for z in self.exponents)

    def to_json(self) -> dict:
        return {"terms": [{"exponent": str(z), "log_power": i}
                          for z, i in self.terms],
                "provenance": {str(z): list(v)
                               for z, v in sorted(self.provenance.items())}}


def sal_supports(alpha: Fraction, ell_max: int, j_max: int,
                 p_values: Sequence[int],
                 keep_negative: bool = False) -> Tuple[Tuple[Fraction, ...], Tuple[Fraction, ...]]:
    """Supports of the two multiplicity functions attached to a sector:
    S1 at multiples of alpha; S2 at ell*((3(p-1)+2j) alpha/2 - 1), with the
    variant ell*((3(p-1)/2+j) alpha - 1) merged in."""
    alpha = Fraction(alpha)
    s1 = tuple(ell * alpha for ell in range(ell_max + 1))
    s2 = set()
    for ell in range(1, ell_max + 1):
        for j in range(j_max + 1):
            for p in p_values:
                z_a = ell * ((3 * (p - 1) + 2 * j) * alpha / 2 - 1)
                z_b = ell * ((Fraction(3 * (p - 1), 2) + j) * alpha - 1)
                for z in (z_a, z_b):
                    if keep_negative or z >= 0:
                        s2.add(z)
    return s1, tuple(sorted(s2))


def predicted_exponents(diagram: NewtonDiagram | None,
                        params: PredictionParams) -> PredictedExponents:
    """Dictionary of exponents the localized heat trace may carry.

    Generation rule (versioned; colog the provenance of every entry):

    * the smooth ladder -n/2 + j, j = 0, 1, ...;
    * per face with model data (alpha, k): a singular family at
      -(n-k)/2 + (z+1)/alpha + s, where z runs over the sector supports from
      ``sal_supports`` and the shift s over {lat/alpha + i} with lat in the
      face's weight lattice and integer i >= 0.

    The log power at an exponent is the number of distinct generating
    representations minus one (coincidences raise log degree), capped at 3.
    """
    cutoff = Fraction(params.cutoff)
    reps: Dict[Fraction, set] = {}

    def add(e: Fraction, tag: str):
        if e <= cutoff:
            reps.setdefault(e, set()).add(tag)

    j = 0
    while Fraction(-params.n, 2) + j <= cutoff:
        add(Fraction(-params.n, 2) + j, f"weyl:{j}")
        j += 1

    faces = diagram.faces if diagram is not None else ()
    for fi, alpha in enumerate(params.alpha):
        if alpha == 0:
            continue
        alpha = Fraction(alpha)
        k = params.k[fi] if fi < len(params.k) else 1
        base = Fraction(-(params.n - k), 2)
        s1, s2 = sal_supports(alpha, params.ell_max, params.j_max,
                              params.p_values, params.keep_negative_supports)
        if fi < len(faces):
            lat = exponent_lattice(faces[fi].weight.normalized(),
                                   cutoff * alpha + alpha).sequence
        else:
            lat = (Fraction(0),)
        shifts = set()
        for l in lat:
            i = 0
            while True:
                s = l / alpha + i
                if base + s > cutoff:
                    break
                shifts.add(s)
                i += 1
        for z in set(s1) | set(s2):
            for s in shifts:
                e = base + (z + 1) / alpha + s
                if e <= cutoff:
                    add(e, f"face{fi}:z={z}:s={s}")

    terms = []
    provenance = {}
    for e in sorted(reps):
        count = len(reps[e])
        terms.append((e, min(count - 1, 3)))
        provenance[e] = tuple(sorted(reps[e]))
    return PredictedExponents(tuple(terms), provenance)


# ---------------------------------------------------------------------------
# power-log fitting


@dataclass(frozen=True)
class ExpansionFit:
    terms: Tuple[Tuple[Fraction, int, float], ...]
    residual: float
    condition: float
    uncertainties: Tuple[float, ...]
    window: Tuple[float, float]
    dictionary: Tuple[Tuple[Fraction, int], ...]

    def coefficient(self, z, i: int = 0) -> float:
        z = Fraction(z)
        for zz, ii, c in self.terms:
            if zz == z and ii == i:
                return c
        return 0.0

    def to_json(self) -> dict:
        return {"terms": [{"exponent": str(z), "log_power": i, "coeff": c}
                          for z, i, c in self.terms],
                "residual": self.residual,
                "condition": self.condition,
                "window": list(self.window),
                "dictionary": [{"exponent": str(z), "max_log": i}
                               for z, i in self.dictionary]}

    def to_csv(self, predicted: PredictedExponents | None = None) -> str:
        lines = ["predicted,fitted,abs_delta,log_power"]
        for z, i, c in self.terms:
            if predicted is not None and predicted.terms:
                dist = predicted.nearest_distance(float(z))
                near = min(predicted.exponents,
                           key=lambda p: abs(float(p) - float(z)))
                lines.append(f"{near},{z},{dist!r},{i}")
            else:
                lines.append(f",{z},,{i}")
        return "\n".join(lines) + "\n"


def fit_power_log(samples: HeatTraceSamples,
                  dictionary: Sequence[Tuple[Fraction, int]],
                  noise_floor: float | None = None,
                  max_condition: float = 1e13) -> ExpansionFit:
    """Weighted least squares of the samples on {t^z log^i t}.

    Relative weighting keeps small-t dominance in check; terms whose fitted
    coefficient falls below the noise floor (adaptive from the residual) are
    pruned and the fit repeated on the surviving columns.
    """
    t = np.asarray(samples.t, dtype=np.float64)
    y = np.asarray(samples.values, dtype=np.float64)
    cols = [(Fraction(z), i) for z, imax in dictionary for i in range(imax + 1)]
    if len(t) < 3 * len(cols):
        raise SpectralError(
            f"need at least {3 * len(cols)} samples for {len(cols)} dictionary terms")
    weights = 1.0 / np.maximum(np.abs(y), 1e-300)

    def design(active):
        A = np.stack([np.power(t, float(z)) * np.log(t) ** i
                      for z, i in active], axis=1)
        return A * weights[:, None]

    active = cols
    for _ in range(2):
        Aw = design(active)
        sv = np.linalg.svd(Aw, compute_uv=False)
        cond = float(sv[0] / max(sv[-1], 1e-300))
        if cond > max_condition:
            raise SpectralError(
                f"ill-conditioned dictionary (condition number {cond:.2e})")
        coef, *_ = np.linalg.lstsq(Aw, y * weights, rcond=None)
        resid_w = Aw @ coef - y * weights
        noise = float(np.sqrt(np.mean(resid_w ** 2)))
        G = np.linalg.inv(Aw.T @ Aw)
        sigma = np.sqrt(np.maximum(np.diag(G), 0.0)) * max(noise, 1e-300)
        floor = noise_floor if noise_floor is not None else 5.0
        keep = [idx for idx in range(len(active))
                if abs(coef[idx]) > floor * sigma[idx] + 1e-14]
        if len(keep) == len(active) or not keep:
            break
        active = [active[i] for i in keep]

    fitted = (design(active) @ coef) / weights
    residual = float(np.max(np.abs(fitted - y)))
    terms = tuple((z, i, float(c)) for (z, i), c in zip(active, coef))
    return ExpansionFit(terms, residual, cond, tuple(float(s) for s in sigma),
                        (float(t.min()), float(t.max())), tuple(dictionary))


def angular_eigenvalue_stream(bc: str = "periodic", length: float = 2.0 * np.pi):
    """Ascending (eigenvalue, multiplicity) pairs of -d^2 on the circle or
    interval, generated lazily (single angular direction)."""
    m = 0
    while True:
        if bc == "periodic":
            lam = (2.0 * np.pi * m / length) ** 2
            yield lam, (1 if m == 0 else 2)
        elif bc == "dirichlet":
            lam = (np.pi * (m + 1) / length) ** 2
            yield lam, 1
        elif bc == "neumann":
            lam = (np.pi * m / length) ** 2
            yield lam, 1
        else:
            raise SpectralError(f"unknown angular boundary condition {bc!r}")
        m += 1


def full_heat_trace(model, t_grid, n_r_levels=(512, 1024, 2048),
                    grading: float = 2.0, bc: str = "periodic",
                    profile: str = "model", safety: float = 46.0
                    ) -> HeatTraceSamples:
    """Unlocalized trace sum_j e^{-t lam_j} from eigenvalues alone, with the
    h^2 (and h^4, for three levels) discretization error removed by
    Richardson extrapolation across the grid levels.

    Needing no eigenvectors, this affords the long time windows required to
    separate the singular exponent family from the smooth ladder; the mode
    loop extends itself until truncated modes are below e^{-safety}.
    """
    t = np.asarray(sorted(t_grid), dtype=np.float64)
    t_min = float(t[0])
    traces = []
    n_modes_used = 0
    for n_r in n_r_levels:
        op = discretize_model(model, n_r, 1, grading, bc, profile,
                              check_convergence=False)
        floor_q = float(np.min(op.pot_angular / op.mass))
        total = np.zeros_like(t)
        count = 0
        for lam_ang, mult in angular_eigenvalue_stream(bc, op.profiles.angular_length):
            if op.k == 0 and count >= 1:
                break
            if lam_ang * floor_q * t_min > safety and count >= 1:
                break
            s = 1.0 / np.sqrt(op.mass)
            diag = (op.stiff_diag + op.pot_zero + lam_ang * op.pot_angular) * s * s
            off = op.stiff_off * s[:-1] * s[1:]
            vals = eigh_tridiagonal(diag, off, eigvals_only=True,
                                    lapack_driver="sterf")
            total += mult * np.sum(np.exp(-np.outer(t, vals)), axis=1)
            count += 1
        n_modes_used = max(n_modes_used, count)
        traces.append(total)
    if len(traces) == 1:
        values = traces[0]
    elif len(traces) == 2:
        values = (4.0 * traces[1] - traces[0]) / 3.0
    else:
        r12 = (4.0 * traces[1] - traces[0]) / 3.0
        r23 = (4.0 * traces[2] - traces[1]) / 3.0
        values = (16.0 * r23 - r12) / 15.0
    return HeatTraceSamples(t, values, {"kind": "none"}, 0.0, n_modes_used)


def richardson_heat_trace(model, n_r: int, modes: int, t_grid,
                          chi=None, grading: float = 2.0,
                          bc: str = "periodic", profile: str = "model",
                          tail_rel_tol: float = 1e-10) -> HeatTraceSamples:
    """Heat trace with the O(h^2) discretization error removed by Richardson
    extrapolation over grids of n_r and 2 n_r nodes."""
    coarse = discretize_model(model, n_r, modes, grading=grading, bc=bc,
                              profile=profile, check_convergence=False)
    fine = discretize_model(model, 2 * n_r, modes, grading=grading, bc=bc,
                            profile=profile, check_convergence=False)
    tr_c = heat_trace(coarse, t_grid, chi, tail_rel_tol)
    tr_f = heat_trace(fine, t_grid, chi, tail_rel_tol)
    values = (4.0 * tr_f.values - tr_c.values) / 3.0
    return HeatTraceSamples(tr_f.t, values, tr_f.chi, tr_f.mode_tail,
                            tr_f.n_modes)


@dataclass(frozen=True)
class SingularExponentScan:
    exponent: float
    coefficient: float
    smooth_coefficients: Tuple[float, ...]
    residual: float


def fit_singular_exponent(t: np.ndarray, values: np.ndarray,
                          smooth_exponents: Sequence[float],
                          e_grid: Sequence[float]) -> SingularExponentScan:
    """Profile fit: for each candidate exponent e, least-squares the samples
    on {t^z (smooth), t^e}; the e minimizing the residual is the measured
    leading non-smooth exponent."""
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(values, dtype=np.float64)
    w = 1.0 / np.maximum(np.abs(y), 1e-300)
    best = None
    for e in e_grid:
        A = np.stack([np.power(t, float(z)) for z in smooth_exponents]
                     + [np.power(t, float(e))], axis=1)
        coef, *_ = np.linalg.lstsq(A * w[:, None], y * w, rcond=None)
        res = float(np.linalg.norm((A @ coef - y) * w))
        if best is None or res < best[0]:
            best = (res, e, coef)
    res, e, coef = best
    return SingularExponentScan(float(e), float(coef[-1]),
                                tuple(float(c) for c in coef[:-1]), res)


def fit_leading_exponent(t: np.ndarray, values: np.ndarray) -> float:
    """Slope of log |values| against log t (single-power regression)."""
    t = np.asarray(t, dtype=np.float64)
    v = np.abs(np.asarray(values, dtype=np.float64))
    mask = v > 1e-300
    if np.sum(mask) < 3:
        return float("nan")
    A = np.vstack([np.log(t[mask]), np.ones(int(np.sum(mask)))]).T
    return float(np.linalg.lstsq(A, np.log(v[mask]), rcond=None)[0][0])


# ---------------------------------------------------------------------------
# domain-inequality and resolvent-decay surrogates


def _tri_matvec(d: np.ndarray, e: np.ndarray, x: np.ndarray) -> np.ndarray:
    y = d * x
    y[:-1] += e * x[1:]
    y[1:] += e * x[:-1]
    return y


@dataclass(frozen=True)
class DomainEstimateResult:
    c: float
    B: float
    satisfied: bool
    min_margin: float


def basic_estimate_check(op: DiscretizedOperator, n_vectors: int = 50,
                         seed: int = 0,
                         c_grid: Sequence[float] = (0.9, 0.5, 0.25, 0.1, 0.01),
                         b_grid: Sequence[float] = tuple(10.0 ** e for e in range(7)),
                         n_modes: int = 4) -> DomainEstimateResult:
    """Search (c, B) with |H phi|^2 + B |phi|^2 >= |D2 phi|^2 + c |P phi|^2
    over random form-domain vectors, where D2 is the free part and P the
    (angular) potential part of each mode block."""
    rng = np.random.default_rng(seed)
    data = []
    for mi in range(min(n_modes, len(op.modes))):
        (d2d, d2e), pot = op.split_parts(mi)
        d, e = op.block(mi)
        for _ in range(n_vectors):
            phi = rng.standard_normal(op.r.size)
            phi /= np.linalg.norm(phi)
            h_phi = _tri_matvec(d, e, phi)
            d2_phi = _tri_matvec(d2d, d2e, phi)
            p_phi = pot * phi
            data.append((np.dot(h_phi, h_phi), np.dot(d2_phi, d2_phi),
                         np.dot(p_phi, p_phi)))
    arr = np.array(data)
    for c in c_grid:
        for B in b_grid:
            margin = arr[:, 0] + B - arr[:, 1] - c * arr[:, 2]
            if np.all(margin >= 0):
                return DomainEstimateResult(c, B, True, float(np.min(margin)))
    return DomainEstimateResult(0.0, float(b_grid[-1]), False,
                                float(np.min(arr[:, 0] + b_grid[-1]
                                             - arr[:, 1] - c_grid[-1] * arr[:, 2])))


def _first_derivative_matrix(r: np.ndarray) -> np.ndarray:
    n = r.size
    D = np.zeros((n, n))
    for i in range(n):
        if 0 < i < n - 1:
            hm, hp = r[i] - r[i - 1], r[i + 1] - r[i]
            D[i, i - 1] = -hp / (hm * (hm + hp))
            D[i, i] = (hp - hm) / (hm * hp)
            D[i, i + 1] = hm / (hp * (hm + hp))
        elif i == 0:
            D[i, i] = -1.0 / (r[1] - r[0])
            D[i, i + 1] = 1.0 / (r[1] - r[0])
        else:
            D[i, i - 1] = -1.0 / (r[n - 1] - r[n - 2])
            D[i, i] = 1.0 / (r[n - 1] - r[n - 2])
    return D


def resolvent_decay_exponent(op: DiscretizedOperator, beta: float, d_order: int,
                             lam_magnitudes: Sequence[float],
                             modes_used: Sequence[int] = (1, 2, 3)) -> float:
    """Fitted lambda-decay of | r^{-beta} Delta_ang d_r^d R(lambda) | along
    the ray Re(lambda) = -|Im(lambda)|, per fixed angular frequency."""
    weights = np.power(op.r, -beta)
    Dm = _first_derivative_matrix(op.r)
    pre = np.diag(weights)
    for _ in range(d_order):
        pre = pre @ Dm
    norms = []
    mags = np.asarray(lam_magnitudes, dtype=np.float64)
    for mag in mags:
        lam = mag * (-1.0 + 1.0j) / np.sqrt(2.0)
        worst = 0.0
        for mi in modes_used:
            if mi >= len(op.modes):
                continue
            lam_ang = op.modes[mi][0]
            H = op.dense(mi).astype(np.complex128)
            R = np.linalg.solve(H - lam * np.eye(H.shape[0]),
                                np.eye(H.shape[0]))
            B = (pre @ R) * lam_ang
            worst = max(worst, float(svdvals(B)[0]))
        norms.append(worst)
    return fit_leading_exponent(mags, np.array(norms))


# ---------------------------------------------------------------------------
# area quadrature for the leading-coefficient oracle


def frozen_area(model: ModelOperator, chi: CutoffSpec | Callable,
                angular_length: float = 2.0 * np.pi, n_r: int = 4000) -> float:
    """Quadrature of chi * sqrt(omega Sigma) over the frozen (theta=0) profile
    times the angular extent; the area entering the leading heat coefficient."""
    norm = model.normalized
    if norm is None or norm.domain.eta_dim != 1:
        raise SpectralError("area quadrature needs one angular direction")
    eps = model.epsilon
    r = np.linspace(eps / n_r, eps, n_r)
    xi = np.zeros((n_r, 1))
    om = norm.omega.eval_many(r, xi)
    sg = norm.sigma[0][0].eval_many(r, xi)
    dens = chi(r) * np.sqrt(np.maximum(om * sg, 0.0))
    return float(np.trapezoid(dens, r) * angular_length)
