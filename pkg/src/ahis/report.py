"""Pipeline orchestration: germ -> diagram -> parametrization -> metric ->
model operator -> heat-trace verification, with machine-readable reports.

Every stage records its outputs and failures per face; a failed stage skips
the downstream stages for that face but leaves the report emittable.  Output
is deterministic: identical config and seed give byte-identical JSON.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .diagram import (DiagramError, NewtonDiagram, newton_diagram,
                      tangent_cone_check)
from .metric import (MetricData, ModelOperator, NormalizedMetric,
                     induced_metric, metric_consistency, model_operator,
                     remove_cross_term, sigma_norm_constant)
from .parametrize import (LinkChart, Parametrization, link_solve,
                          newton_solve_series, parametrization_residual)
from .polynomial import Polynomial, PolynomialError, parse_polynomial
from .spectral import (CutoffSpec, PredictionParams, SpectralError,
                       basic_estimate_check, default_cutoff, discretize_model,
                       fit_leading_exponent, fit_power_log, frozen_area,
                       heat_trace, predicted_exponents)

STAGES = ("diagram", "parametrize", "metric", "heat")


@dataclass(frozen=True)
class AnalysisConfig:
    input_path: str = ""
    dim: Optional[int] = None
    epsilon: float = 0.1
    delta: float = 0.2
    q_max: Fraction = Fraction(6)
    n_r: int = 512
    modes: int = 32
    t_window: Tuple[float, float, int] = (1e-4, 1e-1, 48)
    fit_cutoff: Fraction = Fraction(2)
    residual_tol: float = 1e-10
    seed: int = 7
    chart_grid: int = 17
    grading: float = 2.0
    angular_bc: str = "periodic"
    stages: Tuple[str, ...] = STAGES
    cone_samples: int = 0            # 0 disables the tangent-cone stage
    out: Optional[str] = None

    def __post_init__(self):
        if self.residual_tol <= 0 or self.epsilon <= 0 or self.delta <= 0:
            raise ValueError("tolerances and extents must be positive")
        tmin, tmax, n = self.t_window
        if not (0 < tmin < tmax <= 1.0) or n < 4:
            raise ValueError("t window must satisfy 0 < tmin < tmax <= 1")

    def t_grid(self) -> np.ndarray:
        tmin, tmax, n = self.t_window
        return np.geomspace(tmin, tmax, int(n))

    def to_json(self) -> dict:
        return {
            "input_path": self.input_path, "dim": self.dim,
            "epsilon": self.epsilon, "delta": self.delta,
            "q_max": str(self.q_max), "n_r": self.n_r, "modes": self.modes,
            "t_window": list(self.t_window), "fit_cutoff": str(self.fit_cutoff),
            "residual_tol": self.residual_tol, "seed": self.seed,
            "chart_grid": self.chart_grid, "grading": self.grading,
            "angular_bc": self.angular_bc, "stages": list(self.stages),
            "cone_samples": self.cone_samples,
        }


@dataclass
class FaceRecord:
    index: int
    status: Dict[str, str] = field(default_factory=dict)
    errors: Dict[str, str] = field(default_factory=dict)
    data: Dict[str, object] = field(default_factory=dict)

    def ok(self, stage: str) -> bool:
        return self.status.get(stage) == "ok"

    def to_json(self) -> dict:
        return {"face_index": self.index, "status": dict(sorted(self.status.items())),
                "errors": dict(sorted(self.errors.items())),
                **{k: v for k, v in sorted(self.data.items())}}


@dataclass
class AnalysisReport:
    config: AnalysisConfig
    polynomial: Optional[dict] = None
    diagram: Optional[dict] = None
    faces: List[FaceRecord] = field(default_factory=list)
    global_errors: List[str] = field(default_factory=list)
    # live objects for downstream consumers (not serialized)
    objects: Dict[int, dict] = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        if self.global_errors:
            return True
        return any(rec.errors for rec in self.faces)

    def to_json(self) -> dict:
        return {
            "config": self.config.to_json(),
            "polynomial": self.polynomial,
            "diagram": self.diagram,
            "faces": [rec.to_json() for rec in self.faces],
            "global_errors": list(self.global_errors),
            "exit_status": 3 if self.failed else 0,
        }


def load_germ(path: str, dim: Optional[int] = None) -> Polynomial:
    """Read a germ from .json (schema form) or text; text infers the ambient
    dimension from the highest variable index unless given."""
    p = Path(path)
    text = p.read_text()
    if p.suffix == ".json":
        return Polynomial.from_json(json.loads(text))
    if dim is None:
        idxs = [int(m) for m in re.findall(r"x(\d+)", text)]
        if not idxs:
            raise PolynomialError("cannot infer dimension from constant text")
        dim = max(idxs)
    return parse_polynomial(text.strip(), dim)


def run_pipeline(config: AnalysisConfig, germ: Polynomial | None = None) -> AnalysisReport:
    """Run the enabled stages face by face; failures are recorded, not raised."""
    report = AnalysisReport(config)
    rng = np.random.default_rng(config.seed)
    del rng  # all stages are deterministic; the seed is recorded for repro

    try:
        f = germ if germ is not None else load_germ(config.input_path, config.dim)
        report.polynomial = f.to_json()
    except (OSError, PolynomialError, json.JSONDecodeError) as exc:
        report.global_errors.append(f"input: {exc}")
        return report

    if "diagram" not in config.stages:
        return report
    try:
        if any(sum(e) <= 1 for e in f.terms):
            raise DiagramError(
                "not a singular germ: constant or linear term present")
        diagram = newton_diagram(f)
        report.diagram = diagram.to_json()
    except (DiagramError, PolynomialError) as exc:
        report.global_errors.append(f"diagram: {exc}")
        return report

    for j, face in enumerate(diagram.faces):
        rec = FaceRecord(index=j)
        rec.status["diagram"] = "ok"
        rec.data["weight"] = face.weight.normalized().to_json()
        report.faces.append(rec)
        objects: dict = {}
        report.objects[j] = objects

        if config.cone_samples > 0:
            try:
                cone = tangent_cone_check(f, face, config.cone_samples,
                                          config.epsilon, 0.5)
                rec.data["tangent_cone"] = {
                    "max_residual_ratio": cone.max_residual_ratio,
                    "min_cosine": cone.min_cosine,
                    "passed": cone.passed,
                }
            except ValueError as exc:
                rec.errors["tangent_cone"] = str(exc)

        if "parametrize" not in config.stages:
            continue
        try:
            charts = link_solve(face, f, grid=config.chart_grid,
                                delta=config.delta, epsilon=config.epsilon)
            params = [newton_solve_series(f, face, ch, config.q_max,
                                          tol=config.residual_tol)
                      for ch in charts]
            objects["charts"] = charts
            objects["params"] = params
            rec.status["parametrize"] = "ok"
            rec.data["branches"] = [
                {
                    "branch_id": p.branch_id,
                    "nu": [str(v) for v in p.nu],
                    "residual_certificate": p.residual_certificate,
                    "contraction": p.contraction.to_json(),
                    "t_leading_exponent": p.t_leading_exponent,
                    "off_lattice_energy": p.off_lattice_energy,
                    "exact": p.exact,
                    "chi": [s.to_json() for s in p.chi],
                }
                for p in params
            ]
            res = parametrization_residual(params[0], f)
            rec.data["residual_decay_exponent"] = res.decay_exponent
        except ValueError as exc:
            rec.status["parametrize"] = "failed"
            rec.errors["parametrize"] = str(exc)
            continue

        if "metric" not in config.stages:
            continue
        try:
            param = params[0]
            mdata = induced_metric(param)
            norm = remove_cross_term(mdata)
            model = model_operator(norm, face)
            objects["metric"] = mdata
            objects["normalized"] = norm
            objects["model"] = model
            rec.status["metric"] = "ok"
            rec.data["metric"] = {
                "omega_min": mdata.omega_min(),
                "consistency": metric_consistency(mdata, param),
                "sigma_norm_constant": sigma_norm_constant(mdata),
                "lyapunov_exponent": norm.lyapunov_exponent,
                "residual_cross": norm.residual_cross,
            }
            rec.data["model_operator"] = model.to_json()
        except ValueError as exc:
            rec.status["metric"] = "failed"
            rec.errors["metric"] = str(exc)
            continue

        if "heat" not in config.stages:
            continue
        try:
            profile = "metric" if (model.k == 1 and model.normalized is not None
                                   and model.normalized.domain.eta_dim == 1) \
                else "model"
            op = discretize_model(model, config.n_r, config.modes,
                                  grading=config.grading, bc=config.angular_bc,
                                  profile=profile)
            chi = default_cutoff(model.epsilon)
            samples = heat_trace(op, config.t_grid(), chi)
            n = f.dim - 1
            pred = predicted_exponents(
                diagram,
                PredictionParams(n=n, cutoff=config.fit_cutoff,
                                 alpha=tuple(
                                     model.alpha if i == j else Fraction(0)
                                     for i in range(len(diagram.faces))),
                                 k=tuple(model.k for _ in diagram.faces)))
            max_cols = max(4, int(config.t_window[2]) // 3)
            dictionary = [(z, lp) for z, lp in pred.terms][:max_cols]
            fit = fit_power_log(samples, dictionary)
            objects["heat"] = samples
            objects["fit"] = fit
            objects["predicted"] = pred
            rec.status["heat"] = "ok"
            rec.data["heat"] = {
                "samples": samples.to_json(),
                "predicted": pred.to_json(),
                "fit": fit.to_json(),
                "exponent_table": _exponent_table(fit, pred),
            }
            if profile == "metric":
                rec.data["heat"]["area"] = frozen_area(model, chi)
        except ValueError as exc:
            rec.status["heat"] = "failed"
            rec.errors["heat"] = str(exc)
    return report


def _exponent_table(fit, pred) -> List[dict]:
    rows = []
    for z, i, c in fit.terms:
        dist = pred.nearest_distance(float(z)) if pred.terms else None
        rows.append({"fitted": str(z), "log_power": i, "coeff": c,
                     "predicted_distance": dist})
    return rows


# ---------------------------------------------------------------------------
# emission


def emit_report(report: AnalysisReport, fmt: str = "json",
                path: str | None = None) -> str:
    """Serialize the report; JSON output is byte-stable for a fixed config."""
    if fmt == "json":
        text = json.dumps(report.to_json(), sort_keys=True, indent=2) + "\n"
    elif fmt == "csv":
        lines = ["face_index,stage,status"]
        for rec in report.faces:
            for stage in STAGES:
                if stage in rec.status:
                    lines.append(f"{rec.index},{stage},{rec.status[stage]}")
        text = "\n".join(lines) + "\n"
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is not None:
        Path(path).write_text(text)
    return text


def exponent_table_csv(report: AnalysisReport, face_index: int = 0) -> str:
    rec = report.faces[face_index]
    rows = rec.data.get("heat", {}).get("exponent_table", [])
    lines = ["predicted,fitted,abs_delta,log_power"]
    pred = report.objects.get(face_index, {}).get("predicted")
    for row in rows:
        z = float(Fraction(row["fitted"]))
        if pred is not None and pred.terms:
            near = min(pred.exponents, key=lambda p: abs(float(p) - z))
            lines.append(f"{near},{row['fitted']},{row['predicted_distance']!r},{row['log_power']}")
        else:
            lines.append(f",{row['fitted']},,{row['log_power']}")
    return "\n".join(lines) + "\n"


def metric_grid_csv(mdata: MetricData, n_r: int = 12, n_xi: int = 5) -> str:
    """Grid dump (r, theta..., omega, Sigma entries) for external plotting."""
    from .metric import _sample_grid
    r, xi = _sample_grid(mdata.domain, n_r, n_xi)
    k = mdata.eta_dim
    head = ["r"] + [f"theta{i+1}" for i in range(k)] + ["omega"]
    head += [f"sigma_{i+1}{j+1}" for i in range(k) for j in range(k)]
    lines = [",".join(head)]
    om = mdata.omega.eval_many(r, xi)
    S = mdata.sigma_matrix_many(r, xi)
    for idx in range(r.size):
        row = [repr(float(r[idx]))] + [repr(float(v)) for v in xi[idx]]
        row.append(repr(float(om[idx])))
        row += [repr(float(S[idx, i, j])) for i in range(k) for j in range(k)]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"
