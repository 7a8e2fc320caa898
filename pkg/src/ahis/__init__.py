"""ahis: parametrization and heat-trace analysis of real hypersurface germs
with an isolated singularity.

Pipeline: exact Newton-diagram combinatorics -> truncated Puiseux branch
parametrization via a Newton scheme on the quasihomogeneous cone -> induced
metric and irregular-singular model operator -> discretized heat trace and
power-log expansion fit against the predicted exponent dictionary.
"""

from .polynomial import Polynomial, parse_polynomial
from .diagram import (NewtonDiagram, NewtonFace, WeightVector, newton_diagram,
                      face_polynomial, scaling_apply, phi_gamma,
                      exponent_lattice, tangent_cone_check)
from .puiseux import (CubeDomain, PuiseuxSeries, AnalyticGerm, compose_analytic,
                      p_add, p_mul, p_norm, p_eval, r_derivative, eta_derivative)
from .parametrize import (LinkChart, Parametrization, link_solve, normal_field,
                          newton_step, newton_solve_series,
                          parametrization_residual)
from .metric import (MetricData, NormalizedMetric, ModelOperator,
                     induced_metric, remove_cross_term, model_operator)
from .spectral import (DiscretizedOperator, HeatTraceSamples, ExpansionFit,
                       discretize_model, heat_trace, predicted_exponents,
                       fit_power_log)
from .sal import (MultiplicityFunction, ResolventFactor, resolvent_index,
                  neumann_term_exponent, sal_projector_apply,
                  sal_convolution_exponents)
from .report import AnalysisConfig, AnalysisReport, run_pipeline, emit_report

__version__ = "0.1.0"
