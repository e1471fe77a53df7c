"""Debiased generalized entropy calibration for survey sampling.

Calibration weights maximize a generalized entropy subject to benchmark
constraints plus a debiasing constraint on ``g(d_i)``; see the README for the
command-line tool and :mod:`gecal.calibration` for the solvers.
"""

from ._kernels import BACKEND
from .adjusted import (AdjustedResult, KKind, KSpec, kernel_alpha, kernel_fit, make_kspec, profile_entropy,
                       solve_adjusted)
from .calibration import (CalibrationProblem, CalibrationResult, Mode, solve_ds, solve_gec, solve_gec_scaled,
                          solve_pinned)
from .design import (DesignInfo, Model, Population, SampleData, draw_poisson_sample, generate_population,
                     joint_inclusion)
from .entropy import EntropyKind, EntropySpec, ScaledEntropy, debias_covariate, evaluate, make_entropy
from .errors import (BracketFailure, CalibrationError, ConfigError, DomainError, EmptyNeighborhood, EmptySample,
                     GecalError, InfeasibleStart, InputError, InvalidParams, Nonconvergence, SingularHessian)
from .estimators import (Controls, EstimateReport, confidence_interval, estimate, gamma_hat, gamma_opt,
                         gamma_population, greg_estimate, hajek_estimate, ht_estimate, variance_estimate)
from .simulation import MetricsTable, StudyConfig, metrics, run_study

__version__ = "0.1.0"
