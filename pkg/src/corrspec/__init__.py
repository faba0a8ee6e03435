"""Spectral statistics of rescaled sample correlation matrices and tests built on them."""

__version__ = "0.1.0"

from .errors import (BranchError, ConfigurationError, ContourError, CorrspecError,
                     DegenerateJointError, ModelInconsistencyError, NumericalError,
                     PrecisionError, SolverError, UnsupportedSupportError)
from .population import (EntryLaw, Kind, PopulationSpec, RadiusLaw, SampleBatch, generate_batch,
                         population_correlation, sample_radius, sample_unit_sphere)
from .correlation import (RescaledSpec, Spectrum, lss, population_summaries, rescaled_spectrum,
                          sample_correlation, sample_correlation_of, sample_covariance)
from .spectral import (SpectralMeasure, SupportInfo, centering_integral, esd_measure, lsd_cdf,
                       lsd_density, lsd_integral, mp_companion, solve_underline_s, support_interval)
from .contour import build_contour, build_nested_contours
from .clt import (CltContext, CltMoments, Elliptical, Linear, clt_cov, clt_mean, clt_moments,
                  identity_case_moments)
from .htest import (NullParams, TestReport, critical_value, joint_lambda, null_params, run_test,
                    t1_statistic, t2_statistic)
from .experiments import (ExperimentConfig, ResultTable, build_scenario, qq_data,
                          run_clt_experiment, run_lsd_experiment, run_power_experiment,
                          run_size_experiment, standardized_statistics)
