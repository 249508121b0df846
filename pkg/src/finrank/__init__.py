"""Detection of finite expressibility of random curves from noisy discrete samples."""

from finrank.detect import (Decision, DecisionTrajectory, ObservationConfig, decide_at_update,
                            run_detection, run_fixed_boundary)
from finrank.errors import (AsymmetricInputError, ConfigError, ConstraintViolation,
                            EstimationError, FinrankError)
from finrank.schedule import (Algorithm, DetectionSchedule, PriorSpec, RateConfig,
                              build_schedule, delta_n, prior_mass_bounds, rate_tau)
from finrank.simulate import (BasisSpec, ObservationSet, ProcessSpec, make_basis, observe,
                              simulate_paths)
from finrank.smooth import (GridFunction, GridKernel, SmootherConfig, default_bandwidths,
                            estimate_cov, estimate_mean, kernel_eval)
from finrank.spectral import (OVERFLOW, OperatorBasisCoeffs, SpectralDecomposition,
                              basis_coefficients, eigendecompose, square_order_index, tail_hs,
                              trunc_index_i, trunc_index_iota)

__version__ = "0.1.0"
