"""Prox-skipping optimization: central solvers, federated and decentralized
simulators, and a reproducible experiment harness."""

from ._backend import USING_NUMBA, backend_name
from .linalg import bregman_divergence, matrix_sqrt_psd, symmetric_eigenvalues
from .prox import Consensus, IndicatorZero, L1, ProxOperator, SquaredL2, UnsupportedProxError
from .problems import (ClientSplit, LibsvmParseError, LogisticProblem, Problem,
                       QuadraticProblem, SmoothnessInfo, StackedProblem,
                       client_gradient, heterogeneous_split, parse_libsvm,
                       serialize_libsvm, synthetic_logistic, synthetic_quadratic)
from .solvers import (ExactOracle, ExpectedSmoothness, GaussianOracle,
                      MinibatchOracle, Probe, ProxSkipConfig, SolverState,
                      expected_smoothness_constants, lyapunov,
                      one_step_expected_lyapunov, optimal_probability,
                      prox_gd_step, proxskip_step, reference_minimizer,
                      run_prox_gd, run_proxskip, run_sproxskip,
                      sproxskip_parameter_rule, stochastic_gradient)
from .federated import (CoinSchedule, FederatedState, init_federated_state,
                        make_coin_schedule, run_gd_baseline, run_local_gd,
                        run_scaffnew, run_scaffold, scaffnew_round,
                        stacked_probe)
from .decentralized import (DecentralizedConfig, DualState, MixingMatrix,
                            Topology, complete, custom,
                            decentralized_lyapunov,
                            decentralized_scaffnew_round, equivalence_check,
                            grid, mixing_matrix, ring,
                            run_decentralized_scaffnew,
                            run_splitskip_consensus, splitskip_step, star)
from .records import RunRecord, read_csv

__version__ = "0.1.0"
