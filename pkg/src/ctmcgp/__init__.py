"""Bayesian inference of continuous-time Markov chain rates with Gaussian-process priors."""

from .ctmc import (
    JumpCount, ObservationSequence, PairIndex, RateMatrix, StateSpace, TransitionMatrix,
    build_rate_matrix, matrix_exponential, normalize, simulate_path, simulate_tip_data,
)
from .errors import CTMCError, GuardError, InputError, NumericalError, ParseError, StateError
from .gp import (
    CovariateSet, GPPrior, HyperPrior, KernelHyper, additive_kernel, build_gp_prior,
    gp_logdensity_and_grad, hyper_logprior, kernel_matrix,
)
from .gradients import (
    RateGradient, SparseColumn, central_difference_grad, chain_rule_to_theta,
    expm_frechet_exact, expm_grad_approx, expm_grad_series, sequential_loglik_grad,
    tree_loglik_grad,
)
from .likelihood import (
    PartialLikelihoods, TipData, brute_force_tree_loglik, loglik_fully_observed,
    loglik_sequential, preorder_partials, tree_loglik,
)
from .sampler import HMCConfig, hmc_step, leapfrog, run_chain, rw_mh_hyper_step
from .tree import Phylogeny, caterpillar_tree, random_tree, yule_tree

__version__ = "0.1.0"
