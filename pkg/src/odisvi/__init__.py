"""Black-box variational inference with overdispersed importance sampling."""

from . import dispersion, estimator, expfam, harness, models, optimizer
from .dispersion import DispersionState, init_dispersion, update_tau, variance_grad_tau
from .estimator import GradEstimate, bbvi_gradient, control_variate_coeff, obbvi_gradient, sample_variance_summary
from .expfam import FamilyKind, FamilyParams, random_stream
from .optimizer import RunConfig, adagrad_step, elbo_estimate, run
from .trace import RunTrace

__version__ = "0.1.0"
