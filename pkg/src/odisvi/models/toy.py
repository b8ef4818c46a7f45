"""Conjugate Gaussian toy model with closed-form posterior and ELBO.

    mu ~ N(prior_mean, prior_var),   x_i | mu ~ N(mu, lik_var)

``replicas`` independent copies of the latent share the same data. Copies
never interact, so one gradient call yields ``replicas`` independent
estimates of the same single-latent problem.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..expfam import FamilyKind, normal_logpdf
from .base import LatentGroup, Model


@dataclass(frozen=True)
class ToyHyper:
    prior_mean: float = 0.0
    prior_var: float = 1.0
    lik_var: float = 1.0


@dataclass(frozen=True)
class ToyData:
    x: np.ndarray = field(default_factory=lambda: np.zeros(0))


DEFAULT_TOY_X = (1.6, 2.3, 1.9, 2.5, 1.7)


class ToyModel(Model):
    metric_name = "posterior_mean_error"
    higher_is_better = False

    def __init__(self, data: ToyData | None = None, hyper: ToyHyper | None = None, replicas=1):
        self.data = data if data is not None else ToyData(np.array(DEFAULT_TOY_X))
        self.hyper = hyper or ToyHyper()
        self.replicas = int(replicas)
        self.groups = (LatentGroup("mu", FamilyKind.GaussianMeanVar, (self.replicas,)),)
        x = np.asarray(self.data.x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise ValueError("toy data must be finite")
        self._x = x

    # log p restricted to one copy; vectorised over any shape of mu
    def _log_p(self, mu):
        h = self.hyper
        out = normal_logpdf(mu, h.prior_mean, h.prior_var)
        if self._x.size:
            out = out + np.sum(normal_logpdf(mu[..., None], self._x, h.lik_var), axis=-1)
        return out

    def log_joint(self, z):
        self.check_support(z)
        return float(np.sum(self._log_p(np.asarray(z["mu"], dtype=float))))

    def local_log_joint_batch(self, name, values, z):
        if name != "mu":
            raise KeyError(name)
        return self._log_p(np.asarray(values, dtype=float))

    def blanket(self, n):
        self.locate(n)
        return frozenset()

    # ----------------------------------------------------------- closed form

    def posterior(self):
        """Exact posterior (mean, variance) of each copy."""
        h = self.hyper
        prec = 1 / h.prior_var + self._x.size / h.lik_var
        mean = (h.prior_mean / h.prior_var + self._x.sum() / h.lik_var) / prec
        return mean, 1 / prec

    def log_evidence(self):
        h = self.hyper
        n = self._x.size
        if n == 0:
            return 0.0
        cov = h.lik_var * np.eye(n) + h.prior_var
        diff = self._x - h.prior_mean
        _, logdet = np.linalg.slogdet(2 * np.pi * cov)
        return float(-0.5 * logdet - 0.5 * diff @ np.linalg.solve(cov, diff))

    def elbo(self, mean, var):
        """Analytic ELBO of q = N(mean, var) for one copy."""
        h = self.hyper
        val = -0.5 * np.log(2 * np.pi * h.prior_var) - ((mean - h.prior_mean) ** 2 + var) / (2 * h.prior_var)
        val = val + np.sum(-0.5 * np.log(2 * np.pi * h.lik_var) - ((self._x - mean) ** 2 + var) / (2 * h.lik_var))
        return val + 0.5 * np.log(2 * np.pi * np.e * var)

    def elbo_grad(self, mean, var):
        """Analytic gradient of :meth:`elbo` w.r.t. (mean, var)."""
        h = self.hyper
        d_mean = -(mean - h.prior_mean) / h.prior_var + np.sum(self._x - mean) / h.lik_var
        d_var = -0.5 / h.prior_var - 0.5 * self._x.size / h.lik_var + 0.5 / var
        return np.array([d_mean, d_var])

    def metric(self, params):
        post_mean, _ = self.posterior()
        return float(np.mean(np.abs(params["mu"][..., 0] - post_mean)))
