"""Quadrature oracles for a one-dimensional Gaussian problem.

Target: log p(z) = log_const + log N(z; target_mean, target_var), which
covers both a bare Gaussian and the conjugate toy model, whose log-joint is
log p(x) + log p(z | x). Variational q = N(mean, var), proposal r = N(mean, tau * var). The
single-draw score-function term for the (mean, var) components is

    f(z) = h(z) * (log p(z) - log q(z)),
    h(z) = ((z - m) / v, -1/(2v) + (z - m)^2 / (2 v^2)).
"""

import math

import numpy as np
from scipy import integrate, optimize


def _log_normal(z, mean, var):
    return -0.5 * math.log(2 * math.pi * var) - 0.5 * (z - mean) ** 2 / var


class GaussianProblem:
    def __init__(self, mean, var, target_mean=0.0, target_var=1.0, log_const=0.0):
        self.m, self.v = float(mean), float(var)
        self.tm, self.tv = float(target_mean), float(target_var)
        self.c = float(log_const)

    @classmethod
    def for_toy(cls, model, mean, var):
        """The conjugate toy model's log-joint: log p(x) + log N(z; posterior)."""
        post_mean, post_var = model.posterior()
        return cls(mean, var, post_mean, post_var, model.log_evidence())

    def _f(self, z, i):
        d = z - self.m
        gap = self.c + _log_normal(z, self.tm, self.tv) - _log_normal(z, self.m, self.v)
        h = d / self.v if i == 0 else -0.5 / self.v + 0.5 * d * d / (self.v * self.v)
        return h * gap

    def _quad(self, fn):
        # split at the mean so quad sees the peak
        lo, _ = integrate.quad(fn, -np.inf, self.m, epsabs=0, epsrel=1e-11, limit=400)
        hi, _ = integrate.quad(fn, self.m, np.inf, epsabs=0, epsrel=1e-11, limit=400)
        return lo + hi

    def gradient(self):
        """E_q[f], componentwise."""
        return np.array(
            [self._quad(lambda z, i=i: math.exp(_log_normal(z, self.m, self.v)) * self._f(z, i)) for i in range(2)]
        )

    def second_moment(self, tau=1.0):
        """E_r[(w f)^2] = integral of f^2 q^2 / r, componentwise."""

        def integrand(z, i):
            log_w = 2 * _log_normal(z, self.m, self.v) - _log_normal(z, self.m, tau * self.v)
            return self._f(z, i) ** 2 * math.exp(log_w)

        return np.array([self._quad(lambda z, i=i: integrand(z, i)) for i in range(2)])

    def variance(self, tau=1.0):
        """Single-draw variance of the importance-weighted estimator, per component."""
        return self.second_moment(tau) - self.gradient() ** 2

    def total_variance(self, tau):
        return float(np.sum(self.variance(tau)))

    def dvar_dtau(self, tau, h=1e-4):
        """Central difference of the summed variance (the squared mean cancels)."""
        return float(np.sum(self.second_moment(tau + h) - self.second_moment(tau - h)) / (2 * h))

    def optimal_tau(self, upper=20.0):
        res = optimize.minimize_scalar(
            lambda t: float(np.sum(self.second_moment(t))),
            bounds=(1.0, upper),
            method="bounded",
            options={"xatol": 1e-6},
        )
        return float(res.x)
