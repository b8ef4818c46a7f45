"""Univariate exponential families used as mean-field factors and proposals.

Each family works on parameter arrays whose trailing axis holds the
parameters in the user-facing parameterization:

* ``GaussianMeanVar``: (mean, variance)
* ``GammaShapeMean``:  (shape, mean)
* ``GammaExpVar``:     (mean, variance)
* ``Poisson``:         (mean,)

Scores are gradients of the log density with respect to exactly these
parameters. Leading axes broadcast, so one call evaluates every factor of a
latent group at once.

The scalar helpers at the bottom of the module (``log_density``, ``score``,
``overdisperse`` ...) accept a :class:`FamilyParams` and are thin wrappers
over the vectorized family objects.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import digamma, expit, gammaln

__all__ = [
    "DomainError",
    "WeightOverflowError",
    "FamilyKind",
    "FamilyParams",
    "family",
    "random_stream",
    "log_density",
    "score",
    "mean_sufficient_stats",
    "sample",
    "overdisperse",
    "importance_weight",
    "dlog_proposal_dtau",
    "log_mixture_density",
    "to_unconstrained",
    "from_unconstrained",
    "softplus",
    "softplus_inverse",
    "softplus_grad",
    "gamma_e",
]

# Gamma draws are floored here; a mean-preserving gamma chain with a tiny
# previous value otherwise underflows to exactly zero, outside the support.
GAMMA_FLOOR = 1e-100


class DomainError(ValueError):
    """Raised for parameters or values outside a family's domain."""


class WeightOverflowError(ArithmeticError):
    """An importance weight could not be represented as a finite float.

    Carries the offending value and the log densities that produced it.
    """

    def __init__(self, message, z=None, log_q=None, log_r=None, taus=None):
        super().__init__(message)
        self.z = z
        self.log_q = log_q
        self.log_r = log_r
        self.taus = taus


class FamilyKind(enum.Enum):
    GaussianMeanVar = "gaussian"
    GammaShapeMean = "gamma"
    GammaExpVar = "gamma_ev"
    Poisson = "poisson"


def random_stream(seed) -> np.random.Generator:
    """Seedable, splittable counter-based generator (Philox).

    Independent child streams come from ``Generator.spawn``.
    """
    return np.random.Generator(np.random.Philox(seed))


# --------------------------------------------------------------------------
# positivity transform
# --------------------------------------------------------------------------


def softplus(u):
    """log(exp(u) + 1), stable for all u."""
    return np.logaddexp(0.0, u)


def softplus_inverse(x):
    """log(exp(x) - 1) for x > 0, written to stay accurate at both ends."""
    x = np.asarray(x, dtype=float)
    return x + np.log(-np.expm1(-x))


def softplus_grad(u):
    """d softplus(u) / du = 1 / (1 + exp(-u))."""
    return expit(u)


# --------------------------------------------------------------------------
# families
# --------------------------------------------------------------------------


class Family:
    kind: FamilyKind
    dim: int
    names: tuple
    positive: tuple  # which parameters are constrained to (0, inf)
    discrete = False

    def validate(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape[-1:] != (self.dim,):
            raise DomainError(f"{self.kind.name} expects {self.dim} parameters, got shape {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise DomainError(f"{self.kind.name} parameters must be finite")
        for i, pos in enumerate(self.positive):
            if pos and not np.all(theta[..., i] > 0):
                raise DomainError(f"{self.kind.name} {self.names[i]} must be positive")
        return theta

    def check_support(self, z):
        raise NotImplementedError

    # Subclasses provide: log_density, score, mean_stats, mean, variance,
    # sample, overdisperse, dlog_dtau.

    def to_unconstrained(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = theta.copy()
        for i, pos in enumerate(self.positive):
            if pos:
                if not np.all(theta[..., i] > 0):
                    raise DomainError(f"{self.kind.name} {self.names[i]} must be positive")
                out[..., i] = softplus_inverse(theta[..., i])
        return out

    def from_unconstrained(self, u):
        u = np.asarray(u, dtype=float)
        out = u.copy()
        for i, pos in enumerate(self.positive):
            if pos:
                out[..., i] = softplus(u[..., i])
        return out

    def chain_factor(self, u):
        """Elementwise d(constrained)/d(unconstrained) at ``u``."""
        u = np.asarray(u, dtype=float)
        out = np.ones_like(u)
        for i, pos in enumerate(self.positive):
            if pos:
                out[..., i] = softplus_grad(u[..., i])
        return out


class Gaussian(Family):
    kind = FamilyKind.GaussianMeanVar
    dim = 2
    names = ("mean", "variance")
    positive = (False, True)

    def check_support(self, z):
        z = np.asarray(z, dtype=float)
        if not np.all(np.isfinite(z)):
            raise DomainError("Gaussian support is the finite reals")
        return z

    def log_density(self, theta, z):
        mu, var = theta[..., 0], theta[..., 1]
        return -0.5 * np.log(2 * np.pi * var) - 0.5 * (z - mu) ** 2 / var

    def score(self, theta, z):
        mu, var = theta[..., 0], theta[..., 1]
        d = z - mu
        return np.stack([d / var, -0.5 / var + 0.5 * d**2 / var**2], axis=-1)

    def mean_stats(self, theta):
        # t(z) = (z, z^2)
        mu, var = theta[..., 0], theta[..., 1]
        return np.stack([mu, var + mu**2], axis=-1)

    def mean(self, theta):
        return theta[..., 0]

    def variance(self, theta):
        return theta[..., 1]

    def sample(self, theta, gen, size=None):
        theta = np.asarray(theta, dtype=float)
        shape = theta.shape[:-1] if size is None else size
        eps = gen.standard_normal(shape)
        return theta[..., 0] + np.sqrt(theta[..., 1]) * eps

    def overdisperse(self, theta, tau):
        tau = np.asarray(tau, dtype=float)
        out = np.array(theta, dtype=float, copy=True)
        out[..., 1] = out[..., 1] * tau
        return out

    def dlog_dtau(self, theta, tau, z):
        mu, var = theta[..., 0], theta[..., 1]
        return -0.5 / tau + (z - mu) ** 2 / (2 * tau**2 * var)


class _GammaBase(Family):
    """Shared shape/rate machinery; subclasses choose the parameterization."""

    def check_support(self, z):
        z = np.asarray(z, dtype=float)
        if not np.all(np.isfinite(z)) or not np.all(z > 0):
            raise DomainError("gamma support is z > 0")
        return z

    def shape_rate(self, theta):
        raise NotImplementedError

    def from_shape_rate(self, s, r):
        raise NotImplementedError

    def log_density(self, theta, z):
        s, r = self.shape_rate(theta)
        return s * np.log(r) - gammaln(s) + (s - 1) * np.log(z) - r * z

    def _score_shape_rate(self, s, r, z):
        return np.log(r) - digamma(s) + np.log(z), s / r - z

    def mean_stats(self, theta):
        # t(z) = (z, log z)
        s, r = self.shape_rate(theta)
        return np.stack([s / r, digamma(s) - np.log(r)], axis=-1)

    def mean(self, theta):
        s, r = self.shape_rate(theta)
        return s / r

    def variance(self, theta):
        s, r = self.shape_rate(theta)
        return s / r**2

    def sample(self, theta, gen, size=None):
        s, r = self.shape_rate(np.asarray(theta, dtype=float))
        if size is not None:
            s = np.broadcast_to(s, size)
            r = np.broadcast_to(r, size)
        return np.maximum(gen.standard_gamma(s) / r, GAMMA_FLOOR)

    def overdisperse(self, theta, tau):
        theta = np.asarray(theta, dtype=float)
        tau = np.asarray(tau, dtype=float)
        s, r = self.shape_rate(theta)
        out = self.from_shape_rate((s + tau - 1) / tau, r / tau)
        # tau == 1 must return the input bit for bit
        return np.where((tau == 1)[..., None], theta, out)

    def dlog_dtau(self, theta, tau, z):
        s, r = self.shape_rate(theta)
        s2 = (s + tau - 1) / tau
        r2 = r / tau
        ds, dr = self._score_shape_rate(s2, r2, z)
        return ds * (1 - s) / tau**2 - dr * r / tau**2


class GammaShapeMean(_GammaBase):
    kind = FamilyKind.GammaShapeMean
    dim = 2
    names = ("shape", "mean")
    positive = (True, True)

    def shape_rate(self, theta):
        s, m = theta[..., 0], theta[..., 1]
        return s, s / m

    def from_shape_rate(self, s, r):
        return np.stack([s, s / r], axis=-1)

    def score(self, theta, z):
        s, m = theta[..., 0], theta[..., 1]
        d_s = np.log(s) + 1 - np.log(m) - digamma(s) + np.log(z) - z / m
        d_m = s * (z - m) / m**2
        return np.stack([d_s, d_m], axis=-1)


class GammaExpVar(_GammaBase):
    kind = FamilyKind.GammaExpVar
    dim = 2
    names = ("mean", "variance")
    positive = (True, True)

    def shape_rate(self, theta):
        m, v = theta[..., 0], theta[..., 1]
        return m**2 / v, m / v

    def from_shape_rate(self, s, r):
        return np.stack([s / r, s / r**2], axis=-1)

    def score(self, theta, z):
        m, v = theta[..., 0], theta[..., 1]
        s, r = m**2 / v, m / v
        g_s, g_r = self._score_shape_rate(s, r, z)
        d_m = g_s * 2 * m / v + g_r / v
        d_v = -(g_s * m**2 + g_r * m) / v**2
        return np.stack([d_m, d_v], axis=-1)


class Poisson(Family):
    kind = FamilyKind.Poisson
    dim = 1
    names = ("mean",)
    positive = (True,)
    discrete = True

    def check_support(self, z):
        z = np.asarray(z, dtype=float)
        if not np.all(z >= 0) or not np.all(z == np.floor(z)):
            raise DomainError("Poisson support is the nonnegative integers")
        return z

    def log_density(self, theta, z):
        lam = theta[..., 0]
        return z * np.log(lam) - lam - gammaln(z + 1)

    def score(self, theta, z):
        lam = theta[..., 0]
        return (z / lam - 1)[..., None]

    def mean_stats(self, theta):
        return theta[..., :1].copy()

    def mean(self, theta):
        return theta[..., 0]

    def variance(self, theta):
        return theta[..., 0]

    def sample(self, theta, gen, size=None):
        lam = np.asarray(theta, dtype=float)[..., 0]
        if size is not None:
            lam = np.broadcast_to(lam, size)
        return np.asarray(gen.poisson(lam), dtype=float)

    def overdisperse(self, theta, tau):
        tau = np.asarray(tau, dtype=float)
        return np.asarray(theta, dtype=float) ** np.asarray(1.0 / tau)[..., None]

    def dlog_dtau(self, theta, tau, z):
        lam = theta[..., 0]
        lam2 = lam ** (1.0 / tau)
        return (z - lam2) * (-np.log(lam) / tau**2)


_FAMILIES = {
    FamilyKind.GaussianMeanVar: Gaussian(),
    FamilyKind.GammaShapeMean: GammaShapeMean(),
    FamilyKind.GammaExpVar: GammaExpVar(),
    FamilyKind.Poisson: Poisson(),
}


def family(kind: FamilyKind) -> Family:
    return _FAMILIES[FamilyKind(kind)]


def gamma_e(mean, spread, spread_is_variance=True):
    """Shape/rate of the expectation/variance gamma ``GammaE(mean, spread)``.

    ``spread`` is read as the variance by default; pass
    ``spread_is_variance=False`` to read it as a standard deviation.
    """
    var = spread if spread_is_variance else spread**2
    return mean**2 / var, mean / var


def gamma_logpdf_shape_rate(z, s, r):
    return s * np.log(r) - gammaln(s) + (s - 1) * np.log(z) - r * z


def normal_logpdf(z, mean, var):
    return -0.5 * np.log(2 * np.pi * var) - 0.5 * (z - mean) ** 2 / var


def poisson_logpmf(z, rate):
    return z * np.log(rate) - rate - gammaln(z + 1)


# --------------------------------------------------------------------------
# mixtures of overdispersed proposals
# --------------------------------------------------------------------------


def log_mixture_density(log_r):
    """log((1/J) sum_j exp(log_r[..., j])).

    Written as ``max + log(mean(exp(. - max)))`` so that J identical
    components reproduce the single-component value exactly.
    """
    log_r = np.asarray(log_r, dtype=float)
    top = np.max(log_r, axis=-1)
    safe_top = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(invalid="ignore"):
        return safe_top + np.log(np.mean(np.exp(log_r - safe_top[..., None]), axis=-1))


# --------------------------------------------------------------------------
# scalar API on FamilyParams
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FamilyParams:
    """Parameters of one exponential-family factor.

    >>> FamilyParams(FamilyKind.GaussianMeanVar, (0.0, 1.0)).values
    (0.0, 1.0)
    """

    kind: FamilyKind
    values: tuple

    def __post_init__(self):
        object.__setattr__(self, "kind", FamilyKind(self.kind))
        values = tuple(float(v) for v in np.ravel(self.values))
        object.__setattr__(self, "values", values)
        family(self.kind).validate(np.array(values))

    @property
    def array(self):
        return np.array(self.values)

    @classmethod
    def gaussian(cls, mean, variance):
        return cls(FamilyKind.GaussianMeanVar, (mean, variance))

    @classmethod
    def gamma(cls, shape, mean):
        return cls(FamilyKind.GammaShapeMean, (shape, mean))

    @classmethod
    def gamma_ev(cls, mean, variance):
        return cls(FamilyKind.GammaExpVar, (mean, variance))

    @classmethod
    def gamma_esd(cls, mean, std):
        """Expectation/standard-deviation constructor (variance = std**2)."""
        return cls(FamilyKind.GammaExpVar, (mean, std**2))

    @classmethod
    def poisson(cls, mean):
        return cls(FamilyKind.Poisson, (mean,))


def _checked(p: FamilyParams, z):
    fam = family(p.kind)
    fam.check_support(z)
    return fam, p.array, float(z)


def log_density(p: FamilyParams, z) -> float:
    fam, theta, z = _checked(p, z)
    return float(fam.log_density(theta, z))


def score(p: FamilyParams, z) -> np.ndarray:
    fam, theta, z = _checked(p, z)
    return fam.score(theta, z)


def mean_sufficient_stats(p: FamilyParams) -> np.ndarray:
    """E_q[t(z)]: Gaussian (E z, E z^2), gamma (E z, E log z), Poisson (E z)."""
    return family(p.kind).mean_stats(p.array)


def sample(p: FamilyParams, rng: np.random.Generator, size=None):
    out = family(p.kind).sample(p.array, rng, size=size)
    return float(out) if size is None else out


def overdisperse(p: FamilyParams, tau: float) -> FamilyParams:
    if not tau >= 1:
        raise DomainError(f"dispersion coefficient must be >= 1, got {tau}")
    return FamilyParams(p.kind, tuple(family(p.kind).overdisperse(p.array, tau)))


def dlog_proposal_dtau(q: FamilyParams, tau: float, z) -> float:
    """d/dtau log r(z; q, tau), analytic per family."""
    if not tau >= 1:
        raise DomainError(f"dispersion coefficient must be >= 1, got {tau}")
    fam, theta, z = _checked(q, z)
    return float(fam.dlog_dtau(theta, float(tau), z))


def importance_weight(q: FamilyParams, proposals: Sequence[FamilyParams], z) -> float:
    """q(z) / [(1/J) sum_j r_j(z)], evaluated in log space."""
    if not proposals:
        raise ValueError("at least one proposal is required")
    fam, theta, z = _checked(q, z)
    log_q = fam.log_density(theta, z)
    log_r = np.array([fam.log_density(r.array, z) for r in proposals])
    log_mix = log_mixture_density(log_r)
    log_w = log_q - log_mix
    if not np.isfinite(log_mix) or not np.isfinite(log_w) or log_w > 700:
        raise WeightOverflowError(
            f"importance weight overflow at z={z}", z=z, log_q=log_q, log_r=log_r
        )
    return float(np.exp(log_w))


def to_unconstrained(p: FamilyParams) -> np.ndarray:
    return family(p.kind).to_unconstrained(p.array)


def from_unconstrained(kind: FamilyKind, u) -> FamilyParams:
    return FamilyParams(kind, tuple(family(kind).from_unconstrained(u)))
