"""Online adaptation of the proposal dispersion coefficients.

Each coefficient takes a fixed-length step against the sign of a Monte Carlo
estimate of d Var / d tau, then is clipped at 1. The estimate reuses the
draws, weights and f terms already computed for the gradient step:

    d Var / d tau_j  ~=  -mean_s[ sum_i f_i(z_s)^2 * w(z_s)^2 * d log r(z_s) / d tau_j ]

where ``r`` is the (mixture) proposal and ``i`` runs over the components of
the variational parameter vector. The result is the derivative of the
single-draw variance; the 1/S factor of an S-draw average only rescales it
and does not affect the sign step.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .expfam import family

__all__ = ["DispersionState", "init_dispersion", "variance_grad_tau", "update_tau"]


@dataclass(frozen=True)
class DispersionState:
    tau: dict  # group name -> (*shape, J)
    alpha: float = 0.1

    @property
    def J(self):
        return next(iter(self.tau.values())).shape[-1]

    @property
    def frozen_first(self):
        """With two components the first stays at tau = 1 for good."""
        return self.J == 2

    def adaptable(self):
        """Mask over the trailing J axis of coefficients that adapt."""
        mask = np.ones(self.J, dtype=bool)
        if self.frozen_first:
            mask[0] = False
        return mask

    def mean_tau(self):
        mask = self.adaptable()
        return float(np.mean(np.concatenate([t[..., mask].ravel() for t in self.tau.values()])))


def init_dispersion(model, J=1, alpha=0.1) -> DispersionState:
    """tau = 2 for a single proposal, (1, 3) for a two-component mixture."""
    if J == 1:
        start = (2.0,)
    elif J == 2:
        start = (1.0, 3.0)
    else:
        raise ValueError("only J in {1, 2} is supported")
    tau = {g.name: np.broadcast_to(np.array(start), g.shape + (J,)).copy() for g in model.groups}
    return DispersionState(tau=tau, alpha=float(alpha))


def _dlog_mixture_dtau(fam, theta, batch):
    """d log r_mix(z_s) / d tau_j for every draw, shape (S, *shape, J)."""
    J = batch.taus.shape[-1]
    log_mix = batch.log_q - batch.log_w
    out = np.empty(batch.log_r.shape)
    for j in range(J):
        d = fam.dlog_dtau(theta, batch.taus[..., j], batch.values)
        out[..., j] = np.exp(batch.log_r[..., j] - log_mix) / J * d
    return out


def variance_grad_tau(model, params, batches, disp: DispersionState) -> dict:
    """Monte Carlo d Var / d tau for every coefficient (0 where frozen)."""
    mask = disp.adaptable()
    out = {}
    for name, batch in batches.items():
        fam = family(model.group(name).kind)
        dlog = _dlog_mixture_dtau(fam, params[name], batch)
        f2 = np.sum(batch.f**2, axis=-1)
        w2 = np.exp(2 * batch.log_w)
        neg = np.mean((f2 * w2)[..., None] * dlog, axis=0)
        grad = -neg
        grad[..., ~mask] = 0.0
        out[name] = grad
    return out


def update_tau(disp: DispersionState, grads: dict) -> DispersionState:
    """tau <- max(1, tau - alpha * sign(d Var / d tau)) on adaptable entries."""
    mask = disp.adaptable()
    new = {}
    for name, tau in disp.tau.items():
        g = np.asarray(grads[name], dtype=float)
        step = np.where(mask, disp.alpha * np.sign(g), 0.0)
        new[name] = np.maximum(1.0, tau - step)
    return replace(disp, tau=new)
