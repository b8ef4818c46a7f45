"""Score-function gradient estimators for mean-field variational families.

Two estimators share one structure. For every latent ``z_n`` a single
reference draw ``z0 ~ q`` supplies the rest of its Markov blanket, ``S``
values of ``z_n`` are drawn, and the Rao-Blackwellized term

    f_n(z) = h_n(z_n) * (log p_n(x, z_n, z0_rest) - log q(z_n))

is averaged after subtracting a control variate ``a_n h_n`` whose
coefficient comes from a second, disjoint set of ``S`` draws.

``bbvi_gradient`` draws ``z_n`` from ``q`` itself. ``obbvi_gradient`` draws
from overdispersed copies of ``q`` (``S/J`` draws per dispersion coefficient)
and importance-weights each draw against the equal-weight mixture of the
proposals. With every coefficient equal to 1 the two produce identical
output under the same random stream.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .expfam import WeightOverflowError, family, log_mixture_density

__all__ = [
    "SampleBatch",
    "GradEstimate",
    "f_terms",
    "f_term",
    "control_variate_coeff",
    "bbvi_gradient",
    "obbvi_gradient",
    "sample_variance_summary",
]

MAX_LOG_WEIGHT = 700.0


@dataclass
class SampleBatch:
    """Per-group draws of one O-BBVI step, kept for dispersion adaptation."""

    values: np.ndarray  # (S, *shape)
    component: np.ndarray  # (S,) proposal index of each draw
    taus: np.ndarray  # (*shape, J)
    log_q: np.ndarray  # (S, *shape)
    log_r: np.ndarray  # (S, *shape, J) per-component proposal log densities
    log_w: np.ndarray  # (S, *shape) log mixture weights
    f: np.ndarray  # (S, *shape, dim) unweighted f terms
    h: np.ndarray  # (S, *shape, dim) scores


@dataclass
class GradEstimate:
    grad: dict
    variance: dict  # variance of the estimate itself (per-draw variance / S)
    ess: dict
    batches: dict = field(default_factory=dict)

    def flat_variance(self):
        return np.concatenate([np.ravel(v) for v in self.variance.values()])


def _threads(threads):
    if threads is None:
        threads = int(os.environ.get("ODISVI_THREADS", "1") or 1)
    return max(1, int(threads))


def _map_groups(fn, names, threads):
    # merged in group order regardless of completion order
    n = _threads(threads)
    if n == 1 or len(names) == 1:
        return [fn(i, name) for i, name in enumerate(names)]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, range(len(names)), names))


def f_terms(model, name, theta, values, z0):
    """Vectorized f and score for every draw of every latent in a group.

    Returns ``(f, h, log_q)`` with shapes (S, *shape, dim), (S, *shape, dim)
    and (S, *shape).
    """
    fam = family(model.group(name).kind)
    h = fam.score(theta, values)
    log_q = fam.log_density(theta, values)
    log_p = model.local_log_joint_batch(name, values, z0)
    return h * (log_p - log_q)[..., None], h, log_q


def f_term(model, params, n, value, z0):
    """f for a single latent ``n`` at ``z_n = value`` (blanket taken from ``z0``)."""
    name, idx = model.locate(n)
    g = model.group(name)
    family(g.kind).check_support(value)
    values = np.array(z0[name], dtype=float)[None, ...].copy()
    values[(0,) + idx] = value
    f, _, _ = f_terms(model, name, params[name], values, z0)
    return f[(0,) + idx]


def control_variate_coeff(fw, hw, tol=1e-12):
    """Per-component Cov(f, h) / Var(h) along the sample axis; 0 when Var(h) < tol."""
    fw = np.asarray(fw, dtype=float)
    hw = np.asarray(hw, dtype=float)
    if fw.shape[0] < 2:
        raise ValueError("control variate needs at least two samples")
    fc = fw - fw.mean(axis=0)
    hc = hw - hw.mean(axis=0)
    dof = fw.shape[0] - 1
    cov = np.sum(fc * hc, axis=0) / dof
    var = np.sum(hc * hc, axis=0) / dof
    safe = np.where(var < tol, 1.0, var)
    return np.where(var < tol, 0.0, cov / safe)


def _combine(fw, hw, fw_cv, hw_cv):
    a = control_variate_coeff(fw_cv, hw_cv)
    terms = fw - a * hw
    S = terms.shape[0]
    return terms.mean(axis=0), terms.var(axis=0, ddof=1) / S


def _ess(w):
    return np.sum(w, axis=0) ** 2 / np.sum(w * w, axis=0)


def _check_samples(S, J=1):
    if S < 2:
        raise ValueError("need S >= 2 samples")
    if S % J:
        raise ValueError(f"S={S} is not a multiple of J={J}")


def bbvi_gradient(model, params, S, rng, z0=None, threads=None) -> GradEstimate:
    """Rao-Blackwellized score-function gradient with control variates."""
    _check_samples(S)
    if z0 is None:
        z0 = model.sample_q(params, rng)
    names = [g.name for g in model.groups]
    streams = rng.spawn(len(names))

    def one(i, name):
        gen = streams[i]
        theta = params[name]
        fam = family(model.group(name).kind)
        theta_s = np.broadcast_to(theta, (S,) + theta.shape)
        values = fam.sample(theta_s, gen)
        values_cv = fam.sample(theta_s, gen)
        f, h, _ = f_terms(model, name, theta, values, z0)
        f_cv, h_cv, _ = f_terms(model, name, theta, values_cv, z0)
        grad, var = _combine(f, h, f_cv, h_cv)
        return grad, var, np.full(theta.shape[:-1], float(S))

    out = _map_groups(one, names, threads)
    return GradEstimate(
        grad={n: o[0] for n, o in zip(names, out)},
        variance={n: o[1] for n, o in zip(names, out)},
        ess={n: o[2] for n, o in zip(names, out)},
    )


def _weights(fam, theta, theta_r, values, taus, name):
    J = theta_r.shape[0]
    # extreme draws may overflow here; they are reported below, not warned about
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        log_q = fam.log_density(theta, values)
        log_r = np.stack([fam.log_density(theta_r[j], values) for j in range(J)], axis=-1)
        log_mix = log_mixture_density(log_r)
        log_w = log_q - log_mix
    bad = ~np.isfinite(log_mix) | ~np.isfinite(log_w) | (log_w > MAX_LOG_WEIGHT)
    if np.any(bad):
        s, *idx = np.argwhere(bad)[0]
        idx = tuple(int(i) for i in idx)
        raise WeightOverflowError(
            f"importance weight overflow for {name}[{','.join(map(str, idx))}] "
            f"at z={values[(s,) + idx]!r} with taus={taus[idx].tolist()}",
            z=float(values[(s,) + idx]),
            log_q=float(log_q[(s,) + idx]),
            log_r=log_r[(s,) + idx].copy(),
            taus=taus[idx].copy(),
        )
    return log_q, log_r, log_w


def obbvi_gradient(model, params, disp, S, rng, z0=None, threads=None, keep_batches=True) -> GradEstimate:
    """Overdispersed importance-sampled gradient (deterministic mixture).

    ``disp`` is a :class:`~odisvi.dispersion.DispersionState` or a mapping
    from group name to an array of dispersion coefficients shaped
    ``(*group.shape, J)``.
    """
    taus_by_group = getattr(disp, "tau", disp)
    J = next(iter(taus_by_group.values())).shape[-1]
    _check_samples(S, J)
    if z0 is None:
        z0 = model.sample_q(params, rng)
    names = [g.name for g in model.groups]
    streams = rng.spawn(len(names))
    component = np.repeat(np.arange(J), S // J)

    def one(i, name):
        gen = streams[i]
        theta = params[name]
        taus = np.asarray(taus_by_group[name], dtype=float)
        if np.any(taus < 1):
            raise ValueError(f"dispersion coefficients of {name} must be >= 1")
        fam = family(model.group(name).kind)
        theta_r = np.stack([fam.overdisperse(theta, taus[..., j]) for j in range(J)])
        theta_s = theta_r[component]
        values = fam.sample(theta_s, gen)
        values_cv = fam.sample(theta_s, gen)

        log_q, log_r, log_w = _weights(fam, theta, theta_r, values, taus, name)
        _, _, log_w_cv = _weights(fam, theta, theta_r, values_cv, taus, name)
        w = np.exp(log_w)[..., None]
        w_cv = np.exp(log_w_cv)[..., None]

        f, h, _ = f_terms(model, name, theta, values, z0)
        f_cv, h_cv, _ = f_terms(model, name, theta, values_cv, z0)
        grad, var = _combine(w * f, w * h, w_cv * f_cv, w_cv * h_cv)
        batch = None
        if keep_batches:
            batch = SampleBatch(values, component, taus, log_q, log_r, log_w, f, h)
        return grad, var, _ess(w[..., 0]), batch

    out = _map_groups(one, names, threads)
    return GradEstimate(
        grad={n: o[0] for n, o in zip(names, out)},
        variance={n: o[1] for n, o in zip(names, out)},
        ess={n: o[2] for n, o in zip(names, out)},
        batches={n: o[3] for n, o in zip(names, out)} if keep_batches else {},
    )


def sample_variance_summary(g: GradEstimate) -> float:
    """Average over every parameter component of the estimator's variance."""
    return float(np.mean(g.flat_variance()))
