"""Gamma-normal time series (GNTS) model.

    w_kd   ~ N(0, sigma_w2)
    o_nd   ~ N(0, sigma_o2)
    z_n1k  ~ GammaE(sigma_z, sigma_z)
    z_ntk  ~ GammaE(z_n(t-1)k, sigma_z)
    x_ndt  ~ N(o_nd + sum_k z_ntk w_kd, sigma_x2)

``GammaE(m, v)`` is the gamma with mean ``m`` and variance ``v`` (shape
m**2/v, rate m/v). Set ``gammae_spread="std"`` to read the second argument
as a standard deviation instead.

Variational factors: Gaussian (mean, variance) for ``w`` and ``o``, gamma
(shape, mean) for ``z``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..expfam import GAMMA_FLOOR, FamilyKind, gamma_e, gamma_logpdf_shape_rate, normal_logpdf
from .base import LatentGroup, Model

MAGIC = b"GNTS"


@dataclass(frozen=True)
class GNTSHyper:
    sigma_w2: float = 1.0
    sigma_o2: float = 1.0
    sigma_z: float = 1.0
    sigma_x2: float = 0.01
    gammae_spread: str = "variance"

    def __post_init__(self):
        if min(self.sigma_w2, self.sigma_o2, self.sigma_z, self.sigma_x2) <= 0:
            raise ValueError("GNTS hyperparameters must be positive")
        if self.gammae_spread not in ("variance", "std"):
            raise ValueError("gammae_spread must be 'variance' or 'std'")


@dataclass(frozen=True)
class GNTSData:
    """Observations ``x`` with shape (N, D, T) and the held-out step (N, D)."""

    x: np.ndarray
    heldout: np.ndarray | None = None

    def __post_init__(self):
        if np.asarray(self.x).ndim != 3 or not np.all(np.isfinite(self.x)):
            raise ValueError("GNTS data must be a finite (N, D, T) array")


def n_hidden(N, T, D, K):
    """Number of latent variables in a GNTS model of the given size."""
    return K * D + N * D + N * T * K


def _log_gamma_e(z, mean, hp: GNTSHyper):
    s, r = gamma_e(mean, hp.sigma_z, hp.gammae_spread == "variance")
    return gamma_logpdf_shape_rate(z, s, r)


def gnts_generate(N, T, D, K, hp: GNTSHyper | None = None, rng=None):
    """Draw a synthetic dataset plus one extra held-out time step.

    Returns ``(GNTSData, truth)`` with ``truth`` holding ``w``, ``o`` and the
    full ``z`` chain of shape (N, T + 1, K).
    """
    if min(N, T, D, K) < 1:
        raise ValueError("all GNTS dimensions must be >= 1")
    hp = hp or GNTSHyper()
    rng = rng if rng is not None else np.random.default_rng()
    w = rng.normal(0.0, np.sqrt(hp.sigma_w2), size=(K, D))
    o = rng.normal(0.0, np.sqrt(hp.sigma_o2), size=(N, D))
    z = np.empty((N, T + 1, K))
    prev = np.full((N, K), hp.sigma_z)
    for t in range(T + 1):
        s, r = gamma_e(prev, hp.sigma_z, hp.gammae_spread == "variance")
        z[:, t] = np.maximum(rng.standard_gamma(s) / r, GAMMA_FLOOR)
        prev = z[:, t]
    mean = o[:, None, :] + np.einsum("ntk,kd->ntd", z, w)
    x = mean + rng.normal(0.0, np.sqrt(hp.sigma_x2), size=mean.shape)
    data = GNTSData(x=np.ascontiguousarray(x[:, :T].transpose(0, 2, 1)), heldout=x[:, T].copy())
    return data, {"w": w, "o": o, "z": z}


def write_gnts(path, x):
    """Persist an (N, D, T) tensor: magic, int32 N, T, D, then float64 data."""
    x = np.asarray(x, dtype="<f8")
    N, D, T = x.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<iii", N, T, D))
        fh.write(x.tobytes(order="C"))


def read_gnts(path):
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a GNTS file")
    N, T, D = struct.unpack("<iii", raw[4:16])
    body = np.frombuffer(raw[16:], dtype="<f8")
    if body.size != N * D * T:
        raise ValueError(f"{path}: expected {N * D * T} values, found {body.size}")
    return body.reshape(N, D, T).astype(float)


class GNTSModel(Model):
    metric_name = "heldout_loglik"
    higher_is_better = True

    def __init__(self, data: GNTSData, K: int, hyper: GNTSHyper | None = None):
        self.data = data
        self.hyper = hyper or GNTSHyper()
        self.K = int(K)
        N, D, T = data.x.shape
        self.N, self.D, self.T = N, D, T
        self._x = np.ascontiguousarray(data.x.transpose(0, 2, 1))  # (N, T, D)
        self.groups = (
            LatentGroup("w", FamilyKind.GaussianMeanVar, (self.K, D)),
            LatentGroup("o", FamilyKind.GaussianMeanVar, (N, D)),
            LatentGroup("z", FamilyKind.GammaShapeMean, (N, T, self.K)),
        )

    def _mean(self, z):
        return z["o"][:, None, :] + np.einsum("ntk,kd->ntd", z["z"], z["w"])

    def _loglik(self, x, mean):
        return normal_logpdf(x, mean, self.hyper.sigma_x2)

    def _prior_means(self, zz):
        prev = np.empty_like(zz)
        prev[:, 0] = self.hyper.sigma_z
        prev[:, 1:] = zz[:, :-1]
        return prev

    def log_joint(self, z):
        self.check_support(z)
        hp = self.hyper
        zz = np.asarray(z["z"], dtype=float)
        total = np.sum(normal_logpdf(z["w"], 0.0, hp.sigma_w2))
        total += np.sum(normal_logpdf(z["o"], 0.0, hp.sigma_o2))
        total += np.sum(_log_gamma_e(zz, self._prior_means(zz), hp))
        total += np.sum(self._loglik(self._x, self._mean(z)))
        return float(total)

    def local_log_joint_batch(self, name, values, z):
        hp = self.hyper
        V = np.asarray(values, dtype=float)
        w, o, zz = (np.asarray(z[k], dtype=float) for k in ("w", "o", "z"))
        mean = self._mean(z)
        if name == "w":
            # (N, T, K, D): mean with the k-th contribution removed
            base = mean[:, :, None, :] - zz[..., None] * w
            new = base + zz[..., None] * V[:, None, None]
            lik = self._loglik(self._x[:, :, None, :], new).sum(axis=(1, 2))
            return normal_logpdf(V, 0.0, hp.sigma_w2) + lik
        if name == "o":
            base = mean - o[:, None, :]
            new = base + V[:, :, None, :]
            lik = self._loglik(self._x, new).sum(axis=2)
            return normal_logpdf(V, 0.0, hp.sigma_o2) + lik
        if name == "z":
            out = _log_gamma_e(V, self._prior_means(zz), hp)
            child = _log_gamma_e(zz[:, 1:], V[:, :, :-1], hp)
            out[:, :, :-1] += child
            base = mean[:, :, None, :] - zz[..., None] * w
            new = base + V[..., None] * w
            out += self._loglik(self._x[:, :, None, :], new).sum(axis=-1)
            return out
        raise KeyError(name)

    def blanket(self, n):
        name, idx = self.locate(n)
        N, T, D, K = self.N, self.T, self.D, self.K
        ids = set()
        add = lambda g, *i: ids.add(self.latent_id(g, i))  # noqa: E731
        if name == "w":
            k, d = idx
            for nn in range(N):
                add("o", nn, d)
                for t in range(T):
                    for kk in range(K):
                        add("z", nn, t, kk)
            for kk in range(K):
                add("w", kk, d)
        elif name == "o":
            nn, d = idx
            for k in range(K):
                add("w", k, d)
            for t in range(T):
                for k in range(K):
                    add("z", nn, t, k)
        else:
            nn, t, k = idx
            if t > 0:
                add("z", nn, t - 1, k)
            if t < T - 1:
                add("z", nn, t + 1, k)
            for d in range(D):
                add("o", nn, d)
                for kk in range(K):
                    add("w", kk, d)
            for kk in range(K):
                add("z", nn, t, kk)
        ids.discard(n)
        return frozenset(ids)

    # -------------------------------------------------------------- metric

    def predictive_mean(self, params):
        """Plug-in prediction for the held-out step.

        The gamma chain is mean preserving, so the next-step factor mean is
        the variational mean of the last observed step.
        """
        e_o = params["o"][..., 0]
        e_w = params["w"][..., 0]
        e_z_next = params["z"][:, -1, :, 1]
        return e_o + e_z_next @ e_w

    def heldout_loglik(self, params, heldout=None, keep_constants=False):
        """Average Gaussian log-likelihood of the held-out step.

        With ``keep_constants=False`` the ``-0.5 log(2 pi sigma_x2)`` term is
        dropped, identically for every method.
        """
        heldout = self.data.heldout if heldout is None else heldout
        if heldout is None:
            raise ValueError("no held-out time step available")
        resid = np.asarray(heldout) - self.predictive_mean(params)
        ll = -0.5 * resid**2 / self.hyper.sigma_x2
        if keep_constants:
            ll = ll - 0.5 * np.log(2 * np.pi * self.hyper.sigma_x2)
        return float(np.mean(ll))

    def metric(self, params):
        return self.heldout_loglik(params)
