"""Poisson deep exponential family (DEF) for bag-of-words counts.

    w0_kv        ~ Gamma(alpha_w, beta_w)              (K, V)
    w{l}_k'k     ~ Gamma(alpha_w, beta_w), l = 1..L-1  (K, K)
    z{L}_dk      ~ Poisson(lambda_z)
    z{l}_dk      ~ Poisson(sum_k' z{l+1}_dk' w{l}_k'k)
    x_dv         ~ Poisson(sum_k z1_dk w0_kv)

Gamma priors use shape/rate. Variational factors are gamma (shape, mean)
for all weights and Poisson (mean) for all z. Poisson rates are floored at
``RATE_FLOOR`` before taking logs, since all-zero draws give a zero rate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..expfam import FamilyKind, gamma_logpdf_shape_rate, poisson_logpmf
from .base import LatentGroup, Model
from .corpus import BowCorpus

RATE_FLOOR = 1e-10


@dataclass(frozen=True)
class DEFHyper:
    alpha_w: float = 0.1
    beta_w: float = 0.3
    lambda_z: float = 0.1
    L: int = 2
    K: int = 10

    def __post_init__(self):
        if min(self.alpha_w, self.beta_w, self.lambda_z) <= 0:
            raise ValueError("DEF shape, rate and prior mean must be positive")
        if self.L < 1 or self.K < 1:
            raise ValueError("DEF needs L >= 1 and K >= 1")


def _pois(x, rate):
    return poisson_logpmf(x, np.maximum(rate, RATE_FLOOR))


class PoissonDEF(Model):
    metric_name = "perplexity"
    higher_is_better = False

    def __init__(self, counts, hyper: DEFHyper | None = None, heldout=None):
        self.hyper = hp = hyper or DEFHyper()
        self.x = np.asarray(counts, dtype=float)
        if self.x.ndim != 2 or np.any(self.x < 0) or np.any(self.x != np.floor(self.x)):
            raise ValueError("counts must be a 2-D array of nonnegative integers")
        self.heldout = None if heldout is None else np.asarray(heldout, dtype=float)
        self.n_docs, self.V = self.x.shape
        L, K = hp.L, hp.K
        groups = [LatentGroup("w0", FamilyKind.GammaShapeMean, (K, self.V))]
        groups += [LatentGroup(f"w{l}", FamilyKind.GammaShapeMean, (K, K)) for l in range(1, L)]
        groups += [LatentGroup(f"z{l}", FamilyKind.Poisson, (self.n_docs, K)) for l in range(1, L + 1)]
        self.groups = tuple(groups)

    @classmethod
    def from_corpus(cls, corpus: BowCorpus, hyper=None, heldout_fraction=0.25, rng=None):
        train, held = corpus.split_heldout(heldout_fraction, rng)
        return cls(train, hyper, heldout=held)

    # rate of layer l (1..L) given the layer above; layer 0 means the data
    def _rate(self, z, level):
        hp = self.hyper
        if level == hp.L:
            return np.full((self.n_docs, hp.K), hp.lambda_z)
        return z[f"z{level + 1}"] @ z[f"w{level}"]

    def _prior_w(self, w):
        hp = self.hyper
        return gamma_logpdf_shape_rate(w, hp.alpha_w, hp.beta_w)

    def log_joint(self, z):
        self.check_support(z)
        hp = self.hyper
        total = 0.0
        for l in range(hp.L):
            total += np.sum(self._prior_w(z[f"w{l}"]))
        for l in range(1, hp.L + 1):
            total += np.sum(_pois(z[f"z{l}"], self._rate(z, l)))
        total += np.sum(_pois(self.x, self._rate(z, 0)))
        return float(total)

    def _child_obs(self, level):
        return self.x if level == 1 else None

    def local_log_joint_batch(self, name, values, z):
        hp = self.hyper
        V = np.asarray(values, dtype=float)
        level = int(name[1:])
        if name.startswith("z"):
            out = _pois(V, self._rate(z, level))
            # children: the data (level 1) or z{level-1}
            W = z[f"w{level - 1}"]  # (K, C)
            child = self.x if level == 1 else z[f"z{level - 1}"]  # (D, C)
            zl = z[name]  # (D, K)
            rate = zl @ W  # (D, C)
            base = rate[:, None, :] - zl[..., None] * W  # (D, K, C)
            new = base + V[..., None] * W
            out += _pois(child[:, None, :], new).sum(axis=-1)
            return out
        # weights w{level}: children are x (level 0) or z{level}
        W = z[name]  # (Kp, C)
        parent = z[f"z{level + 1}"]  # (D, Kp)
        child = self.x if level == 0 else z[f"z{level}"]  # (D, C)
        rate = parent @ W  # (D, C)
        base = rate[:, None, :] - parent[..., None] * W  # (D, Kp, C)
        new = base + parent[..., None] * V[:, None]  # (S, D, Kp, C)
        lik = _pois(child[:, None, :], new).sum(axis=1)
        return self._prior_w(V) + lik

    def blanket(self, n):
        name, idx = self.locate(n)
        hp = self.hyper
        K, D = hp.K, self.n_docs
        ids = set()
        add = lambda g, *i: ids.add(self.latent_id(g, i))  # noqa: E731
        level = int(name[1:])
        if name.startswith("z"):
            d, k = idx
            if level < hp.L:
                for kk in range(K):
                    add(f"z{level + 1}", d, kk)
                    add(f"w{level}", kk, k)
            n_child = self.V if level == 1 else K
            for c in range(n_child):
                for kk in range(K):
                    add(f"w{level - 1}", kk, c)
                    add(name, d, kk)
                if level > 1:
                    add(f"z{level - 1}", d, c)
        else:
            kp, c = idx
            for d in range(D):
                for kk in range(K):
                    add(f"z{level + 1}", d, kk)
                    add(name, kk, c)
                if level > 0:
                    add(f"z{level}", d, c)
        ids.discard(n)
        return frozenset(ids)

    # -------------------------------------------------------------- metric

    def perplexity(self, params, heldout=None):
        heldout = self.heldout if heldout is None else np.asarray(heldout, dtype=float)
        if heldout is None:
            raise ValueError("no held-out counts available")
        e_z = params["z1"][..., 0]
        e_w = params["w0"][..., 1]
        return def_perplexity(e_z @ e_w, heldout)

    def metric(self, params):
        return self.perplexity(params)


def def_perplexity(recon, heldout):
    """exp(-sum log p(w | doc) / #held-out words) with p ∝ ``recon[d]``.

    Documents without held-out words drop out of both sums.
    """
    recon = np.maximum(np.asarray(recon, dtype=float), RATE_FLOOR)
    heldout = np.asarray(heldout, dtype=float)
    keep = heldout.sum(axis=1) > 0
    if not np.any(keep):
        raise ValueError("no held-out words")
    recon, heldout = recon[keep], heldout[keep]
    logp = np.log(recon) - np.log(recon.sum(axis=1, keepdims=True))
    return float(np.exp(-np.sum(heldout * logp) / heldout.sum()))
