"""Model interface shared by every probabilistic model in the package.

Latent variables are organised in named groups (``"w"``, ``"z1"`` ...) of a
single family each. Every scalar latent also has a dense integer id, assigned
group by group in C order, which is what :meth:`Model.blanket` and
:meth:`Model.local_log_joint` speak.

The workhorse for gradient estimation is :meth:`Model.local_log_joint_batch`:
for a group it evaluates, for every latent ``n`` in the group and every
candidate value ``values[s, n]``, the sum of log-joint terms that involve
``z_n`` with ``z_n`` replaced by that candidate and every other latent held at
the reference assignment.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..expfam import DomainError, FamilyKind, family

__all__ = ["LatentGroup", "Model", "ContractError"]


class ContractError(ValueError):
    """A caller broke an interface contract (e.g. a missing blanket member)."""


@dataclass(frozen=True)
class LatentGroup:
    name: str
    kind: FamilyKind  # family of the variational factor
    shape: tuple

    @property
    def size(self):
        return int(np.prod(self.shape, dtype=int))


class Model(ABC):
    groups: tuple = ()
    metric_name = "metric"
    higher_is_better = True

    # ------------------------------------------------------------------ ids

    def _offsets(self):
        offsets, total = {}, 0
        for g in self.groups:
            offsets[g.name] = total
            total += g.size
        return offsets, total

    @property
    def n_latent(self):
        return self._offsets()[1]

    def group(self, name) -> LatentGroup:
        for g in self.groups:
            if g.name == name:
                return g
        raise KeyError(name)

    def latent_id(self, name, index) -> int:
        g = self.group(name)
        return self._offsets()[0][name] + int(np.ravel_multi_index(index, g.shape))

    def locate(self, n: int):
        """Map a dense id to ``(group name, multi-index)``."""
        offsets, total = self._offsets()
        if not 0 <= n < total:
            raise IndexError(f"latent id {n} out of range [0, {total})")
        for g in reversed(self.groups):
            if n >= offsets[g.name]:
                return g.name, tuple(int(i) for i in np.unravel_index(n - offsets[g.name], g.shape))
        raise AssertionError("unreachable")

    def latents(self):
        """List of ``(id, kind, support)`` triples for every latent."""
        support = {
            FamilyKind.GaussianMeanVar: "real",
            FamilyKind.GammaShapeMean: "positive",
            FamilyKind.GammaExpVar: "positive",
            FamilyKind.Poisson: "count",
        }
        out = []
        for g in self.groups:
            start = self.latent_id(g.name, (0,) * len(g.shape))
            out.extend((start + i, g.kind, support[g.kind]) for i in range(g.size))
        return out

    def label(self, n: int) -> str:
        name, idx = self.locate(n)
        return f"{name}[{','.join(map(str, idx))}]"

    # ------------------------------------------------------------ log joint

    @abstractmethod
    def log_joint(self, z: Mapping[str, np.ndarray]) -> float:
        """Exact log p(x, z) for a complete assignment."""

    @abstractmethod
    def local_log_joint_batch(self, name: str, values: np.ndarray, z: Mapping[str, np.ndarray]) -> np.ndarray:
        """Markov-blanket log-joint of every latent in group ``name``.

        ``values`` has shape ``(S, *group.shape)``; the result has the same
        shape, entry ``[s, i]`` holding log p_i(x, z) with ``z_i`` set to
        ``values[s, i]`` and all other latents taken from ``z``.
        """

    @abstractmethod
    def blanket(self, n: int) -> frozenset:
        """Ids of the latents sharing a log-joint factor with latent ``n``."""

    def local_log_joint(self, n: int, assignment: Mapping[int, float]) -> float:
        """Local log-joint of latent ``n`` from an id -> value assignment.

        The assignment must cover ``n`` and its blanket; other entries are
        ignored.
        """
        needed = self.blanket(n) | {n}
        missing = needed - set(assignment)
        if missing:
            raise ContractError(
                f"assignment for {self.label(n)} misses blanket members "
                + ", ".join(self.label(m) for m in sorted(missing)[:5])
            )
        z = self.filler()
        for m in needed:
            name, idx = self.locate(m)
            z[name][idx] = assignment[m]
        self.check_support(z)
        name, idx = self.locate(n)
        values = z[name][None, ...]
        return float(self.local_log_joint_batch(name, values, z)[(0,) + idx])

    # --------------------------------------------------------------- helpers

    def filler(self):
        """An in-support assignment of ones (used for entries out of scope)."""
        return {g.name: np.ones(g.shape) for g in self.groups}

    def to_assignment(self, z: Mapping[str, np.ndarray]) -> dict:
        out = {}
        for g in self.groups:
            flat = np.asarray(z[g.name], dtype=float).ravel()
            start = self.latent_id(g.name, (0,) * len(g.shape))
            out.update({start + i: float(v) for i, v in enumerate(flat)})
        return out

    def prior_kind(self, name) -> FamilyKind:
        return self.group(name).kind

    def check_support(self, z: Mapping[str, np.ndarray]):
        for g in self.groups:
            if g.name not in z:
                raise ContractError(f"assignment misses group {g.name}")
            arr = np.asarray(z[g.name], dtype=float)
            if arr.shape != g.shape:
                raise ContractError(f"group {g.name} has shape {arr.shape}, expected {g.shape}")
            try:
                family(self.prior_kind(g.name)).check_support(arr)
            except DomainError as err:
                raise DomainError(f"latent group {g.name!r}: {err}") from None

    def initial_params(self) -> dict:
        """Shared variational starting point.

        Gaussian factors mean 0 variance 1, gamma factors shape 1 mean 1,
        Poisson factors mean 1.
        """
        init = {
            FamilyKind.GaussianMeanVar: (0.0, 1.0),
            FamilyKind.GammaShapeMean: (1.0, 1.0),
            FamilyKind.GammaExpVar: (1.0, 1.0),
            FamilyKind.Poisson: (1.0,),
        }
        return {g.name: np.broadcast_to(np.array(init[g.kind]), g.shape + (len(init[g.kind]),)).copy() for g in self.groups}

    def sample_q(self, params, gen):
        return {g.name: family(g.kind).sample(params[g.name], gen) for g in self.groups}

    def log_q(self, params, z) -> float:
        return float(sum(np.sum(family(g.kind).log_density(params[g.name], z[g.name])) for g in self.groups))

    @abstractmethod
    def metric(self, params) -> float:
        """Model-specific held-out performance of the variational means."""
