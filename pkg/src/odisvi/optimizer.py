"""AdaGrad stochastic ascent on the ELBO.

Gradients are estimated in the user-facing parameterization, mapped to the
unconstrained coordinates ``u = log(exp(lambda) - 1)`` of the positive
parameters through the softplus chain factor, and AdaGrad steps are taken
on ``u``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .dispersion import init_dispersion, update_tau, variance_grad_tau
from .estimator import bbvi_gradient, obbvi_gradient, sample_variance_summary
from .expfam import DomainError, WeightOverflowError, family, random_stream
from .trace import RunTrace, TraceRow

__all__ = [
    "METHODS",
    "AdaGradState",
    "RunAborted",
    "RunConfig",
    "adagrad_step",
    "elbo_estimate",
    "run",
]

log = logging.getLogger(__name__)

METHODS = ("bbvi", "bbvi_x2", "obbvi_single", "obbvi_mixture")
DEFAULT_ETA = {"toy": 0.1, "gnts": 0.5, "poisson_def": 1.0}


class RunAborted(RuntimeError):
    pass


@dataclass
class AdaGradState:
    accum: np.ndarray
    eta: float
    eps: float = 1e-10
    labels: list | None = None  # names of the components, for error messages

    @classmethod
    def zeros(cls, size, eta, labels=None):
        return cls(np.zeros(size), float(eta), labels=labels)


def adagrad_step(state: AdaGradState, grad):
    """Accumulate ``grad**2`` and return ``(state, eta * grad / sqrt(accum + eps))``."""
    grad = np.asarray(grad, dtype=float)
    bad = ~np.isfinite(grad)
    if np.any(bad):
        i = int(np.argmax(bad))
        name = state.labels[i] if state.labels else f"component {i}"
        raise FloatingPointError(f"non-finite gradient in {name}: {grad[i]}")
    accum = state.accum + grad**2
    step = state.eta * grad / np.sqrt(accum + state.eps)
    return AdaGradState(accum, state.eta, state.eps, state.labels), step


@dataclass
class RunConfig:
    method: str = "bbvi"
    samples: int = 8
    eta: float | None = None
    alpha: float = 0.1
    seed: int = 0
    budget_seconds: float = 60.0
    eval_interval: int = 10
    max_iterations: int | None = None
    model: str = "toy"
    model_config: dict = field(default_factory=dict)

    @property
    def J(self):
        return 2 if self.method == "obbvi_mixture" else 1

    @property
    def effective_samples(self):
        """Draws per estimate; ``bbvi_x2`` doubles both sample sets."""
        return 2 * self.samples if self.method == "bbvi_x2" else self.samples

    @property
    def step_scale(self):
        return DEFAULT_ETA.get(self.model, 0.1) if self.eta is None else self.eta

    def validate(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.samples < 2:
            raise ValueError("samples must be >= 2")
        if self.effective_samples % self.J:
            raise ValueError(f"samples={self.samples} is not a multiple of J={self.J}")
        if self.step_scale <= 0 or self.alpha <= 0:
            raise ValueError("eta and alpha must be positive")
        if self.eval_interval < 1:
            raise ValueError("eval_interval must be >= 1")
        if self.budget_seconds < 0 or (self.max_iterations is not None and self.max_iterations < 0):
            raise ValueError("budget and iteration cap must be nonnegative")
        return self

    def resolved(self):
        out = asdict(self)
        out.update(eta=self.step_scale, J=self.J, effective_samples=self.effective_samples)
        return out


def elbo_estimate(model, params, rng) -> float:
    """log p(x, z) - log q(z) at a single draw z ~ q."""
    z = model.sample_q(params, rng)
    return model.log_joint(z) - model.log_q(params, z)


class _Packer:
    """Flat unconstrained vector <-> per-group constrained parameter arrays."""

    def __init__(self, model):
        self.model = model
        self.fams = {g.name: family(g.kind) for g in model.groups}
        self.shapes, self.labels = {}, []

    def pack(self, params):
        parts = []
        for g in self.model.groups:
            u = self.fams[g.name].to_unconstrained(params[g.name])
            self.shapes[g.name] = u.shape
            parts.append(u.ravel())
        if not self.labels:
            for g in self.model.groups:
                names = self.fams[g.name].names
                for idx in np.ndindex(*self.shapes[g.name]):
                    self.labels.append(f"{g.name}[{','.join(map(str, idx[:-1]))}].{names[idx[-1]]}")
        return np.concatenate(parts)

    def _split(self, flat):
        out, start = {}, 0
        for g in self.model.groups:
            size = int(np.prod(self.shapes[g.name]))
            out[g.name] = flat[start : start + size].reshape(self.shapes[g.name])
            start += size
        return out

    def unpack(self, u):
        return {n: self.fams[n].from_unconstrained(v) for n, v in self._split(u).items()}

    def chain(self, u, grad):
        parts = self._split(u)
        return np.concatenate(
            [(np.asarray(grad[n]) * self.fams[n].chain_factor(parts[n])).ravel() for n in parts]
        )


def _check_params(model, params):
    for g in model.groups:
        family(g.kind).validate(params[g.name])


def run(config: RunConfig, model, rng=None, params=None) -> RunTrace:
    """Optimize until the CPU budget or the iteration cap is exhausted.

    Rows are recorded at iteration 0 and every ``eval_interval`` iterations.
    ``elapsed_seconds`` counts process CPU time spent inside iterations;
    evaluation time is excluded from the budget.
    """
    config.validate()
    rng = random_stream(config.seed) if rng is None else rng
    train_rng, eval_rng = rng.spawn(2)
    packer = _Packer(model)
    params = model.initial_params() if params is None else params
    u = packer.pack(params)
    state = AdaGradState.zeros(u.size, config.step_scale, packer.labels)
    disp = init_dispersion(model, config.J, config.alpha) if config.method.startswith("obbvi") else None
    S = config.effective_samples

    trace = RunTrace(model=config.model, method=config.method, seed=config.seed)
    last_variance = float("nan")

    def evaluate(it, elapsed):
        _check_params(model, params)
        trace.append(
            TraceRow(
                it,
                elapsed,
                elbo_estimate(model, params, eval_rng),
                last_variance,
                model.metric(params),
                disp.mean_tau() if disp is not None else 1.0,
            )
        )

    evaluate(0, 0.0)
    elapsed, it = 0.0, 0
    cap = np.inf if config.max_iterations is None else config.max_iterations
    while it < cap and elapsed < config.budget_seconds:
        t0 = time.process_time()
        for attempt in range(2):
            try:
                if disp is None:
                    g = bbvi_gradient(model, params, S, train_rng)
                else:
                    g = obbvi_gradient(model, params, disp, S, train_rng)
                break
            except (WeightOverflowError, DomainError, FloatingPointError) as err:
                log.warning("iteration %d attempt %d failed: %s", it + 1, attempt + 1, err)
                if attempt:
                    raise RunAborted(f"iteration {it + 1}: {err}") from err
        if disp is not None:
            disp = update_tau(disp, variance_grad_tau(model, params, g.batches, disp))
        state, step = adagrad_step(state, packer.chain(u, g.grad))
        u = u + step
        params = packer.unpack(u)
        it += 1
        elapsed += time.process_time() - t0
        if it % config.eval_interval == 0:
            last_variance = sample_variance_summary(g)
            evaluate(it, elapsed)
    trace.final_params = params
    return trace
