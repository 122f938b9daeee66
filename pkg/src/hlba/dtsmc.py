"""Density-tempered sequential Monte Carlo.

A weighted cloud of M entries ``(mu, Sigma, a, alpha_1..alpha_S)`` starts at
the prior and is carried through targets proportional to
``p(y | alpha)^a_p * p(alpha, theta)``.  At each stage the next temperature
is chosen so the reweighted cloud keeps a target ESS; the cloud is then
reweighted, resampled and moved by L tempered PMwG iterations per entry.
The log-normalizer increments and log-likelihood moments recorded per stage
feed the evidence estimators in :mod:`hlba.marglik`.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import _rng
from .errors import DegenerateWeightsError, ParameterDomainError
from .marglik import TemperTrace
from .model import GroupParams, HyperConfig, sample_alpha_prior, sample_group_prior
from .pmwg import ChainState, _as_likelihood, sweep
from .proposals import ADAPTED, PRIOR, ProposalSpec, fit_adapted_proposals

log = logging.getLogger(__name__)


@dataclass
class SmcConfig:
    M: int = 250
    R: int = 100
    L: int = 10
    ess_target: float | None = None  # default 0.8 * M
    grid_size: int = 1000
    a_switch: float = 0.1
    w_mix: float = 0.9
    epsilon: float = 1.0
    resampling: str = "multinomial"
    seed: int = 0
    workers: int = 1
    hyper: HyperConfig = field(default_factory=HyperConfig)
    min_adapt_draws: int | None = None

    def __post_init__(self):
        if self.M < 2:
            raise ParameterDomainError("M must be at least 2")
        if self.R < 1 or self.L < 0 or self.grid_size < 1:
            raise ParameterDomainError("R >= 1, L >= 0 and grid_size >= 1 required")
        if self.ess_target is None:
            self.ess_target = 0.8 * self.M
        if not 1.0 <= self.ess_target <= self.M:
            raise ParameterDomainError("ess_target must lie in [1, M]")
        if not 0.0 < self.a_switch < 1.0:
            raise ParameterDomainError("a_switch must lie in (0, 1)")
        if self.resampling not in ("multinomial", "systematic"):
            raise ParameterDomainError(f"unknown resampling scheme {self.resampling!r}")
        if self.workers < 1:
            raise ParameterDomainError("workers must be at least 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hyper"] = self.hyper.to_dict()
        return d


@dataclass
class ParticleCloud:
    """M weighted entries; ``loglik`` caches each entry's per-subject log-likelihoods."""

    mu: np.ndarray  # (M, D)
    sigma: np.ndarray  # (M, D, D)
    a: np.ndarray  # (M, D)
    alpha: np.ndarray  # (M, S, D)
    loglik: np.ndarray  # (M, S)
    weights: np.ndarray  # (M,)
    temperature: float = 0.0
    trace: TemperTrace = field(default_factory=TemperTrace)
    param_names: list = field(default_factory=list)

    @property
    def M(self) -> int:
        return len(self.weights)

    @property
    def total_loglik(self) -> np.ndarray:
        return self.loglik.sum(axis=1)

    def group(self, m: int) -> GroupParams:
        return GroupParams(self.mu[m], self.sigma[m], self.a[m])

    def take(self, idx) -> None:
        for name in ("mu", "sigma", "a", "alpha", "loglik"):
            setattr(self, name, getattr(self, name)[idx].copy())


def ess(weights) -> float:
    w = np.asarray(weights, dtype=np.float64)
    return float(1.0 / np.sum(w * w))


def _ess_at(logW, ll, delta):
    """ESS after tempering by ``delta`` (scalar or array of candidates)."""
    delta = np.atleast_1d(delta)
    with np.errstate(invalid="ignore"):
        lw = logW[None, :] + delta[:, None] * ll[None, :]
    lw = np.where(np.isnan(lw), -np.inf, lw)
    # ESS = (sum w)^2 / sum w^2
    return np.exp(2.0 * logsumexp(lw, axis=1) - logsumexp(2.0 * lw, axis=1))


def find_next_temperature(cloud: ParticleCloud, config: SmcConfig) -> float:
    """Next temperature on a uniform grid of ``grid_size`` points in (a_prev, 1].

    Picks the grid point whose ESS is closest to the target, or 1 if even
    a = 1 keeps the ESS at or above it.  When the first grid point already
    falls below the target, the step is refined by bisection inside it.
    """
    a_prev = cloud.temperature
    if a_prev >= 1.0:
        raise ValueError("cloud is already at temperature 1")
    ll = cloud.total_loglik
    with np.errstate(divide="ignore"):
        logW = np.log(cloud.weights)
    target = config.ess_target
    span = 1.0 - a_prev
    if _ess_at(logW, ll, span)[0] >= target:
        return 1.0
    grid = a_prev + span * np.arange(1, config.grid_size + 1) / config.grid_size
    grid[-1] = 1.0
    e = _ess_at(logW, ll, grid - a_prev)
    k = int(np.argmin(np.abs(e - target)))
    if k > 0 or e[0] >= target:
        return float(grid[k])
    lo, hi = 0.0, grid[0] - a_prev
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _ess_at(logW, ll, mid)[0] >= target:
            lo = mid
        else:
            hi = mid
    step = lo if lo > 0 else hi
    return float(a_prev + step)


def reweight(cloud: ParticleCloud, a_new: float) -> float:
    """Tempers weights to ``a_new``; returns log sum_m W_m exp((a_new - a_prev) * loglik_m)."""
    if not a_new > cloud.temperature:
        raise ValueError("new temperature must exceed the current one")
    delta = a_new - cloud.temperature
    with np.errstate(divide="ignore", invalid="ignore"):
        lw = np.log(cloud.weights) + delta * cloud.total_loglik
    lw = np.where(np.isnan(lw), -np.inf, lw)
    inc = float(logsumexp(lw))
    if not np.isfinite(inc):
        raise DegenerateWeightsError(f"every cloud entry has zero weight at temperature {a_new}")
    cloud.weights = np.exp(lw - inc)
    cloud.temperature = float(a_new)
    return inc


def resample_indices(weights, rng, scheme: str = "multinomial") -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    M = len(w)
    cw = np.cumsum(w)
    cw /= cw[-1]
    if scheme == "systematic":
        u = (rng.random() + np.arange(M)) / M
    else:
        u = rng.random(M)
    return np.minimum(np.searchsorted(cw, u, side="right"), M - 1)


def resample(cloud: ParticleCloud, rng, scheme: str = "multinomial") -> np.ndarray:
    idx = resample_indices(cloud.weights, rng, scheme)
    cloud.take(idx)
    cloud.weights = np.full(cloud.M, 1.0 / cloud.M)
    return idx


def _moments(ll, w):
    E = float(w @ ll)
    return E, float(max(w @ (ll - E) ** 2, 0.0))


def markov_move(cloud: ParticleCloud, m: int, a: float, config: SmcConfig, spec: ProposalSpec, lik,
                stage: int) -> ChainState:
    """L tempered PMwG iterations on entry ``m``; retried once with prior proposals on degeneracy."""
    start = ChainState(cloud.group(m), cloud.alpha[m], cloud.loglik[m])
    for attempt, sp in enumerate((spec, ProposalSpec(PRIOR))):
        try:
            state = start
            for l in range(config.L):
                key = (_rng.SMC_MOVE, stage, m, l, attempt)
                state = sweep(state, lik, config.hyper, sp, config.R, a, config.seed, key, iteration=stage)
            return state
        except DegenerateWeightsError as exc:
            if attempt == 1 or sp.kind == PRIOR:
                raise DegenerateWeightsError(f"cloud entry {m} at stage {stage}: {exc}", exc.subject, stage) from exc
            log.warning("entry %d stage %d: degenerate weights, retrying with prior proposals", m, stage)


def initial_cloud(lik, config: SmcConfig) -> ParticleCloud:
    M, D, S = config.M, lik.dim, lik.n_subjects
    mu, sigma, a = np.empty((M, D)), np.empty((M, D, D)), np.empty((M, D))
    alpha, ll = np.empty((M, S, D)), np.empty((M, S))
    for m in range(M):
        rng = _rng.substream(config.seed, _rng.SMC_INIT, m)
        g = sample_group_prior(config.hyper, D, rng)
        mu[m], sigma[m], a[m] = g.mu, g.sigma, g.a
        alpha[m] = sample_alpha_prior(g, rng, S)
        ll[m] = [lik.subject(j, alpha[m, j:j + 1])[0] for j in range(S)]
    names = lik.design.param_names if hasattr(lik, "design") else [f"x{d + 1}" for d in range(D)]
    cloud = ParticleCloud(mu, sigma, a, alpha, ll, np.full(M, 1.0 / M), 0.0, TemperTrace(), names)
    E, V = _moments(cloud.total_loglik, cloud.weights)
    cloud.trace.append(0.0, 0.0, E, V, E, V, float(M))
    return cloud


def run_dtsmc(target, design=None, config: SmcConfig | None = None, max_stages: int = 10_000) -> ParticleCloud:
    """Tempers from prior to posterior; the returned cloud carries the stage trace."""
    config = config or SmcConfig()
    lik = _as_likelihood(target, design)
    cloud = initial_cloud(lik, config)
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else nullcontext()
    stage = 0
    with pool as executor:
        while cloud.temperature < 1.0:
            stage += 1
            if stage > max_stages:
                raise RuntimeError("temperature schedule did not reach 1")
            a_new = find_next_temperature(cloud, config)
            inc = reweight(cloud, a_new)
            realized = ess(cloud.weights)
            E_pre, V_pre = _moments(cloud.total_loglik, cloud.weights)
            spec = ProposalSpec(PRIOR)
            if a_new >= config.a_switch:
                fit = fit_adapted_proposals(cloud.alpha, cloud.mu, cloud.sigma, cloud.weights,
                                            min_draws=config.min_adapt_draws)
                if fit is not None:
                    spec = ProposalSpec(ADAPTED, config.w_mix, config.epsilon, fit)
            resample(cloud, _rng.substream(config.seed, _rng.SMC_RESAMPLE, stage), config.resampling)

            def task(m):
                return markov_move(cloud, m, a_new, config, spec, lik, stage)

            ms = range(cloud.M)
            states = list(executor.map(task, ms)) if executor is not None else [task(m) for m in ms]
            for m, st in enumerate(states):
                cloud.mu[m], cloud.sigma[m], cloud.a[m] = st.group.mu, st.group.sigma, st.group.a
                cloud.alpha[m], cloud.loglik[m] = st.alpha, st.loglik
            E, V = _moments(cloud.total_loglik, cloud.weights)
            cloud.trace.append(a_new, inc, E, V, E_pre, V_pre, realized)
            log.info("stage %d: a=%.5f ESS=%.1f increment=%.3f proposal=%s", stage, a_new, realized, inc, spec.kind)
    return cloud
