"""Particle Metropolis-within-Gibbs for the hierarchical model.

Each iteration draws the group parameters from their full conditionals given
the currently selected random effects, then refreshes every subject's
effects by conditional Monte Carlo (the selected particle is kept as
particle 1) and resamples one particle per subject.  Runs have three stages:
burnin and adaptation propose from a mixture around the previous effects;
the sampling stage proposes from per-subject normals fitted to the
adaptation draws.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from . import _rng
from .data import TrialData
from .errors import DegenerateWeightsError, ParameterDomainError
from .likelihood import LbaLikelihood
from .model import (
    GroupParams,
    HyperConfig,
    iw_prior_scale,
    sample_alpha_prior,
    sample_group_prior,
    sample_inverse_gamma,
    sample_inverse_wishart,
)
from .proposals import ADAPTED, PREV_MIXTURE, ProposalSpec, conditional_mc_subject, fit_adapted_proposals, sample_index

log = logging.getLogger(__name__)

STAGES = ("burnin", "adapt", "sampling")


def gibbs_update_mu(alpha_k, group: GroupParams, rng) -> np.ndarray:
    """Draw mu | Sigma, alpha under the N(0, I) prior."""
    alpha_k = np.atleast_2d(alpha_k)
    S, d = alpha_k.shape
    prec = S * group.precision + np.eye(d)
    Lp = np.linalg.cholesky(prec)
    rhs = group.precision @ alpha_k.sum(axis=0)
    mean = solve_triangular(Lp.T, solve_triangular(Lp, rhs, lower=True), lower=False)
    z = rng.standard_normal(d)
    return mean + solve_triangular(Lp.T, z, lower=False)


def sigma_posterior(alpha_k, mu, a_vec, hyper: HyperConfig) -> tuple[float, np.ndarray]:
    """Degrees of freedom and scale of the inverse-Wishart full conditional."""
    alpha_k = np.atleast_2d(alpha_k)
    S, d = alpha_k.shape
    diff = alpha_k - mu
    return hyper.v_alpha + d - 1 + S, iw_prior_scale(a_vec, hyper) + diff.T @ diff


def gibbs_update_sigma(alpha_k, mu, a_vec, hyper: HyperConfig, rng) -> np.ndarray:
    df, scale = sigma_posterior(alpha_k, mu, a_vec, hyper)
    return sample_inverse_wishart(df, scale, rng)


def a_posterior(sigma, hyper: HyperConfig) -> tuple[float, np.ndarray]:
    """Shape and per-coordinate rates of the inverse-Gamma full conditionals."""
    d = sigma.shape[0]
    prec_diag = np.diag(np.linalg.inv(sigma))
    return 0.5 * (hyper.v_alpha + d), hyper.v_alpha * prec_diag + 1.0 / hyper.scales(d) ** 2


def gibbs_update_a(sigma, hyper: HyperConfig, rng) -> np.ndarray:
    shape, rate = a_posterior(sigma, hyper)
    return sample_inverse_gamma(shape, rate, rng)


@dataclass
class ChainState:
    group: GroupParams
    alpha: np.ndarray  # (S, D) selected effects
    loglik: np.ndarray  # (S,) their log-likelihoods


def sweep(state: ChainState, lik, hyper: HyperConfig, spec: ProposalSpec, R: int, a: float,
          seed: int, key: tuple, executor=None, iteration=None) -> ChainState:
    """One full iteration: Gibbs steps for (mu, Sigma, a), then conditional MC per subject.

    Random numbers come from substreams keyed by ``key``, so the result does
    not depend on ``executor``.
    """
    g_rng = _rng.substream(seed, *key, _rng.GIBBS)
    mu = gibbs_update_mu(state.alpha, state.group, g_rng)
    sigma = gibbs_update_sigma(state.alpha, mu, state.group.a, hyper, g_rng)
    chol = np.linalg.cholesky(sigma)
    a_vec = gibbs_update_a(sigma, hyper, g_rng)
    group = GroupParams(mu, sigma, a_vec, _chol=chol)
    means = spec.adapted.means(group) if spec.kind == ADAPTED else None

    def task(j):
        rng = _rng.substream(seed, *key, _rng.CMC, j)
        ps = conditional_mc_subject(j, lik, spec, group, state.alpha[j], state.loglik[j], a, R, rng,
                                    adapted_means=means, iteration=iteration)
        k = sample_index(ps, rng)
        return ps.particles[k], ps.loglik[k]

    js = range(lik.n_subjects)
    out = list(executor.map(task, js)) if executor is not None else [task(j) for j in js]
    alpha = np.array([o[0] for o in out]).reshape(state.alpha.shape)
    loglik = np.array([o[1] for o in out], dtype=np.float64)
    return ChainState(group, alpha, loglik)


def initial_state(lik, hyper: HyperConfig, rng, max_tries: int = 10_000) -> ChainState:
    """Group parameters and effects from the prior, redrawing effects with zero likelihood."""
    group = sample_group_prior(hyper, lik.dim, rng)
    S = lik.n_subjects
    alpha = np.empty((S, lik.dim))
    ll = np.empty(S)
    for j in range(S):
        for _ in range(max_tries):
            cand = sample_alpha_prior(group, rng, 1)
            lj = lik.subject(j, cand)[0]
            if np.isfinite(lj):
                break
        else:
            raise DegenerateWeightsError(f"no prior draw with positive likelihood for subject {j}", subject=j)
        alpha[j], ll[j] = cand[0], lj
    return ChainState(group, alpha, ll)


@dataclass
class PmwgConfig:
    R_burnin: int = 100
    R_adapt: int = 100
    R_sampling: int = 100
    n_burnin: int = 500
    n_adapt: int = 500
    n_sampling: int = 10_000
    w_mix: float = 0.9
    epsilon: float = 1.0
    temperature: float = 1.0
    seed: int = 0
    workers: int = 1
    hyper: HyperConfig = field(default_factory=HyperConfig)
    min_adapt_draws: int | None = None

    def __post_init__(self):
        if min(self.R_burnin, self.R_adapt, self.R_sampling) < 1:
            raise ParameterDomainError("particle counts must be at least 1")
        if min(self.n_burnin, self.n_adapt, self.n_sampling) < 0:
            raise ParameterDomainError("iteration counts must be non-negative")
        if not 0.0 <= self.temperature <= 1.0:
            raise ParameterDomainError("temperature must lie in [0, 1]")
        if self.workers < 1:
            raise ParameterDomainError("workers must be at least 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hyper"] = self.hyper.to_dict()
        return d


@dataclass
class ChainOutput:
    """Every iteration's draws; ``stage`` labels which stage produced each row."""

    mu: np.ndarray  # (T, D)
    sigma: np.ndarray  # (T, D, D)
    a: np.ndarray  # (T, D)
    alpha: np.ndarray  # (T, S, D)
    loglik: np.ndarray  # (T,) total log-likelihood of the selected effects
    stage: np.ndarray  # (T,) of stage names
    config: PmwgConfig
    param_names: list
    adapted: bool = False

    @property
    def seed(self) -> int:
        return self.config.seed

    def select(self, stage: str = "sampling") -> "ChainOutput":
        m = self.stage == stage
        return ChainOutput(self.mu[m], self.sigma[m], self.a[m], self.alpha[m], self.loglik[m],
                           self.stage[m], self.config, self.param_names, self.adapted)

    def __len__(self) -> int:
        return len(self.stage)


def _as_likelihood(target, design):
    if isinstance(target, TrialData):
        if design is None:
            raise ValueError("a model design is required with trial data")
        return LbaLikelihood(target, design)
    return target


def run_pmwg(target, design=None, config: PmwgConfig | None = None, key_prefix: tuple = ()) -> ChainOutput:
    """Run the three-stage sampler on ``target`` (trial data plus design, or a likelihood object)."""
    config = config or PmwgConfig()
    lik = _as_likelihood(target, design)
    hyper, seed, a = config.hyper, config.seed, config.temperature
    names = lik.design.param_names if hasattr(lik, "design") else [f"x{d + 1}" for d in range(lik.dim)]
    plan = [("burnin", config.n_burnin, config.R_burnin), ("adapt", config.n_adapt, config.R_adapt),
            ("sampling", config.n_sampling, config.R_sampling)]
    T = sum(n for _, n, _ in plan)
    D, S = lik.dim, lik.n_subjects
    out = ChainOutput(np.empty((T, D)), np.empty((T, D, D)), np.empty((T, D)), np.empty((T, S, D)),
                      np.empty(T), np.array([s for s, n, _ in plan for _ in range(n)], dtype=object),
                      config, names)
    if T == 0:
        return out
    state = initial_state(lik, hyper, _rng.substream(seed, *key_prefix, _rng.PMWG, _rng.INIT))
    spec = ProposalSpec(PREV_MIXTURE, config.w_mix, config.epsilon)
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else nullcontext()
    t = 0
    with pool as executor:
        for stage, n_iter, R in plan:
            if stage == "sampling" and n_iter > 0:
                fit = None
                if config.n_adapt > 0:
                    sl = slice(config.n_burnin, config.n_burnin + config.n_adapt)
                    fit = fit_adapted_proposals(out.alpha[sl], out.mu[sl], out.sigma[sl],
                                                min_draws=config.min_adapt_draws)
                if fit is None:
                    log.warning("sampling stage continues with the previous-draw mixture proposal")
                else:
                    spec = ProposalSpec(ADAPTED, config.w_mix, config.epsilon, fit)
                    out.adapted = True
            for _ in range(n_iter):
                state = sweep(state, lik, hyper, spec, R, a, seed, (*key_prefix, _rng.PMWG, t),
                              executor, iteration=t)
                out.mu[t], out.sigma[t], out.a[t] = state.group.mu, state.group.sigma, state.group.a
                out.alpha[t], out.loglik[t] = state.alpha, state.loglik.sum()
                t += 1
    return out
