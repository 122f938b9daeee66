"""Conditional Monte Carlo over per-subject particles.

A proposal is a two-component mixture ``w * N(m1, C1) + (1 - w) * N(mu, Sigma)``
whose first component depends on the proposal kind:

* ``prior``: no first component (``w`` is ignored and treated as 0);
* ``prev_mixture``: ``N(conditioned particle, epsilon * Sigma)``;
* ``adapted``: a per-subject normal whose mean is a linear function of the
  current group parameters, fitted to earlier draws.

Keeping the prior component guarantees the proposal dominates the prior,
so importance weights stay bounded by the tempered likelihood.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateWeightsError, ParameterDomainError
from .model import GroupParams, mvn_logpdf

log = logging.getLogger(__name__)

PRIOR, PREV_MIXTURE, ADAPTED = "prior", "prev_mixture", "adapted"


def theta_features(mu, sigma) -> np.ndarray:
    """(mu, vech(L)) with log diagonal, where Sigma = L L^T; batched over leading axes."""
    mu = np.asarray(mu, dtype=np.float64)
    L = np.linalg.cholesky(np.asarray(sigma, dtype=np.float64))
    d = mu.shape[-1]
    idx = np.arange(d)
    L[..., idx, idx] = np.log(L[..., idx, idx])
    rows, cols = np.tril_indices(d)
    return np.concatenate([mu, L[..., rows, cols]], axis=-1)


def joint_fit_dim(d: int) -> int:
    return 2 * d + d * (d + 1) // 2


@dataclass
class AdaptedFit:
    """Per-subject conditional normals ``alpha_j | x ~ N(m_j + K_j (x - m_x), C_j)``.

    ``x`` is :func:`theta_features` of the current group parameters.
    Subjects with ``usable[j]`` false keep the previous-draw mixture.
    """

    m_alpha: np.ndarray  # (S, D)
    m_x: np.ndarray  # (P,)
    gain: np.ndarray  # (S, D, P)
    cond_cov: np.ndarray  # (S, D, D)
    usable: np.ndarray | None = None  # (S,) bool

    def __post_init__(self):
        if self.usable is None:
            self.usable = np.ones(len(self.m_alpha), dtype=bool)
        self.cond_chol = np.linalg.cholesky(self.cond_cov)
        self.cond_logdet = 2.0 * np.log(np.diagonal(self.cond_chol, axis1=1, axis2=2)).sum(axis=1)

    def means(self, group: GroupParams) -> np.ndarray:
        x = theta_features(group.mu, group.sigma)
        return self.m_alpha + self.gain @ (x - self.m_x)


def _weighted_cov(u, v, w):
    # reliability-weighted unbiased estimate; equals the usual n-1 form for equal weights
    denom = 1.0 - float(w @ w)
    c = (u * w[:, None]).T @ v
    return c / denom if denom > 0 else c


def _try_cholesky(C, scale):
    for k in range(2):
        try:
            np.linalg.cholesky(C)
            return C
        except np.linalg.LinAlgError:
            C = C + 1e-8 * scale * (k + 1) * np.eye(len(C))
    return None


def fit_adapted_proposals(alpha_draws, mu_draws, sigma_draws, weights=None, min_draws: int | None = None):
    """Fit per-subject conditional normals to stored draws.

    ``alpha_draws`` is (T, S, D), ``mu_draws`` (T, D), ``sigma_draws`` (T, D, D),
    ``weights`` optional normalized (T,) weights.

    A subject's usable sample size is the smaller of the effective sample
    size and its number of distinct draws (conditional MC repeats draws).
    With at least ``min_draws`` of them the full conditional on the group
    features is fitted; with fewer but at least ``D + 2`` only the marginal
    normal of ``alpha_j``; below that the subject is marked unusable.
    Returns ``None`` when no subject is usable.
    """
    alpha_draws = np.asarray(alpha_draws, dtype=np.float64)
    T, S, D = alpha_draws.shape
    P = joint_fit_dim(D) - D
    if min_draws is None:
        min_draws = joint_fit_dim(D) + 10
    if T < 2:
        return None
    w = np.full(T, 1.0 / T) if weights is None else np.asarray(weights, dtype=np.float64)
    n_eff = 1.0 / float(w @ w)
    x = theta_features(mu_draws, sigma_draws)
    m_x = w @ x
    xc = x - m_x
    S_xx = _weighted_cov(xc, xc, w)
    Lx = None
    if n_eff >= min_draws:
        C = _try_cholesky(S_xx, np.mean(np.diag(S_xx)))
        Lx = None if C is None else np.linalg.cholesky(C)
    m_alpha = np.zeros((S, D))
    gain = np.zeros((S, D, P))
    cond_cov = np.tile(np.eye(D), (S, 1, 1))
    usable = np.zeros(S, dtype=bool)
    live = w > 0
    for j in range(S):
        a = alpha_draws[:, j, :]
        n_j = min(n_eff, len(np.unique(a[live], axis=0)))
        if n_j < D + 2:
            continue
        m_a = w @ a
        ac = a - m_a
        S_aa = _weighted_cov(ac, ac, w)
        if Lx is not None and n_j >= min_draws:
            S_ax = _weighted_cov(ac, xc, w)
            Kt = np.linalg.solve(Lx.T, np.linalg.solve(Lx, S_ax.T))  # S_xx^{-1} S_xa
            # residual degrees of freedom count regression rows, which all carry distinct features
            C = (S_aa - S_ax @ Kt) * (n_eff - 1.0) / (n_eff - P - 1.0)
            gain[j] = Kt.T
        else:
            C = S_aa
        C = _try_cholesky(0.5 * (C + C.T), np.mean(np.diag(S_aa)))
        if C is None:
            continue
        m_alpha[j], cond_cov[j], usable[j] = m_a, C, True
    if not usable.any():
        log.warning("adaptation failed: no subject has enough distinct draws")
        return None
    if not usable.all():
        log.warning("adaptation: subjects %s keep the previous-draw proposal", np.nonzero(~usable)[0].tolist())
    return AdaptedFit(m_alpha, m_x, gain, cond_cov, usable)


@dataclass
class ProposalSpec:
    kind: str = PRIOR
    w_mix: float = 0.9
    epsilon: float = 1.0
    adapted: AdaptedFit | None = None

    def __post_init__(self):
        if self.kind not in (PRIOR, PREV_MIXTURE, ADAPTED):
            raise ParameterDomainError(f"unknown proposal kind {self.kind!r}")
        if not 0.0 < self.w_mix <= 1.0:
            raise ParameterDomainError("w_mix must lie in (0, 1]")
        if not 0.0 < self.epsilon <= 1.0:
            raise ParameterDomainError("epsilon must lie in (0, 1]")
        if self.kind == ADAPTED and self.adapted is None:
            raise ParameterDomainError("adapted proposal needs a fitted AdaptedFit")


@dataclass
class MixtureComponents:
    """The resolved mixture for one subject at the current group parameters."""

    w: float
    mean1: np.ndarray | None
    chol1: np.ndarray | None
    logdet1: float
    group: GroupParams


def resolve(spec: ProposalSpec, j: int, group: GroupParams, conditioned=None, adapted_means=None) -> MixtureComponents:
    if spec.kind == PRIOR:
        return MixtureComponents(0.0, None, None, 0.0, group)
    if spec.kind == PREV_MIXTURE:
        if conditioned is None:
            raise ValueError("prev_mixture proposal needs the conditioned particle")
        chol = np.sqrt(spec.epsilon) * group.chol
        logdet = group.logdet + group.dim * np.log(spec.epsilon)
        return MixtureComponents(spec.w_mix, np.asarray(conditioned, dtype=np.float64), chol, logdet, group)
    fit = spec.adapted
    if not fit.usable[j]:
        return resolve(ProposalSpec(PREV_MIXTURE, spec.w_mix, spec.epsilon), j, group, conditioned)
    mean = fit.means(group)[j] if adapted_means is None else adapted_means[j]
    return MixtureComponents(spec.w_mix, mean, fit.cond_chol[j], float(fit.cond_logdet[j]), group)


def _draw(mix: MixtureComponents, rng, n: int) -> np.ndarray:
    g = mix.group
    u = rng.random(n)
    z = rng.standard_normal((n, g.dim))
    out = g.mu + z @ g.chol.T
    if mix.w > 0:
        first = u < mix.w
        out[first] = mix.mean1 + z[first] @ mix.chol1.T
    return out


def _logdensity(mix: MixtureComponents, alpha) -> np.ndarray:
    g = mix.group
    lp_prior = mvn_logpdf(alpha, g.mu, g.chol, g.logdet)
    if mix.w == 0:
        return lp_prior
    lp1 = mvn_logpdf(alpha, mix.mean1, mix.chol1, mix.logdet1)
    if mix.w == 1:
        return lp1
    return np.logaddexp(np.log(mix.w) + lp1, np.log1p(-mix.w) + lp_prior)


def propose(j: int, spec: ProposalSpec, group: GroupParams, conditioned=None, rng=None, size: int = 1) -> np.ndarray:
    """Draw ``size`` effect vectors for subject ``j`` (shape (size, D))."""
    return _draw(resolve(spec, j, group, conditioned), rng, size)


def proposal_logdensity(alpha, j: int, spec: ProposalSpec, group: GroupParams, conditioned=None):
    return _logdensity(resolve(spec, j, group, conditioned), alpha)


def tempered(loglik, a: float) -> np.ndarray:
    """a * loglik with the convention 0 * (-inf) = 0."""
    loglik = np.asarray(loglik, dtype=np.float64)
    return np.zeros_like(loglik) if a == 0 else a * loglik


def importance_logweight(alpha, j: int, spec: ProposalSpec, group: GroupParams, a: float, loglik, conditioned=None):
    """a * loglik + log prior - log proposal, given precomputed log-likelihoods."""
    if not 0.0 <= a <= 1.0:
        raise ParameterDomainError(f"temperature must lie in [0, 1], got {a}")
    lp = mvn_logpdf(alpha, group.mu, group.chol, group.logdet)
    return tempered(loglik, a) + lp - proposal_logdensity(alpha, j, spec, group, conditioned)


@dataclass
class ParticleSet:
    """Particles for one subject; row 0 is the conditioned particle."""

    particles: np.ndarray
    loglik: np.ndarray
    logw: np.ndarray
    weights: np.ndarray
    index: int | None = None


def normalize_logweights(logw) -> np.ndarray:
    logw = np.asarray(logw, dtype=np.float64)
    return np.exp(logw - logsumexp(logw))


def conditional_mc_subject(
    j: int,
    lik,
    spec: ProposalSpec,
    group: GroupParams,
    conditioned,
    conditioned_loglik: float,
    a: float,
    R: int,
    rng,
    adapted_means=None,
    iteration=None,
) -> ParticleSet:
    """Refresh particles 2..R for subject ``j`` keeping the conditioned one first."""
    if R < 1:
        raise ParameterDomainError("R must be at least 1")
    conditioned = np.asarray(conditioned, dtype=np.float64)
    mix = resolve(spec, j, group, conditioned, adapted_means)
    fresh = _draw(mix, rng, R - 1)
    particles = np.vstack([conditioned[None, :], fresh])
    loglik = np.empty(R)
    loglik[0] = conditioned_loglik
    if R > 1:
        loglik[1:] = lik.subject(j, fresh)
    if mix.w == 0:
        logw = tempered(loglik, a)  # proposal equals prior
    else:
        lp = mvn_logpdf(particles, group.mu, group.chol, group.logdet)
        logw = tempered(loglik, a) + lp - _logdensity(mix, particles)
    if not np.any(np.isfinite(logw)) or np.any(np.isnan(logw)):
        raise DegenerateWeightsError(
            f"all importance weights are zero for subject {j}" + (f" at iteration {iteration}" if iteration is not None else ""),
            subject=j,
            iteration=iteration,
        )
    return ParticleSet(particles, loglik, logw, normalize_logweights(logw))


def sample_index(particles: ParticleSet, rng) -> int:
    w = particles.weights
    k = int(np.searchsorted(np.cumsum(w), rng.random() * w.sum(), side="right"))
    k = min(k, len(w) - 1)
    particles.index = k
    return k


def conditional_mc(
    lik,
    spec: ProposalSpec,
    group: GroupParams,
    conditioned: np.ndarray,
    conditioned_loglik: Sequence[float],
    a: float,
    R: int,
    rngs: Sequence,
    executor=None,
) -> list[ParticleSet]:
    """Run :func:`conditional_mc_subject` for every subject, one generator each."""
    means = spec.adapted.means(group) if spec.kind == ADAPTED else None

    def task(j):
        return conditional_mc_subject(j, lik, spec, group, conditioned[j], conditioned_loglik[j], a, R, rngs[j], means)

    js = range(lik.n_subjects)
    return list(executor.map(task, js)) if executor is not None else [task(j) for j in js]
