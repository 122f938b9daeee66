import itertools

import numpy as np
import pytest
from scipy import stats
from scipy.special import logsumexp

from hlba.errors import DegenerateWeightsError, ParameterDomainError
from hlba.model import GroupParams, log_prior_alpha, mvn_logpdf
from hlba.proposals import (ADAPTED, PREV_MIXTURE, PRIOR, AdaptedFit, ParticleSet, ProposalSpec,
                            conditional_mc, conditional_mc_subject, fit_adapted_proposals, importance_logweight,
                            joint_fit_dim, normalize_logweights, proposal_logdensity, propose, sample_index,
                            theta_features)

from conftest import GaussianToyLik

G2 = GroupParams(np.array([0.3, -0.5]), np.array([[1.0, 0.4], [0.4, 0.5]]), np.ones(2))


def fixed_adapted(mean, cov, d=2):
    P = joint_fit_dim(d) - d
    return AdaptedFit(np.asarray(mean, float)[None, :], np.zeros(P), np.zeros((1, d, P)), np.asarray(cov, float)[None])


def test_spec_validation():
    for kw in (dict(w_mix=0.0), dict(w_mix=1.2), dict(epsilon=0.0), dict(epsilon=2.0), dict(kind="nope")):
        with pytest.raises(ParameterDomainError):
            ProposalSpec(**kw)
    with pytest.raises(ParameterDomainError):
        ProposalSpec(ADAPTED)


def test_prior_proposal_matches_prior(rng):
    x = propose(0, ProposalSpec(PRIOR), G2, rng=rng, size=100_000)
    for d in range(2):
        assert stats.kstest(x[:, d], stats.norm(G2.mu[d], np.sqrt(G2.sigma[d, d])).cdf).pvalue > 0.01


def test_prev_mixture_degenerate_moments(rng):
    c = np.array([1.0, 2.0])
    x = propose(0, ProposalSpec(PREV_MIXTURE, w_mix=1.0, epsilon=1.0), G2, conditioned=c, rng=rng, size=200_000)
    np.testing.assert_allclose(x.mean(axis=0), c, atol=0.01)
    np.testing.assert_allclose(np.cov(x.T), G2.sigma, atol=0.01)


def test_adapted_mixture_matches_direct_sampler(rng):
    fit = fixed_adapted([2.0, 1.0], [[0.2, 0.05], [0.05, 0.1]])
    spec = ProposalSpec(ADAPTED, w_mix=0.9, adapted=fit)
    x = propose(0, spec, G2, rng=rng, size=100_000)
    ref_rng = np.random.default_rng(1)
    n1 = ref_rng.binomial(100_000, 0.9)
    ref = np.vstack([ref_rng.multivariate_normal([2.0, 1.0], fit.cond_cov[0], n1),
                     ref_rng.multivariate_normal(G2.mu, G2.sigma, 100_000 - n1)])
    for d in range(2):
        assert stats.ks_2samp(x[:, d], ref[:, d]).pvalue > 0.01


def test_prior_logdensity_equals_prior():
    x = np.random.default_rng(0).normal(size=(10, 2))
    np.testing.assert_allclose(proposal_logdensity(x, 0, ProposalSpec(PRIOR), G2), log_prior_alpha(x, G2), rtol=1e-14)


def test_mixture_logdensity_direct_sum():
    c = np.array([0.1, 0.2])
    x = np.random.default_rng(0).normal(size=(10, 2))
    spec = ProposalSpec(PREV_MIXTURE, w_mix=0.7, epsilon=0.3)
    naive = np.log(0.7 * stats.multivariate_normal(c, 0.3 * G2.sigma).pdf(x)
                   + 0.3 * stats.multivariate_normal(G2.mu, G2.sigma).pdf(x))
    np.testing.assert_allclose(proposal_logdensity(x, 0, spec, G2, c), naive, rtol=1e-12)


def test_small_w_mix_limit_is_prior():
    x = np.random.default_rng(0).normal(size=(10, 2))
    spec = ProposalSpec(PREV_MIXTURE, w_mix=1e-12)
    np.testing.assert_allclose(proposal_logdensity(x, 0, spec, G2, np.zeros(2)), log_prior_alpha(x, G2), atol=1e-9)


def test_support_domination(rng):
    c = np.array([5.0, -5.0])
    far = rng.normal(scale=6.0, size=(1000, 2))
    for spec in (ProposalSpec(PRIOR), ProposalSpec(PREV_MIXTURE, w_mix=0.9, epsilon=0.01),
                 ProposalSpec(ADAPTED, adapted=fixed_adapted([3, 3], 1e-4 * np.eye(2)))):
        assert np.all(np.isfinite(proposal_logdensity(far, 0, spec, G2, c)))


def test_weights_bounded(rng):
    # with a prior component, weight <= lik^a / (1 - w_mix)
    spec = ProposalSpec(PREV_MIXTURE, w_mix=0.9, epsilon=0.05)
    x = propose(0, spec, G2, conditioned=np.array([4.0, 4.0]), rng=rng, size=100_000)
    lw = importance_logweight(x, 0, spec, G2, 1.0, np.zeros(len(x)), np.array([4.0, 4.0]))
    assert np.all(np.isfinite(lw)) and lw.max() <= -np.log(0.1) + 1e-12


def test_importance_logweight_oracles(rng):
    x = rng.normal(size=(20, 2))
    ll = rng.normal(-50, 10, size=20)
    np.testing.assert_array_equal(importance_logweight(x, 0, ProposalSpec(PRIOR), G2, 0.0, ll), 0.0)
    c = np.zeros(2)
    spec = ProposalSpec(PREV_MIXTURE, w_mix=0.9)
    expect = ll + log_prior_alpha(x, G2) - proposal_logdensity(x, 0, spec, G2, c)
    np.testing.assert_allclose(importance_logweight(x, 0, spec, G2, 1.0, ll, c), expect, rtol=1e-12)
    # zero likelihood gives zero weight at a > 0, but counts as 1 at a = 0
    ll[3] = -np.inf
    assert importance_logweight(x, 0, spec, G2, 0.4, ll, c)[3] == -np.inf
    assert np.isfinite(importance_logweight(x, 0, spec, G2, 0.0, ll, c)[3])
    with pytest.raises(ParameterDomainError):
        importance_logweight(x, 0, spec, G2, 1.5, ll, c)


def test_normalization_shift_invariant(rng):
    lw = rng.normal(size=50) * 100
    np.testing.assert_allclose(normalize_logweights(lw + 1234.5), normalize_logweights(lw), rtol=1e-12)
    assert normalize_logweights(lw).sum() == pytest.approx(1.0, abs=1e-12)


def toy():
    y = [np.array([[0.5, -0.2], [1.0, 0.1]]), np.array([[-1.0, 0.3]])]
    return GaussianToyLik(y)


def test_cmc_structure(rng):
    lik = toy()
    cond = np.array([[0.1, 0.1], [0.2, -0.3]])
    ll = lik.subject(0, cond[:1])[0]
    for kind in (PRIOR, PREV_MIXTURE):
        ps = conditional_mc_subject(0, lik, ProposalSpec(kind), G2, cond[0], ll, 1.0, 7, rng)
        np.testing.assert_array_equal(ps.particles[0], cond[0])
        assert ps.weights.sum() == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(ps.loglik, lik.subject(0, ps.particles), rtol=1e-13)
        expect = importance_logweight(ps.particles, 0, ProposalSpec(kind), G2, 1.0, ps.loglik, cond[0])
        np.testing.assert_allclose(ps.logw, expect, rtol=1e-12)
    one = conditional_mc_subject(0, lik, ProposalSpec(PRIOR), G2, cond[0], ll, 1.0, 1, rng)
    assert one.weights.tolist() == [1.0]
    assert sample_index(one, rng) == 0
    zero = conditional_mc_subject(0, lik, ProposalSpec(PRIOR), G2, cond[0], ll, 0.0, 50, rng)
    np.testing.assert_allclose(zero.weights, 1 / 50, rtol=1e-14)
    sets = conditional_mc(lik, ProposalSpec(PRIOR), G2, cond, lik.total(cond), 1.0, 5, [rng, rng])
    assert len(sets) == 2


class _DeadLik(GaussianToyLik):
    def subject(self, j, alpha):
        return np.full(len(np.atleast_2d(alpha)), -np.inf)


def test_all_zero_weights_raise(rng):
    lik = _DeadLik([np.zeros((1, 2))])
    with pytest.raises(DegenerateWeightsError) as err:
        conditional_mc_subject(0, lik, ProposalSpec(PRIOR), G2, np.zeros(2), -np.inf, 1.0, 5, rng, iteration=12)
    assert err.value.subject == 0 and err.value.iteration == 12


def test_sample_index_oracles(rng):
    def ps(w):
        w = np.asarray(w, float)
        with np.errstate(divide="ignore"):
            return ParticleSet(np.zeros((len(w), 1)), np.zeros(len(w)), np.log(w), w)
    assert all(sample_index(ps([0, 0, 1.0, 0]), rng) == 2 for _ in range(100))
    n = 100_000
    counts = np.bincount([sample_index(ps([0.25] * 4), rng) for _ in range(n)], minlength=4)
    assert stats.chisquare(counts).pvalue > 0.01
    p = np.array([0.7, 0.2, 0.1])
    counts = np.bincount([sample_index(ps(p), rng) for _ in range(n)], minlength=3)
    assert np.all(np.abs(counts / n - p) < 3 * np.sqrt(p * (1 - p) / n))


def test_enumeration_oracle_augmented_invariance():
    """Two subjects, R = 3, alpha restricted to a grid.

    On a discrete state space the proposal is the normalized mixture density
    on the grid; the chain conditioned particle -> (R-1 fresh draws) -> index
    draw must leave the discretized conditional posterior of each subject
    invariant, and the joint kernel is the product of the subject kernels.
    """
    lik = GaussianToyLik([np.array([[0.4]]), np.array([[-0.9], [-0.4]])], noise=0.7)
    g = GroupParams(np.array([0.1]), np.array([[0.8]]), np.ones(1))
    grid = np.linspace(-2.5, 2.5, 6)[:, None]
    spec = ProposalSpec(PRIOR)
    q = np.exp(proposal_logdensity(grid, 0, spec, g))
    q /= q.sum()
    kernels, targets = [], []
    for j in range(2):
        ll = lik.subject(j, grid)
        logw = importance_logweight(grid, j, spec, g, 1.0, ll)
        pi = np.exp(ll + log_prior_alpha(grid, g))
        pi /= pi.sum()
        K = np.zeros((6, 6))
        for x in range(6):
            for x2, x3 in itertools.product(range(6), repeat=2):
                states = [x, x2, x3]
                w = normalize_logweights(logw[states])
                for pos, s in enumerate(states):
                    K[x, s] += q[x2] * q[x3] * w[pos]
        kernels.append(K)
        targets.append(pi)
    K = np.kron(kernels[0], kernels[1])
    pi = np.kron(targets[0], targets[1])
    np.testing.assert_allclose(pi @ K, pi, atol=1e-14)
    np.testing.assert_allclose(K.sum(axis=1), 1.0, atol=1e-14)


def test_cmc_preserves_continuous_posterior(rng):
    # 1-D conjugate subject: alpha ~ N(m, s2) prior, y ~ N(alpha, 1)
    lik = GaussianToyLik([np.array([[1.5], [0.7], [1.1]])])
    g = GroupParams(np.array([0.0]), np.array([[2.0]]), np.ones(1))
    post_var = 1 / (1 / 2.0 + 3)
    post_mean = post_var * (3.3)
    spec = ProposalSpec(PREV_MIXTURE, w_mix=0.9, epsilon=0.5)
    start = rng.normal(post_mean, np.sqrt(post_var), size=4000)
    out = np.empty_like(start)
    for i, x in enumerate(start):
        ps = conditional_mc_subject(0, lik, spec, g, [x], lik.subject(0, [[x]])[0], 1.0, 4, rng)
        out[i] = ps.particles[sample_index(ps, rng), 0]
    assert stats.kstest(out, stats.norm(post_mean, np.sqrt(post_var)).cdf).pvalue > 0.01


# --- adapted fit -------------------------------------------------------------

def _features_to_group(x, d):
    mu = x[..., :d]
    rows, cols = np.tril_indices(d)
    L = np.zeros(x.shape[:-1] + (d, d))
    L[..., rows, cols] = x[..., d:]
    idx = np.arange(d)
    L[..., idx, idx] = np.exp(L[..., idx, idx])
    return mu, L @ np.swapaxes(L, -1, -2)


def test_feature_round_trip(rng):
    x = rng.normal(size=(5, 5))
    mu, sigma = _features_to_group(x, 2)
    np.testing.assert_allclose(theta_features(mu, sigma), x, atol=1e-12)


def test_adapted_fit_linear_gaussian_oracle(rng):
    d, S, T = 2, 2, 40_000
    P = joint_fit_dim(d) - d
    n = S * d + P
    B = rng.normal(size=(n, n)) * 0.4
    cov = B @ B.T + 0.1 * np.eye(n)
    mean = rng.normal(size=n) * 0.3
    z = rng.multivariate_normal(mean, cov, size=T)
    alpha = z[:, : S * d].reshape(T, S, d)
    x = z[:, S * d:]
    mu, sigma = _features_to_group(x, d)
    fit = fit_adapted_proposals(alpha, mu, sigma)
    Sxx = cov[S * d:, S * d:]
    for j in range(S):
        sl = slice(j * d, (j + 1) * d)
        K = cov[sl, S * d:] @ np.linalg.inv(Sxx)
        C = cov[sl, sl] - K @ cov[S * d:, sl]
        np.testing.assert_allclose(fit.gain[j], K, atol=0.05)
        np.testing.assert_allclose(fit.cond_cov[j], C, atol=0.02 * np.abs(C).max() + 0.005)
        # conditional mean at a test point vs analytic conditional
        x0 = mean[S * d:] + 0.5
        m_fit = fit.m_alpha[j] + fit.gain[j] @ (x0 - fit.m_x)
        m_true = mean[sl] + K @ (x0 - mean[S * d:])
        se = np.sqrt(np.diag(C) / T) * 10  # conditional mean error grows away from the centre
        assert np.all(np.abs(m_fit - m_true) < 3 * se + 0.01)
        assert np.all(np.linalg.eigvalsh(fit.cond_cov[j]) > 0)


def test_adapted_fit_independence(rng):
    d, T = 2, 20_000
    alpha = rng.normal([1.0, -1.0], [0.3, 0.5], size=(T, 1, d))
    x = rng.normal(size=(T, joint_fit_dim(d) - d)) * 0.2
    mu, sigma = _features_to_group(x, d)
    fit = fit_adapted_proposals(alpha, mu, sigma)
    assert np.abs(fit.gain).max() < 0.05
    np.testing.assert_allclose(fit.cond_cov[0], np.diag([0.09, 0.25]), atol=0.01)


def test_adapted_fit_too_few_draws(rng):
    d = 2
    x = rng.normal(size=(30, joint_fit_dim(d) - d)) * 0.2
    mu, sigma = _features_to_group(x, d)
    alpha = rng.normal(size=(30, 2, d))
    alpha[:, 1] = alpha[0, 1]  # a stuck subject: one distinct draw
    fit = fit_adapted_proposals(alpha, mu, sigma, min_draws=100)
    assert fit.usable.tolist() == [True, False]
    assert np.all(fit.gain[0] == 0)  # marginal fallback below min_draws
    alpha[:, 0] = alpha[0, 0]
    assert fit_adapted_proposals(alpha, mu, sigma) is None
    spec = ProposalSpec(ADAPTED, adapted=fit)
    c = np.array([7.0, 7.0])
    # the unusable subject falls back to the previous-draw mixture
    np.testing.assert_allclose(proposal_logdensity(c, 1, spec, G2, c),
                               proposal_logdensity(c, 1, ProposalSpec(PREV_MIXTURE), G2, c))
