"""Hierarchical model: log-scale random effects, group prior, hyperpriors.

Each subject's random effects are ``alpha_j = log(b_1..b_K, A, v_1..v_C, tau)``
with ``alpha_j ~ N(mu, Sigma)``.  The group mean has a standard normal prior;
``Sigma`` follows the Huang-Wand mixture

    Sigma | a ~ IW(nu + D - 1, 2 nu diag(1/a)),   a_d ~ IG(1/2, 1/scale_d^2),

which at ``nu = 2`` gives half-t marginal standard deviations and uniform
marginal correlations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import gammaln, multigammaln

from .errors import ParameterDomainError
from .lba import NaturalLbaParams

LOG_2PI = float(np.log(2.0 * np.pi))

# condition -> threshold index for the three nested threshold variants
THRESHOLD_MAPS = {1: (0, 0, 0), 2: (0, 0, 1), 3: (0, 1, 2)}


@dataclass(frozen=True)
class ModelDesign:
    """Maps conditions to threshold components and fixes the vector layout.

    The random-effect vector is ordered: one log threshold per distinct
    threshold index, log A, one log drift mean per accumulator, log tau.
    ``density_floor`` optionally bounds each trial's density from below when
    the design is used by the samplers (``None`` means exact densities).
    """

    threshold_map: tuple = (0, 1, 2)
    n_accumulators: int = 2
    s: tuple | None = None
    density_floor: float | None = None

    def __post_init__(self):
        tm = tuple(int(z) for z in self.threshold_map)
        object.__setattr__(self, "threshold_map", tm)
        if not tm or min(tm) < 0 or set(tm) != set(range(max(tm) + 1)):
            raise ParameterDomainError(f"threshold map {tm} must use indices 0..K-1 without gaps")
        s = (1.0,) * self.n_accumulators if self.s is None else tuple(float(x) for x in self.s)
        if len(s) != self.n_accumulators or min(s) <= 0:
            raise ParameterDomainError("need one positive drift SD per accumulator")
        object.__setattr__(self, "s", s)
        if self.density_floor is not None and not self.density_floor > 0:
            raise ParameterDomainError("density_floor must be positive")

    @classmethod
    def variant(cls, n_thresholds: int, **kw) -> "ModelDesign":
        """The 1-, 2- or 3-threshold design over three conditions."""
        if n_thresholds not in THRESHOLD_MAPS:
            raise ParameterDomainError(f"threshold variant must be 1, 2 or 3, got {n_thresholds}")
        return cls(threshold_map=THRESHOLD_MAPS[n_thresholds], **kw)

    @property
    def n_conditions(self) -> int:
        return len(self.threshold_map)

    @property
    def n_thresholds(self) -> int:
        return max(self.threshold_map) + 1

    @property
    def dim(self) -> int:
        return self.n_thresholds + self.n_accumulators + 2

    @property
    def s_array(self) -> np.ndarray:
        return np.array(self.s, dtype=np.float64)

    @property
    def log_floor(self) -> float:
        return -np.inf if self.density_floor is None else float(np.log(self.density_floor))

    @property
    def param_names(self) -> list[str]:
        K, C = self.n_thresholds, self.n_accumulators
        return [f"b{k + 1}" for k in range(K)] + ["A"] + [f"v{c + 1}" for c in range(C)] + ["tau"]

    def with_floor(self, density_floor: float | None) -> "ModelDesign":
        return ModelDesign(self.threshold_map, self.n_accumulators, self.s, density_floor)

    def to_dict(self) -> dict:
        return {
            "threshold_map": list(self.threshold_map),
            "n_accumulators": self.n_accumulators,
            "s": list(self.s),
            "density_floor": self.density_floor,
        }


def to_natural(alpha, design: ModelDesign) -> list[NaturalLbaParams]:
    """Natural parameters for each condition (exp of the log effects)."""
    x = np.exp(np.asarray(alpha, dtype=np.float64))
    K, C = design.n_thresholds, design.n_accumulators
    A, v, tau = x[K], tuple(x[K + 1:K + 1 + C]), x[K + 1 + C]
    return [NaturalLbaParams(float(x[k]), float(A), v, float(tau), design.s) for k in design.threshold_map]


def from_natural(params: Sequence[NaturalLbaParams], design: ModelDesign) -> np.ndarray:
    """Inverse of :func:`to_natural`; conditions sharing a threshold must agree."""
    if len(params) != design.n_conditions:
        raise ParameterDomainError(f"expected {design.n_conditions} conditions, got {len(params)}")
    K, C = design.n_thresholds, design.n_accumulators
    b = [None] * K
    for z, k in enumerate(design.threshold_map):
        if b[k] is not None and b[k] != params[z].b:
            raise ParameterDomainError(f"conditions sharing threshold {k + 1} have different b")
        b[k] = params[z].b
    p0 = params[0]
    for p in params[1:]:
        if (p.A, p.v, p.tau) != (p0.A, p0.v, p0.tau):
            raise ParameterDomainError("A, v and tau must be shared across conditions")
    if len(p0.v) != C:
        raise ParameterDomainError(f"expected {C} drift means")
    return np.log(np.array(b + [p0.A, *p0.v, p0.tau], dtype=np.float64))


@dataclass(frozen=True)
class HyperConfig:
    """Hyperparameters of the Huang-Wand covariance prior.

    The group mean prior is fixed at N(0, I).
    """

    v_alpha: float = 2.0
    A_scales: tuple | None = None

    def __post_init__(self):
        if not self.v_alpha > 0:
            raise ParameterDomainError("v_alpha must be positive")
        if self.A_scales is not None:
            scales = tuple(float(x) for x in self.A_scales)
            if min(scales) <= 0:
                raise ParameterDomainError("A_scales must be positive")
            object.__setattr__(self, "A_scales", scales)

    def scales(self, dim: int) -> np.ndarray:
        if self.A_scales is None:
            return np.ones(dim)
        if len(self.A_scales) != dim:
            raise ParameterDomainError(f"A_scales has length {len(self.A_scales)}, model dimension is {dim}")
        return np.array(self.A_scales)

    def to_dict(self) -> dict:
        return {"v_alpha": self.v_alpha, "A_scales": None if self.A_scales is None else list(self.A_scales)}


def _cholesky(sigma: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise ParameterDomainError("covariance matrix is not positive definite") from None


@dataclass(eq=False)
class GroupParams:
    """Group-level parameters (mu, Sigma, a) with a cached Cholesky factor."""

    mu: np.ndarray
    sigma: np.ndarray
    a: np.ndarray
    _chol: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        self.a = np.asarray(self.a, dtype=np.float64)
        d = self.mu.shape[0]
        if self.mu.shape != (d,) or self.sigma.shape != (d, d) or self.a.shape != (d,):
            raise ParameterDomainError("inconsistent shapes for mu, sigma, a")
        if not np.all(np.abs(self.sigma - self.sigma.T) <= 1e-12 * max(1.0, np.abs(self.sigma).max())):
            raise ParameterDomainError("covariance matrix is not symmetric")
        if not np.all(self.a > 0):
            raise ParameterDomainError("auxiliary scales a must be positive")
        if self._chol is None:
            self._chol = _cholesky(self.sigma)

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    @property
    def chol(self) -> np.ndarray:
        return self._chol

    @cached_property
    def logdet(self) -> float:
        return 2.0 * float(np.log(np.diag(self._chol)).sum())

    @cached_property
    def precision(self) -> np.ndarray:
        return cho_solve((self._chol, True), np.eye(self.dim))


def mvn_logpdf(x, mean, chol, logdet=None) -> np.ndarray:
    """N(mean, L L^T) log-density over the last axis of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    diff = (x - mean).reshape(-1, x.shape[-1])
    z = solve_triangular(chol, diff.T, lower=True, check_finite=False)
    if logdet is None:
        logdet = 2.0 * np.log(np.diag(chol)).sum()
    d = x.shape[-1]
    out = -0.5 * (d * LOG_2PI + logdet + np.einsum("ij,ij->j", z, z))
    return out.reshape(x.shape[:-1]) if x.ndim > 1 else float(out[0])


def log_prior_alpha(alpha, group: GroupParams):
    """log N(alpha; mu, Sigma); ``alpha`` may carry leading batch axes."""
    return mvn_logpdf(alpha, group.mu, group.chol, group.logdet)


def log_iw_density(sigma, df: float, scale, chol_sigma=None) -> float:
    """Inverse-Wishart log-density with exact normalizing constant."""
    sigma = np.asarray(sigma, dtype=np.float64)
    scale = np.asarray(scale, dtype=np.float64)
    d = sigma.shape[0]
    L = _cholesky(sigma) if chol_sigma is None else chol_sigma
    logdet_sigma = 2.0 * np.log(np.diag(L)).sum()
    logdet_scale = 2.0 * np.log(np.diag(_cholesky(scale))).sum()
    trace_term = np.trace(cho_solve((L, True), scale))
    return float(
        0.5 * df * logdet_scale
        - 0.5 * df * d * np.log(2.0)
        - multigammaln(0.5 * df, d)
        - 0.5 * (df + d + 1) * logdet_sigma
        - 0.5 * trace_term
    )


def log_ig_density(x, shape: float, rate) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return shape * np.log(rate) - gammaln(shape) - (shape + 1.0) * np.log(x) - rate / x


def iw_prior_scale(a, hyper: HyperConfig) -> np.ndarray:
    return np.diag(2.0 * hyper.v_alpha / np.asarray(a, dtype=np.float64))


def log_prior_theta(group: GroupParams, hyper: HyperConfig) -> float:
    """log p(mu) + log p(Sigma | a) + sum_d log p(a_d), all normalized."""
    d = group.dim
    lp_mu = -0.5 * (d * LOG_2PI + float(group.mu @ group.mu))
    lp_sigma = log_iw_density(group.sigma, hyper.v_alpha + d - 1, iw_prior_scale(group.a, hyper), group.chol)
    lp_a = float(log_ig_density(group.a, 0.5, 1.0 / hyper.scales(d) ** 2).sum())
    return lp_mu + lp_sigma + lp_a


def sample_inverse_wishart(df: float, scale, rng, size: int | None = None) -> np.ndarray:
    """Draw from IW(df, scale) using the Bartlett factor of the Wishart inverse.

    With scale = C C^T and a Bartlett factor T, ``Sigma = M M^T`` where
    ``M^T = T^{-1} C^T``; no sampled matrix is ever inverted.  ``size`` draws a
    batch of shape (size, D, D); ``scale`` may itself be a batch.
    """
    scale = np.asarray(scale, dtype=np.float64)
    d = scale.shape[-1]
    n = 1 if size is None else int(size)
    C = np.linalg.cholesky(scale)
    T = np.zeros((n, d, d))
    T[:, np.arange(d), np.arange(d)] = np.sqrt(rng.chisquare(df - np.arange(d), size=(n, d)))
    rows, cols = np.tril_indices(d, -1)
    T[:, rows, cols] = rng.standard_normal((n, len(rows)))
    Ct = np.swapaxes(np.broadcast_to(C, (n, d, d)), -1, -2)
    if size is None:
        Mt = solve_triangular(T[0], Ct[0], lower=True, check_finite=False)
    else:
        Mt = np.linalg.solve(T, Ct)
    sigma = np.swapaxes(Mt, -1, -2) @ Mt
    return 0.5 * (sigma + np.swapaxes(sigma, -1, -2))


def sample_inverse_gamma(shape, rate, rng, size=None) -> np.ndarray:
    return 1.0 / rng.gamma(shape, 1.0 / np.asarray(rate, dtype=np.float64), size=size)


def sample_group_prior_arrays(hyper: HyperConfig, dim: int, rng, size: int):
    """``size`` independent prior draws as arrays (mu, sigma, a)."""
    scales = hyper.scales(dim)
    a = sample_inverse_gamma(0.5, 1.0 / scales**2, rng, size=(size, dim))
    psi = np.zeros((size, dim, dim))
    psi[:, np.arange(dim), np.arange(dim)] = 2.0 * hyper.v_alpha / a
    sigma = sample_inverse_wishart(hyper.v_alpha + dim - 1, psi, rng, size=size)
    mu = rng.standard_normal((size, dim))
    return mu, sigma, a


def sample_group_prior(hyper: HyperConfig, dim: int, rng) -> GroupParams:
    a = sample_inverse_gamma(0.5, 1.0 / hyper.scales(dim) ** 2, rng)
    sigma = sample_inverse_wishart(hyper.v_alpha + dim - 1, iw_prior_scale(a, hyper), rng)
    mu = rng.standard_normal(dim)
    return GroupParams(mu, sigma, a)


def sample_alpha_prior(group: GroupParams, rng, size=None) -> np.ndarray:
    """Draw random effects from N(mu, Sigma); ``size`` adds leading axes."""
    shape = (() if size is None else tuple(np.atleast_1d(size))) + (group.dim,)
    z = rng.standard_normal(shape)
    return group.mu + z @ group.chol.T


def lognormal_moments(mu, sigma) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of exp(X) for X ~ N(mu, sigma).

    Works on batches (leading axes) and on singular ``sigma``.
    """
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    var = np.diagonal(sigma, axis1=-2, axis2=-1)
    mean = np.exp(mu + 0.5 * var)
    cov = mean[..., :, None] * mean[..., None, :] * np.expm1(sigma)
    return mean, cov


def cov_to_corr(sigma) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=np.float64)
    sd = np.sqrt(np.diagonal(sigma, axis1=-2, axis2=-1))
    if np.any(sd <= 0):
        raise ParameterDomainError("covariance has a non-positive diagonal entry")
    corr = sigma / (sd[..., :, None] * sd[..., None, :])
    corr = np.clip(corr, -1.0, 1.0)
    idx = np.arange(sigma.shape[-1])
    corr[..., idx, idx] = 1.0
    return corr


# Group-level values used to generate the synthetic benchmark data: posterior
# means from a three-threshold fit of a speed/accuracy experiment.
_REF_MU = (0.27, 0.22, -0.02, -0.40, 0.30, 1.12, -1.74)
_REF_SIGMA_LOWER = (
    (0.06,),
    (0.06, 0.07),
    (0.08, 0.09, 0.13),
    (0.06, 0.06, 0.08, 0.09),
    (0.06, 0.08, 0.11, 0.04, 0.22),
    (0.00, 0.01, 0.01, 0.00, 0.01, 0.03),
    (-0.05, -0.06, -0.09, -0.05, -0.09, 0.00, 0.09),
)


def reference_group_params() -> GroupParams:
    """Reference (mu, Sigma) for the 3-threshold design, D = 7.

    The two-decimal published covariance is not quite positive definite, so
    the diagonal is raised just enough to make its smallest eigenvalue 0.005.
    """
    d = len(_REF_MU)
    sigma = np.zeros((d, d))
    for i, row in enumerate(_REF_SIGMA_LOWER):
        sigma[i, : len(row)] = row
    sigma = sigma + np.tril(sigma, -1).T
    lam = np.linalg.eigvalsh(sigma).min()
    if lam < 0.005:
        sigma = sigma + (0.005 - lam) * np.eye(d)
    return GroupParams(np.array(_REF_MU), sigma, np.ones(d))
