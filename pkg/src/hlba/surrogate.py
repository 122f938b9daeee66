"""A conjugate stand-in for the LBA with a closed-form evidence.

One random effect per subject (D = 1) with Gaussian observations
``y_ij ~ N(alpha_j, noise_var)`` under the same hierarchical prior as the
LBA model.  Given the group SD the model is jointly Gaussian, so the evidence
reduces to a one-dimensional integral over the (half-t distributed) SD, and
every tempered posterior can be sampled exactly.  Used to check samplers and
evidence estimators against known answers.
"""

from __future__ import annotations

import numpy as np
from scipy import integrate, optimize
from scipy.special import gammaln, logsumexp

from . import _rng
from .model import HyperConfig

LOG_2PI = np.log(2.0 * np.pi)


def halft_logpdf(x, nu: float, scale: float):
    """Log-density of the half-t distribution on x > 0."""
    x = np.asarray(x, dtype=np.float64)
    return (
        np.log(2.0) + gammaln(0.5 * (nu + 1)) - gammaln(0.5 * nu) - 0.5 * np.log(nu * np.pi) - np.log(scale)
        - 0.5 * (nu + 1) * np.log1p((x / scale) ** 2 / nu)
    )


class GaussianSurrogate:
    """Per-subject Gaussian observations with known noise variance."""

    def __init__(self, y, noise_var: float = 1.0):
        self.y = [np.asarray(v, dtype=np.float64) for v in y]
        self.noise_var = float(noise_var)
        self.n = np.array([len(v) for v in self.y], dtype=np.float64)
        self.ybar = np.array([v.mean() if len(v) else 0.0 for v in self.y])
        self.ss = np.array([((v - v.mean()) ** 2).sum() if len(v) else 0.0 for v in self.y])

    @classmethod
    def simulate(cls, n_subjects: int, n_obs: int, noise_var: float = 1.0, mu: float = 0.0, sd: float = 0.5,
                 seed: int = 0) -> "GaussianSurrogate":
        rng = _rng.substream(seed, _rng.SIMULATE)
        alpha = mu + sd * rng.standard_normal(n_subjects)
        y = [a + np.sqrt(noise_var) * rng.standard_normal(n_obs) for a in alpha]
        return cls(y, noise_var)

    @property
    def n_subjects(self) -> int:
        return len(self.y)

    @property
    def dim(self) -> int:
        return 1

    def subject(self, j: int, alpha) -> np.ndarray:
        a = np.asarray(alpha, dtype=np.float64)[:, 0]
        n, s2 = self.n[j], self.noise_var
        return -0.5 * n * np.log(2 * np.pi * s2) - 0.5 * (self.ss[j] + n * (self.ybar[j] - a) ** 2) / s2

    # --- exact answers -------------------------------------------------

    def _log_marginal_given_sd(self, sd, temperature: float = 1.0):
        """log p(y | group SD) with the likelihood raised to ``temperature``.

        Tempering a Gaussian likelihood is a Gaussian likelihood in the noise
        variance ``noise_var / temperature`` times a constant, which is
        tracked exactly.
        """
        s2 = self.noise_var / temperature
        n, ybar = self.n, self.ybar
        keep = n > 0
        n, ybar, ss = n[keep], ybar[keep], self.ss[keep]
        # constant from p^t = c(t) * N(.; ., s2/t)
        const = np.sum(n) * 0.5 * (np.log(2 * np.pi * s2) - temperature * np.log(2 * np.pi * self.noise_var))
        resid = np.sum(-0.5 * (n - 1) * np.log(2 * np.pi * s2) - 0.5 * np.log(n) - 0.5 * ss / s2)
        # ybar_j = mu + u_j + e_j: cov = diag(sd^2 + s2/n) + 1 1^T (mu ~ N(0, 1))
        d = sd**2 + s2 / n
        quad_d = np.sum(ybar**2 / d)
        w = np.sum(ybar / d)
        k = np.sum(1.0 / d)
        logdet = np.sum(np.log(d)) + np.log1p(k)
        quad = quad_d - w**2 / (1.0 + k)
        return const + resid - 0.5 * (len(n) * LOG_2PI + logdet + quad)

    def log_evidence(self, hyper: HyperConfig | None = None, temperature: float = 1.0) -> float:
        """log of the integral of p(y | theta)^temperature p(theta), by quadrature over the group SD."""
        hyper = hyper or HyperConfig()
        nu, scale = hyper.v_alpha, hyper.scales(1)[0]

        def logf(sd):
            return self._log_marginal_given_sd(sd, temperature) + halft_logpdf(sd, nu, scale)

        # centre the integrand on its mode in log(sd) for a well-scaled quadrature
        res = optimize.minimize_scalar(lambda u: -(logf(np.exp(u)) + u), bounds=(-12, 6), method="bounded")
        u0, peak = res.x, -res.fun
        g = lambda u: np.exp(logf(np.exp(u)) + u - peak)
        val, _ = integrate.quad(g, -40.0, 12.0, points=[u0], limit=500, epsabs=0, epsrel=1e-12)
        return float(peak + np.log(val))

    def sample_tempered_posterior(self, temperature: float, size: int, rng, hyper: HyperConfig | None = None,
                                  grid_size: int = 20_000) -> dict:
        """Exact draws of (mu, sigma, a, alpha) from the posterior with likelihood^temperature.

        The group SD is drawn by inverse CDF on a fine grid in log(sd); the
        rest follows from Gaussian and inverse-gamma conditionals.
        """
        hyper = hyper or HyperConfig()
        nu, scale = hyper.v_alpha, hyper.scales(1)[0]
        s2 = self.noise_var / temperature if temperature > 0 else np.inf
        u = np.linspace(-12.0, 6.0, grid_size)
        if temperature > 0:
            lp = np.array([self._log_marginal_given_sd(np.exp(x), temperature) for x in u])
        else:
            lp = np.zeros_like(u)
        lp = lp + halft_logpdf(np.exp(u), nu, scale) + u
        cdf = np.cumsum(np.exp(lp - logsumexp(lp)))
        cdf /= cdf[-1]
        du = u[1] - u[0]
        # jitter within the cell keeps draws continuous
        idx = np.searchsorted(cdf, rng.random(size))
        sd = np.exp(u[np.minimum(idx, grid_size - 1)] + du * (rng.random(size) - 0.5))
        var = sd**2
        S = self.n_subjects
        if temperature > 0:
            d = var[:, None] + s2 / np.maximum(self.n, 1e-300)[None, :]
            d = np.where(self.n[None, :] > 0, d, np.inf)
            prec = 1.0 + np.sum(1.0 / d, axis=1)
            mean = np.sum(self.ybar[None, :] / d, axis=1) / prec
        else:
            prec, mean = np.ones(size), np.zeros(size)
        mu = mean + rng.standard_normal(size) / np.sqrt(prec)
        if temperature > 0:
            aprec = 1.0 / var[:, None] + self.n[None, :] / s2
            amean = (mu[:, None] / var[:, None] + self.n[None, :] * self.ybar[None, :] / s2) / aprec
        else:
            aprec = np.broadcast_to(1.0 / var[:, None], (size, S))
            amean = np.broadcast_to(mu[:, None], (size, S))
        alpha = amean + rng.standard_normal((size, S)) / np.sqrt(aprec)
        shape = 0.5 * (nu + 1.0)
        rate = nu / var + 1.0 / scale**2
        a = 1.0 / rng.gamma(shape, 1.0 / rate)
        return {"mu": mu, "sigma": var, "a": a, "alpha": alpha}
