"""Posterior summaries and integrated autocorrelation times."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import irfft, next_fast_len, rfft

from .errors import HlbaError
from .model import cov_to_corr, lognormal_moments

QUANTILES = (0.025, 0.5, 0.975)


class UndefinedIactError(HlbaError, ValueError):
    pass


def autocorrelation(x) -> np.ndarray:
    """Sample autocorrelations at lags 0..n-1 via FFT (biased 1/n normalization)."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    c = x - x.mean()
    m = next_fast_len(2 * n)
    f = rfft(c, m)
    acov = irfft(f * np.conj(f), m)[:n]
    return acov / acov[0]


def iact(series, min_length: int = 50) -> float:
    """1 + 2 * sum of autocorrelations, truncated by Geyer's initial positive sequence.

    Pairs Gamma_k = rho(2k) + rho(2k+1) are summed while positive, and forced
    to be non-increasing.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1 or len(x) < min_length:
        raise UndefinedIactError(f"need a 1-D series of length >= {min_length}")
    if not np.all(np.isfinite(x)) or np.ptp(x) == 0 or x.var() <= 1e-300:
        raise UndefinedIactError("series has zero variance")
    rho = autocorrelation(x)
    npairs = len(rho) // 2
    pairs = rho[: 2 * npairs : 2] + rho[1 : 2 * npairs : 2]
    neg = np.nonzero(pairs <= 0)[0]
    pairs = pairs[: neg[0]] if neg.size else pairs
    pairs = np.minimum.accumulate(pairs)
    # sum_k Gamma_k = rho_0 + 2*sum... ; tau = -1 + 2 * sum Gamma_k
    return max(float(-1.0 + 2.0 * pairs.sum()), 1.0) if pairs.size else 1.0


@dataclass
class SummaryRow:
    label: str
    mean: float
    sd: float
    q025: float
    q50: float
    q975: float
    iact: float | None = None

    def as_dict(self) -> dict:
        return {"parameter": self.label, "mean": self.mean, "sd": self.sd, "q2.5": self.q025,
                "q50": self.q50, "q97.5": self.q975, "iact": self.iact}


def weighted_quantiles(x, w, qs=QUANTILES) -> np.ndarray:
    """Quantiles of a weighted sample via the inverse of the weighted ECDF."""
    order = np.argsort(x, kind="stable")
    xs, cw = x[order], np.cumsum(w[order])
    cw = cw / cw[-1]
    idx = np.minimum(np.searchsorted(cw, np.asarray(qs) - 1e-12, side="left"), len(xs) - 1)
    return xs[idx]


def summarize_columns(labels, values, weights=None, with_iact: bool = False) -> list[SummaryRow]:
    """One row per column of ``values`` (n_draws, n_params)."""
    values = np.asarray(values, dtype=np.float64)
    rows = []
    for i, label in enumerate(labels):
        x = values[:, i]
        # moments about the first draw, so constant columns give an exact zero SD
        dx = x - x[0] if len(x) else x
        if weights is None:
            m = dx.mean()
            sd = float(dx.std(ddof=1)) if len(x) > 1 else 0.0
            q = np.quantile(x, QUANTILES)
        else:
            w = np.asarray(weights, dtype=np.float64)
            w = w / w.sum()
            m = w @ dx
            sd = float(np.sqrt(max(w @ (dx - m) ** 2, 0.0)))
            q = weighted_quantiles(x, w)
        mean = float(x[0] + m) if len(x) else float("nan")
        tau = None
        if with_iact:
            try:
                tau = iact(x)
            except UndefinedIactError:
                tau = None
        rows.append(SummaryRow(label, mean, sd, float(q[0]), float(q[1]), float(q[2]), tau))
    return rows


def group_columns(mu, sigma, names) -> tuple[list[str], np.ndarray, dict]:
    """Flatten group draws into labelled columns: mu, Sigma (lower triangle), correlations, natural moments."""
    mu = np.asarray(mu)
    sigma = np.asarray(sigma)
    d = mu.shape[-1]
    rows, cols = np.tril_indices(d)
    off = rows != cols
    corr = cov_to_corr(sigma)
    nat_mean, nat_cov = lognormal_moments(mu, sigma)
    blocks = {
        "mu": ([f"mu[{n}]" for n in names], mu),
        "sigma": ([f"sigma[{names[r]},{names[c]}]" for r, c in zip(rows, cols)], sigma[:, rows, cols]),
        "corr": ([f"corr[{names[r]},{names[c]}]" for r, c in zip(rows[off], cols[off])], corr[:, rows[off], cols[off]]),
        "natural_mean": ([f"E[{n}]" for n in names], nat_mean),
        "natural_sd": ([f"SD[{n}]" for n in names], np.sqrt(np.diagonal(nat_cov, axis1=1, axis2=2))),
    }
    labels = [l for b in blocks.values() for l in b[0]]
    values = np.concatenate([b[1] for b in blocks.values()], axis=1)
    return labels, values, blocks


def summarize(draws, weights=None, blocks=("mu", "sigma", "corr", "natural_mean", "natural_sd"),
              subjects: bool = False) -> list[SummaryRow]:
    """Summaries of a chain (``ChainOutput``) or a weighted cloud (``ParticleCloud``).

    IACTs are reported for chains only.  ``subjects=True`` adds per-subject
    random effects.
    """
    is_chain = hasattr(draws, "stage")
    mu, sigma, alpha = draws.mu, draws.sigma, draws.alpha
    names = list(draws.param_names)
    if weights is None and not is_chain:
        weights = draws.weights
    _, _, parts = group_columns(mu, sigma, names)
    labels, cols = [], []
    for b in blocks:
        labels += parts[b][0]
        cols.append(parts[b][1])
    if subjects:
        S = alpha.shape[1]
        labels += [f"alpha[{j + 1},{n}]" for j in range(S) for n in names]
        cols.append(alpha.reshape(alpha.shape[0], -1))
    values = np.concatenate(cols, axis=1)
    return summarize_columns(labels, values, weights, with_iact=is_chain)
