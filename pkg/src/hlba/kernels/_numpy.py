"""Vectorized NumPy/SciPy fallback for the LBA log-likelihood kernels.

Same contract as the compiled kernels; each subject is evaluated as one
(R, N) broadcast so array shapes, and hence rounding, never depend on how
subjects are batched.
"""

import numpy as np
from scipy.special import ndtr

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)
_MIN_DT = 1e-10


def loglik_particles(alpha, rt, choice, thr, n_thr, s, log_floor):
    n_acc = s.shape[0]
    nat = np.exp(alpha)
    A = nat[:, n_thr][:, None]
    tau = nat[:, n_thr + n_acc + 1][:, None]
    b = nat[:, :n_thr][:, thr]  # (R, N)
    t = rt[None, :] - tau
    ok = (t > _MIN_DT) & (b >= A)
    t = np.where(ok, t, 1.0)
    lp = np.zeros_like(t)
    for c in range(n_acc):
        vc = nat[:, n_thr + 1 + c][:, None]
        ts = t * s[c]
        w1 = (b - t * vc) / ts
        w0 = w1 - A / ts
        dsmall = _INV_SQRT_2PI * (np.exp(-0.5 * w0 * w0) - np.exp(-0.5 * w1 * w1))
        # upper-tail form keeps full precision at early times
        tail = w0 > 0.0
        q0, q1 = ndtr(-w0), ndtr(-w1)
        p0, p1 = ndtr(w0), ndtr(w1)
        dbig = np.where(tail, q0 - q1, p1 - p0)
        f = (vc * dbig + s[c] * dsmall) / A
        surv = np.where(
            tail,
            1.0 - ((b - t * vc) * q1 - (b - A - t * vc) * q0 + ts * dsmall) / A,
            ((b - t * vc) * p1 - (b - A - t * vc) * p0 - ts * dsmall) / A,
        )
        term = np.where(choice[None, :] == c, f, np.minimum(surv, 1.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            lp += np.where(term > 0.0, np.log(np.where(term > 0.0, term, 1.0)), -np.inf)
    lp = np.where(ok, lp, -np.inf)
    lp = np.maximum(lp, log_floor)
    return lp.sum(axis=1)


def loglik_subjects(alpha, rt, choice, thr, offsets, subjects, n_thr, s, log_floor):
    out = np.empty(alpha.shape[:2])
    for q, j in enumerate(subjects):
        lo, hi = offsets[j], offsets[j + 1]
        out[q] = loglik_particles(alpha[q], rt[lo:hi], choice[lo:hi], thr[lo:hi], n_thr, s, log_floor)
    return out
