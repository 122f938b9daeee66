"""Compiled LBA log-likelihood kernels."""

import math

import numpy as np
from numba import njit

_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_MIN_DT = 1e-10

# reassoc/afn are left off: they change results beyond the 1e-12 checks.
_FLAGS = dict(nogil=True, cache=True, error_model="numpy", fastmath={"nsz", "arcp", "contract"})


@njit(**_FLAGS)
def loglik_particles(alpha, rt, choice, thr, n_thr, s, log_floor):
    """Total log-likelihood of one subject's trials for each row of ``alpha``.

    Row layout: ``n_thr`` log thresholds, log A, ``len(s)`` log drift means,
    log tau.  ``thr[i]`` indexes the threshold used on trial ``i``.
    """
    n_part = alpha.shape[0]
    n_acc = s.shape[0]
    out = np.empty(n_part)
    b = np.empty(n_thr)
    v = np.empty(n_acc)
    for r in range(n_part):
        for k in range(n_thr):
            b[k] = math.exp(alpha[r, k])
        A = math.exp(alpha[r, n_thr])
        for c in range(n_acc):
            v[c] = math.exp(alpha[r, n_thr + 1 + c])
        tau = math.exp(alpha[r, n_thr + n_acc + 1])
        inv_a = 1.0 / A
        total = 0.0
        for i in range(rt.shape[0]):
            bz = b[thr[i]]
            t = rt[i] - tau
            lp = -math.inf
            if t > _MIN_DT and bz >= A:
                lp = 0.0
                for c in range(n_acc):
                    vc = v[c]
                    ts = t * s[c]
                    w1 = (bz - t * vc) / ts
                    w0 = w1 - A / ts
                    dsmall = _INV_SQRT_2PI * (math.exp(-0.5 * w0 * w0) - math.exp(-0.5 * w1 * w1))
                    # upper-tail form keeps full precision at early times
                    if w0 > 0.0:
                        q0 = 0.5 * math.erfc(w0 * _SQRT1_2)
                        q1 = 0.5 * math.erfc(w1 * _SQRT1_2)
                        dbig = q0 - q1
                        if c != choice[i]:
                            surv = 1.0 - ((bz - t * vc) * q1 - (bz - A - t * vc) * q0 + ts * dsmall) * inv_a
                    else:
                        p0 = 0.5 * math.erfc(-w0 * _SQRT1_2)
                        p1 = 0.5 * math.erfc(-w1 * _SQRT1_2)
                        dbig = p1 - p0
                        if c != choice[i]:
                            surv = ((bz - t * vc) * p1 - (bz - A - t * vc) * p0 - ts * dsmall) * inv_a
                    if c == choice[i]:
                        f = (vc * dbig + s[c] * dsmall) * inv_a
                        lp += math.log(f) if f > 0.0 else -math.inf
                    else:
                        surv = min(surv, 1.0)
                        lp += math.log(surv) if surv > 0.0 else -math.inf
            if lp < log_floor:
                lp = log_floor
            total += lp
        out[r] = total
    return out


@njit(**_FLAGS)
def loglik_subjects(alpha, rt, choice, thr, offsets, subjects, n_thr, s, log_floor):
    """``alpha`` has shape (n_subjects_in_batch, R, D); returns (n_batch, R)."""
    n_batch, n_part = alpha.shape[0], alpha.shape[1]
    out = np.empty((n_batch, n_part))
    for q in range(n_batch):
        j = subjects[q]
        lo, hi = offsets[j], offsets[j + 1]
        out[q] = loglik_particles(alpha[q], rt[lo:hi], choice[lo:hi], thr[lo:hi], n_thr, s, log_floor)
    return out
