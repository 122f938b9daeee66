"""Linear Ballistic Accumulator finishing-time distribution and likelihood.

All densities are evaluated in log space where they feed samplers; a zero
density is represented by ``-inf`` and propagated, never NaN.  The joint
choice/RT density is the usual *defective* one: its total mass is
``1 - prod_c Phi(-v_c / s_c)``, the probability that at least one accumulator
has a positive drift.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from . import kernels
from .data import TrialObservation
from .errors import DataValidationError, ParameterDomainError

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)
MIN_DECISION_TIME = 1e-10


@dataclass(frozen=True)
class NaturalLbaParams:
    """Natural-scale LBA parameters for one condition.

    ``v`` holds one drift mean per accumulator; ``s`` the drift standard
    deviations (all 1 unless given).
    """

    b: float
    A: float
    v: tuple
    tau: float
    s: tuple = field(default=None)

    def __post_init__(self):
        v = tuple(float(x) for x in np.atleast_1d(self.v))
        object.__setattr__(self, "v", v)
        s = (1.0,) * len(v) if self.s is None else tuple(float(x) for x in np.broadcast_to(self.s, (len(v),)))
        object.__setattr__(self, "s", s)

    @property
    def n_accumulators(self) -> int:
        return len(self.v)

    def check(self) -> None:
        if len(self.v) < 1:
            raise ParameterDomainError("need at least one accumulator")
        if not (self.A > 0 and self.b > 0):
            raise ParameterDomainError(f"b and A must be positive (b={self.b}, A={self.A})")
        if self.A > self.b:
            raise ParameterDomainError(f"start-point bound A={self.A} exceeds threshold b={self.b}")
        if not self.tau > 0:
            raise ParameterDomainError(f"non-decision time must be positive, got {self.tau}")
        if not all(x > 0 for x in self.s):
            raise ParameterDomainError("drift standard deviations must be positive")
        if not all(np.isfinite(self.v)):
            raise ParameterDomainError("drift means must be finite")


def _terms(t, p: NaturalLbaParams, acc: int):
    dt = np.asarray(t, dtype=np.float64) - p.tau
    ok = dt > MIN_DECISION_TIME
    dt = np.where(ok, dt, 1.0)
    v, s = p.v[acc], p.s[acc]
    w1 = (p.b - dt * v) / (dt * s)
    w0 = w1 - p.A / (dt * s)
    return ok, dt, v, s, w0, w1


def _scalarize(x, t):
    return float(x) if np.ndim(t) == 0 else x


def _cdf_and_survival(t, p: NaturalLbaParams, acc: int):
    ok, dt, v, s, w0, w1 = _terms(t, p, acc)
    A, b = p.A, p.b
    dsmall = _INV_SQRT_2PI * (np.exp(-0.5 * w0 * w0) - np.exp(-0.5 * w1 * w1))
    # at early times (w0 > 0) F is small; build it from upper tails to avoid cancellation
    tail = w0 > 0
    F_tail = ((b - dt * v) * ndtr(-w1) - (b - A - dt * v) * ndtr(-w0) + dt * s * dsmall) / A
    S_body = ((b - dt * v) * ndtr(w1) - (b - A - dt * v) * ndtr(w0) - dt * s * dsmall) / A
    F = np.where(tail, F_tail, 1.0 - S_body)
    S = np.where(tail, 1.0 - F_tail, S_body)
    F = np.where(ok, np.clip(F, 0.0, 1.0), 0.0)
    S = np.where(ok, np.clip(S, 0.0, 1.0), 1.0)
    return F, S


def lba_cdf(t, params: NaturalLbaParams, accumulator: int = 0):
    """P(T_c <= t) for accumulator ``c`` (0-based); 0 for t <= tau."""
    params.check()
    return _scalarize(_cdf_and_survival(t, params, accumulator)[0], t)


def lba_survival(t, params: NaturalLbaParams, accumulator: int = 0):
    """1 - F_c(t), evaluated so it never goes negative."""
    params.check()
    return _scalarize(_cdf_and_survival(t, params, accumulator)[1], t)


def lba_pdf(t, params: NaturalLbaParams, accumulator: int = 0):
    """Density of the finishing time T_c; 0 for t <= tau."""
    params.check()
    ok, dt, v, s, w0, w1 = _terms(t, params, accumulator)
    dsmall = _INV_SQRT_2PI * (np.exp(-0.5 * w0 * w0) - np.exp(-0.5 * w1 * w1))
    dbig = np.where(w0 > 0, ndtr(-w0) - ndtr(-w1), ndtr(w1) - ndtr(w0))
    f = (v * dbig + s * dsmall) / params.A
    return _scalarize(np.where(ok, np.maximum(f, 0.0), 0.0), t)


def lba_joint_logdensity(choice: int, t, params: NaturalLbaParams):
    """log[f_c(t) * prod_{k != c} (1 - F_k(t))] with ``choice`` 0-based."""
    params.check()
    if not 0 <= choice < params.n_accumulators:
        raise ValueError(f"choice {choice} outside 0..{params.n_accumulators - 1}")
    with np.errstate(divide="ignore"):
        logd = np.log(np.asarray(lba_pdf(t, params, choice), dtype=np.float64))
        for k in range(params.n_accumulators):
            if k != choice:
                logd = logd + np.log(np.asarray(lba_survival(t, params, k), dtype=np.float64))
    return _scalarize(logd, t)


def defective_mass(params: NaturalLbaParams) -> float:
    """Total mass of the joint density: 1 - prod_c Phi(-v_c / s_c)."""
    return 1.0 - float(np.prod([ndtr(-v / s) for v, s in zip(params.v, params.s)]))


def subject_loglik(trials: Sequence[TrialObservation], alpha, design) -> float:
    """Sum of joint log-densities of one subject's trials at random effects ``alpha``.

    ``design`` supplies the condition-to-threshold map and drift SDs (see
    :class:`hlba.model.ModelDesign`).  Thresholds below the start-point bound
    give zero likelihood (``-inf``), not an error.
    """
    trials = list(trials)
    if not trials:
        return 0.0
    cond = np.array([tr.condition - 1 for tr in trials], dtype=np.int64)
    if cond.min() < 0 or cond.max() >= design.n_conditions:
        raise DataValidationError(f"condition index outside 1..{design.n_conditions}")
    choice = np.array([tr.choice - 1 for tr in trials], dtype=np.int64)
    if choice.min() < 0 or choice.max() >= design.n_accumulators:
        raise DataValidationError(f"choice index outside 1..{design.n_accumulators}")
    rt = np.array([tr.rt for tr in trials], dtype=np.float64)
    thr = np.asarray(design.threshold_map, dtype=np.int64)[cond]
    alpha = np.asarray(alpha, dtype=np.float64).reshape(1, -1)
    out = kernels.loglik_particles(alpha, rt, choice, thr, design.n_thresholds, design.s_array, design.log_floor)
    return float(out[0])
