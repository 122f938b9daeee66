"""Synthetic choice/RT data from the LBA and the hierarchical model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _rng
from .data import TrialData
from .lba import NaturalLbaParams
from .model import GroupParams, ModelDesign, sample_alpha_prior, to_natural


def simulate_trials(params: NaturalLbaParams, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` trials; returns 0-based choices and response times.

    Trials on which every drift is non-positive never finish; they are
    redrawn, so the output follows the joint density renormalized by
    1 - prod_c Phi(-v_c / s_c).
    """
    params.check()
    v = np.asarray(params.v)
    s = np.asarray(params.s)
    C = len(v)
    choice = np.empty(n, dtype=np.int64)
    rt = np.empty(n)
    todo = np.arange(n)
    while todo.size:
        m = todo.size
        start = rng.uniform(0.0, params.A, size=(m, C))
        drift = v + s * rng.standard_normal((m, C))
        ok = (drift > 0).any(axis=1)
        with np.errstate(divide="ignore"):
            finish = np.where(drift > 0, (params.b - start) / np.where(drift > 0, drift, 1.0), np.inf)
        winner = finish.argmin(axis=1)
        idx = todo[ok]
        choice[idx] = winner[ok]
        rt[idx] = finish[ok, winner[ok]] + params.tau
        todo = todo[~ok]
    return choice, rt


def simulate_trial(params: NaturalLbaParams, rng) -> tuple[int, float]:
    c, t = simulate_trials(params, 1, rng)
    return int(c[0]), float(t[0])


@dataclass
class ExperimentDesign:
    """Subjects, trials per condition, threshold map and true group parameters."""

    n_subjects: int
    trials_per_condition: int | tuple = 100
    model: ModelDesign = ModelDesign()
    group: GroupParams | None = None

    def counts(self) -> tuple:
        Z = self.model.n_conditions
        n = self.trials_per_condition
        counts = (int(n),) * Z if np.isscalar(n) else tuple(int(x) for x in n)
        if len(counts) != Z or min(counts) < 0:
            raise ValueError(f"need {Z} non-negative trial counts, got {n}")
        return counts


def simulate_dataset(design: ExperimentDesign, seed: int) -> tuple[TrialData, np.ndarray]:
    """Draw each subject's effects from N(mu, Sigma) and then their trials.

    Subject ``j`` (labelled ``j + 1``) uses its own substream, so the data of
    one subject does not depend on how many others are simulated.
    """
    if design.group is None:
        raise ValueError("experiment design needs true group parameters")
    if design.group.dim != design.model.dim:
        raise ValueError(f"group dimension {design.group.dim} does not match model dimension {design.model.dim}")
    counts = design.counts()
    S = design.n_subjects
    alpha = np.empty((S, design.model.dim))
    rts, choices, conds = [], [], []
    for j in range(S):
        rng = _rng.substream(seed, _rng.SIMULATE, j)
        # the LBA needs b >= A; effects violating it are redrawn (the truth is
        # then N(mu, Sigma) truncated to that region, a negligible change for
        # realistic group parameters)
        for _ in range(1000):
            alpha[j] = sample_alpha_prior(design.group, rng)
            per_cond = to_natural(alpha[j], design.model)
            if all(p.b >= p.A for p in per_cond):
                break
        else:
            raise ValueError("group parameters put almost no mass on thresholds above the start-point bound")
        for z, n in enumerate(counts):
            p = per_cond[z]
            c, t = simulate_trials(p, n, rng)
            choices.append(c)
            rts.append(t)
            conds.append(np.full(n, z, dtype=np.int64))
    offsets = np.concatenate([[0], np.cumsum([sum(counts)] * S)]).astype(np.int64)
    cat = (lambda xs, dt: np.concatenate(xs) if xs else np.zeros(0, dtype=dt))
    data = TrialData(np.arange(1, S + 1), cat(rts, np.float64), cat(choices, np.int64), cat(conds, np.int64), offsets)
    return data, alpha
