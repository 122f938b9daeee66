"""Per-subject log-likelihood evaluators used by the samplers.

A likelihood object exposes ``n_subjects``, ``dim`` and
``subject(j, alpha)`` returning one log-likelihood per row of ``alpha``.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .data import TrialData
from .model import ModelDesign


class LbaLikelihood:
    def __init__(self, data: TrialData, design: ModelDesign):
        data.validate(design.n_conditions, design.n_accumulators)
        self.data = data
        self.design = design
        thr_map = np.asarray(design.threshold_map, dtype=np.int64)
        self._thr = thr_map[data.condition] if data.n_trials else np.zeros(0, dtype=np.int64)
        self._s = design.s_array
        self._floor = design.log_floor
        self._slices = [
            (data.rt[sl], data.choice[sl], self._thr[sl])
            for sl in (data.subject_slice(j) for j in range(data.n_subjects))
        ]

    @property
    def n_subjects(self) -> int:
        return self.data.n_subjects

    @property
    def dim(self) -> int:
        return self.design.dim

    def subject(self, j: int, alpha) -> np.ndarray:
        rt, choice, thr = self._slices[j]
        return kernels.loglik_particles(alpha, rt, choice, thr, self.design.n_thresholds, self._s, self._floor)

    def total(self, alpha) -> np.ndarray:
        """Per-subject log-likelihoods at one effect vector per subject, (S, D) -> (S,)."""
        alpha = np.asarray(alpha, dtype=np.float64)
        return np.array([self.subject(j, alpha[j:j + 1])[0] for j in range(self.n_subjects)])
