"""Trial records and the canonical CSV trial format.

The file format is a header ``subject,condition,choice,rt`` followed by one
row per decision.  ``condition`` and ``choice`` are 1-based as written in the
file; in memory (:class:`TrialData`) they are converted to 0-based indices.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataValidationError

HEADER = ("subject", "condition", "choice", "rt")


@dataclass(frozen=True)
class TrialObservation:
    """One decision. ``condition`` and ``choice`` are 1-based."""

    subject_id: int
    condition: int
    choice: int
    rt: float

    def __post_init__(self):
        if not self.rt > 0 or not np.isfinite(self.rt):
            raise DataValidationError(f"response time must be positive and finite, got {self.rt}")
        if self.condition < 1 or self.choice < 1 or self.subject_id < 0:
            raise DataValidationError(f"invalid trial {self}")


class TrialData:
    """Trials grouped by subject and packed into flat arrays.

    ``rt``, ``choice`` (0-based) and ``condition`` (0-based) are concatenated
    subject by subject; rows ``offsets[j]:offsets[j+1]`` belong to the j-th
    subject, whose file label is ``subject_ids[j]``.
    """

    def __init__(self, subject_ids, rt, choice, condition, offsets):
        self.subject_ids = np.asarray(subject_ids, dtype=np.int64)
        self.rt = np.ascontiguousarray(rt, dtype=np.float64)
        self.choice = np.ascontiguousarray(choice, dtype=np.int64)
        self.condition = np.ascontiguousarray(condition, dtype=np.int64)
        self.offsets = np.ascontiguousarray(offsets, dtype=np.int64)
        if len(self.offsets) != len(self.subject_ids) + 1:
            raise DataValidationError("offsets must have one more entry than subjects")

    @property
    def n_subjects(self) -> int:
        return len(self.subject_ids)

    @property
    def n_trials(self) -> int:
        return len(self.rt)

    def subject_slice(self, j: int) -> slice:
        return slice(int(self.offsets[j]), int(self.offsets[j + 1]))

    def trials_of(self, j: int) -> list[TrialObservation]:
        sl = self.subject_slice(j)
        sid = int(self.subject_ids[j])
        return [
            TrialObservation(sid, int(c) + 1, int(k) + 1, float(t))
            for c, k, t in zip(self.condition[sl], self.choice[sl], self.rt[sl])
        ]

    @classmethod
    def from_observations(cls, trials: Iterable[TrialObservation], subjects: Sequence[int] | None = None) -> "TrialData":
        """Group trials by subject, ordering subjects by first appearance.

        ``subjects`` forces the subject list (and order), which lets subjects
        with no trials be represented.
        """
        trials = list(trials)
        order = list(subjects) if subjects is not None else list(dict.fromkeys(t.subject_id for t in trials))
        index = {sid: j for j, sid in enumerate(order)}
        buckets: list[list[TrialObservation]] = [[] for _ in order]
        for tr in trials:
            if tr.subject_id not in index:
                raise DataValidationError(f"trial for unknown subject {tr.subject_id}")
            buckets[index[tr.subject_id]].append(tr)
        flat = [tr for b in buckets for tr in b]
        offsets = np.concatenate([[0], np.cumsum([len(b) for b in buckets])]).astype(np.int64)
        return cls(
            order,
            [t.rt for t in flat],
            [t.choice - 1 for t in flat],
            [t.condition - 1 for t in flat],
            offsets,
        )

    def observations(self) -> list[TrialObservation]:
        return [tr for j in range(self.n_subjects) for tr in self.trials_of(j)]

    def validate(self, n_conditions: int, n_accumulators: int) -> None:
        if self.n_trials == 0:
            return
        if self.condition.min() < 0 or self.condition.max() >= n_conditions:
            raise DataValidationError(f"condition index outside 1..{n_conditions}")
        if self.choice.min() < 0 or self.choice.max() >= n_accumulators:
            raise DataValidationError(f"choice index outside 1..{n_accumulators}")
        if not np.all(self.rt > 0):
            raise DataValidationError("response times must be positive")


def load_trials(path) -> TrialData:
    """Parse a trial CSV; errors name the offending line.  Lines starting with ``#`` are ignored."""
    path = Path(path)
    with path.open(newline="") as fh:
        numbered = [(n, ln) for n, ln in enumerate(fh, start=1) if not ln.startswith("#")]
    if not numbered:
        raise DataValidationError(f"{path}: empty file")
    rows = zip((n for n, _ in numbered), csv.reader(ln for _, ln in numbered))
    hline, header = next(rows)
    if tuple(h.strip() for h in header) != HEADER:
        raise DataValidationError(f"{path}:{hline}: expected header {','.join(HEADER)}, got {','.join(header)}")
    trials = []
    for lineno, row in rows:
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise DataValidationError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
        try:
            sid, cond, choice = int(row[0]), int(row[1]), int(row[2])
            rt = float(row[3])
        except ValueError as exc:
            raise DataValidationError(f"{path}:{lineno}: malformed row ({exc})") from None
        if not (rt > 0 and np.isfinite(rt)):
            raise DataValidationError(f"{path}:{lineno}: response time must be positive, got {row[3]}")
        if sid < 0 or cond < 1 or choice < 1:
            raise DataValidationError(f"{path}:{lineno}: subject must be >= 0, condition and choice >= 1")
        trials.append(TrialObservation(sid, cond, choice, rt))
    return TrialData.from_observations(trials)


def save_trials(data: TrialData, path, comment: str | None = None) -> None:
    """Write the canonical CSV; ``comment`` (one line) is written first, prefixed with ``#``."""
    with Path(path).open("w", newline="") as fh:
        if comment is not None:
            fh.write("# " + comment.replace("\n", " ") + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for j in range(data.n_subjects):
            sl = data.subject_slice(j)
            sid = int(data.subject_ids[j])
            for c, k, t in zip(data.condition[sl], data.choice[sl], data.rt[sl]):
                w.writerow((sid, int(c) + 1, int(k) + 1, repr(float(t))))
