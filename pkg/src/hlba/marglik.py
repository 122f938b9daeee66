"""Marginal-likelihood estimates from tempering traces.

Three estimators share one trace of stages ``0 = a_0 < ... < a_P = 1``:

* ``standard``: the sum of the per-stage log normalizing-constant ratios;
* ``ti1``: trapezoid rule on the thermodynamic identity
  ``log p(y) = int_0^1 E_a[log p(y | theta)] da``;
* ``ti2``: the trapezoid rule with its end correction, using
  ``dE/da = V_a[log p(y | theta)]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import HlbaError
from .pmwg import PmwgConfig, _as_likelihood, run_pmwg
from . import _rng


class IncompleteTraceError(HlbaError, ValueError):
    pass


@dataclass
class TemperTrace:
    """Per-stage record of a tempered run.

    ``E``/``V`` are the mean/variance of the total log-likelihood under the
    stage's tempered posterior after the Markov moves; ``E_pre``/``V_pre``
    are the reweighted values before resampling and moves.
    """

    a: list = field(default_factory=list)
    log_increment: list = field(default_factory=list)
    E: list = field(default_factory=list)
    V: list = field(default_factory=list)
    E_pre: list = field(default_factory=list)
    V_pre: list = field(default_factory=list)
    ess: list = field(default_factory=list)

    COLUMNS = ("a", "log_increment", "E", "V", "E_pre", "V_pre", "ess")

    def append(self, a, log_increment, E, V, E_pre=None, V_pre=None, ess=float("nan")):
        self.a.append(float(a))
        self.log_increment.append(float(log_increment))
        self.E.append(float(E))
        self.V.append(float(V))
        self.E_pre.append(float(E if E_pre is None else E_pre))
        self.V_pre.append(float(V if V_pre is None else V_pre))
        self.ess.append(float(ess))

    def __len__(self) -> int:
        return len(self.a)

    def arrays(self) -> dict:
        return {c: np.asarray(getattr(self, c), dtype=np.float64) for c in self.COLUMNS}

    def rows(self) -> list[dict]:
        return [dict(zip(self.COLUMNS, vals)) for vals in zip(*(getattr(self, c) for c in self.COLUMNS))]

    @classmethod
    def from_arrays(cls, a, E, V=None, log_increment=None, E_pre=None, V_pre=None, ess=None) -> "TemperTrace":
        n = len(a)
        fill = lambda x, v: [v] * n if x is None else list(x)
        t = cls()
        t.a, t.E = [float(x) for x in a], [float(x) for x in E]
        t.V = [float(x) for x in fill(V, 0.0)]
        t.log_increment = [float(x) for x in fill(log_increment, 0.0)]
        t.E_pre = [float(x) for x in fill(E_pre, None)] if E_pre is not None else list(t.E)
        t.V_pre = [float(x) for x in fill(V_pre, None)] if V_pre is not None else list(t.V)
        t.ess = [float(x) for x in fill(ess, float("nan"))]
        return t

    def check(self, complete: bool = True) -> None:
        a = np.asarray(self.a)
        if len(a) == 0:
            raise IncompleteTraceError("empty trace")
        if np.any(np.diff(a) <= 0):
            raise IncompleteTraceError("temperatures must be strictly increasing")
        if complete and (a[0] != 0.0 or a[-1] != 1.0):
            raise IncompleteTraceError(f"trace runs from {a[0]} to {a[-1]}, not from 0 to 1")


def concat_traces(first: TemperTrace, second: TemperTrace) -> TemperTrace:
    """Join two traces where ``second`` starts at the temperature ``first`` ends."""
    if first.a[-1] != second.a[0]:
        raise IncompleteTraceError("traces do not meet at a common temperature")
    out = TemperTrace()
    for i in range(len(first)):
        out.append(*(getattr(first, c)[i] for c in TemperTrace.COLUMNS[:6]), ess=first.ess[i])
    for i in range(1, len(second)):
        out.append(*(getattr(second, c)[i] for c in TemperTrace.COLUMNS[:6]), ess=second.ess[i])
    return out


def logml_standard(trace: TemperTrace) -> float:
    trace.check()
    return float(np.sum(trace.log_increment[1:]))


def _ev(trace: TemperTrace, which: str):
    trace.check()
    E = np.asarray(trace.E if which == "post" else trace.E_pre)
    V = np.asarray(trace.V if which == "post" else trace.V_pre)
    if not np.all(np.isfinite(E)):
        raise IncompleteTraceError("expected log-likelihood is not finite at every stage "
                                   "(zero-likelihood prior mass; use a density floor)")
    return np.asarray(trace.a), E, V


def logml_ti1(trace: TemperTrace, which: str = "post") -> float:
    a, E, _ = _ev(trace, which)
    return float(np.sum(0.5 * np.diff(a) * (E[1:] + E[:-1])))


def logml_ti2(trace: TemperTrace, which: str = "post") -> float:
    a, E, V = _ev(trace, which)
    if not np.all(np.isfinite(V)):
        raise IncompleteTraceError("log-likelihood variance is not finite at every stage")
    da = np.diff(a)
    return float(np.sum(0.5 * da * (E[1:] + E[:-1])) - np.sum(da**2 / 12.0 * np.diff(V)))


ESTIMATORS = {"standard": logml_standard, "ti1": logml_ti1, "ti2": logml_ti2}


def power_schedule(P: int, exponent: float = 1.0 / 0.3) -> np.ndarray:
    """``a_p = ((p - 1) / (P - 1)) ** exponent`` for p = 1..P, ending exactly at 1."""
    if P < 2:
        raise ValueError("need at least two temperatures")
    a = (np.arange(P) / (P - 1)) ** exponent
    a[-1] = 1.0
    return a


@dataclass
class TiResult:
    trace: TemperTrace
    ti1: float
    ti2: float


def ti_from_pmwg(target, design=None, schedule=None, config: PmwgConfig | None = None) -> TiResult:
    """Tempered PMwG at each temperature; chain averages of the total log-likelihood feed TI.

    Each temperature is an independent run with its own random substreams.
    """
    from dataclasses import replace

    lik = _as_likelihood(target, design)
    config = config or PmwgConfig()
    schedule = power_schedule(11) if schedule is None else np.asarray(schedule, dtype=np.float64)
    trace = TemperTrace()
    for p, a in enumerate(schedule):
        chain = run_pmwg(lik, None, replace(config, temperature=float(a)), key_prefix=(_rng.TEMPER, p))
        ll = chain.select("sampling").loglik
        if len(ll) == 0:
            raise ValueError("ti_from_pmwg needs sampling iterations")
        trace.append(a, 0.0, ll.mean(), ll.var(ddof=1) if len(ll) > 1 else 0.0)
    return TiResult(trace, logml_ti1(trace), logml_ti2(trace))


def evidence_report(model_id: str, estimates: dict) -> list[dict]:
    """Mean and replicate SD per estimator; ``estimates`` maps estimator name to a list of values."""
    out = []
    for name, vals in estimates.items():
        v = np.asarray(vals, dtype=np.float64)
        out.append({
            "model_id": model_id,
            "estimator": name,
            "log_ml": float(v.mean()),
            "replicate_sd": float(v.std(ddof=1)) if len(v) > 1 else float("nan"),
            "n_replicates": int(len(v)),
        })
    return out
