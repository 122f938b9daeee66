import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.special import ndtr

from hlba import kernels
from hlba.data import TrialObservation
from hlba.errors import DataValidationError, ParameterDomainError
from hlba.lba import (NaturalLbaParams, defective_mass, lba_cdf, lba_joint_logdensity, lba_pdf, lba_survival,
                      subject_loglik)
from hlba.model import ModelDesign, from_natural, to_natural

from conftest import PARAM_SETS


def naive_pdf_cdf(t, b, A, v, s, tau):
    """Direct transcription of the finishing-time formulas with math.erf."""
    Phi = lambda x: 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))
    phi = lambda x: math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    t = t - tau
    w1 = (b - t * v) / (t * s)
    w2 = A / (t * s)
    F = (1 + (b - A - t * v) / A * Phi(w1 - w2) - (b - t * v) / A * Phi(w1)
         + t * s / A * phi(w1 - w2) - t * s / A * phi(w1))
    f = (-v * Phi(w1 - w2) + s * phi(w1 - w2) + v * Phi(w1) - s * phi(w1)) / A
    return f, F


def test_cdf_and_pdf_vanish_before_tau():
    p = PARAM_SETS[0]
    assert lba_cdf(0.1, p) == 0.0
    assert lba_pdf(0.2, p) == 0.0
    assert lba_survival(0.05, p) == 1.0
    assert lba_joint_logdensity(0, 0.15, p) == -np.inf


def test_scalar_and_array_inputs():
    p = PARAM_SETS[1]
    t = np.array([0.3, 0.5])
    assert isinstance(lba_pdf(0.3, p), float)
    np.testing.assert_array_equal(lba_pdf(t, p), [lba_pdf(0.3, p), lba_pdf(0.5, p)])


@pytest.mark.parametrize("kw", [dict(b=0.5, A=0.6), dict(tau=0.0), dict(tau=-1.0), dict(A=0.0)])
def test_invalid_params_raise(kw):
    base = dict(b=1.0, A=0.5, v=(1.0, 1.0), tau=0.2)
    base.update(kw)
    with pytest.raises(ParameterDomainError):
        lba_cdf(1.0, NaturalLbaParams(**base))


@pytest.mark.parametrize("p", PARAM_SETS)
def test_matches_naive_formulas_in_bulk(p):
    for c in range(2):
        for t in np.linspace(p.tau + 0.05, p.tau + 2.0, 25):
            f, F = naive_pdf_cdf(t, p.b, p.A, p.v[c], p.s[c], p.tau)
            assert lba_pdf(t, p, c) == pytest.approx(f, rel=1e-10, abs=1e-14)
            assert lba_cdf(t, p, c) == pytest.approx(F, rel=1e-10, abs=1e-14)


@pytest.mark.parametrize("p", PARAM_SETS)
def test_defective_mass_by_quadrature(p):
    total = sum(
        integrate.quad(lambda t: math.exp(lba_joint_logdensity(c, t, p)), p.tau, np.inf, limit=400,
                       epsabs=1e-12, epsrel=1e-10)[0]
        for c in range(2)
    )
    expected = 1.0 - np.prod([ndtr(-v / s) for v, s in zip(p.v, p.s)])
    assert defective_mass(p) == pytest.approx(expected, abs=1e-15)
    assert abs(total - expected) < 1e-6


@pytest.mark.parametrize("p", PARAM_SETS)
def test_cdf_derivative_is_pdf(p):
    ts = p.tau + np.linspace(0.02, 3.0, 200)
    for c in range(2):
        h = 1e-4 * (ts - p.tau)
        # fourth-order central difference
        dF = (-lba_cdf(ts + 2 * h, p, c) + 8 * lba_cdf(ts + h, p, c) - 8 * lba_cdf(ts - h, p, c)
              + lba_cdf(ts - 2 * h, p, c)) / (12 * h)
        f = lba_pdf(ts, p, c)
        keep = f > 1e-12
        assert np.max(np.abs(dF[keep] - f[keep]) / f[keep]) < 1e-5


@pytest.mark.parametrize("p", PARAM_SETS)
def test_joint_density_consistent_with_parts(p):
    ts = np.linspace(p.tau + 0.01, p.tau + 3, 50)
    for c in range(2):
        joint = np.exp(lba_joint_logdensity(c, ts, p))
        parts = lba_pdf(ts, p, c) * (1.0 - lba_cdf(ts, p, 1 - c))
        np.testing.assert_allclose(joint, parts, rtol=1e-12, atol=1e-300)


def test_early_time_tail_is_accurate():
    # deep left tail: log-density should agree with a 50-digit evaluation
    mpmath = pytest.importorskip("mpmath")
    mpmath.mp.dps = 50
    p = NaturalLbaParams(2.0969637411704705, 0.7461818984468424, (0.9394172059304615, 3.000154418161621),
                         0.2224489772335282)
    t = 0.3953633069632908

    def mp_pdf(c):
        v, s = mpmath.mpf(p.v[c]), mpmath.mpf(1)
        dt = mpmath.mpf(t) - mpmath.mpf(p.tau)
        b, A = mpmath.mpf(p.b), mpmath.mpf(p.A)
        w1 = (b - dt * v) / (dt * s)
        w0 = w1 - A / (dt * s)
        return (v * (mpmath.ncdf(w1) - mpmath.ncdf(w0)) + s * (mpmath.npdf(w0) - mpmath.npdf(w1))) / A

    ref = float(mpmath.log(mp_pdf(0)))
    assert np.log(lba_pdf(t, p, 0)) == pytest.approx(ref, rel=1e-10)


@settings(max_examples=60, deadline=None)
@given(
    b_gap=st.floats(0.0, 2.0), A=st.floats(0.05, 2.0), v1=st.floats(-2.0, 5.0), v2=st.floats(-2.0, 5.0),
    tau=st.floats(0.01, 0.5), t=st.floats(0.0, 10.0),
)
def test_survival_bounded_and_cdf_monotone(b_gap, A, v1, v2, tau, t):
    p = NaturalLbaParams(A + b_gap, A, (v1, v2), tau)
    for c in range(2):
        S = lba_survival(t, p, c)
        assert 0.0 <= S <= 1.0
        assert lba_cdf(t + 0.01, p, c) >= lba_cdf(t, p, c) - 1e-12
        assert lba_pdf(t, p, c) >= 0.0


# --- kernels ---------------------------------------------------------------

def _random_case(rng, n_particles=40, n_trials=60):
    design = ModelDesign()
    alpha = rng.normal([0.3, 0.2, 0.0, -0.4, 0.3, 1.1, -1.7], 0.4, size=(n_particles, 7))
    rt = rng.uniform(0.05, 3.0, n_trials)
    choice = rng.integers(0, 2, n_trials)
    cond = rng.integers(0, 3, n_trials)
    thr = np.asarray(design.threshold_map)[cond]
    return design, alpha, rt, choice, cond, thr


def _reference_loglik(design, alpha, rt, choice, cond):
    out = []
    for row in alpha:
        ps = to_natural(row, design)
        if any(p.b < p.A for p in ps):
            out.append(-np.inf)
            continue
        out.append(sum(lba_joint_logdensity(int(c), t, ps[z]) for c, t, z in zip(choice, rt, cond)))
    return np.array(out)


@pytest.mark.parametrize("backend", ["numba", "numpy"])
def test_kernel_matches_scalar_reference(backend, rng):
    design, alpha, rt, choice, cond, thr = _random_case(rng)
    old = kernels.backend
    kernels.set_backend(backend)
    try:
        got = kernels.loglik_particles(alpha, rt, choice, thr, 3, design.s_array)
    finally:
        kernels.set_backend(old)
    ref = _reference_loglik(design, alpha, rt, choice, cond)
    np.testing.assert_array_equal(np.isfinite(got), np.isfinite(ref))
    fin = np.isfinite(ref)
    np.testing.assert_allclose(got[fin], ref[fin], rtol=1e-10)


def test_backends_agree_and_batch_independent(rng):
    design, alpha, rt, choice, cond, thr = _random_case(rng, 30, 200)
    res = {}
    for backend in ("numba", "numpy"):
        old = kernels.backend
        kernels.set_backend(backend)
        try:
            res[backend] = kernels.loglik_particles(alpha, rt, choice, thr, 3, design.s_array, np.log(1e-10))
            offsets = np.array([0, 80, 200])
            both = kernels.loglik_subjects(np.stack([alpha, alpha]), rt, choice, thr, offsets, [0, 1], 3,
                                           design.s_array, np.log(1e-10))
            single = kernels.loglik_particles(alpha[:7], rt[80:], choice[80:], thr[80:], 3, design.s_array,
                                              np.log(1e-10))
            np.testing.assert_array_equal(both[1, :7], single)
        finally:
            kernels.set_backend(old)
    np.testing.assert_allclose(res["numba"], res["numpy"], rtol=1e-12)


def test_floor_bounds_each_trial():
    design = ModelDesign(density_floor=1e-10)
    alpha = np.log([[1.0, 1.0, 1.0, 0.5, 2.0, 1.0, 0.5]])  # tau = 0.5
    rt, choice, thr = np.array([0.3, 0.4]), np.array([0, 1]), np.array([0, 1])
    exact = kernels.loglik_particles(alpha, rt, choice, thr, 3, design.s_array)
    floored = kernels.loglik_particles(alpha, rt, choice, thr, 3, design.s_array, design.log_floor)
    assert exact[0] == -np.inf
    assert floored[0] == pytest.approx(2 * np.log(1e-10))


def test_subject_loglik_threshold_below_start_bound_is_zero_likelihood():
    design = ModelDesign()
    alpha = np.log([0.4, 1.0, 1.0, 0.5, 2.0, 1.0, 0.2])  # b1 < A
    trials = [TrialObservation(1, 1, 1, 0.6), TrialObservation(1, 2, 2, 0.7)]
    assert subject_loglik(trials, alpha, design) == -np.inf
    assert np.isfinite(subject_loglik(trials[1:], alpha, design))


def test_subject_loglik_matches_sum_of_joint_densities():
    design = ModelDesign()
    alpha = np.log([1.0, 1.2, 0.9, 0.5, 2.0, 1.0, 0.2])
    trials = [TrialObservation(3, z, c, t) for z, c, t in [(1, 1, 0.5), (2, 2, 0.8), (3, 1, 0.41)]]
    ps = to_natural(alpha, design)
    ref = sum(lba_joint_logdensity(tr.choice - 1, tr.rt, ps[tr.condition - 1]) for tr in trials)
    assert subject_loglik(trials, alpha, design) == pytest.approx(ref, rel=1e-12)


def test_subject_loglik_unknown_condition():
    design = ModelDesign()
    with pytest.raises(DataValidationError):
        subject_loglik([TrialObservation(1, 4, 1, 0.5)], np.zeros(7), design)


def test_natural_round_trip():
    design = ModelDesign()
    ps = to_natural(np.log([1.0, 1.2, 0.9, 0.5, 2.0, 1.0, 0.2]), design)
    back = to_natural(from_natural(ps, design), design)
    for p, q in zip(ps, back):
        assert q.b == pytest.approx(p.b, rel=1e-14) and q.tau == pytest.approx(p.tau, rel=1e-14)
