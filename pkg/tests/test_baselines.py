from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from magfg.errors import DimensionMismatchError, IllConditionedError, RankDeficientError
from magfg.baselines import (
    TL_GROUPS,
    FilterSpec,
    TollesLawsonCoeffs,
    tolles_lawson_calibrate,
    tolles_lawson_terms,
    twostep_calibrate,
)
from magfg.measurements import NoiseSpec
from magfg.simulator import ProfileSpec, TruthSpec, simulate

from conftest import SHORT_PROFILE

# hard iron only: T = I, no vector bias, no soft iron
HI_ONLY = TruthSpec(vector_bias_magnitude=0.0, scale_sigma=0.0, ortho_sigma=0.0,
                    soft_iron_sigma=0.0)
# weighting with negligible vector noise, so the assumed noise mean vanishes
TINY = NoiseSpec(sigma_vec=1e-6)


def hard_iron_only(magnitude, seed=0, profile=SHORT_PROFILE, noise=None):
    noise = noise if noise is not None else NoiseSpec.zero()
    return simulate(profile, HI_ONLY, noise, seed=seed, hard_iron_magnitude=magnitude,
                    weighting=TINY)


@pytest.mark.parametrize("magnitude, tol", [(0.0, 1e-6), (100.0, 1e-3), (5000.0, 1e-3)])
def test_twostep_recovers_offset_without_noise(magnitude, tol):
    truth, meas = hard_iron_only(magnitude, seed=1)
    res = twostep_calibrate(meas, np.linalg.norm(truth.fields, axis=1))
    assert res.converged
    np.testing.assert_allclose(res.bias, truth.params.h_hi, atol=tol)


def test_twostep_cost_decreases():
    truth, meas = simulate(SHORT_PROFILE, HI_ONLY, NoiseSpec(), seed=2, hard_iron_magnitude=800.0)
    res = twostep_calibrate(meas, np.linalg.norm(truth.fields, axis=1))
    h = np.asarray(res.cost_history)
    assert np.all(np.diff(h) < 0)
    assert np.linalg.norm(res.bias - truth.params.h_hi) < 50.0


def test_twostep_rejects_constant_attitude():
    still = ProfileSpec(amplitude=0.0, turn=0.0, heading_jitter=0.0, headings=(0.0,) * 4)
    truth, meas = hard_iron_only(1000.0, profile=still)
    with pytest.raises(IllConditionedError):
        twostep_calibrate(meas, 50000.0)


def test_twostep_needs_enough_samples():
    _, meas = hard_iron_only(0.0)
    short = replace(meas, t=meas.t[:5], mag_vec=meas.mag_vec[:5], mag_scalar=meas.mag_scalar[:5],
                    gyro=meas.gyro[:5], rpy=meas.rpy[:5])
    with pytest.raises(DimensionMismatchError):
        twostep_calibrate(short, 50000.0)


def test_twostep_is_deterministic():
    _, meas = simulate(SHORT_PROFILE, seed=3)
    a, b = twostep_calibrate(meas, 50000.0), twostep_calibrate(meas, 50000.0)
    assert a.bias.tobytes() == b.bias.tobytes()


def test_tl_term_layout(rng):
    v = rng.normal(size=(50, 3)) * 3e4
    a = tolles_lawson_terms(v, 0.1)
    assert a.shape == (50, 18)
    c = v / np.linalg.norm(v, axis=1, keepdims=True)
    np.testing.assert_allclose(a[:, :3], c)
    np.testing.assert_allclose(a[:, 3], np.linalg.norm(v, axis=1) * c[:, 0] ** 2)
    assert tolles_lawson_terms(v, 0.1, ("permanent", "eddy")).shape == (50, 12)


def test_tl_zero_disturbance_gives_zero_coefficients():
    _, meas = hard_iron_only(0.0, seed=4)
    coef = tolles_lawson_calibrate(meas, ridge=1e-6)
    assert coef.coefficients.size == 18
    np.testing.assert_allclose(coef.coefficients, 0.0, atol=1e-6)


def test_tl_permanent_terms_track_hard_iron():
    truth, meas = hard_iron_only(100.0, seed=5)
    coef = tolles_lawson_calibrate(meas, groups=("permanent",))
    np.testing.assert_allclose(coef.permanent, truth.params.h_hi, atol=0.5)
    assert coef.induced is None and coef.eddy is None


def test_tl_noiseless_full_model_is_flagged():
    _, meas = hard_iron_only(0.0, seed=6)
    with pytest.raises(RankDeficientError):
        tolles_lawson_calibrate(meas)


def test_tl_compensation_reduces_band_variance():
    _, meas = simulate(SHORT_PROFILE, TruthSpec(), NoiseSpec(), seed=7, hard_iron_magnitude=1000.0)
    coef = tolles_lawson_calibrate(meas)
    assert coef.coefficients.size == 18
    band = coef.bandpass
    raw = band.apply(meas.mag_scalar)
    comp = band.apply(coef.compensate(meas.mag_scalar, meas.mag_vec, meas.dt))
    assert np.var(comp) / np.var(raw) < 1.0


def test_tl_is_deterministic():
    _, meas = simulate(SHORT_PROFILE, seed=8)
    a, b = tolles_lawson_calibrate(meas), tolles_lawson_calibrate(meas)
    assert a.coefficients.tobytes() == b.coefficients.tobytes()


def test_tl_coefficient_count_is_checked():
    with pytest.raises(DimensionMismatchError):
        TollesLawsonCoeffs(np.zeros(17))
    assert TollesLawsonCoeffs(np.zeros(18)).groups == TL_GROUPS


@pytest.mark.parametrize("kwargs", [{"low": 0.0}, {"low": 1.0, "high": 0.5}, {"high": 6.0},
                                    {"order": 0}])
def test_filter_spec_validation(kwargs):
    with pytest.raises(ValueError):
        FilterSpec(**kwargs)


def test_bandpass_removes_constant():
    x = np.full(400, 5e4)
    assert np.abs(FilterSpec().apply(x)).max() < 1e-6
