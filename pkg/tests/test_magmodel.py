from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from magfg.geometry import dcm_from_rotvec
from magfg.magmodel import (
    CalParams,
    body_field,
    cal_matrix,
    cal_matrix_partials,
    is_soft_iron,
    predict_scalar,
    predict_vector,
    soft_iron_matrix,
)

E_NORTH = np.array([50000.0, 0.0, 0.0])


def test_identity_params_give_identity_matrix():
    np.testing.assert_array_equal(CalParams().matrix(), np.eye(3))


def test_matrix_entries_by_substitution():
    t = cal_matrix([1.0, 1.0, 2.0, np.pi / 6, 0.0, 0.0])
    np.testing.assert_allclose(t[2], [0.5, 0.0, 2.0 * math.cos(np.pi / 6)], atol=1e-15)


def test_matrix_layout():
    kx, ky, kz, al, be, ga = 1.1, 0.9, 1.05, 0.02, -0.03, 0.04
    t = cal_matrix([kx, ky, kz, al, be, ga])
    expected = np.array([
        [kx, 0.0, 0.0],
        [math.sin(be) * math.cos(ga), ky * math.cos(be) * math.cos(ga), math.sin(ga)],
        [math.sin(al), 0.0, kz * math.cos(al)],
    ])
    np.testing.assert_array_equal(t, expected)


@pytest.mark.parametrize("index", range(6))
def test_matrix_partials_by_finite_difference(index, rng):
    t_vec = np.concatenate([rng.uniform(0.8, 1.2, 3), rng.uniform(-0.5, 0.5, 3)])
    h = 1e-6
    up, dn = t_vec.copy(), t_vec.copy()
    up[index] += h
    dn[index] -= h
    fd = (cal_matrix(up) - cal_matrix(dn)) / (2 * h)
    an = cal_matrix_partials(t_vec)[index]
    scale = np.maximum(np.abs(fd), 1e-3)
    assert np.max(np.abs(an - fd) / scale) < 1e-6


def test_all_distortions_off():
    out = predict_vector(CalParams(), np.eye(3), np.eye(3), E_NORTH)
    np.testing.assert_allclose(out, E_NORTH, atol=0)


def test_hard_iron_is_additive():
    p = CalParams(h_hi=[100.0, 200.0, -300.0])
    out = predict_vector(p, np.eye(3), np.eye(3), E_NORTH)
    np.testing.assert_allclose(out, [50100.0, 200.0, -300.0], atol=0)


def test_distorted_vector_by_hand():
    p = CalParams([1000.0, 0.0, 0.0], [0.0, 1000.0, 0.0], [1.1, 1.0, 1.0, 0.01, 0.0, 0.0])
    out = predict_vector(p, np.eye(3), np.eye(3), E_NORTH)
    # T @ (51000, 0, 0) + (0, 1000, 0), T rows: (1.1,0,0), (0,1,0), (sin .01, 0, cos .01)
    np.testing.assert_allclose(out, [56100.0, 1000.0, 51000.0 * math.sin(0.01)], rtol=1e-15)


def test_scalar_simple_cases():
    assert predict_scalar(np.eye(3), np.eye(3), E_NORTH, np.zeros(3)) == 50000.0
    assert predict_scalar(np.eye(3), np.eye(3), np.zeros(3), [0.0, 3000.0, 4000.0]) == 5000.0


def test_scalar_ignores_cal_matrix_but_sees_soft_iron():
    si = soft_iron_matrix(1.001, 0, 0, 1.0, 0, 1.0)
    assert predict_scalar(si, np.eye(3), E_NORTH, np.zeros(3)) == pytest.approx(50050.0)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_scalar_invariant_under_attitude(seed):
    rng = np.random.default_rng(seed)
    e = rng.normal(size=3) * 30000.0
    c = dcm_from_rotvec(rng.normal(size=3))
    assert predict_scalar(np.eye(3), c, e, np.zeros(3)) == pytest.approx(np.linalg.norm(e), rel=1e-13)


def test_batched_prediction_matches_loop(rng):
    p = CalParams(rng.normal(size=3) * 100, rng.normal(size=3) * 100,
                  [1.1, 0.9, 1.0, 0.01, -0.02, 0.03])
    si = soft_iron_matrix(1.0, 1e-3, 0.0, 1.0, -2e-3, 1.0)
    c = dcm_from_rotvec(rng.normal(size=(7, 3)))
    e = rng.normal(size=(7, 3)) * 1e4
    vec = predict_vector(p, si, c, e)
    sca = predict_scalar(si, c, e, p.h_hi)
    for i in range(7):
        np.testing.assert_allclose(vec[i], p.matrix() @ (si @ c[i] @ e[i] + p.h_hi) + p.h_vec,
                                   rtol=1e-12, atol=1e-9)
        assert sca[i] == pytest.approx(np.linalg.norm(si @ c[i] @ e[i] + p.h_hi), rel=1e-14)
    np.testing.assert_allclose(body_field(si, c, e)[3], si @ c[3] @ e[3], rtol=1e-14)


def test_soft_iron_validity():
    assert is_soft_iron(soft_iron_matrix(1, 0.1, 0, 1, 0, 1))
    assert not is_soft_iron(np.array([[1.0, 0.1, 0], [0.0, 1, 0], [0, 0, 1]]))
    assert not is_soft_iron(soft_iron_matrix(1, 2, 0, 1, 0, 1))


@pytest.mark.parametrize("t_vec, ok", [
    ([1, 1, 1, 0, 0, 0], True),
    ([0, 1, 1, 0, 0, 0], False),
    ([1, 1, 1, 0, 0.8, 0], False),
    ([1.2, 0.8, 1, -0.7, 0.1, 0.2], True),
])
def test_params_validity(t_vec, ok):
    assert CalParams(t_vec=t_vec).is_valid() is ok


def test_params_round_trips(rng):
    p = CalParams(rng.normal(size=3), rng.normal(size=3), rng.normal(size=6))
    q = CalParams.from_vector(p.as_vector())
    np.testing.assert_array_equal(q.as_vector(), p.as_vector())
    r = CalParams.from_dict(p.to_dict())
    np.testing.assert_array_equal(r.as_vector(), p.as_vector())
