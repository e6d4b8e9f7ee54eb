from __future__ import annotations

import numpy as np
import pytest

from magfg.geometry import dcm_from_rotvec, euler_from_dcm, relative_rotvec
from magfg.magmodel import predict_scalar, predict_vector
from magfg.graph import StateVector
from magfg.measurements import MeasurementSet, NoiseSpec
from magfg.simulator import ProfileSpec, TruthSpec

# about 38 s of data at 10 Hz; enough excitation for every estimator
SHORT_PROFILE = ProfileSpec(period=2.0, dwell=0.5, gap=0.5, turn=2.0, repeats=1)

# exactly 601 samples (k = 600)
K600_PROFILE = ProfileSpec(period=4.0, dwell=0.6, gap=0.5, turn=1.1, repeats=1)

CLEAN_TRUTH = TruthSpec(soft_iron_sigma=0.0)


def random_dcm(rng, size=None):
    shape = (3,) if size is None else (size, 3)
    v = rng.normal(size=shape)
    v *= rng.uniform(0, np.pi, size=shape[:-1] + (1,)) / np.linalg.norm(v, axis=-1, keepdims=True)
    return dcm_from_rotvec(v)


def random_state(rng, n):
    """Random well-posed state: nonzero biases, T near identity, attitudes a
    random walk with steps well inside the injectivity radius of the log map."""
    t_vec = np.concatenate([rng.uniform(0.8, 1.2, 3), rng.uniform(-0.2, 0.2, 3)])
    base = np.array([20000.0, 0.0, 40000.0]) + rng.normal(size=3) * 10000.0
    fields = base + np.cumsum(rng.normal(size=(n, 3)) * 0.05, axis=0)
    c0 = random_dcm(rng)
    steps = dcm_from_rotvec(rng.normal(size=(n, 3)) * 0.3)
    att = [c0]
    for i in range(1, n):
        att.append(steps[i] @ att[-1])
    return StateVector(
        rng.normal(size=3) * 2000.0,
        rng.normal(size=3) * 500.0,
        t_vec,
        fields,
        np.array(att),
    )


def measurements_near(rng, state, dt=0.1, noise=None):
    """Measurements that state would produce, plus noise at the weighting level.

    Keeps whitened residuals O(1) so finite differences stay well resolved.
    """
    noise = noise if noise is not None else NoiseSpec()
    n = state.n
    c = state.attitudes
    rpy = euler_from_dcm(c) + noise.sigma_attitude * rng.normal(size=(n, 3))
    gyro = np.zeros((n, 3))
    gyro[1:] = relative_rotvec(c[:-1], c[1:]) + noise.gyro_step_sigma(dt) * rng.normal(size=(n - 1, 3))
    vec = predict_vector(state.params, np.eye(3), c, state.fields)
    sca = predict_scalar(np.eye(3), c, state.fields, state.h_hi)
    return MeasurementSet(
        t=np.arange(n) * dt,
        mag_vec=vec + noise.sigma_vec * rng.normal(size=(n, 3)),
        mag_scalar=sca + noise.sigma_scalar * rng.normal(size=n),
        gyro=gyro,
        rpy=rpy,
        **noise.covariances(dt),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


def fd_jacobian(graph, state, rel_step=1e-3):
    """Fourth-order central finite-difference Jacobian of the whitened residual.

    Steps go through the state retraction, so attitude columns are
    derivatives with respect to the local perturbation. The five-point
    stencil allows a step large enough that rounding in the residual does
    not swamp small entries.
    """
    x_scale = np.abs(np.concatenate([state.h_hi, state.h_vec, state.t_vec,
                                     state.fields.ravel(), np.zeros(3 * state.n)]))
    cols = []
    for j in range(state.dim):
        h = rel_step * max(1.0, x_scale[j])
        d = np.zeros(state.dim)
        d[j] = h
        f = [graph.whitened_residual(state.retract(s * d)) for s in (2, 1, -1, -2)]
        cols.append((-f[0] + 8.0 * f[1] - 8.0 * f[2] + f[3]) / (12.0 * h))
    return np.column_stack(cols)


def jacobian_relative_error(analytic, numeric, floor=1e-6, residual=None, rel_step=1e-3):
    """Entrywise relative error.

    The denominator is floored at ``floor`` times the row's largest entry.
    When ``residual`` is given, the rounding level of the difference
    quotient for that row, ``100 eps |y_i| / h``, is first subtracted from
    the absolute difference: the quotient cannot resolve anything finer.
    """
    diff = np.abs(analytic - numeric)
    if residual is not None:
        noise = 100.0 * np.finfo(float).eps * np.abs(residual)[:, None] / rel_step
        diff = np.maximum(diff - noise, 0.0)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    row_max = np.max(scale, axis=1, keepdims=True)
    scale = np.maximum(scale, np.maximum(floor * row_max, 1e-300))
    return diff / scale


_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for an acceptance criterion and print it."""

    def report(number, title, ok, detail):
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
        _ACCEPTANCE_LINES.append(line)
        with request.config.pluginmanager.get_plugin("capturemanager").global_and_fixture_disabled():
            print("\n" + line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
