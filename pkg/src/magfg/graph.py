"""Factor graph for joint hard-iron / field / attitude estimation.

Variables, in state order: hard iron ``h_hi`` (3), vector bias ``h_vec`` (3),
scale/non-orthogonality ``t_vec`` (6), external field ``e_k`` per step (3
each) and attitude ``C_k`` per step (3 each, stored as DCMs and perturbed
locally as ``C <- C @ so3_exp(delta)``).

Factors, in residual order:

* field change ``e_k - e_{k-1}`` (k of them),
* gyro increment ``w_k - relative_rotvec(C_{k-1}, C_k)`` (k),
* attitude prior ``rotvec_from_dcm(C_meas_k @ C_k.T)`` (k + 1),
* magnetometer ``m_k - [T (C_k e_k + h_hi) + h_vec, |C_k e_k + h_hi|]`` (k + 1),
* optional Gaussian priors on the calibration parameter blocks.

Every factor's rows are whitened by the inverse Cholesky factor of its
covariance. :meth:`FactorGraph.linearize` returns the whitened residual and
its Jacobian (the derivative of the whitened residual with respect to the
tangent-space state).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateFieldError, DimensionMismatchError, SingularCovarianceError
from .geometry import dcm_from_euler, right_jacobian_inv, rotvec_from_dcm, skew, so3_exp, so3_log
from .magmodel import CalParams, cal_matrix, cal_matrix_partials
from .measurements import MeasurementSet

N_PARAMS = 12
PARAM_BLOCKS = {"h_hi": slice(0, 3), "h_vec": slice(3, 6), "t_vec": slice(6, 12)}
MIN_FIELD_NORM = 1.0


@dataclass
class StateVector:
    h_hi: np.ndarray
    h_vec: np.ndarray
    t_vec: np.ndarray
    fields: np.ndarray
    attitudes: np.ndarray

    def __post_init__(self):
        self.h_hi = np.asarray(self.h_hi, dtype=float).reshape(3)
        self.h_vec = np.asarray(self.h_vec, dtype=float).reshape(3)
        self.t_vec = np.asarray(self.t_vec, dtype=float).reshape(6)
        self.fields = np.asarray(self.fields, dtype=float).reshape(-1, 3)
        self.attitudes = np.asarray(self.attitudes, dtype=float).reshape(-1, 3, 3)
        if self.fields.shape[0] != self.attitudes.shape[0]:
            raise DimensionMismatchError("field and attitude blocks differ in length")

    @property
    def n(self):
        return self.fields.shape[0]

    @property
    def dim(self):
        return N_PARAMS + 6 * self.n

    @staticmethod
    def field_offset(n, k):
        return N_PARAMS + 3 * k

    @staticmethod
    def attitude_offset(n, k):
        return N_PARAMS + 3 * n + 3 * k

    @property
    def params(self):
        return CalParams(self.h_hi, self.h_vec, self.t_vec)

    def to_flat(self):
        """Flat vector with attitudes encoded as rotation vectors."""
        return np.concatenate(
            [self.h_hi, self.h_vec, self.t_vec, self.fields.ravel(),
             rotvec_from_dcm(self.attitudes).ravel()]
        )

    @classmethod
    def from_flat(cls, x, n):
        from .geometry import dcm_from_rotvec

        x = np.asarray(x, dtype=float)
        if x.size != N_PARAMS + 6 * n:
            raise DimensionMismatchError(f"expected {N_PARAMS + 6 * n} entries, got {x.size}")
        f0 = N_PARAMS
        a0 = N_PARAMS + 3 * n
        return cls(x[0:3], x[3:6], x[6:12], x[f0:a0].reshape(n, 3),
                   dcm_from_rotvec(x[a0:].reshape(n, 3)))

    def retract(self, delta):
        """Apply a tangent-space update; attitudes are updated multiplicatively."""
        delta = np.asarray(delta, dtype=float)
        n = self.n
        if delta.size != self.dim:
            raise DimensionMismatchError(f"update has {delta.size} entries, state has {self.dim}")
        a0 = N_PARAMS + 3 * n
        return StateVector(
            self.h_hi + delta[0:3],
            self.h_vec + delta[3:6],
            self.t_vec + delta[6:12],
            self.fields + delta[N_PARAMS:a0].reshape(n, 3),
            self.attitudes @ so3_exp(delta[a0:].reshape(n, 3)),
        )

    def copy(self):
        return StateVector(self.h_hi.copy(), self.h_vec.copy(), self.t_vec.copy(),
                           self.fields.copy(), self.attitudes.copy())


@dataclass(frozen=True)
class GraphConfig:
    """Factor weighting and model options.

    ``field_q`` (nT/sqrt(hr)) sets the field-change factor std to
    ``field_q * sqrt(dt / 3600)`` per axis unless ``field_sigma`` (nT per
    step) is given. ``fixed_field`` replaces it with ``fixed_field_sigma``,
    effectively pinning the field to a constant.

    ``scale_hard_iron=False`` switches to the variant magnetometer
    prediction ``h_hi + T C e + h_vec`` / ``|h_hi + T C e|``.

    ``priors`` maps ``"h_hi"``, ``"h_vec"`` or ``"t_vec"`` to ``(mean, sigma)``.
    """

    field_q: float = 10.0
    field_sigma: float | None = None
    fixed_field: bool = False
    fixed_field_sigma: float = 1e-6
    scale_hard_iron: bool = True
    priors: dict = field(default_factory=dict)

    def field_change_sigma(self, dt):
        if self.fixed_field:
            return self.fixed_field_sigma
        if self.field_sigma is not None:
            return self.field_sigma
        return self.field_q * np.sqrt(dt / 3600.0)


@dataclass
class SparseSystem:
    """Whitened residual ``y`` and its sparse Jacobian ``L``."""

    y: np.ndarray
    L: sp.csr_matrix

    @property
    def cost(self):
        return float(self.y @ self.y)


def _whitener(cov, name):
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if not np.allclose(cov, cov.T):
        raise SingularCovarianceError(f"{name} covariance is not symmetric")
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError(f"{name} covariance is not positive definite") from exc
    return np.linalg.inv(chol)


class FactorGraph:
    """Factors built from a measurement set; evaluates residuals and Jacobians."""

    def __init__(self, meas: MeasurementSet, config: GraphConfig | None = None):
        self.meas = meas
        self.config = config or GraphConfig()
        n = meas.n
        k = n - 1
        self.n, self.k = n, k
        self.dim = N_PARAMS + 6 * n

        dt = meas.dt if n > 1 else 1.0
        sig_d = self.config.field_change_sigma(dt)
        self.w_field = _whitener(sig_d**2 * np.eye(3), "field-change")
        self.w_gyro = _whitener(meas.cov_gyro, "gyro")
        self.w_rpy = _whitener(meas.cov_rpy, "attitude")
        cov_m = np.zeros((4, 4))
        cov_m[:3, :3] = meas.cov_vec
        cov_m[3, 3] = meas.cov_scalar
        self.w_mag = _whitener(cov_m, "magnetometer")

        self.priors = []
        for name, (mean, sigma) in sorted(self.config.priors.items()):
            if name not in PARAM_BLOCKS:
                raise KeyError(f"unknown prior block {name!r}")
            blk = PARAM_BLOCKS[name]
            width = blk.stop - blk.start
            sigma = np.broadcast_to(np.asarray(sigma, float), (width,))
            w = _whitener(np.diag(sigma**2), f"{name} prior")
            self.priors.append((blk, np.broadcast_to(np.asarray(mean, float), (width,)), w))

        self.c_meas = dcm_from_euler(meas.rpy)
        self.counts = {"d": k, "omega": k, "rpy": n, "m": n, "prior": len(self.priors)}

        self.row_d = 0
        self.row_g = 3 * k
        self.row_r = 6 * k
        self.row_m = 6 * k + 3 * n
        self.row_p = 6 * k + 7 * n
        self.n_rows = self.row_p + sum(b.stop - b.start for b, _, _ in self.priors)
        self._build_pattern()

    # -- sparsity pattern -------------------------------------------------
    def _field_cols(self, idx):
        return N_PARAMS + 3 * np.asarray(idx)[..., None] + np.arange(3)

    def _att_cols(self, idx):
        return N_PARAMS + 3 * self.n + 3 * np.asarray(idx)[..., None] + np.arange(3)

    def _block(self, row0, nrow, cols):
        # rows: (m, nrow); cols: (m, ncol) -> flattened (m*nrow*ncol) index arrays
        m = cols.shape[0]
        rows = row0 + nrow * np.arange(m)[:, None] + np.arange(nrow)
        r = np.broadcast_to(rows[:, :, None], (m, nrow, cols.shape[1]))
        c = np.broadcast_to(cols[:, None, :], (m, nrow, cols.shape[1]))
        return r.ravel(), c.ravel()

    def _build_pattern(self):
        n, k = self.n, self.k
        rows, cols = [], []
        if k > 0:
            prev, curr = np.arange(k), np.arange(1, n)
            r, c = self._block(self.row_d, 3, np.concatenate(
                [self._field_cols(prev), self._field_cols(curr)], axis=1))
            rows.append(r); cols.append(c)
            r, c = self._block(self.row_g, 3, np.concatenate(
                [self._att_cols(prev), self._att_cols(curr)], axis=1))
            rows.append(r); cols.append(c)
        steps = np.arange(n)
        r, c = self._block(self.row_r, 3, self._att_cols(steps))
        rows.append(r); cols.append(c)
        params = np.broadcast_to(np.arange(N_PARAMS), (n, N_PARAMS))
        r, c = self._block(self.row_m, 4, np.concatenate(
            [params, self._field_cols(steps), self._att_cols(steps)], axis=1))
        rows.append(r); cols.append(c)
        row = self.row_p
        for blk, _, _ in self.priors:
            width = blk.stop - blk.start
            r, c = self._block(row, width, np.arange(blk.start, blk.stop)[None, :])
            rows.append(r); cols.append(c)
            row += width
        self._rows = np.concatenate(rows)
        self._cols = np.concatenate(cols)

    # -- evaluation -------------------------------------------------------
    def _check(self, state: StateVector):
        if state.n != self.n:
            raise DimensionMismatchError(
                f"state has {state.n} steps, measurements have {self.n}")

    def _mag_terms(self, state: StateVector, jac: bool):
        t_mat = cal_matrix(state.t_vec)
        c, e = state.attitudes, state.fields
        ce = np.einsum("kij,kj->ki", c, e)
        if self.config.scale_hard_iron:
            v = ce + state.h_hi
            pred_vec = v @ t_mat.T + state.h_vec
            s_vec = v
        else:
            tce = ce @ t_mat.T
            s_vec = tce + state.h_hi
            pred_vec = s_vec + state.h_vec
        norm = np.linalg.norm(s_vec, axis=1)
        if np.any(norm < MIN_FIELD_NORM):
            raise DegenerateFieldError("estimated field norm below 1 nT")
        res = np.empty((self.n, 4))
        res[:, :3] = self.meas.mag_vec - pred_vec
        res[:, 3] = self.meas.mag_scalar - norm
        if not jac:
            return res, None

        u = s_vec / norm[:, None]
        dt_mat = cal_matrix_partials(state.t_vec)
        cex = c @ skew(e)  # C [e]x
        j = np.zeros((self.n, 4, 18))
        if self.config.scale_hard_iron:
            j[:, :3, 0:3] = -t_mat
            j[:, 3, 0:3] = -u
            j[:, :3, 3:6] = -np.eye(3)
            j[:, :3, 6:12] = -np.einsum("pij,kj->kip", dt_mat, v)
            tc = np.einsum("ij,kjl->kil", t_mat, c)
            j[:, :3, 12:15] = -tc
            j[:, 3, 12:15] = -np.einsum("ki,kij->kj", u, c)
            j[:, :3, 15:18] = np.einsum("ij,kjl->kil", t_mat, cex)
            j[:, 3, 15:18] = np.einsum("ki,kij->kj", u, cex)
        else:
            j[:, :3, 0:3] = -np.eye(3)
            j[:, 3, 0:3] = -u
            j[:, :3, 3:6] = -np.eye(3)
            dtce = np.einsum("pij,kj->kip", dt_mat, ce)
            j[:, :3, 6:12] = -dtce
            j[:, 3, 6:12] = -np.einsum("ki,kip->kp", u, dtce)
            tc = np.einsum("ij,kjl->kil", t_mat, c)
            j[:, :3, 12:15] = -tc
            j[:, 3, 12:15] = -np.einsum("ki,kij->kj", u, tc)
            tcex = np.einsum("ij,kjl->kil", t_mat, cex)
            j[:, :3, 15:18] = tcex
            j[:, 3, 15:18] = np.einsum("ki,kij->kj", u, tcex)
        return res, j

    def _evaluate(self, state: StateVector, jac: bool):
        self._check(state)
        n, k = self.n, self.k
        c = state.attitudes
        res_parts, val_parts = [], []

        if k > 0:
            r_d = state.fields[1:] - state.fields[:-1]
            res_parts.append((r_d @ self.w_field.T).ravel())
            if jac:
                blk = np.concatenate([-self.w_field, self.w_field], axis=1)
                val_parts.append(np.broadcast_to(blk, (k, 3, 6)).ravel())

            psi = so3_log(c[1:] @ np.swapaxes(c[:-1], 1, 2))
            r_g = self.meas.gyro[1:] + psi
            res_parts.append((r_g @ self.w_gyro.T).ravel())
            if jac:
                jr = right_jacobian_inv(psi) @ c[:-1]
                blk = np.concatenate([-jr, jr], axis=2)
                val_parts.append(np.einsum("ij,kjl->kil", self.w_gyro, blk).ravel())

        m_err = self.c_meas @ np.swapaxes(c, 1, 2)
        log_m = so3_log(m_err)
        r_r = -log_m
        res_parts.append((r_r @ self.w_rpy.T).ravel())
        if jac:
            blk = right_jacobian_inv(log_m) @ c
            val_parts.append(np.einsum("ij,kjl->kil", self.w_rpy, blk).ravel())

        r_m, j_m = self._mag_terms(state, jac)
        res_parts.append((r_m @ self.w_mag.T).ravel())
        if jac:
            val_parts.append(np.einsum("ij,kjl->kil", self.w_mag, j_m).ravel())

        x_par = np.concatenate([state.h_hi, state.h_vec, state.t_vec])
        for blk, mean, w in self.priors:
            res_parts.append(w @ (mean - x_par[blk]))
            if jac:
                val_parts.append((-w).ravel())

        y = np.concatenate(res_parts)
        if not jac:
            return y, None
        vals = np.concatenate(val_parts)
        L = sp.csr_matrix((vals, (self._rows, self._cols)), shape=(self.n_rows, self.dim))
        return y, L

    def residual(self, state: StateVector):
        """Unwhitened residual, stacked in factor order."""
        self._check(state)
        n, k = self.n, self.k
        c = state.attitudes
        parts = []
        if k > 0:
            parts.append((state.fields[1:] - state.fields[:-1]).ravel())
            parts.append((self.meas.gyro[1:] + so3_log(c[1:] @ np.swapaxes(c[:-1], 1, 2))).ravel())
        parts.append(rotvec_from_dcm(self.c_meas @ np.swapaxes(c, 1, 2)).ravel())
        parts.append(self._mag_terms(state, False)[0].ravel())
        x_par = np.concatenate([state.h_hi, state.h_vec, state.t_vec])
        for blk, mean, _ in self.priors:
            parts.append(mean - x_par[blk])
        return np.concatenate(parts)

    def whitened_residual(self, state: StateVector):
        return self._evaluate(state, jac=False)[0]

    def linearize(self, state: StateVector) -> SparseSystem:
        y, L = self._evaluate(state, jac=True)
        return SparseSystem(y, L)

    def cost(self, state: StateVector):
        y = self.whitened_residual(state)
        return float(y @ y)

    def row_slices(self):
        """Row ranges of each factor type in the stacked residual."""
        return {
            "d": slice(self.row_d, self.row_g),
            "omega": slice(self.row_g, self.row_r),
            "rpy": slice(self.row_r, self.row_m),
            "m": slice(self.row_m, self.row_p),
            "prior": slice(self.row_p, self.n_rows),
        }


def build_graph(meas: MeasurementSet, config: GraphConfig | None = None) -> FactorGraph:
    return FactorGraph(meas, config)


def residual(state: StateVector, meas: MeasurementSet, config: GraphConfig | None = None):
    return FactorGraph(meas, config).residual(state)


def jacobian(state: StateVector, meas: MeasurementSet, config: GraphConfig | None = None):
    return FactorGraph(meas, config).linearize(state)
