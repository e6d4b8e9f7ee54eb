"""Batch Gauss-Newton over the factor graph.

Each step solves the normal equations ``L^T L dx = -L^T y``. The unknowns
are reordered as the 12 calibration parameters followed by ``[e_k, delta_k]``
interleaved in time; in that order the per-step part of ``L^T L`` is banded
(half-bandwidth 8), so it is factored with a banded Cholesky and the
parameters are recovered from the 12x12 Schur complement.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NormalEquationsSingular
from .graph import N_PARAMS, FactorGraph, GraphConfig, StateVector
from .magmodel import IDENTITY_TVEC
from .measurements import MeasurementSet

@dataclass(frozen=True)
class SolverConfig:
    """Gauss-Newton stopping rules and optional damping.

    ``step_tolerance`` applies to the weighted step norm ``|L dx|``;
    ``cost_tolerance`` to the relative cost decrease of an accepted step;
    ``gradient_tolerance`` to ``|L^T y|_inf`` after the step. Any one of
    them ends the iteration. ``damping > 0`` enables Levenberg-Marquardt
    style diagonal damping, adapted by x10 / /10.
    """

    max_iterations: int = 100
    step_tolerance: float = 1e-8
    cost_tolerance: float = 1e-12
    gradient_tolerance: float = 1e-6
    damping: float = 0.0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        for name in ("step_tolerance", "cost_tolerance", "gradient_tolerance"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.damping < 0:
            raise ValueError("damping must be nonnegative")


@dataclass
class SolveReport:
    state: StateVector
    converged: bool
    iterations: int
    cost: float
    cost_history: list
    step_norms: list = field(default_factory=list)
    reason: str = ""
    sigma_min: float = float("nan")
    sigma_max: float = float("nan")
    param_covariance: np.ndarray | None = None
    gradient_norm: float = float("nan")


def initialize(meas: MeasurementSet) -> StateVector:
    """Starting point: measured attitudes, body field rotated to NED, no errors."""
    c = meas.attitudes()
    fields = np.einsum("kji,kj->ki", c, meas.mag_vec)
    return StateVector(np.zeros(3), np.zeros(3), IDENTITY_TVEC.copy(), fields, c)


def _reduction(n, fixed_field):
    """Column map ``P`` (full -> reduced), global column count and bandwidth.

    Reduced columns are ordered globals first, then per-step blocks in time.
    With ``fixed_field`` all field blocks share one update, which is the
    exact limit of a vanishing field-change covariance.
    """
    dim = N_PARAMS + 6 * n
    steps = np.arange(n)[:, None]
    e_cols = N_PARAMS + 3 * steps + np.arange(3)
    a_cols = N_PARAMS + 3 * n + 3 * steps + np.arange(3)
    if not fixed_field:
        order = np.concatenate([np.arange(N_PARAMS), np.hstack([e_cols, a_cols]).ravel()])
        p = sp.csc_matrix((np.ones(dim), (order, np.arange(dim))), shape=(dim, dim))
        return p, N_PARAMS, 8
    rows = np.concatenate([np.arange(N_PARAMS), e_cols.ravel(), a_cols.ravel()])
    cols = np.concatenate([
        np.arange(N_PARAMS),
        np.tile(N_PARAMS + np.arange(3), n),
        N_PARAMS + 3 + np.arange(3 * n),
    ])
    p = sp.csc_matrix((np.ones(rows.size), (rows, cols)), shape=(dim, N_PARAMS + 3 + 3 * n))
    return p, N_PARAMS + 3, 5


def _to_band(d, m, u):
    d = d.tocoo()
    keep = d.col >= d.row
    r, c, v = d.row[keep], d.col[keep], d.data[keep]
    if np.any(c - r > u):
        raise NormalEquationsSingular("normal matrix is not banded in the expected ordering")
    ab = np.zeros((u + 1, m))
    np.add.at(ab, (u + r - c, c), v)
    return ab


def condition_estimate(L):
    """Extreme singular values of ``L`` via eigenvalues of ``L^T L``."""
    nmat = (L.T @ L).tocsc()
    m = nmat.shape[0]
    if m <= 400:
        ev = np.linalg.eigvalsh(nmat.toarray())
        lo, hi = ev[0], ev[-1]
    else:
        v0 = np.ones(m)
        hi = spla.eigsh(nmat, k=1, which="LA", v0=v0, return_eigenvectors=False)[0]
        try:
            lo = spla.eigsh(nmat, k=1, sigma=0.0, which="LM", v0=v0,
                            return_eigenvectors=False)[0]
        except (RuntimeError, spla.ArpackError):
            lo = 0.0
    return float(np.sqrt(max(lo, 0.0))), float(np.sqrt(max(hi, 0.0)))


class _NormalSolver:
    def __init__(self, n, fixed_field=False):
        self.n = n
        self.p, self.n_global, self.band = _reduction(n, fixed_field)

    def solve(self, L, y, damping=0.0):
        """Return ``(dx, schur_inverse)`` for ``(L^T L + damping*diag) dx = -L^T y``.

        ``schur_inverse`` is the 12x12 calibration-parameter block of the
        inverse normal matrix.
        """
        ng = self.n_global
        lp = (L @ self.p).tocsc()
        nmat = (lp.T @ lp).tocsc()
        g = lp.T @ y
        if damping > 0:
            nmat = nmat + damping * sp.diags(nmat.diagonal())
        a = nmat[:ng, :ng].toarray()
        b = nmat[:ng, ng:].toarray()
        d = nmat[ng:, ng:]
        ab = _to_band(d, d.shape[0], self.band)
        rhs = np.column_stack([b.T, g[ng:]])
        try:
            x = sla.solveh_banded(ab, rhs, lower=False, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise NormalEquationsSingular(f"banded Cholesky failed: {exc}") from exc
        s = a - b @ x[:, :ng]
        s = 0.5 * (s + s.T)
        dg = np.sqrt(np.abs(np.diag(s))) + 1e-300
        ev = np.linalg.eigvalsh(s / np.outer(dg, dg))
        if ev[0] <= 1e-13 * max(ev[-1], 1e-300):
            raise NormalEquationsSingular("Schur complement of the global block is singular")
        try:
            cf = sla.cho_factor(s, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise NormalEquationsSingular(f"Schur Cholesky failed: {exc}") from exc
        x1 = sla.cho_solve(cf, g[:ng] - b @ x[:, ng])
        x2 = x[:, ng] - x[:, :ng] @ x1
        dx = -(self.p @ np.concatenate([x1, x2]))
        s_inv = sla.cho_solve(cf, np.eye(ng))[:N_PARAMS, :N_PARAMS]
        return dx, s_inv


def gauss_newton(init: StateVector, meas: MeasurementSet | FactorGraph,
                 cfg: SolverConfig | None = None, graph_config: GraphConfig | None = None,
                 diagnostics: bool = True) -> SolveReport:
    """Iterate Gauss-Newton steps from ``init`` until convergence.

    Raises
    ------
    NormalEquationsSingular
        When the normal equations cannot be factored; carries singular value
        estimates of ``L`` when ``diagnostics`` is on.
    """
    cfg = cfg or SolverConfig()
    graph = meas if isinstance(meas, FactorGraph) else FactorGraph(meas, graph_config)
    fixed = graph.config.fixed_field
    lin = _NormalSolver(graph.n, fixed)

    state = init.copy()
    if fixed:
        state.fields[:] = state.fields.mean(axis=0)
    system = graph.linearize(state)
    cost = system.cost
    history = [cost]
    steps = []
    lam = cfg.damping
    converged, reason = False, "max-iterations"
    s_inv = None
    it = 0
    while it < cfg.max_iterations:
        it += 1
        try:
            dx, s_inv = lin.solve(system.L, system.y, lam)
        except NormalEquationsSingular as exc:
            if diagnostics:
                exc.sigma_min, exc.sigma_max = condition_estimate(system.L)
            raise
        weighted = float(np.linalg.norm(system.L @ dx))
        steps.append(float(np.linalg.norm(dx)))
        candidate = state.retract(dx)
        new_system = graph.linearize(candidate)
        new_cost = new_system.cost

        if lam > 0 and new_cost > cost:
            lam *= 10.0
            history.append(cost)
            if weighted < cfg.step_tolerance:
                converged, reason = True, "step"
                break
            continue
        if lam > 0:
            lam /= 10.0

        decrease = cost - new_cost
        state, system, prev_cost, cost = candidate, new_system, cost, new_cost
        history.append(cost)
        grad = float(np.max(np.abs(system.L.T @ system.y)))
        if weighted < cfg.step_tolerance:
            converged, reason = True, "step"
        elif 0 <= decrease <= cfg.cost_tolerance * prev_cost:
            converged, reason = True, "cost"
        elif grad < cfg.gradient_tolerance:
            converged, reason = True, "gradient"
        if converged:
            break

    try:
        _, s_inv = lin.solve(system.L, system.y, 0.0)
    except NormalEquationsSingular:
        s_inv = None
    sig_lo, sig_hi = condition_estimate(system.L) if diagnostics else (float("nan"),) * 2
    return SolveReport(
        state=state,
        converged=converged,
        iterations=it,
        cost=cost,
        cost_history=history,
        step_norms=steps,
        reason=reason,
        sigma_min=sig_lo,
        sigma_max=sig_hi,
        param_covariance=s_inv,
        gradient_norm=float(np.max(np.abs(system.L.T @ system.y))),
    )


def calibrate(meas: MeasurementSet, graph_config: GraphConfig | None = None,
              cfg: SolverConfig | None = None, diagnostics: bool = False) -> SolveReport:
    """Initialize and solve in one call."""
    return gauss_newton(initialize(meas), meas, cfg, graph_config, diagnostics=diagnostics)
