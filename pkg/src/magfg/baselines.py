"""Reference calibrators used for comparison: TWOSTEP and Tolles-Lawson.

Both work from the magnetometer channels alone and need no attitude.

TWOSTEP (Alonso and Shuster) estimates a constant vector offset from the
scalar-squared residuals ``|m_k|^2 - |H|^2``, given the magnitude ``|H|`` of
the reference field. Only the offset is estimated here.

Tolles-Lawson regresses the band-passed total-field channel on 18 terms
built from the direction cosines of the vector channel: 3 permanent,
6 induced and 9 eddy-current terms.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .errors import DimensionMismatchError, IllConditionedError, RankDeficientError
from .measurements import MeasurementSet

TWOSTEP_MAX_CONDITION = 1e10
TL_MIN_SINGULAR_RATIO = 1e-12


@dataclass
class TwoStepResult:
    """Offset estimate (nT) from TWOSTEP with its solve diagnostics."""

    bias: np.ndarray
    iterations: int
    converged: bool
    centered_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    cost_history: list = field(default_factory=list)
    fisher: np.ndarray | None = None


def _twostep_cost(b, bvec, z, mu, w):
    r = z - 2.0 * bvec @ b + b @ b - mu
    return 0.5 * float(np.sum(w * r * r)), r


def twostep_calibrate(meas: MeasurementSet, e_magnitude, max_iterations=50,
                      tolerance=1e-12) -> TwoStepResult:
    """Attitude-independent offset estimate.

    Parameters
    ----------
    meas : MeasurementSet
        Only ``mag_vec`` and ``cov_vec`` are used.
    e_magnitude : float or array_like
        Magnitude of the reference field, nT; a scalar or one per sample.
    max_iterations : int
        Limit on second-step iterations.
    tolerance : float
        Stop when the Fisher-weighted squared step falls below this.

    Returns
    -------
    TwoStepResult

    Raises
    ------
    IllConditionedError
        If the centered design has condition number above 1e10, i.e. the
        data lack attitude diversity.
    """
    bvec = np.asarray(meas.mag_vec, dtype=float)
    n = bvec.shape[0]
    if n < 12:
        raise DimensionMismatchError("TWOSTEP needs at least 12 vector samples")
    h = np.broadcast_to(np.asarray(e_magnitude, dtype=float), (n,))
    cov = meas.cov_vec
    z = np.sum(bvec * bvec, axis=1) - h * h
    mu = -np.trace(cov) * np.ones(n)
    tr2 = float(np.trace(cov @ cov))

    # first step: centered linear estimate with weights from b = 0
    sig2 = 4.0 * np.einsum("ki,ij,kj->k", bvec, cov, bvec) + 2.0 * tr2
    w = 1.0 / sig2
    wbar = w / w.sum()
    zc = z - wbar @ z
    muc = mu - wbar @ mu
    bc = bvec - wbar @ bvec
    f_c = 4.0 * np.einsum("k,ki,kj->ij", w, bc, bc)
    cond = np.linalg.cond(f_c)
    if not np.isfinite(cond) or cond > TWOSTEP_MAX_CONDITION:
        raise IllConditionedError(
            f"centered TWOSTEP design is ill-conditioned (cond = {cond:.3g})"
        )
    b_star = np.linalg.solve(f_c, 2.0 * np.einsum("k,k,ki->i", w, zc - muc, bc))

    # second step: Gauss-Newton on the full (uncentered) likelihood, weights
    # frozen at the centered estimate so the cost is a fixed function of b
    d = bvec - b_star
    sig2 = 4.0 * np.einsum("ki,ij,kj->k", d, cov, d) + 2.0 * tr2
    w = 1.0 / sig2
    b = b_star.copy()
    cost, r = _twostep_cost(b, bvec, z, mu, w)
    history = [cost]
    converged, it = False, 0
    fisher = None
    while it < max_iterations:
        it += 1
        d = bvec - b
        fisher = 4.0 * np.einsum("k,ki,kj->ij", w, d, d)
        grad = -2.0 * np.einsum("k,k,ki->i", w, r, d)
        step = -np.linalg.solve(fisher, grad)
        size = float(step @ fisher @ step)
        if size < tolerance:
            converged = True
            break
        t = 1.0
        while t > 1e-10:
            new_cost, new_r = _twostep_cost(b + t * step, bvec, z, mu, w)
            if new_cost < cost:
                break
            t *= 0.5
        else:
            converged = True  # no descent left at machine precision
            break
        b = b + t * step
        cost, r = new_cost, new_r
        history.append(cost)
    return TwoStepResult(b, it, converged, b_star, history, fisher)


@dataclass(frozen=True)
class FilterSpec:
    """Butterworth band-pass applied to regressors and the scalar channel."""

    low: float = 0.1
    high: float = 1.0
    order: int = 4
    rate: float = 10.0

    def __post_init__(self):
        if not 0.0 < self.low < self.high < 0.5 * self.rate:
            raise ValueError("band edges must satisfy 0 < low < high < rate/2")
        if self.order < 1:
            raise ValueError("filter order must be >= 1")

    def sos(self):
        return signal.butter(self.order, [self.low, self.high], btype="bandpass",
                             fs=self.rate, output="sos")

    def apply(self, x):
        return signal.sosfiltfilt(self.sos(), x, axis=0)


TL_GROUPS = ("permanent", "induced", "eddy")
_IND_PAIRS = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]
_EDDY_PAIRS = [(i, j) for i in range(3) for j in range(3)]


def tolles_lawson_terms(mag_vec, dt, groups=TL_GROUPS):
    """Tolles-Lawson regressor matrix from vector magnetometer samples.

    Columns are ordered permanent (``c_x, c_y, c_z``), induced
    (``B c_i c_j`` for ``i <= j``) and eddy (``B c_i dc_j/dt``), restricted
    to the requested groups. ``B`` is the vector-channel magnitude.
    """
    mag_vec = np.asarray(mag_vec, dtype=float)
    bt = np.linalg.norm(mag_vec, axis=1)
    if np.any(bt <= 0):
        raise RankDeficientError("zero vector-field sample; direction cosines undefined")
    c = mag_vec / bt[:, None]
    cols = []
    if "permanent" in groups:
        cols += [c[:, i] for i in range(3)]
    if "induced" in groups:
        cols += [bt * c[:, i] * c[:, j] for i, j in _IND_PAIRS]
    if "eddy" in groups:
        dc = np.gradient(c, dt, axis=0)
        cols += [bt * c[:, i] * dc[:, j] for i, j in _EDDY_PAIRS]
    return np.column_stack(cols)


@dataclass
class TollesLawsonCoeffs:
    """Fitted Tolles-Lawson model.

    ``coefficients`` holds the enabled groups in the order permanent,
    induced, eddy; the permanent terms are in nT and serve as the
    hard-iron estimate.
    """

    coefficients: np.ndarray
    groups: tuple = TL_GROUPS
    bandpass: FilterSpec = field(default_factory=FilterSpec)
    singular_ratio: float = float("nan")

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        expected = sum({"permanent": 3, "induced": 6, "eddy": 9}[g] for g in self.groups)
        if self.coefficients.size != expected:
            raise DimensionMismatchError(
                f"{self.coefficients.size} coefficients for groups {self.groups}"
            )

    def _slice(self, group):
        start = 0
        for g in self.groups:
            size = {"permanent": 3, "induced": 6, "eddy": 9}[g]
            if g == group:
                return self.coefficients[start:start + size]
            start += size
        return None

    @property
    def permanent(self):
        p = self._slice("permanent")
        return np.zeros(3) if p is None else p

    @property
    def induced(self):
        return self._slice("induced")

    @property
    def eddy(self):
        return self._slice("eddy")

    def interference(self, mag_vec, dt):
        """Modelled platform field along the total-field direction, nT."""
        return tolles_lawson_terms(mag_vec, dt, self.groups) @ self.coefficients

    def compensate(self, mag_scalar, mag_vec, dt):
        """Total-field channel with the modelled interference removed."""
        return np.asarray(mag_scalar, dtype=float) - self.interference(mag_vec, dt)


def tolles_lawson_calibrate(meas: MeasurementSet, bandpass: FilterSpec | None = None,
                            groups=TL_GROUPS, ridge=0.0) -> TollesLawsonCoeffs:
    """Fit Tolles-Lawson coefficients by band-passed linear least squares.

    Parameters
    ----------
    meas : MeasurementSet
        Uses ``mag_vec``, ``mag_scalar`` and the sample interval.
    bandpass : FilterSpec, optional
        Defaults to a 4th-order 0.1-1.0 Hz Butterworth at the data rate.
    groups : tuple of str
        Which of ``"permanent"``, ``"induced"``, ``"eddy"`` to estimate.
    ridge : float
        Optional Tikhonov weight on the induced and eddy terms, relative to
        the largest squared singular value of the column-normalized
        filtered design; 0 gives plain least squares.

    Raises
    ------
    RankDeficientError
        If the filtered design has ``s_min / s_max < 1e-12`` and no ridge
        is applied.

    Notes
    -----
    When the vector channel sees the same platform field as the scalar
    channel, ``B (c_x^2 + c_y^2 + c_z^2) = B`` makes the diagonal induced
    terms nearly interchangeable with the permanent ones. Noise usually
    keeps the design full rank, but noiseless data may need ``ridge > 0``
    or ``groups=("permanent",)``.
    """
    dt = meas.dt
    if dt <= 0:
        raise DimensionMismatchError("Tolles-Lawson needs at least two samples")
    if bandpass is None:
        bandpass = FilterSpec(rate=1.0 / dt)
    groups = tuple(g for g in TL_GROUPS if g in groups)
    if not groups:
        raise ValueError("at least one Tolles-Lawson group must be enabled")
    a = tolles_lawson_terms(meas.mag_vec, dt, groups)
    if a.shape[0] <= 3 * (bandpass.order * 2 + 1) or a.shape[0] < a.shape[1]:
        raise RankDeficientError("too few samples for the band-pass fit")
    af = bandpass.apply(a)
    yf = bandpass.apply(np.asarray(meas.mag_scalar, dtype=float))
    s = np.linalg.svd(af, compute_uv=False)
    ratio = float(s[-1] / s[0]) if s[0] > 0 else 0.0
    if ridge <= 0 and ratio < TL_MIN_SINGULAR_RATIO:
        raise RankDeficientError(
            f"Tolles-Lawson design is rank deficient (s_min/s_max = {ratio:.3g})"
        )
    if ridge > 0:
        # standardized columns; only induced and eddy terms are penalized
        scale = np.linalg.norm(af, axis=0)
        scale[scale == 0] = 1.0
        an = af / scale
        pen = np.ones(an.shape[1])
        if "permanent" in groups:
            pen[:3] = 0.0
        lam = ridge * float(np.linalg.norm(an, 2)) ** 2
        coef = np.linalg.solve(an.T @ an + lam * np.diag(pen), an.T @ yf) / scale
    else:
        coef = np.linalg.lstsq(af, yf, rcond=None)[0]
    return TollesLawsonCoeffs(coef, groups, bandpass, ratio)
