"""Synthetic calibration data: attitude profile, external field, sensor noise."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import dcm_from_euler, relative_rotvec, wrap_angle
from .magmodel import CalParams, predict_scalar, predict_vector
from .measurements import MeasurementSet, NoiseSpec


@dataclass(frozen=True)
class ProfileSpec:
    """Doublet calibration profile flown on four headings.

    Each heading segment is: dwell, pitch doublets, gap, roll doublets, gap,
    yaw doublets, dwell, with each doublet flown ``repeats`` times back to
    back. Consecutive headings are joined by a raised-cosine turn of ``turn``
    seconds. Durations are in seconds, angles in radians.
    """

    headings: tuple = (0.0, 0.5 * np.pi, np.pi, -0.5 * np.pi)
    amplitude: float = 0.35
    period: float = 4.0
    dwell: float = 2.0
    gap: float = 1.0
    turn: float = 6.0
    repeats: int = 2
    rate: float = 10.0
    heading_jitter: float = 0.05

    def __post_init__(self):
        if len(self.headings) != 4:
            raise ValueError("profile needs exactly four headings")
        if not 0.0 <= self.amplitude <= np.pi / 4:
            raise ValueError("doublet amplitude must lie in [0, pi/4]")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.rate <= 0 or self.period <= 0:
            raise ValueError("rate and period must be positive")

    @property
    def dt(self):
        return 1.0 / self.rate


@dataclass(frozen=True)
class TruthSpec:
    """Distributions of the simulated platform and field (nT, rad)."""

    field_magnitude: float = 50000.0
    hard_iron_magnitude: float = 5000.0
    vector_bias_magnitude: float = 1000.0
    scale_sigma: float = 0.1
    ortho_sigma: float = 0.01
    soft_iron_sigma: float = 1e-5


@dataclass
class TruthRecord:
    t: np.ndarray
    rpy: np.ndarray
    attitudes: np.ndarray
    fields: np.ndarray
    params: CalParams
    soft_iron: np.ndarray = field(default_factory=lambda: np.eye(3))

    @property
    def n(self):
        return self.t.size

    def to_dict(self):
        return {
            "params": self.params.to_dict(),
            "soft-iron": self.soft_iron.tolist(),
            "t": self.t.tolist(),
            "rpy": self.rpy.tolist(),
            "fields": self.fields.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        rpy = np.asarray(d["rpy"], dtype=float)
        return cls(
            t=np.asarray(d["t"], dtype=float),
            rpy=rpy,
            attitudes=dcm_from_euler(rpy),
            fields=np.asarray(d["fields"], dtype=float),
            params=CalParams.from_dict(d["params"]),
            soft_iron=np.asarray(d["soft-iron"], dtype=float),
        )


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _samples(seconds, rate):
    return int(round(seconds * rate))


def _doublet(n_period, amplitude):
    # +A lobe then -A lobe, each a full raised-cosine bump
    half = n_period // 2
    s = np.arange(half) / half
    lobe = 0.5 * (1.0 - np.cos(2.0 * np.pi * s))
    return amplitude * np.concatenate([lobe, -lobe, np.zeros(n_period - 2 * half)])


def generate_profile(spec: ProfileSpec, seed=None):
    """Roll/pitch/yaw sequence ``(n, 3)`` for the doublet profile.

    The seed only perturbs the four heading set-points by
    ``N(0, heading_jitter**2)``; the sequence is otherwise fixed.
    """
    rng = _rng(seed)
    headings = np.asarray(spec.headings, float) + spec.heading_jitter * rng.standard_normal(4)
    r = spec.rate
    n_dwell, n_gap = _samples(spec.dwell, r), _samples(spec.gap, r)
    n_per, n_turn = _samples(spec.period, r), _samples(spec.turn, r)
    doublet = _doublet(n_per, spec.amplitude)

    chunks = []
    for i, psi in enumerate(headings):
        blocks = []

        def hold(m):
            blocks.append(np.zeros((m, 3)))

        hold(n_dwell)
        for axis in (1, 0, 2):  # pitch, roll, yaw
            b = np.zeros((n_per * spec.repeats, 3))
            b[:, axis] = np.tile(doublet, spec.repeats)
            blocks.append(b)
            hold(n_gap if axis != 2 else n_dwell)
        seg = np.concatenate(blocks)
        seg[:, 2] += psi
        chunks.append(seg)
        if i < 3 and n_turn > 0:
            s = np.arange(n_turn) / n_turn
            turn = np.zeros((n_turn, 3))
            turn[:, 2] = psi + (headings[i + 1] - psi) * 0.5 * (1.0 - np.cos(np.pi * s))
            chunks.append(turn)
    rpy = np.concatenate(chunks)
    rpy[:, 2] = wrap_angle(rpy[:, 2])
    return rpy


def random_unit_vector(rng):
    v = rng.standard_normal(3)
    return v / np.linalg.norm(v)


def generate_field(n, e0_magnitude=50000.0, q=0.0, dt=0.1, seed=None):
    """External field in the navigation frame, ``(n, 3)`` nT.

    Starts at ``e0_magnitude`` with uniformly random direction and then
    random-walks with per-axis increment variance ``q**2 * dt / 3600``
    (``q`` in nT/sqrt(hr)).
    """
    if e0_magnitude <= 0:
        raise ValueError("e0_magnitude must be positive")
    rng = _rng(seed)
    e0 = e0_magnitude * random_unit_vector(rng)
    steps = rng.standard_normal((n - 1, 3)) * (q * np.sqrt(dt / 3600.0))
    return e0 + np.concatenate([np.zeros((1, 3)), np.cumsum(steps, axis=0)])


def random_soft_iron(rng, sigma):
    iu = np.triu_indices(3)
    while True:
        p = np.zeros((3, 3))
        p[iu] = sigma * rng.standard_normal(6)
        si = np.eye(3) + p + np.triu(p, 1).T
        if np.all(np.linalg.eigvalsh(si) > 0):
            return si


def random_truth_params(spec: TruthSpec, seed=None, hard_iron_magnitude=None):
    """Draw platform calibration truth and soft iron.

    The hard-iron direction is drawn independently of its magnitude so runs
    sharing a seed differ only in magnitude.
    """
    rng = _rng(seed)
    mag = spec.hard_iron_magnitude if hard_iron_magnitude is None else hard_iron_magnitude
    h_hi = mag * random_unit_vector(rng)
    h_vec = spec.vector_bias_magnitude * random_unit_vector(rng)
    while True:
        k = 1.0 + spec.scale_sigma * rng.standard_normal(3)
        ang = spec.ortho_sigma * rng.standard_normal(3)
        if np.all(k > 0) and np.all(np.abs(ang) < np.pi / 4):
            break
    si = random_soft_iron(rng, spec.soft_iron_sigma)
    return CalParams(h_hi, h_vec, np.concatenate([k, ang])), si


def make_truth(profile: ProfileSpec, truth_spec: TruthSpec, q=0.0, seed=None,
               hard_iron_magnitude=None):
    """Complete truth record from a seed (profile, platform, field)."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    s_profile, s_params, s_field = ss.spawn(3)
    rpy = generate_profile(profile, s_profile)
    n = rpy.shape[0]
    params, si = random_truth_params(truth_spec, s_params, hard_iron_magnitude)
    fields = generate_field(n, truth_spec.field_magnitude, q, profile.dt, s_field)
    t = np.arange(n) * profile.dt
    return TruthRecord(t, rpy, dcm_from_euler(rpy), fields, params, si)


def synthesize_measurements(truth: TruthRecord, noise: NoiseSpec, seed=None,
                            weighting: NoiseSpec | None = None):
    """Noisy sensor data for a truth record.

    ``noise`` sets what is added; ``weighting`` (default: the default
    :class:`NoiseSpec`) sets the covariances attached for the estimator, so
    noiseless data still carries usable weights.
    """
    rng = _rng(seed)
    n = truth.n
    dt = float(truth.t[1] - truth.t[0]) if n > 1 else 0.1
    p, si = truth.params, truth.soft_iron

    vec = predict_vector(p, si, truth.attitudes, truth.fields)
    scal = predict_scalar(si, truth.attitudes, truth.fields, p.h_hi)
    vec = vec + noise.sigma_vec * rng.standard_normal((n, 3))
    scal = scal + noise.sigma_scalar * rng.standard_normal(n)

    gyro = np.zeros((n, 3))
    if n > 1:
        gyro[1:] = relative_rotvec(truth.attitudes[:-1], truth.attitudes[1:])
        phi = np.exp(-dt / noise.gyro_bias_tau)
        bias = noise.gyro_bias_instability * rng.standard_normal(3)
        drive = noise.gyro_bias_instability * np.sqrt(1.0 - phi * phi)
        white = noise.gyro_arw * np.sqrt(dt) * rng.standard_normal((n - 1, 3))
        kicks = rng.standard_normal((n - 1, 3))
        for i in range(n - 1):
            bias = phi * bias + drive * kicks[i]
            gyro[i + 1] += bias * dt + white[i]

    rpy = truth.rpy + noise.sigma_attitude * rng.standard_normal((n, 3))
    rpy[:, 2] = wrap_angle(rpy[:, 2])

    w = weighting if weighting is not None else NoiseSpec()
    return MeasurementSet(truth.t.copy(), vec, scal, gyro, rpy, **w.covariances(dt))


def simulate(profile: ProfileSpec | None = None, truth_spec: TruthSpec | None = None,
             noise: NoiseSpec | None = None, seed=None, hard_iron_magnitude=None,
             weighting: NoiseSpec | None = None):
    """Truth and measurements for one seeded run.

    The field random-walk intensity is taken from ``noise.field_q``.
    """
    profile = profile or ProfileSpec()
    truth_spec = truth_spec or TruthSpec()
    noise = noise if noise is not None else NoiseSpec()
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    s_truth, s_noise = ss.spawn(2)
    truth = make_truth(profile, truth_spec, noise.field_q, s_truth, hard_iron_magnitude)
    if weighting is None:
        weighting = replace(NoiseSpec(), field_q=noise.field_q)
    meas = synthesize_measurements(truth, noise, s_noise, weighting)
    return truth, meas
