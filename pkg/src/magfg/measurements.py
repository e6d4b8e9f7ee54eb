"""Measurement containers shared by the simulator, estimators and log I/O."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionMismatchError
from .geometry import dcm_from_euler


@dataclass(frozen=True)
class NoiseSpec:
    """Sensor noise levels.

    Gyro parameters follow the IMU datasheet meaning: in-run bias
    instability in rad/s (modelled as a first-order Gauss-Markov process with
    correlation time ``gyro_bias_tau``) and angle random walk in rad/sqrt(s).
    ``field_q`` is the external-field random-walk intensity in nT/sqrt(hr).
    """

    sigma_vec: float = 5.0
    sigma_scalar: float = 1.0
    gyro_bias_instability: float = 3.87e-5
    gyro_arw: float = 9.89e-5
    gyro_bias_tau: float = 1000.0
    sigma_attitude: float = 0.043
    field_q: float = 0.0

    def __post_init__(self):
        for name in ("sigma_vec", "sigma_scalar", "gyro_bias_instability", "gyro_arw",
                     "sigma_attitude", "field_q"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.gyro_bias_tau <= 0:
            raise ValueError("gyro_bias_tau must be positive")

    @classmethod
    def zero(cls):
        return cls(0.0, 0.0, 0.0, 0.0, 1000.0, 0.0, 0.0)

    def gyro_step_sigma(self, dt):
        """Per-axis std of one gyro increment over ``dt`` seconds, rad."""
        return float(np.sqrt(self.gyro_arw**2 * dt + (self.gyro_bias_instability * dt) ** 2))

    def covariances(self, dt):
        """Per-channel measurement covariances used to weight the factors."""
        eye = np.eye(3)
        return {
            "cov_vec": self.sigma_vec**2 * eye,
            "cov_scalar": float(self.sigma_scalar**2),
            "cov_gyro": self.gyro_step_sigma(dt) ** 2 * eye,
            "cov_rpy": self.sigma_attitude**2 * eye,
        }


@dataclass
class MeasurementSet:
    """Time-indexed sensor data for ``n = k + 1`` steps.

    ``gyro[i]`` is the body-frame incremental rotation from step ``i-1`` to
    step ``i``; ``gyro[0]`` is unused and kept at zero.
    """

    t: np.ndarray
    mag_vec: np.ndarray
    mag_scalar: np.ndarray
    gyro: np.ndarray
    rpy: np.ndarray
    cov_vec: np.ndarray = field(default_factory=lambda: 25.0 * np.eye(3))
    cov_scalar: float = 1.0
    cov_gyro: np.ndarray = field(default_factory=lambda: 1e-9 * np.eye(3))
    cov_rpy: np.ndarray = field(default_factory=lambda: 0.043**2 * np.eye(3))

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        n = self.t.size
        self.mag_vec = np.asarray(self.mag_vec, dtype=float).reshape(n, 3)
        self.mag_scalar = np.asarray(self.mag_scalar, dtype=float).reshape(n)
        self.gyro = np.asarray(self.gyro, dtype=float).reshape(n, 3)
        self.rpy = np.asarray(self.rpy, dtype=float).reshape(n, 3)
        self.cov_vec = np.asarray(self.cov_vec, dtype=float).reshape(3, 3)
        self.cov_scalar = float(self.cov_scalar)
        self.cov_gyro = np.asarray(self.cov_gyro, dtype=float).reshape(3, 3)
        self.cov_rpy = np.asarray(self.cov_rpy, dtype=float).reshape(3, 3)
        if n == 0:
            raise DimensionMismatchError("measurement set is empty")

    @property
    def n(self):
        return self.t.size

    @property
    def k(self):
        return self.t.size - 1

    @property
    def dt(self):
        return float(np.median(np.diff(self.t))) if self.n > 1 else 0.0

    def attitudes(self):
        return dcm_from_euler(self.rpy)

    def with_noise(self, noise: NoiseSpec):
        """Copy with covariances replaced by those implied by ``noise``."""
        return replace(self, **noise.covariances(self.dt))

    def equals(self, other, atol=0.0):
        arrays = ("t", "mag_vec", "mag_scalar", "gyro", "rpy",
                  "cov_vec", "cov_scalar", "cov_gyro", "cov_rpy")
        return all(
            np.allclose(getattr(self, a), getattr(other, a), rtol=0.0, atol=atol) for a in arrays
        )
