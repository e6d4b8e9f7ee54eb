"""Vector and scalar magnetometer measurement models.

Units are nanotesla and radians throughout. The vector sensor sees

    m_vec = T (T_si C e + h_hi) + h_vec

and the total-field sensor sees ``|T_si C e + h_hi|``; the scale and
non-orthogonality matrix ``T`` does not act on the scalar channel.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

IDENTITY_TVEC = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])


def cal_matrix(t_vec):
    """Scale/non-orthogonality matrix from ``[kx, ky, kz, alpha, beta, gamma]``."""
    kx, ky, kz, al, be, ga = np.asarray(t_vec, dtype=float)
    return np.array(
        [
            [kx, 0.0, 0.0],
            [np.sin(be) * np.cos(ga), ky * np.cos(be) * np.cos(ga), np.sin(ga)],
            [np.sin(al), 0.0, kz * np.cos(al)],
        ]
    )


def cal_matrix_partials(t_vec):
    """Partial derivatives of :func:`cal_matrix`, shape ``(6, 3, 3)``."""
    kx, ky, kz, al, be, ga = np.asarray(t_vec, dtype=float)
    d = np.zeros((6, 3, 3))
    d[0, 0, 0] = 1.0
    d[1, 1, 1] = np.cos(be) * np.cos(ga)
    d[2, 2, 2] = np.cos(al)
    d[3, 2, 0] = np.cos(al)
    d[3, 2, 2] = -kz * np.sin(al)
    d[4, 1, 0] = np.cos(be) * np.cos(ga)
    d[4, 1, 1] = -ky * np.sin(be) * np.cos(ga)
    d[5, 1, 0] = -np.sin(be) * np.sin(ga)
    d[5, 1, 1] = -ky * np.cos(be) * np.sin(ga)
    d[5, 1, 2] = np.cos(ga)
    return d


@dataclass
class CalParams:
    """Calibration unknowns: hard iron, vector bias and ``T`` in vector form."""

    h_hi: np.ndarray = field(default_factory=lambda: np.zeros(3))
    h_vec: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t_vec: np.ndarray = field(default_factory=lambda: IDENTITY_TVEC.copy())

    def __post_init__(self):
        self.h_hi = np.asarray(self.h_hi, dtype=float).reshape(3)
        self.h_vec = np.asarray(self.h_vec, dtype=float).reshape(3)
        self.t_vec = np.asarray(self.t_vec, dtype=float).reshape(6)

    @classmethod
    def identity(cls):
        return cls()

    def matrix(self):
        return cal_matrix(self.t_vec)

    def is_valid(self):
        return bool(np.all(self.t_vec[:3] > 0) and np.all(np.abs(self.t_vec[3:]) < np.pi / 4))

    def as_vector(self):
        return np.concatenate([self.h_hi, self.h_vec, self.t_vec])

    @classmethod
    def from_vector(cls, x):
        x = np.asarray(x, dtype=float)
        return cls(x[0:3], x[3:6], x[6:12])

    def to_dict(self):
        return {
            "h-hi": self.h_hi.tolist(),
            "h-vec": self.h_vec.tolist(),
            "t-vec": self.t_vec.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["h-hi"], d["h-vec"], d["t-vec"])


def soft_iron_matrix(a, b, c, d, e, f):
    """Symmetric soft-iron matrix from its six unique entries."""
    return np.array([[a, b, c], [b, d, e], [c, e, f]], dtype=float)


def is_soft_iron(si):
    si = np.asarray(si, dtype=float)
    return bool(np.allclose(si, si.T, rtol=0, atol=1e-15) and np.all(np.linalg.eigvalsh(si) > 0))


def body_field(si, c_nb, e):
    """Distorted body-frame field ``T_si C e`` for a single step or a batch."""
    ce = np.einsum("...ij,...j->...i", np.asarray(c_nb, float), np.asarray(e, float))
    return np.einsum("ij,...j->...i", np.asarray(si, float), ce)


def predict_vector(p: CalParams, si, c_nb, e):
    """Noise-free vector magnetometer output, nT."""
    v = body_field(si, c_nb, e) + p.h_hi
    return np.einsum("ij,...j->...i", p.matrix(), v) + p.h_vec


def predict_scalar(si, c_nb, e, h_hi):
    """Noise-free total-field magnetometer output, nT."""
    return np.linalg.norm(body_field(si, c_nb, e) + np.asarray(h_hi, float), axis=-1)
