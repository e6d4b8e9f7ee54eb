"""Rotation representations: DCMs, rotation vectors and roll/pitch/yaw.

Conventions
-----------
``C`` denotes a navigation-to-body direction cosine matrix: ``v_b = C @ v_n``
with NED navigation axes. Rotation vectors describe the *attitude* (the
rotation carrying the navigation axes onto the body axes), so that

    dcm_from_rotvec(v) == expm(-skew(v)) == expm(skew(v)).T

which makes ``dcm_from_rotvec([0, 0, psi]) == dcm_from_euler([0, 0, psi])`` and
makes :func:`relative_rotvec` return body-frame gyro increments directly.

The private helpers ``so3_exp``/``so3_log`` are the plain matrix exponential
and logarithm of ``skew(w)``; the factor graph uses them for its local
perturbations ``C <- C @ so3_exp(delta)``.

All functions broadcast over leading dimensions.
"""
from __future__ import annotations

import numpy as np

from .errors import GimbalLockError

SMALL_ANGLE = 1e-7
NEAR_PI = 1e-6
GIMBAL_MARGIN = 1e-6


def skew(v):
    """Cross-product matrix: ``skew(a) @ b == np.cross(a, b)``."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _vee_antisym(r):
    return np.stack(
        [
            r[..., 2, 1] - r[..., 1, 2],
            r[..., 0, 2] - r[..., 2, 0],
            r[..., 1, 0] - r[..., 0, 1],
        ],
        axis=-1,
    )


def so3_exp(w):
    """Matrix exponential of ``skew(w)`` (Rodrigues' formula)."""
    w = np.asarray(w, dtype=float)
    theta2 = np.sum(w * w, axis=-1)
    theta = np.sqrt(theta2)
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    k = skew(w)
    return np.eye(3) + a[..., None, None] * k + b[..., None, None] * (k @ k)


def _canonical_sign(v):
    # at an angle of exactly pi, +v and -v describe the same rotation
    v = np.array(v, dtype=float)
    flat = v.reshape(-1, 3)
    for row in flat:
        nz = np.flatnonzero(np.abs(row) > 0.0)
        if nz.size and row[nz[0]] < 0.0:
            row *= -1.0
    return flat.reshape(v.shape)


def so3_log(r):
    """Inverse of :func:`so3_exp`; returned angle lies in ``[0, pi]``."""
    r = np.asarray(r, dtype=float)
    w = _vee_antisym(r)
    s = 0.5 * np.linalg.norm(w, axis=-1)
    c = 0.5 * (np.trace(r, axis1=-2, axis2=-1) - 1.0)
    theta = np.arctan2(s, c)

    small = theta < SMALL_ANGLE
    safe_s = np.where(small | (s == 0.0), 1.0, s)
    factor = np.where(small, 0.5 * (1.0 + theta * theta / 6.0), 0.5 * theta / safe_s)
    out = factor[..., None] * w

    near_pi = theta > np.pi - NEAR_PI
    if np.any(near_pi):
        sym = 0.5 * (r[near_pi] + np.swapaxes(r[near_pi], -1, -2))
        cn = c[near_pi]
        aat = (sym - cn[:, None, None] * np.eye(3)) / (1.0 - cn)[:, None, None]
        diag = np.diagonal(aat, axis1=-2, axis2=-1)
        idx = np.argmax(diag, axis=-1)
        cols = aat[np.arange(len(idx)), :, idx]
        axis = cols / np.sqrt(np.maximum(diag[np.arange(len(idx)), idx], 1e-300))[:, None]
        axis /= np.linalg.norm(axis, axis=-1, keepdims=True)
        wn = w[near_pi]
        dot = np.sum(axis * wn, axis=-1)
        axis = np.where(dot[:, None] < 0.0, -axis, axis)
        exact = np.linalg.norm(wn, axis=-1) == 0.0
        if np.any(exact):
            axis[exact] = _canonical_sign(axis[exact])
        out[near_pi] = theta[near_pi][:, None] * axis
    return out


def right_jacobian_inv(w):
    """Inverse right Jacobian of SO(3): ``log(exp(w) exp(d)) ~ w + Jr^-1(w) d``."""
    w = np.asarray(w, dtype=float)
    theta2 = np.sum(w * w, axis=-1)
    theta = np.sqrt(theta2)
    small = theta < 1e-4
    safe = np.where(small, 1.0, theta)
    coef = np.where(
        small,
        1.0 / 12.0 + theta2 / 720.0,
        1.0 / (safe * safe) - (1.0 + np.cos(safe)) / (2.0 * safe * np.sin(safe)),
    )
    k = skew(w)
    return np.eye(3) + 0.5 * k + coef[..., None, None] * (k @ k)


def dcm_from_rotvec(v):
    """Navigation-to-body DCM for the attitude rotation vector ``v`` (radians)."""
    return so3_exp(-np.asarray(v, dtype=float))


def rotvec_from_dcm(c):
    """Rotation vector of a DCM, angle in ``[0, pi]``.

    At exactly ``pi`` the sign is fixed so the first nonzero component is
    positive.
    """
    v = -so3_log(c)
    theta = np.linalg.norm(v, axis=-1)
    at_pi = np.abs(theta - np.pi) < NEAR_PI
    if np.any(at_pi):
        v[at_pi] = _canonical_sign(v[at_pi])
    return v


def relative_rotvec(c_prev, c_curr):
    """Body-frame incremental rotation taking ``c_prev`` to ``c_curr``.

    Composition: ``dcm_from_rotvec(w) @ c_prev == c_curr``.
    """
    return rotvec_from_dcm(np.asarray(c_curr) @ np.swapaxes(np.asarray(c_prev), -1, -2))


def dcm_from_euler(rpy):
    """Navigation-to-body DCM ``Rx(roll) @ Ry(pitch) @ Rz(yaw)`` (3-2-1 sequence)."""
    rpy = np.asarray(rpy, dtype=float)
    sr, cr = np.sin(rpy[..., 0]), np.cos(rpy[..., 0])
    sp, cp = np.sin(rpy[..., 1]), np.cos(rpy[..., 1])
    sy, cy = np.sin(rpy[..., 2]), np.cos(rpy[..., 2])
    c = np.empty(rpy.shape[:-1] + (3, 3))
    c[..., 0, 0] = cp * cy
    c[..., 0, 1] = cp * sy
    c[..., 0, 2] = -sp
    c[..., 1, 0] = sr * sp * cy - cr * sy
    c[..., 1, 1] = sr * sp * sy + cr * cy
    c[..., 1, 2] = sr * cp
    c[..., 2, 0] = cr * sp * cy + sr * sy
    c[..., 2, 1] = cr * sp * sy - sr * cy
    c[..., 2, 2] = cr * cp
    return c


def euler_from_dcm(c):
    """Roll, pitch, yaw of a navigation-to-body DCM.

    Raises
    ------
    GimbalLockError
        If any pitch lies within ``GIMBAL_MARGIN`` of +/- pi/2.
    """
    c = np.asarray(c, dtype=float)
    pitch = np.arctan2(-c[..., 0, 2], np.hypot(c[..., 0, 0], c[..., 0, 1]))
    if np.any(np.pi / 2 - np.abs(pitch) < GIMBAL_MARGIN):
        raise GimbalLockError("pitch too close to +/-pi/2 for a unique roll/yaw split")
    roll = np.arctan2(c[..., 1, 2], c[..., 2, 2])
    yaw = np.arctan2(c[..., 0, 1], c[..., 0, 0])
    return np.stack([roll, pitch, yaw], axis=-1)


def wrap_angle(a):
    """Wrap angles into ``(-pi, pi]``."""
    a = np.asarray(a, dtype=float)
    out = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    return np.where(out == -np.pi, np.pi, out)


def is_dcm(c, tol=1e-9):
    c = np.asarray(c, dtype=float)
    ctc = np.swapaxes(c, -1, -2) @ c
    return bool(
        np.all(np.abs(ctc - np.eye(3)) < tol) and np.all(np.abs(np.linalg.det(c) - 1.0) < tol)
    )
