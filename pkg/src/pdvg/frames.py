"""Rotation, quaternion, and frame utilities (NED navigation frame, Z-Y-X Euler).

Conventions:
    - Euler angles theta = [roll phi, pitch theta, yaw psi], radians.
    - T_n^b = R_x(phi) @ R_y(theta) @ R_z(psi) rotates NED vectors into the body
      frame (yaw-pitch-roll order).
    - Quaternions are scalar-first [q0, q1, q2, q3] and represent the body-to-NED
      rotation: quat_to_dcm(q) == T_b^n.
"""

from __future__ import annotations

import numpy as np

GRAVITY = 9.80665  # m/s^2, NED gravity vector is [0, 0, +GRAVITY]


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix [v]x with [v]x @ w == cross(v, w)."""
    x, y, z = v
    return np.array([[0.0, -z, y],
                     [z, 0.0, -x],
                     [-y, x, 0.0]])


def rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0],
                     [0.0, c, s],
                     [0.0, -s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, -s],
                     [0.0, 1.0, 0.0],
                     [s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, s, 0.0],
                     [-s, c, 0.0],
                     [0.0, 0.0, 1.0]])


def dcm_ned_to_body(theta: np.ndarray) -> np.ndarray:
    """T_n^b for Euler angles [roll, pitch, yaw]."""
    phi, th, psi = theta
    return rot_x(phi) @ rot_y(th) @ rot_z(psi)


def dcm_body_to_ned(theta: np.ndarray) -> np.ndarray:
    """T_b^n = (T_n^b)^T."""
    return dcm_ned_to_body(theta).T


def _drot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[0.0, 0.0, 0.0],
                     [0.0, -s, c],
                     [0.0, -c, -s]])


def _drot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[-s, 0.0, -c],
                     [0.0, 0.0, 0.0],
                     [c, 0.0, -s]])


def _drot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[-s, c, 0.0],
                     [-c, -s, 0.0],
                     [0.0, 0.0, 0.0]])


def dcm_ned_to_body_partials(theta: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact partial derivatives of T_n^b with respect to roll, pitch, yaw."""
    phi, th, psi = theta
    rx, ry, rz = rot_x(phi), rot_y(th), rot_z(psi)
    return (_drot_x(phi) @ ry @ rz,
            rx @ _drot_y(th) @ rz,
            rx @ ry @ _drot_z(psi))


def wrap_angle(a):
    """Wrap angle(s) to [-pi, pi)."""
    return np.mod(np.asarray(a) + np.pi, 2.0 * np.pi) - np.pi


# ---------------------------------------------------------------------------
# Quaternions (scalar first, body-to-NED)
# ---------------------------------------------------------------------------

def quat_multiply(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Hamilton product p (x) q; composes rotations q then p."""
    p0, p1, p2, p3 = p
    q0, q1, q2, q3 = q
    return np.array([
        p0 * q0 - p1 * q1 - p2 * q2 - p3 * q3,
        p0 * q1 + p1 * q0 + p2 * q3 - p3 * q2,
        p0 * q2 - p1 * q3 + p2 * q0 + p3 * q1,
        p0 * q3 + p1 * q2 - p2 * q1 + p3 * q0,
    ])


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    return q / np.linalg.norm(q)


def quat_to_dcm(q: np.ndarray) -> np.ndarray:
    """Rotation matrix T_b^n of the body-to-NED quaternion."""
    q0, q1, q2, q3 = q
    return np.array([
        [q0 * q0 + q1 * q1 - q2 * q2 - q3 * q3,
         2.0 * (q1 * q2 - q0 * q3),
         2.0 * (q1 * q3 + q0 * q2)],
        [2.0 * (q1 * q2 + q0 * q3),
         q0 * q0 - q1 * q1 + q2 * q2 - q3 * q3,
         2.0 * (q2 * q3 - q0 * q1)],
        [2.0 * (q1 * q3 - q0 * q2),
         2.0 * (q2 * q3 + q0 * q1),
         q0 * q0 - q1 * q1 - q2 * q2 + q3 * q3],
    ])


def euler_to_quat(theta: np.ndarray) -> np.ndarray:
    """Body-to-NED quaternion from Euler angles [roll, pitch, yaw]."""
    phi, th, psi = 0.5 * np.asarray(theta, dtype=float)
    cph, sph = np.cos(phi), np.sin(phi)
    cth, sth = np.cos(th), np.sin(th)
    cps, sps = np.cos(psi), np.sin(psi)
    return np.array([
        cph * cth * cps + sph * sth * sps,
        sph * cth * cps - cph * sth * sps,
        cph * sth * cps + sph * cth * sps,
        cph * cth * sps - sph * sth * cps,
    ])


def quat_to_euler(q: np.ndarray) -> np.ndarray:
    """Euler angles [roll, pitch, yaw] of a body-to-NED quaternion."""
    q0, q1, q2, q3 = q
    phi = np.arctan2(2.0 * (q0 * q1 + q2 * q3), 1.0 - 2.0 * (q1 * q1 + q2 * q2))
    s = np.clip(2.0 * (q0 * q2 - q3 * q1), -1.0, 1.0)
    th = np.arcsin(s)
    psi = np.arctan2(2.0 * (q0 * q3 + q1 * q2), 1.0 - 2.0 * (q2 * q2 + q3 * q3))
    return np.array([phi, th, psi])


def quat_to_euler_jacobian(q_vec: np.ndarray) -> np.ndarray:
    """Analytic Jacobian d(Euler)/d(quaternion vector part).

    The scalar part is treated as dependent, q0 = sqrt(1 - |q_vec|^2), so this
    is the Jacobian along the unit sphere. At the identity quaternion
    (q_vec = 0) it evaluates to exactly 2*I.
    """
    q1, q2, q3 = q_vec
    q0 = np.sqrt(1.0 - (q1 * q1 + q2 * q2 + q3 * q3))
    # dq0/dqi = -qi/q0
    dq0 = -np.array([q1, q2, q3]) / q0

    J = np.zeros((3, 3))

    # roll = atan2(A, B)
    A = 2.0 * (q0 * q1 + q2 * q3)
    B = 1.0 - 2.0 * (q1 * q1 + q2 * q2)
    dA = 2.0 * (np.array([q0, q3, q2]) + q1 * dq0)
    dB = np.array([-4.0 * q1, -4.0 * q2, 0.0])
    J[0] = (B * dA - A * dB) / (A * A + B * B)

    # pitch = asin(C)
    C = 2.0 * (q0 * q2 - q3 * q1)
    dC = 2.0 * (np.array([-q3, q0, -q1]) + q2 * dq0)
    J[1] = dC / np.sqrt(1.0 - C * C)

    # yaw = atan2(D, E)
    D = 2.0 * (q0 * q3 + q1 * q2)
    E = 1.0 - 2.0 * (q2 * q2 + q3 * q3)
    dD = 2.0 * (np.array([q2, q1, q0]) + q3 * dq0)
    dE = np.array([0.0, -4.0 * q2, -4.0 * q3])
    J[2] = (E * dD - D * dE) / (D * D + E * E)

    return J
