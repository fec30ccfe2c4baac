"""Error-state covariance machinery for the GPS/IMU-aided INS.

The 15-dimensional error state is ordered

    [position (NED, m), velocity (NED, m/s), attitude rotation-vector (rad),
     accelerometer bias (body, m/s^2), gyroscope bias (body, rad/s)]

Biases are first-order Gauss-Markov (FOGM) processes.  Covariance propagation
uses Lear's second-order state transition matrix together with an analytically
integrated process noise matrix; measurement updates use the Joseph form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError
from .frames import GRAVITY, dcm_body_to_ned, skew

__all__ = [
    "ImuSpec",
    "MeasSpec",
    "DeniedRegion",
    "NavCovariance",
    "nav_dynamics_matrix",
    "noise_input_matrix",
    "noise_psd",
    "stm_lear",
    "integrated_process_noise",
    "propagate",
    "measurement_update",
    "measurement_matrix",
    "measurement_noise",
    "run_covariance",
    "aircraft_covariance",
]

# Index ranges of the error-state blocks.
POS = slice(0, 3)
VEL = slice(3, 6)
ATT = slice(6, 9)
BA = slice(9, 12)
BG = slice(12, 15)

_DEG = np.pi / 180.0


@dataclass(frozen=True)
class ImuSpec:
    """White-noise PSDs and FOGM bias parameters of an IMU.

    q_nu: accelerometer white-noise PSD, (m/s^2)^2 * s (isotropic).
    q_omega: gyroscope white-noise PSD, (rad/s)^2 * s (isotropic).
    tau_a, tau_g: bias correlation time constants, s.
    sigma_a_ss, sigma_g_ss: steady-state bias standard deviations.
    """

    q_nu: float
    q_omega: float
    tau_a: float
    tau_g: float
    sigma_a_ss: float
    sigma_g_ss: float

    def __post_init__(self) -> None:
        for name in ("q_nu", "q_omega", "tau_a", "tau_g", "sigma_a_ss", "sigma_g_ss"):
            if not getattr(self, name) > 0.0:
                raise ConfigError(f"ImuSpec.{name} must be positive")

    @property
    def q_a(self) -> float:
        """Driving PSD of the accelerometer-bias FOGM process."""
        return 2.0 * self.sigma_a_ss**2 / self.tau_a

    @property
    def q_g(self) -> float:
        """Driving PSD of the gyroscope-bias FOGM process."""
        return 2.0 * self.sigma_g_ss**2 / self.tau_g

    @classmethod
    def industrial(cls, tau_a: float = 3600.0, tau_g: float = 3600.0) -> "ImuSpec":
        """Industrial-grade IMU: 3-sigma datasheet values.

        velocity random walk 0.1 m/s/sqrt(hr), accel bias 0.001 g,
        angle random walk 0.2 deg/sqrt(hr), gyro bias 10 deg/hr.
        """
        return cls(
            q_nu=(0.1 / 3.0 / 60.0) ** 2,
            q_omega=(0.2 / 3.0 * _DEG / 60.0) ** 2,
            tau_a=tau_a,
            tau_g=tau_g,
            sigma_a_ss=0.001 * GRAVITY / 3.0,
            sigma_g_ss=10.0 / 3.0 * _DEG / 3600.0,
        )

    @classmethod
    def tactical(cls, tau_a: float = 3600.0, tau_g: float = 3600.0) -> "ImuSpec":
        """Tactical-grade IMU: 3-sigma datasheet values.

        velocity random walk 0.03 m/s/sqrt(hr), accel bias 0.0001 g,
        angle random walk 0.05 deg/sqrt(hr), gyro bias 1 deg/hr.
        """
        return cls(
            q_nu=(0.03 / 3.0 / 60.0) ** 2,
            q_omega=(0.05 / 3.0 * _DEG / 60.0) ** 2,
            tau_a=tau_a,
            tau_g=tau_g,
            sigma_a_ss=0.0001 * GRAVITY / 3.0,
            sigma_g_ss=1.0 / 3.0 * _DEG / 3600.0,
        )


@dataclass(frozen=True)
class DeniedRegion:
    """Axis-aligned north/east rectangle where GPS position and heading
    measurements are unavailable."""

    north_min: float
    north_max: float
    east_min: float
    east_max: float

    def __post_init__(self) -> None:
        if self.north_min >= self.north_max or self.east_min >= self.east_max:
            raise ConfigError("DeniedRegion bounds must satisfy min < max")

    def contains(self, north: float, east: float) -> bool:
        return (
            self.north_min <= north <= self.north_max
            and self.east_min <= east <= self.east_max
        )


@dataclass(frozen=True)
class MeasSpec:
    """Aiding-measurement noise standard deviations and rates."""

    sigma_n: float
    sigma_e: float
    sigma_d: float
    sigma_h: float
    sigma_psi: float
    rate_position: float = 1.0
    rate_altitude: float = 10.0
    rate_heading: float = 10.0
    gps_denied_regions: tuple[DeniedRegion, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        for name in (
            "sigma_n", "sigma_e", "sigma_d", "sigma_h", "sigma_psi",
            "rate_position", "rate_altitude", "rate_heading",
        ):
            if not getattr(self, name) > 0.0:
                raise ConfigError(f"MeasSpec.{name} must be positive")
        object.__setattr__(self, "gps_denied_regions", tuple(self.gps_denied_regions))

    def denied(self, north: float, east: float) -> bool:
        return any(r.contains(north, east) for r in self.gps_denied_regions)


@dataclass(frozen=True)
class NavCovariance:
    """15x15 error-state covariance matrix."""

    P: np.ndarray

    def __post_init__(self) -> None:
        P = np.asarray(self.P, dtype=float)
        if P.shape != (15, 15):
            raise ConfigError("NavCovariance.P must be 15x15")
        P = 0.5 * (P + P.T)
        tr = float(np.trace(P))
        if tr > 0.0:
            min_eig = float(np.linalg.eigvalsh(P)[0])
            if min_eig < -1e-12 * tr:
                raise ConfigError("NavCovariance.P is not positive semidefinite")
        object.__setattr__(self, "P", P)

    @classmethod
    def initial(
        cls,
        imu: ImuSpec,
        sigma_p: float = 10.0,
        sigma_v: float = 0.5,
        sigma_theta: float = 0.5 * _DEG,
    ) -> "NavCovariance":
        """Diagonal initial covariance; biases start at their steady-state sigma."""
        d = np.concatenate(
            [
                np.full(3, sigma_p**2),
                np.full(3, sigma_v**2),
                np.full(3, sigma_theta**2),
                np.full(3, imu.sigma_a_ss**2),
                np.full(3, imu.sigma_g_ss**2),
            ]
        )
        return cls(np.diag(d))


def _check_rotation(T: np.ndarray) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    if T.shape != (3, 3) or np.linalg.norm(T.T @ T - np.eye(3)) >= 1e-9:
        raise ConfigError("rotation matrix is not orthonormal")
    return T


def nav_dynamics_matrix(
    T_b_n: np.ndarray, nu_hat_b: np.ndarray, tau_a: float, tau_g: float
) -> np.ndarray:
    """Linearized continuous error-state dynamics matrix F (15x15).

    T_b_n rotates body vectors into NED; nu_hat_b is the bias-compensated
    specific-force measurement in the body frame.
    """
    T = _check_rotation(T_b_n)
    nu_hat_b = np.asarray(nu_hat_b, dtype=float)
    F = np.zeros((15, 15))
    F[POS, VEL] = np.eye(3)
    F[VEL, ATT] = skew(T @ nu_hat_b)
    F[VEL, BA] = -T
    F[ATT, BG] = T
    F[BA, BA] = -np.eye(3) / tau_a
    F[BG, BG] = -np.eye(3) / tau_g
    return F


def noise_input_matrix(T_b_n: np.ndarray) -> np.ndarray:
    """Continuous noise coupling matrix B (15x12).

    Noise order: accel white, gyro white, accel-bias driving, gyro-bias driving.
    """
    T = np.asarray(T_b_n, dtype=float)
    B = np.zeros((15, 12))
    B[VEL, 0:3] = -T
    B[ATT, 3:6] = T
    B[BA, 6:9] = np.eye(3)
    B[BG, 9:12] = np.eye(3)
    return B


def noise_psd(imu: ImuSpec) -> np.ndarray:
    """Continuous noise PSD matrix Q (12x12) matching noise_input_matrix."""
    return np.diag(
        np.concatenate(
            [
                np.full(3, imu.q_nu),
                np.full(3, imu.q_omega),
                np.full(3, imu.q_a),
                np.full(3, imu.q_g),
            ]
        )
    )


def stm_lear(F_k: np.ndarray, F_km1: np.ndarray, dt: float) -> np.ndarray:
    """Second-order state transition matrix over [t_{k-1}, t_k].

    Phi = I + (dt/2)(F_k + F_{k-1}) + (dt^2/2) F_k F_{k-1}, with the FOGM bias
    diagonal replaced by its exact exponential transition.
    """
    if dt <= 0.0:
        raise ConfigError("stm_lear requires dt > 0")
    F_k = np.asarray(F_k, dtype=float)
    F_km1 = np.asarray(F_km1, dtype=float)
    Phi = np.eye(15) + 0.5 * dt * (F_k + F_km1) + 0.5 * dt * dt * (F_k @ F_km1)
    # Exact FOGM transitions; the time constants live on the F diagonal.
    Phi[BA, BA] = np.exp(dt * F_k[9, 9]) * np.eye(3)
    Phi[BG, BG] = np.exp(dt * F_k[12, 12]) * np.eye(3)
    return Phi


def integrated_process_noise(
    T_k: np.ndarray,
    T_km1: np.ndarray,
    nu_k: np.ndarray,
    nu_km1: np.ndarray,
    imu: ImuSpec,
    dt: float,
) -> np.ndarray:
    """Analytic integral of Phi B Q B^T Phi^T over one propagation interval.

    T_k, T_km1 are body-to-NED rotations at the interval endpoints and nu_k,
    nu_km1 the bias-compensated specific-force measurements (body frame).
    """
    if dt <= 0.0:
        raise ConfigError("integrated_process_noise requires dt > 0")
    Tk = np.asarray(T_k, dtype=float)
    Tkm1 = np.asarray(T_km1, dtype=float)
    TS = Tk + Tkm1
    N1 = skew(Tkm1 @ np.asarray(nu_km1, dtype=float))
    NK = skew(Tk @ np.asarray(nu_k, dtype=float))
    NS = N1 + NK
    q_nu, q_om = imu.q_nu, imu.q_omega
    q_a, q_g = imu.q_a, imu.q_g
    ta, tg = imu.tau_a, imu.tau_g
    I3 = np.eye(3)
    Qnu = q_nu * I3  # T Q_nu T^T with isotropic Q_nu
    Qom = q_om * I3

    dt2, dt3, dt4, dt5 = dt**2, dt**3, dt**4, dt**5

    Qvv = np.zeros((9, 9))
    Qvv[0:3, 0:3] = dt3 / 3.0 * Qnu + dt5 / 20.0 * (N1 @ Qom @ N1.T + q_a * (Tkm1 @ Tkm1.T))
    Q12 = (
        dt2 / 2.0 * Qnu
        + dt4 / 16.0 * (N1 @ Qom @ NS.T + q_a * (Tkm1 @ TS.T))
        - q_a * dt5 / (20.0 * ta) * (Tkm1 @ Tk.T)
    )
    Qvv[0:3, 3:6] = Q12
    Qvv[3:6, 0:3] = Q12.T
    Qvv[0:3, 6:9] = dt3 / 6.0 * (N1 @ Qom)
    Qvv[6:9, 0:3] = dt3 / 6.0 * (Qom @ N1.T)
    Qvv[3:6, 3:6] = (
        dt * Qnu
        + dt3 / 12.0 * (NS @ Qom @ NS.T + q_a * (TS @ TS.T))
        - q_a * dt4 / (16.0 * ta) * (Tk @ TS.T + TS @ Tk.T)
        + dt5 / 20.0 * (q_a / ta**2 * (Tk @ Tk.T) + q_g * (NK @ Tkm1 @ Tkm1.T @ NK.T))
    )
    Q23 = (
        dt2 / 4.0 * (NS @ Qom)
        + q_g * dt4 / 16.0 * (NK @ Tkm1 @ TS.T)
        - q_g * dt5 / (20.0 * tg) * (NK @ Tkm1 @ Tk.T)
    )
    Qvv[3:6, 6:9] = Q23
    Qvv[6:9, 3:6] = Q23.T
    Qvv[6:9, 6:9] = (
        dt * Qom
        + q_g * dt3 / 12.0 * (TS @ TS.T)
        - q_g * dt4 / (16.0 * tg) * (Tk @ TS.T + TS @ Tk.T)
        + q_g * dt5 / (20.0 * tg**2) * (Tk @ Tk.T)
    )

    def c_a(tau: float) -> float:
        return tau**3 - 0.5 * tau * (2.0 * tau**2 + 2.0 * tau * dt + dt2) * np.exp(-dt / tau)

    def c_t(tau: float) -> float:
        return 0.5 * tau**2 - 0.5 * tau * (tau + dt) * np.exp(-dt / tau)

    Qvp = np.zeros((9, 6))
    Qvp[0:3, 0:3] = -q_a * c_a(ta) * Tkm1
    Qvp[3:6, 0:3] = -q_a * c_t(ta) * TS + q_a * c_a(ta) / ta * Tk
    Qvp[3:6, 3:6] = q_g * c_a(tg) * (NK @ Tkm1)
    Qvp[6:9, 3:6] = q_g * c_t(tg) * TS - q_g * c_a(tg) / tg * Tk

    Qpp = np.zeros((6, 6))
    Qpp[0:3, 0:3] = q_a * ta / 2.0 * (1.0 - np.exp(-2.0 * dt / ta)) * I3
    Qpp[3:6, 3:6] = q_g * tg / 2.0 * (1.0 - np.exp(-2.0 * dt / tg)) * I3

    Q = np.zeros((15, 15))
    Q[0:9, 0:9] = Qvv
    Q[0:9, 9:15] = Qvp
    Q[9:15, 0:9] = Qvp.T
    Q[9:15, 9:15] = Qpp
    return 0.5 * (Q + Q.T)


def propagate(P: NavCovariance, Phi: np.ndarray, Q: np.ndarray) -> NavCovariance:
    """Time update: P- = Phi P Phi^T + Q, symmetrized."""
    Pm = Phi @ P.P @ Phi.T + Q
    return NavCovariance(0.5 * (Pm + Pm.T))


def measurement_matrix(kind: str) -> np.ndarray:
    """Measurement Jacobian H for one aiding-measurement type."""
    if kind == "position":
        H = np.zeros((3, 15))
        H[:, POS] = np.eye(3)
    elif kind == "altitude":
        # Altitude is the negative of down position.
        H = np.zeros((1, 15))
        H[0, 2] = -1.0
    elif kind == "heading":
        # Heading error observes the third attitude-error component negated.
        H = np.zeros((1, 15))
        H[0, 8] = -1.0
    else:
        raise ConfigError(f"unknown measurement kind {kind!r}")
    return H


def measurement_noise(kind: str, meas: MeasSpec) -> np.ndarray:
    """Measurement noise covariance R for one aiding-measurement type."""
    if kind == "position":
        return np.diag([meas.sigma_n**2, meas.sigma_e**2, meas.sigma_d**2])
    if kind == "altitude":
        return np.array([[meas.sigma_h**2]])
    if kind == "heading":
        return np.array([[meas.sigma_psi**2]])
    raise ConfigError(f"unknown measurement kind {kind!r}")


def kalman_gain(P: np.ndarray, H: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Optimal gain K = P H^T (H P H^T + R)^-1."""
    S = H @ P @ H.T + R
    try:
        return np.linalg.solve(S, H @ P).T
    except np.linalg.LinAlgError as exc:  # pragma: no cover - R > 0 prevents this
        raise NumericalError("innovation covariance is singular") from exc


def measurement_update(P: NavCovariance, kind: str, meas: MeasSpec) -> NavCovariance:
    """Joseph-form measurement update for one aiding-measurement type."""
    H = measurement_matrix(kind)
    R = measurement_noise(kind, meas)
    K = kalman_gain(P.P, H, R)
    IKH = np.eye(15) - K @ H
    Pp = IKH @ P.P @ IKH.T + K @ R @ K.T
    return NavCovariance(0.5 * (Pp + Pp.T))


def _update_period(rate: float, dt: float) -> int:
    """Number of propagation steps between measurement epochs."""
    return max(1, int(round(1.0 / (rate * dt))))


def run_covariance(trajectory, P0: NavCovariance, imu: ImuSpec, meas: MeasSpec):
    """Propagate the error covariance along a sampled trajectory.

    Propagates at every trajectory step and applies each aiding measurement at
    its own rate.  Inside a GPS-denied region (north/east test on the nominal
    position) position and heading updates are skipped; altitude continues.

    Returns (t, covariances): the sample times and a list of NavCovariance,
    one per trajectory sample.
    """
    n = len(trajectory)
    if n == 0:
        raise ConfigError("run_covariance requires a non-empty trajectory")
    dt = trajectory.dt
    T_all = np.array([dcm_body_to_ned(th) for th in trajectory.theta])
    F_all = [
        nav_dynamics_matrix(T_all[i], trajectory.nu_b[i], imu.tau_a, imu.tau_g)
        for i in range(n)
    ]
    per_p = _update_period(meas.rate_position, dt)
    per_h = _update_period(meas.rate_altitude, dt)
    per_psi = _update_period(meas.rate_heading, dt)

    out = [P0]
    P = P0
    for k in range(1, n):
        Phi = stm_lear(F_all[k], F_all[k - 1], dt)
        Q = integrated_process_noise(
            T_all[k], T_all[k - 1], trajectory.nu_b[k], trajectory.nu_b[k - 1], imu, dt
        )
        P = propagate(P, Phi, Q)
        north, east = trajectory.p_n[k, 0], trajectory.p_n[k, 1]
        denied = meas.denied(north, east)
        if k % per_h == 0:
            P = measurement_update(P, "altitude", meas)
        if not denied:
            if k % per_p == 0:
                P = measurement_update(P, "position", meas)
            if k % per_psi == 0:
                P = measurement_update(P, "heading", meas)
        out.append(P)
    return np.asarray(trajectory.t, dtype=float), out


def aircraft_covariance(P: NavCovariance | np.ndarray) -> np.ndarray:
    """6x6 pose covariance over [position, Euler angles].

    The rotation-vector attitude error maps to Euler-angle error with identity
    scaling at the nominal (the quaternion-to-Euler Jacobian 2I composed with
    the half-angle quaternion error), so the selector has unit blocks.
    """
    Pm = P.P if isinstance(P, NavCovariance) else np.asarray(P, dtype=float)
    M = np.zeros((6, 15))
    M[0:3, POS] = np.eye(3)
    M[3:6, ATT] = np.eye(3)
    C = M @ Pm @ M.T
    return 0.5 * (C + C.T)
