"""Monte Carlo validation of the dispersion model.

Each run perturbs the truth state, sensor biases, sensor noises, and radar
states, integrates the truth strapdown dynamics alongside a full error-state
EKF, and evaluates the detection probability at the navigation-implied true
pose (nominal pose plus truth-minus-navigation error).  Truth and navigation
share one integrator and one sampled-signal path, so with every noise source
disabled the two states stay bit-identical and the detection error is exactly
zero.

Randomness is drawn from counter-based Philox streams keyed by
(seed, run, channel), so toggling one noise source never shifts any other
stream and results are independent of worker count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .errors import ConfigError, NumericalError
from .frames import GRAVITY, euler_to_quat, wrap_angle
from .ins import ImuSpec, MeasSpec
from .radar import BOLTZMANN

__all__ = ["EnsembleResult", "run_ensemble", "coverage_check"]

# Channel ids for the per-run random streams.
_CHANNELS = {
    "init": 0,
    "bias_a": 1,
    "bias_g": 2,
    "accel_noise": 3,
    "gyro_noise": 4,
    "meas_pos": 5,
    "meas_alt": 6,
    "meas_head": 7,
    "radar": 8,
}


@dataclass
class EnsembleResult:
    """Ensemble statistics of the detection-probability error."""

    n_runs: int
    t: np.ndarray  # (n,)
    pd_nominal: np.ndarray  # (n_radar, n)
    mean_error: np.ndarray  # (n_radar, n)
    sigma: np.ndarray  # (n_radar, n) ensemble std (ddof=1)
    errors: np.ndarray | None  # (n_runs, n_radar, n) per-run P_D error traces
    failed_runs: tuple[int, ...]


# ---------------------------------------------------------------------------
# Batched quaternion/rotation helpers (verified against frames.* in tests)
# ---------------------------------------------------------------------------


def _quat_multiply(p, q):
    p0, p1, p2, p3 = p[..., 0], p[..., 1], p[..., 2], p[..., 3]
    q0, q1, q2, q3 = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack(
        [
            p0 * q0 - p1 * q1 - p2 * q2 - p3 * q3,
            p0 * q1 + p1 * q0 + p2 * q3 - p3 * q2,
            p0 * q2 - p1 * q3 + p2 * q0 + p3 * q1,
            p0 * q3 + p1 * q2 - p2 * q1 + p3 * q0,
        ],
        axis=-1,
    )


def _quat_to_dcm(q):
    """Body-to-NED rotation matrices for unit quaternions, shape (..., 3, 3)."""
    q0, q1, q2, q3 = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1.0 - 2.0 * (q2**2 + q3**2)
    R[..., 0, 1] = 2.0 * (q1 * q2 - q0 * q3)
    R[..., 0, 2] = 2.0 * (q1 * q3 + q0 * q2)
    R[..., 1, 0] = 2.0 * (q1 * q2 + q0 * q3)
    R[..., 1, 1] = 1.0 - 2.0 * (q1**2 + q3**2)
    R[..., 1, 2] = 2.0 * (q2 * q3 - q0 * q1)
    R[..., 2, 0] = 2.0 * (q1 * q3 - q0 * q2)
    R[..., 2, 1] = 2.0 * (q2 * q3 + q0 * q1)
    R[..., 2, 2] = 1.0 - 2.0 * (q1**2 + q2**2)
    return R


def _quat_to_euler(q):
    q0, q1, q2, q3 = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    roll = np.arctan2(2.0 * (q0 * q1 + q2 * q3), 1.0 - 2.0 * (q1**2 + q2**2))
    pitch = np.arcsin(np.clip(2.0 * (q0 * q2 - q3 * q1), -1.0, 1.0))
    yaw = np.arctan2(2.0 * (q0 * q3 + q1 * q2), 1.0 - 2.0 * (q2**2 + q3**2))
    return np.stack([roll, pitch, yaw], axis=-1)


def _quat_from_error(dtheta):
    """Quaternion of the nav-frame rotation exp(-[dtheta]x), shape (..., 4)."""
    q = np.concatenate(
        [np.ones(dtheta.shape[:-1] + (1,)), -0.5 * dtheta], axis=-1
    )
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def _dcm_ned_to_body(theta):
    """Batched T_n^b from Euler angles [roll, pitch, yaw], shape (..., 3, 3)."""
    phi, th, psi = theta[..., 0], theta[..., 1], theta[..., 2]
    cph, sph = np.cos(phi), np.sin(phi)
    cth, sth = np.cos(th), np.sin(th)
    cps, sps = np.cos(psi), np.sin(psi)
    T = np.empty(theta.shape[:-1] + (3, 3))
    T[..., 0, 0] = cth * cps
    T[..., 0, 1] = cth * sps
    T[..., 0, 2] = -sth
    T[..., 1, 0] = sph * sth * cps - cph * sps
    T[..., 1, 1] = sph * sth * sps + cph * cps
    T[..., 1, 2] = sph * cth
    T[..., 2, 0] = cph * sth * cps + sph * sps
    T[..., 2, 1] = cph * sth * sps - sph * cps
    T[..., 2, 2] = cph * cth
    return T


def _skew_batch(v):
    S = np.zeros(v.shape[:-1] + (3, 3))
    S[..., 0, 1] = -v[..., 2]
    S[..., 0, 2] = v[..., 1]
    S[..., 1, 0] = v[..., 2]
    S[..., 1, 2] = -v[..., 0]
    S[..., 2, 0] = -v[..., 1]
    S[..., 2, 1] = v[..., 0]
    return S


# ---------------------------------------------------------------------------
# Strapdown integration (shared by truth and navigation)
# ---------------------------------------------------------------------------

_G_NED = np.array([0.0, 0.0, GRAVITY])


def _strapdown_rates(v, q, f_b, w_b):
    p_dot = v
    v_dot = (_quat_to_dcm(q) @ f_b[..., None])[..., 0] + _G_NED
    wq = np.concatenate([np.zeros(w_b.shape[:-1] + (1,)), w_b], axis=-1)
    q_dot = 0.5 * _quat_multiply(q, wq)
    return p_dot, v_dot, q_dot


def _strapdown_step(p, v, q, f0, f1, w0, w1, dt):
    """One RK4 step with linearly interpolated specific force and rates."""
    fm, wm = 0.5 * (f0 + f1), 0.5 * (w0 + w1)
    k1p, k1v, k1q = _strapdown_rates(v, q, f0, w0)
    k2p, k2v, k2q = _strapdown_rates(v + 0.5 * dt * k1v, q + 0.5 * dt * k1q, fm, wm)
    k3p, k3v, k3q = _strapdown_rates(v + 0.5 * dt * k2v, q + 0.5 * dt * k2q, fm, wm)
    k4p, k4v, k4q = _strapdown_rates(v + dt * k3v, q + dt * k3q, f1, w1)
    p = p + dt / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
    v = v + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    q = q + dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    return p, v, q


# ---------------------------------------------------------------------------
# Batched EKF matrices (mirror ins.stm_lear / ins.integrated_process_noise)
# ---------------------------------------------------------------------------


def _dynamics_batch(T, nu, tau_a, tau_g):
    """(N,15,15) error dynamics matrices from (N,3,3) rotations."""
    N = T.shape[0]
    F = np.zeros((N, 15, 15))
    F[:, 0:3, 3:6] = np.eye(3)
    F[:, 3:6, 6:9] = _skew_batch((T @ nu[..., None])[..., 0])
    F[:, 3:6, 9:12] = -T
    F[:, 6:9, 12:15] = T
    F[:, 9:12, 9:12] = -np.eye(3) / tau_a
    F[:, 12:15, 12:15] = -np.eye(3) / tau_g
    return F


def _phi_batch(F_k, F_km1, dt, tau_a, tau_g):
    Phi = (
        np.eye(15)
        + 0.5 * dt * (F_k + F_km1)
        + 0.5 * dt * dt * (F_k @ F_km1)
    )
    Phi[:, 9:12, 9:12] = np.exp(-dt / tau_a) * np.eye(3)
    Phi[:, 12:15, 12:15] = np.exp(-dt / tau_g) * np.eye(3)
    return Phi


def _q_batch(Tk, Tkm1, nuk, nukm1, imu: ImuSpec, dt):
    """Batched analytic integrated process noise, mirroring the ins module."""
    N = Tk.shape[0]
    TT = np.transpose
    TS = Tk + Tkm1
    N1 = _skew_batch((Tkm1 @ nukm1[..., None])[..., 0])
    NK = _skew_batch((Tk @ nuk[..., None])[..., 0])
    NS = N1 + NK
    q_nu, q_om = imu.q_nu, imu.q_omega
    q_a, q_g = imu.q_a, imu.q_g
    ta, tg = imu.tau_a, imu.tau_g
    I3 = np.eye(3)
    dt2, dt3, dt4, dt5 = dt**2, dt**3, dt**4, dt**5

    Q = np.zeros((N, 15, 15))
    Q[:, 0:3, 0:3] = (
        dt3 / 3.0 * q_nu * I3
        + dt5 / 20.0 * (q_om * (N1 @ TT(N1, (0, 2, 1)))
                        + q_a * (Tkm1 @ TT(Tkm1, (0, 2, 1))))
    )
    Q12 = (
        dt2 / 2.0 * q_nu * I3
        + dt4 / 16.0 * (q_om * (N1 @ TT(NS, (0, 2, 1)))
                        + q_a * (Tkm1 @ TT(TS, (0, 2, 1))))
        - q_a * dt5 / (20.0 * ta) * (Tkm1 @ TT(Tk, (0, 2, 1)))
    )
    Q[:, 0:3, 3:6] = Q12
    Q[:, 3:6, 0:3] = TT(Q12, (0, 2, 1))
    Q13 = dt3 / 6.0 * q_om * N1
    Q[:, 0:3, 6:9] = Q13
    Q[:, 6:9, 0:3] = TT(Q13, (0, 2, 1))
    Q[:, 3:6, 3:6] = (
        dt * q_nu * I3
        + dt3 / 12.0 * (q_om * (NS @ TT(NS, (0, 2, 1)))
                        + q_a * (TS @ TT(TS, (0, 2, 1))))
        - q_a * dt4 / (16.0 * ta) * (Tk @ TT(TS, (0, 2, 1)) + TS @ TT(Tk, (0, 2, 1)))
        + dt5 / 20.0 * (
            q_a / ta**2 * (Tk @ TT(Tk, (0, 2, 1)))
            + q_g * (NK @ Tkm1 @ TT(Tkm1, (0, 2, 1)) @ TT(NK, (0, 2, 1)))
        )
    )
    Q23 = (
        dt2 / 4.0 * q_om * NS
        + q_g * dt4 / 16.0 * (NK @ Tkm1 @ TT(TS, (0, 2, 1)))
        - q_g * dt5 / (20.0 * tg) * (NK @ Tkm1 @ TT(Tk, (0, 2, 1)))
    )
    Q[:, 3:6, 6:9] = Q23
    Q[:, 6:9, 3:6] = TT(Q23, (0, 2, 1))
    Q[:, 6:9, 6:9] = (
        dt * q_om * I3
        + q_g * dt3 / 12.0 * (TS @ TT(TS, (0, 2, 1)))
        - q_g * dt4 / (16.0 * tg) * (Tk @ TT(TS, (0, 2, 1)) + TS @ TT(Tk, (0, 2, 1)))
        + q_g * dt5 / (20.0 * tg**2) * (Tk @ TT(Tk, (0, 2, 1)))
    )

    ca_a = ta**3 - 0.5 * ta * (2 * ta**2 + 2 * ta * dt + dt2) * np.exp(-dt / ta)
    ct_a = 0.5 * ta**2 - 0.5 * ta * (ta + dt) * np.exp(-dt / ta)
    ca_g = tg**3 - 0.5 * tg * (2 * tg**2 + 2 * tg * dt + dt2) * np.exp(-dt / tg)
    ct_g = 0.5 * tg**2 - 0.5 * tg * (tg + dt) * np.exp(-dt / tg)
    Qvp = np.zeros((N, 9, 6))
    Qvp[:, 0:3, 0:3] = -q_a * ca_a * Tkm1
    Qvp[:, 3:6, 0:3] = -q_a * ct_a * TS + q_a * ca_a / ta * Tk
    Qvp[:, 3:6, 3:6] = q_g * ca_g * (NK @ Tkm1)
    Qvp[:, 6:9, 3:6] = q_g * ct_g * TS - q_g * ca_g / tg * Tk
    Q[:, 0:9, 9:15] = Qvp
    Q[:, 9:15, 0:9] = TT(Qvp, (0, 2, 1))
    Q[:, 9:12, 9:12] = q_a * ta / 2.0 * (1.0 - np.exp(-2.0 * dt / ta)) * I3
    Q[:, 12:15, 12:15] = q_g * tg / 2.0 * (1.0 - np.exp(-2.0 * dt / tg)) * I3
    return 0.5 * (Q + TT(Q, (0, 2, 1)))


def _joseph_update(P, K, H, R):
    IKH = np.eye(15) - K @ H
    IKHt = np.transpose(IKH, (0, 2, 1))
    Kt = np.transpose(K, (0, 2, 1))
    P = IKH @ P @ IKHt + K @ R @ Kt
    return 0.5 * (P + np.transpose(P, (0, 2, 1)))


# ---------------------------------------------------------------------------
# Batched detection probability
# ---------------------------------------------------------------------------


def pd_batch(p_a, theta, p_r, c_r, rcs, p_fa):
    """Detection probability for broadcastable pose/radar arrays."""
    rho_n = p_r - p_a
    T_nb = _dcm_ned_to_body(theta)
    rho_b = (T_nb @ rho_n[..., None])[..., 0]
    rng = np.linalg.norm(rho_n, axis=-1)
    hxy = np.hypot(rho_b[..., 0], rho_b[..., 1])
    alpha = np.arctan2(rho_b[..., 1], rho_b[..., 0])
    phi = np.arctan2(rho_b[..., 2], hxy)
    a, b, c = rcs.a, rcs.b, rcs.c
    sa, ca = np.sin(alpha), np.cos(alpha)
    sp, cp = np.sin(phi), np.cos(phi)
    D = (a * sa * cp) ** 2 + (b * sa * sp) ** 2 + (c * ca) ** 2
    sigma = np.pi * (a * b * c) ** 2 / D**2
    S = c_r * sigma / (BOLTZMANN * rng**4)
    return 0.5 * erfc(np.sqrt(-np.log(p_fa)) - np.sqrt(S + 0.5))


# ---------------------------------------------------------------------------
# Ensemble run
# ---------------------------------------------------------------------------


def _stream(seed: int, run: int, channel: str) -> np.random.Generator:
    key = (np.uint64(seed), np.uint64(run * 64 + _CHANNELS[channel]))
    return np.random.Generator(np.random.Philox(key=key))


def _draw_all(seed, n_runs, n, n_radar):
    """Pre-draw standard-normal variates for every run and channel."""
    shapes = {
        "init": (15,),
        "bias_a": (n, 3),
        "bias_g": (n, 3),
        "accel_noise": (n, 3),
        "gyro_noise": (n, 3),
        "meas_pos": (n, 3),
        "meas_alt": (n,),
        "meas_head": (n,),
        "radar": (n_radar, 4),
    }
    out = {}
    for name, shape in shapes.items():
        arr = np.empty((n_runs,) + shape)
        for r in range(n_runs):
            arr[r] = _stream(seed, r, name).standard_normal(shape)
        out[name] = arr
    return out


def _psd_sqrt(P):
    w, V = np.linalg.eigh(P)
    return V @ np.diag(np.sqrt(np.clip(w, 0.0, None)))


def run_ensemble(
    scenario,
    n_runs: int,
    seed: int,
    sources,
    keep_errors: bool = True,
) -> EnsembleResult:
    """Monte Carlo ensemble of detection-probability errors.

    `scenario` provides trajectory, P0, imu, meas, radars, rcs (same contract
    as lincov.sigma_pd_series).  `sources` is a lincov.NoiseSourceSet.
    """
    if n_runs < 2:
        raise ConfigError("run_ensemble requires n_runs >= 2")
    traj = scenario.trajectory
    imu: ImuSpec = scenario.imu
    meas: MeasSpec = scenario.meas
    radars = scenario.radars
    n = len(traj)
    dt = traj.dt
    N = n_runs
    draws = _draw_all(seed, N, n, len(radars))

    # Scaled noise sequences (zeroed when the source is off).
    w_acc = draws["accel_noise"] * (
        np.sqrt(imu.q_nu / dt) if sources.accel_noise else 0.0
    )
    w_gyr = draws["gyro_noise"] * (
        np.sqrt(imu.q_omega / dt) if sources.gyro_noise else 0.0
    )
    eta_a = draws["bias_a"] * (
        imu.sigma_a_ss * np.sqrt(1.0 - np.exp(-2.0 * dt / imu.tau_a))
        if sources.accel_bias else 0.0
    )
    eta_g = draws["bias_g"] * (
        imu.sigma_g_ss * np.sqrt(1.0 - np.exp(-2.0 * dt / imu.tau_g))
        if sources.gyro_bias else 0.0
    )
    v_pos = draws["meas_pos"] * (
        np.array([meas.sigma_n, meas.sigma_e, meas.sigma_d])
        if sources.pos_meas_noise else 0.0
    )
    v_alt = draws["meas_alt"] * (meas.sigma_h if sources.alt_meas_noise else 0.0)
    v_head = draws["meas_head"] * (
        meas.sigma_psi if sources.heading_meas_noise else 0.0
    )

    # Initial truth dispersion.
    if sources.initial_conditions:
        L0 = _psd_sqrt(scenario.P0.P)
        dx0 = draws["init"] @ L0.T
    else:
        dx0 = np.zeros((N, 15))

    # Radar perturbations (position block and constant).
    radar_p = np.array([r.p_n for r in radars])  # (m, 3)
    radar_c = np.array([r.c_r for r in radars])  # (m,)
    d_rp = np.zeros((N, len(radars), 3))
    d_rc = np.zeros((N, len(radars)))
    for i, r in enumerate(radars):
        L = _psd_sqrt(np.asarray(r.C_rr, dtype=float))
        pert = draws["radar"][:, i, :] @ L.T  # (N, 4)
        if sources.radar_position:
            d_rp[:, i, :] = pert[:, 0:3]
        if sources.radar_constant:
            d_rc[:, i] = pert[:, 3]

    # Nominal signals and initial states.
    nu_nom = traj.nu_b  # (n, 3)
    om_nom = traj.omega_b
    q_nom0 = euler_to_quat(traj.theta[0])

    p_t = np.tile(traj.p_n[0], (N, 1)) + dx0[:, 0:3]
    v_t = np.tile(traj.v_n[0], (N, 1)) + dx0[:, 3:6]
    q_t = _quat_multiply(_quat_from_error(dx0[:, 6:9]), np.tile(q_nom0, (N, 1)))
    b_a = dx0[:, 9:12].copy()
    b_g = dx0[:, 12:15].copy()

    p_h = np.tile(traj.p_n[0], (N, 1))
    v_h = np.tile(traj.v_n[0], (N, 1))
    q_h = np.tile(q_nom0, (N, 1))
    bh_a = np.zeros((N, 3))
    bh_g = np.zeros((N, 3))
    P = np.tile(scenario.P0.P, (N, 1, 1))

    per = {
        "position": max(1, int(round(1.0 / (meas.rate_position * dt)))),
        "altitude": max(1, int(round(1.0 / (meas.rate_altitude * dt)))),
        "heading": max(1, int(round(1.0 / (meas.rate_heading * dt)))),
    }
    H_pos = np.zeros((3, 15))
    H_pos[:, 0:3] = np.eye(3)
    H_alt = np.zeros((1, 15))
    H_alt[0, 2] = -1.0
    H_head = np.zeros((1, 15))
    H_head[0, 8] = -1.0
    R_pos = np.diag([meas.sigma_n**2, meas.sigma_e**2, meas.sigma_d**2])
    R_alt = np.array([[meas.sigma_h**2]])
    R_head = np.array([[meas.sigma_psi**2]])

    dp_hist = np.empty((N, n, 3))
    dth_hist = np.empty((N, n, 3))
    dp_hist[:, 0] = p_t - p_h
    dth_hist[:, 0] = wrap_angle(_quat_to_euler(q_t) - _quat_to_euler(q_h))

    a_decay = np.exp(-dt / imu.tau_a)
    g_decay = np.exp(-dt / imu.tau_g)
    T_h_prev = _quat_to_dcm(q_h)
    nu_h_prev = nu_nom[0] + b_a + w_acc[:, 0] - bh_a
    F_prev = _dynamics_batch(T_h_prev, nu_h_prev, imu.tau_a, imu.tau_g)

    for k in range(1, n):
        # IMU measurements at the interval endpoints.
        f_meas0 = nu_nom[k - 1] + b_a + w_acc[:, k - 1] - bh_a
        w_meas0 = om_nom[k - 1] + b_g + w_gyr[:, k - 1] - bh_g
        # Truth FOGM bias transition (exact discretization).
        b_a = a_decay * b_a + eta_a[:, k]
        b_g = g_decay * b_g + eta_g[:, k]
        # Nav bias estimates follow the FOGM mean dynamics between updates.
        bh_a_new = a_decay * bh_a
        bh_g_new = g_decay * bh_g
        f_meas1 = nu_nom[k] + b_a + w_acc[:, k] - bh_a_new
        w_meas1 = om_nom[k] + b_g + w_gyr[:, k] - bh_g_new

        # Truth state: clean nominal signals from its own (dispersed) attitude.
        p_t, v_t, q_t = _strapdown_step(
            p_t, v_t, q_t,
            np.broadcast_to(nu_nom[k - 1], (N, 3)),
            np.broadcast_to(nu_nom[k], (N, 3)),
            np.broadcast_to(om_nom[k - 1], (N, 3)),
            np.broadcast_to(om_nom[k], (N, 3)),
            dt,
        )
        # Navigation state: measured signals minus bias estimates.
        p_h, v_h, q_h = _strapdown_step(
            p_h, v_h, q_h, f_meas0, f_meas1, w_meas0, w_meas1, dt
        )
        bh_a, bh_g = bh_a_new, bh_g_new

        # EKF covariance.
        T_h = _quat_to_dcm(q_h)
        F_now = _dynamics_batch(T_h, f_meas1, imu.tau_a, imu.tau_g)
        Phi = _phi_batch(F_now, F_prev, dt, imu.tau_a, imu.tau_g)
        Q = _q_batch(T_h, T_h_prev, f_meas1, nu_h_prev, imu, dt)
        P = Phi @ P @ np.transpose(Phi, (0, 2, 1)) + Q
        P = 0.5 * (P + np.transpose(P, (0, 2, 1)))
        T_h_prev, nu_h_prev, F_prev = T_h, f_meas1, F_now

        denied = meas.denied(traj.p_n[k, 0], traj.p_n[k, 1])

        if k % per["altitude"] == 0:
            z = -p_t[:, 2] + v_alt[:, k]
            y = (z - (-p_h[:, 2]))[:, None]
            PHt = -P[:, :, 2:3]
            S = P[:, 2, 2] + R_alt[0, 0]
            K = PHt / S[:, None, None]
            p_h, v_h, q_h, bh_a, bh_g = _apply_correction(
                p_h, v_h, q_h, bh_a, bh_g, (K @ y[:, :, None])[:, :, 0]
            )
            P = _joseph_update(P, K, H_alt, R_alt)
        if not denied and k % per["position"] == 0:
            z = p_t + v_pos[:, k]
            y = z - p_h
            PHt = P[:, :, 0:3]
            S = P[:, 0:3, 0:3] + R_pos
            K = np.transpose(
                np.linalg.solve(S, np.transpose(PHt, (0, 2, 1))), (0, 2, 1)
            )
            p_h, v_h, q_h, bh_a, bh_g = _apply_correction(
                p_h, v_h, q_h, bh_a, bh_g, (K @ y[:, :, None])[:, :, 0]
            )
            P = _joseph_update(P, K, H_pos, R_pos)
        if not denied and k % per["heading"] == 0:
            psi_t = _quat_to_euler(q_t)[:, 2]
            psi_h = _quat_to_euler(q_h)[:, 2]
            y = wrap_angle(psi_t + v_head[:, k] - psi_h)[:, None]
            PHt = -P[:, :, 8:9]
            S = P[:, 8, 8] + R_head[0, 0]
            K = PHt / S[:, None, None]
            p_h, v_h, q_h, bh_a, bh_g = _apply_correction(
                p_h, v_h, q_h, bh_a, bh_g, (K @ y[:, :, None])[:, :, 0]
            )
            P = _joseph_update(P, H=H_head, K=K, R=R_head)

        dp_hist[:, k] = p_t - p_h
        dth_hist[:, k] = wrap_angle(_quat_to_euler(q_t) - _quat_to_euler(q_h))

    # Detection probability at the navigation-implied true pose.
    p_run = traj.p_n[None, :, :] + dp_hist  # (N, n, 3)
    th_run = traj.theta[None, :, :] + dth_hist
    m = len(radars)
    pd_nom = np.empty((m, n))
    errors = np.empty((N, m, n))
    for i in range(m):
        pd_nom[i] = pd_batch(
            traj.p_n, traj.theta, radar_p[i], radar_c[i], scenario.rcs,
            radars[i].p_fa,
        )
        pd_run = pd_batch(
            p_run,
            th_run,
            radar_p[i] + d_rp[:, i, None, :],
            (radar_c[i] + d_rc[:, i])[:, None],
            scenario.rcs,
            radars[i].p_fa,
        )
        errors[:, i, :] = pd_run - pd_nom[i]

    failed = np.flatnonzero(~np.isfinite(errors).all(axis=(1, 2)))
    if failed.size > 0.01 * N:
        raise NumericalError(
            f"{failed.size} of {N} Monte Carlo runs diverged"
        )
    ok = np.setdiff1d(np.arange(N), failed)
    good = errors[ok]
    mean_err = good.mean(axis=0)
    sigma = good.std(axis=0, ddof=1)
    return EnsembleResult(
        n_runs=N,
        t=np.asarray(traj.t, float),
        pd_nominal=pd_nom,
        mean_error=mean_err,
        sigma=sigma,
        errors=errors if keep_errors else None,
        failed_runs=tuple(int(i) for i in failed),
    )


def _apply_correction(p, v, q, ba, bg, dx):
    p = p + dx[:, 0:3]
    v = v + dx[:, 3:6]
    q = _quat_multiply(_quat_from_error(dx[:, 6:9]), q)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    ba = ba + dx[:, 9:12]
    bg = bg + dx[:, 12:15]
    return p, v, q, ba, bg


def coverage_check(result: EnsembleResult, lincov_series, k: float) -> float:
    """Fraction of (run, radar, sample) errors inside +/- k * sigma_pd(t)."""
    if result.errors is None:
        raise ConfigError("coverage_check needs per-run error traces")
    t_l = np.asarray(lincov_series.t, float)
    if t_l.shape != result.t.shape or not np.allclose(t_l, result.t):
        raise ConfigError("time bases of ensemble and LinCov series differ")
    sig = np.asarray(lincov_series.sigma_pd, float)  # (m, n)
    if sig.shape != result.pd_nominal.shape:
        raise ConfigError("radar counts of ensemble and LinCov series differ")
    inside = np.abs(result.errors) <= k * sig[None, :, :]
    return float(inside.mean())
