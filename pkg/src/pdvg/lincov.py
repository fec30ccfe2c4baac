"""Linear covariance analysis of the coupled truth/navigation dispersions.

The augmented state stacks the truth dispersion (15) on top of the navigation
dispersion (15).  Truth biases drive the navigation estimate through the IMU
measurement path; measurement updates couple the two halves through the fixed
Kalman gain schedule of the navigation filter.  The true navigation error
covariance is the covariance of (nav dispersion - truth dispersion), and maps
to a detection-probability uncertainty through the radar Jacobians.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .frames import dcm_body_to_ned
from .ins import (
    ImuSpec,
    MeasSpec,
    NavCovariance,
    kalman_gain,
    measurement_matrix,
    measurement_noise,
    nav_dynamics_matrix,
    stm_lear,
    integrated_process_noise,
    propagate as ins_propagate,
    aircraft_covariance,
)
from .radar import AircraftPose, detection_stats, jacobian_aircraft, jacobian_radar

__all__ = [
    "SOURCE_NAMES",
    "NoiseSourceSet",
    "DetectionSeries",
    "ErrorBudget",
    "GainSchedule",
    "truth_dispersion_matrix",
    "measurement_influence_matrix",
    "build_augmented",
    "propagate_augmented",
    "update_augmented",
    "true_nav_covariance",
    "gain_schedule",
    "sigma_pd_series",
    "error_budget",
]

SOURCE_NAMES = (
    "accel_noise",
    "gyro_noise",
    "accel_bias",
    "gyro_bias",
    "pos_meas_noise",
    "heading_meas_noise",
    "alt_meas_noise",
    "radar_position",
    "radar_constant",
    "initial_conditions",
)


@dataclass(frozen=True)
class NoiseSourceSet:
    """Toggle set for the uncertainty sources entering the dispersion model."""

    accel_noise: bool = True
    gyro_noise: bool = True
    accel_bias: bool = True
    gyro_bias: bool = True
    pos_meas_noise: bool = True
    heading_meas_noise: bool = True
    alt_meas_noise: bool = True
    radar_position: bool = True
    radar_constant: bool = True
    initial_conditions: bool = True

    @classmethod
    def all_on(cls) -> "NoiseSourceSet":
        return cls()

    @classmethod
    def none_on(cls) -> "NoiseSourceSet":
        return cls(**{name: False for name in SOURCE_NAMES})

    @classmethod
    def only(cls, *names: str) -> "NoiseSourceSet":
        for name in names:
            if name not in SOURCE_NAMES:
                raise ConfigError(f"unknown noise source {name!r}")
        return cls(**{name: name in names for name in SOURCE_NAMES})

    def active(self) -> tuple[str, ...]:
        return tuple(n for n in SOURCE_NAMES if getattr(self, n))


@dataclass
class DetectionSeries:
    """Per-radar nominal detection probability and its dispersion sigma."""

    t: np.ndarray  # (n,)
    pd_nominal: np.ndarray  # (n_radar, n)
    sigma_pd: np.ndarray  # (n_radar, n)


@dataclass
class ErrorBudget:
    """Per-source 3-sigma detection-probability contributions at a snapshot."""

    t_snapshot: float
    radar_index: int
    sigma3_by_source: dict[str, float]
    total_sigma3: float
    percent_by_source: dict[str, float]
    gain_checksum: str


@dataclass
class GainSchedule:
    """Measurement-update events of the navigation filter, one list per step.

    events[k] holds (kind, K) pairs applied after the propagation into step k;
    GPS-denied gating is already folded in (skipped updates are absent).
    """

    events: list[list[tuple[str, np.ndarray]]]

    def checksum(self) -> str:
        h = hashlib.sha256()
        for step in self.events:
            for kind, K in step:
                h.update(kind.encode())
                h.update(np.ascontiguousarray(K).tobytes())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# Augmented system assembly
# ---------------------------------------------------------------------------


def truth_dispersion_matrix(
    T_bar: np.ndarray, nu_b: np.ndarray, tau_a: float, tau_g: float
) -> np.ndarray:
    """Linearized truth-dispersion dynamics F_x (15x15).

    Identical to the navigation dynamics matrix except that the truth biases
    do not couple into the velocity and attitude rows here; they reach the
    navigation dispersion through the measurement path instead.
    """
    F = nav_dynamics_matrix(T_bar, nu_b, tau_a, tau_g)
    F[3:6, 9:12] = 0.0
    F[6:9, 12:15] = 0.0
    return F


def measurement_influence_matrix(T_b_n: np.ndarray) -> np.ndarray:
    """IMU-measurement influence F_y (15x6): accel into velocity rows with +T,
    gyro into attitude rows with -T."""
    T = np.asarray(T_b_n, dtype=float)
    Fy = np.zeros((15, 6))
    Fy[3:6, 0:3] = T
    Fy[6:9, 3:6] = -T
    return Fy


# Selector of the truth bias states.
C_X = np.zeros((6, 15))
C_X[:, 9:15] = np.eye(6)


def build_augmented(
    F_x: np.ndarray, F_hat: np.ndarray, F_y: np.ndarray, C_x: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Assemble the 30-state dispersion dynamics (F_script, G, W)."""
    Fs = np.zeros((30, 30))
    Fs[0:15, 0:15] = F_x
    Fs[15:30, 0:15] = F_y @ C_x
    Fs[15:30, 15:30] = F_hat
    G = np.zeros((30, 6))
    G[15:30, :] = F_y
    W = np.zeros((30, 6))
    W[9:15, :] = np.eye(6)
    return Fs, G, W


def propagate_augmented(
    C_A: np.ndarray,
    F_script: np.ndarray,
    G: np.ndarray,
    W: np.ndarray,
    S_eta: np.ndarray,
    S_w: np.ndarray,
    dt: float,
) -> np.ndarray:
    """One RK4 step of the Lyapunov ODE with matrices held over the step."""
    GSG = G @ S_eta @ G.T + W @ S_w @ W.T

    def rate(C):
        return F_script @ C + C @ F_script.T + GSG

    k1 = rate(C_A)
    k2 = rate(C_A + 0.5 * dt * k1)
    k3 = rate(C_A + 0.5 * dt * k2)
    k4 = rate(C_A + dt * k3)
    C = C_A + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return 0.5 * (C + C.T)


def update_augmented(
    C_A: np.ndarray, K: np.ndarray, H_x: np.ndarray, R: np.ndarray
) -> np.ndarray:
    """Measurement update of the augmented covariance with a given filter gain."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    H_x = np.atleast_2d(np.asarray(H_x, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if K.shape != (15, H_x.shape[0]) or H_x.shape[1] != 15:
        raise ConfigError("update_augmented: gain/Jacobian shapes do not match")
    A = np.zeros((30, 30))
    A[0:15, 0:15] = np.eye(15)
    A[15:30, 0:15] = K @ H_x
    A[15:30, 15:30] = np.eye(15) - K @ H_x
    B = np.zeros((30, H_x.shape[0]))
    B[15:30, :] = K
    C = A @ C_A @ A.T + B @ R @ B.T
    return 0.5 * (C + C.T)


def true_nav_covariance(C_A: np.ndarray) -> np.ndarray:
    """P_true = [-I I] C_A [-I I]^T: covariance of nav-minus-truth dispersion."""
    Cdd = C_A[0:15, 0:15]
    Cdn = C_A[0:15, 15:30]
    Cnn = C_A[15:30, 15:30]
    P = Cdd - Cdn - Cdn.T + Cnn
    return 0.5 * (P + P.T)


# ---------------------------------------------------------------------------
# Scenario-level runs
# ---------------------------------------------------------------------------


def gain_schedule(trajectory, P0: NavCovariance, imu: ImuSpec, meas: MeasSpec) -> GainSchedule:
    """Kalman gains of the all-sources-on navigation filter along a trajectory.

    Mirrors the ins-module covariance recursion and records every update event
    (with GPS-denied gating) so dispersion runs can replay an identical gain
    sequence for every noise-source subset.
    """
    n = len(trajectory)
    dt = trajectory.dt
    T_all = [dcm_body_to_ned(th).T for th in trajectory.theta]
    F_all = [
        nav_dynamics_matrix(T_all[i], trajectory.nu_b[i], imu.tau_a, imu.tau_g)
        for i in range(n)
    ]
    per = {
        "position": max(1, int(round(1.0 / (meas.rate_position * dt)))),
        "altitude": max(1, int(round(1.0 / (meas.rate_altitude * dt)))),
        "heading": max(1, int(round(1.0 / (meas.rate_heading * dt)))),
    }
    events: list[list[tuple[str, np.ndarray]]] = [[]]
    P = P0
    for k in range(1, n):
        Phi = stm_lear(F_all[k], F_all[k - 1], dt)
        Q = integrated_process_noise(
            T_all[k], T_all[k - 1], trajectory.nu_b[k], trajectory.nu_b[k - 1], imu, dt
        )
        P = ins_propagate(P, Phi, Q)
        denied = meas.denied(trajectory.p_n[k, 0], trajectory.p_n[k, 1])
        step: list[tuple[str, np.ndarray]] = []
        for kind in ("altitude", "position", "heading"):
            if k % per[kind] != 0:
                continue
            if denied and kind in ("position", "heading"):
                continue
            H = measurement_matrix(kind)
            R = measurement_noise(kind, meas)
            K = kalman_gain(P.P, H, R)
            IKH = np.eye(15) - K @ H
            Pp = IKH @ P.P @ IKH.T + K @ R @ K.T
            P = NavCovariance(0.5 * (Pp + Pp.T))
            step.append((kind, K))
        events.append(step)
    return GainSchedule(events)


def _effective_crr(radar, sources: NoiseSourceSet) -> np.ndarray:
    """Radar state covariance with inactive radar sources zeroed."""
    C = np.array(radar.C_rr, dtype=float, copy=True)
    if not sources.radar_position:
        C[0:3, :] = 0.0
        C[:, 0:3] = 0.0
    if not sources.radar_constant:
        C[3, :] = 0.0
        C[:, 3] = 0.0
    return C


def _initial_augmented(P0: NavCovariance, sources: NoiseSourceSet) -> np.ndarray:
    """Initial C_A: truth dispersion drawn from P0, nav dispersion zero."""
    C = np.zeros((30, 30))
    if sources.initial_conditions:
        C[0:15, 0:15] = P0.P
    return C


def run_dispersion(
    trajectory,
    P0: NavCovariance,
    imu: ImuSpec,
    meas: MeasSpec,
    sources: NoiseSourceSet,
    schedule: GainSchedule,
) -> list[np.ndarray]:
    """True navigation error covariance P_true at every trajectory sample."""
    n = len(trajectory)
    if len(schedule.events) != n:
        raise ConfigError("gain schedule length does not match the trajectory")
    dt = trajectory.dt
    T_all = [dcm_body_to_ned(th).T for th in trajectory.theta]
    S_eta = np.diag(
        np.concatenate(
            [
                np.full(3, imu.q_nu if sources.accel_noise else 0.0),
                np.full(3, imu.q_omega if sources.gyro_noise else 0.0),
            ]
        )
    )
    S_w = np.diag(
        np.concatenate(
            [
                np.full(3, imu.q_a if sources.accel_bias else 0.0),
                np.full(3, imu.q_g if sources.gyro_bias else 0.0),
            ]
        )
    )
    r_scale = {
        "position": 1.0 if sources.pos_meas_noise else 0.0,
        "altitude": 1.0 if sources.alt_meas_noise else 0.0,
        "heading": 1.0 if sources.heading_meas_noise else 0.0,
    }

    C = _initial_augmented(P0, sources)
    out = [true_nav_covariance(C)]
    taus = (imu.tau_a, imu.tau_g)
    for k in range(1, n):
        # Second-order midpoint: average the endpoint system matrices.
        Fx = 0.5 * (
            truth_dispersion_matrix(T_all[k - 1], trajectory.nu_b[k - 1], *taus)
            + truth_dispersion_matrix(T_all[k], trajectory.nu_b[k], *taus)
        )
        Fh = 0.5 * (
            nav_dynamics_matrix(T_all[k - 1], trajectory.nu_b[k - 1], *taus)
            + nav_dynamics_matrix(T_all[k], trajectory.nu_b[k], *taus)
        )
        Fy = 0.5 * (
            measurement_influence_matrix(T_all[k - 1])
            + measurement_influence_matrix(T_all[k])
        )
        Fs, G, W = build_augmented(Fx, Fh, Fy, C_X)
        C = propagate_augmented(C, Fs, G, W, S_eta, S_w, dt)
        for kind, K in schedule.events[k]:
            H = measurement_matrix(kind)
            R = r_scale[kind] * measurement_noise(kind, meas)
            C = update_augmented(C, K, H, R)
        out.append(true_nav_covariance(C))
    return out


def sigma_pd_series(
    scenario, sources: NoiseSourceSet, schedule: GainSchedule | None = None
) -> DetectionSeries:
    """Nominal P_D and sigma_pd per radar along the scenario trajectory.

    `scenario` provides trajectory, P0, imu, meas, radars, rcs.  The gain
    schedule is computed from the all-sources-on filter when not supplied, so
    per-source runs share one schedule and superpose linearly.
    """
    traj = scenario.trajectory
    if schedule is None:
        schedule = gain_schedule(traj, scenario.P0, scenario.imu, scenario.meas)
    p_true = run_dispersion(
        traj, scenario.P0, scenario.imu, scenario.meas, sources, schedule
    )
    n = len(traj)
    radars = scenario.radars
    crr = [_effective_crr(r, sources) for r in radars]
    pd_nom = np.zeros((len(radars), n))
    sig = np.zeros((len(radars), n))
    for k in range(n):
        pose = AircraftPose(traj.p_n[k], traj.theta[k])
        C_aa = aircraft_covariance(p_true[k])
        for i, radar in enumerate(radars):
            stats = detection_stats(pose, radar, scenario.rcs, C_aa)
            pd_nom[i, k] = stats.pd_nominal
            A_a = jacobian_aircraft(pose, radar, scenario.rcs)
            A_r = jacobian_radar(pose, radar, scenario.rcs)
            var = float(A_a @ C_aa @ A_a + A_r @ crr[i] @ A_r)
            sig[i, k] = np.sqrt(max(var, 0.0))
    return DetectionSeries(np.asarray(traj.t, float), pd_nom, sig)


def error_budget(scenario, t_snapshot: float, sources: NoiseSourceSet | None = None) -> ErrorBudget:
    """Per-source 3-sigma_pd contributions at one time snapshot.

    Runs the dispersion model once with all configured sources on and once per
    active source, all under the same gain schedule.  The reported radar is
    the one with the largest all-on sigma_pd at the snapshot.
    """
    traj = scenario.trajectory
    t = np.asarray(traj.t, float)
    if not (t[0] <= t_snapshot <= t[-1]):
        raise ConfigError("t_snapshot outside the trajectory span")
    idx = int(np.argmin(np.abs(t - t_snapshot)))
    base = NoiseSourceSet.all_on() if sources is None else sources
    schedule = gain_schedule(traj, scenario.P0, scenario.imu, scenario.meas)
    total_series = sigma_pd_series(scenario, base, schedule)
    radar_index = int(np.argmax(total_series.sigma_pd[:, idx]))
    total3 = 3.0 * float(total_series.sigma_pd[radar_index, idx])
    sigma3: dict[str, float] = {}
    for name in base.active():
        series = sigma_pd_series(scenario, NoiseSourceSet.only(name), schedule)
        sigma3[name] = 3.0 * float(series.sigma_pd[radar_index, idx])
    percent = {
        name: (100.0 * v / total3 if total3 > 0.0 else 0.0)
        for name, v in sigma3.items()
    }
    return ErrorBudget(
        t_snapshot=float(t[idx]),
        radar_index=radar_index,
        sigma3_by_source=sigma3,
        total_sigma3=total3,
        percent_by_source=percent,
        gain_checksum=schedule.checksum(),
    )
