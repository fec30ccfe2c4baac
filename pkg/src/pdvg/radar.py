"""Single-pulse radar detection model with an ellipsoid RCS target.

Implements the detection probability

    P_D = 0.5 * erfc(sqrt(-ln P_fa) - sqrt(S + 0.5)),    S = c_r * sigma_r / (k * R^4)

with the aspect-dependent ellipsoid radar cross section, the closed-form
Jacobians of P_D with respect to the aircraft state [p_a^n, Theta_a] and the
radar state [p_r^n, c_r], the detection-probability variance, and the inverse
problem (radius at which a given P_D is attained).

All functions are pure and operate in SI units (meters, radians).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc, erfcinv

from .errors import DegenerateGeometryError, InfeasibleRadiusError
from .frames import dcm_ned_to_body, dcm_ned_to_body_partials

BOLTZMANN = 1.38e-23  # J/K

# Fraction of range below which the horizontal body-frame offset is considered
# degenerate (radar at nadir/zenith; elevation Jacobian singular).
_DEGENERATE_FRAC = 1e-12


@dataclass
class AircraftPose:
    """Nominal 6-DOF aircraft state: NED position [m] and Euler angles [rad]."""

    p_n: np.ndarray  # (3,) NED position, m
    theta: np.ndarray  # (3,) roll, pitch, yaw, rad

    def __post_init__(self):
        self.p_n = np.asarray(self.p_n, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)
        if not (np.all(np.isfinite(self.p_n)) and np.all(np.isfinite(self.theta))):
            raise ValueError("pose must be finite")
        if abs(self.theta[0]) >= np.pi or abs(self.theta[1]) >= np.pi / 2:
            raise ValueError("roll/pitch out of range (gimbal lock region)")


@dataclass
class RadarSite:
    """Ground radar: NED position, lumped radar constant, false-alarm rate."""

    p_n: np.ndarray  # (3,) NED position, m
    c_r: float  # lumped radar constant, J*m^2/K
    p_fa: float  # probability of false alarm
    C_rr: np.ndarray = field(default_factory=lambda: np.zeros((4, 4)))  # cov of [p_r, c_r]

    def __post_init__(self):
        self.p_n = np.asarray(self.p_n, dtype=float)
        self.C_rr = np.asarray(self.C_rr, dtype=float)
        if self.c_r <= 0.0:
            raise ValueError("radar constant must be positive")
        if not 0.0 < self.p_fa < 1.0:
            raise ValueError("false-alarm probability must be in (0, 1)")
        if self.C_rr.shape != (4, 4) or not np.allclose(self.C_rr, self.C_rr.T):
            raise ValueError("C_rr must be a symmetric 4x4 matrix")


@dataclass(frozen=True)
class EllipsoidRcs:
    """Ellipsoid target semi-axes: a forward, b side, c up, meters."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        if min(self.a, self.b, self.c) <= 0.0:
            raise ValueError("ellipsoid axes must be positive")


@dataclass(frozen=True)
class RcsAngles:
    """Aspect of the radar seen from the body frame: azimuth alpha, elevation phi."""

    alpha: float
    phi: float


@dataclass(frozen=True)
class DetectionStats:
    """Nominal detection probability and its 1-sigma uncertainty."""

    pd_nominal: float
    sigma_pd: float


def slant_range(p_a: np.ndarray, p_r: np.ndarray) -> float:
    """Euclidean distance between aircraft and radar positions, m."""
    return float(np.linalg.norm(np.asarray(p_a, float) - np.asarray(p_r, float)))


def snr(c_r: float, sigma_r: float, rng_m) -> float:
    """Signal-to-noise ratio S = c_r * sigma_r / (k * R^4)."""
    rng_m = np.asarray(rng_m, dtype=float)
    if np.any(rng_m <= 0.0):
        raise ValueError("range must be positive")
    out = c_r * sigma_r / (BOLTZMANN * rng_m ** 4)
    return float(out) if out.ndim == 0 else out


def probability_of_detection(snr_value, p_fa: float):
    """Single-pulse detection probability for SNR >= 0 and P_fa in (0, 1)."""
    s = np.asarray(snr_value, dtype=float)
    out = 0.5 * erfc(np.sqrt(-np.log(p_fa)) - np.sqrt(s + 0.5))
    return float(out) if out.ndim == 0 else out


def rcs_ellipsoid(rcs: EllipsoidRcs, ang: RcsAngles) -> float:
    """Aspect-dependent ellipsoid RCS, m^2."""
    a, b, c = rcs.a, rcs.b, rcs.c
    sa, ca = np.sin(ang.alpha), np.cos(ang.alpha)
    sp, cp = np.sin(ang.phi), np.cos(ang.phi)
    denom = (a * sa * cp) ** 2 + (b * sa * sp) ** 2 + (c * ca) ** 2
    return float(np.pi * (a * b * c) ** 2 / denom ** 2)


def rcs_angles(pose: AircraftPose, p_r: np.ndarray) -> RcsAngles:
    """Azimuth/elevation of the radar in the aircraft body frame."""
    rho = _body_offset(pose, p_r)
    alpha = np.arctan2(rho[1], rho[0])
    phi = np.arctan2(rho[2], np.hypot(rho[0], rho[1]))
    return RcsAngles(float(alpha), float(phi))


def _body_offset(pose: AircraftPose, p_r: np.ndarray) -> np.ndarray:
    """rho_r^b = T_n^b (p_r - p_a); errors out on zero range."""
    p_delta = np.asarray(p_r, float) - pose.p_n
    if not np.any(p_delta):
        raise DegenerateGeometryError("aircraft and radar positions coincide")
    return dcm_ned_to_body(pose.theta) @ p_delta


def _pd_snr_partial(s: float, p_fa: float) -> float:
    """dP_D/dS at SNR s."""
    w = np.sqrt(-np.log(p_fa)) - np.sqrt(s + 0.5)
    return float(np.exp(-w * w) / (2.0 * np.sqrt(np.pi) * np.sqrt(s + 0.5)))


def _rcs_partials(rcs: EllipsoidRcs, alpha: float, phi: float) -> tuple[float, float]:
    """(d sigma_r / d alpha, d sigma_r / d phi) for the ellipsoid model."""
    a, b, c = rcs.a, rcs.b, rcs.c
    sa, ca = np.sin(alpha), np.cos(alpha)
    sp, cp = np.sin(phi), np.cos(phi)
    denom = (a * sa * cp) ** 2 + (b * sa * sp) ** 2 + (c * ca) ** 2
    num = np.pi * (a * b * c) ** 2
    kap = (a * cp) ** 2 + (b * sp) ** 2 - c * c
    d_alpha = -2.0 * num * np.sin(2.0 * alpha) * kap / denom ** 3
    d_phi = -2.0 * num * (b * b - a * a) * sa * sa * np.sin(2.0 * phi) / denom ** 3
    return float(d_alpha), float(d_phi)


def _geometry(pose: AircraftPose, radar: RadarSite, rcs: EllipsoidRcs):
    """Shared intermediate quantities for both Jacobians."""
    p_delta = radar.p_n - pose.p_n
    rng_m = float(np.linalg.norm(p_delta))
    if rng_m <= 0.0:
        raise DegenerateGeometryError("aircraft and radar positions coincide")
    T_nb = dcm_ned_to_body(pose.theta)
    rho = T_nb @ p_delta
    rx, ry, rz = rho
    hxy2 = rx * rx + ry * ry
    if hxy2 <= (_DEGENERATE_FRAC * rng_m) ** 2:
        raise DegenerateGeometryError(
            "radar at nadir/zenith: elevation-angle Jacobian is singular")
    hxy = np.sqrt(hxy2)
    alpha = float(np.arctan2(ry, rx))
    phi = float(np.arctan2(rz, hxy))
    sigma_r = rcs_ellipsoid(rcs, RcsAngles(alpha, phi))
    s = snr(radar.c_r, sigma_r, rng_m)
    dpd_ds = _pd_snr_partial(s, radar.p_fa)
    ds_dr = -4.0 * radar.c_r * sigma_r / (BOLTZMANN * rng_m ** 5)
    ds_dsigma = radar.c_r / (BOLTZMANN * rng_m ** 4)
    dsig_da, dsig_dp = _rcs_partials(rcs, alpha, phi)
    # angle partials with respect to the body-frame offset rho
    dalpha_drho = np.array([-ry, rx, 0.0]) / hxy2
    dphi_drho = np.array([-rx * rz, -ry * rz, hxy2]) / (rng_m * rng_m * hxy)
    # sigma_r partial w.r.t. rho via both angles
    dsig_drho = dsig_da * dalpha_drho + dsig_dp * dphi_drho
    return p_delta, rng_m, T_nb, dpd_ds, ds_dr, ds_dsigma, dsig_drho, sigma_r


def jacobian_aircraft(pose: AircraftPose, radar: RadarSite,
                      rcs: EllipsoidRcs) -> np.ndarray:
    """Row vector dP_D/d[p_a^n, Theta_a], shape (6,)."""
    (p_delta, rng_m, T_nb, dpd_ds, ds_dr, ds_dsigma,
     dsig_drho, _) = _geometry(pose, radar, rcs)
    dr_dpa = -p_delta / rng_m
    # rho = T_n^b (p_r - p_a): position moves through -T_n^b,
    # attitude through the exact rotation-matrix partials.
    dsig_dpa = dsig_drho @ (-T_nb)
    dT = dcm_ned_to_body_partials(pose.theta)
    dsig_dtheta = np.array([dsig_drho @ (dT[i] @ p_delta) for i in range(3)])
    jac = np.empty(6)
    jac[:3] = dpd_ds * (ds_dr * dr_dpa + ds_dsigma * dsig_dpa)
    jac[3:] = dpd_ds * ds_dsigma * dsig_dtheta
    return jac


def jacobian_radar(pose: AircraftPose, radar: RadarSite,
                   rcs: EllipsoidRcs) -> np.ndarray:
    """Row vector dP_D/d[p_r^n, c_r], shape (4,)."""
    (p_delta, rng_m, T_nb, dpd_ds, ds_dr, ds_dsigma,
     dsig_drho, sigma_r) = _geometry(pose, radar, rcs)
    dr_dpr = p_delta / rng_m
    dsig_dpr = dsig_drho @ T_nb
    jac = np.empty(4)
    jac[:3] = dpd_ds * (ds_dr * dr_dpr + ds_dsigma * dsig_dpr)
    jac[3] = dpd_ds * sigma_r / (BOLTZMANN * rng_m ** 4)
    return jac


def pd_variance(jac_aircraft: np.ndarray, C_aa: np.ndarray,
                jac_radar: np.ndarray, C_rr: np.ndarray) -> float:
    """sigma_pd^2 = A_Pa C_aa A_Pa^T + A_Pr C_rr A_Pr^T."""
    var = float(jac_aircraft @ C_aa @ jac_aircraft + jac_radar @ C_rr @ jac_radar)
    # guard against round-off driving a PSD quadratic form slightly negative
    return max(var, 0.0)


def detection_radius(pd_target: float, sigma_r: float, c_r: float,
                     p_fa: float) -> float:
    """Range at which probability_of_detection equals pd_target.

    Inverts the detection model:
        R = (c_r * sigma_r / (k * ((erfcinv(2 p) - sqrt(-ln P_fa))^2 - 0.5)))^(1/4)
    """
    if not 0.0 < pd_target < 1.0:
        raise InfeasibleRadiusError("pd_target must be in (0, 1)")
    w_fa = np.sqrt(-np.log(p_fa))
    w = float(erfcinv(2.0 * pd_target))
    if w >= w_fa:
        raise InfeasibleRadiusError(
            "pd_target below the zero-SNR floor; no finite radius attains it")
    s = (w - w_fa) ** 2 - 0.5
    if s <= 0.0:
        raise InfeasibleRadiusError(
            "pd_target requires non-positive SNR; no radius attains it")
    return float((c_r * sigma_r / (BOLTZMANN * s)) ** 0.25)


def detection_stats(pose: AircraftPose, radar: RadarSite, rcs: EllipsoidRcs,
                    C_aa: np.ndarray) -> DetectionStats:
    """Nominal P_D and sigma_pd at a pose, folding in both covariances."""
    rng_m = slant_range(pose.p_n, radar.p_n)
    sigma_r = rcs_ellipsoid(rcs, rcs_angles(pose, radar.p_n))
    pd = probability_of_detection(snr(radar.c_r, sigma_r, rng_m), radar.p_fa)
    var = pd_variance(jacobian_aircraft(pose, radar, rcs), C_aa,
                      jacobian_radar(pose, radar, rcs), radar.C_rr)
    return DetectionStats(float(pd), float(np.sqrt(var)))
