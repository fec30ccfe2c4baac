"""Waypoint smoothing and trajectory sampling.

2-D waypoint plans are smoothed into G2-continuous chains of lines, arcs, and
clothoids (curvature-continuous fillets), then sampled at constant speed into
time-stamped nav states together with the true specific force nu^b and body
rates omega^b that a perfect IMU would measure. Axes: x = north, y = east,
heading psi measured from north toward east; altitude is constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import fresnel

from .errors import SmoothingError
from .frames import GRAVITY, dcm_ned_to_body, wrap_angle

_KAPPA_RATE_EPS = 1e-15  # below this, treat a segment as constant curvature
_TURN_EPS = 1e-12  # heading changes below this need no fillet


@dataclass
class WaypointPath:
    """Ordered 2-D waypoints [m NE] flown at constant speed and altitude."""

    points: np.ndarray  # (n, 2) north/east, m
    altitude: float  # m above the NED origin plane (p_d = -altitude)
    speed: float  # m/s

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        if len(self.points) < 2:
            raise ValueError("need at least two waypoints")
        if self.speed <= 0.0:
            raise ValueError("speed must be positive")
        legs = np.diff(self.points, axis=0)
        if np.any(np.hypot(legs[:, 0], legs[:, 1]) == 0.0):
            raise ValueError("consecutive waypoints must be distinct")


@dataclass(frozen=True)
class PathSegment:
    """One piece of a smoothed path with curvature linear in arc length."""

    kind: str  # "line" | "arc" | "clothoid"
    x0: float
    y0: float
    psi0: float
    kappa0: float  # 1/m
    kappa_rate: float  # 1/m^2, zero for line/arc
    length: float  # m


@dataclass
class Trajectory:
    """Sampled trajectory as a structure of arrays (one row per sample)."""

    t: np.ndarray  # (n,)
    p_n: np.ndarray  # (n, 3) NED position, m
    v_n: np.ndarray  # (n, 3) NED velocity, m/s
    theta: np.ndarray  # (n, 3) roll/pitch/yaw, rad
    nu_b: np.ndarray  # (n, 3) true specific force, m/s^2
    omega_b: np.ndarray  # (n, 3) true body rates, rad/s
    kappa: np.ndarray  # (n,) path curvature, 1/m
    dt: float
    speed: float

    def __len__(self):
        return len(self.t)

    def __getitem__(self, i):
        return TrajectorySample(self.t[i], self.p_n[i], self.v_n[i],
                                self.theta[i], self.nu_b[i], self.omega_b[i],
                                self.kappa[i])


@dataclass(frozen=True)
class TrajectorySample:
    t: float
    p_n: np.ndarray
    v_n: np.ndarray
    theta: np.ndarray
    nu_b: np.ndarray
    omega_b: np.ndarray
    kappa: float


# ---------------------------------------------------------------------------
# Segment evaluation
# ---------------------------------------------------------------------------

def _eval_segment(seg: PathSegment, s):
    """Position, heading, curvature at arc length(s) s in [0, length]."""
    s = np.asarray(s, dtype=float)
    psi = seg.psi0 + seg.kappa0 * s + 0.5 * seg.kappa_rate * s * s
    kappa = seg.kappa0 + seg.kappa_rate * s
    if abs(seg.kappa_rate) < _KAPPA_RATE_EPS:
        if abs(seg.kappa0) < _KAPPA_RATE_EPS:
            x = seg.x0 + s * np.cos(seg.psi0)
            y = seg.y0 + s * np.sin(seg.psi0)
        else:
            k = seg.kappa0
            x = seg.x0 + (np.sin(seg.psi0 + k * s) - np.sin(seg.psi0)) / k
            y = seg.y0 - (np.cos(seg.psi0 + k * s) - np.cos(seg.psi0)) / k
        return x, y, psi, kappa

    # General clothoid via Fresnel integrals. Complete the square:
    # psi(xi) = c0 + sgn * (pi/2) * u(xi)^2 with u affine in xi.
    kr = seg.kappa_rate
    sgn = np.sign(kr)
    scale = np.sqrt(np.pi / abs(kr))
    c0 = seg.psi0 - seg.kappa0 ** 2 / (2.0 * kr)
    u0 = (seg.kappa0 / kr) / scale
    u1 = (s + seg.kappa0 / kr) / scale
    s_f1, c_f1 = fresnel(u1)
    s_f0, c_f0 = fresnel(u0)
    dc = c_f1 - c_f0
    ds = s_f1 - s_f0
    cos0, sin0 = np.cos(c0), np.sin(c0)
    # int cos(c0 +/- (pi/2) u^2) = cos(c0) C(u) -/+ sin(c0) S(u)   (times scale)
    x = seg.x0 + scale * (cos0 * dc - sgn * sin0 * ds)
    y = seg.y0 + scale * (sin0 * dc + sgn * cos0 * ds)
    return x, y, psi, kappa


def clothoid_point(s: float, seg: PathSegment):
    """(x, y, psi, kappa) at arc length s along a segment."""
    if not 0.0 <= s <= seg.length * (1.0 + 1e-12):
        raise ValueError(f"arc length {s} outside [0, {seg.length}]")
    x, y, psi, kappa = _eval_segment(seg, min(s, seg.length))
    return float(x), float(y), float(psi), float(kappa)


def _segment_end(seg: PathSegment):
    x, y, psi, _ = _eval_segment(seg, seg.length)
    return float(x), float(y), float(psi)


def coordinated_turn_roll(psi_dot: float, speed: float) -> float:
    """Bank angle of a coordinated turn at the given heading rate."""
    if speed <= 0.0:
        raise ValueError("speed must be positive")
    return float(np.arctan(psi_dot * speed / GRAVITY))


# ---------------------------------------------------------------------------
# Fillet construction
# ---------------------------------------------------------------------------

def _fillet_segments(turn: float, kappa_max: float, kappa_rate_max: float):
    """Local fillet (start at origin, heading 0) turning by `turn` radians.

    Returns (segments, endpoint x, endpoint y, setback d) where d is the
    distance from the fillet start/end to the waypoint corner along each leg.
    """
    sgn = 1.0 if turn >= 0.0 else -1.0
    mag = abs(turn)
    kappa_peak = min(kappa_max, np.sqrt(kappa_rate_max * mag))
    ramp_len = kappa_peak / kappa_rate_max
    arc_turn = mag - kappa_peak ** 2 / kappa_rate_max
    segs = [PathSegment("clothoid", 0.0, 0.0, 0.0, 0.0,
                        sgn * kappa_rate_max, ramp_len)]
    x, y, psi = _segment_end(segs[-1])
    if arc_turn > 1e-14:
        segs.append(PathSegment("arc", x, y, psi, sgn * kappa_peak, 0.0,
                                arc_turn / kappa_peak))
        x, y, psi = _segment_end(segs[-1])
    segs.append(PathSegment("clothoid", x, y, psi, sgn * kappa_peak,
                            -sgn * kappa_rate_max, ramp_len))
    x, y, _ = _segment_end(segs[-1])
    d = y / np.sin(turn)
    return segs, x, y, d


def _transform(segs, dx, dy, rot):
    """Rigidly move local fillet segments into the global frame."""
    c, s = np.cos(rot), np.sin(rot)
    out = []
    for seg in segs:
        gx = dx + c * seg.x0 - s * seg.y0
        gy = dy + s * seg.x0 + c * seg.y0
        out.append(PathSegment(seg.kind, gx, gy, seg.psi0 + rot, seg.kappa0,
                               seg.kappa_rate, seg.length))
    return out


def smooth_waypoints(path: WaypointPath, kappa_max: float,
                     kappa_rate_max: float) -> list[PathSegment]:
    """Smooth a waypoint polyline with symmetric clothoid-arc-clothoid fillets.

    The arc is omitted for shallow turns where the curvature peak reachable at
    kappa_rate_max stays below kappa_max. Raises SmoothingError when a fillet
    does not fit on a leg.
    """
    if kappa_max <= 0.0 or kappa_rate_max <= 0.0:
        raise ValueError("curvature limits must be positive")
    pts = path.points
    n = len(pts)
    legs = np.diff(pts, axis=0)
    leg_len = np.hypot(legs[:, 0], legs[:, 1])
    headings = np.arctan2(legs[:, 1], legs[:, 0])

    fillets = [None] * n  # interior waypoints only
    setback = np.zeros(n)
    for i in range(1, n - 1):
        turn = float(wrap_angle(headings[i] - headings[i - 1]))
        if abs(turn) < _TURN_EPS:
            continue
        if abs(turn) >= np.pi - 1e-9:
            raise SmoothingError(i, "turn angle must be below pi")
        segs, _, _, d = _fillet_segments(turn, kappa_max, kappa_rate_max)
        fillets[i] = segs
        setback[i] = d

    for j in range(n - 1):
        need = setback[j] + setback[j + 1] if j + 1 < n else setback[j]
        if need > leg_len[j] * (1.0 + 1e-9):
            raise SmoothingError(j + 1, "fillet does not fit on the leg "
                                 f"({need:.1f} m needed, {leg_len[j]:.1f} m available)")

    chain: list[PathSegment] = []
    cursor = pts[0]
    for i in range(1, n):
        leg_dir = legs[i - 1] / leg_len[i - 1]
        fillet_start = pts[i] - setback[i] * leg_dir if i < n - 1 else pts[i]
        straight = float(np.linalg.norm(fillet_start - cursor))
        if straight > 1e-9:
            chain.append(PathSegment("line", cursor[0], cursor[1],
                                     headings[i - 1], 0.0, 0.0, straight))
        if i < n - 1 and fillets[i] is not None:
            placed = _transform(fillets[i], fillet_start[0], fillet_start[1],
                                headings[i - 1])
            chain.extend(placed)
            ex, ey, _ = _segment_end(placed[-1])
            cursor = np.array([ex, ey])
        else:
            cursor = np.asarray(fillet_start, dtype=float)
    return chain


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def sample_trajectory(segments: list[PathSegment], speed: float, dt: float,
                      altitude: float, pitch_trim: float = 0.0) -> Trajectory:
    """Sample a segment chain at constant speed every dt seconds.

    Emits nominal nav states plus the true IMU signals of the coordinated-turn
    kinematics. At segment joints the curvature rate (hence omega_x) takes its
    left limit.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    lengths = np.array([seg.length for seg in segments])
    ends = np.cumsum(lengths)
    total = ends[-1]
    n = int(np.floor(total / (speed * dt) + 1e-9)) + 1
    t = np.arange(n) * dt
    s = np.minimum(t * speed, total)

    # segment index with left-limit convention at joints
    idx = np.searchsorted(ends, s, side="left")
    idx = np.minimum(idx, len(segments) - 1)
    starts = ends - lengths

    x = np.empty(n)
    y = np.empty(n)
    psi = np.empty(n)
    kappa = np.empty(n)
    kappa_rate = np.empty(n)
    for j in np.unique(idx):
        m = idx == j
        xj, yj, pj, kj = _eval_segment(segments[j], s[m] - starts[j])
        x[m], y[m], psi[m], kappa[m] = xj, yj, pj, kj
        kappa_rate[m] = segments[j].kappa_rate

    psi_dot = speed * kappa
    roll = np.arctan(psi_dot * speed / GRAVITY)
    pitch = np.full(n, pitch_trim)

    p_n = np.column_stack([x, y, np.full(n, -altitude)])
    v_n = speed * np.column_stack([np.cos(psi), np.sin(psi), np.zeros(n)])
    theta = np.column_stack([roll, pitch, psi])

    # specific force in NED: centripetal acceleration minus gravity
    f_n = np.column_stack([-speed * psi_dot * np.sin(psi),
                           speed * psi_dot * np.cos(psi),
                           np.full(n, -GRAVITY)])
    nu_b = np.empty((n, 3))
    for k in range(n):
        nu_b[k] = dcm_ned_to_body(theta[k]) @ f_n[k]

    sph, cph = np.sin(roll), np.cos(roll)
    sth, cth = np.sin(pitch), np.cos(pitch)
    # Roll rate: analytically phi_dot = psi_ddot * (speed/g) * cos^2(phi), which
    # jumps wherever the curvature rate does (segment joints). Emitting that
    # instantaneous value makes the sampled gyro signal non-integrable at the
    # joints, so the roll-rate term is formed by centered differencing of the
    # sampled roll instead: identical to the analytic rate to O(dt^2) inside
    # segments, and spreading each jump over the two straddling samples so that
    # integrating the emitted rates reproduces the sampled attitude.
    roll_rate = np.gradient(roll, dt) if n > 1 else np.zeros(n)
    omega_b = np.column_stack([
        roll_rate - psi_dot * sth,
        psi_dot * sph * cth,
        psi_dot * cph * cth,
    ])
    return Trajectory(t, p_n, v_n, theta, nu_b, omega_b, kappa, dt, speed)


def path_length(segments: list[PathSegment]) -> float:
    return float(sum(seg.length for seg in segments))
