"""Scenario configuration: YAML parsing, unit conversion, serialization.

A scenario document is a single YAML mapping mirroring the parameter tables:
radar sites, the ellipsoid RCS axes, aircraft/trajectory parameters, IMU
grade, aiding-measurement specification with GPS-denied rectangles, initial
covariance, and planner parameters.  Numeric keys may carry a unit suffix
(_m, _km, _s, _hr, _deg, _rad, _mps, _hz); values are converted to SI
(m, rad, s) on load and all internal values are SI.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import ConfigError
from .ins import DeniedRegion, ImuSpec, MeasSpec, NavCovariance
from .planner import Bounds
from .radar import EllipsoidRcs, RadarSite
from .trajectory import WaypointPath, sample_trajectory, smooth_waypoints

__all__ = [
    "Scenario",
    "EvalContext",
    "parse_scenario",
    "load_scenario",
    "serialize_scenario",
    "bundled_scenarios",
    "bundled_scenario_path",
]

_REQUIRED = object()

# multiply a value carrying this suffix by the factor to get SI
_UNIT_FACTORS = {
    "m": 1.0,
    "km": 1000.0,
    "s": 1.0,
    "hr": 3600.0,
    "deg": np.pi / 180.0,
    "rad": 1.0,
    "mps": 1.0,
    "hz": 1.0,
}


@dataclass(frozen=True)
class EvalContext:
    """A scenario bound to one sampled trajectory, as the analysis modules
    (lincov.sigma_pd_series, lincov.error_budget, montecarlo.run_ensemble)
    consume it."""

    trajectory: object
    P0: NavCovariance
    imu: ImuSpec
    meas: MeasSpec
    radars: tuple
    rcs: EllipsoidRcs


@dataclass
class Scenario:
    """Fully validated, SI-unit scenario."""

    name: str
    radar_ids: tuple
    radars: tuple  # RadarSite
    rcs: EllipsoidRcs
    imu_grade: str
    imu: ImuSpec
    meas: MeasSpec
    P0: NavCovariance
    # trajectory parameters
    speed: float
    dt: float
    kappa_max: float
    kappa_rate_max: float
    pitch_trim: float
    # planner parameters
    start: np.ndarray  # (3,) NED
    goal: np.ndarray  # (3,) NED
    bounds: Bounds
    p_dt: float
    m_sigma: float
    pd_init: float
    sigma_r_init: float
    n_vertices: int
    max_iterations: int
    waypoints: np.ndarray | None = None  # optional fixed (w, 2) NE path
    notes: str = ""

    @property
    def altitude(self) -> float:
        return -float(self.start[2])

    def build_trajectory(self, waypoints=None, dt=None):
        """Smooth and sample a path: explicit waypoints, the scenario's fixed
        waypoints, or the straight start-goal segment."""
        if waypoints is None:
            waypoints = self.waypoints
        if waypoints is None:
            waypoints = np.array([self.start[:2], self.goal[:2]])
        pts = np.asarray(waypoints, dtype=float)[:, :2]
        path = WaypointPath(pts, altitude=self.altitude, speed=self.speed)
        segments = smooth_waypoints(path, self.kappa_max, self.kappa_rate_max)
        return sample_trajectory(
            segments, self.speed, self.dt if dt is None else float(dt),
            self.altitude, self.pitch_trim,
        )

    def evaluation(self, waypoints=None, dt=None) -> EvalContext:
        return EvalContext(
            trajectory=self.build_trajectory(waypoints, dt),
            P0=self.P0,
            imu=self.imu,
            meas=self.meas,
            radars=self.radars,
            rcs=self.rcs,
        )


# ---------------------------------------------------------------------------
# Parsing helpers
# ---------------------------------------------------------------------------


def _fail(path: str, message: str):
    raise ConfigError(f"{path}: {message}")


def _mapping(node, path: str) -> dict:
    if node is None:
        return {}
    if not isinstance(node, dict):
        _fail(path, "expected a mapping")
    return node


def _quantity(d: dict, base: str, path: str, default=_REQUIRED, *,
              units=("",), shape=None):
    """Fetch `base` or `base_<unit>` from d, scaled to SI.

    `units` lists allowed suffixes; "" permits the bare key (dimensionless).
    `shape` of None means scalar, an int means a flat vector of that length.
    """
    hits = []
    for u in units:
        key = base if u == "" else f"{base}_{u}"
        if key in d:
            hits.append((key, u))
    if not hits:
        if default is _REQUIRED:
            expected = ", ".join(
                base if u == "" else f"{base}_{u}" for u in units
            )
            _fail(path, f"missing required key (one of: {expected})")
        return default
    if len(hits) > 1:
        _fail(path, f"conflicting keys: {', '.join(k for k, _ in hits)}")
    key, unit = hits[0]
    factor = 1.0 if unit == "" else _UNIT_FACTORS[unit]
    raw = d[key]
    try:
        value = np.asarray(raw, dtype=float) * factor
    except (TypeError, ValueError):
        _fail(f"{path}.{key}", "expected a number or list of numbers")
    if shape is None:
        if value.ndim != 0:
            _fail(f"{path}.{key}", "expected a scalar")
        return float(value)
    value = np.atleast_1d(value)
    if value.ndim != 1 or value.size != shape:
        _fail(f"{path}.{key}", f"expected {shape} numbers")
    return value


def _known_keys(d: dict, allowed: set, path: str):
    unknown = set(d) - allowed
    if unknown:
        _fail(path, f"unknown keys: {', '.join(sorted(unknown))}")


def _expand_allowed(bases_units: dict) -> set:
    out = set()
    for base, units in bases_units.items():
        for u in units:
            out.add(base if u == "" else f"{base}_{u}")
    return out


def parse_scenario(text: str) -> Scenario:
    """Parse and validate a YAML scenario document."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError(f"invalid YAML: {err}") from err
    doc = _mapping(doc, "<root>")
    _known_keys(
        doc,
        {
            "name", "notes", "radars", "rcs", "aircraft", "imu",
            "measurements", "initial_covariance", "planner",
            "waypoints_m", "waypoints_km",
        },
        "<root>",
    )
    name = str(doc.get("name", "scenario"))
    notes = str(doc.get("notes", ""))

    # --- radars ---
    radar_nodes = doc.get("radars")
    if not isinstance(radar_nodes, list) or not radar_nodes:
        _fail("radars", "expected a non-empty list of radar mappings")
    radars, radar_ids = [], []
    for i, node in enumerate(radar_nodes):
        path = f"radars[{i}]"
        node = _mapping(node, path)
        _known_keys(
            node,
            _expand_allowed(
                {
                    "id": ("",), "position": ("m", "km"),
                    "radar_constant": ("",), "p_fa": ("",),
                    "sigma_position": ("m", "km"), "sigma_constant": ("",),
                }
            ),
            path,
        )
        rid = str(node.get("id", f"radar{i + 1}"))
        pos = _quantity(node, "position", path, units=("m", "km"), shape=3)
        c_r = _quantity(node, "radar_constant", path, default=164.7)
        p_fa = _quantity(node, "p_fa", path, default=1e-9)
        s_pr = _quantity(
            node, "sigma_position", path, default=500.0 / 3.0, units=("m", "km")
        )
        s_cr = _quantity(node, "sigma_constant", path, default=2.0 / 3.0)
        if c_r <= 0.0:
            _fail(path, "radar_constant must be positive")
        if not 0.0 < p_fa < 1.0:
            _fail(path, "p_fa must be in (0, 1)")
        if s_pr < 0.0 or s_cr < 0.0:
            _fail(path, "sigma values must be non-negative")
        radar_ids.append(rid)
        radars.append(
            RadarSite(
                p_n=pos, c_r=c_r, p_fa=p_fa,
                C_rr=np.diag([s_pr**2] * 3 + [s_cr**2]),
            )
        )
    if len(set(radar_ids)) != len(radar_ids):
        _fail("radars", "duplicate radar id")

    # --- rcs ---
    rn = _mapping(doc.get("rcs"), "rcs")
    _known_keys(rn, {"a_m", "b_m", "c_m"}, "rcs")
    rcs = EllipsoidRcs(
        a=_quantity(rn, "a", "rcs", default=0.18, units=("m",)),
        b=_quantity(rn, "b", "rcs", default=0.17, units=("m",)),
        c=_quantity(rn, "c", "rcs", default=0.20, units=("m",)),
    )

    # --- aircraft / trajectory ---
    an = _mapping(doc.get("aircraft"), "aircraft")
    _known_keys(
        an,
        _expand_allowed(
            {
                "speed": ("mps",), "dt": ("s",), "kappa_max": ("",),
                "kappa_rate_max": ("",), "pitch_trim": ("deg", "rad"),
            }
        ),
        "aircraft",
    )
    speed = _quantity(an, "speed", "aircraft", default=200.0, units=("mps",))
    dt = _quantity(an, "dt", "aircraft", default=0.1, units=("s",))
    kappa_max = _quantity(an, "kappa_max", "aircraft", default=1.0 / 5000.0)
    kappa_rate_max = _quantity(
        an, "kappa_rate_max", "aircraft", default=1.0 / 4.0e6
    )
    pitch_trim = _quantity(
        an, "pitch_trim", "aircraft", default=0.0, units=("deg", "rad")
    )
    if speed <= 0.0 or dt <= 0.0:
        _fail("aircraft", "speed and dt must be positive")
    if kappa_max <= 0.0 or kappa_rate_max <= 0.0:
        _fail("aircraft", "curvature limits must be positive")

    # --- imu ---
    inode = _mapping(doc.get("imu"), "imu")
    _known_keys(inode, {"grade", "tau_a_s", "tau_g_s"}, "imu")
    grade = str(inode.get("grade", "tactical")).lower()
    tau_a = _quantity(inode, "tau_a", "imu", default=3600.0, units=("s",))
    tau_g = _quantity(inode, "tau_g", "imu", default=3600.0, units=("s",))
    makers = {"industrial": ImuSpec.industrial, "tactical": ImuSpec.tactical}
    if grade not in makers:
        _fail("imu.grade", f"unknown grade {grade!r} (industrial or tactical)")
    imu = makers[grade](tau_a=tau_a, tau_g=tau_g)

    # --- measurements ---
    mn = _mapping(doc.get("measurements"), "measurements")
    _known_keys(
        mn,
        _expand_allowed(
            {
                "sigma_north": ("m",), "sigma_east": ("m",),
                "sigma_down": ("m",), "sigma_altitude": ("m",),
                "sigma_heading": ("deg", "rad"),
                "rate_position": ("hz",), "rate_altitude": ("hz",),
                "rate_heading": ("hz",), "gps_denied": ("",),
            }
        ),
        "measurements",
    )
    denied = []
    for j, rect in enumerate(mn.get("gps_denied") or []):
        rpath = f"measurements.gps_denied[{j}]"
        rect = _mapping(rect, rpath)
        _known_keys(
            rect,
            _expand_allowed({"north": ("m", "km"), "east": ("m", "km")}),
            rpath,
        )
        nr = _quantity(rect, "north", rpath, units=("m", "km"), shape=2)
        er = _quantity(rect, "east", rpath, units=("m", "km"), shape=2)
        if nr[0] >= nr[1] or er[0] >= er[1]:
            _fail(rpath, "range must be [min, max] with min < max")
        denied.append(DeniedRegion(nr[0], nr[1], er[0], er[1]))
    meas = MeasSpec(
        sigma_n=_quantity(mn, "sigma_north", "measurements",
                          default=1.0 / 3.0, units=("m",)),
        sigma_e=_quantity(mn, "sigma_east", "measurements",
                          default=1.0 / 3.0, units=("m",)),
        sigma_d=_quantity(mn, "sigma_down", "measurements",
                          default=1.0, units=("m",)),
        sigma_h=_quantity(mn, "sigma_altitude", "measurements",
                          default=0.1 / 3.0, units=("m",)),
        sigma_psi=_quantity(mn, "sigma_heading", "measurements",
                            default=np.deg2rad(0.1) / 3.0,
                            units=("deg", "rad")),
        rate_position=_quantity(mn, "rate_position", "measurements",
                                default=1.0, units=("hz",)),
        rate_altitude=_quantity(mn, "rate_altitude", "measurements",
                                default=10.0, units=("hz",)),
        rate_heading=_quantity(mn, "rate_heading", "measurements",
                               default=10.0, units=("hz",)),
        gps_denied_regions=tuple(denied),
    )

    # --- initial covariance ---
    pn = _mapping(doc.get("initial_covariance"), "initial_covariance")
    _known_keys(
        pn,
        _expand_allowed(
            {
                "sigma_position": ("m",), "sigma_velocity": ("mps",),
                "sigma_attitude": ("deg", "rad"),
            }
        ),
        "initial_covariance",
    )
    P0 = NavCovariance.initial(
        imu,
        sigma_p=_quantity(pn, "sigma_position", "initial_covariance",
                          default=10.0, units=("m",)),
        sigma_v=_quantity(pn, "sigma_velocity", "initial_covariance",
                          default=0.5, units=("mps",)),
        sigma_theta=_quantity(pn, "sigma_attitude", "initial_covariance",
                              default=np.deg2rad(0.5), units=("deg", "rad")),
    )

    # --- planner ---
    pl = _mapping(doc.get("planner"), "planner")
    _known_keys(
        pl,
        _expand_allowed(
            {
                "start": ("m", "km"), "goal": ("m", "km"),
                "bounds": ("m", "km"), "p_dt": ("",), "m_sigma": ("",),
                "pd_init": ("",), "sigma_r_init": ("",),
                "n_vertices": ("",), "max_iterations": ("",),
            }
        ),
        "planner",
    )
    start = _quantity(pl, "start", "planner",
                      default=np.array([-100e3, -700e3, -3500.0]),
                      units=("m", "km"), shape=3)
    goal = _quantity(pl, "goal", "planner",
                     default=np.array([-400e3, 1650e3, -3500.0]),
                     units=("m", "km"), shape=3)
    bvals = _quantity(pl, "bounds", "planner",
                      default=np.array([-2e6, 2e6, -2e6, 3e6]),
                      units=("m", "km"), shape=4)
    bounds = Bounds(bvals[0], bvals[1], bvals[2], bvals[3])
    n_vertices = _quantity(pl, "n_vertices", "planner", default=30.0)
    max_iterations = _quantity(pl, "max_iterations", "planner", default=25.0)
    if n_vertices != int(n_vertices) or int(n_vertices) < 3:
        _fail("planner.n_vertices", "must be an integer >= 3")
    if max_iterations != int(max_iterations) or int(max_iterations) < 1:
        _fail("planner.max_iterations", "must be a positive integer")
    p_dt = _quantity(pl, "p_dt", "planner", default=0.1)
    pd_init = _quantity(pl, "pd_init", "planner", default=0.1)
    if not 0.0 < p_dt < 1.0 or not 0.0 < pd_init < 1.0:
        _fail("planner", "p_dt and pd_init must be probabilities in (0, 1)")
    for pt, label in ((start, "start"), (goal, "goal")):
        if not bounds.contains(pt[:2]):
            _fail(f"planner.{label}", "lies outside the planning bounds")

    # --- optional fixed waypoints ---
    waypoints = None
    if "waypoints_m" in doc or "waypoints_km" in doc:
        if "waypoints_m" in doc and "waypoints_km" in doc:
            _fail("<root>", "conflicting keys: waypoints_m, waypoints_km")
        key = "waypoints_m" if "waypoints_m" in doc else "waypoints_km"
        factor = 1.0 if key == "waypoints_m" else 1000.0
        try:
            waypoints = np.asarray(doc[key], dtype=float) * factor
        except (TypeError, ValueError):
            _fail(key, "expected a list of [north, east] pairs")
        if waypoints.ndim != 2 or waypoints.shape[1] != 2 or len(waypoints) < 2:
            _fail(key, "expected at least two [north, east] pairs")

    return Scenario(
        name=name,
        notes=notes,
        radar_ids=tuple(radar_ids),
        radars=tuple(radars),
        rcs=rcs,
        imu_grade=grade,
        imu=imu,
        meas=meas,
        P0=P0,
        speed=speed,
        dt=dt,
        kappa_max=kappa_max,
        kappa_rate_max=kappa_rate_max,
        pitch_trim=pitch_trim,
        start=start,
        goal=goal,
        bounds=bounds,
        p_dt=p_dt,
        m_sigma=_quantity(pl, "m_sigma", "planner", default=3.0),
        pd_init=pd_init,
        sigma_r_init=_quantity(pl, "sigma_r_init", "planner", default=0.09),
        n_vertices=int(n_vertices),
        max_iterations=int(max_iterations),
        waypoints=waypoints,
    )


def serialize_scenario(scenario: Scenario) -> str:
    """Emit a canonical SI-unit YAML document; parse(serialize(s)) == s."""
    doc = {
        "name": scenario.name,
        "radars": [
            {
                "id": rid,
                "position_m": [float(x) for x in r.p_n],
                "radar_constant": float(r.c_r),
                "p_fa": float(r.p_fa),
                "sigma_position_m": float(np.sqrt(r.C_rr[0, 0])),
                "sigma_constant": float(np.sqrt(r.C_rr[3, 3])),
            }
            for rid, r in zip(scenario.radar_ids, scenario.radars)
        ],
        "rcs": {
            "a_m": float(scenario.rcs.a),
            "b_m": float(scenario.rcs.b),
            "c_m": float(scenario.rcs.c),
        },
        "aircraft": {
            "speed_mps": float(scenario.speed),
            "dt_s": float(scenario.dt),
            "kappa_max": float(scenario.kappa_max),
            "kappa_rate_max": float(scenario.kappa_rate_max),
            "pitch_trim_rad": float(scenario.pitch_trim),
        },
        "imu": {
            "grade": scenario.imu_grade,
            "tau_a_s": float(scenario.imu.tau_a),
            "tau_g_s": float(scenario.imu.tau_g),
        },
        "measurements": {
            "sigma_north_m": float(scenario.meas.sigma_n),
            "sigma_east_m": float(scenario.meas.sigma_e),
            "sigma_down_m": float(scenario.meas.sigma_d),
            "sigma_altitude_m": float(scenario.meas.sigma_h),
            "sigma_heading_rad": float(scenario.meas.sigma_psi),
            "rate_position_hz": float(scenario.meas.rate_position),
            "rate_altitude_hz": float(scenario.meas.rate_altitude),
            "rate_heading_hz": float(scenario.meas.rate_heading),
            "gps_denied": [
                {
                    "north_m": [float(d.north_min), float(d.north_max)],
                    "east_m": [float(d.east_min), float(d.east_max)],
                }
                for d in scenario.meas.gps_denied_regions
            ],
        },
        "initial_covariance": {
            "sigma_position_m": float(np.sqrt(scenario.P0.P[0, 0])),
            "sigma_velocity_mps": float(np.sqrt(scenario.P0.P[3, 3])),
            "sigma_attitude_rad": float(np.sqrt(scenario.P0.P[6, 6])),
        },
        "planner": {
            "start_m": [float(x) for x in scenario.start],
            "goal_m": [float(x) for x in scenario.goal],
            "bounds_m": [
                float(scenario.bounds.north_min),
                float(scenario.bounds.north_max),
                float(scenario.bounds.east_min),
                float(scenario.bounds.east_max),
            ],
            "p_dt": float(scenario.p_dt),
            "m_sigma": float(scenario.m_sigma),
            "pd_init": float(scenario.pd_init),
            "sigma_r_init": float(scenario.sigma_r_init),
            "n_vertices": int(scenario.n_vertices),
            "max_iterations": int(scenario.max_iterations),
        },
    }
    if scenario.notes:
        doc["notes"] = scenario.notes
    if scenario.waypoints is not None:
        doc["waypoints_m"] = [[float(a), float(b)] for a, b in scenario.waypoints]
    return yaml.safe_dump(doc, sort_keys=False)


def load_scenario(path) -> Scenario:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read scenario file {path}: {err}") from err
    return parse_scenario(text)


def bundled_scenarios() -> list[str]:
    """Names of the scenario files shipped inside the package."""
    root = importlib.resources.files("pdvg") / "data"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def bundled_scenario_path(name: str):
    p = importlib.resources.files("pdvg") / "data" / f"{name}.yaml"
    if not p.is_file():
        raise ConfigError(
            f"no bundled scenario {name!r}; available: {bundled_scenarios()}"
        )
    return p
