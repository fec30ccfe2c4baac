"""Visibility-graph path planner driven by detection probability statistics.

Radar detection regions are modeled as star-shaped polygons around each radar.
A visibility graph over the polygon vertices yields a shortest candidate path,
which is smoothed, flown through the navigation covariance model, and checked
against the detection threshold including the m-sigma uncertainty margin.
Where the check fails, the offending polygon grows toward the violating
samples and the loop repeats.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    InfeasibleError,
    NoPathError,
    SmoothingError,
)
from .ins import aircraft_covariance, run_covariance
from .lincov import DetectionSeries
from .radar import (
    AircraftPose,
    detection_radius,
    detection_stats,
    rcs_angles,
    rcs_ellipsoid,
)
from .trajectory import WaypointPath, sample_trajectory, smooth_waypoints

__all__ = [
    "Bounds",
    "RadarPolygon",
    "VisibilityGraph",
    "PlanResult",
    "initial_polygons",
    "build_visibility_graph",
    "shortest_path",
    "evaluate_candidate",
    "check_validity",
    "expand_polygons",
    "plan",
]

EPS = 1e-9  # grazing tolerance, m: boundaries are traversable, interiors block
GROWTH_FLOOR = 1.0  # m, minimum radial growth per expansion to prevent stalls
ANGLE_TOL = 1e-9  # rad, below this two polygon vertices are the same direction


@dataclass(frozen=True)
class Bounds:
    """Axis-aligned planning rectangle in the NE plane."""

    north_min: float
    north_max: float
    east_min: float
    east_max: float

    def __post_init__(self):
        if self.north_min >= self.north_max or self.east_min >= self.east_max:
            raise ConfigError("planning bounds must have positive extent")

    def contains(self, p) -> bool:
        n, e = float(p[0]), float(p[1])
        return (
            self.north_min <= n <= self.north_max
            and self.east_min <= e <= self.east_max
        )


@dataclass(frozen=True)
class RadarPolygon:
    """Star-shaped detection region: per-vertex (angle, radius) about a center.

    Angles are sorted ascending in [-pi, pi), measured from the north axis
    toward east, so the vertex ring is always simple and counterclockwise in
    the (north, east) plane.
    """

    center: np.ndarray  # (2,) NE, m
    angles: np.ndarray  # (n,) rad, sorted ascending
    radii: np.ndarray  # (n,) m, positive

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float).reshape(2)
        angles = np.asarray(self.angles, dtype=float).reshape(-1)
        radii = np.asarray(self.radii, dtype=float).reshape(-1)
        if angles.size < 3 or angles.size != radii.size:
            raise ConfigError("polygon needs >= 3 matched angles and radii")
        if np.any(np.diff(angles) <= 0.0):
            raise ConfigError("polygon angles must be strictly ascending")
        if angles[-1] - angles[0] >= 2.0 * np.pi:
            raise ConfigError("polygon angles must span less than a full turn")
        if np.any(radii <= 0.0):
            raise ConfigError("polygon radii must be positive")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "angles", angles)
        object.__setattr__(self, "radii", radii)

    @classmethod
    def regular(cls, center, radius: float, n_vertices: int) -> "RadarPolygon":
        if n_vertices < 3:
            raise ConfigError("polygon needs at least 3 vertices")
        ang = -np.pi + 2.0 * np.pi * np.arange(n_vertices) / n_vertices
        return cls(center, ang, np.full(n_vertices, float(radius)))

    @property
    def vertices(self) -> np.ndarray:
        """(n, 2) ring of NE vertices, counterclockwise."""
        return self.center + (
            self.radii[:, None]
            * np.stack([np.cos(self.angles), np.sin(self.angles)], axis=1)
        )

    def contains(self, p, margin: float = 0.0) -> bool:
        """True if p is inside the ring, more than `margin` from its edges."""
        return _point_inside(np.asarray(p, dtype=float), self.vertices, margin)


@dataclass(frozen=True)
class VisibilityGraph:
    """Nodes (start, goal, polygon vertices) and symmetric edge costs.

    Node 0 is the start, node 1 the goal.  `costs[u, v]` is the Euclidean
    length of a visible segment, +inf where no edge exists.
    """

    nodes: np.ndarray  # (k, 2)
    costs: np.ndarray  # (k, k), inf = no edge

    def edges(self):
        """Iterate (u, v, cost) for u < v."""
        k = self.nodes.shape[0]
        for u in range(k):
            for v in range(u + 1, k):
                if np.isfinite(self.costs[u, v]):
                    yield u, v, float(self.costs[u, v])


@dataclass
class PlanResult:
    """Planner outcome: final path, its detection series, and the history."""

    waypoints: np.ndarray | None  # (w, 2) NE, None when infeasible
    detection: DetectionSeries | None
    valid: bool
    iterations: int
    history: list = field(default_factory=list)  # per-iteration dicts
    polygons: list = field(default_factory=list)
    warnings: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# Geometry primitives
# ---------------------------------------------------------------------------


def _point_inside(p, verts, margin: float) -> bool:
    """Crossing-number inside test; `margin` > 0 demands boundary clearance."""
    a = verts
    b = np.roll(verts, -1, axis=0)
    # edge distance
    ab = b - a
    ap = p[None, :] - a
    denom = np.einsum("ij,ij->i", ab, ab)
    t = np.clip(np.einsum("ij,ij->i", ap, ab) / denom, 0.0, 1.0)
    closest = a + t[:, None] * ab
    d = np.min(np.linalg.norm(p[None, :] - closest, axis=1))
    if d <= margin:
        return False
    # ray cast toward +east
    cond = (a[:, 0] > p[0]) != (b[:, 0] > p[0])
    with np.errstate(divide="ignore", invalid="ignore"):
        e_cross = a[:, 1] + (p[0] - a[:, 0]) / (b[:, 0] - a[:, 0]) * (
            b[:, 1] - a[:, 1]
        )
    crossings = np.count_nonzero(cond & (e_cross > p[1]))
    return bool(crossings % 2 == 1)


def _segment_blocked(p, q, verts) -> bool:
    """True if the open segment pq passes through the polygon interior.

    The segment is cut at every boundary crossing and each piece's midpoint is
    tested for strict interiority, so grazing contact along edges or through
    vertices is allowed.
    """
    a = verts
    b = np.roll(verts, -1, axis=0)
    d = q - p
    e = b - a
    w = a - p
    denom = d[0] * e[:, 1] - d[1] * e[:, 0]
    ts = [0.0, 1.0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (w[:, 0] * e[:, 1] - w[:, 1] * e[:, 0]) / denom
        s = (w[:, 0] * d[1] - w[:, 1] * d[0]) / denom
    scale = max(np.linalg.norm(d), 1.0)
    tol = EPS / scale
    ok = (
        np.isfinite(t)
        & np.isfinite(s)
        & (t > -tol)
        & (t < 1.0 + tol)
        & (s > -tol)
        & (s < 1.0 + tol)
    )
    ts.extend(np.clip(t[ok], 0.0, 1.0).tolist())
    # collinear overlap: project the edge endpoints onto the segment
    par = np.abs(denom) <= EPS * np.maximum(np.linalg.norm(e, axis=1), 1.0)
    if np.any(par):
        dd = float(d @ d)
        for i in np.flatnonzero(par):
            # offset of the edge line from the segment line
            off = w[i, 0] * d[1] - w[i, 1] * d[0]
            if abs(off) > EPS * scale:
                continue
            for pt in (a[i], b[i]):
                u = float((pt - p) @ d) / dd
                if -tol < u < 1.0 + tol:
                    ts.append(min(max(u, 0.0), 1.0))
    ts = sorted(set(ts))
    for t0, t1 in zip(ts[:-1], ts[1:]):
        if (t1 - t0) * scale <= EPS:
            continue
        mid = p + 0.5 * (t0 + t1) * d
        if _point_inside(mid, verts, EPS):
            return True
    return False


# ---------------------------------------------------------------------------
# Planner operations
# ---------------------------------------------------------------------------


def initial_polygons(radars, pd_init: float, sigma_r_init: float,
                     n_vertices: int) -> list[RadarPolygon]:
    """Regular n-gon per radar at the radius where P_D drops to pd_init."""
    out = []
    for r in radars:
        radius = detection_radius(pd_init, sigma_r_init, r.c_r, r.p_fa)
        out.append(RadarPolygon.regular(np.asarray(r.p_n)[:2], radius, n_vertices))
    return out


def build_visibility_graph(polygons, start, goal, bounds: Bounds) -> VisibilityGraph:
    start = np.asarray(start, dtype=float).reshape(-1)[:2]
    goal = np.asarray(goal, dtype=float).reshape(-1)[:2]
    for name, pt in (("start", start), ("goal", goal)):
        if not bounds.contains(pt):
            raise InfeasibleError(f"{name} point lies outside the planning bounds")
        for i, poly in enumerate(polygons):
            if poly.contains(pt, margin=EPS):
                raise InfeasibleError(
                    f"{name} point lies inside the detection polygon of radar {i}"
                )
    nodes = [start, goal]
    for poly in polygons:
        for v in poly.vertices:
            if bounds.contains(v):
                nodes.append(v)
    nodes = np.array(nodes)
    k = nodes.shape[0]
    rings = [poly.vertices for poly in polygons]
    costs = np.full((k, k), np.inf)
    for u in range(k):
        for v in range(u + 1, k):
            p, q = nodes[u], nodes[v]
            if any(_segment_blocked(p, q, ring) for ring in rings):
                continue
            c = float(np.linalg.norm(q - p))
            if c > 0.0:
                costs[u, v] = costs[v, u] = c
    return VisibilityGraph(nodes=nodes, costs=costs)


def shortest_path(graph: VisibilityGraph) -> np.ndarray:
    """Minimum-cost start-to-goal node positions, (w, 2).

    Ties are broken deterministically by the lexicographically smallest node
    index sequence among equal-cost paths.
    """
    k = graph.nodes.shape[0]
    best: dict[int, tuple[float, tuple[int, ...]]] = {}
    heap = [(0.0, (0,))]
    while heap:
        cost, path = heapq.heappop(heap)
        u = path[-1]
        if u in best:
            continue
        best[u] = (cost, path)
        if u == 1:
            return graph.nodes[list(path)].copy()
        row = graph.costs[u]
        for v in np.flatnonzero(np.isfinite(row)):
            v = int(v)
            if v not in best:
                heapq.heappush(heap, (cost + float(row[v]), path + (v,)))
    raise NoPathError("goal is not reachable in the visibility graph")


def _smooth_and_sample(waypoints, scenario):
    pts = np.asarray(waypoints, dtype=float)[:, :2]
    path = WaypointPath(pts, altitude=scenario.altitude, speed=scenario.speed)
    segments = smooth_waypoints(path, scenario.kappa_max, scenario.kappa_rate_max)
    return sample_trajectory(
        segments, scenario.speed, scenario.dt, scenario.altitude,
        scenario.pitch_trim,
    )


def _detection_series(trajectory, scenario) -> DetectionSeries:
    t, covs = run_covariance(trajectory, scenario.P0, scenario.imu, scenario.meas)
    n = len(trajectory)
    m = len(scenario.radars)
    pd_nom = np.empty((m, n))
    sigma = np.empty((m, n))
    for kk in range(n):
        pose = AircraftPose(trajectory.p_n[kk], trajectory.theta[kk])
        C_aa = aircraft_covariance(covs[kk])
        for i, radar in enumerate(scenario.radars):
            stats = detection_stats(pose, radar, scenario.rcs, C_aa)
            pd_nom[i, kk] = stats.pd_nominal
            sigma[i, kk] = stats.sigma_pd
    return DetectionSeries(t=t, pd_nominal=pd_nom, sigma_pd=sigma)


def evaluate_candidate(waypoints, scenario) -> DetectionSeries:
    """Smooth, sample, run the covariance model, and score detection per radar."""
    return _detection_series(_smooth_and_sample(waypoints, scenario), scenario)


def check_validity(series: DetectionSeries, p_dt: float,
                   m_sigma: float) -> list[tuple[int, int]]:
    """All (radar index, sample index) where pd + m_sigma * sigma >= p_dt."""
    bad = series.pd_nominal + m_sigma * series.sigma_pd >= p_dt
    return [(int(i), int(k)) for i, k in zip(*np.nonzero(bad))]


def _nearest_vertex(poly: RadarPolygon, angle: float) -> int:
    diff = np.abs(np.mod(poly.angles - angle + np.pi, 2.0 * np.pi) - np.pi)
    return int(np.argmin(diff))


def _grow(poly: RadarPolygon, angle: float, radius: float,
          n_design: int) -> RadarPolygon:
    """Push the vertex nearest `angle` out to `radius` and add two flankers."""
    angles = poly.angles.copy()
    radii = poly.radii.copy()
    j = _nearest_vertex(poly, angle)
    radii[j] = max(radii[j], radius)
    d_ang = 2.0 * np.pi / n_design
    for target in (poly.angles[j] - d_ang, poly.angles[j] + d_ang):
        target = np.mod(target + np.pi, 2.0 * np.pi) - np.pi
        diff = np.abs(np.mod(angles - target + np.pi, 2.0 * np.pi) - np.pi)
        jj = int(np.argmin(diff))
        if diff[jj] <= max(ANGLE_TOL, 0.5 * d_ang - ANGLE_TOL):
            # an existing vertex already covers this direction; lift it
            radii[jj] = max(radii[jj], radii[j])
        else:
            angles = np.append(angles, target)
            radii = np.append(radii, radii[j])
    order = np.argsort(angles)
    return RadarPolygon(poly.center, angles[order], radii[order])


def expand_polygons(polygons, violations, series: DetectionSeries,
                    trajectory, scenario) -> list[RadarPolygon]:
    """Grow polygons toward every violating sample.

    For each violation the expansion detection probability is
    max(p_dt - m_sigma * sigma_pd, 1e-3); its detection radius (at the RCS of
    the sample's actual aspect geometry) is applied to the vertex nearest the
    sample's bearing from the radar, with two flanking vertices added at the
    design angular spacing.  A 1 m minimum growth is enforced to prevent
    stalls.
    """
    if not violations:
        raise ConfigError("expand_polygons requires a non-empty violation list")
    out = list(polygons)
    before = [p.radii.copy() for p in polygons]
    worst = max(
        violations,
        key=lambda ik: series.pd_nominal[ik[0], ik[1]]
        + scenario.m_sigma * series.sigma_pd[ik[0], ik[1]],
    )
    for i, k in violations:
        radar = scenario.radars[i]
        sigma_pd = series.sigma_pd[i, k]
        pd_exp = max(scenario.p_dt - scenario.m_sigma * sigma_pd, 1e-3)
        pose = AircraftPose(trajectory.p_n[k], trajectory.theta[k])
        sigma_r = rcs_ellipsoid(scenario.rcs, rcs_angles(pose, radar.p_n))
        r_exp = detection_radius(pd_exp, sigma_r, radar.c_r, radar.p_fa)
        rel = trajectory.p_n[k, :2] - out[i].center
        angle = float(np.arctan2(rel[1], rel[0]))
        out[i] = _grow(out[i], angle, r_exp, scenario.n_vertices)
    grew = any(
        p.radii.size != b.size or np.max(p.radii[: b.size] - b) >= GROWTH_FLOOR
        for p, b in zip(out, before)
    )
    if not grew:
        i, k = worst
        rel = trajectory.p_n[k, :2] - out[i].center
        angle = float(np.arctan2(rel[1], rel[0]))
        j = _nearest_vertex(out[i], angle)
        radii = out[i].radii.copy()
        radii[j] += GROWTH_FLOOR
        out[i] = RadarPolygon(out[i].center, out[i].angles, radii)
    return out


def plan(scenario) -> PlanResult:
    """Iterate polygon construction, graph search, evaluation, and expansion.

    Returns a PlanResult; `valid` is False when no path satisfies the
    detection constraint within max_iterations or the field becomes blocked.
    """
    polygons = initial_polygons(
        scenario.radars, scenario.pd_init, scenario.sigma_r_init,
        scenario.n_vertices,
    )
    result = PlanResult(
        waypoints=None, detection=None, valid=False, iterations=0,
        polygons=polygons,
    )
    start = np.asarray(scenario.start, dtype=float)[:2]
    goal = np.asarray(scenario.goal, dtype=float)[:2]
    smoothing_retry = False
    for it in range(1, scenario.max_iterations + 1):
        result.iterations = it
        result.polygons = polygons
        try:
            graph = build_visibility_graph(polygons, start, goal, scenario.bounds)
            waypoints = shortest_path(graph)
        except InfeasibleError as err:
            result.warnings.append(f"iteration {it}: {err}")
            return result
        try:
            trajectory = _smooth_and_sample(waypoints, scenario)
        except SmoothingError as err:
            if smoothing_retry:
                result.warnings.append(
                    f"iteration {it}: smoothing failed twice: {err}"
                )
                return result
            # corner-hugging path: inflate all polygons 1% and retry once
            smoothing_retry = True
            polygons = [
                RadarPolygon(p.center, p.angles, 1.01 * p.radii)
                for p in polygons
            ]
            result.warnings.append(
                f"iteration {it}: smoothing failed ({err}); polygons inflated 1%"
            )
            continue
        smoothing_retry = False
        series = _detection_series(trajectory, scenario)
        violations = check_validity(series, scenario.p_dt, scenario.m_sigma)
        result.history.append(
            {
                "iteration": it,
                "waypoints": waypoints,
                "n_violations": len(violations),
                "worst_margin": float(
                    np.max(series.pd_nominal + scenario.m_sigma * series.sigma_pd)
                ),
            }
        )
        if not violations:
            result.waypoints = waypoints
            result.detection = series
            result.valid = True
            return result
        polygons = expand_polygons(polygons, violations, series, trajectory, scenario)
        for i, p in enumerate(polygons):
            if not all(scenario.bounds.contains(v) for v in p.vertices):
                msg = f"iteration {it}: polygon {i} expanded beyond the bounds"
                if msg not in result.warnings:
                    result.warnings.append(msg)
    result.warnings.append(
        f"no valid path within {scenario.max_iterations} iterations"
    )
    return result
