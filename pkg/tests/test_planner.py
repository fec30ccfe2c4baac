"""Tests for the visibility-graph planner.

Visibility decisions are checked against a shapely brute-force oracle,
shortest paths against exhaustive enumeration, and the expansion/planning
loop against its locality, monotonicity, and soundness invariants.
"""

from types import SimpleNamespace

import numpy as np
import pytest
from shapely.geometry import LineString, Polygon as ShapelyPolygon

from pdvg.errors import ConfigError, InfeasibleError, NoPathError
from pdvg.ins import ImuSpec, MeasSpec, NavCovariance
from pdvg.lincov import DetectionSeries
from pdvg.planner import (
    Bounds,
    PlanResult,
    RadarPolygon,
    VisibilityGraph,
    build_visibility_graph,
    check_validity,
    evaluate_candidate,
    expand_polygons,
    initial_polygons,
    plan,
    shortest_path,
)
from pdvg.radar import (
    AircraftPose,
    EllipsoidRcs,
    RadarSite,
    detection_radius,
    jacobian_radar,
)

BIG = Bounds(-1e7, 1e7, -1e7, 1e7)


def make_radar(p_ne=(0.0, 0.0), c_r=164.7):
    sigma_pr, sigma_cr = 500.0 / 3.0, 2.0 / 3.0
    return RadarSite(
        p_n=np.array([p_ne[0], p_ne[1], 0.0]),
        c_r=c_r,
        p_fa=1e-9,
        C_rr=np.diag([sigma_pr**2] * 3 + [sigma_cr**2]),
    )


def random_polygon(rng, center, r_lo=5.0, r_hi=20.0, n_lo=3, n_hi=8):
    n = int(rng.integers(n_lo, n_hi + 1))
    ang = np.sort(rng.uniform(-np.pi, np.pi, n))
    while np.min(np.diff(ang)) < 0.05:
        ang = np.sort(rng.uniform(-np.pi, np.pi, n))
    radii = rng.uniform(r_lo, r_hi, n)
    return RadarPolygon(np.asarray(center, float), ang, radii)


def planning_scenario(imu=None, radars=None, **overrides):
    """Small single-radar scenario for evaluate/expand/plan tests."""
    imu = imu or ImuSpec.tactical()
    radars = radars if radars is not None else [make_radar((300e3, 400e3))]
    params = dict(
        radars=radars,
        rcs=EllipsoidRcs(0.18, 0.17, 0.20),
        imu=imu,
        meas=MeasSpec(
            sigma_n=1.0 / 3.0, sigma_e=1.0 / 3.0, sigma_d=1.0,
            sigma_h=0.1 / 3.0, sigma_psi=np.deg2rad(0.1) / 3.0,
        ),
        P0=NavCovariance.initial(imu),
        altitude=3500.0,
        speed=200.0,
        dt=1.0,
        kappa_max=1.0 / 5000.0,
        kappa_rate_max=1.0 / 4.0e6,
        pitch_trim=0.0,
        start=np.array([0.0, 0.0]),
        goal=np.array([20e3, 0.0]),
        bounds=BIG,
        pd_init=0.1,
        sigma_r_init=0.09,
        n_vertices=30,
        p_dt=0.1,
        m_sigma=3.0,
        max_iterations=25,
    )
    params.update(overrides)
    return SimpleNamespace(**params)


# ---------------------------------------------------------------------------
# Bounds / RadarPolygon
# ---------------------------------------------------------------------------


class TestBounds:
    def test_contains(self):
        b = Bounds(0.0, 10.0, -5.0, 5.0)
        assert b.contains((5.0, 0.0))
        assert b.contains((0.0, -5.0))  # boundary included
        assert not b.contains((11.0, 0.0))
        assert not b.contains((5.0, 6.0))

    def test_degenerate_rejected(self):
        with pytest.raises(ConfigError):
            Bounds(1.0, 1.0, 0.0, 2.0)


class TestRadarPolygon:
    def test_regular_square(self):
        p = RadarPolygon.regular(np.array([1.0, 2.0]), 10.0, 4)
        v = p.vertices
        assert v.shape == (4, 2)
        np.testing.assert_allclose(
            np.linalg.norm(v - np.array([1.0, 2.0]), axis=1), 10.0, rtol=1e-12
        )
        # adjacent vertices are separated by the square side length
        side = np.linalg.norm(v[1] - v[0])
        np.testing.assert_allclose(side, 10.0 * np.sqrt(2.0), rtol=1e-12)

    def test_vertices_at_stated_radius(self, rng):
        p = random_polygon(rng, (3.0, -4.0))
        d = np.linalg.norm(p.vertices - p.center, axis=1)
        np.testing.assert_allclose(d, p.radii, rtol=1e-9)

    def test_counterclockwise_and_simple(self, rng):
        p = random_polygon(rng, (0.0, 0.0))
        ring = ShapelyPolygon(p.vertices)
        assert ring.is_valid  # simple ring
        assert ring.exterior.is_ccw or ring.area > 0.0

    def test_contains_center_not_outside(self, rng):
        p = random_polygon(rng, (5.0, 5.0))
        assert p.contains((5.0, 5.0))
        assert not p.contains((5.0 + 2.0 * p.radii.max(), 5.0))

    def test_invalid_inputs_rejected(self):
        with pytest.raises(ConfigError):
            RadarPolygon(np.zeros(2), np.array([0.0, 1.0]), np.array([1.0, 1.0]))
        with pytest.raises(ConfigError):
            RadarPolygon(
                np.zeros(2), np.array([0.0, 1.0, 0.5]), np.ones(3)
            )
        with pytest.raises(ConfigError):
            RadarPolygon(
                np.zeros(2), np.array([0.0, 1.0, 2.0]), np.array([1.0, -1.0, 1.0])
            )


class TestInitialPolygons:
    def test_paper_configuration_radius(self):
        radar = make_radar()
        polys = initial_polygons([radar], 0.1, 0.09, 30)
        assert len(polys) == 1
        assert polys[0].angles.size == 30
        expected = detection_radius(0.1, 0.09, radar.c_r, radar.p_fa)
        np.testing.assert_allclose(polys[0].radii, expected, rtol=1e-12)
        # desk check: this radius is in the half-megameter class
        assert 4e5 < expected < 7e5

    def test_centered_at_radar(self):
        radar = make_radar((7e3, -2e3))
        poly = initial_polygons([radar], 0.1, 0.09, 8)[0]
        np.testing.assert_allclose(poly.center, [7e3, -2e3])


# ---------------------------------------------------------------------------
# Visibility graph
# ---------------------------------------------------------------------------


def shapely_blocked(p, q, poly: RadarPolygon) -> bool:
    """Brute-force oracle: segment passes through the polygon interior."""
    interior = ShapelyPolygon(poly.vertices).buffer(-1e-6)
    return LineString([p, q]).intersects(interior)


class TestBuildVisibilityGraph:
    def test_no_polygons_single_edge(self):
        g = build_visibility_graph([], (0.0, 0.0), (10.0, 0.0), BIG)
        assert g.nodes.shape == (2, 2)
        np.testing.assert_allclose(g.costs[0, 1], 10.0)
        np.testing.assert_allclose(g.costs[1, 0], 10.0)

    def test_square_blocks_direct_edge(self):
        square = RadarPolygon.regular(np.array([5.0, 0.0]), 2.0, 4)
        g = build_visibility_graph([square], (0.0, 0.0), (10.0, 0.0), BIG)
        assert not np.isfinite(g.costs[0, 1])
        # side vertices (5, +/-2) are visible from both endpoints; the near
        # tip is visible only from its own side, the far tip is occluded
        idx = {tuple(np.round(g.nodes[v], 6)): v for v in range(2, g.nodes.shape[0])}
        near, far = idx[(3.0, 0.0)], idx[(7.0, 0.0)]
        for side in ((5.0, -2.0), (5.0, 2.0)):
            assert np.isfinite(g.costs[0, idx[side]])
            assert np.isfinite(g.costs[1, idx[side]])
        assert np.isfinite(g.costs[0, near]) and not np.isfinite(g.costs[1, near])
        assert np.isfinite(g.costs[1, far]) and not np.isfinite(g.costs[0, far])

    def test_symmetric(self, rng):
        polys = [random_polygon(rng, rng.uniform(-30, 30, 2)) for _ in range(2)]
        g = build_visibility_graph(polys, (-50.0, 0.0), (50.0, 0.0), BIG)
        np.testing.assert_array_equal(g.costs, g.costs.T)

    def test_polygon_edges_are_traversable(self):
        # consecutive vertices of a polygon must always see each other
        square = RadarPolygon.regular(np.zeros(2), 5.0, 4)
        g = build_visibility_graph([square], (-20.0, 0.0), (20.0, 0.0), BIG)
        k = g.nodes.shape[0]
        for v in range(2, k):
            nxt = 2 + (v - 2 + 1) % 4
            assert np.isfinite(g.costs[v, nxt])

    def test_start_inside_polygon_names_radar(self):
        square = RadarPolygon.regular(np.zeros(2), 5.0, 4)
        with pytest.raises(InfeasibleError, match="radar 0"):
            build_visibility_graph([square], (0.0, 0.0), (10.0, 0.0), BIG)

    def test_out_of_bounds_vertices_excluded(self):
        square = RadarPolygon.regular(np.array([5.0, 0.0]), 2.0, 4)
        bounds = Bounds(-1.0, 11.0, -1.0, 1.0)  # cuts off the east/west tips
        g = build_visibility_graph([square], (0.0, 0.0), (10.0, 0.0), bounds)
        assert g.nodes.shape[0] < 6

    def test_matches_shapely_oracle_on_random_fields(self, rng):
        agree = 0
        total = 0
        for _ in range(40):
            poly = random_polygon(rng, rng.uniform(-10, 10, 2))
            p = rng.uniform(-40, 40, 2)
            q = rng.uniform(-40, 40, 2)
            if poly.contains(p, 1e-6) or poly.contains(q, 1e-6):
                continue
            g = build_visibility_graph([poly], p, q, BIG)
            mine = not np.isfinite(g.costs[0, 1])
            oracle = shapely_blocked(p, q, poly)
            total += 1
            agree += mine == oracle
        assert total >= 25
        assert agree == total


# ---------------------------------------------------------------------------
# Shortest path
# ---------------------------------------------------------------------------


def brute_force_cost(graph: VisibilityGraph):
    """Exhaustive DFS over simple paths; minimal (cost, node sequence)."""
    k = graph.nodes.shape[0]
    best = [None]

    def dfs(u, cost, path):
        if u == 1:
            cand = (cost, path)
            if best[0] is None or cand < best[0]:
                best[0] = cand
            return
        for v in range(k):
            if v not in path and np.isfinite(graph.costs[u, v]):
                dfs(v, cost + float(graph.costs[u, v]), path + (v,))

    dfs(0, 0.0, (0,))
    return best[0]


class TestShortestPath:
    def test_empty_field(self):
        g = build_visibility_graph([], (0.0, 0.0), (3.0, 4.0), BIG)
        path = shortest_path(g)
        np.testing.assert_allclose(path, [[0.0, 0.0], [3.0, 4.0]])

    def test_single_convex_obstacle_hull_route(self):
        square = RadarPolygon.regular(np.array([5.0, 0.5]), 2.0, 4)
        g = build_visibility_graph([square], (0.0, 0.0), (10.0, 0.0), BIG)
        path = shortest_path(g)
        cost = np.sum(np.linalg.norm(np.diff(path, axis=0), axis=1))
        # enumerate both around-the-hull routes through the ordered vertices
        verts = square.vertices
        start, goal = np.array([0.0, 0.0]), np.array([10.0, 0.0])
        routes = []
        n = len(verts)
        for first in range(n):
            for last in range(n):
                for direction in (1, -1):
                    seq = [start]
                    i = first
                    while True:
                        seq.append(verts[i])
                        if i == last:
                            break
                        i = (i + direction) % n
                    seq.append(goal)
                    seq = np.array(seq)
                    blocked = any(
                        shapely_blocked(seq[j], seq[j + 1], square)
                        for j in range(len(seq) - 1)
                    )
                    if not blocked:
                        routes.append(
                            np.sum(np.linalg.norm(np.diff(seq, axis=0), axis=1))
                        )
        np.testing.assert_allclose(cost, min(routes), rtol=1e-12)

    def test_matches_brute_force_on_random_fields(self, rng):
        checked = 0
        for _ in range(60):
            n_poly = int(rng.integers(1, 3))
            polys = [
                random_polygon(rng, rng.uniform(-15, 15, 2), n_lo=3, n_hi=4)
                for _ in range(n_poly)
            ]
            p = rng.uniform(-40, 40, 2)
            q = rng.uniform(-40, 40, 2)
            if any(pl.contains(p, 1e-6) or pl.contains(q, 1e-6) for pl in polys):
                continue
            g = build_visibility_graph(polys, p, q, BIG)
            if g.nodes.shape[0] > 10:
                continue
            expected = brute_force_cost(g)
            if expected is None:
                with pytest.raises(NoPathError):
                    shortest_path(g)
                continue
            path = shortest_path(g)
            cost = np.sum(np.linalg.norm(np.diff(path, axis=0), axis=1))
            np.testing.assert_allclose(cost, expected[0], rtol=1e-12)
            checked += 1
        assert checked >= 20

    def test_unreachable_goal(self):
        nodes = np.array([[0.0, 0.0], [10.0, 0.0], [1.0, 1.0]])
        costs = np.full((3, 3), np.inf)
        costs[0, 2] = costs[2, 0] = 1.5
        g = VisibilityGraph(nodes=nodes, costs=costs)
        with pytest.raises(NoPathError):
            shortest_path(g)

    def test_deterministic_tie_break(self):
        # two equal-cost routes; the lexicographically smaller node sequence wins
        nodes = np.array(
            [[0.0, 0.0], [2.0, 0.0], [1.0, 1.0], [1.0, -1.0]]
        )
        costs = np.full((4, 4), np.inf)
        d = np.sqrt(2.0)
        for u, v in [(0, 2), (0, 3), (2, 1), (3, 1)]:
            costs[u, v] = costs[v, u] = d
        g = VisibilityGraph(nodes=nodes, costs=costs)
        path = shortest_path(g)
        np.testing.assert_allclose(path[1], [1.0, 1.0])  # node 2, not node 3


# ---------------------------------------------------------------------------
# Candidate evaluation and validity
# ---------------------------------------------------------------------------


class TestEvaluateCandidate:
    def test_far_path_negligible_pd(self):
        scenario = planning_scenario(radars=[make_radar((5e6, 5e6))])
        series = evaluate_candidate(
            np.array([[0.0, 0.0], [5e3, 0.0]]), scenario
        )
        assert np.all(series.pd_nominal < 1e-6)

    def test_sigma_floor_from_radar_uncertainty(self):
        scenario = planning_scenario()
        wps = np.array([[0.0, 0.0], [10e3, 0.0]])
        series = evaluate_candidate(wps, scenario)
        traj_pose_check = series.sigma_pd.shape[0] == 1
        assert traj_pose_check
        # recompute the pure-radar floor at a few samples
        from pdvg.planner import _smooth_and_sample

        traj = _smooth_and_sample(wps, scenario)
        radar = scenario.radars[0]
        for k in [0, len(traj) // 2, len(traj) - 1]:
            pose = AircraftPose(traj.p_n[k], traj.theta[k])
            j_r = jacobian_radar(pose, radar, scenario.rcs)
            floor = np.sqrt(j_r @ radar.C_rr @ j_r)
            assert series.sigma_pd[0, k] >= floor - 1e-15

    def test_sample_count_matches_trajectory(self):
        scenario = planning_scenario()
        from pdvg.planner import _smooth_and_sample

        wps = np.array([[0.0, 0.0], [5e3, 0.0]])
        traj = _smooth_and_sample(wps, scenario)
        series = evaluate_candidate(wps, scenario)
        assert series.pd_nominal.shape == (1, len(traj))
        assert series.t.shape == (len(traj),)


class TestCheckValidity:
    def _series(self, pd, sigma):
        pd = np.atleast_2d(pd)
        return DetectionSeries(
            t=np.arange(pd.shape[1], dtype=float),
            pd_nominal=pd,
            sigma_pd=np.atleast_2d(sigma),
        )

    def test_valid_below_threshold(self):
        s = self._series([[0.05]], [[0.01]])
        assert check_validity(s, 0.1, 3.0) == []

    def test_violation_detected(self):
        s = self._series([[0.08]], [[0.01]])
        assert check_validity(s, 0.1, 3.0) == [(0, 0)]

    def test_zero_margin_reduces_to_nominal(self):
        s = self._series([[0.08, 0.11]], [[10.0, 10.0]])
        assert check_validity(s, 0.1, 0.0) == [(0, 1)]


# ---------------------------------------------------------------------------
# Expansion
# ---------------------------------------------------------------------------


class TestExpandPolygons:
    def _setup(self, sigma_pd, sample_ne=(600e3, 400e3)):
        scenario = planning_scenario(radars=[make_radar((0.0, 400e3))])
        poly = initial_polygons(
            scenario.radars, scenario.pd_init, scenario.sigma_r_init,
            scenario.n_vertices,
        )[0]
        traj = SimpleNamespace(
            p_n=np.array([[sample_ne[0], sample_ne[1], -3500.0]]),
            theta=np.zeros((1, 3)),
        )
        series = DetectionSeries(
            t=np.zeros(1),
            pd_nominal=np.array([[0.2]]),
            sigma_pd=np.array([[sigma_pd]]),
        )
        return scenario, poly, traj, series

    def test_floor_when_margin_negative(self):
        # m_sigma * sigma > p_dt -> expansion targets the 1e-3 floor radius
        scenario, poly, traj, series = self._setup(sigma_pd=0.2)
        out = expand_polygons([poly], [(0, 0)], series, traj, scenario)[0]
        radar = scenario.radars[0]
        pose = AircraftPose(traj.p_n[0], traj.theta[0])
        from pdvg.radar import rcs_angles, rcs_ellipsoid

        sigma_r = rcs_ellipsoid(scenario.rcs, rcs_angles(pose, radar.p_n))
        expected = detection_radius(1e-3, sigma_r, radar.c_r, radar.p_fa)
        assert np.isclose(out.radii.max(), expected, rtol=1e-12)

    def test_locality_single_violation_north(self):
        # sigma chosen so the expansion radius clearly exceeds the initial one
        scenario, poly, traj, series = self._setup(sigma_pd=0.03)
        out = expand_polygons([poly], [(0, 0)], series, traj, scenario)[0]
        # sample sits due north of the radar center: the north vertex and its
        # two neighbors move, everything else stays
        moved = out.radii > poly.radii.max() * (1.0 + 1e-9)
        assert out.angles.size == poly.angles.size  # flankers lift neighbors
        angles_moved = out.angles[moved]
        assert moved.sum() == 3
        assert np.all(np.abs(np.mod(angles_moved + np.pi, 2 * np.pi) - np.pi)
                      <= 2.0 * (2.0 * np.pi / scenario.n_vertices) + 1e-12)

    def test_radii_never_decrease(self):
        scenario, poly, traj, series = self._setup(sigma_pd=0.03)
        out = expand_polygons([poly], [(0, 0)], series, traj, scenario)[0]
        assert np.all(out.radii >= poly.radii.min() - 1e-9)
        assert out.radii.max() > poly.radii.max()

    def test_growth_floor_prevents_stall(self):
        # expansion radius smaller than the current polygon: force 1 m growth
        scenario, poly, traj, series = self._setup(sigma_pd=1e-6)
        # place the violating sample inside the current radius so the computed
        # expansion radius does not exceed it
        traj.p_n[0, 0] = poly.radii[0] * 0.5
        traj.p_n[0, 1] = 400e3
        out = expand_polygons([poly], [(0, 0)], series, traj, scenario)[0]
        assert np.max(out.radii - poly.radii) >= 1.0 - 1e-9

    def test_empty_violations_rejected(self):
        scenario, poly, traj, series = self._setup(sigma_pd=0.02)
        with pytest.raises(ConfigError):
            expand_polygons([poly], [], series, traj, scenario)


# ---------------------------------------------------------------------------
# Full planning loop
# ---------------------------------------------------------------------------


class TestPlan:
    def test_clear_field_one_iteration_straight(self):
        scenario = planning_scenario(
            radars=[make_radar((5e6, 5e6))],
            start=np.array([0.0, 0.0]),
            goal=np.array([20e3, 0.0]),
        )
        result = plan(scenario)
        assert result.valid
        assert result.iterations == 1
        assert result.waypoints.shape == (2, 2)
        np.testing.assert_allclose(result.waypoints[1], [20e3, 0.0])

    def test_valid_result_is_sound(self):
        # a radar near the corridor forces at least one expansion
        scenario = planning_scenario(
            radars=[make_radar((700e3, 500e3))],
            start=np.array([0.0, 0.0]),
            goal=np.array([1.2e6, 1.2e6]),
            bounds=Bounds(-3e6, 3e6, -3e6, 3e6),
            dt=4.0,
        )
        result = plan(scenario)
        assert result.valid
        assert result.iterations >= 2  # the first candidate must have violated
        series = evaluate_candidate(result.waypoints, scenario)
        assert check_validity(series, scenario.p_dt, scenario.m_sigma) == []

    def test_iteration_cap_returns_infeasible(self):
        scenario = planning_scenario(
            radars=[make_radar((700e3, 500e3))],
            start=np.array([0.0, 0.0]),
            goal=np.array([1.2e6, 1.2e6]),
            bounds=Bounds(-3e6, 3e6, -3e6, 3e6),
            dt=4.0,
            max_iterations=1,
        )
        result = plan(scenario)
        assert not result.valid
        assert result.iterations == 1
        assert result.waypoints is None
        assert any("valid path" in w for w in result.warnings)

    def test_goal_engulfed_is_infeasible(self):
        scenario = planning_scenario(
            radars=[make_radar((20e3, 0.0))],
            start=np.array([-900e3, 0.0]),
            goal=np.array([20e3, 1e3]),  # deep inside the initial polygon
        )
        result = plan(scenario)
        assert not result.valid
        assert result.waypoints is None
        assert any("goal" in w for w in result.warnings)
