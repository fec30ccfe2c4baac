"""Acceptance suite: the ten contract-level checks for the whole package.

Each test states its criterion number.  Oracles are reused from the module
test suites (finite differences, substep quadrature, RK4 Riccati
integration, exhaustive path enumeration); the scenario-level checks run on
the bundled data files.
"""

import time

import numpy as np
import pytest

from conftest import central_diff
from test_ins import quadrature_q, turn_window, turning_trajectory
from test_planner import brute_force_cost, make_radar, random_polygon
from test_radar import RCS_PAPER, compose_pd, random_geometry

from pdvg import radar as rd
from pdvg.frames import dcm_body_to_ned, quat_to_euler_jacobian
from pdvg.ins import (
    ImuSpec,
    NavCovariance,
    aircraft_covariance,
    integrated_process_noise,
    nav_dynamics_matrix,
    noise_input_matrix,
    noise_psd,
    propagate,
    stm_lear,
)
from pdvg.lincov import (
    SOURCE_NAMES,
    NoiseSourceSet,
    gain_schedule,
    sigma_pd_series,
)
from pdvg.montecarlo import coverage_check, run_ensemble
from pdvg.planner import (
    Bounds,
    NoPathError,
    build_visibility_graph,
    check_validity,
    evaluate_candidate,
    plan,
    shortest_path,
)
from pdvg.scenario import bundled_scenario_path, load_scenario


def test_criterion_1_detection_jacobians_match_finite_differences():
    """Analytic aircraft (1x6) and radar (1x4) Jacobians of the composed
    detection probability agree with central differences to 1e-6 relative
    at 50 random non-degenerate configurations, in under 5 s."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(20260825)
    for _ in range(50):
        pose, site = random_geometry(rng)

        def f_air(x):
            return compose_pd(x[:3], x[3:], site.p_n, site.c_r, site.p_fa)

        x = np.concatenate([pose.p_n, pose.theta])
        fd = central_diff(f_air, x, scales=np.array([1e4] * 3 + [1.0] * 3))
        an = rd.jacobian_aircraft(pose, site, RCS_PAPER)
        assert np.linalg.norm(an - fd) / np.linalg.norm(fd) < 1e-6

        def f_rad(y):
            return compose_pd(pose.p_n, pose.theta, y[:3], y[3], site.p_fa)

        y = np.concatenate([site.p_n, [site.c_r]])
        fd = central_diff(f_rad, y, scales=np.array([1e4] * 3 + [site.c_r]))
        an = rd.jacobian_radar(pose, site, RCS_PAPER)
        assert np.linalg.norm(an - fd) / np.linalg.norm(fd) < 1e-6
    assert time.perf_counter() - t0 < 5.0


def test_criterion_2_detection_radius_round_trip():
    """detection_radius inverts the SNR/P_D chain to 1e-10 relative."""
    c_r, p_fa, sigma_r = 164.7, 1e-9, 0.09
    for pd_target in (0.01, 0.1, 0.3):
        radius = rd.detection_radius(pd_target, sigma_r, c_r, p_fa)
        back = rd.probability_of_detection(rd.snr(c_r, sigma_r, radius), p_fa)
        assert abs(back - pd_target) / pd_target < 1e-10


def test_criterion_3_lear_propagation_matches_rk4_riccati():
    """60 s of discrete covariance propagation on a turning trajectory at
    dt = 0.01 s (tactical IMU) matches RK4 integration of the continuous
    Riccati equation to 1e-3 relative Frobenius, in under 30 s."""
    t0 = time.perf_counter()
    dt = 0.01
    n_steps = 6000  # 60 s
    imu = ImuSpec.tactical()
    traj = turning_trajectory(dt / 2.0)  # half-step samples for RK4 stages
    # Start at the turn entry; the 60 s window spans the whole fillet and
    # runs out onto the following straight leg.
    k0 = turn_window(traj, 100)
    assert k0 + 2 * n_steps + 1 <= len(traj)
    T_all = [dcm_body_to_ned(th).T
             for th in traj.theta[k0:k0 + 2 * n_steps + 1]]
    F_all = [nav_dynamics_matrix(T_all[i], traj.nu_b[k0 + i],
                                 imu.tau_a, imu.tau_g)
             for i in range(2 * n_steps + 1)]
    BQB = []
    for T in T_all:
        B = noise_input_matrix(T)
        BQB.append(B @ noise_psd(imu) @ B.T)

    P0 = NavCovariance.initial(imu)
    P = P0
    for j in range(n_steps):
        i0, i1 = 2 * j, 2 * j + 2
        Phi = stm_lear(F_all[i1], F_all[i0], dt)
        Q = integrated_process_noise(
            T_all[i1], T_all[i0], traj.nu_b[k0 + i1], traj.nu_b[k0 + i0],
            imu, dt)
        P = propagate(P, Phi, Q)

    def rate(Pm, i):
        return F_all[i] @ Pm + Pm @ F_all[i].T + BQB[i]

    Pr = P0.P.copy()
    for j in range(n_steps):
        i0, im, i1 = 2 * j, 2 * j + 1, 2 * j + 2
        k1 = rate(Pr, i0)
        k2 = rate(Pr + 0.5 * dt * k1, im)
        k3 = rate(Pr + 0.5 * dt * k2, im)
        k4 = rate(Pr + dt * k3, i1)
        Pr = Pr + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)

    rel = np.linalg.norm(P.P - Pr) / np.linalg.norm(Pr)
    assert rel < 1e-3
    assert time.perf_counter() - t0 < 30.0


def test_criterion_4_integrated_process_noise_matches_quadrature():
    """The closed-form one-step process-noise integral matches 10^4-substep
    quadrature to 1e-3 relative Frobenius at dt = 0.1 s."""
    dt = 0.1
    imu = ImuSpec.tactical()
    traj = turning_trajectory(dt)
    k = turn_window(traj, 2) + 1
    Tk = dcm_body_to_ned(traj.theta[k]).T
    Tkm1 = dcm_body_to_ned(traj.theta[k - 1]).T
    Q = integrated_process_noise(Tk, Tkm1, traj.nu_b[k], traj.nu_b[k - 1],
                                 imu, dt)
    Q_ref = quadrature_q(traj.theta[k], traj.theta[k - 1], traj.nu_b[k],
                         traj.nu_b[k - 1], imu, dt, substeps=10_000)
    rel = np.linalg.norm(Q - Q_ref) / np.linalg.norm(Q_ref)
    assert rel < 1e-3


def test_criterion_5_lincov_monte_carlo_agreement():
    """On the bundled validation scenario (one radar, GPS-denied stretch),
    the 500-run ensemble sigma of the detection-probability error is within
    15% of the covariance prediction pointwise, and at least 98.5% of all
    (run, sample) errors lie inside +/-3 sigma.  Under 10 minutes."""
    t0 = time.perf_counter()
    scenario = load_scenario(bundled_scenario_path("mc_validation"))
    ctx = scenario.evaluation()
    sources = NoiseSourceSet.all_on()
    series = sigma_pd_series(ctx, sources)
    result = run_ensemble(ctx, 500, seed=20260825, sources=sources)
    assert result.failed_runs == ()
    rel = np.abs(result.sigma - series.sigma_pd) / series.sigma_pd
    assert rel.max() < 0.15
    assert coverage_check(result, series, 3.0) >= 0.985
    assert time.perf_counter() - t0 < 600.0


def test_criterion_6_error_budget_rss_closure():
    """Under one fixed gain schedule, the root-sum-square of the per-source
    sigma_pd series is within 2% of the all-sources series at every sample."""
    scenario = load_scenario(bundled_scenario_path("mc_validation"))
    ctx = scenario.evaluation(dt=20.0)
    schedule = gain_schedule(ctx.trajectory, ctx.P0, ctx.imu, ctx.meas)
    full = sigma_pd_series(ctx, NoiseSourceSet.all_on(), schedule).sigma_pd
    var = np.zeros_like(full)
    for name in SOURCE_NAMES:
        var += sigma_pd_series(ctx, NoiseSourceSet.only(name),
                               schedule).sigma_pd ** 2
    rss = np.sqrt(var)
    assert full.min() > 0.0
    assert np.max(np.abs(rss - full) / full) < 0.02


@pytest.fixture(scope="module")
def gauntlet_plans():
    out = {}
    for name in ("gauntlet_industrial", "gauntlet_tactical"):
        scenario = load_scenario(bundled_scenario_path(name))
        out[name] = (scenario, plan(scenario))
    return out


def _min_clearance(scenario, waypoints):
    traj = scenario.build_trajectory(waypoints)
    centers = np.array([r.p_n[:2] for r in scenario.radars])
    d = np.linalg.norm(traj.p_n[:, None, :2] - centers[None], axis=2)
    return float(d.min(axis=1).min())


def test_criterion_7_planner_soundness_and_grade_topology(gauntlet_plans):
    """Every plan reported valid re-evaluates with zero violations; both IMU
    grades terminate within 25 iterations on the two-radar gauntlet; the
    industrial plan keeps strictly more clearance to the nearer radar."""
    clearance = {}
    for name, (scenario, result) in gauntlet_plans.items():
        assert result.valid, f"{name}: no valid path"
        assert result.iterations <= 25
        series = evaluate_candidate(result.waypoints, scenario)
        assert check_validity(series, scenario.p_dt, scenario.m_sigma) == []
        clearance[name] = _min_clearance(scenario, result.waypoints)
    assert clearance["gauntlet_industrial"] > clearance["gauntlet_tactical"]


def test_criterion_8_imu_grade_effect_direction():
    """Over the same fixed gauntlet path, the tactical-grade peak sigma_pd is
    at least 20% lower than the industrial-grade peak."""
    peaks = {}
    for name in ("gauntlet_industrial", "gauntlet_tactical"):
        scenario = load_scenario(bundled_scenario_path(name))
        assert scenario.waypoints is not None
        series = sigma_pd_series(scenario.evaluation(dt=8.0),
                                 NoiseSourceSet.all_on())
        peaks[name] = float(series.sigma_pd.max())
    assert peaks["gauntlet_tactical"] <= 0.8 * peaks["gauntlet_industrial"]


def test_criterion_9_shortest_path_matches_exhaustive_enumeration():
    """On 100 random fields (at most 3 polygons, at most 10 graph nodes) the
    graph search returns exactly the enumerated optimum."""
    rng = np.random.default_rng(9)
    bounds = Bounds(-200.0, 200.0, -200.0, 200.0)
    checked = 0
    while checked < 100:
        n_poly = int(rng.integers(0, 3))
        polys = [
            random_polygon(rng, rng.uniform(-40.0, 40.0, 2), n_hi=4)
            for _ in range(n_poly)
        ]
        if 2 + sum(p.angles.size for p in polys) > 10:
            continue
        graph = build_visibility_graph(
            polys, (-100.0, 0.0), (100.0, 0.0), bounds)
        best = brute_force_cost(graph)
        try:
            path = shortest_path(graph)
        except NoPathError:
            assert best is None
            checked += 1
            continue
        assert best is not None
        cost = sum(np.linalg.norm(np.diff(path, axis=0), axis=1))
        assert cost == best[0]
        np.testing.assert_array_equal(path, graph.nodes[list(best[1])])
        checked += 1


def test_criterion_10_quaternion_euler_transform_identities():
    """The quaternion-to-Euler Jacobian is exactly 2I at the nominal, and the
    pose-covariance extraction maps the identity to the identity."""
    np.testing.assert_array_equal(
        quat_to_euler_jacobian(np.zeros(3)), 2.0 * np.eye(3))
    np.testing.assert_array_equal(aircraft_covariance(np.eye(15)), np.eye(6))
